//! Unsupervised feature learning: a whitened linear projection onto a
//! spherical k-means codebook, used as an optional replacement for raw mel
//! features.
//!
//! Training scans log-mel patches of `patch_width` consecutive frames,
//! whitens them with a regularized PCA transform, and fits unit-norm
//! centroids by spherical k-means (dot-product assignment). Projection
//! whitens each patch, takes its dot product with every centroid, and
//! half-wave rectifies. Clip-level vectors pool the projected (or raw
//! log-mel) frames by per-column mean, max, and standard deviation.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Mat};
use crate::rng::stream_rng;

pub const CODEBOOK_SCHEMA_VERSION: u32 = 1;

/// A flattened window of consecutive mel frames (time-major).
pub type Patch = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mel,
    Learned,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Mel => "mel",
            FeatureKind::Learned => "learned",
        }
    }
}

/// Fixed-length per-clip feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatureVector {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatLearnParams {
    /// Patch width in frames.
    #[serde(default = "defaults::patch_width")]
    pub patch_width: usize,
    /// Number of centroids (M).
    #[serde(default = "defaults::codebook_size")]
    pub codebook_size: usize,
    /// Fraction of variance the whitener retains.
    #[serde(default = "defaults::variance_keep")]
    pub variance_keep: f64,
    /// Cap on the number of patches used to fit the codebook, drawn by a
    /// seeded shuffle.
    #[serde(default = "defaults::sample_cap")]
    pub sample_cap: usize,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
}

mod defaults {
    pub fn patch_width() -> usize {
        4
    }
    pub fn codebook_size() -> usize {
        500
    }
    pub fn variance_keep() -> f64 {
        0.99
    }
    pub fn sample_cap() -> usize {
        200_000
    }
    pub fn max_iter() -> usize {
        100
    }
    pub fn tol() -> f64 {
        1e-5
    }
}

impl Default for FeatLearnParams {
    fn default() -> Self {
        FeatLearnParams {
            patch_width: defaults::patch_width(),
            codebook_size: defaults::codebook_size(),
            variance_keep: defaults::variance_keep(),
            sample_cap: defaults::sample_cap(),
            max_iter: defaults::max_iter(),
            tol: defaults::tol(),
        }
    }
}

impl FeatLearnParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config { message });
        if self.patch_width == 0 {
            return fail("featlearn.patch_width must be >= 1".into());
        }
        if self.codebook_size < 2 {
            return fail(format!(
                "featlearn.codebook_size must be >= 2, got {}",
                self.codebook_size
            ));
        }
        if !(self.variance_keep > 0.0 && self.variance_keep <= 1.0) {
            return fail(format!(
                "featlearn.variance_keep must be in (0, 1], got {}",
                self.variance_keep
            ));
        }
        if self.sample_cap == 0 {
            return fail("featlearn.sample_cap must be >= 1".into());
        }
        if self.max_iter == 0 {
            return fail("featlearn.max_iter must be >= 1".into());
        }
        if self.tol <= 0.0 || self.tol.is_nan() {
            return fail(format!("featlearn.tol must be > 0, got {}", self.tol));
        }
        Ok(())
    }
}

/// Extract every `w`-frame window (hop 1) from each spectrogram, flattened
/// time-major. Clips with fewer than `w` frames are skipped with a warning.
pub fn extract_patches(mels: &[MelSpectrogram], w: usize) -> (Vec<Patch>, Vec<String>) {
    let mut patches = Vec::new();
    let mut warnings = Vec::new();
    for mel in mels {
        let t = mel.n_frames();
        if t < w {
            warnings.push(format!(
                "clip `{}` has {t} frames, fewer than the patch width {w}; skipped",
                mel.clip_id
            ));
            continue;
        }
        let bands = mel.frames.cols();
        for start in 0..=(t - w) {
            let mut patch = Vec::with_capacity(w * bands);
            for frame in start..start + w {
                patch.extend_from_slice(mel.frames.row(frame));
            }
            patches.push(patch);
        }
    }
    (patches, warnings)
}

/// Regularized PCA whitening transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitener {
    pub mean: Vec<f64>,
    /// d x D; row i is the i-th principal component scaled by
    /// (eigenvalue + 1e-8)^(-1/2), eigenvalues descending.
    pub components: Mat,
}

impl Whitener {
    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn whiten_one(&self, patch: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = patch.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.components
            .iter_rows()
            .map(|row| dot(row, &centered))
            .collect()
    }
}

const WHITEN_REGULARIZER: f64 = 1e-8;

/// Fit a PCA whitener on a patch sample, retaining the smallest number of
/// leading components whose cumulative variance reaches `variance_keep`.
pub fn fit_whitener(patches: &[Patch], variance_keep: f64) -> Result<Whitener> {
    let Some(first) = patches.first() else {
        return Err(Error::EmptyInput {
            context: "whitener training patches".into(),
        });
    };
    let dim = first.len();
    if patches.len() < dim + 1 {
        return Err(Error::TooFewPatches {
            needed: dim + 1,
            got: patches.len(),
        });
    }
    let n = patches.len() as f64;

    let mut mean = vec![0.0f64; dim];
    for p in patches {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }

    // Upper triangle of the population covariance, then mirrored.
    let mut cov = vec![0.0f64; dim * dim];
    let mut centered = vec![0.0f64; dim];
    for p in patches {
        for (c, (x, m)) in centered.iter_mut().zip(p.iter().zip(&mean)) {
            *c = x - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            let row = &mut cov[i * dim..(i + 1) * dim];
            for j in i..dim {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / n;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }

    let eigen = DMatrix::from_row_slice(dim, dim, &cov).symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    let total: f64 = eigen.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let mut kept = 0usize;
    let mut cumulative = 0.0;
    for &i in &order {
        kept += 1;
        cumulative += eigen.eigenvalues[i].max(0.0);
        if total == 0.0 || cumulative >= variance_keep * total {
            break;
        }
    }

    let mut components = Mat::zeros(kept, dim);
    for (row, &i) in order.iter().take(kept).enumerate() {
        let scale = 1.0 / (eigen.eigenvalues[i].max(0.0) + WHITEN_REGULARIZER).sqrt();
        let col = eigen.eigenvectors.column(i);
        let out = components.row_mut(row);
        for j in 0..dim {
            out[j] = col[j] * scale;
        }
    }

    Ok(Whitener { mean, components })
}

/// Spherical k-means fit: unit-norm centroids plus the objective (mean
/// max dot product) logged after each assignment step.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    /// M x d centroid matrix, every row unit-norm.
    pub centroids: Mat,
    pub objective_trace: Vec<f64>,
}

fn normalize_or_reseed(
    vector: Vec<f64>,
    data: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut v = vector;
    let mut guard = 0;
    loop {
        let len = norm(&v);
        if len > 1e-12 {
            for x in v.iter_mut() {
                *x /= len;
            }
            return v;
        }
        guard += 1;
        assert!(guard < 1000, "could not find a non-zero seeding vector");
        v = data[rng.gen_range(0..data.len())].clone();
    }
}

/// Lloyd-style spherical k-means: assign to the max-dot-product centroid,
/// recompute centroids as normalized means, reseed empty clusters from a
/// random data vector. Stops when mean centroid movement drops below `tol`
/// or after `max_iter` iterations.
pub fn spherical_kmeans(
    data: &[Vec<f64>],
    m: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansFit> {
    if data.is_empty() || m < 1 {
        return Err(Error::EmptyInput {
            context: "spherical k-means input".into(),
        });
    }
    if m > data.len() {
        return Err(Error::CodebookTooLarge { m, n: data.len() });
    }
    let dim = data[0].len();
    let mut rng = stream_rng(seed, "spherical-kmeans");

    let init = rand::seq::index::sample(&mut rng, data.len(), m);
    let mut centroids: Vec<Vec<f64>> = init
        .iter()
        .map(|i| normalize_or_reseed(data[i].clone(), data, &mut rng))
        .collect();

    let mut trace = Vec::new();
    for _ in 0..max_iter {
        // Assignment; ties go to the lowest centroid index.
        let assignments: Vec<(usize, f64)> = data
            .par_iter()
            .map(|x| {
                let mut best = (0usize, f64::NEG_INFINITY);
                for (k, c) in centroids.iter().enumerate() {
                    let d = dot(c, x);
                    if d > best.1 {
                        best = (k, d);
                    }
                }
                best
            })
            .collect();

        let objective =
            assignments.iter().map(|(_, d)| d).sum::<f64>() / data.len() as f64;
        if let Some(&prev) = trace.last() {
            assert!(
                objective >= prev - 1e-10,
                "spherical k-means objective decreased: {prev} -> {objective}"
            );
        }
        trace.push(objective);

        let mut sums = vec![vec![0.0f64; dim]; m];
        let mut counts = vec![0usize; m];
        for (x, &(k, _)) in data.iter().zip(&assignments) {
            counts[k] += 1;
            for (s, v) in sums[k].iter_mut().zip(x) {
                *s += v;
            }
        }

        let mut movement = 0.0;
        for k in 0..m {
            let candidate = if counts[k] == 0 {
                data[rng.gen_range(0..data.len())].clone()
            } else {
                sums[k].clone()
            };
            let updated = normalize_or_reseed(candidate, data, &mut rng);
            let mut dist_sq = 0.0;
            for (a, b) in updated.iter().zip(&centroids[k]) {
                dist_sq += (a - b) * (a - b);
            }
            movement += dist_sq.sqrt();
            centroids[k] = updated;
        }

        if movement / (m as f64) < tol {
            break;
        }
    }

    Ok(KmeansFit {
        centroids: Mat::from_rows(&centroids),
        objective_trace: trace,
    })
}

/// Whitening transform plus unit-norm centroid set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub schema_version: u32,
    pub patch_width: usize,
    pub whitener: Whitener,
    /// M x d, rows unit-norm.
    pub centroids: Mat,
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.centroids.rows()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("codebook serializes")
    }

    pub fn from_json(json: &str) -> Result<Codebook> {
        let cb: Codebook = serde_json::from_str(json).map_err(|e| Error::Config {
            message: format!("codebook artifact: {e}"),
        })?;
        if cb.schema_version != CODEBOOK_SCHEMA_VERSION {
            return Err(Error::Config {
                message: format!(
                    "codebook schema version {} unsupported (expected {CODEBOOK_SCHEMA_VERSION})",
                    cb.schema_version
                ),
            });
        }
        cb.validate()?;
        Ok(cb)
    }

    /// Structural invariants: consistent dimensions and unit-norm
    /// centroids.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config { message });
        if self.patch_width == 0 {
            return fail("codebook patch width is zero".into());
        }
        if self.whitener.mean.len() != self.whitener.input_dim() {
            return fail("codebook whitener mean/components disagree on input size".into());
        }
        if self.centroids.cols() != self.whitener.output_dim() {
            return fail(format!(
                "codebook centroids are {}-dimensional but the whitener emits {}",
                self.centroids.cols(),
                self.whitener.output_dim()
            ));
        }
        if self.centroids.rows() < 2 {
            return fail("codebook needs at least 2 centroids".into());
        }
        for k in 0..self.centroids.rows() {
            if (norm(self.centroids.row(k)) - 1.0).abs() > 1e-6 {
                return fail(format!("codebook centroid {k} is not unit norm"));
            }
        }
        Ok(())
    }
}

/// Fit a codebook on training-split log-mel spectrograms.
pub fn fit_codebook(
    train_mels: &[MelSpectrogram],
    params: &FeatLearnParams,
    seed: u64,
) -> Result<(Codebook, Vec<String>)> {
    if params.codebook_size < 2 {
        return Err(Error::Config {
            message: format!("codebook_size must be >= 2, got {}", params.codebook_size),
        });
    }
    let (mut patches, warnings) = extract_patches(train_mels, params.patch_width);
    if patches.len() > params.sample_cap {
        let mut rng = stream_rng(seed, "codebook-sample");
        patches.shuffle(&mut rng);
        patches.truncate(params.sample_cap);
    }
    let whitener = fit_whitener(&patches, params.variance_keep)?;
    let whitened: Vec<Vec<f64>> = patches.par_iter().map(|p| whitener.whiten_one(p)).collect();
    let fit = spherical_kmeans(
        &whitened,
        params.codebook_size,
        crate::rng::derive_seed(seed, "codebook-kmeans"),
        params.max_iter,
        params.tol,
    )?;
    Ok((
        Codebook {
            schema_version: CODEBOOK_SCHEMA_VERSION,
            patch_width: params.patch_width,
            whitener,
            centroids: fit.centroids,
        },
        warnings,
    ))
}

/// Project a log-mel spectrogram through the codebook: one row per patch,
/// one column per centroid, half-wave rectified activations.
pub fn project(mel_log: &MelSpectrogram, cb: &Codebook) -> Result<Mat> {
    let t = mel_log.n_frames();
    let w = cb.patch_width;
    if t < w {
        return Err(Error::ClipTooFewFrames {
            clip: mel_log.clip_id.clone(),
            frames: t,
            needed: w,
        });
    }
    let (patches, _) = extract_patches(std::slice::from_ref(mel_log), w);
    let dim = cb.whitener.input_dim();
    if patches[0].len() != dim {
        return Err(Error::DimensionMismatch {
            context: "codebook projection".into(),
            expected: dim,
            got: patches[0].len(),
        });
    }
    let rows: Vec<Vec<f64>> = patches
        .iter()
        .map(|p| {
            let z = cb.whitener.whiten_one(p);
            cb.centroids
                .iter_rows()
                .map(|c| dot(c, &z).max(0.0))
                .collect()
        })
        .collect();
    Ok(Mat::from_rows(&rows))
}

/// Pool a framewise feature matrix to a fixed-length clip vector:
/// per-column mean, then max, then population standard deviation.
pub fn pool_clip(features: &Mat) -> Result<Vec<f64>> {
    let t = features.rows();
    if t == 0 {
        return Err(Error::EmptyInput {
            context: "pooling input".into(),
        });
    }
    let cols = features.cols();
    let mut mean = vec![0.0f64; cols];
    let mut max = vec![f64::NEG_INFINITY; cols];
    for row in features.iter_rows() {
        for (j, &v) in row.iter().enumerate() {
            mean[j] += v;
            if v > max[j] {
                max[j] = v;
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= t as f64;
    }
    let mut var = vec![0.0f64; cols];
    for row in features.iter_rows() {
        for (j, &v) in row.iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    let mut out = Vec::with_capacity(3 * cols);
    out.extend_from_slice(&mean);
    out.extend_from_slice(&max);
    out.extend(var.iter().map(|v| (v / t as f64).sqrt()));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config {
            message: "pooled feature vector contains a non-finite value".into(),
        });
    }
    Ok(out)
}

/// Raw-mel pathway: pool the log-mel matrix directly (length 3 x 40).
pub fn mel_clip_features(mel_log: &MelSpectrogram) -> Result<ClipFeatureVector> {
    Ok(ClipFeatureVector {
        values: pool_clip(&mel_log.frames)?,
        kind: FeatureKind::Mel,
    })
}

/// Learned pathway: project through the codebook, then pool (length 3 x M).
pub fn learned_clip_features(mel_log: &MelSpectrogram, cb: &Codebook) -> Result<ClipFeatureVector> {
    Ok(ClipFeatureVector {
        values: pool_clip(&project(mel_log, cb)?)?,
        kind: FeatureKind::Learned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::HOP;

    fn test_rng(seed: u64, idx: u64) -> impl Rng {
        crate::rng::stream_rng_indexed(seed, "featlearn-test", idx)
    }

    fn mel(t: usize, bands: usize, f: impl Fn(usize, usize) -> f64) -> MelSpectrogram {
        let mut m = Mat::zeros(t, bands);
        for r in 0..t {
            for c in 0..bands {
                m.set(r, c, f(r, c));
            }
        }
        MelSpectrogram {
            frames: m,
            hop_s: HOP as f64 / 44100.0,
            clip_id: format!("mel-{t}x{bands}"),
        }
    }

    fn normal(rng: &mut impl Rng) -> f64 {
        let u1: f64 = rng.gen_range(1e-12..1.0f64);
        let u2: f64 = rng.gen_range(0.0..1.0f64);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn patch_counts_match_window_arithmetic() {
        let mels = vec![mel(85, 40, |r, c| (r + c) as f64)];
        let (patches, warnings) = extract_patches(&mels, 4);
        assert_eq!(patches.len(), 82);
        assert_eq!(patches[0].len(), 160);
        assert!(warnings.is_empty());

        let (one, _) = extract_patches(&[mel(4, 40, |_, _| 1.0)], 4);
        assert_eq!(one.len(), 1);

        let (none, warnings) = extract_patches(&[mel(3, 40, |_, _| 1.0)], 4);
        assert!(none.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn patches_are_time_major() {
        let mels = vec![mel(3, 2, |r, c| (10 * r + c) as f64)];
        let (patches, _) = extract_patches(&mels, 2);
        assert_eq!(patches[0], vec![0.0, 1.0, 10.0, 11.0]);
        assert_eq!(patches[1], vec![10.0, 11.0, 20.0, 21.0]);
    }

    #[test]
    fn whitener_decorrelates_gaussian_sample() {
        let mut rng = test_rng(11, 0);
        let dim = 6;
        let patches: Vec<Patch> = (0..4000)
            .map(|_| (0..dim).map(|j| normal(&mut rng) * (1.0 + j as f64)).collect())
            .collect();
        let w = fit_whitener(&patches, 0.999).unwrap();
        let whitened: Vec<Vec<f64>> = patches.iter().map(|p| w.whiten_one(p)).collect();
        let d = w.output_dim();
        let n = whitened.len() as f64;
        for i in 0..d {
            for j in i..d {
                let cov: f64 = whitened.iter().map(|z| z[i] * z[j]).sum::<f64>() / n;
                if i == j {
                    assert!((cov - 1.0).abs() < 1e-3, "var[{i}] = {cov}");
                } else {
                    assert!(cov.abs() < 1e-8, "cov[{i},{j}] = {cov}");
                }
            }
        }
    }

    #[test]
    fn line_data_keeps_one_component() {
        let direction = [3.0f64, -1.0, 2.0];
        let patches: Vec<Patch> = (0..50)
            .map(|i| direction.iter().map(|d| d * i as f64).collect())
            .collect();
        let w = fit_whitener(&patches, 0.99).unwrap();
        assert_eq!(w.output_dim(), 1);
    }

    #[test]
    fn duplicated_dataset_gives_identical_whitener() {
        let mut rng = test_rng(5, 1);
        let patches: Vec<Patch> = (0..40)
            .map(|_| (0..5).map(|_| normal(&mut rng)).collect())
            .collect();
        let doubled: Vec<Patch> = patches.iter().chain(patches.iter()).cloned().collect();
        let a = fit_whitener(&patches, 0.95).unwrap();
        let b = fit_whitener(&doubled, 0.95).unwrap();
        // covariance is mathematically unchanged; summation order differs,
        // so compare to rounding error rather than bitwise
        assert_eq!(a.output_dim(), b.output_dim());
        for (x, y) in a.mean.iter().zip(&b.mean) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        for (x, y) in a.components.data().iter().zip(b.components.data()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn too_few_patches_is_an_error() {
        let patches: Vec<Patch> = (0..4).map(|i| vec![i as f64; 8]).collect();
        assert!(matches!(
            fit_whitener(&patches, 0.99),
            Err(Error::TooFewPatches { needed: 9, got: 4 })
        ));
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let len = norm(v);
        v.iter().map(|x| x / len).collect()
    }

    #[test]
    fn kmeans_recovers_antipodal_clusters() {
        let mut rng = test_rng(21, 0);
        let dim = 8;
        let center: Vec<f64> = unit(&(0..dim).map(|j| (j as f64 + 1.0).sin() + 1.5).collect::<Vec<_>>());
        let mut data = Vec::new();
        for sign in [1.0f64, -1.0] {
            for _ in 0..50 {
                let noisy: Vec<f64> = center
                    .iter()
                    .map(|c| sign * c + 0.02 * normal(&mut rng))
                    .collect();
                data.push(unit(&noisy));
            }
        }
        let fit = spherical_kmeans(&data, 2, 7, 100, 1e-5).unwrap();

        // converged centroids must equal the normalized means of the two
        // generated clusters, i.e. angular distance below 1e-3
        for (lo, hi, sign) in [(0usize, 50usize, 1.0f64), (50, 100, -1.0)] {
            let mut sum = vec![0.0f64; dim];
            for x in &data[lo..hi] {
                for (s, v) in sum.iter_mut().zip(x) {
                    *s += v;
                }
            }
            let want = unit(&sum);
            let best_angle = (0..2)
                .map(|k| {
                    let d = dot(fit.centroids.row(k), &want).clamp(-1.0, 1.0);
                    d.acos()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best_angle < 1e-3, "sign {sign}: angle {best_angle}");
        }
    }

    #[test]
    fn kmeans_with_m_equal_n_memorizes() {
        let mut rng = test_rng(3, 2);
        let data: Vec<Vec<f64>> = (0..6)
            .map(|_| unit(&(0..5).map(|_| normal(&mut rng)).collect::<Vec<_>>()))
            .collect();
        let fit = spherical_kmeans(&data, data.len(), 13, 100, 1e-5).unwrap();
        for x in &data {
            let best = (0..fit.centroids.rows())
                .map(|k| dot(fit.centroids.row(k), x))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - 1.0).abs() < 1e-9, "data vector not a centroid: {best}");
        }
    }

    #[test]
    fn kmeans_on_identical_vectors_reseeds_quietly() {
        let v = unit(&[1.0, 2.0, 3.0]);
        let data: Vec<Vec<f64>> = (0..10).map(|_| v.iter().map(|x| x * 2.5).collect()).collect();
        let fit = spherical_kmeans(&data, 2, 1, 100, 1e-5).unwrap();
        // both centroids land on the one direction present in the data
        for k in 0..2 {
            for (c, want) in fit.centroids.row(k).iter().zip(&v) {
                assert!((c - want).abs() < 1e-12);
            }
        }
        // objective is the data norm at every iteration; reseeding the
        // empty cluster never changes it
        for obj in &fit.objective_trace {
            assert!((obj - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_centroids_are_unit_norm_and_objective_monotone() {
        let mut rng = test_rng(17, 4);
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..12).map(|_| normal(&mut rng)).collect())
            .collect();
        let fit = spherical_kmeans(&data, 16, 5, 100, 1e-6).unwrap();
        for k in 0..16 {
            assert!((norm(fit.centroids.row(k)) - 1.0).abs() < 1e-6);
        }
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-10);
        }
    }

    #[test]
    fn kmeans_rejects_m_above_n() {
        let data = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            spherical_kmeans(&data, 3, 0, 10, 1e-5),
            Err(Error::CodebookTooLarge { m: 3, n: 2 })
        ));
    }

    fn identity_codebook(centroids: Vec<Vec<f64>>, patch_width: usize) -> Codebook {
        let dim = centroids[0].len();
        let mut components = Mat::zeros(dim, dim);
        for i in 0..dim {
            components.set(i, i, 1.0);
        }
        Codebook {
            schema_version: CODEBOOK_SCHEMA_VERSION,
            patch_width,
            whitener: Whitener {
                mean: vec![0.0; dim],
                components,
            },
            centroids: Mat::from_rows(&centroids),
        }
    }

    #[test]
    fn projection_peaks_at_matching_centroid() {
        // patch width 1 over 3 bands, identity whitener
        let centroids = vec![
            unit(&[1.0, 0.0, 0.1]),
            unit(&[0.0, 1.0, 0.0]),
            unit(&[0.2, 0.1, 1.0]),
        ];
        let cb = identity_codebook(centroids.clone(), 1);
        for (j, c) in centroids.iter().enumerate() {
            let m = mel(1, 3, |_, col| c[col]);
            let acts = project(&m, &cb).unwrap();
            let row = acts.row(0);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, j);
        }
    }

    #[test]
    fn projection_of_zero_patch_is_zero_row() {
        let cb = identity_codebook(vec![unit(&[1.0, 1.0]), unit(&[1.0, -1.0])], 1);
        let acts = project(&mel(1, 2, |_, _| 0.0), &cb).unwrap();
        assert!(acts.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_is_rectified() {
        let cb = identity_codebook(vec![unit(&[1.0, 0.0]), unit(&[-1.0, 0.0])], 1);
        let acts = project(&mel(2, 2, |r, _| if r == 0 { 1.0 } else { -1.0 }), &cb).unwrap();
        assert!(acts.data().iter().all(|&v| v >= 0.0));
        // opposite centroid is silenced, not negative
        assert_eq!(acts.get(0, 1), 0.0);
        assert_eq!(acts.get(1, 0), 0.0);
    }

    #[test]
    fn projection_is_permutation_equivariant() {
        let c0 = unit(&[1.0, 2.0, 0.5]);
        let c1 = unit(&[0.3, -1.0, 1.0]);
        let c2 = unit(&[-0.5, 0.7, 2.0]);
        let cb = identity_codebook(vec![c0.clone(), c1.clone(), c2.clone()], 1);
        let cb_perm = identity_codebook(vec![c2, c0, c1], 1);
        let m = mel(4, 3, |r, c| ((r * 3 + c) as f64 * 0.7).sin());
        let a = project(&m, &cb).unwrap();
        let b = project(&m, &cb_perm).unwrap();
        for r in 0..4 {
            assert_eq!(a.get(r, 0), b.get(r, 1));
            assert_eq!(a.get(r, 1), b.get(r, 2));
            assert_eq!(a.get(r, 2), b.get(r, 0));
        }
    }

    #[test]
    fn projection_needs_enough_frames() {
        let cb = identity_codebook(vec![unit(&[1.0, 0.0, 0.0, 0.0])], 2);
        assert!(matches!(
            project(&mel(1, 2, |_, _| 1.0), &cb),
            Err(Error::ClipTooFewFrames { frames: 1, needed: 2, .. })
        ));
    }

    #[test]
    fn pooling_reference_points() {
        let single = pool_clip(&Mat::from_rows(&[vec![2.0, -1.0]])).unwrap();
        assert_eq!(single, vec![2.0, -1.0, 2.0, -1.0, 0.0, 0.0]);

        let constant = pool_clip(&Mat::from_rows(&[vec![3.0], vec![3.0], vec![3.0]])).unwrap();
        assert_eq!(constant, vec![3.0, 3.0, 0.0]);

        // column {0, 2}: mean 1, max 2, population std 1
        let two = pool_clip(&Mat::from_rows(&[vec![0.0], vec![2.0]])).unwrap();
        assert_eq!(two, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn pooling_is_frame_order_invariant() {
        let a = Mat::from_rows(&[vec![1.0, 5.0], vec![2.0, 3.0], vec![0.5, 4.0]]);
        let b = Mat::from_rows(&[vec![0.5, 4.0], vec![1.0, 5.0], vec![2.0, 3.0]]);
        assert_eq!(pool_clip(&a).unwrap(), pool_clip(&b).unwrap());
    }

    #[test]
    fn pooling_rejects_empty_input() {
        assert!(pool_clip(&Mat::zeros(0, 4)).is_err());
    }

    #[test]
    fn codebook_fit_is_deterministic_and_roundtrips() {
        let mels: Vec<MelSpectrogram> = (0..6)
            .map(|i| mel(20, 8, |r, c| ((r * 8 + c + i * 31) as f64 * 0.13).sin()))
            .collect();
        let params = FeatLearnParams {
            patch_width: 3,
            codebook_size: 5,
            variance_keep: 0.99,
            sample_cap: 1000,
            max_iter: 50,
            tol: 1e-6,
        };
        let (a, _) = fit_codebook(&mels, &params, 42).unwrap();
        let (b, _) = fit_codebook(&mels, &params, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json());

        let reloaded = Codebook::from_json(&a.to_json()).unwrap();
        assert_eq!(reloaded.to_json(), a.to_json());

        let (c, _) = fit_codebook(&mels, &params, 43).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn tampered_codebook_artifacts_are_rejected() {
        let mels: Vec<MelSpectrogram> = (0..4)
            .map(|i| mel(20, 8, |r, c| ((r * 8 + c + i * 17) as f64 * 0.19).sin()))
            .collect();
        let params = FeatLearnParams {
            patch_width: 2,
            codebook_size: 3,
            sample_cap: 500,
            ..Default::default()
        };
        let (cb, _) = fit_codebook(&mels, &params, 5).unwrap();
        let json = cb.to_json();

        let bad_version = json.replace("\"schema_version\":1", "\"schema_version\":5");
        assert!(Codebook::from_json(&bad_version).is_err());

        // scaling a centroid breaks the unit-norm invariant
        let first_centroid = cb.centroids.get(0, 0);
        let bad_centroid = json.replace(
            &format!("\"data\":[{first_centroid}"),
            &format!("\"data\":[{}", first_centroid * 1.5),
        );
        assert_ne!(bad_centroid, json, "tamper target not found");
        assert!(Codebook::from_json(&bad_centroid).is_err());
    }

    #[test]
    fn undersized_codebook_requests_are_rejected() {
        let mels = vec![mel(20, 8, |r, c| (r + c) as f64)];
        let params = FeatLearnParams {
            patch_width: 2,
            codebook_size: 1,
            ..Default::default()
        };
        assert!(matches!(
            fit_codebook(&mels, &params, 0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn clip_feature_lengths_match_kind() {
        let m = mel(10, 40, |r, c| ((r + c) as f64 * 0.37).cos());
        let raw = mel_clip_features(&m).unwrap();
        assert_eq!(raw.kind, FeatureKind::Mel);
        assert_eq!(raw.values.len(), 120);

        let mels: Vec<MelSpectrogram> = (0..4)
            .map(|i| mel(30, 40, |r, c| ((r * 40 + c) as f64 * 0.01 + i as f64).sin()))
            .collect();
        let params = FeatLearnParams {
            patch_width: 2,
            codebook_size: 7,
            sample_cap: 500,
            ..Default::default()
        };
        let (cb, _) = fit_codebook(&mels, &params, 1).unwrap();
        let learned = learned_clip_features(&m, &cb).unwrap();
        assert_eq!(learned.kind, FeatureKind::Learned);
        assert_eq!(learned.values.len(), 21);
        assert!(learned.values.iter().all(|v| v.is_finite()));
    }
}
