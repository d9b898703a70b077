//! Spectrogram front-end: framed STFT magnitudes, mel filterbank, median
//! noise reduction, and log compression.
//!
//! Framing is fixed: 1024-sample frames, 512-sample hop (50% overlap),
//! Hamming window, magnitude of the 513 nonnegative-frequency bins. A final
//! partial frame is dropped, never zero-padded, so a clip with N samples
//! yields floor((N - 1024) / 512) + 1 frames.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::matrix::Mat;

pub const FRAME_LEN: usize = 1024;
pub const HOP: usize = 512;
pub const N_BINS: usize = FRAME_LEN / 2 + 1;
pub const N_BANDS: usize = 40;
/// Offset added before the natural log so zero magnitudes stay finite.
pub const LOG_EPSILON: f64 = 1e-8;

/// Frame count for a clip of `n` samples, valid for `n >= FRAME_LEN`.
pub fn frame_count(n: usize) -> usize {
    (n - FRAME_LEN) / HOP + 1
}

/// Time x 40-band matrix with its frame step and source clip id.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// T x 40. Nonnegative magnitudes up to `log_compress`, natural-log
    /// values afterwards.
    pub frames: Mat,
    /// Seconds per frame step.
    pub hop_s: f64,
    pub clip_id: String,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }
}

fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Magnitude STFT: T x 513 nonnegative matrix.
pub fn stft_magnitude(clip: &AudioClip) -> Result<Mat> {
    let n = clip.samples.len();
    if n < FRAME_LEN {
        return Err(Error::ClipTooShort {
            clip: String::new(),
            samples: n,
            needed: FRAME_LEN,
        });
    }
    let t = frame_count(n);
    let window = hamming(FRAME_LEN);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FRAME_LEN);

    let mut out = Mat::zeros(t, N_BINS);
    let mut buf = vec![Complex64::default(); FRAME_LEN];
    for frame in 0..t {
        let start = frame * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(f64::from(clip.samples[start + i]) * window[i], 0.0);
        }
        fft.process(&mut buf);
        let row = out.row_mut(frame);
        for (k, value) in row.iter_mut().enumerate() {
            *value = buf[k].norm();
        }
    }
    Ok(out)
}

/// Triangular mel filterbank mapping 513 linear bins to 40 bands.
///
/// HTK mel scale (2595 * log10(1 + f/700)), band corners equally spaced in
/// mel from 0 Hz to Nyquist, triangle peaks left at 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// 40 x 513, all entries nonnegative.
    pub weights: Mat,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: u32,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(sample_rate: u32) -> Result<MelFilterbank> {
        let f_min = 0.0;
        let f_max = sample_rate as f64 / 2.0;
        let mel_lo = hz_to_mel(f_min);
        let mel_hi = hz_to_mel(f_max);
        // 42 corner points give 40 overlapping triangles.
        let corners: Vec<f64> = (0..N_BANDS + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (N_BANDS + 1) as f64))
            .collect();

        let mut weights = Mat::zeros(N_BANDS, N_BINS);
        for band in 0..N_BANDS {
            let (lo, center, hi) = (corners[band], corners[band + 1], corners[band + 2]);
            let mut nonzero = 0usize;
            for bin in 0..N_BINS {
                let f = bin as f64 * sample_rate as f64 / FRAME_LEN as f64;
                let w = if f > lo && f < hi {
                    if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                } else {
                    0.0
                };
                if w > 0.0 {
                    nonzero += 1;
                }
                weights.set(band, bin, w);
            }
            if nonzero == 0 {
                return Err(Error::Config {
                    message: format!(
                        "mel band {band} has no FFT bin at {sample_rate} Hz; rate too low for 40 bands"
                    ),
                });
            }
        }
        Ok(MelFilterbank {
            weights,
            f_min,
            f_max,
            sample_rate,
        })
    }
}

/// Project an STFT magnitude matrix onto the mel bands.
pub fn apply_mel(spec: &Mat, fb: &MelFilterbank, hop_s: f64, clip_id: &str) -> Result<MelSpectrogram> {
    if spec.cols() != fb.weights.cols() {
        return Err(Error::DimensionMismatch {
            context: "mel projection".into(),
            expected: fb.weights.cols(),
            got: spec.cols(),
        });
    }
    Ok(MelSpectrogram {
        frames: spec.mul_transpose(&fb.weights)?,
        hop_s,
        clip_id: clip_id.to_string(),
    })
}

/// Subtract each band's median over time, clamping negatives to zero.
///
/// The median is taken over the whole clip: the clips here are short, and
/// the subtraction estimates a stationary noise floor per band.
pub fn median_noise_reduce(mel: &MelSpectrogram) -> MelSpectrogram {
    let t = mel.frames.rows();
    let bands = mel.frames.cols();
    let mut out = mel.clone();
    let mut column = vec![0.0f64; t];
    for band in 0..bands {
        for (frame, value) in column.iter_mut().enumerate() {
            *value = mel.frames.get(frame, band);
        }
        let med = median(&mut column);
        for frame in 0..t {
            let v = (mel.frames.get(frame, band) - med).max(0.0);
            out.frames.set(frame, band, v);
        }
    }
    out
}

/// Median of a scratch slice (averages the two middles for even lengths).
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in magnitudes"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Elementwise ln(x + 1e-8).
pub fn log_compress(mel: &MelSpectrogram) -> MelSpectrogram {
    let mut out = mel.clone();
    for r in 0..out.frames.rows() {
        for value in out.frames.row_mut(r) {
            *value = (*value + LOG_EPSILON).ln();
        }
    }
    out
}

/// Full front-end for one clip: STFT, mel projection, median noise
/// reduction, log compression.
pub fn log_mel_spectrogram(
    clip: &AudioClip,
    fb: &MelFilterbank,
    clip_id: &str,
) -> Result<MelSpectrogram> {
    let spec = stft_magnitude(clip).map_err(|e| e.with_clip(clip_id))?;
    let hop_s = HOP as f64 / clip.sample_rate as f64;
    let mel = apply_mel(&spec, fb, hop_s, clip_id)?;
    Ok(log_compress(&median_noise_reduce(&mel)))
}

/// Dump a mel spectrogram as CSV: T rows x 40 columns, no header.
pub fn mel_to_csv(mel: &MelSpectrogram) -> String {
    let mut out = String::new();
    for row in mel.frames.iter_rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
