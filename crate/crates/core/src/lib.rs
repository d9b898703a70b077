//! Individual acoustic identification pipeline.
//!
//! Identifies which individual animal produced a vocalization, from field
//! recordings annotated with foreground (focal animal vocalizing) and
//! background (focal animal silent) clips. The pipeline runs mel-spectrogram
//! extraction, optional unsupervised feature learning, and a random-forest
//! classifier, and ships two structured data-augmentation tools built on
//! foreground/background mixing:
//!
//! * stratified augmentation enlarges the training set by mixing each
//!   training clip with a background from every other individual, breaking
//!   the correlation between an individual and its home soundscape;
//! * adversarial augmentation probes a trained classifier by mixing each
//!   evaluation clip with another individual's background and measuring how
//!   much the output probabilities move.
//!
//! Confound diagnostics (background-only classification, probability-shift
//! RMSE) report whether a classifier is keying on the animal or on its
//! territory. A seeded synthetic-dataset generator with a controllable
//! planted confound makes the whole pipeline testable without field data.

pub mod audio;
pub mod augment;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod featlearn;
pub mod forest;
pub mod matrix;
pub mod rng;
pub mod runner;
pub mod synthgen;

pub use audio::AudioClip;
pub use dataset::{ClipRecord, DatasetManifest, Role, ScenarioSpec, SplitRule, BACKGROUND_LABEL};
pub use error::{Error, Result};
