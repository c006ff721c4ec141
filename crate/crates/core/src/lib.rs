//! Continuous behavioral authentication engine.
//!
//! Verifies a device user's identity from four behavioral modalities — typed
//! text, app usage, web visits, and physical location — by training a binary
//! verifier per modality per user, fusing per-event likelihoods over a
//! sliding active-time window, and combining the four local decisions in an
//! optimal decision fusion center. Ships with a synthetic population
//! generator and an evaluation harness implementing the 5-fold
//! train/characterize/test rotation with FAR/FRR, ROC/EER, and
//! per-classifier contribution analysis.

pub mod detector;
pub mod entity;
pub mod events;
pub mod evaluation;
pub mod fusion;
pub mod location;
pub mod synth;
pub mod text;

pub use detector::{Detector, Vote};
pub use events::{ActiveTimeline, IdleConfig, Modality, Payload, RawEvent, Window};
pub use fusion::{DetectorStats, FusionCenter, GlobalDecision, UserModels};
