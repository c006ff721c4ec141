//! The local-decision contract shared by all per-modality verifiers.

use crate::events::{Modality, Window};

/// A local detector's binary decision: accept the genuine-user hypothesis or
/// reject it. Detectors abstain (return `None`) when their modality produced
/// no usable evidence in the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vote {
    Accept,
    Reject,
}

impl Vote {
    /// +1 for accept, -1 for reject.
    pub fn sign(self) -> f64 {
        match self {
            Vote::Accept => 1.0,
            Vote::Reject => -1.0,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Vote::Accept => "+1",
            Vote::Reject => "-1",
        }
    }
}

/// A trained per-user, per-modality verifier producing local decisions over
/// decision windows.
pub trait Detector {
    fn modality(&self) -> Modality;

    /// `None` means the window held no evidence for this modality.
    fn decide(&self, window: &Window<'_>) -> Option<Vote>;
}
