//! Decision fusion center: combines the fixed local detectors' binary votes
//! into a global accept/reject by the weighted-sum rule that is optimal when
//! detectors are fixed and their observations are conditionally independent.
//!
//! Each detector's weight depends only on its characterization error rates
//! and the direction of its vote; the threshold term a0 doubles as the ROC sweep
//! parameter when priors are unknown. Detectors whose modality produced no
//! events in the window are simply absent from the sum; a window where every
//! detector is silent yields a global abstain, surfaced distinctly from a
//! reject so callers can apply a grace policy.

use crate::detector::{Detector, Vote};
use crate::entity::EntityModel;
use crate::events::{ActiveTimeline, Modality};
use crate::location::LocationVerifier;
use crate::text::NGramProfile;

/// Error-rate clamp keeping fusion weights finite when a characterization
/// fold shows zero errors.
pub const STAT_FLOOR: f64 = 1e-4;

/// A detector's characterization-fold error estimates: false accept rate and
/// false reject (miss) rate, clamped away from 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorStats {
    pub classifier_id: String,
    p_f: f64,
    p_m: f64,
}

impl DetectorStats {
    pub fn new(classifier_id: impl Into<String>, p_f: f64, p_m: f64) -> DetectorStats {
        DetectorStats {
            classifier_id: classifier_id.into(),
            p_f: clamp_rate(p_f),
            p_m: clamp_rate(p_m),
        }
    }

    pub fn p_f(&self) -> f64 {
        self.p_f
    }

    pub fn p_m(&self) -> f64 {
        self.p_m
    }
}

pub fn clamp_rate(rate: f64) -> f64 {
    rate.clamp(STAT_FLOOR, 1.0 - STAT_FLOOR)
}

/// The optimum weight of a vote: log((1-p_m)/p_f) for an accept,
/// log((1-p_f)/p_m) for a reject.
pub fn weight_for(stats: &DetectorStats, vote: Vote) -> f64 {
    match vote {
        Vote::Accept => ((1.0 - stats.p_m) / stats.p_f).ln(),
        Vote::Reject => ((1.0 - stats.p_f) / stats.p_m).ln(),
    }
}

/// One detector's contribution to a fused decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorContribution {
    pub classifier_id: String,
    pub vote: Vote,
    pub weight: f64,
}

/// The fused outcome: accept iff the signed weighted sum is strictly
/// positive (ties reject).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDecision {
    pub vote: Vote,
    pub score: f64,
    pub contributions: Vec<DetectorContribution>,
}

/// The fusion center: holds the prior/threshold term. With known priors
/// a0 = log(P1/P0); in deployment it is the swept operating-point parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionCenter {
    pub a0: f64,
}

impl FusionCenter {
    pub fn new(a0: f64) -> FusionCenter {
        FusionCenter { a0 }
    }

    /// Fuse the detectors that produced a decision this window. An empty
    /// list carries no evidence: global abstain.
    pub fn fuse(&self, decisions: &[(DetectorStats, Vote)]) -> Option<GlobalDecision> {
        if decisions.is_empty() {
            return None;
        }
        let mut score = self.a0;
        let mut contributions = Vec::with_capacity(decisions.len());
        for (stats, vote) in decisions {
            let weight = weight_for(stats, *vote);
            score += weight * vote.sign();
            contributions.push(DetectorContribution {
                classifier_id: stats.classifier_id.clone(),
                vote: *vote,
                weight,
            });
        }
        let vote = if score > 0.0 { Vote::Accept } else { Vote::Reject };
        Some(GlobalDecision {
            vote,
            score,
            contributions,
        })
    }
}

/// The four trained per-user verifiers. A missing entry means training was
/// impossible (for example, not enough text) and the modality is excluded.
#[derive(Debug, Default)]
pub struct UserModels {
    pub text: Option<NGramProfile>,
    pub app: Option<EntityModel>,
    pub web: Option<EntityModel>,
    pub location: Option<LocationVerifier>,
}

impl UserModels {
    pub fn detector(&self, modality: Modality) -> Option<&dyn Detector> {
        match modality {
            Modality::Text => self.text.as_ref().map(|m| m as &dyn Detector),
            Modality::App => self.app.as_ref().map(|m| m as &dyn Detector),
            Modality::Web => self.web.as_ref().map(|m| m as &dyn Detector),
            Modality::Location => self.location.as_ref().map(|m| m as &dyn Detector),
        }
    }
}

/// One modality's local outcome within an authentication decision.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub modality: Modality,
    pub vote: Option<Vote>,
    pub weight: Option<f64>,
}

/// A full authentication decision: the per-modality locals plus the fused
/// global (None when every modality was silent).
#[derive(Debug, Clone, PartialEq)]
pub struct AuthOutcome {
    pub t_now: i64,
    pub omega: i64,
    pub locals: Vec<LocalOutcome>,
    pub global: Option<GlobalDecision>,
}

/// Run one serial authentication decision at `t_now`: extract the window per
/// modality, collect local votes, fuse the non-silent ones.
pub fn authenticate(
    timeline: &ActiveTimeline,
    t_now: i64,
    omega: i64,
    models: &UserModels,
    stats: &[(Modality, DetectorStats)],
    a0: f64,
) -> AuthOutcome {
    let mut locals = Vec::with_capacity(Modality::ALL.len());
    let mut fused_inputs = Vec::new();
    for modality in Modality::ALL {
        let vote = models.detector(modality).and_then(|det| {
            let window = timeline.window_at(t_now, omega, Some(modality));
            det.decide(&window)
        });
        let det_stats = stats.iter().find(|(m, _)| *m == modality).map(|(_, s)| s);
        let weight = match (vote, det_stats) {
            (Some(v), Some(s)) => {
                fused_inputs.push((s.clone(), v));
                Some(weight_for(s, v))
            }
            _ => None,
        };
        locals.push(LocalOutcome {
            modality,
            vote,
            weight,
        });
    }
    let global = FusionCenter::new(a0).fuse(&fused_inputs);
    AuthOutcome {
        t_now,
        omega,
        locals,
        global,
    }
}

/// Brute-force reference for tests and acceptance: evaluate the exact
/// likelihood-ratio test P(u|H1)/P(u|H0) > P0/P1 under conditional
/// independence.
pub fn bayes_optimal_vote(stats: &[DetectorStats], votes: &[Vote], p1: f64) -> Vote {
    let mut log_lr = 0.0;
    for (s, v) in stats.iter().zip(votes) {
        let (ph1, ph0) = match v {
            Vote::Accept => (1.0 - s.p_m(), s.p_f()),
            Vote::Reject => (s.p_m(), 1.0 - s.p_f()),
        };
        log_lr += (ph1 / ph0).ln();
    }
    let tau = ((1.0 - p1) / p1).ln();
    if log_lr > tau {
        Vote::Accept
    } else {
        Vote::Reject
    }
}
