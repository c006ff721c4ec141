//! Error estimation, ROC construction, equal error rate, and the
//! leave-one-out contribution metric.

use crate::detector::{Detector, Vote};
use crate::events::Window;

use super::folds::FoldSlice;

/// FAR/FRR measured over the non-abstaining decision windows of one fold.
/// Windows where the modality fired no events are excluded from both
/// denominators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    /// Fraction of impostor windows accepted.
    pub far: f64,
    /// Fraction of genuine windows rejected.
    pub frr: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

impl ErrorEstimate {
    pub fn from_counts(
        accepted_impostor: usize,
        n_impostor: usize,
        rejected_genuine: usize,
        n_genuine: usize,
    ) -> ErrorEstimate {
        ErrorEstimate {
            far: if n_impostor > 0 {
                accepted_impostor as f64 / n_impostor as f64
            } else {
                0.0
            },
            frr: if n_genuine > 0 {
                rejected_genuine as f64 / n_genuine as f64
            } else {
                0.0
            },
            n_genuine,
            n_impostor,
        }
    }

    /// An estimate built on zero windows on either side cannot feed fusion;
    /// the detector is excluded for that experiment.
    pub fn is_supported(&self) -> bool {
        self.n_genuine > 0 && self.n_impostor > 0
    }
}

/// Slide decision points at stride omega across the characterization fold:
/// genuine windows from the valid user's fold, impostor windows from the
/// other users' same-index folds, each scored by the trained detector.
pub fn characterize(
    detector: &dyn Detector,
    genuine: &FoldSlice<'_>,
    impostors: &[FoldSlice<'_>],
    omega: i64,
) -> ErrorEstimate {
    let modality = detector.modality();
    let mut rejected_genuine = 0;
    let mut n_genuine = 0;
    for t_now in genuine.decision_points(omega) {
        let events = genuine.window_events(t_now, omega, Some(modality));
        let window = Window { t_now, omega, events };
        match detector.decide(&window) {
            Some(Vote::Reject) => {
                rejected_genuine += 1;
                n_genuine += 1;
            }
            Some(Vote::Accept) => n_genuine += 1,
            None => {}
        }
    }
    let mut accepted_impostor = 0;
    let mut n_impostor = 0;
    for slice in impostors {
        for t_now in slice.decision_points(omega) {
            let events = slice.window_events(t_now, omega, Some(modality));
            let window = Window { t_now, omega, events };
            match detector.decide(&window) {
                Some(Vote::Accept) => {
                    accepted_impostor += 1;
                    n_impostor += 1;
                }
                Some(Vote::Reject) => n_impostor += 1,
                None => {}
            }
        }
    }
    ErrorEstimate::from_counts(accepted_impostor, n_impostor, rejected_genuine, n_genuine)
}

/// One operating point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub a0: f64,
    pub far: f64,
    pub frr: f64,
}

/// An interpolated equal error rate together with the two sweep points that
/// straddle the FAR = FRR crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerEstimate {
    pub value: f64,
    pub left: RocPoint,
    pub right: RocPoint,
}

/// Linear interpolation of the FAR = FRR crossing along the sweep. Points
/// must be ordered by ascending a0 (FAR non-decreasing, FRR non-increasing).
pub fn eer_from_curve(points: &[RocPoint]) -> Option<EerEstimate> {
    if points.is_empty() {
        return None;
    }
    let diff = |p: &RocPoint| p.far - p.frr;
    if diff(&points[0]) > 0.0 {
        // The sweep starts beyond the crossing: report the first point.
        let p = points[0];
        return Some(EerEstimate {
            value: (p.far + p.frr) / 2.0,
            left: p,
            right: p,
        });
    }
    for pair in points.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        if diff(&l) <= 0.0 && diff(&r) >= 0.0 {
            let denom = (r.far - l.far) - (r.frr - l.frr);
            let lambda = if denom.abs() > 0.0 {
                ((l.frr - l.far) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let far = l.far + lambda * (r.far - l.far);
            let frr = l.frr + lambda * (r.frr - l.frr);
            return Some(EerEstimate {
                value: (far + frr) / 2.0,
                left: l,
                right: r,
            });
        }
    }
    // Never crosses within the sweep: report the closest end.
    let p = *points.last().unwrap();
    Some(EerEstimate {
        value: (p.far + p.frr) / 2.0,
        left: p,
        right: p,
    })
}

/// Reference sweep over fused per-window scores: a window with signed
/// weighted-vote sum S is accepted at a0 iff a0 + S > 0.
pub fn roc_and_eer(
    genuine_scores: &[f64],
    impostor_scores: &[f64],
    sweep: &[f64],
) -> (Vec<RocPoint>, Option<EerEstimate>) {
    let points: Vec<RocPoint> = sweep
        .iter()
        .map(|&a0| {
            let far = if impostor_scores.is_empty() {
                0.0
            } else {
                impostor_scores.iter().filter(|&&s| a0 + s > 0.0).count() as f64
                    / impostor_scores.len() as f64
            };
            let frr = if genuine_scores.is_empty() {
                0.0
            } else {
                genuine_scores.iter().filter(|&&s| a0 + s <= 0.0).count() as f64
                    / genuine_scores.len() as f64
            };
            RocPoint { a0, far, frr }
        })
        .collect();
    let eer = eer_from_curve(&points);
    (points, eer)
}

/// Relative contribution of a classifier: (E_i - E) / E_i, where E is the
/// full system's error and E_i the error without classifier i, both at their
/// own equal-error operating points. `None` when E_i = 0 (undefined).
pub fn contribution(e_full: f64, e_without: f64) -> Option<f64> {
    if e_without == 0.0 {
        None
    } else {
        Some((e_without - e_full) / e_without)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_matches_definition() {
        // 10 impostor windows, 3 accepted -> FAR 0.3.
        let est = ErrorEstimate::from_counts(3, 10, 0, 5);
        assert!((est.far - 0.3).abs() < 1e-12);
        assert_eq!(est.frr, 0.0);
        assert!(est.is_supported());
    }

    #[test]
    fn always_accepting_detector_has_far_one() {
        let est = ErrorEstimate::from_counts(10, 10, 0, 7);
        assert_eq!(est.far, 1.0);
        assert_eq!(est.frr, 0.0);
    }

    #[test]
    fn zero_windows_is_unsupported() {
        let est = ErrorEstimate::from_counts(0, 0, 0, 5);
        assert!(!est.is_supported());
    }

    #[test]
    fn sweep_extremes_cover_the_roc() {
        let genuine = [2.0, 3.0, 1.0];
        let impostor = [-2.0, -1.0, -3.0];
        let sweep: Vec<f64> = (-50..=50).map(|i| i as f64 / 5.0).collect();
        let (points, eer) = roc_and_eer(&genuine, &impostor, &sweep);
        assert_eq!(points.first().map(|p| (p.far, p.frr)), Some((0.0, 1.0)));
        assert_eq!(points.last().map(|p| (p.far, p.frr)), Some((1.0, 0.0)));
        // Separable scores: EER reaches zero error somewhere in the middle.
        assert!(eer.unwrap().value < 0.2);
    }

    #[test]
    fn frr_non_increasing_as_far_increases() {
        let genuine = [0.5, -0.5, 1.5, 0.1, -0.2];
        let impostor = [-1.0, 0.3, -0.4, 0.8, -2.0];
        let sweep: Vec<f64> = (-40..=40).map(|i| i as f64 / 10.0).collect();
        let (points, _) = roc_and_eer(&genuine, &impostor, &sweep);
        for pair in points.windows(2) {
            assert!(pair[1].far >= pair[0].far);
            assert!(pair[1].frr <= pair[0].frr);
        }
    }

    #[test]
    fn eer_lies_between_straddling_midpoints() {
        let points = vec![
            RocPoint { a0: -1.0, far: 0.1, frr: 0.6 },
            RocPoint { a0: 0.0, far: 0.2, frr: 0.4 },
            RocPoint { a0: 1.0, far: 0.5, frr: 0.1 },
        ];
        let eer = eer_from_curve(&points).unwrap();
        let m_left = (eer.left.far + eer.left.frr) / 2.0;
        let m_right = (eer.right.far + eer.right.frr) / 2.0;
        assert!(eer.value >= m_left.min(m_right) - 1e-12);
        assert!(eer.value <= m_left.max(m_right) + 1e-12);
        // Crossing bracketed by the 0.0 and 1.0 points.
        assert_eq!((eer.left.a0, eer.right.a0), (0.0, 1.0));
    }

    #[test]
    fn contribution_formula_cases() {
        assert_eq!(contribution(0.02, 0.02), Some(0.0));
        assert_eq!(contribution(0.01, 0.02), Some(0.5));
        assert_eq!(contribution(0.02, 0.01), Some(-1.0));
        assert_eq!(contribution(0.01, 0.0), None);
    }
}
