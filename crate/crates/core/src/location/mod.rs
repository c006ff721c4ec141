//! Location verifier: an RBF-kernel SVM over (lat, lon) fixes, calibrated to
//! probabilities by Platt scaling, fused over the window by the
//! maximum-likelihood product.
//!
//! Class imbalance from the 1-vs-rest construction is handled twice: the
//! impostor pool is subsampled to at most ten times the valid count, and the
//! remaining imbalance is absorbed by inverse-frequency class weights on the
//! box constraint. Platt scores come from an internal 3-fold cross-validation
//! so the sigmoid is never fitted on scores of its own training points.

pub mod platt;
pub mod svm;

use std::io::{self, BufRead, Write};

use thiserror::Error;

pub use platt::{fit_platt, PlattCalibration, PlattError};
pub use svm::{
    median_heuristic_gamma, quantile_gamma, train_svm, FeatureScaler, RbfSvmModel, SvmError,
    SvmFit, SvmParams,
};

use crate::detector::{Detector, Vote};
use crate::events::{Modality, Payload, Window};

pub const DEFAULT_MAX_IMPOSTOR_RATIO: usize = 10;
const PLATT_CV_FOLDS: usize = 3;
const MIN_CLASS_POINTS: usize = 3;

#[derive(Debug, Error)]
pub enum LocationError {
    #[error("too few location fixes: {valid} valid / {impostor} impostor (need {min} each)")]
    TooFewPoints {
        valid: usize,
        impostor: usize,
        min: usize,
    },
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Platt(#[from] PlattError),
    #[error("model line {line}: {message}")]
    ModelFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Deterministic, evenly-spaced subsample keeping input order.
pub fn subsample_impostors(points: &[[f64; 2]], cap: usize) -> Vec<[f64; 2]> {
    if points.len() <= cap {
        return points.to_vec();
    }
    (0..cap).map(|i| points[i * points.len() / cap]).collect()
}

/// A trained location classifier: the SVM plus its probability calibration.
///
/// The Platt sigmoid is fitted on imbalanced calibration data (1 user versus
/// the rest), so its raw output embeds that class prior. The verifier stores
/// the calibration set's log prior odds and removes them, making
/// `genuine_probability` an equal-prior posterior: exactly what the
/// per-window product treats as proportional to P(x|H1) : P(x|H0).
#[derive(Debug, Clone)]
pub struct LocationVerifier {
    pub svm: RbfSvmModel,
    pub platt: PlattCalibration,
    pub prior_log_odds: f64,
}

/// Train the full location pipeline on raw (lat, lon) fixes.
pub fn train_location(
    valid_points: &[[f64; 2]],
    impostor_points: &[[f64; 2]],
    params: &SvmParams,
) -> Result<LocationVerifier, LocationError> {
    if valid_points.len() < MIN_CLASS_POINTS || impostor_points.len() < MIN_CLASS_POINTS {
        return Err(LocationError::TooFewPoints {
            valid: valid_points.len(),
            impostor: impostor_points.len(),
            min: MIN_CLASS_POINTS,
        });
    }
    let impostors = subsample_impostors(
        impostor_points,
        valid_points.len() * DEFAULT_MAX_IMPOSTOR_RATIO,
    );

    // Held-out scores for calibration: stratified interleaved 3-fold CV.
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for fold in 0..PLATT_CV_FOLDS {
        let train_v: Vec<[f64; 2]> = valid_points
            .iter()
            .enumerate()
            .filter(|(i, _)| i % PLATT_CV_FOLDS != fold)
            .map(|(_, &p)| p)
            .collect();
        let train_i: Vec<[f64; 2]> = impostors
            .iter()
            .enumerate()
            .filter(|(i, _)| i % PLATT_CV_FOLDS != fold)
            .map(|(_, &p)| p)
            .collect();
        if train_v.is_empty() || train_i.is_empty() {
            continue;
        }
        let fit = match train_svm(&train_v, &train_i, params) {
            Ok(fit) => fit,
            // A degenerate CV split (all its points identical) contributes
            // no calibration scores; the final model may still be fine.
            Err(SvmError::Degenerate) => continue,
            Err(e) => return Err(e.into()),
        };
        for (i, p) in valid_points.iter().enumerate() {
            if i % PLATT_CV_FOLDS == fold {
                scores.push(fit.model.decision_score(*p));
                labels.push(1i8);
            }
        }
        for (i, p) in impostors.iter().enumerate() {
            if i % PLATT_CV_FOLDS == fold {
                scores.push(fit.model.decision_score(*p));
                labels.push(-1i8);
            }
        }
    }
    let platt = fit_platt(&scores, &labels)?;
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = labels.len() - n_pos;
    let prior_log_odds = (n_pos as f64 / n_neg as f64).ln();
    let fit = train_svm(valid_points, &impostors, params)?;
    Ok(LocationVerifier {
        svm: fit.model,
        platt,
        prior_log_odds,
    })
}

impl LocationVerifier {
    /// Equal-prior genuine probability for one fix.
    pub fn genuine_probability(&self, lat: f64, lon: f64) -> f64 {
        let lo = self.log_odds(lat, lon);
        1.0 / (1.0 + (-lo).exp())
    }

    /// ln(p / (1-p)) for one fix with the calibration prior removed: the
    /// fix's contribution to the window's log-likelihood ratio under
    /// P(x|H1) : P(x|H0) = p : (1-p).
    pub fn log_odds(&self, lat: f64, lon: f64) -> f64 {
        self.platt.log_odds(self.svm.decision_score([lat, lon])) - self.prior_log_odds
    }

    /// Sum of per-fix log odds over the window; `None` on a window without
    /// location fixes.
    pub fn window_log_odds(&self, window: &Window<'_>) -> Option<f64> {
        let mut sum = 0.0;
        let mut any = false;
        for timed in &window.events {
            if let Payload::Location { lat, lon } = timed.event.payload {
                sum += self.log_odds(lat, lon);
                any = true;
            }
        }
        any.then_some(sum)
    }

    pub fn decide_window(&self, window: &Window<'_>) -> Option<Vote> {
        self.window_log_odds(window)
            .map(|lr| if lr >= 0.0 { Vote::Accept } else { Vote::Reject })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let s = &self.svm;
        writeln!(w, "scaler_mean\t{}\t{}", s.scaler.mean[0], s.scaler.mean[1])?;
        writeln!(w, "scaler_scale\t{}\t{}", s.scaler.scale[0], s.scaler.scale[1])?;
        writeln!(w, "gamma\t{}", s.gamma)?;
        writeln!(w, "c\t{}\t{}\t{}", s.c, s.c_bounds.0, s.c_bounds.1)?;
        writeln!(w, "bias\t{}", s.bias)?;
        writeln!(w, "platt\t{}\t{}", self.platt.a, self.platt.b)?;
        writeln!(w, "prior_log_odds\t{}", self.prior_log_odds)?;
        for (sv, a) in s.support_points.iter().zip(&s.alphas) {
            writeln!(w, "sv\t{}\t{}\t{}", sv[0], sv[1], a)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<LocationVerifier, LocationError> {
        let mut scaler_mean = None;
        let mut scaler_scale = None;
        let mut gamma = None;
        let mut c = None;
        let mut c_bounds = None;
        let mut bias = None;
        let mut platt = None;
        let mut prior_log_odds = None;
        let mut support_points = Vec::new();
        let mut alphas = Vec::new();

        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let fmt_err = |message: String| LocationError::ModelFormat {
                line: idx + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| fmt_err(format!("bad number {s:?}")));
            match fields.as_slice() {
                ["scaler_mean", a, b] => scaler_mean = Some([num(a)?, num(b)?]),
                ["scaler_scale", a, b] => scaler_scale = Some([num(a)?, num(b)?]),
                ["gamma", g] => gamma = Some(num(g)?),
                ["c", base, pos, neg] => {
                    c = Some(num(base)?);
                    c_bounds = Some((num(pos)?, num(neg)?));
                }
                ["bias", b] => bias = Some(num(b)?),
                ["platt", a, b] => {
                    platt = Some(PlattCalibration {
                        a: num(a)?,
                        b: num(b)?,
                    })
                }
                ["prior_log_odds", v] => prior_log_odds = Some(num(v)?),
                ["sv", lat, lon, alpha] => {
                    support_points.push([num(lat)?, num(lon)?]);
                    alphas.push(num(alpha)?);
                }
                _ => return Err(fmt_err("unrecognized record".into())),
            }
        }

        let missing = |what: &str| LocationError::ModelFormat {
            line: 0,
            message: format!("missing {what}"),
        };
        Ok(LocationVerifier {
            svm: RbfSvmModel {
                support_points,
                alphas,
                bias: bias.ok_or_else(|| missing("bias"))?,
                gamma: gamma.ok_or_else(|| missing("gamma"))?,
                c: c.ok_or_else(|| missing("c"))?,
                c_bounds: c_bounds.ok_or_else(|| missing("c"))?,
                scaler: FeatureScaler {
                    mean: scaler_mean.ok_or_else(|| missing("scaler_mean"))?,
                    scale: scaler_scale.ok_or_else(|| missing("scaler_scale"))?,
                },
            },
            platt: platt.ok_or_else(|| missing("platt"))?,
            prior_log_odds: prior_log_odds.ok_or_else(|| missing("prior_log_odds"))?,
        })
    }
}

impl Detector for LocationVerifier {
    fn modality(&self) -> Modality {
        Modality::Location
    }

    fn decide(&self, window: &Window<'_>) -> Option<Vote> {
        self.decide_window(window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{compress_idle, IdleConfig, RawEvent};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cluster(rng: &mut ChaCha8Rng, center: [f64; 2], sigma: f64, n: usize) -> Vec<[f64; 2]> {
        let normal = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| [center[0] + normal.sample(rng), center[1] + normal.sample(rng)])
            .collect()
    }

    fn trained_verifier(seed: u64) -> (LocationVerifier, Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let valid = cluster(&mut rng, [39.95, -75.16], 0.004, 60);
        let mut impostor = cluster(&mut rng, [39.99, -75.20], 0.004, 300);
        impostor.extend(cluster(&mut rng, [40.02, -75.10], 0.004, 300));
        let verifier = train_location(&valid, &impostor, &SvmParams::default()).unwrap();
        (verifier, valid, impostor)
    }

    #[test]
    fn calibrated_probability_monotone_in_score() {
        let (verifier, _, _) = trained_verifier(1);
        assert!(verifier.platt.a < 0.0);
        let mut scores: Vec<f64> = (-20..=20).map(|i| i as f64 / 4.0).collect();
        scores.dedup();
        for pair in scores.windows(2) {
            let p0 = verifier.platt.probability(pair[0]);
            let p1 = verifier.platt.probability(pair[1]);
            assert!(p1 > p0, "calibration must be strictly increasing");
        }
    }

    #[test]
    fn single_fix_error_rates_on_disjoint_anchors() {
        // Users with disjoint anchor locations: a single fix should verify
        // with FAR < 0.15 and FRR < 0.10.
        let (verifier, valid, impostor) = trained_verifier(2);
        let frr = valid
            .iter()
            .filter(|p| verifier.genuine_probability(p[0], p[1]) < 0.5)
            .count() as f64
            / valid.len() as f64;
        let far = impostor
            .iter()
            .filter(|p| verifier.genuine_probability(p[0], p[1]) >= 0.5)
            .count() as f64
            / impostor.len() as f64;
        assert!(frr < 0.10, "single-fix FRR {}", frr);
        assert!(far < 0.15, "single-fix FAR {}", far);
    }

    fn window_of(fixes: &[[f64; 2]]) -> crate::events::ActiveTimeline {
        let events: Vec<RawEvent> = fixes
            .iter()
            .enumerate()
            .map(|(i, f)| RawEvent {
                user_id: "u".into(),
                wall_time: i as i64,
                payload: crate::events::Payload::Location { lat: f[0], lon: f[1] },
            })
            .collect();
        compress_idle(events, IdleConfig::default()).unwrap()
    }

    #[test]
    fn single_confident_fix_accepts() {
        let (verifier, valid, _) = trained_verifier(3);
        let timeline = window_of(&valid[..1]);
        let window = timeline.window_at(10, 100, None);
        let p = verifier.genuine_probability(valid[0][0], valid[0][1]);
        assert!(p > 0.5, "genuine anchor fix should calibrate above half, got {p}");
        assert_eq!(verifier.decide_window(&window), Some(Vote::Accept));
    }

    #[test]
    fn empty_window_abstains() {
        let (verifier, _, _) = trained_verifier(4);
        let timeline = window_of(&[]);
        let window = timeline.window_at(10, 100, None);
        assert_eq!(verifier.decide_window(&window), None);
    }

    #[test]
    fn window_product_matches_hand_computation() {
        // Fixes with p = {0.9, 0.4}: ln(0.9/0.1) + ln(0.4/0.6) > 0 -> accept.
        let lr = (0.9f64 / 0.1).ln() + (0.4f64 / 0.6).ln();
        assert!(lr > 0.0);
        assert!((lr - (2.197224577 - 0.405465108)).abs() < 1e-6);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let err = train_location(&[[0.0, 0.0]], &[[1.0, 1.0]], &SvmParams::default());
        assert!(matches!(err, Err(LocationError::TooFewPoints { .. })));
    }

    #[test]
    fn subsample_is_deterministic_and_capped() {
        let points: Vec<[f64; 2]> = (0..100).map(|i| [i as f64, 0.0]).collect();
        let a = subsample_impostors(&points, 10);
        let b = subsample_impostors(&points, 10);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(subsample_impostors(&points, 200).len(), 100);
    }

    #[test]
    fn model_file_round_trips() {
        let (verifier, _, _) = trained_verifier(5);
        let mut buf = Vec::new();
        verifier.write_to(&mut buf).unwrap();
        let reread = LocationVerifier::read_from(&buf[..]).unwrap();
        assert_eq!(reread.platt, verifier.platt);
        assert_eq!(reread.svm.bias, verifier.svm.bias);
        assert_eq!(reread.svm.support_points, verifier.svm.support_points);
        assert_eq!(reread.svm.alphas, verifier.svm.alphas);
        let mut buf2 = Vec::new();
        reread.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        // Same scores before and after.
        let probe = [39.96, -75.17];
        assert_eq!(
            verifier.svm.decision_score(probe),
            reread.svm.decision_score(probe)
        );
    }
}
