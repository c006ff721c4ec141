//! Platt scaling: fit a sigmoid p(s) = 1 / (1 + exp(a*s + b)) to held-out
//! classifier scores by minimizing the regularized negative log-likelihood
//! with the standard smoothed targets t+ = (N+ + 1)/(N+ + 2) and
//! t- = 1/(N- + 2).
//!
//! The fit uses damped Newton steps with a backtracking line search until the
//! gradient norm drops to 1e-8. On correctly-signed scores (higher score =>
//! more likely genuine) the fitted slope a is negative, making the calibrated
//! probability strictly increasing in the raw score.

use thiserror::Error;

pub const GRADIENT_TOL: f64 = 1e-8;
const MAX_NEWTON_ITERS: usize = 200;
const HESSIAN_RIDGE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PlattError {
    #[error("scores and labels differ in length")]
    LengthMismatch,
    #[error("calibration requires both classes")]
    SingleClass,
    #[error("sigmoid fit did not converge")]
    NoConvergence,
}

/// Fitted sigmoid parameters. Outputs lie strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattCalibration {
    pub a: f64,
    pub b: f64,
}

impl PlattCalibration {
    /// Calibrated genuine probability for a raw decision score.
    pub fn probability(&self, score: f64) -> f64 {
        let f = self.a * score + self.b;
        // 1 / (1 + e^f), evaluated stably on both tails and kept strictly
        // inside (0, 1) so the log-odds stay finite.
        let p = if f >= 0.0 {
            let e = (-f).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + f.exp())
        };
        p.clamp(f64::MIN_POSITIVE, 1.0 - 1e-15)
    }

    /// ln(p / (1 - p)) for a raw decision score.
    pub fn log_odds(&self, score: f64) -> f64 {
        let p = self.probability(score);
        (p / (1.0 - p)).ln()
    }
}

fn smoothed_targets(labels: &[i8]) -> Result<Vec<f64>, PlattError> {
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PlattError::SingleClass);
    }
    let t_pos = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let t_neg = 1.0 / (n_neg as f64 + 2.0);
    Ok(labels
        .iter()
        .map(|&l| if l > 0 { t_pos } else { t_neg })
        .collect())
}

/// Negative log-likelihood of the sigmoid at (a, b), evaluated stably:
/// F = sum_i [ softplus(f_i) - (1 - t_i) * f_i ],  f_i = a*s_i + b.
pub fn sigmoid_nll(a: f64, b: f64, scores: &[f64], targets: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&s, &t) in scores.iter().zip(targets) {
        let f = a * s + b;
        let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
        total += softplus - (1.0 - t) * f;
    }
    total
}

/// Fit (a, b) on held-out scores. Callers must produce the scores on data the
/// scored model was not trained on (cross-validation folds).
pub fn fit_platt(scores: &[f64], labels: &[i8]) -> Result<PlattCalibration, PlattError> {
    if scores.len() != labels.len() {
        return Err(PlattError::LengthMismatch);
    }
    let targets = smoothed_targets(labels)?;
    let n_pos = labels.iter().filter(|&&l| l > 0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;

    let mut a = 0.0f64;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut nll = sigmoid_nll(a, b, scores, &targets);

    for _ in 0..MAX_NEWTON_ITERS {
        // Gradient and Hessian of the NLL in (a, b).
        let mut ga = 0.0;
        let mut gb = 0.0;
        let mut haa = HESSIAN_RIDGE;
        let mut hab = 0.0;
        let mut hbb = HESSIAN_RIDGE;
        for (&s, &t) in scores.iter().zip(&targets) {
            let f = a * s + b;
            let p = if f >= 0.0 {
                let e = (-f).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + f.exp())
            };
            // dF/df = (1 - p) - (1 - t) = t... with p = sigma(-f), this is
            // the usual residual in the decreasing parametrization.
            let g = t - p;
            ga += g * s;
            gb += g;
            let w = p * (1.0 - p);
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        let grad_norm = (ga * ga + gb * gb).sqrt();
        if grad_norm <= GRADIENT_TOL {
            return Ok(PlattCalibration { a, b });
        }

        // Newton direction: solve H d = -grad (2x2).
        let det = haa * hbb - hab * hab;
        let (da, db) = if det.abs() > 0.0 && det.is_finite() {
            ((-ga * hbb + gb * hab) / det, (-gb * haa + ga * hab) / det)
        } else {
            (-ga, -gb)
        };

        // Backtracking until the objective decreases.
        let mut step = 1.0f64;
        let mut improved = false;
        while step >= 1e-12 {
            let (na, nb) = (a + step * da, b + step * db);
            let cand = sigmoid_nll(na, nb, scores, &targets);
            if cand < nll {
                a = na;
                b = nb;
                nll = cand;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            // No descent direction left; accept if the gradient is already
            // numerically tiny relative to the problem scale.
            if grad_norm <= 1e-6 * (1.0 + nll.abs()) {
                return Ok(PlattCalibration { a, b });
            }
            return Err(PlattError::NoConvergence);
        }
    }

    Err(PlattError::NoConvergence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_gradient_small(cal: &PlattCalibration, scores: &[f64], labels: &[i8]) {
        let targets = smoothed_targets(labels).unwrap();
        let mut ga = 0.0;
        let mut gb = 0.0;
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = 1.0 / (1.0 + (cal.a * s + cal.b).exp());
            ga += (t - p) * s;
            gb += t - p;
        }
        let norm = (ga * ga + gb * gb).sqrt();
        assert!(norm <= 1e-8, "gradient norm {} too large", norm);
    }

    #[test]
    fn separated_scores_give_monotone_probabilities() {
        let scores = [-3.0, -2.0, -1.5, 1.5, 2.0, 3.0];
        let labels = [-1, -1, -1, 1, 1, 1];
        let cal = fit_platt(&scores, &labels).unwrap();
        assert!(cal.a < 0.0, "slope must make probability increase with score");
        let probs: Vec<f64> = scores.iter().map(|&s| cal.probability(s)).collect();
        for pair in probs.windows(2) {
            assert!(pair[1] > pair[0], "calibrated probabilities must increase");
        }
        check_gradient_small(&cal, &scores, &labels);
    }

    #[test]
    fn symmetric_balanced_scores_cross_half_at_zero() {
        let scores = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let labels = [-1, -1, -1, 1, 1, 1];
        let cal = fit_platt(&scores, &labels).unwrap();
        assert!((cal.probability(0.0) - 0.5).abs() <= 1e-3);
    }

    #[test]
    fn four_score_case_is_ordered_and_symmetric() {
        let scores = [-2.0, -1.0, 1.0, 2.0];
        let labels = [-1, -1, 1, 1];
        let cal = fit_platt(&scores, &labels).unwrap();
        let p: Vec<f64> = scores.iter().map(|&s| cal.probability(s)).collect();
        assert!(p[0] < p[1] && p[1] < p[2] && p[2] < p[3]);
        assert!((p[0] + p[3] - 1.0).abs() <= 1e-6, "tail symmetry violated");
        check_gradient_small(&cal, &scores, &labels);
    }

    #[test]
    fn fit_matches_grid_search_oracle() {
        // Independent oracle: exhaustive grid over (a, b) with iterative
        // refinement, minimizing the same smoothed-target NLL.
        let scores = [-2.0, -1.0, 1.0, 2.0];
        let labels = [-1, -1, 1, 1];
        let targets = smoothed_targets(&labels).unwrap();
        let mut center = (0.0f64, 0.0f64);
        let mut half_width = 16.0f64;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for _round in 0..12 {
            let steps = 40;
            for i in 0..=steps {
                for j in 0..=steps {
                    let a = center.0 - half_width + 2.0 * half_width * i as f64 / steps as f64;
                    let b = center.1 - half_width + 2.0 * half_width * j as f64 / steps as f64;
                    let loss = sigmoid_nll(a, b, &scores, &targets);
                    if loss < best.0 {
                        best = (loss, a, b);
                    }
                }
            }
            center = (best.1, best.2);
            half_width *= 0.15;
        }
        let cal = fit_platt(&scores, &labels).unwrap();
        let fitted_loss = sigmoid_nll(cal.a, cal.b, &scores, &targets);
        assert!(
            fitted_loss <= best.0 + 1e-6,
            "fitted loss {} vs grid-search loss {}",
            fitted_loss,
            best.0
        );
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(fit_platt(&[0.1, 0.2], &[1, 1]), Err(PlattError::SingleClass)));
    }

    #[test]
    fn probabilities_stay_inside_open_interval() {
        let cal = PlattCalibration { a: -5.0, b: 0.0 };
        for s in [-1e6, -100.0, 0.0, 100.0, 1e6] {
            let p = cal.probability(s);
            assert!(p > 0.0 && p < 1.0);
            assert!(cal.log_odds(s).is_finite());
        }
    }
}
