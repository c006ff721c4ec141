//! Two-class RBF-kernel support vector classifier on (lat, lon), trained by
//! a maximal-violating-pair working-set solver on the dual problem.
//!
//! Features are standardized before the kernel so that the RBF width is not
//! location-dependent; gamma defaults to the median heuristic over pairwise
//! squared distances of the standardized training points.

use thiserror::Error;

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_KKT_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("both classes must be non-empty")]
    EmptyClass,
    #[error("inseparable degenerate data: all training points identical")]
    Degenerate,
    #[error("solver did not converge within {0} iterations")]
    NoConvergence(usize),
}

/// Default quantile of pairwise squared distances setting the kernel width.
/// Location data is multi-cluster: the median lands at inter-cluster scale
/// and blurs sparsely-visited clusters into the impostor mass, so the
/// default resolves the within-cluster scale instead.
pub const DEFAULT_GAMMA_QUANTILE: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct SvmParams {
    /// Base box constraint; per-class boxes are c scaled by the class weight.
    pub c: f64,
    /// RBF width; `None` derives it from pairwise distances.
    pub gamma: Option<f64>,
    /// Quantile of pairwise squared distances used when gamma is derived.
    pub gamma_quantile: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Inverse-frequency class weighting to counter the 1-vs-rest imbalance.
    pub balanced: bool,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: DEFAULT_C,
            gamma: None,
            gamma_quantile: DEFAULT_GAMMA_QUANTILE,
            tol: DEFAULT_KKT_TOL,
            balanced: true,
            max_iter: 200_000,
        }
    }
}

/// Per-dimension standardization fitted on the training points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScaler {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl FeatureScaler {
    pub fn fit(points: &[[f64; 2]]) -> FeatureScaler {
        let n = points.len().max(1) as f64;
        let mut mean = [0.0; 2];
        for p in points {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut var = [0.0; 2];
        for p in points {
            var[0] += (p[0] - mean[0]).powi(2);
            var[1] += (p[1] - mean[1]).powi(2);
        }
        let scale = [
            (var[0] / n).sqrt().max(f64::MIN_POSITIVE.sqrt()),
            (var[1] / n).sqrt().max(f64::MIN_POSITIVE.sqrt()),
        ];
        // A zero-variance dimension is left unscaled.
        let scale = [
            if var[0] / n > 0.0 { scale[0] } else { 1.0 },
            if var[1] / n > 0.0 { scale[1] } else { 1.0 },
        ];
        FeatureScaler { mean, scale }
    }

    pub fn transform(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.mean[0]) / self.scale[0],
            (p[1] - self.mean[1]) / self.scale[1],
        ]
    }
}

/// gamma = 1 / (2 * q-quantile of pairwise squared distances). `None` when
/// every pairwise distance is zero.
pub fn quantile_gamma(points: &[[f64; 2]], quantile: f64) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut dists: Vec<f64> = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            dists.push(sq_dist(points[i], points[j]));
        }
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let idx = ((dists.len() as f64 * quantile.clamp(0.0, 1.0)) as usize).min(dists.len() - 1);
    let picked = dists[idx];
    let d2 = if picked > 0.0 {
        picked
    } else {
        // Coincident pairs below the quantile; fall back to the smallest
        // positive distance, then to the mean of positive distances.
        match dists.iter().copied().find(|&d| d > 0.0) {
            Some(d) => d,
            None => return None,
        }
    };
    Some(1.0 / (2.0 * d2))
}

/// The classic median special case of `quantile_gamma`.
pub fn median_heuristic_gamma(points: &[[f64; 2]]) -> Option<f64> {
    quantile_gamma(points, 0.5)
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// A trained classifier: support points live in the standardized feature
/// space, coefficients are the signed duals alpha_i * y_i.
#[derive(Debug, Clone)]
pub struct RbfSvmModel {
    pub support_points: Vec<[f64; 2]>,
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    /// Effective per-class boxes after weighting: (valid, impostor).
    pub c_bounds: (f64, f64),
    pub scaler: FeatureScaler,
}

impl RbfSvmModel {
    /// Decision score for a raw (lat, lon) point.
    pub fn decision_score(&self, point: [f64; 2]) -> f64 {
        self.score_normalized(self.scaler.transform(point))
    }

    pub fn score_normalized(&self, x: [f64; 2]) -> f64 {
        let mut sum = self.bias;
        for (sv, &a) in self.support_points.iter().zip(&self.alphas) {
            sum += a * (-self.gamma * sq_dist(*sv, x)).exp();
        }
        sum
    }
}

/// Training result plus solver diagnostics.
#[derive(Debug)]
pub struct SvmFit {
    pub model: RbfSvmModel,
    pub iterations: usize,
    /// Maximal violation of the margin/complementarity conditions over the
    /// training set, measured after training.
    pub kkt_residual: f64,
}

struct RowCache {
    rows: Vec<Option<Box<[f64]>>>,
    order: std::collections::VecDeque<usize>,
    capacity: usize,
}

impl RowCache {
    fn new(n: usize) -> RowCache {
        let capacity = (2_000_000 / n.max(1)).max(32).min(n.max(1));
        RowCache {
            rows: vec![None; n],
            order: std::collections::VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    fn get(&mut self, i: usize, points: &[[f64; 2]], gamma: f64) -> &[f64] {
        if self.rows[i].is_none() {
            if self.order.len() >= self.capacity {
                if let Some(evict) = self.order.pop_front() {
                    self.rows[evict] = None;
                }
            }
            let xi = points[i];
            let row: Box<[f64]> = points
                .iter()
                .map(|&p| (-gamma * sq_dist(xi, p)).exp())
                .collect();
            self.rows[i] = Some(row);
            self.order.push_back(i);
        }
        self.rows[i].as_deref().unwrap()
    }
}

/// Solve the soft-margin dual for valid (+1) versus impostor (-1) points.
pub fn train_svm(
    valid_points: &[[f64; 2]],
    impostor_points: &[[f64; 2]],
    params: &SvmParams,
) -> Result<SvmFit, SvmError> {
    if valid_points.is_empty() || impostor_points.is_empty() {
        return Err(SvmError::EmptyClass);
    }

    let mut raw: Vec<[f64; 2]> = Vec::with_capacity(valid_points.len() + impostor_points.len());
    raw.extend_from_slice(valid_points);
    raw.extend_from_slice(impostor_points);
    let first = raw[0];
    if raw.iter().all(|p| *p == first) {
        return Err(SvmError::Degenerate);
    }

    let scaler = FeatureScaler::fit(&raw);
    let points: Vec<[f64; 2]> = raw.iter().map(|&p| scaler.transform(p)).collect();
    let n = points.len();
    let n_pos = valid_points.len();
    let n_neg = impostor_points.len();
    let labels: Vec<f64> = (0..n).map(|i| if i < n_pos { 1.0 } else { -1.0 }).collect();

    let gamma = match params.gamma {
        Some(g) => g,
        None => quantile_gamma(&points, params.gamma_quantile).ok_or(SvmError::Degenerate)?,
    };

    let (w_pos, w_neg) = if params.balanced {
        (n as f64 / (2.0 * n_pos as f64), n as f64 / (2.0 * n_neg as f64))
    } else {
        (1.0, 1.0)
    };
    let c_pos = params.c * w_pos;
    let c_neg = params.c * w_neg;
    let box_of = |i: usize| if labels[i] > 0.0 { c_pos } else { c_neg };

    let mut alpha = vec![0.0f64; n];
    // u_i = sum_j alpha_j y_j K_ij (decision values without bias).
    let mut u = vec![0.0f64; n];
    let mut cache = RowCache::new(n);
    let mut iterations = 0usize;

    loop {
        // Maximal violating pair over the candidate values y_i - u_i.
        let mut m_val = f64::NEG_INFINITY;
        let mut m_idx = usize::MAX;
        let mut low_val = f64::INFINITY;
        let mut low_idx = usize::MAX;
        for i in 0..n {
            let cand = labels[i] - u[i];
            let in_up = (labels[i] > 0.0 && alpha[i] < box_of(i)) || (labels[i] < 0.0 && alpha[i] > 0.0);
            let in_low = (labels[i] > 0.0 && alpha[i] > 0.0) || (labels[i] < 0.0 && alpha[i] < box_of(i));
            if in_up && cand > m_val {
                m_val = cand;
                m_idx = i;
            }
            if in_low && cand < low_val {
                low_val = cand;
                low_idx = i;
            }
        }
        if m_idx == usize::MAX || low_idx == usize::MAX || m_val - low_val <= params.tol {
            break;
        }
        if iterations >= params.max_iter {
            return Err(SvmError::NoConvergence(params.max_iter));
        }
        iterations += 1;

        let (i, j) = (m_idx, low_idx);
        let (yi, yj) = (labels[i], labels[j]);
        let (ci, cj) = (box_of(i), box_of(j));
        let row_i = cache.get(i, &points, gamma).to_vec();
        let row_j = cache.get(j, &points, gamma);

        let eta = (row_i[i] + row_j[j] - 2.0 * row_i[j]).max(1e-12);
        let e_i = u[i] - yi;
        let e_j = u[j] - yj;
        let (lo, hi) = if (yi - yj).abs() > 0.5 {
            ((alpha[j] - alpha[i]).max(0.0), cj.min(ci + alpha[j] - alpha[i]))
        } else {
            ((alpha[i] + alpha[j] - ci).max(0.0), cj.min(alpha[i] + alpha[j]))
        };
        let snap = |v: f64, c: f64| {
            // Keep alphas exactly on their bounds so the movable-set tests
            // stay exact and pairs cannot get stuck on float dust.
            if v < 1e-12 * c.max(1.0) {
                0.0
            } else if v > c - 1e-12 * c.max(1.0) {
                c
            } else {
                v
            }
        };
        let aj_new = snap((alpha[j] + yj * (e_i - e_j) / eta).clamp(lo, hi), cj);
        let delta_j = aj_new - alpha[j];
        if delta_j == 0.0 {
            break; // safety: a selected pair with no room left
        }
        let ai_new = snap((alpha[i] - yi * yj * delta_j).clamp(0.0, ci), ci);
        let delta_i = ai_new - alpha[i];
        alpha[i] = ai_new;
        alpha[j] = aj_new;

        for t in 0..n {
            u[t] += delta_i * yi * row_i[t] + delta_j * yj * row_j[t];
        }
    }

    // Bias: midpoint of the feasible interval [max over "up" candidates,
    // min over "low" candidates]; bounds the worst per-point violation by
    // half the stopping tolerance.
    let mut up_max = f64::NEG_INFINITY;
    let mut low_min = f64::INFINITY;
    for i in 0..n {
        let cand = labels[i] - u[i];
        let in_up = (labels[i] > 0.0 && alpha[i] < box_of(i)) || (labels[i] < 0.0 && alpha[i] > 0.0);
        let in_low = (labels[i] > 0.0 && alpha[i] > 0.0) || (labels[i] < 0.0 && alpha[i] < box_of(i));
        if in_up {
            up_max = up_max.max(cand);
        }
        if in_low {
            low_min = low_min.min(cand);
        }
    }
    let bias = match (up_max.is_finite(), low_min.is_finite()) {
        (true, true) => (up_max + low_min) / 2.0,
        (true, false) => up_max,
        (false, true) => low_min,
        (false, false) => 0.0,
    };

    // KKT residual over all training points at the chosen bias.
    let mut kkt_residual = 0.0f64;
    for i in 0..n {
        let margin = labels[i] * (u[i] + bias);
        let r = if alpha[i] <= 0.0 {
            1.0 - margin
        } else if alpha[i] >= box_of(i) {
            margin - 1.0
        } else {
            (margin - 1.0).abs()
        };
        kkt_residual = kkt_residual.max(r.max(0.0));
    }

    let mut support_points = Vec::new();
    let mut alphas = Vec::new();
    for i in 0..n {
        if alpha[i] > 1e-12 {
            support_points.push(points[i]);
            alphas.push(alpha[i] * labels[i]);
        }
    }

    Ok(SvmFit {
        model: RbfSvmModel {
            support_points,
            alphas,
            bias,
            gamma,
            c: params.c,
            c_bounds: (c_pos, c_neg),
            scaler,
        },
        iterations,
        kkt_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_cluster(rng: &mut ChaCha8Rng, center: [f64; 2], sigma: f64, n: usize) -> Vec<[f64; 2]> {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| {
                [
                    center[0] + normal.sample(rng),
                    center[1] + normal.sample(rng),
                ]
            })
            .collect()
    }

    #[test]
    fn separates_two_clusters_against_nearest_centroid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c_a = [39.95, -75.16];
        let c_b = [40.45, -75.16];
        let valid = gaussian_cluster(&mut rng, c_a, 0.01, 100);
        let impostor = gaussian_cluster(&mut rng, c_b, 0.01, 100);
        let fit = train_svm(&valid, &impostor, &SvmParams::default()).unwrap();

        let mut agree = 0usize;
        let mut correct = 0usize;
        let total = valid.len() + impostor.len();
        for (p, want) in valid.iter().map(|p| (p, 1.0)).chain(impostor.iter().map(|p| (p, -1.0))) {
            let svm_label = if fit.model.decision_score(*p) >= 0.0 { 1.0 } else { -1.0 };
            let da = sq_dist(*p, c_a);
            let db = sq_dist(*p, c_b);
            let oracle_label = if da <= db { 1.0 } else { -1.0 };
            if svm_label == oracle_label {
                agree += 1;
            }
            if svm_label == want {
                correct += 1;
            }
        }
        assert!(correct as f64 / total as f64 >= 0.99, "training accuracy {}", correct);
        assert!(agree as f64 / total as f64 >= 0.99, "centroid-oracle agreement {}", agree);
        assert!(fit.kkt_residual <= 1e-3 + 1e-9, "kkt residual {}", fit.kkt_residual);
    }

    #[test]
    fn symmetric_pair_has_zero_score_at_origin() {
        let valid = vec![[0.5, 0.5]];
        let impostor = vec![[-0.5, -0.5]];
        let fit = train_svm(&valid, &impostor, &SvmParams::default()).unwrap();
        let s = fit.model.decision_score([0.0, 0.0]);
        assert!(s.abs() <= 1e-6, "score at origin {}", s);
    }

    #[test]
    fn swapping_class_labels_negates_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gaussian_cluster(&mut rng, [1.0, 2.0], 0.2, 30);
        let b = gaussian_cluster(&mut rng, [2.0, 1.0], 0.2, 30);
        // The RBF decision function is unique at the exact dual optimum, so
        // a tight tolerance pins both runs to the same function.
        let params = SvmParams {
            tol: 1e-9,
            ..SvmParams::default()
        };
        let fit_ab = train_svm(&a, &b, &params).unwrap();
        let fit_ba = train_svm(&b, &a, &params).unwrap();
        for probe in [[1.0, 2.0], [2.0, 1.0], [1.5, 1.5], [0.0, 0.0], [2.5, 2.5]] {
            let s1 = fit_ab.model.decision_score(probe);
            let s2 = fit_ba.model.decision_score(probe);
            assert!(
                (s1 + s2).abs() <= 1e-6,
                "scores not antisymmetric at {:?}: {} vs {}",
                probe,
                s1,
                s2
            );
        }
    }

    #[test]
    fn degenerate_data_is_an_error() {
        let valid = vec![[1.0, 1.0], [1.0, 1.0]];
        let impostor = vec![[1.0, 1.0]];
        assert!(matches!(
            train_svm(&valid, &impostor, &SvmParams::default()),
            Err(SvmError::Degenerate)
        ));
    }

    #[test]
    fn empty_class_is_an_error() {
        assert!(matches!(
            train_svm(&[], &[[0.0, 0.0]], &SvmParams::default()),
            Err(SvmError::EmptyClass)
        ));
    }

    #[test]
    fn alphas_respect_weighted_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Overlapping clusters with imbalance force alphas to the bounds.
        let valid = gaussian_cluster(&mut rng, [0.0, 0.0], 1.0, 15);
        let impostor = gaussian_cluster(&mut rng, [0.3, 0.3], 1.0, 60);
        let fit = train_svm(&valid, &impostor, &SvmParams::default()).unwrap();
        let (c_pos, c_neg) = fit.model.c_bounds;
        for &a in &fit.model.alphas {
            let bound = if a > 0.0 { c_pos } else { c_neg };
            assert!(a.abs() <= bound + 1e-9, "alpha {} exceeds box {}", a, bound);
        }
    }

    #[test]
    fn kkt_residual_within_tolerance_on_random_problems() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let valid = gaussian_cluster(&mut rng, [0.0, 0.0], 0.5, 40);
            let impostor = gaussian_cluster(&mut rng, [1.0, 1.0], 0.5, 80);
            let fit = train_svm(&valid, &impostor, &SvmParams::default()).unwrap();
            assert!(
                fit.kkt_residual <= 1e-3 + 1e-9,
                "seed {}: kkt residual {}",
                seed,
                fit.kkt_residual
            );
        }
    }

    #[test]
    fn gamma_heuristics_handle_coincident_points() {
        let pts = vec![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        let gamma = median_heuristic_gamma(&pts).unwrap();
        assert!(gamma.is_finite() && gamma > 0.0);
        assert_eq!(median_heuristic_gamma(&[[2.0, 2.0], [2.0, 2.0]]), None);
        let fine = quantile_gamma(&pts, 0.1).unwrap();
        assert!(fine.is_finite() && fine > 0.0);
    }

    #[test]
    fn lower_quantile_gives_wider_gamma() {
        // Two tight clusters far apart: the low quantile picks the
        // within-cluster scale, the median the between-cluster scale.
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push([i as f64 * 0.01, 0.0]);
            pts.push([100.0 + i as f64 * 0.01, 0.0]);
        }
        let fine = quantile_gamma(&pts, 0.1).unwrap();
        let coarse = median_heuristic_gamma(&pts).unwrap();
        assert!(fine > coarse * 100.0, "fine {fine}, coarse {coarse}");
    }
}
