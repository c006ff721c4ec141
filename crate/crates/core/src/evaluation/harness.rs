//! The full experimental protocol: per-user 5-fold rotation, classifier
//! training on the training folds, error characterization (and text
//! threshold tuning) on the characterization fold, then individual and fused
//! evaluation on the test fold with a threshold sweep.
//!
//! Per-event scores (gram presence, entity likelihood ratios, calibrated
//! location log odds) are computed once per (model, data-user, fold) and
//! reused across window sizes; window aggregation then visits each event
//! once per window size. Impostor windows for a user in experiment k come
//! from every other user's fold-k data.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::detector::Vote;
use crate::entity::{extract_entity, train_entity};
use crate::events::{compress_idle, IdleConfig, Modality, Payload, RawEvent};
use crate::fusion::{weight_for, DetectorStats, UserModels, STAT_FLOOR};
use crate::location::{train_location, SvmParams};
use crate::text::{train_text, tune_theta};

use super::folds::{plan_folds, Experiment, FoldPlan, NUM_FOLDS, ROTATION};
use super::metrics::{contribution, eer_from_curve, EerEstimate, ErrorEstimate, RocPoint};
use super::EvalError;

pub const DEFAULT_WINDOW_SIZES_SECS: [i64; 10] =
    [60, 120, 300, 600, 900, 1200, 1500, 1800, 2700, 3600];

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub window_sizes_secs: Vec<i64>,
    pub ngram_n: usize,
    pub top_k: usize,
    pub epsilon: f64,
    pub svm: SvmParams,
    pub idle: IdleConfig,
    /// Number of operating points in the threshold sweep.
    pub tau_steps: usize,
    /// Sweep endpoint; `None` derives a bound that drives FAR from 0 to 1.
    pub tau_limit: Option<f64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            window_sizes_secs: DEFAULT_WINDOW_SIZES_SECS.to_vec(),
            ngram_n: crate::text::DEFAULT_NGRAM_LEN,
            top_k: crate::entity::DEFAULT_TOP_K,
            epsilon: crate::entity::DEFAULT_EPSILON,
            svm: SvmParams::default(),
            idle: IdleConfig::default(),
            tau_steps: 201,
            tau_limit: None,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.window_sizes_secs.is_empty() {
            return Err(EvalError::Config("no window sizes".into()));
        }
        let mut seen = self.window_sizes_secs.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.window_sizes_secs.len() || seen.iter().any(|&w| w <= 0) {
            return Err(EvalError::Config(
                "window sizes must be positive and distinct".into(),
            ));
        }
        if self.ngram_n == 0 {
            return Err(EvalError::Config("n-gram length must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(EvalError::Config("top-k must be at least 1".into()));
        }
        if self.tau_steps < 2 {
            return Err(EvalError::Config("tau sweep needs at least 2 steps".into()));
        }
        Ok(())
    }

    /// The swept a0 grid. The automatic bound exceeds the largest possible
    /// |score| of four clamped detectors, guaranteeing both ROC extremes.
    pub fn tau_grid(&self) -> Vec<f64> {
        let limit = self.tau_limit.unwrap_or_else(|| {
            Modality::ALL.len() as f64 * ((1.0 - STAT_FLOOR) / STAT_FLOOR).ln() + 1.0
        });
        let steps = self.tau_steps;
        (0..steps)
            .map(|j| -limit + 2.0 * limit * j as f64 / (steps - 1) as f64)
            .collect()
    }
}

/// A fused-system variant: the full four-detector portfolio, the
/// leave-one-out ablations, and the single-detector systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Full,
    Without(Modality),
    Only(Modality),
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::Without(Modality::Text),
        Variant::Without(Modality::App),
        Variant::Without(Modality::Web),
        Variant::Without(Modality::Location),
        Variant::Only(Modality::Text),
        Variant::Only(Modality::App),
        Variant::Only(Modality::Web),
        Variant::Only(Modality::Location),
    ];

    pub fn includes(self, modality: Modality) -> bool {
        match self {
            Variant::Full => true,
            Variant::Without(m) => m != modality,
            Variant::Only(m) => m == modality,
        }
    }

    pub fn label(self) -> String {
        match self {
            Variant::Full => "full".to_string(),
            Variant::Without(m) => format!("without_{}", m.tag().to_lowercase()),
            Variant::Only(m) => format!("only_{}", m.tag().to_lowercase()),
        }
    }
}

// --- Prepared dataset -------------------------------------------------------

/// One fold's events split by modality, with entities pre-extracted.
#[derive(Debug, Default, Clone)]
struct FoldData {
    span: (i64, i64),
    text_times: Vec<i64>,
    text_chars: Vec<char>,
    app_times: Vec<i64>,
    app_entities: Vec<String>,
    web_times: Vec<i64>,
    web_entities: Vec<String>,
    loc_times: Vec<i64>,
    loc_points: Vec<[f64; 2]>,
}

#[derive(Debug)]
pub struct PreparedUser {
    pub user_id: String,
    pub plan: FoldPlan,
    pub total_active_secs: i64,
    folds: Vec<FoldData>,
}

/// Dataset after idle compression, fold planning, and per-event entity
/// extraction. Users that cannot be folded are dropped with a notice.
#[derive(Debug)]
pub struct PreparedDataset {
    pub users: Vec<PreparedUser>,
    pub notices: Vec<String>,
}

pub fn prepare(
    dataset: &BTreeMap<String, Vec<RawEvent>>,
    idle: IdleConfig,
) -> Result<PreparedDataset, EvalError> {
    let mut users = Vec::new();
    let mut notices = Vec::new();
    for (user_id, events) in dataset {
        let timeline = match compress_idle(events.clone(), idle) {
            Ok(t) => t,
            Err(e) => {
                notices.push(format!("{user_id}: skipped ({e})"));
                continue;
            }
        };
        let plan = match plan_folds(&timeline) {
            Ok(p) => p,
            Err(e) => {
                notices.push(format!("{user_id}: skipped ({e})"));
                continue;
            }
        };
        let mut folds = vec![FoldData::default(); NUM_FOLDS];
        for (k, fold) in folds.iter_mut().enumerate() {
            fold.span = plan.span(k);
        }
        let mut bad_urls = 0usize;
        for timed in timeline.entries() {
            let fold = &mut folds[plan.fold_of(timed.active_time)];
            let t = timed.active_time;
            match &timed.event.payload {
                Payload::Text(c) => {
                    fold.text_times.push(t);
                    fold.text_chars.push(*c);
                }
                Payload::App(_) | Payload::Web(_) => match extract_entity(&timed.event) {
                    Ok(entity) => {
                        if timed.event.modality() == Modality::App {
                            fold.app_times.push(t);
                            fold.app_entities.push(entity);
                        } else {
                            fold.web_times.push(t);
                            fold.web_entities.push(entity);
                        }
                    }
                    Err(_) => bad_urls += 1,
                },
                Payload::Location { lat, lon } => {
                    fold.loc_times.push(t);
                    fold.loc_points.push([*lat, *lon]);
                }
            }
        }
        if bad_urls > 0 {
            notices.push(format!("{user_id}: {bad_urls} events with unusable entities ignored"));
        }
        users.push(PreparedUser {
            user_id: user_id.clone(),
            plan,
            total_active_secs: timeline.total_active_duration(),
            folds,
        });
    }
    if users.len() < 2 {
        return Err(EvalError::TooFewUsers(users.len()));
    }
    Ok(PreparedDataset { users, notices })
}

// --- Training ---------------------------------------------------------------

#[derive(Debug, Default)]
struct TrainInputs {
    text: String,
    app_counts: BTreeMap<String, u64>,
    web_counts: BTreeMap<String, u64>,
    loc_points: Vec<[f64; 2]>,
}

fn collect_train_inputs(user: &PreparedUser, exp: &Experiment) -> TrainInputs {
    let mut inputs = TrainInputs::default();
    for &k in &exp.train {
        let fold = &user.folds[k];
        inputs.text.extend(&fold.text_chars);
        for e in &fold.app_entities {
            *inputs.app_counts.entry(e.clone()).or_insert(0) += 1;
        }
        for e in &fold.web_entities {
            *inputs.web_counts.entry(e.clone()).or_insert(0) += 1;
        }
        inputs.loc_points.extend_from_slice(&fold.loc_points);
    }
    inputs
}

fn merge_counts(into: &mut BTreeMap<String, u64>, from: &BTreeMap<String, u64>) {
    for (e, c) in from {
        *into.entry(e.clone()).or_insert(0) += c;
    }
}

fn subtract_counts(total: &BTreeMap<String, u64>, own: &BTreeMap<String, u64>) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for (e, &c) in total {
        let rest = c - own.get(e).copied().unwrap_or(0);
        if rest > 0 {
            out.insert(e.clone(), rest);
        }
    }
    out
}

/// All users' models for one experiment of the rotation.
pub struct ExperimentModels {
    pub experiment_index: usize,
    /// Aligned with `PreparedDataset::users`.
    pub models: Vec<UserModels>,
    pub notices: Vec<String>,
}

/// Train the four classifiers for every user on the experiment's training
/// folds. The invalid-class material (entity counts, location fixes) comes
/// from the other users' training folds. Failures disable the affected
/// modality for the user and are reported as notices.
pub fn train_experiment(
    data: &PreparedDataset,
    experiment_index: usize,
    cfg: &HarnessConfig,
) -> ExperimentModels {
    let exp = &ROTATION[experiment_index];
    let inputs: Vec<TrainInputs> = data
        .users
        .par_iter()
        .map(|u| collect_train_inputs(u, exp))
        .collect();

    let mut total_app = BTreeMap::new();
    let mut total_web = BTreeMap::new();
    for input in &inputs {
        merge_counts(&mut total_app, &input.app_counts);
        merge_counts(&mut total_web, &input.web_counts);
    }

    let results: Vec<(UserModels, Vec<String>)> = data
        .users
        .par_iter()
        .enumerate()
        .map(|(i, user)| {
            let mut notices = Vec::new();
            let mut models = UserModels::default();
            let input = &inputs[i];
            let exp_label = experiment_index + 1;

            match train_text(&input.text, cfg.ngram_n) {
                Ok(profile) => models.text = Some(profile),
                Err(e) => notices.push(format!(
                    "{} experiment {}: text disabled ({e})",
                    user.user_id, exp_label
                )),
            }

            let impostor_app = subtract_counts(&total_app, &input.app_counts);
            match train_entity(Modality::App, &input.app_counts, &impostor_app, cfg.top_k, cfg.epsilon) {
                Ok(model) => models.app = Some(model),
                Err(e) => notices.push(format!(
                    "{} experiment {}: app disabled ({e})",
                    user.user_id, exp_label
                )),
            }

            let impostor_web = subtract_counts(&total_web, &input.web_counts);
            match train_entity(Modality::Web, &input.web_counts, &impostor_web, cfg.top_k, cfg.epsilon) {
                Ok(model) => models.web = Some(model),
                Err(e) => notices.push(format!(
                    "{} experiment {}: web disabled ({e})",
                    user.user_id, exp_label
                )),
            }

            let mut impostor_loc = Vec::new();
            for (j, other) in inputs.iter().enumerate() {
                if j != i {
                    impostor_loc.extend_from_slice(&other.loc_points);
                }
            }
            match train_location(&input.loc_points, &impostor_loc, &cfg.svm) {
                Ok(verifier) => models.location = Some(verifier),
                Err(e) => notices.push(format!(
                    "{} experiment {}: location disabled ({e})",
                    user.user_id, exp_label
                )),
            }

            (models, notices)
        })
        .collect();

    let mut models = Vec::with_capacity(results.len());
    let mut notices = Vec::new();
    for (m, n) in results {
        models.push(m);
        notices.extend(n);
    }
    ExperimentModels {
        experiment_index,
        models,
        notices,
    }
}

// --- Per-event scoring ------------------------------------------------------

/// One data-user's fold scored against one model-user's classifiers:
/// everything window aggregation needs, independent of the window size.
struct ScoredFold<'a> {
    fold: &'a FoldData,
    /// Prefix counts of profile hits over n-gram token positions.
    text_prefix: Option<Vec<u32>>,
    app_lr: Option<Vec<Option<f64>>>,
    web_lr: Option<Vec<Option<f64>>>,
    loc_lr: Option<Vec<f64>>,
}

fn score_fold<'a>(models: &UserModels, fold: &'a FoldData, n: usize) -> ScoredFold<'a> {
    let text_prefix = models.text.as_ref().map(|profile| {
        let chars = &fold.text_chars;
        let tokens = chars.len().saturating_sub(n - 1);
        let mut prefix = Vec::with_capacity(tokens + 1);
        prefix.push(0u32);
        let mut gram = String::with_capacity(n * 4);
        for p in 0..tokens {
            gram.clear();
            gram.extend(&chars[p..p + n]);
            prefix.push(prefix[p] + profile.contains(&gram) as u32);
        }
        prefix
    });
    let app_lr = models.app.as_ref().map(|m| {
        fold.app_entities
            .iter()
            .map(|e| m.log_likelihood_ratio(e))
            .collect()
    });
    let web_lr = models.web.as_ref().map(|m| {
        fold.web_entities
            .iter()
            .map(|e| m.log_likelihood_ratio(e))
            .collect()
    });
    let loc_lr = models.location.as_ref().map(|m| {
        fold.loc_points
            .iter()
            .map(|p| m.log_odds(p[0], p[1]))
            .collect()
    });
    ScoredFold {
        fold,
        text_prefix,
        app_lr,
        web_lr,
        loc_lr,
    }
}

fn time_range(times: &[i64], lo: i64, hi: i64) -> (usize, usize) {
    (
        times.partition_point(|&t| t < lo),
        times.partition_point(|&t| t <= hi),
    )
}

/// Raw per-modality window scores; `None` when the modality is silent (or
/// its model is missing).
#[derive(Debug, Clone, Copy, Default)]
struct WindowScores {
    text_coverage: Option<f64>,
    app_lr: Option<f64>,
    web_lr: Option<f64>,
    loc_lr: Option<f64>,
}

fn eval_window(scored: &ScoredFold<'_>, t_now: i64, omega: i64, n: usize) -> WindowScores {
    let lo = t_now - omega;
    let mut out = WindowScores::default();

    if let Some(prefix) = &scored.text_prefix {
        let (s, e) = time_range(&scored.fold.text_times, lo, t_now);
        let count = e - s;
        if count >= n {
            let tokens = count - n + 1;
            let present = prefix[e - n + 1] - prefix[s];
            out.text_coverage = Some(present as f64 / tokens as f64);
        }
    }
    if let Some(lrs) = &scored.app_lr {
        let (s, e) = time_range(&scored.fold.app_times, lo, t_now);
        let mut sum = 0.0;
        let mut any = false;
        for lr in lrs[s..e].iter().flatten() {
            sum += lr;
            any = true;
        }
        out.app_lr = any.then_some(sum);
    }
    if let Some(lrs) = &scored.web_lr {
        let (s, e) = time_range(&scored.fold.web_times, lo, t_now);
        let mut sum = 0.0;
        let mut any = false;
        for lr in lrs[s..e].iter().flatten() {
            sum += lr;
            any = true;
        }
        out.web_lr = any.then_some(sum);
    }
    if let Some(lrs) = &scored.loc_lr {
        let (s, e) = time_range(&scored.fold.loc_times, lo, t_now);
        if e > s {
            out.loc_lr = Some(lrs[s..e].iter().sum());
        }
    }
    out
}

fn decision_points(span: (i64, i64), omega: i64) -> impl Iterator<Item = i64> {
    let (lo, hi) = span;
    (1..).map(move |j| lo + j * omega).take_while(move |t| *t <= hi)
}

// --- Characterization -------------------------------------------------------

/// One user's characterization at one window size: the tuned text threshold
/// and the per-modality error estimates feeding the fusion weights.
#[derive(Debug, Clone)]
pub struct UserCharacterization {
    pub user_id: String,
    pub theta: Option<f64>,
    /// Indexed by `Modality::index()`. `None` when the modality had no
    /// trained model; unsupported estimates (zero windows on either side)
    /// exclude the detector from fusion for this experiment.
    pub estimates: [Option<ErrorEstimate>; 4],
}

impl UserCharacterization {
    pub fn supported(&self, modality: Modality) -> bool {
        self.estimates[modality.index()].map_or(false, |e| e.is_supported())
    }
}

fn characterize_user(
    data: &PreparedDataset,
    models: &UserModels,
    user_index: usize,
    char_fold: usize,
    omega: i64,
    cfg: &HarnessConfig,
    scored_folds: &[ScoredFold<'_>],
) -> UserCharacterization {
    let n = cfg.ngram_n;
    let mut gen_cov = Vec::new();
    let mut imp_cov = Vec::new();
    // accept/total counters per entity-style modality: app, web, loc.
    let mut gen_counts = [[0u32; 2]; 3];
    let mut imp_counts = [[0u32; 2]; 3];

    for (b, scored) in scored_folds.iter().enumerate() {
        let genuine = b == user_index;
        let span = data.users[b].folds[char_fold].span;
        for t_now in decision_points(span, omega) {
            let scores = eval_window(scored, t_now, omega, n);
            if let Some(cov) = scores.text_coverage {
                if genuine {
                    gen_cov.push(cov);
                } else {
                    imp_cov.push(cov);
                }
            }
            for (slot, lr) in [scores.app_lr, scores.web_lr, scores.loc_lr].iter().enumerate() {
                if let Some(lr) = lr {
                    let counts = if genuine { &mut gen_counts } else { &mut imp_counts };
                    counts[slot][0] += (*lr >= 0.0) as u32;
                    counts[slot][1] += 1;
                }
            }
        }
    }

    let theta = tune_theta(&gen_cov, &imp_cov);
    let mut estimates: [Option<ErrorEstimate>; 4] = [None; 4];
    if models.text.is_some() {
        let (far, frr) = match theta {
            Some(theta) => (
                imp_cov.iter().filter(|&&c| c >= theta).count() as f64 / imp_cov.len().max(1) as f64,
                gen_cov.iter().filter(|&&c| c < theta).count() as f64 / gen_cov.len().max(1) as f64,
            ),
            None => (0.0, 0.0),
        };
        estimates[Modality::Text.index()] = Some(ErrorEstimate {
            far,
            frr,
            n_genuine: gen_cov.len(),
            n_impostor: imp_cov.len(),
        });
    }
    for (slot, modality) in [Modality::App, Modality::Web, Modality::Location].into_iter().enumerate() {
        let has_model = match modality {
            Modality::App => models.app.is_some(),
            Modality::Web => models.web.is_some(),
            Modality::Location => models.location.is_some(),
            Modality::Text => unreachable!(),
        };
        if has_model {
            let accepted_imp = imp_counts[slot][0] as usize;
            let n_imp = imp_counts[slot][1] as usize;
            let accepted_gen = gen_counts[slot][0] as usize;
            let n_gen = gen_counts[slot][1] as usize;
            estimates[modality.index()] =
                Some(ErrorEstimate::from_counts(accepted_imp, n_imp, n_gen - accepted_gen, n_gen));
        }
    }

    UserCharacterization {
        user_id: data.users[user_index].user_id.clone(),
        theta,
        estimates,
    }
}

/// Characterize every user of one experiment at one window size (the CLI
/// entry point; `run_evaluation` drives the same code across all omegas).
pub fn characterize_experiment(
    data: &PreparedDataset,
    models: &ExperimentModels,
    omega: i64,
    cfg: &HarnessConfig,
) -> Vec<UserCharacterization> {
    let char_fold = ROTATION[models.experiment_index].characterize;
    data.users
        .par_iter()
        .enumerate()
        .map(|(a, _)| {
            let scored: Vec<ScoredFold<'_>> = data
                .users
                .iter()
                .map(|b| score_fold(&models.models[a], &b.folds[char_fold], cfg.ngram_n))
                .collect();
            characterize_user(data, &models.models[a], a, char_fold, omega, cfg, &scored)
        })
        .collect()
}

// --- Test-fold evaluation ---------------------------------------------------

#[derive(Debug, Clone, Default)]
struct CurveAccum {
    genuine_hist: Vec<u32>,
    impostor_hist: Vec<u32>,
    n_genuine: u32,
    n_impostor: u32,
}

impl CurveAccum {
    fn new(steps: usize) -> CurveAccum {
        CurveAccum {
            genuine_hist: vec![0; steps + 1],
            impostor_hist: vec![0; steps + 1],
            n_genuine: 0,
            n_impostor: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct IndividualTally {
    accepted_impostor: u32,
    n_impostor: u32,
    rejected_genuine: u32,
    n_genuine: u32,
}

/// Everything measured for one (experiment, model-user, window size).
struct OmegaOutcome {
    characterization: UserCharacterization,
    individual: [Option<IndividualTally>; 4],
    curves: Vec<CurveAccum>,
    traces: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_user_at_omega(
    data: &PreparedDataset,
    models: &UserModels,
    user_index: usize,
    experiment_index: usize,
    omega: i64,
    cfg: &HarnessConfig,
    grid: &[f64],
    scored_char: &[ScoredFold<'_>],
    scored_test: &[ScoredFold<'_>],
    trace: bool,
) -> OmegaOutcome {
    let exp = &ROTATION[experiment_index];
    let n = cfg.ngram_n;
    let characterization = characterize_user(data, models, user_index, exp.characterize, omega, cfg, scored_char);

    // Fusion weights per supported modality, for both vote directions.
    let mut weights: [Option<(f64, f64)>; 4] = [None; 4];
    for modality in Modality::ALL {
        if characterization.supported(modality) {
            let est = characterization.estimates[modality.index()].unwrap();
            let stats = DetectorStats::new(modality.tag(), est.far, est.frr);
            weights[modality.index()] = Some((
                weight_for(&stats, Vote::Accept),
                weight_for(&stats, Vote::Reject),
            ));
        }
    }
    let theta = characterization.theta.unwrap_or(crate::text::DEFAULT_THETA);

    let mut individual: [Option<IndividualTally>; 4] = [
        models.text.as_ref().map(|_| IndividualTally::default()),
        models.app.as_ref().map(|_| IndividualTally::default()),
        models.web.as_ref().map(|_| IndividualTally::default()),
        models.location.as_ref().map(|_| IndividualTally::default()),
    ];
    let mut curves = vec![CurveAccum::new(grid.len()); Variant::ALL.len()];
    let mut traces = Vec::new();

    for (b, scored) in scored_test.iter().enumerate() {
        let genuine = b == user_index;
        let span = data.users[b].folds[exp.test].span;
        for t_now in decision_points(span, omega) {
            let scores = eval_window(scored, t_now, omega, n);
            let votes: [Option<Vote>; 4] = [
                scores.text_coverage.map(|c| if c >= theta { Vote::Accept } else { Vote::Reject }),
                scores.app_lr.map(|lr| if lr >= 0.0 { Vote::Accept } else { Vote::Reject }),
                scores.web_lr.map(|lr| if lr >= 0.0 { Vote::Accept } else { Vote::Reject }),
                scores.loc_lr.map(|lr| if lr >= 0.0 { Vote::Accept } else { Vote::Reject }),
            ];

            for (m, vote) in votes.iter().enumerate() {
                if let (Some(tally), Some(vote)) = (&mut individual[m], vote) {
                    if genuine {
                        tally.n_genuine += 1;
                        tally.rejected_genuine += (*vote == Vote::Reject) as u32;
                    } else {
                        tally.n_impostor += 1;
                        tally.accepted_impostor += (*vote == Vote::Accept) as u32;
                    }
                }
            }

            for (v, variant) in Variant::ALL.iter().enumerate() {
                let mut score = 0.0;
                let mut fired = false;
                for modality in Modality::ALL {
                    let m = modality.index();
                    if !variant.includes(modality) {
                        continue;
                    }
                    if let (Some(vote), Some((w_acc, w_rej))) = (votes[m], weights[m]) {
                        score += match vote {
                            Vote::Accept => w_acc,
                            Vote::Reject => -w_rej,
                        };
                        fired = true;
                    }
                }
                if !fired {
                    continue;
                }
                // Accepted iff a0 > -score: bucket by the first grid index
                // past the flip point.
                let idx = grid.partition_point(|&a0| a0 <= -score);
                let accum = &mut curves[v];
                if genuine {
                    accum.genuine_hist[idx] += 1;
                    accum.n_genuine += 1;
                } else {
                    accum.impostor_hist[idx] += 1;
                    accum.n_impostor += 1;
                }
            }

            if trace {
                traces.push(trace_line(
                    &data.users[user_index].user_id,
                    &data.users[b].user_id,
                    experiment_index,
                    omega,
                    t_now,
                    genuine,
                    &votes,
                    &weights,
                ));
            }
        }
    }

    OmegaOutcome {
        characterization,
        individual,
        curves,
        traces,
    }
}

#[allow(clippy::too_many_arguments)]
fn trace_line(
    model_user: &str,
    data_user: &str,
    experiment_index: usize,
    omega: i64,
    t_now: i64,
    genuine: bool,
    votes: &[Option<Vote>; 4],
    weights: &[Option<(f64, f64)>; 4],
) -> String {
    use std::fmt::Write as _;
    let mut line = String::with_capacity(96);
    let _ = write!(
        line,
        "{model_user}\t{}\t{omega}\t{t_now}\t{data_user}\t{}",
        experiment_index + 1,
        if genuine { "genuine" } else { "impostor" }
    );
    let mut score = 0.0;
    let mut fired = false;
    for m in 0..4 {
        match (votes[m], weights[m]) {
            (Some(vote), Some((w_acc, w_rej))) => {
                let w = match vote {
                    Vote::Accept => w_acc,
                    Vote::Reject => w_rej,
                };
                score += w * vote.sign();
                fired = true;
                let _ = write!(line, "\t{}\t{w:.4}", vote.symbol());
            }
            (Some(vote), None) => {
                let _ = write!(line, "\t{}\t.", vote.symbol());
            }
            _ => line.push_str("\t.\t."),
        }
    }
    if fired {
        let global = if score > 0.0 { "+1" } else { "-1" };
        let _ = write!(line, "\t{score:.4}\t{global}");
    } else {
        line.push_str("\t.\tabstain");
    }
    line
}

// --- Aggregation ------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct IndividualRow {
    pub modality: Modality,
    pub omega_secs: i64,
    pub far_mean: f64,
    pub far_std: f64,
    pub frr_mean: f64,
    pub frr_std: f64,
    pub n_users: usize,
}

#[derive(Debug, Clone)]
pub struct CurveRow {
    pub variant: Variant,
    pub omega_secs: i64,
    pub points: Vec<RocPoint>,
    pub n_users: usize,
}

#[derive(Debug, Clone)]
pub struct EerRow {
    pub variant: Variant,
    pub omega_secs: i64,
    pub eer: Option<EerEstimate>,
    pub n_users: usize,
}

#[derive(Debug, Clone)]
pub struct ContributionRow {
    pub omega_secs: i64,
    pub modality: Modality,
    pub e_full: Option<f64>,
    pub e_without: Option<f64>,
    pub contribution: Option<f64>,
}

/// Everything the protocol measures, ready for the report writers.
#[derive(Debug)]
pub struct EvaluationReport {
    pub window_sizes_secs: Vec<i64>,
    pub individual: Vec<IndividualRow>,
    pub curves: Vec<CurveRow>,
    pub eers: Vec<EerRow>,
    pub contributions: Vec<ContributionRow>,
    pub notices: Vec<String>,
    pub n_users: usize,
}

impl EvaluationReport {
    pub fn eer_of(&self, variant: Variant, omega_secs: i64) -> Option<f64> {
        self.eers
            .iter()
            .find(|r| r.variant == variant && r.omega_secs == omega_secs)
            .and_then(|r| r.eer.map(|e| e.value))
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Run the full five-experiment rotation across every window size.
pub fn run_evaluation(
    dataset: &BTreeMap<String, Vec<RawEvent>>,
    cfg: &HarnessConfig,
) -> Result<EvaluationReport, EvalError> {
    run_evaluation_impl(dataset, cfg, None)
}

/// Same, additionally streaming per-window decision traces (local decisions,
/// weights, fused score and global decision at a0 = 0) to `sink`.
pub fn run_evaluation_traced(
    dataset: &BTreeMap<String, Vec<RawEvent>>,
    cfg: &HarnessConfig,
    sink: &mut dyn Write,
) -> Result<EvaluationReport, EvalError> {
    run_evaluation_impl(dataset, cfg, Some(sink))
}

fn run_evaluation_impl(
    dataset: &BTreeMap<String, Vec<RawEvent>>,
    cfg: &HarnessConfig,
    mut trace_sink: Option<&mut dyn Write>,
) -> Result<EvaluationReport, EvalError> {
    cfg.validate()?;
    let data = prepare(dataset, cfg.idle)?;
    let grid = cfg.tau_grid();
    let n_users = data.users.len();
    let mut notices = data.notices.clone();

    if let Some(sink) = trace_sink.as_deref_mut() {
        writeln!(
            sink,
            "model_user\texperiment\tomega_secs\tt_now\tdata_user\ttruth\
             \ttext_u\ttext_w\tapp_u\tapp_w\tweb_u\tweb_w\tlocation_u\tlocation_w\tscore\tglobal"
        )?;
    }

    // outcomes[experiment][user][omega]
    let mut outcomes: Vec<Vec<Vec<OmegaOutcome>>> = Vec::with_capacity(NUM_FOLDS);
    for e in 0..NUM_FOLDS {
        let experiment = train_experiment(&data, e, cfg);
        notices.extend(experiment.notices.iter().cloned());
        let exp = &ROTATION[e];
        let trace = trace_sink.is_some();

        let per_user: Vec<Vec<OmegaOutcome>> = (0..n_users)
            .into_par_iter()
            .map(|a| {
                let models = &experiment.models[a];
                let scored_char: Vec<ScoredFold<'_>> = data
                    .users
                    .iter()
                    .map(|b| score_fold(models, &b.folds[exp.characterize], cfg.ngram_n))
                    .collect();
                let scored_test: Vec<ScoredFold<'_>> = data
                    .users
                    .iter()
                    .map(|b| score_fold(models, &b.folds[exp.test], cfg.ngram_n))
                    .collect();
                cfg.window_sizes_secs
                    .iter()
                    .map(|&omega| {
                        evaluate_user_at_omega(
                            &data, models, a, e, omega, cfg, &grid, &scored_char, &scored_test, trace,
                        )
                    })
                    .collect()
            })
            .collect();

        if let Some(sink) = trace_sink.as_deref_mut() {
            for per_omega in &per_user {
                for outcome in per_omega {
                    for line in &outcome.traces {
                        writeln!(sink, "{line}")?;
                    }
                }
            }
        }
        outcomes.push(per_user);
    }

    // Unsupported-detector notices (deterministic order).
    for (e, per_user) in outcomes.iter().enumerate() {
        for (a, per_omega) in per_user.iter().enumerate() {
            for (w, outcome) in per_omega.iter().enumerate() {
                for modality in Modality::ALL {
                    let est = outcome.characterization.estimates[modality.index()];
                    if est.is_some() && !outcome.characterization.supported(modality) {
                        notices.push(format!(
                            "{} experiment {} omega {}s: {} unsupported (no scorable characterization windows)",
                            data.users[a].user_id,
                            e + 1,
                            cfg.window_sizes_secs[w],
                            modality.tag().to_lowercase()
                        ));
                    }
                }
            }
        }
    }

    // Per-modality individual error rates: per user, average over
    // experiments; report mean and standard deviation across users.
    let mut individual = Vec::new();
    for modality in Modality::ALL {
        let m = modality.index();
        for (w, &omega) in cfg.window_sizes_secs.iter().enumerate() {
            let mut far_users = Vec::new();
            let mut frr_users = Vec::new();
            for a in 0..n_users {
                let mut fars = Vec::new();
                let mut frrs = Vec::new();
                for e in 0..NUM_FOLDS {
                    if let Some(t) = &outcomes[e][a][w].individual[m] {
                        if t.n_impostor > 0 {
                            fars.push(t.accepted_impostor as f64 / t.n_impostor as f64);
                        }
                        if t.n_genuine > 0 {
                            frrs.push(t.rejected_genuine as f64 / t.n_genuine as f64);
                        }
                    }
                }
                if !fars.is_empty() {
                    far_users.push(fars.iter().sum::<f64>() / fars.len() as f64);
                }
                if !frrs.is_empty() {
                    frr_users.push(frrs.iter().sum::<f64>() / frrs.len() as f64);
                }
            }
            let (far_mean, far_std) = mean_and_std(&far_users);
            let (frr_mean, frr_std) = mean_and_std(&frr_users);
            individual.push(IndividualRow {
                modality,
                omega_secs: omega,
                far_mean,
                far_std,
                frr_mean,
                frr_std,
                n_users: far_users.len().min(frr_users.len()),
            });
        }
    }

    // Fused ROC curves: per user, prefix-sum the histograms into FAR/FRR at
    // each grid point, average over that user's supported experiments, then
    // average across users with equal weight.
    let mut curves = Vec::new();
    let mut eers = Vec::new();
    for (v, &variant) in Variant::ALL.iter().enumerate() {
        for (w, &omega) in cfg.window_sizes_secs.iter().enumerate() {
            let mut user_far: Vec<Vec<f64>> = Vec::new();
            let mut user_frr: Vec<Vec<f64>> = Vec::new();
            for a in 0..n_users {
                let mut far_acc = vec![0.0f64; grid.len()];
                let mut frr_acc = vec![0.0f64; grid.len()];
                let mut supported_exps = 0usize;
                for e in 0..NUM_FOLDS {
                    let accum = &outcomes[e][a][w].curves[v];
                    if accum.n_genuine == 0 || accum.n_impostor == 0 {
                        continue;
                    }
                    supported_exps += 1;
                    let mut acc_imp = 0u32;
                    let mut acc_gen = 0u32;
                    for j in 0..grid.len() {
                        acc_imp += accum.impostor_hist[j];
                        acc_gen += accum.genuine_hist[j];
                        far_acc[j] += acc_imp as f64 / accum.n_impostor as f64;
                        frr_acc[j] += (accum.n_genuine - acc_gen) as f64 / accum.n_genuine as f64;
                    }
                }
                if supported_exps > 0 {
                    for j in 0..grid.len() {
                        far_acc[j] /= supported_exps as f64;
                        frr_acc[j] /= supported_exps as f64;
                    }
                    user_far.push(far_acc);
                    user_frr.push(frr_acc);
                }
            }
            let n_curve_users = user_far.len();
            if n_curve_users == 0 {
                eers.push(EerRow {
                    variant,
                    omega_secs: omega,
                    eer: None,
                    n_users: 0,
                });
                continue;
            }
            let points: Vec<RocPoint> = (0..grid.len())
                .map(|j| {
                    let far = user_far.iter().map(|u| u[j]).sum::<f64>() / n_curve_users as f64;
                    let frr = user_frr.iter().map(|u| u[j]).sum::<f64>() / n_curve_users as f64;
                    RocPoint { a0: grid[j], far, frr }
                })
                .collect();
            let eer = eer_from_curve(&points);
            curves.push(CurveRow {
                variant,
                omega_secs: omega,
                points,
                n_users: n_curve_users,
            });
            eers.push(EerRow {
                variant,
                omega_secs: omega,
                eer,
                n_users: n_curve_users,
            });
        }
    }

    // Leave-one-out contributions at the equal-error operating point of each
    // system variant.
    let eer_value = |variant: Variant, omega: i64| {
        eers.iter()
            .find(|r| r.variant == variant && r.omega_secs == omega)
            .and_then(|r| r.eer.map(|e| e.value))
    };
    let mut contributions = Vec::new();
    for &omega in &cfg.window_sizes_secs {
        for modality in Modality::ALL {
            let e_full = eer_value(Variant::Full, omega);
            let e_without = eer_value(Variant::Without(modality), omega);
            let c = match (e_full, e_without) {
                (Some(full), Some(without)) => contribution(full, without),
                _ => None,
            };
            contributions.push(ContributionRow {
                omega_secs: omega,
                modality,
                e_full,
                e_without,
                contribution: c,
            });
        }
    }

    Ok(EvaluationReport {
        window_sizes_secs: cfg.window_sizes_secs.clone(),
        individual,
        curves,
        eers,
        contributions,
        notices,
        n_users,
    })
}
