//! End-to-end checks of the evaluation harness against the reference
//! window-by-window implementations, plus protocol-level properties that
//! need real generated data.

use std::collections::BTreeMap;

use vigil_core::detector::Detector;
use vigil_core::evaluation::{
    characterize, characterize_experiment, prepare, run_evaluation, train_experiment, FoldSlice,
    HarnessConfig, Variant, ROTATION,
};
use vigil_core::events::{compress_idle, ActiveTimeline, IdleConfig, Modality, RawEvent};
use vigil_core::synth::{build_population, generate_events, overlap_knob, SynthConfig};

fn small_dataset(overlap: f64, seed: u64) -> BTreeMap<String, Vec<RawEvent>> {
    let population = overlap_knob(
        build_population(SynthConfig::new(4, 6.0, seed)).unwrap(),
        overlap,
    )
    .unwrap();
    generate_events(&population)
}

fn timelines(dataset: &BTreeMap<String, Vec<RawEvent>>) -> BTreeMap<String, ActiveTimeline> {
    dataset
        .iter()
        .map(|(u, ev)| (u.clone(), compress_idle(ev.clone(), IdleConfig::default()).unwrap()))
        .collect()
}

/// The batched per-event scoring path must agree exactly with the
/// straightforward detector-over-window reference on characterization error
/// estimates, for every modality, user, experiment, and window size probed.
#[test]
fn batched_characterization_matches_reference_path() {
    let dataset = small_dataset(0.3, 11);
    let tls = timelines(&dataset);
    let cfg = HarnessConfig {
        window_sizes_secs: vec![120, 900],
        ..HarnessConfig::default()
    };
    let data = prepare(&dataset, cfg.idle).unwrap();
    let user_ids: Vec<String> = dataset.keys().cloned().collect();

    for exp_idx in [0usize, 3] {
        let exp = &ROTATION[exp_idx];
        let models = train_experiment(&data, exp_idx, &cfg);
        for &omega in &cfg.window_sizes_secs {
            let chars = characterize_experiment(&data, &models, omega, &cfg);
            for (a, user_id) in user_ids.iter().enumerate() {
                // Reference: FoldSlice windows decided by the Detector trait,
                // with the text profile pinned to the harness's tuned theta.
                let plans: BTreeMap<&String, _> = user_ids
                    .iter()
                    .map(|u| (u, vigil_core::evaluation::plan_folds(&tls[u]).unwrap()))
                    .collect();
                let genuine = FoldSlice::new(&tls[user_id], &plans[user_id], exp.characterize);
                let impostors: Vec<FoldSlice<'_>> = user_ids
                    .iter()
                    .filter(|u| *u != user_id)
                    .map(|u| FoldSlice::new(&tls[u], &plans[u], exp.characterize))
                    .collect();

                let outcome = &chars[a];
                assert_eq!(&outcome.user_id, user_id);

                let m = &models.models[a];
                let mut detectors: Vec<(Modality, Box<dyn Detector>)> = Vec::new();
                if let Some(profile) = &m.text {
                    let mut tuned = profile.clone();
                    if let Some(theta) = outcome.theta {
                        tuned.set_theta(theta);
                    }
                    detectors.push((Modality::Text, Box::new(tuned)));
                }
                if let Some(app) = &m.app {
                    detectors.push((Modality::App, Box::new(app.clone())));
                }
                if let Some(web) = &m.web {
                    detectors.push((Modality::Web, Box::new(web.clone())));
                }
                if let Some(loc) = &m.location {
                    detectors.push((Modality::Location, Box::new(loc.clone())));
                }

                for (modality, detector) in &detectors {
                    let reference = characterize(detector.as_ref(), &genuine, &impostors, omega);
                    let fast = outcome.estimates[modality.index()]
                        .unwrap_or_else(|| panic!("{user_id} {modality}: estimate missing"));
                    assert_eq!(
                        (fast.n_genuine, fast.n_impostor),
                        (reference.n_genuine, reference.n_impostor),
                        "{user_id} {modality} omega {omega}: window counts diverge"
                    );
                    assert!(
                        (fast.far - reference.far).abs() < 1e-12
                            && (fast.frr - reference.frr).abs() < 1e-12,
                        "{user_id} {modality} omega {omega}: {}/{} vs {}/{}",
                        fast.far,
                        fast.frr,
                        reference.far,
                        reference.frr
                    );
                }
            }
        }
    }
}

#[test]
fn evaluation_is_deterministic_across_runs() {
    let dataset = small_dataset(0.4, 23);
    let cfg = HarnessConfig {
        window_sizes_secs: vec![300, 1800],
        ..HarnessConfig::default()
    };
    let a = run_evaluation(&dataset, &cfg).unwrap();
    let b = run_evaluation(&dataset, &cfg).unwrap();
    assert_eq!(a.individual.len(), b.individual.len());
    for (x, y) in a.individual.iter().zip(&b.individual) {
        assert_eq!((x.far_mean, x.frr_mean, x.far_std, x.frr_std), (y.far_mean, y.frr_mean, y.far_std, y.frr_std));
    }
    for (x, y) in a.curves.iter().zip(&b.curves) {
        assert_eq!(x.points.len(), y.points.len());
        for (p, q) in x.points.iter().zip(&y.points) {
            assert_eq!((p.far, p.frr), (q.far, q.frr));
        }
    }
    for (x, y) in a.eers.iter().zip(&b.eers) {
        assert_eq!(x.eer.map(|e| e.value), y.eer.map(|e| e.value));
    }
}

/// With every user drawing from one shared profile, no classifier can do
/// better than chance: characterization FAR and FRR land near one half.
#[test]
fn indistinguishable_population_characterizes_at_chance() {
    let population = overlap_knob(
        build_population(SynthConfig::new(8, 12.0, 31)).unwrap(),
        1.0,
    )
    .unwrap();
    let dataset = generate_events(&population);
    let cfg = HarnessConfig::default();
    let data = prepare(&dataset, cfg.idle).unwrap();
    let models = train_experiment(&data, 0, &cfg);
    let chars = characterize_experiment(&data, &models, 600, &cfg);
    for modality in Modality::ALL {
        let mut far_sum = 0.0;
        let mut frr_sum = 0.0;
        let mut n = 0usize;
        for c in &chars {
            if let Some(est) = c.estimates[modality.index()] {
                if est.is_supported() {
                    far_sum += est.far;
                    frr_sum += est.frr;
                    n += 1;
                }
            }
        }
        assert!(n > 0, "{modality}: no supported estimates");
        let far = far_sum / n as f64;
        let frr = frr_sum / n as f64;
        assert!(
            (far - 0.5).abs() <= 0.1 && (frr - 0.5).abs() <= 0.1,
            "{modality}: FAR {far:.3} FRR {frr:.3} not chance-level"
        );
    }
}

/// The fused system never loses to the best ablation by more than the sweep
/// resolution on an easy, disjoint population.
#[test]
fn fusion_dominates_on_disjoint_population() {
    let dataset = small_dataset(0.0, 47);
    let cfg = HarnessConfig {
        window_sizes_secs: vec![600],
        ..HarnessConfig::default()
    };
    let report = run_evaluation(&dataset, &cfg).unwrap();
    let full = report.eer_of(Variant::Full, 600).unwrap();
    assert!(full <= 0.05, "disjoint population should be easy, EER {full}");
}

#[test]
fn report_covers_all_variants_and_windows() {
    let dataset = small_dataset(0.2, 53);
    let cfg = HarnessConfig {
        window_sizes_secs: vec![300, 600],
        ..HarnessConfig::default()
    };
    let report = run_evaluation(&dataset, &cfg).unwrap();
    assert_eq!(report.eers.len(), Variant::ALL.len() * 2);
    assert_eq!(report.individual.len(), Modality::ALL.len() * 2);
    assert_eq!(report.contributions.len(), Modality::ALL.len() * 2);
    // Contribution rows reference the full and leave-one-out variants, which
    // together make the five reported system variants per window size.
    for row in &report.contributions {
        assert!(row.e_full.is_some());
        assert!(row.e_without.is_some());
    }
}
