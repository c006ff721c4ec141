//! Diagnose the location pipeline on synthetic data: train one user's
//! verifier exactly as the harness does and print score/probability stats.

use vigil_core::evaluation::{prepare, ROTATION};
use vigil_core::events::{Modality, Payload};
use vigil_core::location::{subsample_impostors, train_location, train_svm, SvmParams};
use vigil_core::synth::{build_population, generate_events, overlap_knob, SynthConfig};

fn main() {
    let population = overlap_knob(
        build_population(SynthConfig::new(6, 12.0, 7)).unwrap(),
        0.3,
    )
    .unwrap();
    let dataset = generate_events(&population);
    let data = prepare(&dataset, Default::default()).unwrap();
    let exp = &ROTATION[0];

    // Collect train-fold location points per user from raw events (prepare's
    // folds are private; recompute from timelines).
    let mut per_user_train: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut per_user_test: Vec<Vec<[f64; 2]>> = Vec::new();
    for user in &data.users {
        let events = &dataset[&user.user_id];
        let timeline = vigil_core::events::compress_idle(events.clone(), Default::default()).unwrap();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for te in timeline.entries() {
            if let Payload::Location { lat, lon } = te.event.payload {
                let fold = user.plan.fold_of(te.active_time);
                if exp.train.contains(&fold) {
                    train.push([lat, lon]);
                } else if fold == exp.test {
                    test.push([lat, lon]);
                }
            }
        }
        let _ = Modality::Location;
        per_user_train.push(train);
        per_user_test.push(test);
    }

    let a = 0usize;
    let valid = &per_user_train[a];
    let mut impostors = Vec::new();
    for (j, pts) in per_user_train.iter().enumerate() {
        if j != a {
            impostors.extend_from_slice(pts);
        }
    }
    println!("valid train fixes: {}, impostor pool: {}", valid.len(), impostors.len());
    println!("user anchors: {:?}", population.users[a].location_anchors);

    let params = SvmParams::default();
    let fit = train_svm(valid, &subsample_impostors(&impostors, valid.len() * 10), &params).unwrap();
    println!(
        "svm: {} SVs, gamma {:.4}, bias {:.4}, kkt {:.2e}, iters {}",
        fit.model.support_points.len(),
        fit.model.gamma,
        fit.model.bias,
        fit.kkt_residual,
        fit.iterations
    );
    let scores_own: Vec<f64> = per_user_test[a].iter().map(|p| fit.model.decision_score(*p)).collect();
    let scores_imp: Vec<f64> = per_user_test[1].iter().map(|p| fit.model.decision_score(*p)).collect();
    println!("raw own-test scores: {:?}", &scores_own[..scores_own.len().min(8)]);
    println!("raw impostor scores: {:?}", &scores_imp[..scores_imp.len().min(8)]);

    let verifier = train_location(valid, &impostors, &params).unwrap();
    println!("platt: a={:.4} b={:.4}", verifier.platt.a, verifier.platt.b);
    let p_own: Vec<f64> = per_user_test[a]
        .iter()
        .map(|p| verifier.genuine_probability(p[0], p[1]))
        .collect();
    let p_imp: Vec<f64> = per_user_test[1]
        .iter()
        .map(|p| verifier.genuine_probability(p[0], p[1]))
        .collect();
    let frr = p_own.iter().filter(|&&p| p < 0.5).count() as f64 / p_own.len().max(1) as f64;
    let far = p_imp.iter().filter(|&&p| p >= 0.5).count() as f64 / p_imp.len().max(1) as f64;
    println!("single-fix test: FRR {frr:.3} ({} fixes), FAR {far:.3} ({} fixes)", p_own.len(), p_imp.len());
    println!("own p: {:?}", &p_own[..p_own.len().min(8)]);
    println!("imp p: {:?}", &p_imp[..p_imp.len().min(8)]);
}
