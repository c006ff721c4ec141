//! Run the full evaluation protocol on a small synthetic population and
//! print the per-modality error table and the fused/ablation EER table.
//!
//!   cargo run --release -p vigil-core --example synthetic_eval -- [users] [hours] [overlap] [seed]

use std::time::Instant;

use vigil_core::evaluation::{run_evaluation, HarnessConfig, Variant};
use vigil_core::synth::{build_population, generate_events, overlap_knob, SynthConfig};
use vigil_core::Modality;

fn main() {
    let mut args = std::env::args().skip(1);
    let users: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let hours: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(24.0);
    let overlap: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.3);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let start = Instant::now();
    let population = overlap_knob(
        build_population(SynthConfig::new(users, hours, seed)).expect("population"),
        overlap,
    )
    .expect("overlap");
    let dataset = generate_events(&population);
    let total_events: usize = dataset.values().map(|v| v.len()).sum();
    eprintln!(
        "generated {users} users x {hours} h (overlap {overlap}): {total_events} events in {:?}",
        start.elapsed()
    );

    let cfg = HarnessConfig::default();
    let t_eval = Instant::now();
    let report = run_evaluation(&dataset, &cfg).expect("evaluation");
    eprintln!("evaluation in {:?}", t_eval.elapsed());

    println!("modality\tomega_s\tfar\tfrr");
    for row in &report.individual {
        println!(
            "{}\t{}\t{:.4}\t{:.4}",
            row.modality.tag(),
            row.omega_secs,
            row.far_mean,
            row.frr_mean
        );
    }
    println!();
    println!("variant\tomega_s\teer");
    for &omega in &report.window_sizes_secs {
        for variant in [
            Variant::Full,
            Variant::Only(Modality::Text),
            Variant::Only(Modality::App),
            Variant::Only(Modality::Web),
            Variant::Only(Modality::Location),
        ] {
            if let Some(eer) = report.eer_of(variant, omega) {
                println!("{}\t{}\t{:.4}", variant.label(), omega, eer);
            }
        }
    }
    for notice in report.notices.iter().take(10) {
        eprintln!("notice: {notice}");
    }
    eprintln!("({} notices total)", report.notices.len());
}
