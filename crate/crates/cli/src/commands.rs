//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::json;

use vigil_core::evaluation::{
    self, characterize_experiment, prepare, run_evaluation, run_evaluation_traced,
    train_experiment, EvalError, ExperimentModels, HarnessConfig, NUM_FOLDS,
};
use vigil_core::events::{ingest_log, write_log, IdleConfig, Modality, RawEvent};
use vigil_core::fusion::UserModels;
use vigil_core::location::{LocationVerifier, SvmParams};
use vigil_core::synth::{build_population, generate_events, overlap_knob, SynthConfig, SynthError};
use vigil_core::text::NGramProfile;

use crate::manifest::{write_atomic, Manifest};
use crate::{CharacterizeArgs, CliError, EvaluateArgs, GenerateArgs, ModelArgs, ReportArgs, TrainArgs};

impl ModelArgs {
    fn harness_config(&self, window_sizes: Vec<i64>, tau_steps: usize, tau_limit: Option<f64>) -> HarnessConfig {
        HarnessConfig {
            window_sizes_secs: window_sizes,
            ngram_n: self.ngram_n,
            top_k: self.top_k,
            epsilon: self.epsilon,
            svm: SvmParams {
                c: self.svm_c,
                gamma: self.svm_gamma,
                ..SvmParams::default()
            },
            idle: IdleConfig {
                threshold_secs: self.idle_threshold_secs,
                cap_secs: self.idle_cap_secs,
            },
            tau_steps,
            tau_limit,
        }
    }

    fn config_json(&self) -> serde_json::Value {
        json!({
            "ngram_n": self.ngram_n,
            "top_k": self.top_k,
            "epsilon": self.epsilon,
            "svm_c": self.svm_c,
            "svm_gamma": self.svm_gamma,
            "idle_threshold_secs": self.idle_threshold_secs,
            "idle_cap_secs": self.idle_cap_secs,
        })
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(CliError::from)
}

fn experiment_index(one_based: usize) -> Result<usize, CliError> {
    if (1..=NUM_FOLDS).contains(&one_based) {
        Ok(one_based - 1)
    } else {
        Err(CliError::Config(format!(
            "--experiment must be 1 through {NUM_FOLDS}, got {one_based}"
        )))
    }
}

fn load_dataset(path: &Path) -> Result<BTreeMap<String, Vec<RawEvent>>, CliError> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening dataset {}", path.display()))
        .map_err(CliError::from)?;
    let parsed = ingest_log(BufReader::new(file)).context("reading dataset")?;
    for err in parsed.errors.iter().take(20) {
        eprintln!("warning: {}: {err}", path.display());
    }
    if parsed.errors.len() > 20 {
        eprintln!("warning: {} malformed records total", parsed.errors.len());
    }
    Ok(parsed.users)
}

fn map_eval_err(err: EvalError) -> CliError {
    match err {
        EvalError::Config(message) => CliError::Config(message),
        EvalError::TooFewUsers(n) => CliError::Config(format!("need at least 2 usable users, got {n}")),
        other => CliError::Failure(other.into()),
    }
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        overlap: args.overlap,
        rate_dispersion: args.rate_dispersion,
        ..SynthConfig::new(args.users, args.hours, args.seed)
    };
    let population = build_population(config.clone())
        .and_then(|p| overlap_knob(p, args.overlap))
        .map_err(|e| match e {
            SynthError::TooFewUsers(_) | SynthError::BadOverlap(_) => CliError::Config(e.to_string()),
        })?;
    let dataset = generate_events(&population);

    ensure_dir(&args.out)?;
    let log_path = args.out.join("events.log");
    let mut buf = Vec::new();
    for events in dataset.values() {
        write_log(&mut buf, events).context("formatting events")?;
    }
    write_atomic(&log_path, &buf)?;

    let mut manifest = Manifest::new(
        "generate",
        json!({
            "users": args.users,
            "hours": args.hours,
            "seed": args.seed,
            "overlap": args.overlap,
            "rate_dispersion": args.rate_dispersion,
            "rates_per_active_hour": {
                "text": config.rates.text,
                "app": config.rates.app,
                "web": config.rates.web,
                "location": config.rates.location,
            },
            "region_center": [config.region_center.0, config.region_center.1],
        }),
    );
    manifest.record_output(&log_path)?;
    manifest.write(&args.out)?;

    let total: usize = dataset.values().map(|v| v.len()).sum();
    eprintln!(
        "wrote {} events for {} users to {}",
        total,
        dataset.len(),
        log_path.display()
    );
    Ok(())
}

fn model_paths(dir: &Path, user_id: &str) -> [(Modality, PathBuf); 4] {
    let base = dir.join(user_id);
    [
        (Modality::Text, base.join("text.model")),
        (Modality::App, base.join("app.model")),
        (Modality::Web, base.join("web.model")),
        (Modality::Location, base.join("location.model")),
    ]
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let exp_idx = experiment_index(args.experiment)?;
    let cfg = args.model.harness_config(vec![60], 201, None);
    cfg.validate().map_err(map_eval_err)?;
    let dataset = load_dataset(&args.dataset)?;
    let data = prepare(&dataset, cfg.idle).map_err(map_eval_err)?;
    let models = train_experiment(&data, exp_idx, &cfg);
    for notice in &models.notices {
        eprintln!("notice: {notice}");
    }

    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new(
        "train",
        json!({
            "experiment": args.experiment,
            "model": args.model.config_json(),
        }),
    );
    manifest.record_input(&args.dataset)?;

    for (user, user_models) in data.users.iter().zip(&models.models) {
        let paths = model_paths(&args.out, &user.user_id);
        ensure_dir(&args.out.join(&user.user_id))?;
        let mut write_model = |path: &Path, body: Vec<u8>| -> Result<(), CliError> {
            write_atomic(path, &body)?;
            manifest.record_output(path)?;
            Ok(())
        };
        if let Some(text) = &user_models.text {
            let mut buf = Vec::new();
            text.write_to(&mut buf).context("writing text model")?;
            write_model(&paths[0].1, buf)?;
        }
        if let Some(app) = &user_models.app {
            let mut buf = Vec::new();
            app.write_to(&mut buf).context("writing app model")?;
            write_model(&paths[1].1, buf)?;
        }
        if let Some(web) = &user_models.web {
            let mut buf = Vec::new();
            web.write_to(&mut buf).context("writing web model")?;
            write_model(&paths[2].1, buf)?;
        }
        if let Some(location) = &user_models.location {
            let mut buf = Vec::new();
            location.write_to(&mut buf).context("writing location model")?;
            write_model(&paths[3].1, buf)?;
        }
    }
    manifest.write(&args.out)?;
    eprintln!("wrote models for {} users to {}", data.users.len(), args.out.display());
    Ok(())
}

fn load_models(
    dir: &Path,
    data: &evaluation::PreparedDataset,
    exp_idx: usize,
) -> Result<ExperimentModels, CliError> {
    let mut models = Vec::with_capacity(data.users.len());
    for user in &data.users {
        let mut m = UserModels::default();
        let paths = model_paths(dir, &user.user_id);
        for (modality, path) in &paths {
            if !path.exists() {
                continue;
            }
            let file = fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))
                .map_err(CliError::from)?;
            let reader = BufReader::new(file);
            match modality {
                Modality::Text => {
                    m.text = Some(
                        NGramProfile::read_from(reader)
                            .with_context(|| format!("parsing {}", path.display()))?,
                    )
                }
                Modality::App => {
                    m.app = Some(
                        vigil_core::entity::EntityModel::read_from(reader)
                            .with_context(|| format!("parsing {}", path.display()))?,
                    )
                }
                Modality::Web => {
                    m.web = Some(
                        vigil_core::entity::EntityModel::read_from(reader)
                            .with_context(|| format!("parsing {}", path.display()))?,
                    )
                }
                Modality::Location => {
                    m.location = Some(
                        LocationVerifier::read_from(reader)
                            .with_context(|| format!("parsing {}", path.display()))?,
                    )
                }
            }
        }
        models.push(m);
    }
    Ok(ExperimentModels {
        experiment_index: exp_idx,
        models,
        notices: Vec::new(),
    })
}

pub fn characterize(args: CharacterizeArgs) -> Result<(), CliError> {
    let exp_idx = experiment_index(args.experiment)?;
    if args.omega_secs <= 0 {
        return Err(CliError::Config("--omega-secs must be positive".into()));
    }
    let cfg = args.model.harness_config(vec![args.omega_secs], 201, None);
    cfg.validate().map_err(map_eval_err)?;
    let dataset = load_dataset(&args.dataset)?;
    let data = prepare(&dataset, cfg.idle).map_err(map_eval_err)?;
    let models = load_models(&args.models, &data, exp_idx)?;
    let outcomes = characterize_experiment(&data, &models, args.omega_secs, &cfg);

    ensure_dir(&args.out)?;
    let mut stats = Vec::new();
    writeln!(
        stats,
        "user\tmodality\tsupported\tp_f\tp_m\tn_genuine\tn_impostor\ttheta"
    )
    .unwrap();
    for outcome in &outcomes {
        for modality in Modality::ALL {
            let Some(est) = outcome.estimates[modality.index()] else {
                continue;
            };
            let theta = match (modality, outcome.theta) {
                (Modality::Text, Some(theta)) => format!("{theta}"),
                _ => ".".to_string(),
            };
            writeln!(
                stats,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{}",
                outcome.user_id,
                modality.tag(),
                est.is_supported(),
                est.far,
                est.frr,
                est.n_genuine,
                est.n_impostor,
                theta
            )
            .unwrap();
        }
    }
    let stats_path = args.out.join("stats.tsv");
    write_atomic(&stats_path, &stats)?;

    // Re-serialize text models with the tuned threshold baked in.
    let tuned_dir = args.out.join("text_tuned");
    ensure_dir(&tuned_dir)?;
    let mut tuned_paths = Vec::new();
    for (user, m) in data.users.iter().zip(&models.models) {
        let (Some(profile), Some(theta)) = (
            &m.text,
            outcomes
                .iter()
                .find(|o| o.user_id == user.user_id)
                .and_then(|o| o.theta),
        ) else {
            continue;
        };
        let mut tuned = profile.clone();
        tuned.set_theta(theta);
        let mut buf = Vec::new();
        tuned.write_to(&mut buf).context("writing tuned text model")?;
        let path = tuned_dir.join(format!("{}.model", user.user_id));
        write_atomic(&path, &buf)?;
        tuned_paths.push(path);
    }

    let mut manifest = Manifest::new(
        "characterize",
        json!({
            "experiment": args.experiment,
            "omega_secs": args.omega_secs,
            "models_dir": args.models.display().to_string(),
            "model": args.model.config_json(),
        }),
    );
    manifest.record_input(&args.dataset)?;
    manifest.record_output(&stats_path)?;
    for path in &tuned_paths {
        manifest.record_output(path)?;
    }
    manifest.write(&args.out)?;
    eprintln!("wrote {}", stats_path.display());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let cfg = args
        .model
        .harness_config(args.window_sizes.clone(), args.tau_steps, args.tau_limit);
    cfg.validate().map_err(map_eval_err)?;
    let dataset = load_dataset(&args.dataset)?;
    ensure_dir(&args.out)?;

    let report = if args.no_traces {
        run_evaluation(&dataset, &cfg).map_err(map_eval_err)?
    } else {
        let tmp = args.out.join("traces.tsv.tmp");
        let file = fs::File::create(&tmp).context("creating traces file")?;
        let mut writer = BufWriter::new(file);
        let report = run_evaluation_traced(&dataset, &cfg, &mut writer).map_err(map_eval_err)?;
        writer.flush().context("flushing traces")?;
        drop(writer);
        fs::rename(&tmp, args.out.join("traces.tsv")).context("renaming traces")?;
        report
    };

    let mut manifest = Manifest::new(
        "evaluate",
        json!({
            "window_sizes_secs": args.window_sizes,
            "tau_steps": args.tau_steps,
            "tau_limit": args.tau_limit,
            "traces": !args.no_traces,
            "model": args.model.config_json(),
        }),
    );
    manifest.record_input(&args.dataset)?;

    let tables: [(&str, fn(&mut Vec<u8>, &evaluation::EvaluationReport) -> std::io::Result<()>); 4] = [
        ("individual.tsv", |w, r| evaluation::report::write_individual_tsv(w, r)),
        ("roc.tsv", |w, r| evaluation::report::write_roc_tsv(w, r)),
        ("eer.tsv", |w, r| evaluation::report::write_eer_tsv(w, r)),
        ("contributions.tsv", |w, r| {
            evaluation::report::write_contributions_tsv(w, r)
        }),
    ];
    for (name, writer) in tables {
        let mut buf = Vec::new();
        writer(&mut buf, &report).context("formatting table")?;
        let path = args.out.join(name);
        write_atomic(&path, &buf)?;
        manifest.record_output(&path)?;
    }

    let mut notices = Vec::new();
    evaluation::report::write_notices(&mut notices, &report).context("formatting notices")?;
    let notices_path = args.out.join("notices.txt");
    write_atomic(&notices_path, &notices)?;
    manifest.record_output(&notices_path)?;
    if !args.no_traces {
        manifest.record_output(&args.out.join("traces.tsv"))?;
    }
    manifest.write(&args.out)?;
    eprintln!(
        "evaluated {} users across {} window sizes; tables in {}",
        report.n_users,
        report.window_sizes_secs.len(),
        args.out.display()
    );
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let eer_path = args.from.join("eer.tsv");
    let individual_path = args.from.join("individual.tsv");
    let contributions_path = args.from.join("contributions.tsv");
    for path in [&eer_path, &individual_path, &contributions_path] {
        if !path.exists() {
            return Err(CliError::Config(format!(
                "{} is missing (is {} an evaluate output directory?)",
                path.display(),
                args.from.display()
            )));
        }
    }

    let read_rows = |path: &Path| -> Result<Vec<Vec<String>>, CliError> {
        let file = fs::File::open(path)
            .with_context(|| format!("opening {}", path.display()))
            .map_err(CliError::from)?;
        let mut rows = Vec::new();
        for line in BufReader::new(file).lines().skip(1) {
            let line = line.map_err(CliError::from)?;
            rows.push(line.split('\t').map(str::to_string).collect());
        }
        Ok(rows)
    };

    println!("== Fused equal error rate by decision window ==");
    println!("{:>10}  {:>10}", "window(s)", "EER");
    for row in read_rows(&eer_path)? {
        if row.first().map(String::as_str) == Some("full") {
            println!("{:>10}  {:>10}", row[1], row[2]);
        }
    }

    println!();
    println!("== Per-modality error rates (mean over users) ==");
    println!(
        "{:>10} {:>10} {:>10} {:>10}",
        "modality", "window(s)", "FAR", "FRR"
    );
    for row in read_rows(&individual_path)? {
        println!("{:>10} {:>10} {:>10} {:>10}", row[0], row[1], row[2], row[4]);
    }

    println!();
    println!("== Relative contribution of each classifier ==");
    println!(
        "{:>10} {:>10} {:>12} {:>12} {:>12}",
        "window(s)", "modality", "E(full)", "E(without)", "C"
    );
    for row in read_rows(&contributions_path)? {
        println!(
            "{:>10} {:>10} {:>12} {:>12} {:>12}",
            row[0], row[1], row[2], row[3], row[4]
        );
    }
    Ok(())
}
