use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use nodegen::finetune::{
    evaluate, fit_baseline, fuse_sessions, predictions, run_session, save_session, session_seed,
    Baseline, SessionSummary,
};
use nodegen::generation::{greedy_generate, save_generated, GenerationConfig, GenerationInputs};
use nodegen::graph::{read_features, save_edges, save_features, save_labels, save_matrix};
use nodegen::harness::{run_experiment_on, split_labels, write_report, ExperimentConfig, Split};
use nodegen::smoothing::smooth;
use nodegen::{verify, Dataset, Error};

#[derive(Debug, Parser)]
#[command(name = "nodegen", version, about = "Virtual-node generation for sparsely labeled graphs")]
struct Cli {
    /// JSON experiment config; defaults apply to every missing field.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured SBM dataset as edges.tsv, features.csv and labels.tsv.
    Synth,
    /// Smooth the features over the graph and write embedding.csv.
    Embed,
    /// Fit the baseline on a trial's split and write one session's generated nodes.
    Generate {
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, default_value_t = 0)]
        session: usize,
    },
    /// Run every session of a trial and write per-session and fused outputs.
    Finetune {
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Accuracy of a probability matrix (or of the baseline) on a trial's test set.
    Eval {
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// CSV with one row of class probabilities per node.
        #[arg(long, value_name = "PATH")]
        probabilities: Option<PathBuf>,
    },
    /// Full multi-trial experiment; writes report.json and summary.csv.
    Run,
    /// Run the built-in property suites.
    Selftest,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Selftest,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "warn"
    } else {
        "info"
    }))
    .init();

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Selftest) => ExitCode::from(3),
    }
}

fn dispatch(cli: &Cli) -> std::result::Result<(), Failure> {
    if let Command::Selftest = cli.command {
        return selftest(cli.quiet);
    }
    let config = load_config(cli).map_err(Failure::Config)?;
    let base = cli.config.as_deref().and_then(Path::parent);
    let dataset = config
        .dataset
        .load(base)
        .context("loading dataset")
        .map_err(Failure::from)?;
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating {}", cli.out.display()))
        .map_err(Failure::Runtime)?;
    let out = cli.out.as_path();
    let result = match cli.command {
        Command::Synth => synth(&dataset, out),
        Command::Embed => embed(&dataset, &config, out),
        Command::Generate { trial, session } => generate(&dataset, &config, trial, session, out),
        Command::Finetune { trial } => finetune(&dataset, &config, trial, out),
        Command::Eval {
            trial,
            ref probabilities,
        } => eval(&dataset, &config, trial, probabilities.as_deref()),
        Command::Run => return run(&dataset, &config, out),
        Command::Selftest => unreachable!("handled above"),
    };
    result.map_err(Failure::from)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn synth(dataset: &Dataset, out: &Path) -> Result<()> {
    save_edges(&dataset.graph, out.join("edges.tsv"))?;
    save_features(&dataset.features, out.join("features.csv"))?;
    save_labels(&dataset.labels, out.join("labels.tsv"))?;
    info!(
        "wrote {} nodes, {} edges to {}",
        dataset.graph.node_count(),
        dataset.graph.edge_count(),
        out.display()
    );
    Ok(())
}

fn embed(dataset: &Dataset, config: &ExperimentConfig, out: &Path) -> Result<()> {
    let h = smooth(&dataset.graph, &dataset.features, &config.smoothing)?;
    save_matrix(h.matrix().view(), out.join("embedding.csv"))?;
    info!("wrote {}×{} embedding", h.rows(), h.dim());
    Ok(())
}

fn trial_baseline(dataset: &Dataset, config: &ExperimentConfig, trial: usize) -> Result<(Split, Baseline)> {
    let split = split_labels(&dataset.labels, config.label_fraction, config.trial_seed(trial))?;
    let baseline = fit_baseline(&dataset.graph, &dataset.features, &split.train, &config.models())?;
    Ok((split, baseline))
}

fn truth(dataset: &Dataset) -> Vec<usize> {
    (0..dataset.graph.node_count())
        .map(|i| dataset.labels.label(i).unwrap_or(usize::MAX))
        .collect()
}

fn generate(dataset: &Dataset, config: &ExperimentConfig, trial: usize, session: usize, out: &Path) -> Result<()> {
    let (split, baseline) = trial_baseline(dataset, config, trial)?;
    let inputs = GenerationInputs {
        graph: &dataset.graph,
        embedding: &baseline.embedding,
        labels: &split.train,
        confidence: &baseline.confidence,
        classifier: &baseline.classifier,
        link: &baseline.link,
        params: config.smoothing,
    };
    let generation = GenerationConfig {
        seed: session_seed(config.trial_seed(trial), session),
        ..config.generation
    };
    let outcome = greedy_generate(&inputs, &generation)?;
    save_generated(&outcome.nodes, out.join("generated.tsv"))?;
    info!(
        "generated {} nodes ({} descent steps, {} targets pruned)",
        outcome.nodes.len(),
        outcome.descent_steps,
        outcome.pruned.len()
    );
    Ok(())
}

fn finetune(dataset: &Dataset, config: &ExperimentConfig, trial: usize, out: &Path) -> Result<()> {
    let (split, baseline) = trial_baseline(dataset, config, trial)?;
    let truth = truth(dataset);
    let models = config.models();
    let mut sessions = Vec::with_capacity(config.sessions);
    for k in 0..config.sessions {
        let seed = session_seed(config.trial_seed(trial), k);
        let start = std::time::Instant::now();
        let result = run_session(
            &dataset.graph,
            &dataset.features,
            &split.train,
            &baseline,
            &models,
            &config.generation,
            seed,
        )?;
        let accuracy = evaluate(&predictions(&result.probabilities), &truth, &split.test)
            .ok()
            .map(|e| e.accuracy);
        let summary = SessionSummary {
            seed,
            n_generated: result.nodes.len(),
            accuracy,
            seconds: config.record_timing.then(|| start.elapsed().as_secs_f64()),
        };
        save_session(&result, &summary, out.join(format!("session-{k}")))?;
        sessions.push(result);
    }
    let fused = fuse_sessions(&sessions)?;
    save_matrix(fused.probabilities.view(), out.join("probabilities.csv"))?;
    if let Ok(e) = evaluate(&fused.predictions, &truth, &split.test) {
        println!("fused accuracy {:.4} ({}/{})", e.accuracy, e.correct, e.total);
    }
    Ok(())
}

fn eval(dataset: &Dataset, config: &ExperimentConfig, trial: usize, probabilities: Option<&Path>) -> Result<()> {
    let (split, predicted) = match probabilities {
        Some(path) => {
            let split = split_labels(&dataset.labels, config.label_fraction, config.trial_seed(trial))?;
            let probs = read_features(path)?.into_inner();
            (split, predictions(&probs))
        }
        None => {
            let (split, baseline) = trial_baseline(dataset, config, trial)?;
            let p = baseline.predictions();
            (split, p)
        }
    };
    let e = evaluate(&predicted, &truth(dataset), &split.test)?;
    println!("{}", serde_json::to_string_pretty(&e)?);
    Ok(())
}

fn run(dataset: &Dataset, config: &ExperimentConfig, out: &Path) -> std::result::Result<(), Failure> {
    let report = run_experiment_on(dataset, config);
    write_report(&report, out).map_err(|e| Failure::Runtime(e.into()))?;
    let show = |m: Option<nodegen::harness::MeanStd>| match m {
        Some(m) => format!("{:.4} ± {:.4}", m.mean, m.std.unwrap_or(0.0)),
        None => "n/a".into(),
    };
    println!("baseline  {}", show(report.baseline));
    println!("augmented {}", show(report.augmented));
    if let Some(f) = report.overhead_fraction {
        println!("generation overhead {:.1}%", 100.0 * f);
    }
    info!("wrote {}", out.display());
    if report.failed_trials > 0 {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{} of {} trials failed (see report.json)",
            report.failed_trials,
            report.trials.len()
        )));
    }
    Ok(())
}

fn selftest(quiet: bool) -> std::result::Result<(), Failure> {
    let outcomes = verify::selftest();
    for o in &outcomes {
        if !quiet || !o.passed {
            println!(
                "{} {:<40} {:>7.2}s  {}",
                if o.passed { "PASS" } else { "FAIL" },
                o.name,
                o.seconds,
                o.detail
            );
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} properties passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        Err(Failure::Selftest)
    } else {
        Ok(())
    }
}
