use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use otl_core::descriptor::read_feature_csv;
use otl_core::pipeline::{self, report_csv, Mode, RunConfig};
use otl_core::synth::{self, Scenario, SceneConfig};

#[derive(Parser)]
#[command(
    name = "otl",
    version,
    about = "Online transfer learning of a LiDAR object classifier from camera detections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the online learning loop over a sequence.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `mode` from the config.
        #[arg(long)]
        mode: Option<Mode>,
        /// Overrides `orf.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Report CSV; stage timings go next to it as `<stem>.timing.csv`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// CSV of every learned sample's descriptor and label.
        #[arg(long)]
        dump_features: Option<PathBuf>,
    },
    /// Score a saved model on a labelled feature set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Directory holding `features.csv`, or the CSV itself.
        #[arg(long)]
        test: PathBuf,
    },
    /// Write a synthetic sequence, its labelled features and a run config.
    Synth {
        #[arg(long, default_value = "mixed-traffic")]
        scenario: Scenario,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        frames: usize,
    },
}

fn timing_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map_or("report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}.timing.csv"))
}

fn run(
    config: &Path,
    mode: Option<Mode>,
    seed: Option<u64>,
    checkpoint_dir: Option<PathBuf>,
    report: Option<PathBuf>,
    dump_features: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = seed {
        cfg.orf.seed = s;
    }
    if checkpoint_dir.is_some() {
        cfg.checkpoint_dir = checkpoint_dir;
    }
    if dump_features.is_some() {
        cfg.dump_features = dump_features;
    }
    let outcome = pipeline::run(&cfg)?;
    let c = &outcome.counters;
    println!("mode: {}", cfg.mode);
    println!(
        "frames: {} ({} skipped), clusters: {}, pre-labelled: {}, confirmed tracks: {}",
        c.frames, c.frames_skipped, c.clusters, c.prelabelled_clusters, c.tracks_confirmed
    );
    println!(
        "samples emitted: {}, learned: {}, under-sampled away: {}",
        c.emitted, c.learned, c.undersampled_away
    );
    println!("checkpoints: {}", outcome.report.series.len());
    println!("accuracy (micro-F1): {:.4}", outcome.report.micro_f1);
    println!("macro-F1: {:.4}", outcome.report.macro_f1);
    if let Some(path) = report {
        fs::write(&path, report_csv(&outcome.report, c.learned))
            .with_context(|| format!("writing {}", path.display()))?;
        let timing = timing_path(&path);
        fs::write(&timing, outcome.telemetry.to_csv())
            .with_context(|| format!("writing {}", timing.display()))?;
    }
    Ok(())
}

fn eval(model: &Path, test: &Path) -> Result<()> {
    let model = otl_core::orf::load(model)?;
    let test = if test.is_dir() {
        test.join("features.csv")
    } else {
        test.to_path_buf()
    };
    let rows = read_feature_csv(&test)?;
    let report = pipeline::evaluate(&model, &rows)?;
    // No series for a single model: the CSV is the header plus the final row.
    print!("{}", report_csv(&report, model.samples_seen()));
    Ok(())
}

fn synth(scenario: Scenario, out: &Path, seed: u64, frames: usize) -> Result<()> {
    let scene = SceneConfig {
        frames,
        seed,
        ..Default::default()
    };
    let mut cfg = RunConfig::for_sequence(Path::new("."));
    cfg.dataset.test = PathBuf::from("test");
    let summary = synth::write_scenario(scenario, &scene, &cfg.cluster, &cfg.filter, out)?;
    let config_path = out.join("run.toml");
    fs::write(&config_path, cfg.to_toml())
        .with_context(|| format!("writing {}", config_path.display()))?;
    println!(
        "{}: {} frames, {} points, {} detections, {} training and {} test feature rows",
        scenario.name(),
        summary.sequence.frames,
        summary.sequence.points,
        summary.sequence.detections,
        summary.train_features,
        summary.test_features
    );
    println!("run config: {}", config_path.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            mode,
            seed,
            checkpoint_dir,
            report,
            dump_features,
        } => run(&config, mode, seed, checkpoint_dir, report, dump_features),
        Command::Eval { model, test } => eval(&model, &test),
        Command::Synth {
            scenario,
            out,
            seed,
            frames,
        } => synth(scenario, out.as_path(), seed, frames),
    }
}
