use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::ablation::{run_ablation, AblationAxis};
use super::config::RunConfig;
use super::pipeline;
use super::plot::{emit_plot, PlotKind, Table};
use super::theory::{verify_theory, TheorySettings};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "chunkrl", about = "Adaptive chunk-size critics: data, training, oracles and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArg {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out the behavior policy and write dataset.jsonl.
    GenData(ConfigArg),
    /// Exact tables (values, baselines, advantages, k-dagger) to oracle.json.
    Oracle(ConfigArg),
    /// Offline pretraining: metrics_offline.csv and checkpoint_offline.
    TrainOffline(ConfigArg),
    /// Online fine-tuning: metrics_online.csv, traces.csv, checkpoint_final.
    Finetune(ConfigArg),
    /// Evaluate the latest checkpoint: eval.json and eval_traces.csv.
    Evaluate(ConfigArg),
    /// Run every arm of one ablation axis on paired seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        /// criterion | adaptive | bootstrap | kappa | zscore | chunk_h
        #[arg(long)]
        which: String,
    },
    /// Check the selector and bootstrap bounds on exact tables.
    VerifyTheory(ConfigArg),
    /// Render a CSV as SVG.
    Plot {
        /// curves | kstar-map
        #[arg(long)]
        kind: String,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the input path with an .svg extension.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Supplies the grid layout for kstar-map.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let mut c = RunConfig::from_path(path)?;
    let dir = c.prepare_output()?;
    Ok((c, dir))
}

fn grid_dims(env: &EnvSpec) -> Option<(usize, usize)> {
    match env {
        EnvSpec::TwoPhaseGrid(p) => Some((p.width, p.height)),
        _ => None,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => {
            let (c, dir) = load(&a.config)?;
            let ds = pipeline::gen_data(&c, &dir)?;
            println!("wrote {} trajectories to {}", ds.trajectories.len(), dir.join(pipeline::DATASET_FILE).display());
        }
        Command::Oracle(a) => {
            let (c, dir) = load(&a.config)?;
            let t = pipeline::oracle(&c, &dir)?;
            println!("oracle tables for {} states written to {}", t.v_star.len(), dir.join(pipeline::ORACLE_FILE).display());
        }
        Command::TrainOffline(a) => {
            let (c, dir) = load(&a.config)?;
            let (t, _) = pipeline::train_offline(&c, &dir)?;
            if let Some(e) = t.log.last_eval() {
                println!("offline: success {:.3}, mean k* {:.3}", e.success_rate, e.mean_kstar);
            }
        }
        Command::Finetune(a) => {
            let (c, dir) = load(&a.config)?;
            let t = pipeline::finetune(&c, &dir)?;
            if let Some(e) = t.log.last_eval() {
                println!("online: success {:.3}, mean k* {:.3}", e.success_rate, e.mean_kstar);
            }
        }
        Command::Evaluate(a) => {
            let (c, dir) = load(&a.config)?;
            let e = pipeline::evaluate(&c, &dir)?;
            println!("success {:.3}, mean return {:.4}, mean k* {:.3}", e.success_rate, e.mean_return, e.mean_kstar);
        }
        Command::Ablate { config, which } => {
            let which: AblationAxis = which
                .parse()
                .map_err(|e: Error| Error::Config { pointer: "--which".into(), message: e.to_string() })?;
            let (c, dir) = load(&config.config)?;
            let table = run_ablation(which, &c)?;
            let csv_path = dir.join(format!("ablation_{which}.csv"));
            table.write_csv(BufWriter::new(File::create(&csv_path)?))?;
            let svg = emit_plot(&Table::read_csv(BufReader::new(File::open(&csv_path)?))?, PlotKind::Curves, None, &format!("ablation: {which}"))?;
            std::fs::write(csv_path.with_extension("svg"), svg)?;
            for (v, s) in table.final_success() {
                println!("{v:>24}  final success {s:.3}");
            }
        }
        Command::VerifyTheory(a) => {
            let (c, dir) = load(&a.config)?;
            let env = c.env.build()?;
            let model = env.discrete().ok_or_else(|| Error::NotDiscrete(env.name().into()))?;
            let tables = pipeline::oracle_tables(&c)?;
            let settings = TheorySettings { seed: c.seed, ..TheorySettings::default() };
            let report = verify_theory(model, &tables, &settings)?;
            std::fs::write(dir.join("theory_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            for r in &report.records {
                println!("{} {:<44} measured {:>12.6e}  bound {:>12.6e}", if r.pass { "PASS" } else { "FAIL" }, r.check, r.measured, r.bound);
            }
            let passed = report.records.iter().filter(|r| r.pass).count();
            println!("{passed}/{} checks pass", report.records.len());
        }
        Command::Plot { kind, input, output, config } => {
            let kind: PlotKind =
                kind.parse().map_err(|e: Error| Error::Config { pointer: "--kind".into(), message: e.to_string() })?;
            let grid = match config {
                Some(p) => grid_dims(&RunConfig::from_path(&p)?.env),
                None => None,
            };
            let table = Table::read_csv(BufReader::new(File::open(&input)?))?;
            let title = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let svg = emit_plot(&table, kind, grid, &title)?;
            let out = output.unwrap_or_else(|| input.with_extension("svg"));
            std::fs::write(&out, svg)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

/// Exit code for an error: 2 for configuration and argument problems.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

/// Parse `argv` (program name first), run the subcommand, return the exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(parsed.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
