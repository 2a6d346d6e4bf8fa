//! Command-line driver.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 no optimal space,
//! 4 backend failure.

use crate::config::{BackendConfig, RunConfigFile};
use crate::evolution::{Checkpoint, Evolution, EvolutionError};
use crate::fitness::{EvalTask, Evaluator, ExternalBackend, FitnessCache, SurrogateBackend};
use crate::genome::{infer_shapes, Genome};
use crate::lengthsearch::{self, LengthSearchError, LengthSearchReport, LengthSpace, OptimalSpace};
use crate::report;
use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_SPACE: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "evolen",
    version,
    about = "Length-constrained evolution of CNN architectures"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe every length space and select the optimal one.
    LengthSearch {
        config: PathBuf,
        /// Overrides the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config output_dir, else `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent fitness evaluations.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the genetic search inside a length space.
    Evolve {
        config: PathBuf,
        /// Space bounds as MIN:MAX; read from <out>/spaces.json when omitted.
        #[arg(long)]
        space: Option<String>,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// History CSV path (default: <out>/history.csv).
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Shape report, parameter count and optional fitness of one genome.
    Eval { genome: PathBuf, config: Option<PathBuf> },
    /// Per-generation and per-space fitness tables from a history CSV.
    Report {
        history: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Length-space width used to bucket genomes.
        #[arg(long, default_value_t = 4)]
        width: usize,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("no optimal space: every candidate scored below the floor")]
    NoSpace,
    #[error("backend failure: {0}")]
    Backend(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NoSpace => EXIT_NO_SPACE,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::LengthSearch {
            config,
            seed,
            out,
            jobs,
        } => cmd_length_search(&config, seed, out, jobs, stdout),
        Command::Evolve {
            config,
            space,
            resume,
            history,
            seed,
            out,
            jobs,
        } => cmd_evolve(
            &config,
            EvolveArgs {
                space,
                resume,
                history,
                seed,
                out,
                jobs,
            },
            stdout,
            stderr,
        ),
        Command::Eval { genome, config } => cmd_eval(&genome, config.as_deref(), stdout),
        Command::Report { history, out, width } => cmd_report(&history, out, width, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.code()
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, jobs: Option<usize>) -> Result<RunConfigFile, CliError> {
    let mut cfg = RunConfigFile::load(path).map_err(usage)?;
    if let Some(seed) = seed {
        cfg.evolution.master_seed = seed;
    }
    if let Some(jobs) = jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        cfg.evolution.jobs = jobs;
    }
    Ok(cfg)
}

fn output_dir(cfg: &RunConfigFile, out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn build_evaluator(cfg: &RunConfigFile) -> Result<Evaluator, CliError> {
    let task = EvalTask {
        input_shape: cfg.dataset.input_shape,
        num_classes: cfg.dataset.num_classes,
    };
    let backend: Box<dyn crate::fitness::Backend> = match &cfg.backend {
        None => return Err(CliError::Usage("config has no `backend`".into())),
        Some(BackendConfig::Surrogate(spec)) => Box::new(SurrogateBackend::new(spec.clone(), task.input_shape)),
        Some(BackendConfig::External(settings)) => {
            Box::new(ExternalBackend::connect(settings.clone()).map_err(|e| CliError::Backend(e.to_string()))?)
        }
    };
    let mut evaluator = Evaluator::new(backend, task)
        .with_seed(cfg.evolution.master_seed)
        .with_jobs(cfg.evolution.jobs);
    if let Some(path) = &cfg.cache_path {
        let cache =
            FitnessCache::open(path).map_err(|e| usage(format!("cannot open cache {}: {e}", path.display())))?;
        evaluator = evaluator.with_cache(cache);
    }
    Ok(evaluator)
}

fn check_backend(evaluator: &Evaluator) -> Result<(), CliError> {
    if evaluator.backend_lost() {
        Err(CliError::Backend("evaluator became unavailable during the run".into()))
    } else {
        Ok(())
    }
}

fn report_failed(e: report::ReportError) -> CliError {
    CliError::Usage(format!("cannot write output: {e}"))
}

fn cmd_length_search(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed, jobs)?;
    let dir = output_dir(&cfg, out)?;
    let evaluator = build_evaluator(&cfg)?;
    let evo = &cfg.evolution;

    let (report, selected) = match lengthsearch::run_length_search(evo, &evaluator) {
        Ok(report) => (report, true),
        Err(LengthSearchError::NoOptimalSpace(results)) => (
            LengthSearchReport {
                optimal: OptimalSpace::none(evo.margin),
                alpha: evo.alpha,
                floor: evo.floor_for(cfg.dataset.num_classes),
                results: *results,
            },
            false,
        ),
        Err(e @ LengthSearchError::InvalidPartition { .. }) => return Err(usage(e)),
    };
    check_backend(&evaluator)?;
    report::write_spaces_json(&dir.join("spaces.json"), &report).map_err(report_failed)?;
    report::write_spaces_csv(&dir.join("spaces.csv"), &report).map_err(report_failed)?;

    for r in &report.results {
        let _ = writeln!(
            stdout,
            "{:>8}  mean {:.4}  best {:.4}",
            r.space.to_string(),
            r.mean_fitness,
            r.best_fitness
        );
    }
    let _ = writeln!(stdout, "{}", report.optimal);
    if selected {
        Ok(())
    } else {
        Err(CliError::NoSpace)
    }
}

struct EvolveArgs {
    space: Option<String>,
    resume: Option<PathBuf>,
    history: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
}

fn parse_space(text: &str, width: usize, margin: usize) -> Result<OptimalSpace, CliError> {
    let bad = || CliError::Usage(format!("--space expects MIN:MAX, got `{text}`"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok(OptimalSpace::new(LengthSpace::from_bounds(lo, hi, width), margin))
}

fn cmd_evolve(config: &Path, args: EvolveArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(config, args.seed, args.jobs)?;
    let dir = output_dir(&cfg, args.out)?;
    let evo_cfg = &cfg.evolution;

    let checkpoint: Option<Checkpoint> = match &args.resume {
        Some(path) => Some(
            report::read_checkpoint(path)
                .map_err(|e| usage(format!("cannot read checkpoint {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let space = match (&args.space, &checkpoint) {
        (Some(text), _) => parse_space(text, evo_cfg.space_width, evo_cfg.margin)?,
        (None, Some(ckpt)) => ckpt.space,
        (None, None) => {
            let path = dir.join("spaces.json");
            let spaces = report::read_spaces_json(&path)
                .map_err(|e| usage(format!("no --space given and cannot read {}: {e}", path.display())))?;
            if spaces.optimal.selected.is_none() {
                return Err(CliError::NoSpace);
            }
            spaces.optimal
        }
    };

    let evaluator = build_evaluator(&cfg)?;
    let history_path = args.history.unwrap_or_else(|| dir.join("history.csv"));
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(usage)?;

    let mut evolution = match checkpoint {
        Some(mut ckpt) => {
            ckpt.space = space;
            Evolution::resume(evo_cfg, ckpt, &evaluator).map_err(usage)?
        }
        None => {
            if history_path.exists() {
                std::fs::remove_file(&history_path).map_err(usage)?;
            }
            let evo = Evolution::start(evo_cfg, space, &evaluator).map_err(|e| match e {
                EvolutionError::NoSpace => CliError::NoSpace,
                other => usage(other),
            })?;
            persist_generation(&evo, &history_path, &ckpt_dir)?;
            evo
        }
    };

    while evolution.step() {
        persist_generation(&evolution, &history_path, &ckpt_dir)?;
    }
    check_backend(&evaluator)?;

    let best = evolution.best().clone();
    report::write_best(&dir.join("best.json"), &best).map_err(report_failed)?;
    let all_out_of_shape = evolution.population().members.iter().all(|m| m.record.out_of_shape);
    if all_out_of_shape {
        let _ = writeln!(
            stderr,
            "warning: every member is out of shape for input {:?}; best fitness is 0",
            <[u32; 3]>::from(cfg.dataset.input_shape)
        );
    }
    let _ = writeln!(
        stdout,
        "best individual {} in {}: length {}, fitness {}, params {}",
        best.individual.id,
        space,
        best.individual.genome.effective_length(),
        best.record.fitness,
        best.record.num_params
    );
    Ok(())
}

fn persist_generation(evo: &Evolution<'_>, history: &Path, ckpt_dir: &Path) -> Result<(), CliError> {
    report::append_history(history, evo.latest_rows()).map_err(report_failed)?;
    let path = ckpt_dir.join(format!("gen_{:04}.json", evo.generation()));
    report::write_checkpoint(&path, &evo.checkpoint()).map_err(report_failed)
}

/// Accepts a bare genome or any object carrying one under `genome`
/// (such as `best.json`).
fn read_genome(path: &Path) -> Result<Genome, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(format!("malformed genome: {e}")))?;
    let value = match value {
        serde_json::Value::Object(mut map) if map.contains_key("genome") && !map.contains_key("blocks") => {
            map.remove("genome").unwrap()
        }
        other => other,
    };
    Genome::from_value(value).map_err(usage)
}

fn cmd_eval(genome: &Path, config: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let genome = read_genome(genome)?;
    let cfg = match config {
        Some(path) => load_config(path, None, None)?,
        None => RunConfigFile::from_json("{}").map_err(usage)?,
    };
    let input = cfg.dataset.input_shape;
    let violations: Vec<String> = genome.validate(usize::MAX).iter().map(ToString::to_string).collect();

    let mut out = serde_json::json!({
        "effective_length": genome.effective_length(),
        "input_shape": input,
        "violations": violations,
    });
    match infer_shapes(&genome, input) {
        Ok(shapes) => {
            out["out_of_shape"] = false.into();
            out["num_params"] = shapes.total_params.into();
            out["shapes"] = serde_json::to_value(&shapes.layers).map_err(usage)?;
        }
        Err(oos) => {
            out["out_of_shape"] = true.into();
            out["out_of_shape_layer"] = oos.layer.into();
            out["num_params"] = serde_json::Value::Null;
        }
    }
    if cfg.backend.is_some() {
        let evaluator = build_evaluator(&cfg)?;
        let record = evaluator.evaluate(&genome, &cfg.evolution.eval_budget, 0);
        out["record"] = serde_json::to_value(&record).map_err(usage)?;
        check_backend(&evaluator)?;
    }
    let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&out).map_err(usage)?);
    Ok(())
}

fn cmd_report(history: &Path, out: Option<PathBuf>, width: usize, stdout: &mut dyn Write) -> Result<(), CliError> {
    if width == 0 {
        return Err(CliError::Usage("--width must be positive".into()));
    }
    let rows = report::read_history(history).map_err(usage)?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!("history {} has no rows", history.display())));
    }
    let dir = out.unwrap_or_else(|| history.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&dir).map_err(usage)?;

    let gens = report::generation_summary(&rows);
    let spaces = report::space_summary(&rows, width);
    report::write_generation_summary(&dir.join("generations.csv"), &gens).map_err(report_failed)?;
    report::write_space_summary(&dir.join("length_spaces.csv"), &spaces).map_err(report_failed)?;
    for g in &gens {
        let _ = writeln!(
            stdout,
            "generation {:>3}  best {:.4}  mean {:.4}",
            g.generation, g.best, g.mean
        );
    }
    Ok(())
}
