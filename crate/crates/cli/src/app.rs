//! Argument parsing and the five subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use metasaclag::algo::gradcheck::{gradcheck_trials, GradcheckConfig, Mutation};
use metasaclag::trainer::{EvalSummary, MetricsRecord, MetricsSink, Trainer};

use crate::checkpoint;
use crate::config::{parse_document, Assignment, Settings, SECTIONS};
use crate::error::{exit, CliError, CliResult};
use crate::metrics::{read_metrics, CsvSink};
use crate::plot::write_charts;
use crate::presets::{listing, BUNDLED};

/// Environment variable that overrides the output directory of `train`.
pub const LOG_DIR_ENV: &str = "METASACLAG_LOG_DIR";
pub const DEFAULT_LOG_DIR: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "metasaclag", version, about = "Constrained soft actor-critic with meta-gradient tuning of the safety threshold and temperature")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run, or several seeds in parallel.
    Train(TrainArgs),
    /// Evaluate the policy stored in a checkpoint.
    Eval(EvalArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Draw return, temperature and violation-rate charts from metrics files.
    Plot(PlotArgs),
    /// List the bundled threshold/multiplier presets.
    Presets(PresetsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file with [env], [algo], [train] and [log] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundled preset supplying the initial threshold and multiplier.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds trained in parallel, each in its own subdirectory.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Total environment steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Output directory; takes precedence over the environment variable and the file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Any configuration key, as section.key=value; may be repeated.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from a checkpoint; only --steps, --out and --checkpoint-every apply.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Sample actions instead of using the mean action.
    #[arg(long)]
    pub stochastic: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one formula on purpose to confirm the check catches it (eps_coeff).
    #[arg(long)]
    pub mutate: Option<String>,
    /// Start all networks at zero.
    #[arg(long)]
    pub zero_nets: bool,
    /// Also write the rows as CSV to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// One or more metrics.csv files; each becomes a series.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Directory for the SVG files (default: next to the first input).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PresetsArgs {
    /// Print this preset's file instead of the table.
    pub name: Option<String>,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Presets(a) => cmd_presets(a),
    }
}

/// Turns the file and flags into ordered assignments; later entries win.
pub fn train_assignments(args: &TrainArgs) -> CliResult<Vec<Assignment>> {
    let mut out = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        out.extend(parse_document(&text, &path.display().to_string(), &SECTIONS)?);
    }
    let flag = |section: &str, key: &str, value: String| Assignment::new(section, key, value, "command line");
    if let Some(v) = &args.preset {
        out.push(flag("algo", "preset", v.clone()));
    }
    if let Some(v) = &args.env {
        out.push(flag("env", "name", v.clone()));
    }
    if let Some(v) = &args.variant {
        out.push(flag("algo", "variant", v.clone()));
    }
    if let Some(v) = args.seed {
        out.push(flag("train", "seed", v.to_string()));
    }
    for (key, v) in [
        ("total_steps", args.steps),
        ("eval_every", args.eval_every),
        ("eval_episodes", args.eval_episodes),
    ] {
        if let Some(v) = v {
            out.push(flag("train", key, v.to_string()));
        }
    }
    if let Some(v) = args.checkpoint_every {
        out.push(flag("log", "checkpoint_every", v.to_string()));
    }
    for o in &args.overrides {
        out.push(Assignment::from_override(o)?);
    }
    Ok(out)
}

/// `--out`, then the environment variable, then `[log] dir`, then `runs`.
fn output_dir(flag: Option<&Path>, file: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(LOG_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    file.map_or_else(|| PathBuf::from(DEFAULT_LOG_DIR), Path::to_path_buf)
}

/// Writes metrics and periodic checkpoints for one run.
struct RunSink {
    csv: CsvSink,
    checkpoint_path: PathBuf,
    checkpoint_every: u64,
}

impl MetricsSink for RunSink {
    fn record(&mut self, record: &MetricsRecord) -> metasaclag::Result<()> {
        self.csv.record(record)
    }

    fn evaluation(&mut self, step: u64, summary: &EvalSummary) -> metasaclag::Result<()> {
        self.csv.evaluation(step, summary)
    }

    fn after_step(&mut self, trainer: &Trainer) -> metasaclag::Result<()> {
        if self.checkpoint_every > 0 && trainer.steps().is_multiple_of(self.checkpoint_every) {
            checkpoint::save(&self.checkpoint_path, trainer)
                .map_err(|e| metasaclag::Error::Io(std::io::Error::other(e.to_string())))?;
        }
        Ok(())
    }
}

/// Trains to completion in `dir`, writing `metrics.csv`, `checkpoint.bin` and, when
/// evaluations are enabled, `eval.csv`. Returns the summary line.
pub fn train_into(mut trainer: Trainer, dir: &Path, checkpoint_every: usize) -> CliResult<String> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut sink = RunSink {
        csv: CsvSink::create(dir, trainer.config().violation_window)?,
        checkpoint_path: dir.join("checkpoint.bin"),
        checkpoint_every: checkpoint_every as u64,
    };
    if let Err(e) = trainer.run(&mut sink) {
        if matches!(e, metasaclag::Error::NonFinite(_)) {
            let note = dir.join("abort.txt");
            std::fs::write(&note, format!("{e}\n")).map_err(CliError::io(&note))?;
        }
        return Err(e.into());
    }
    checkpoint::save(&sink.checkpoint_path, &trainer)?;
    let s = trainer.state();
    Ok(format!(
        "summary seed={} steps={} episodes={} mean_return={} violation_rate={} eps={} alpha={} nu={}",
        trainer.config().seed,
        trainer.steps(),
        trainer.episodes(),
        sink.csv.mean_return(),
        trainer.violation_rate(),
        s.eps,
        s.alpha,
        s.nu
    ))
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    if let Some(path) = &args.resume {
        let fresh_only = args.config.is_some()
            || args.preset.is_some()
            || args.env.is_some()
            || args.variant.is_some()
            || args.seed.is_some()
            || !args.seeds.is_empty()
            || args.eval_every.is_some()
            || args.eval_episodes.is_some()
            || !args.overrides.is_empty();
        if fresh_only {
            return Err(CliError::Usage(
                "--resume accepts only --steps, --out and --checkpoint-every".into(),
            ));
        }
        let mut trainer = checkpoint::load(path)?;
        if let Some(steps) = args.steps {
            trainer.set_total_steps(steps);
        }
        let dir = output_dir(args.out.as_deref(), None);
        println!("{}", train_into(trainer, &dir, args.checkpoint_every.unwrap_or(0))?);
        return Ok(());
    }

    let settings = Settings::resolve(&train_assignments(&args)?)?;
    let base = output_dir(args.out.as_deref(), settings.log_dir.as_deref());
    let seeds = if args.seeds.is_empty() { vec![settings.run.seed] } else { args.seeds.clone() };
    let jobs: Vec<(Settings, PathBuf)> = seeds
        .iter()
        .map(|&seed| {
            let mut s = settings.clone();
            s.run.seed = seed;
            let dir = if args.seeds.is_empty() { base.clone() } else { base.join(format!("seed-{seed}")) };
            (s, dir)
        })
        .collect();
    let one = |(s, dir): &(Settings, PathBuf)| -> CliResult<String> {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let conf = dir.join("config.conf");
        std::fs::write(&conf, s.render()).map_err(CliError::io(&conf))?;
        train_into(Trainer::new(s.run.clone())?, dir, s.checkpoint_every)
    };
    let results: Vec<CliResult<String>> = if jobs.len() == 1 {
        vec![one(&jobs[0])]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs.iter().map(|job| scope.spawn(move || one(job))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Config("training thread panicked".into()))))
                .collect()
        })
    };
    let several = results.len() > 1;
    let mut worst: Option<CliError> = None;
    for r in results {
        match r {
            Ok(line) => println!("{line}"),
            Err(e) => {
                if several {
                    eprintln!("error: {e}");
                }
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let trainer = checkpoint::load(&args.checkpoint)?;
    let s = trainer.evaluate(args.episodes, !args.stochastic)?;
    println!(
        "eval step={} episodes={} mean_return={} violation_rate={} success_rate={}",
        trainer.steps(),
        s.episodes,
        s.mean_return,
        s.violation_rate,
        s.success_rate
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let mutation = args.mutate.as_deref().map(str::parse::<Mutation>).transpose()?;
    let config = GradcheckConfig {
        seed: args.seed,
        zero_nets: args.zero_nets,
        mutation,
        ..GradcheckConfig::default()
    };
    let reports = gradcheck_trials(&config, args.trials.max(1))?;
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        println!("{}", r.table());
        csv.push_str(&r.delimited(i == 0));
    }
    if let Some(path) = &args.report {
        std::fs::write(path, csv).map_err(CliError::io(path))?;
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("gradcheck: {}/{} instances passed", reports.len() - failed, reports.len());
    if failed > 0 {
        return Err(CliError::GradcheckFailed {
            failed,
            total: reports.len(),
        });
    }
    Ok(())
}

/// Series label: the run directory for `.../metrics.csv`, else the file stem.
fn label_for(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

fn cmd_plot(args: PlotArgs) -> CliResult<()> {
    let mut runs = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let table = read_metrics(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if table.malformed > 0 {
            eprintln!("warning: skipped {} malformed rows in {}", table.malformed, path.display());
        }
        runs.push((label_for(path), table));
    }
    let out = args.out.clone().unwrap_or_else(|| {
        args.inputs[0]
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    });
    for p in write_charts(&runs, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_presets(args: PresetsArgs) -> CliResult<()> {
    match args.name {
        None => print!("{}", listing()?),
        Some(name) => {
            let (_, text) = BUNDLED
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| CliError::Config(format!("unknown preset `{name}`")))?;
            print!("{text}");
        }
    }
    Ok(())
}
