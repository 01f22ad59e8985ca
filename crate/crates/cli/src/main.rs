//! `patchkit` command-line driver.
//!
//! Usage errors exit with status 2 and module errors with status 1.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use patchkit_core::attack::{read_trace, Patch};
use patchkit_core::error::{Error, Result};
use patchkit_core::harness::{self, config::parse_assignment, plot, OutputDir, RunConfig, MANIFEST};
use patchkit_core::metrics::read_sweep_csv;

#[derive(Debug, Parser)]
#[command(name = "patchkit", version, about = "Adversarial garment patches against a toy person detector")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set attack.rounds=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Allow overwriting existing artifacts.
    #[arg(long, global = true)]
    force: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Control {
    /// Seeded uniform-noise patch.
    Noise,
    /// Flat mid-gray patch.
    Gray,
    /// No patch at all.
    Clean,
}

#[derive(Debug, clap::Args)]
struct PatchChoice {
    /// Patch PNG to evaluate. Defaults to `<output_dir>/patch.png`.
    #[arg(long, conflicts_with = "control")]
    patch: Option<PathBuf>,
    /// Evaluate a control instead of a trained patch.
    #[arg(long, value_enum)]
    control: Option<Control>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus at `corpus.path`.
    GenCorpus,
    /// Train the toy detector and write `toy_detector.bin` to the output directory.
    TrainDetectorFixture,
    /// Optimize a patch; writes `trace.csv` and `patch.png`.
    Train {
        /// Continue from `patch.resume.png` (or `patch.png`) in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a patch at the configured thresholds.
    Eval {
        #[command(flatten)]
        patch: PatchChoice,
        /// Report file stem.
        #[arg(long, default_value = "eval")]
        name: String,
        /// Also measure ASR of 3D renders by viewing angle (`angles.csv`).
        #[arg(long)]
        angles: bool,
    },
    /// ASR and detection metrics over the IoU and confidence grids.
    Sweep {
        #[command(flatten)]
        patch: PatchChoice,
    },
    /// Gray-square occlusion protocol.
    Occlusion {
        #[command(flatten)]
        patch: PatchChoice,
    },
    /// Write a rest and a randomly deformed garment mesh with stress values.
    DeformDemo,
    /// Write a render before and after relighting.
    RelightDemo {
        #[command(flatten)]
        patch: PatchChoice,
    },
    /// Render SVG plots from the CSVs in the output directory.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::TrainDetectorFixture => "train-detector-fixture",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Occlusion { .. } => "occlusion",
            Command::DeformDemo => "deform-demo",
            Command::RelightDemo { .. } => "relight-demo",
            Command::Report => "report",
        }
    }
}

fn resolve_patch(cfg: &RunConfig, choice: &PatchChoice) -> Result<Option<Patch>> {
    let size = cfg.attack.patch_size;
    match (&choice.patch, choice.control) {
        (Some(p), _) => Patch::load(p).map(Some),
        (None, Some(Control::Noise)) => Patch::random(size, size, cfg.attack.seeds.patch).map(Some),
        (None, Some(Control::Gray)) => Patch::uniform(size, size, 0.5).map(Some),
        (None, Some(Control::Clean)) => Ok(None),
        (None, None) => Patch::load(&cfg.output_dir.join("patch.png")).map(Some),
    }
}

fn require_patch(cfg: &RunConfig, choice: &PatchChoice) -> Result<Patch> {
    resolve_patch(cfg, choice)?.ok_or_else(|| Error::Config("this command needs a patch, not --control clean".into()))
}

/// Records the resolved config next to the command's artifacts.
fn write_config(out: &OutputDir, cfg: &RunConfig, command: &str) -> Result<()> {
    let text = format!("# config hash {}\n{}", cfg.hash(), cfg.to_toml());
    out.write(&format!("{command}.config.toml"), text.as_bytes())?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let sets = cli.sets.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>>>()?;
    let cfg = RunConfig::load(cli.config.as_deref(), &sets)?;
    log::info!("config hash {}", cfg.hash());
    let name = match &cli.command {
        Command::Eval { name, .. } => name.as_str(),
        other => other.name(),
    };

    if let Command::GenCorpus = cli.command {
        let out = OutputDir::open(&cfg.corpus.path, cli.force)?;
        out.check_writable(MANIFEST)?;
        let manifest = harness::generate_corpus(&cfg.corpus.spec, &cfg.corpus.path)?;
        write_config(&out, &cfg, name)?;
        println!("{}", manifest.display());
        return Ok(());
    }

    let force = cli.force || matches!(cli.command, Command::Train { resume: true });
    let out = OutputDir::open(&cfg.output_dir, force)?;
    write_config(&out, &cfg, name)?;

    match &cli.command {
        Command::GenCorpus => unreachable!("handled above"),
        Command::TrainDetectorFixture => {
            let (_, report) = harness::train_detector_fixture(&cfg, &out)?;
            println!(
                "epochs {}, kept epoch {}: recall {:.4} false positives {}",
                report.epochs_run,
                report.best_epoch,
                report.recalls[report.best_epoch],
                report.false_positives[report.best_epoch]
            );
        }
        Command::Train { resume } => {
            let corpus = harness::open_corpus(&cfg)?;
            let detector = harness::load_detector(&cfg.detector)?;
            let initial = if *resume {
                let partial = out.path("patch.resume.png");
                let p = if partial.exists() { partial } else { out.path("patch.png") };
                let patch = Patch::load(&p)?;
                log::info!("resuming from {} at round {}", p.display(), patch.iteration);
                Some(patch)
            } else {
                None
            };
            let outcome = harness::run_train(&cfg, corpus, &detector, &out, initial)?;
            if let Some(last) = outcome.trace.last() {
                println!("round {} total loss {:.6}", last.round, last.total);
            }
            println!("{}", out.path("patch.png").display());
        }
        Command::Eval { patch, name, angles } => {
            let corpus = harness::open_corpus(&cfg)?;
            let detector = harness::load_detector(&cfg.detector)?;
            let p = resolve_patch(&cfg, patch)?;
            let report = harness::run_eval(&cfg, &corpus, &detector, p.as_ref(), &out, name)?;
            println!("{}", summary_line(&report)?);
            if *angles {
                let p = p.ok_or_else(|| Error::Config("--angles needs a patch".into()))?;
                let rows = harness::angle_sweep(&cfg, &corpus, &detector, &p)?;
                harness::write_angles(&rows, &out)?;
            }
        }
        Command::Sweep { patch } => {
            let corpus = harness::open_corpus(&cfg)?;
            let detector = harness::load_detector(&cfg.detector)?;
            let p = resolve_patch(&cfg, patch)?;
            let reports = harness::run_sweep(&cfg, &corpus, &detector, p.as_ref(), &out)?;
            println!("{} threshold pairs written to {}", reports.len(), out.path("sweep.csv").display());
        }
        Command::Occlusion { patch } => {
            let corpus = harness::open_corpus(&cfg)?;
            let detector = harness::load_detector(&cfg.detector)?;
            let p = require_patch(&cfg, patch)?;
            let o = harness::run_occlusion(&cfg, &corpus, &detector, &p, &out)?;
            println!("ASR unoccluded {:.4} occluded {:.4}", o.unoccluded.asr, o.occluded.asr);
        }
        Command::DeformDemo => harness::deform_demo(&cfg, &out)?,
        Command::RelightDemo { patch } => {
            let corpus = harness::open_corpus(&cfg)?;
            let p = require_patch(&cfg, patch)?;
            let r = harness::relight_demo(&cfg, &corpus, &p, &out)?;
            println!("alpha {:.4} beta {:.4} theta {:?}", r.alpha, r.beta, r.theta);
        }
        Command::Report => report(&out)?,
    }
    Ok(())
}

fn summary_line(report: &patchkit_core::metrics::EvalReport) -> Result<String> {
    Ok(format!(
        "ASR {:.4} precision {:.4} recall {:.4} F1 {:.4} AC {:.4}",
        report.asr, report.precision, report.recall, report.f1, report.avg_confidence
    ))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn report(out: &OutputDir) -> Result<()> {
    let mut drawn = 0;
    let trace = out.path("trace.csv");
    if trace.exists() {
        let path = out.check_writable("loss.svg")?;
        plot::loss_trace_svg(&read_trace(open(&trace)?)?, &path)?;
        drawn += 1;
    }
    let sweep = out.path("sweep.csv");
    if sweep.exists() {
        let path = out.check_writable("asr.svg")?;
        plot::asr_curves_svg(&read_sweep_csv(open(&sweep)?)?, &path)?;
        drawn += 1;
    }
    let angles = out.path("angles.csv");
    if angles.exists() {
        let path = out.check_writable("angles.svg")?;
        plot::angles_svg(&harness::read_angles(open(&angles)?)?, &path)?;
        drawn += 1;
    }
    if drawn == 0 {
        return Err(Error::Config(format!(
            "no trace.csv, sweep.csv, or angles.csv in {}",
            out.root().display()
        )));
    }
    println!("{drawn} plot(s) written to {}", out.root().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(1)
        }
    }
}
