//! The `dstc` command line.
//!
//! Exit codes: 0 on success, 2 for validation and configuration errors, 3
//! for numerical failures (a non-finite training loss or a failed gradient
//! check).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{Overrides, RunConfig};
use crate::corpus::{
    annotate_ops, demo_ontology, generate_corpus, load_corpus, repair_corpus, save_corpus, CorpusFile, GenShape,
    Ontology, Vocabulary,
};
use crate::error::ModelError;
use crate::fusion::{build_mask, MaskKind};
use crate::heads::DecodeMode;
use crate::model::{DstModel, LossMode};
use crate::train::{evaluate, grad_check, run_ablation, tiny_config, tiny_corpus, train, EpochLoss, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<crate::corpus::CorpusError> for CliError {
    fn from(e: crate::corpus::CorpusError) -> Self {
        CliError::Validation(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "dstc",
    version,
    about = "Dialogue state tracking with masked hierarchical context fusion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus.
    GenData {
        /// Ontology JSON (`{slot: [values]}`); the built-in demo ontology if omitted.
        #[arg(long)]
        ontology: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotate every turn with per-slot state operations.
    DeriveOps {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        four_class: bool,
    },
    /// Restore dropped belief-state inheritance.
    Repair {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Keep removals that an existing `ops` annotation marks DELETE.
        #[arg(long)]
        four_class: bool,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve CSV (`epoch,l_sv,l_sop,l_joint`).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<DecodeArg>,
        /// Metrics JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on the tiny config.
    GradCheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a turn-level attention mask.
    InspectMask {
        #[arg(long)]
        turns: usize,
        #[arg(long, value_enum)]
        kind: MaskArg,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Train JOINT and SV_ONLY variants per seed and compare held-out joint accuracy.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        held_out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        /// Ablation CSV (`variant,seed,joint_accuracy`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DecodeArg {
    Direct,
    OpGated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    Global,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Joint,
    SvOnly,
}

/// Config file plus the flags that override it.
#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub loss_mode: Option<LossArg>,
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Hierarchical transformer depth N.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Local history length n.
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub tie_paths: Option<bool>,
    #[arg(long)]
    pub four_class: Option<bool>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            grad_clip: self.grad_clip,
            seed: self.seed,
            loss_mode: self.loss_mode.map(|l| match l {
                LossArg::Joint => LossMode::Joint,
                LossArg::SvOnly => LossMode::SvOnly,
            }),
            d_model: self.d_model,
            layers: self.layers,
            history: self.history,
            tie_paths: self.tie_paths,
            four_class: self.four_class,
            decode: None,
        }
    }

    fn resolve(&self) -> CliResult<RunConfig> {
        if let Some(p) = &self.config {
            require_file(p)?;
        }
        let cfg = RunConfig::resolve(self.config.as_deref(), &self.overrides())?;
        println!("effective configuration:\n{}", cfg.to_toml());
        Ok(cfg)
    }
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("no such file: {}", path.display())))
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> CliResult<CorpusFile> {
    require_file(path)?;
    Ok(load_corpus(path)?)
}

fn to_csv<T: serde::Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn loss_csv(curve: &[EpochLoss]) -> String {
    to_csv(curve)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult {
    match command {
        Command::GenData {
            ontology,
            count,
            seed,
            out,
        } => gen_data(ontology.as_deref(), count, seed, &out),
        Command::DeriveOps { input, out, four_class } => {
            let corpus = load(&input)?;
            let dialogues = corpus
                .dialogues
                .iter()
                .map(|d| annotate_ops(&corpus.ontology, d, four_class))
                .collect::<Result<Vec<_>, _>>()?;
            let turns: usize = dialogues.iter().map(|d| d.turns.len()).sum();
            save_corpus(&CorpusFile::new(corpus.ontology, dialogues), &out)?;
            println!("annotated {turns} turns -> {}", out.display());
            Ok(())
        }
        Command::Repair {
            input,
            out,
            report,
            four_class,
        } => {
            let corpus = load(&input)?;
            let (dialogues, rep) = repair_corpus(&corpus.ontology, &corpus.dialogues, four_class);
            save_corpus(&CorpusFile::new(corpus.ontology, dialogues), &out)?;
            write(
                &report,
                serde_json::to_string_pretty(&rep).expect("report serializes") + "\n",
            )?;
            println!(
                "restored {} inherited values -> {}",
                rep.total_modified(),
                out.display()
            );
            for (slot, r) in &rep.slots {
                println!("  {slot:<24} {:>5} / {}", r.modified, r.total);
            }
            Ok(())
        }
        Command::Train {
            data,
            out,
            loss_csv: csv_path,
            run,
        } => train_cmd(&data, &out, csv_path.as_deref(), &run),
        Command::Eval {
            data,
            checkpoint,
            mode,
            out,
        } => {
            let corpus = load(&data)?;
            let model = load_checkpoint(&checkpoint)?;
            let mode = match mode {
                Some(DecodeArg::OpGated) => DecodeMode::OpGated,
                _ => DecodeMode::Direct,
            };
            let m = evaluate(&model, &corpus, mode)?;
            println!(
                "{} turns: joint {:.4}  slot {:.4}  P {:.4}  R {:.4}  F1 {:.4}",
                m.turns, m.joint_accuracy, m.slot_accuracy, m.precision, m.recall, m.f1
            );
            if let Some(p) = out {
                write(&p, serde_json::to_string_pretty(&m).expect("metrics serialize") + "\n")?;
            }
            Ok(())
        }
        Command::GradCheck { seeds, tolerance, out } => {
            let config = tiny_config();
            let mut reports = Vec::new();
            for seed in 0..seeds {
                let r = grad_check(&config, &tiny_corpus(seed), seed, tolerance, None)?;
                println!(
                    "seed {seed}: {} tensors, max relative error {:.3e}",
                    r.tensors.len(),
                    r.max_rel_error()
                );
                reports.push(r);
            }
            if let Some(p) = out {
                write(
                    &p,
                    serde_json::to_string_pretty(&reports).expect("report serializes") + "\n",
                )?;
            }
            let failed: Vec<String> = reports
                .iter()
                .flat_map(|r| {
                    r.failures()
                        .into_iter()
                        .map(move |t| format!("seed {} {}: {:.3e}", r.seed, t.name, t.max_rel_error))
                })
                .collect();
            if failed.is_empty() {
                println!("gradient check passed at tolerance {tolerance:e}");
                Ok(())
            } else {
                Err(CliError::Numerical(format!(
                    "gradient check failed:\n  {}",
                    failed.join("\n  ")
                )))
            }
        }
        Command::InspectMask { turns, kind, n } => {
            let kind = match kind {
                MaskArg::Global => MaskKind::Global,
                MaskArg::Local => MaskKind::Local(n),
            };
            print!("{}", build_mask(turns, kind)?);
            Ok(())
        }
        Command::Ablate {
            data,
            held_out,
            seeds,
            out,
            run,
        } => {
            let train_set = load(&data)?;
            let held = load(&held_out)?;
            if held.ontology.hash() != train_set.ontology.hash() {
                return Err(ModelError::OntologyMismatch {
                    expected: train_set.ontology.hash(),
                    found: held.ontology.hash(),
                }
                .into());
            }
            let cfg = run.resolve()?;
            let table = run_ablation(
                &train_set.ontology,
                &train_set.dialogues,
                &held.dialogues,
                &cfg.model,
                &cfg.train,
                &seeds,
                |r| println!("{:<8} seed {:>3}: joint {:.4}", r.variant, r.seed, r.joint_accuracy),
            )?;
            print!("\n{}", table.render());
            for (seed, delta) in table.deltas() {
                let sign = if delta > 0.0 {
                    "JOINT ahead"
                } else if delta < 0.0 {
                    "SV_ONLY ahead"
                } else {
                    "tie"
                };
                println!(
                    "seed {seed:>3}: {} - {} = {delta:+.4} ({sign})",
                    Variant::Joint,
                    Variant::SvOnly
                );
            }
            if let Some(p) = out {
                write(&p, table.to_csv())?;
            }
            Ok(())
        }
    }
}

fn gen_data(ontology: Option<&Path>, count: usize, seed: u64, out: &Path) -> CliResult {
    let ontology = match ontology {
        Some(p) => {
            require_file(p)?;
            let text = fs::read_to_string(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Ontology>(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => demo_ontology(),
    };
    let dialogues = generate_corpus(&ontology, count, seed, &GenShape::default())?;
    save_corpus(&CorpusFile::new(ontology, dialogues), out)?;
    println!("wrote {count} dialogues -> {}", out.display());
    Ok(())
}

fn train_cmd(data: &Path, out: &Path, csv_path: Option<&Path>, run: &RunArgs) -> CliResult {
    let corpus = load(data)?;
    let cfg = run.resolve()?;
    let vocab = Vocabulary::build(&corpus.ontology, &corpus.dialogues);
    let mut model = DstModel::new(cfg.model.clone(), corpus.ontology.clone(), vocab, cfg.train.seed)?;
    let start = Instant::now();
    let curve = train(&mut model, &corpus.dialogues, &cfg.train, |e| {
        println!(
            "epoch {:>3}  l_sv {:.4}  l_sop {:.4}  l_joint {:.4}  ({:.1}s)",
            e.epoch,
            e.l_sv,
            e.l_sop,
            e.l_joint,
            start.elapsed().as_secs_f64()
        );
    })?;
    save_checkpoint(&model, out)?;
    if let Some(p) = csv_path {
        write(p, loss_csv(&curve))?;
    }
    println!("checkpoint -> {}", out.display());
    Ok(())
}
