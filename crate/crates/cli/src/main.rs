//! `casa`: generate data, augment, train, align and evaluate.
//!
//! Exit codes: 0 success, 2 configuration error, 1 runtime error.
//! `CASA_LOG_LEVEL` (error, warn, info, debug) sets log verbosity.

mod config;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use casa_core::augment::{make_pair, AppliedOps, AugmentError, PcaLatentSpace};
use casa_core::dataio::{
    default_benchmark, load_manifest, load_sequence, parse_json, save_sequence, write_benchmark, write_file,
    DataError, SyntheticActionSpec, DEFAULT_BENCHMARK_SEED,
};
use casa_core::encoder::{encode_single, Checkpoint, EncoderError};
use casa_core::evalalign::{align, align_online, evaluate, AlignmentExport, EvalError};
use casa_core::numeric::substream;
use casa_core::skeleton::inverse_kinematics_angles;
use casa_core::training::{train_manifest, TrainError};
use clap::{Parser, Subcommand};
use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use config::CliConfig;

#[derive(Parser)]
#[command(name = "casa", version, about = "Skeletal sequence alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark (or a custom one) and its manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BENCHMARK_SEED)]
        seed: u64,
        /// JSON action spec, or a list of them, replacing the default actions.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Draw one augmented pair from a sequence.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Drawn from entropy (and recorded) when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the train split of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Align two sequences by nearest neighbours in embedding space.
    Align {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Embed each frame of `a` from its prefix only.
        #[arg(long)]
        online: bool,
        #[arg(long)]
        out: PathBuf,
        /// Draw a matching line for every k-th frame in the SVG.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Compute the evaluation report on the val split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Supplies the `eval` section.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

fn is_config_error(e: &casa_core::Error) -> bool {
    use casa_core::Error as E;
    let aug = |a: &AugmentError| matches!(a, AugmentError::InvalidConfig(_));
    let enc = |m: &EncoderError| matches!(m, EncoderError::InvalidConfig(_));
    let data = |d: &DataError| matches!(d, DataError::InvalidSpec(_));
    match e {
        E::Augment(a) => aug(a),
        E::Encoder(m) => enc(m),
        E::Data(d) => data(d),
        E::Train(t) => match t {
            TrainError::InvalidConfig(_) => true,
            TrainError::Augment(a) => aug(a),
            TrainError::Encoder(m) => enc(m),
            TrainError::Data(d) => data(d),
            _ => false,
        },
        E::Eval(v) => match v {
            EvalError::InvalidConfig(_) | EvalError::MissingSplit(_) => true,
            EvalError::Encoder(m) => enc(m),
            EvalError::Data(d) => data(d),
            _ => false,
        },
        _ => false,
    }
}

/// Classifies a library error by its kind.
fn core<E: Into<casa_core::Error>>(e: E) -> Failure {
    let e = e.into();
    if is_config_error(&e) {
        Failure::Config(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

/// Errors in files the user passed as configuration.
fn config<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn load_config(path: &Path) -> Result<CliConfig, Failure> {
    CliConfig::load(path).map_err(config)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display())).map_err(runtime)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    write_file(path, &text).map_err(runtime)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    One(Box<SyntheticActionSpec>),
    Many(Vec<SyntheticActionSpec>),
}

fn cmd_gen(out: &Path, seed: u64, spec: Option<&Path>) -> Result<(), Failure> {
    let manifest = match spec {
        None => default_benchmark(out, seed).map_err(core)?,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config(anyhow!("cannot read {}: {e}", path.display())))?;
            let specs = match parse_json::<SpecFile>(&text, &path.display().to_string()) {
                Ok(SpecFile::One(s)) => vec![*s],
                Ok(SpecFile::Many(v)) => v,
                // the untagged error hides the field; report it against the single-spec schema
                Err(_) => vec![parse_json::<SyntheticActionSpec>(&text, &path.display().to_string()).map_err(config)?],
            };
            write_benchmark(out, seed, &specs, "custom").map_err(core)?
        }
    };
    info!("wrote {} sequences", manifest.entries.len());
    println!("{}", out.join("manifest.json").display());
    Ok(())
}

/// Pair manifest written by `augment`.
#[derive(Serialize, Deserialize)]
struct PairManifest {
    original: String,
    augmented: String,
    j_gt: Vec<usize>,
    applied_ops: AppliedOps,
    seed: u64,
}

fn cmd_augment(input: &Path, out: &Path, cfg_path: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(cfg_path)?;
    cfg.augment.validate().map_err(core)?;
    let seq = load_sequence(input).map_err(runtime)?;
    let poses = inverse_kinematics_angles(&seq).map_err(core)?;
    let latent = if cfg.augment.enabled.latent {
        Some(PcaLatentSpace::fit_poses(std::slice::from_ref(&poses)).map_err(core)?)
    } else {
        None
    };
    let seed = seed.unwrap_or_else(|| rand::rng().random());
    let pair = make_pair(&seq, &poses, latent.as_ref(), &cfg.augment, &mut substream(seed, &[])).map_err(core)?;

    std::fs::create_dir_all(out).map_err(|e| runtime(anyhow!("cannot create {}: {e}", out.display())))?;
    save_sequence(&pair.original, out.join("original.json")).map_err(runtime)?;
    save_sequence(&pair.augmented, out.join("augmented.json")).map_err(runtime)?;
    let manifest = PairManifest {
        original: "original.json".into(),
        augmented: "augmented.json".into(),
        j_gt: pair.j_gt,
        applied_ops: pair.applied_ops,
        seed,
    };
    write_json(&out.join("pair.json"), &manifest)?;
    let ops = pair.applied_ops;
    let fired: Vec<&str> = [
        ("latent", ops.latent),
        ("angle", ops.angle),
        ("temporal", ops.temporal),
        ("translation", ops.translation),
        ("flip", ops.flip),
    ]
    .iter()
    .filter(|(_, on)| *on)
    .map(|(name, _)| *name)
    .collect();
    println!(
        "applied: {} | {} -> {} frames | seed {seed}",
        if fired.is_empty() { "none".to_string() } else { fired.join(", ") },
        pair.original.len(),
        pair.augmented.len()
    );
    Ok(())
}

fn cmd_train(
    manifest: &Path,
    cfg_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let mut cfg = load_config(cfg_path)?.train_config();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(core)?;
    let manifest = load_manifest(manifest).map_err(runtime)?;
    let resume = resume.map(load_checkpoint).transpose()?;
    std::fs::create_dir_all(out).map_err(|e| runtime(anyhow!("cannot create {}: {e}", out.display())))?;
    let outcome = train_manifest(&manifest, &cfg, Some(out), resume).map_err(core)?;
    match outcome.history.last() {
        Some(last) => println!("epoch {} mean loss {:.6}", last.epoch, last.mean_loss),
        None => println!("epoch {} (nothing to train)", outcome.checkpoint.epoch),
    }
    Ok(())
}

fn cmd_align(ckpt: &Path, a: &Path, b: &Path, online: bool, out: &Path, every: usize) -> Result<(), Failure> {
    if every == 0 {
        return Err(config(anyhow!("--every must be positive")));
    }
    let ckpt = load_checkpoint(ckpt)?;
    let sa = load_sequence(a).map_err(runtime)?;
    let sb = load_sequence(b).map_err(runtime)?;
    let alignment = if online {
        align_online(&sa, &sb, &ckpt.params, &ckpt.config).map_err(core)?
    } else {
        let ea = encode_single(&sa, &ckpt.params, &ckpt.config).map_err(core)?;
        let eb = encode_single(&sb, &ckpt.params, &ckpt.config).map_err(core)?;
        align(&ea.u, &eb.u).map_err(core)?
    };
    let export = AlignmentExport {
        source: a.display().to_string(),
        target: b.display().to_string(),
        nn: alignment.nn.clone(),
        distances: alignment.distances.clone(),
    };
    write_json(out, &export)?;
    let svg_path = out.with_extension("svg");
    let svg = svg::matching_lines(&export.source, &export.target, &export.nn, alignment.target_len, every);
    write_file(&svg_path, &svg).map_err(runtime)?;
    match alignment.kendalls_tau() {
        Ok(tau) => println!("tau {tau:.4} | {} -> {} frames | {}", sa.len(), sb.len(), svg_path.display()),
        Err(_) => println!("{} -> {} frames | {}", sa.len(), sb.len(), svg_path.display()),
    }
    Ok(())
}

fn cmd_eval(ckpt: &Path, manifest: &Path, out: &Path, cfg_path: Option<&Path>) -> Result<(), Failure> {
    let eval_cfg = match cfg_path {
        Some(p) => load_config(p)?.eval,
        None => Default::default(),
    };
    let manifest = load_manifest(manifest).map_err(runtime)?;
    let ckpt = load_checkpoint(ckpt)?;
    let report = evaluate(&ckpt, &manifest, &eval_cfg).map_err(core)?;
    write_json(out, &report)?;
    let join = |m: &std::collections::BTreeMap<String, f64>| {
        m.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" ")
    };
    println!(
        "tau {:.4} | progress R2 {:.4} | classification {} | AP@K {} | pairs {}",
        report.kendalls_tau,
        report.phase_progress_r2,
        join(&report.phase_classification),
        join(&report.ap_at_k),
        report.num_pairs
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen { out, seed, spec } => cmd_gen(&out, seed, spec.as_deref()),
        Command::Augment { input, out, config, seed } => cmd_augment(&input, &out, &config, seed),
        Command::Train { manifest, config, out, resume, epochs, seed } => {
            cmd_train(&manifest, &config, &out, resume.as_deref(), epochs, seed)
        }
        Command::Align { ckpt, a, b, online, out, every } => cmd_align(&ckpt, &a, &b, online, &out, every),
        Command::Eval { ckpt, manifest, out, config } => cmd_eval(&ckpt, &manifest, &out, config.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CASA_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
