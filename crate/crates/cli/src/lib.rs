//! `robustcnn` command line.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use robustcnn::flops::count_flops;
use robustcnn::model::checkpoint;
use robustcnn::model::presets::untuned;
use robustcnn::model::{preset, preset_names, tune_stage3_depth, Model, ModelSpec, TuneResult};
use robustcnn::train::{
    banner, corrupt, evaluate, load_dataset, save_dataset, synthetic, train, CorruptionFamily,
    CorruptionSpec, DistillConfig, ModelClassifier, RobustnessReport, Teacher, TrainConfig,
    LOG_HEADER,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable naming the tuner's memo directory.
pub const CACHE_ENV: &str = "ROBUSTCNN_CACHE";

/// Bad input detected by the front end itself.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "robustcnn", version, about = "Robust CNN architecture toolkit")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Tsv,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Architecture config file (`key = value` lines).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named architecture; see `presets`.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory with a manifest.tsv.
    #[arg(long)]
    dataset: PathBuf,
    /// Held-out directory scored after every epoch.
    #[arg(long)]
    val_dataset: Option<PathBuf>,
    /// Training config file (`key = value` lines).
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Where to write the trained model.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write the epoch log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer multiply-accumulate counts.
    Flops {
        #[command(flatten)]
        model: ModelArgs,
        /// Override the input resolution.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Pick the stage-3 depth that matches a MAC budget.
    Tune {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
    /// Train from scratch on a dataset directory.
    Train(TrainArgs),
    /// Train a student against a frozen teacher checkpoint.
    Distill {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0.5)]
        kd_weight: f64,
    },
    /// Clean and corrupted top-1 error of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated families, or `all`.
        #[arg(long)]
        corruptions: Option<String>,
        #[arg(long, default_value = "1,2,3,4,5")]
        severities: String,
        /// Report a normalized corruption error against this saved report.
        #[arg(long)]
        normalize_by: Option<PathBuf>,
        /// Save the report (TSV) here.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
    },
    /// Write corrupted copies of a dataset as `<out>/<family>/<severity>/`.
    CorruptGen {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "all")]
        families: String,
        #[arg(long, default_value = "1,2,3,4,5")]
        severities: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// List named architectures, or print one as a config.
    Presets {
        /// Print this preset's config instead of the list.
        #[arg(long)]
        show: Option<String>,
    },
    /// Write a synthetic labelled dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 0.15)]
        noise: f64,
    },
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return EXIT_CONFIG;
        }
        if let Some(re) = cause.downcast_ref::<robustcnn::Error>() {
            return if re.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            };
        }
    }
    EXIT_RUNTIME
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if cli.threads > 0 {
        // Fails only if a pool already exists, e.g. on a second in-process run.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let fmt = cli.format;
    match cli.command {
        Command::Flops { model, resolution } => cmd_flops(&model, resolution, fmt, out),
        Command::Tune { model, budget, tol } => cmd_tune(&model, budget, tol, out, err),
        Command::Train(args) => cmd_train(&args, None, cli.seed, out, err),
        Command::Distill {
            train,
            teacher,
            temperature,
            kd_weight,
        } => {
            let cfg = DistillConfig {
                temperature,
                weight: kd_weight,
            };
            cmd_train(&train, Some((teacher, cfg)), cli.seed, out, err)
        }
        Command::Eval {
            checkpoint,
            dataset,
            corruptions,
            severities,
            normalize_by,
            output,
            batch_size,
        } => cmd_eval(
            &EvalArgs {
                checkpoint,
                dataset,
                corruptions,
                severities,
                normalize_by,
                output,
                batch_size,
            },
            cli.seed,
            fmt,
            out,
        ),
        Command::CorruptGen {
            dataset,
            families,
            severities,
            out: dir,
        } => cmd_corrupt_gen(&dataset, &families, &severities, &dir, cli.seed, out),
        Command::Presets { show } => cmd_presets(show.as_deref(), fmt, out),
        Command::Synth {
            out: dir,
            samples,
            classes,
            resolution,
            noise,
        } => {
            let ds = synthetic(samples, classes, resolution, noise, cli.seed)?;
            save_dataset(&dir, &ds)?;
            writeln!(
                out,
                "wrote {samples} images of {classes} classes to {}",
                dir.display()
            )?;
            Ok(())
        }
    }
}

/// Spec and, for presets, the budget it is tuned against.
fn resolve_model(args: &ModelArgs) -> Result<(ModelSpec, Option<f64>)> {
    match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
            let spec: ModelSpec = text
                .parse()
                .with_context(|| format!("in {}", path.display()))?;
            Ok((spec, None))
        }
        (None, Some(name)) => {
            let p = preset(name)?;
            Ok((p.spec, p.budget))
        }
        _ => Err(invalid("give exactly one of --config or --preset")),
    }
}

fn cmd_flops(
    args: &ModelArgs,
    resolution: Option<usize>,
    fmt: Format,
    out: &mut dyn Write,
) -> Result<()> {
    let (mut spec, _) = resolve_model(args)?;
    if let Some(r) = resolution {
        spec.input_resolution = r;
    }
    let start = Instant::now();
    let model = Model::build(&spec)?;
    let report = count_flops(&model, model.input_shape(1))?;
    match fmt {
        Format::Tsv => write!(out, "{}", report.to_tsv())?,
        Format::Text => {
            write!(out, "{}", report.to_table())?;
            writeln!(
                out,
                "counted in {:.1} ms",
                start.elapsed().as_secs_f64() * 1e3
            )?;
        }
    }
    Ok(())
}

fn cache_key(spec: &ModelSpec, budget: f64, tol: f64) -> String {
    let mut h = Sha256::new();
    h.update(spec.to_config().as_bytes());
    h.update(format!("budget={budget:e};tol={tol:e}").as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn cached(dir: &Path, key: &str) -> Option<TuneResult> {
    let text = fs::read_to_string(dir.join(format!("{key}.tune"))).ok()?;
    let (d, m) = text.trim().split_once('\t')?;
    Some(TuneResult {
        depth: d.parse().ok()?,
        macs: m.parse().ok()?,
    })
}

fn cmd_tune(
    args: &ModelArgs,
    budget: Option<f64>,
    tol: f64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let spec = match (&args.config, &args.preset) {
        (None, Some(name)) => untuned(name)?.0,
        _ => resolve_model(args)?.0,
    };
    let preset_budget = args
        .preset
        .as_deref()
        .map(untuned)
        .transpose()?
        .and_then(|p| p.1);
    let budget = budget
        .or(preset_budget)
        .ok_or_else(|| invalid("--budget is required for this model"))?;
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let key = cache_key(&spec, budget, tol);
    let hit = cache.as_deref().and_then(|d| cached(d, &key));
    let result = match hit {
        Some(r) => {
            writeln!(err, "cache hit")?;
            r
        }
        None => {
            let r = tune_stage3_depth(&spec, budget, tol)?;
            if let Some(dir) = &cache {
                fs::create_dir_all(dir)?;
                fs::write(
                    dir.join(format!("{key}.tune")),
                    format!("{}\t{}\n", r.depth, r.macs),
                )?;
            }
            r
        }
    };
    writeln!(
        out,
        "stage-3 depth {} gives {} MACs ({:.3}G, {:+.2}% of budget {:.3}G)",
        result.depth,
        result.macs,
        result.macs as f64 / 1e9,
        (result.macs as f64 / budget - 1.0) * 100.0,
        budget / 1e9
    )?;
    Ok(())
}

fn load_train_config(args: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match &args.train_config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<TrainConfig>()?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(invalid(format!(
            "{what} `{}` does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_train(
    args: &TrainArgs,
    teacher: Option<(PathBuf, DistillConfig)>,
    seed: u64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let (spec, _) = resolve_model(&args.model)?;
    let cfg = load_train_config(args, seed)?;
    let teacher = match teacher {
        Some((path, dcfg)) => {
            dcfg.validate()?;
            require_file(&path, "teacher checkpoint")?;
            Some((checkpoint::load(&path)?, dcfg))
        }
        None => None,
    };
    let mut model = Model::build(&spec)?;
    let data = load_dataset(&args.dataset, Some(spec.num_classes))?;
    let val = args
        .val_dataset
        .as_deref()
        .map(|p| load_dataset(p, Some(spec.num_classes)))
        .transpose()?;
    let mut store = model.init_params::<f32>(seed);
    writeln!(err, "{}", banner(&cfg))?;
    let mut log_file = args.log.as_deref().map(fs::File::create).transpose()?;
    writeln!(out, "{LOG_HEADER}")?;
    if let Some(f) = log_file.as_mut() {
        writeln!(f, "{LOG_HEADER}")?;
    }
    let t = teacher.as_ref().map(|((m, s), c)| Teacher {
        model: m,
        store: s,
        cfg: *c,
    });
    let mut write_err = None;
    train(
        &mut model,
        &mut store,
        &data,
        val.as_ref(),
        &cfg,
        t.as_ref(),
        &mut |log| {
            let line = log.to_string();
            let r = writeln!(out, "{line}").and_then(|_| match log_file.as_mut() {
                Some(f) => writeln!(f, "{line}"),
                None => Ok(()),
            });
            if let Err(e) = r {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    checkpoint::save(&args.checkpoint, &model, &store)?;
    writeln!(err, "saved {}", args.checkpoint.display())?;
    Ok(())
}

struct EvalArgs {
    checkpoint: PathBuf,
    dataset: PathBuf,
    corruptions: Option<String>,
    severities: String,
    normalize_by: Option<PathBuf>,
    output: Option<PathBuf>,
    batch_size: usize,
}

fn parse_families(list: &str) -> Result<Vec<CorruptionFamily>> {
    if list.trim() == "all" {
        return Ok(CorruptionFamily::ALL.to_vec());
    }
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Ok(s.parse()?))
        .collect()
}

fn parse_severities(list: &str) -> Result<Vec<u8>> {
    list.split(',')
        .map(|s| match s.trim().parse::<u8>() {
            Ok(v @ 1..=5) => Ok(v),
            _ => Err(invalid(format!("severity `{s}` is not in 1..=5"))),
        })
        .collect()
}

fn cmd_eval(args: &EvalArgs, seed: u64, fmt: Format, out: &mut dyn Write) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    let families = args
        .corruptions
        .as_deref()
        .map(parse_families)
        .transpose()?
        .unwrap_or_default();
    let severities = parse_severities(&args.severities)?;
    let baseline = match &args.normalize_by {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?;
            Some(RobustnessReport::from_tsv(&text)?)
        }
        None => None,
    };
    let data = load_dataset(&args.dataset, None)?;
    let (model, store) = checkpoint::load(&args.checkpoint)?;
    if data.num_classes > model.spec.num_classes {
        return Err(invalid(format!(
            "dataset has {} classes, model predicts {}",
            data.num_classes, model.spec.num_classes
        )));
    }
    let data = robustcnn::train::Dataset::new(data.images, data.labels, model.spec.num_classes)?;
    let clf = ModelClassifier {
        model: &model,
        store: &store,
    };
    let report = evaluate(&clf, &data, &families, &severities, seed, args.batch_size)?;
    match fmt {
        Format::Tsv => write!(out, "{}", report.to_tsv())?,
        Format::Text => write!(out, "{}", report.to_table())?,
    }
    if let Some(base) = &baseline {
        writeln!(
            out,
            "normalized corruption error: {:.2}",
            report.normalized_by(base)?
        )?;
    }
    if let Some(p) = &args.output {
        fs::write(p, report.to_tsv())?;
    }
    Ok(())
}

fn cmd_corrupt_gen(
    dataset: &Path,
    families: &str,
    severities: &str,
    dir: &Path,
    seed: u64,
    out: &mut dyn Write,
) -> Result<()> {
    let families = parse_families(families)?;
    let severities = parse_severities(severities)?;
    let data = load_dataset(dataset, None)?;
    for &family in &families {
        for &severity in &severities {
            let images = corrupt(&data.images, &CorruptionSpec::new(family, severity, seed))?;
            let target = dir.join(family.to_string()).join(severity.to_string());
            save_dataset(&target, &data.with_images(images)?)?;
            writeln!(out, "{}", target.display())?;
        }
    }
    Ok(())
}

fn cmd_presets(show: Option<&str>, fmt: Format, out: &mut dyn Write) -> Result<()> {
    if let Some(name) = show {
        let p = preset(name)?;
        writeln!(out, "# {}: {}", p.name, p.description)?;
        write!(out, "{}", p.spec.to_config())?;
        return Ok(());
    }
    let presets = preset_names()
        .iter()
        .map(|n| preset(n))
        .collect::<robustcnn::Result<Vec<_>>>()?;
    let wn = presets.iter().map(|p| p.name.len()).max().unwrap_or(0);
    let wd = presets
        .iter()
        .map(|p| p.description.len())
        .max()
        .unwrap_or(0);
    for p in presets {
        let d = p.spec.depths;
        match fmt {
            Format::Tsv => writeln!(
                out,
                "{}\t{}\t{},{},{},{}",
                p.name, p.description, d[0], d[1], d[2], d[3]
            )?,
            Format::Text => writeln!(
                out,
                "{:<wn$}  {:<wd$}  depths {:?}",
                p.name, p.description, d
            )?,
        }
    }
    Ok(())
}
