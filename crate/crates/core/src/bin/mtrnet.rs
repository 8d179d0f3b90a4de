use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtrnet_core::checkpoint;
use mtrnet_core::corpus::{gen_corpus, read_corpus, write_corpus, CorpusConfig, CorpusFile, CorpusSpec};
use mtrnet_core::gradcheck::{run_suite, SuiteOptions};
use mtrnet_core::lstmp::Gate;
use mtrnet_core::multitask::{FeedbackConfig, Info};
use mtrnet_core::network::{evaluate, InitConfig, MetricsTable, Mode, Model, ModelSpec, TowerSize};
use mtrnet_core::sweep::{run_sweep, train_model, Experiment, SweepSpec};
use mtrnet_core::trainer::TrainConfig;
use mtrnet_core::{Error, Result};

const FEEDBACK_HELP: &str = "Feedback configurations use the compact form TARGETS:INFO, where TARGETS \
is a subset of the gate letters i, f, o, g and INFO is r, p or r,p (the other tower's recurrent or \
non-recurrent projection from the previous frame). Examples: g:r, ifo:r, ifog:r,p. \"none\" disables \
all links.";

/// Multi-task recurrent LSTMP models for joint phone and language recognition.
#[derive(Parser)]
#[command(name = "mtrnet", version, after_help = FEEDBACK_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bilingual corpus (train.txt and test.txt).
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus file.
    Eval(EvalArgs),
    /// Train the baseline and every feedback configuration; print one row each.
    Sweep(SweepArgs),
    /// Verify analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    languages: usize,
    #[arg(long, default_value_t = 10)]
    phones_per_language: usize,
    #[arg(long, default_value_t = 8)]
    feat_dim: usize,
    #[arg(long, default_value_t = 240)]
    utterances_per_language: usize,
    #[arg(long, default_value_t = 30)]
    frames_min: usize,
    #[arg(long, default_value_t = 60)]
    frames_max: usize,
    /// Fraction of each emission mean shared with language 0, in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    overlap: f64,
    #[arg(long, default_value_t = 0.3)]
    stddev: f64,
    #[arg(long, default_value_t = 0.6)]
    self_loop: f64,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// single (one bilingual tower) or multitask (ASR and LR towers).
    #[arg(long, default_value = "multitask")]
    mode: String,
    /// Feedback configuration TARGETS:INFO (see --help); overrides --info/--targets.
    #[arg(long)]
    config: Option<String>,
    /// Feedback information: r, p or r,p.
    #[arg(long)]
    info: Option<String>,
    /// Gates receiving feedback, e.g. g or ifo.
    #[arg(long)]
    targets: Option<String>,
    #[arg(long, default_value_t = 64)]
    cell_dim: usize,
    /// Recurrent and non-recurrent projection size of the ASR tower.
    #[arg(long, default_value_t = 16)]
    proj_dim: usize,
    #[arg(long, default_value_t = 32)]
    lr_cell_dim: usize,
    #[arg(long, default_value_t = 8)]
    lr_proj_dim: usize,
    #[arg(long, default_value_t = 5)]
    target_delay: usize,
    #[arg(long, default_value_t = 2)]
    splice_context: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda_asr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_lr: f64,
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 0.1)]
    holdout_fraction: f64,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    /// Shuffling seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    init_seed: u64,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    /// Halve the learning rate when the holdout loss stops improving (on|off).
    #[arg(long, default_value = "on")]
    lr_halving: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training log path (default: checkpoint path with .log appended).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Also report FER under language-aware masking (multitask only).
    #[arg(long)]
    masked: bool,
    #[arg(long, default_value = "eval")]
    label: String,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Restrict the sweep to these configurations (comma-free TARGETS:INFO,
    /// repeat the flag or separate with spaces); default is all 12.
    #[arg(long, num_args = 1..)]
    configs: Option<Vec<String>>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Check only these configurations.
    #[arg(long, num_args = 1..)]
    config: Option<Vec<String>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    frames: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MTRNET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("MTRNET_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn cmd_gen(a: GenArgs) -> Result<bool> {
    let cfg = CorpusConfig {
        seed: a.seed,
        languages: a.languages,
        phones_per_language: a.phones_per_language,
        feat_dim: a.feat_dim,
        utterances_per_language: a.utterances_per_language,
        frames_min: a.frames_min,
        frames_max: a.frames_max,
        overlap: a.overlap,
        stddev: a.stddev,
        self_loop: a.self_loop,
    };
    let corpus = gen_corpus(&CorpusSpec::from_config(&cfg)?)?;
    fs::create_dir_all(&a.out_dir)?;
    for (name, utts) in [("train.txt", corpus.train), ("test.txt", corpus.test)] {
        let file = CorpusFile {
            feat_dim: cfg.feat_dim,
            phone_classes: cfg.phone_classes(),
            language_classes: cfg.languages,
            utterances: utts,
        };
        let path = a.out_dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        write_corpus(&mut w, &file)?;
        w.flush()?;
        eprintln!("wrote {} ({} utterances)", path.display(), file.utterances.len());
    }
    Ok(true)
}

fn load_corpus(path: &Path) -> Result<CorpusFile> {
    let f = File::open(path).map_err(|e| Error::config(format!("cannot open corpus {}: {e}", path.display())))?;
    read_corpus(BufReader::new(f)).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn parse_feedback(m: &ModelArgs) -> Result<FeedbackConfig> {
    if let Some(c) = &m.config {
        return FeedbackConfig::parse(c);
    }
    match (&m.info, &m.targets) {
        (None, None) => FeedbackConfig::parse("g:r"),
        (info, targets) => {
            let info = info.as_deref().unwrap_or("r");
            let targets = targets.as_deref().unwrap_or("g");
            let gates = targets
                .chars()
                .filter(|c| *c != ',')
                .map(|c| Gate::from_letter(c).ok_or_else(|| Error::config(format!("unknown gate '{c}' in --targets"))))
                .collect::<Result<Vec<_>>>()?;
            let infos = info
                .split(',')
                .flat_map(|s| s.trim().chars())
                .map(|c| match c {
                    'r' => Ok(Info::Recurrent),
                    'p' => Ok(Info::NonRecurrent),
                    _ => Err(Error::config(format!("unknown info '{c}' in --info"))),
                })
                .collect::<Result<Vec<_>>>()?;
            FeedbackConfig::new(&infos, &gates)
        }
    }
}

fn model_spec(m: &ModelArgs, corpus: &CorpusFile) -> Result<ModelSpec> {
    let mode = Mode::parse(&m.mode)?;
    let feedback = match mode {
        Mode::SingleBilingual => FeedbackConfig::none(),
        Mode::Multitask => parse_feedback(m)?,
    };
    let spec = ModelSpec {
        mode,
        feat_dim: corpus.feat_dim,
        splice_context: m.splice_context,
        asr: TowerSize {
            cell: m.cell_dim,
            rproj: m.proj_dim,
            pproj: m.proj_dim,
        },
        lr: TowerSize {
            cell: m.lr_cell_dim,
            rproj: m.lr_proj_dim,
            pproj: m.lr_proj_dim,
        },
        feedback,
        phone_classes: corpus.phone_classes,
        language_classes: corpus.language_classes,
        target_delay: m.target_delay,
        lambda_asr: m.lambda_asr,
        lambda_lr: m.lambda_lr,
    };
    spec.validate()?;
    Ok(spec)
}

fn experiment(m: &ModelArgs, o: &OptimArgs, corpus: &CorpusFile) -> Result<Experiment> {
    let lr_halving = match o.lr_halving.as_str() {
        "on" => true,
        "off" => false,
        other => return Err(Error::config(format!("--lr-halving must be on or off, got '{other}'"))),
    };
    if !(0.0..1.0).contains(&o.holdout_fraction) {
        return Err(Error::config(format!(
            "--holdout-fraction must lie in [0, 1), got {}",
            o.holdout_fraction
        )));
    }
    let train = TrainConfig {
        learning_rate: o.learning_rate,
        momentum: o.momentum,
        clip_norm: o.clip_norm,
        epochs: o.epochs,
        batch_size: o.batch_size,
        seed: o.seed,
        lr_halving,
    };
    train.validate()?;
    Ok(Experiment {
        spec: model_spec(m, corpus)?,
        init: InitConfig {
            seed: o.init_seed,
            scale: o.init_scale,
            ..InitConfig::default()
        },
        train,
        holdout_fraction: o.holdout_fraction,
    })
}

fn cmd_train(a: TrainArgs) -> Result<bool> {
    let corpus = load_corpus(&a.train)?;
    let exp = experiment(&a.model, &a.optim, &corpus)?;
    let spec = exp.spec.clone();
    let (model, log) = train_model(&exp, spec.mode, spec.feedback, &corpus.utterances)?;
    checkpoint::save_file(&a.out, &model)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        p.into()
    });
    fs::write(&log_path, log.render(true))?;
    eprintln!(
        "wrote {} ({} epochs, log {})",
        a.out.display(),
        log.epochs.len(),
        log_path.display()
    );
    Ok(true)
}

fn check_compatible(model: &Model, corpus: &CorpusFile, path: &Path) -> Result<()> {
    let s = &model.spec;
    if (s.feat_dim, s.phone_classes, s.language_classes)
        != (corpus.feat_dim, corpus.phone_classes, corpus.language_classes)
    {
        return Err(Error::dims(
            "eval",
            format!(
                "checkpoint expects feat {} / phones {} / languages {}, corpus {} has {} / {} / {}",
                s.feat_dim,
                s.phone_classes,
                s.language_classes,
                path.display(),
                corpus.feat_dim,
                corpus.phone_classes,
                corpus.language_classes
            ),
        ));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<bool> {
    let model = checkpoint::load_file(&a.checkpoint)?;
    if a.masked && model.spec.mode != Mode::Multitask {
        return Err(Error::config(
            "--masked needs a language tower; this checkpoint is a single-mode model",
        ));
    }
    let corpus = load_corpus(&a.test)?;
    check_compatible(&model, &corpus, &a.test)?;
    let report = evaluate(&model, &corpus.utterances, &a.label)?;
    print!(
        "{}",
        MetricsTable {
            reports: std::slice::from_ref(&report),
            masked: a.masked
        }
    );
    Ok(true)
}

fn cmd_sweep(a: SweepArgs) -> Result<bool> {
    let train = load_corpus(&a.train)?;
    let test = load_corpus(&a.test)?;
    let exp = experiment(&a.model, &a.optim, &train)?;
    let probe = Model::zeros(exp.spec.clone())?;
    check_compatible(&probe, &test, &a.test)?;
    let sweep = match &a.configs {
        None => SweepSpec::default_grid(),
        Some(list) => SweepSpec::from_configs(
            list.iter()
                .map(|c| FeedbackConfig::parse(c))
                .collect::<Result<Vec<_>>>()?,
        )?,
    };
    let rows = run_sweep(&exp, &sweep, &train.utterances, &test.utterances, |r| {
        eprintln!("finished {}", r.label)
    })?;
    print!(
        "{}",
        MetricsTable {
            reports: &rows,
            masked: true
        }
    );
    Ok(true)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let only = a
        .config
        .map(|list| list.iter().map(|c| FeedbackConfig::parse(c)).collect::<Result<Vec<_>>>())
        .transpose()?;
    let opts = SuiteOptions {
        seed: a.seed,
        eps: a.eps,
        tol: a.tol,
        frames: a.frames,
        only,
    };
    let reports = run_suite(&opts)?;
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.passed;
    }
    println!("{} of {} checks passed", reports.iter().filter(|r| r.passed).count(), reports.len());
    Ok(ok)
}
