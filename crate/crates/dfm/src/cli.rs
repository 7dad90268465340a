//! The `dfm` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dfm_core::config::{CODE_LENGTHS, REGULARIZATION_GRID};
use dfm_core::fm::fm_train_with;
use dfm_core::opt::resume_dfm;
use dfm_core::synthetic::{planted_dfm, random_instances, random_model_pair, PlantedSpec};
use dfm_core::{
    initialize, ndcg_at_k, split_per_user, Dataset, FmSolver, Predictor, RankingRun, TrainConfig,
};
use rand::SeedableRng;

use crate::bench::{format_table, measure_ttc};
use crate::container::{self, decode_checkpoint, encode_checkpoint, load_model, read_file, write_atomic, Checkpoint, Model};
use crate::error::{Error, Result};
use crate::grid::{eval_grid, sig6, write_csv};
use crate::libfm::{self, ParseOptions};

#[derive(Debug, Parser)]
#[command(name = "dfm", version, about = "Train and evaluate discrete factorization machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split ratings per user into train and test files.
    Split(SplitArgs),
    /// Train a real-valued FM.
    TrainFm(TrainFmArgs),
    /// Train a discrete FM.
    TrainDfm(TrainDfmArgs),
    /// Write one score per input instance.
    Predict(PredictArgs),
    /// NDCG@1..K of a model on a test file with user and item fields.
    Eval(EvalArgs),
    /// Compare float and binary scoring time.
    Bench(BenchArgs),
    /// NDCG@1..10 over a grid of beta and code lengths, as CSV.
    Grid(GridArgs),
    /// Write a planted synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    split_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Code length / embedding dimension.
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// l2 on the linear weights.
    #[arg(long, default_value_t = 1e-2)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum outer iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Relative objective change that stops training.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainFmArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// l2 on the embeddings.
    #[arg(long, default_value_t = 0.1)]
    embed_l2: f64,
    /// Use SGD with this learning rate instead of coordinate descent.
    #[arg(long)]
    sgd_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainDfmArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Strength of the delegate coupling.
    #[arg(long, default_value_t = 1e-2)]
    beta: f64,
    /// Visit bits in a seeded random order.
    #[arg(long)]
    shuffle: bool,
    /// Also write the optimizer state here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, requires_all = ["model_dfm", "input"], conflicts_with = "synthetic")]
    model_fm: Option<PathBuf>,
    #[arg(long, requires = "model_fm")]
    model_dfm: Option<PathBuf>,
    #[arg(long, requires = "model_fm")]
    input: Option<PathBuf>,
    /// Time random models on random instances instead of files.
    #[arg(long, required_unless_present = "model_fm")]
    synthetic: bool,
    #[arg(long, default_value_t = 50_000)]
    features: usize,
    #[arg(long, default_value_t = 30)]
    nnz: usize,
    #[arg(long, default_value_t = 100_000)]
    instances: usize,
    /// Code lengths for the synthetic study.
    #[arg(long, value_delimiter = ',', default_values_t = CODE_LENGTHS)]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, env = "DFM_THREADS", default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = REGULARIZATION_GRID)]
    betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = CODE_LENGTHS)]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 1e-2)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    iters: Option<usize>,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    users: usize,
    #[arg(long, default_value_t = 25)]
    items: usize,
    /// Vocabulary of item content words.
    #[arg(long, default_value_t = 15)]
    words: usize,
    #[arg(long, default_value_t = 3)]
    words_per_item: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 2000)]
    instances: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

fn read_dataset(path: &Path, opts: ParseOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    libfm::parse_libfm_with(BufReader::new(file), opts).map_err(|e| match e {
        Error::Parse { line, message } => Error::Format(format!("{}:{line}: {message}", path.display())),
        e => e,
    })
}

fn read_training(path: &Path) -> Result<Dataset> {
    let d = read_dataset(path, ParseOptions::default())?;
    if d.is_empty() {
        return Err(Error::Format(format!("{}: no instances", path.display())));
    }
    Ok(d)
}

fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_atomic(path, libfm::to_string(d).as_bytes())
}

fn check_non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Usage(format!("--{name} must be a finite value >= 0")))
    }
}

fn base_config(mut cfg: TrainConfig, a: &TrainArgs) -> Result<TrainConfig> {
    if a.k == 0 {
        return Err(Error::Usage("--k must be at least 1".into()));
    }
    check_non_negative("alpha", a.alpha)?;
    cfg = cfg.with_k(a.k).with_alpha(a.alpha).with_seed(a.seed);
    if let Some(i) = a.iters {
        cfg.max_outer_iters = i;
    }
    if let Some(t) = a.tol {
        check_non_negative("tol", t)?;
        cfg.tol = t;
    }
    Ok(cfg)
}

fn progress_line(iteration: usize, objective: f64) {
    eprintln!("iter={iteration} obj={objective}");
}

fn split(a: SplitArgs) -> Result<()> {
    if !(a.split_fraction > 0.0 && a.split_fraction < 1.0) {
        return Err(Error::Usage("--split-fraction must lie in (0, 1)".into()));
    }
    let d = read_training(&a.input)?;
    let s = split_per_user(&d, a.split_fraction, a.seed)?;
    for w in &s.warnings {
        eprintln!("warning: user {} has {} rating(s); kept for training", w.user, w.ratings);
    }
    write_dataset(&a.train_out, &s.train)?;
    write_dataset(&a.test_out, &s.test)?;
    eprintln!("train={} test={}", s.train.len(), s.test.len());
    Ok(())
}

fn train_fm(a: TrainFmArgs) -> Result<()> {
    check_non_negative("embed-l2", a.embed_l2)?;
    let mut cfg = base_config(TrainConfig::fm(), &a.train)?.with_embed_l2(a.embed_l2);
    if let Some(rate) = a.sgd_rate {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Usage("--sgd-rate must be positive".into()));
        }
        cfg.solver = FmSolver::Sgd { learning_rate: rate };
    }
    let d = read_training(&a.train.input)?;
    let m = fm_train_with(&d, &cfg, progress_line)?;
    container::save_fm(&a.train.out, &m)
}

fn train_dfm(a: TrainDfmArgs) -> Result<()> {
    check_non_negative("beta", a.beta)?;
    let mut cfg = base_config(TrainConfig::dfm(), &a.train)?.with_beta(a.beta);
    cfg.shuffle_sweep = a.shuffle;
    let d = read_training(&a.train.input)?;
    let progress = |p: dfm_core::opt::Progress| progress_line(p.iteration, p.objective);
    let st = match &a.resume {
        Some(path) => {
            let st = decode_checkpoint(&read_file(path)?)?.restore(&d)?;
            resume_dfm(&d, &cfg, st, progress)?
        }
        None => {
            let st = initialize(&d, &cfg)?;
            progress_line(0, st.objective_trace()[0]);
            resume_dfm(&d, &cfg, st, progress)?
        }
    };
    if let Some(path) = &a.checkpoint {
        write_atomic(path, &encode_checkpoint(&Checkpoint::of(&st)))?;
    }
    container::save_dfm(&a.train.out, &st.to_model())
}

fn check_dimensions(model: &Model, d: &Dataset) -> Result<()> {
    if d.n_features() > model.n_features() {
        return Err(Error::Format(format!(
            "input has {} features but the model only {}",
            d.n_features(),
            model.n_features()
        )));
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let d = read_dataset(&a.input, ParseOptions { average_duplicates: false })?;
    check_dimensions(&model, &d)?;
    let mut text = String::with_capacity(d.len() * 20);
    for inst in d.instances() {
        text.push_str(&libfm::format_f64(model.predict(&inst.features)?));
        text.push('\n');
    }
    match &a.out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.k_max == 0 {
        return Err(Error::Usage("--k-max must be at least 1".into()));
    }
    let model = load_model(&a.model)?;
    let d = read_training(&a.input)?;
    check_dimensions(&model, &d)?;
    let run = RankingRun::from_predictions(&model, &d, a.k_max)?;
    println!("users={}", run.users().len());
    for k in 1..=a.k_max {
        println!("ndcg@{k}={}", sig6(ndcg_at_k(&run, k)?.mean));
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let threads = a.threads.max(1);
    let reports = if let (Some(fm), Some(dfm), Some(input)) = (&a.model_fm, &a.model_dfm, &a.input) {
        let (Model::Fm(fm), Model::Dfm(dfm)) = (load_model(fm)?, load_model(dfm)?) else {
            return Err(Error::Usage("--model-fm needs an FM file and --model-dfm a DFM file".into()));
        };
        let d = read_dataset(input, ParseOptions { average_duplicates: false })?;
        vec![measure_ttc(&fm, &dfm, &d, a.reps, threads)?]
    } else {
        if a.nnz == 0 || a.nnz > a.features || a.instances == 0 || a.ks.contains(&0) {
            return Err(Error::Usage("synthetic bench needs 0 < nnz <= features, instances > 0, k > 0".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
        let test = random_instances(a.features, a.nnz, a.instances, &mut rng)?;
        let mut out = Vec::new();
        for &k in &a.ks {
            let (fm, dfm) = random_model_pair(a.features, k, &mut rng);
            out.push(measure_ttc(&fm, &dfm, &test, a.reps, threads)?);
        }
        out
    };
    print!("{}", format_table(&reports));
    Ok(())
}

fn grid(a: GridArgs) -> Result<()> {
    check_non_negative("alpha", a.alpha)?;
    for &b in &a.betas {
        check_non_negative("betas", b)?;
    }
    let train = read_training(&a.train)?;
    let test = read_training(&a.test)?;
    let mut base = TrainConfig::dfm().with_alpha(a.alpha).with_seed(a.seed);
    if let Some(i) = a.iters {
        base.max_outer_iters = i;
    }
    let cells = eval_grid(&train, &test, &a.betas, &a.ks, &base, |c| match &c.outcome {
        Ok(v) => eprintln!("beta={} k={} ndcg@10={}", sig6(c.beta), c.k, sig6(v[9])),
        Err(e) => eprintln!("beta={} k={} failed: {e}", sig6(c.beta), c.k),
    })?;
    match &a.out {
        Some(path) => {
            let mut buf = Vec::new();
            write_csv(&cells, &mut buf)?;
            write_atomic(path, &buf)
        }
        None => write_csv(&cells, BufWriter::new(io::stdout().lock())),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    check_non_negative("noise", a.noise)?;
    let spec = PlantedSpec {
        users: a.users,
        items: a.items,
        words: a.words,
        words_per_item: a.words_per_item,
        k: a.k,
        instances: a.instances,
        noise_sigma: a.noise,
        seed: a.seed,
        ..PlantedSpec::desk()
    };
    let p = planted_dfm(&spec)?;
    write_dataset(&a.out, &p.dataset)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(a) => split(a),
        Command::TrainFm(a) => train_fm(a),
        Command::TrainDfm(a) => train_dfm(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Grid(a) => grid(a),
        Command::Synth(a) => synth(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
