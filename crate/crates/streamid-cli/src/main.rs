//! Command-line driver for the streaming interpolative decomposition:
//! synthetic data generation, compression, reconstruction, evaluation and
//! benchmarking over the binary matrix-stream format.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use streamid::bench::{run_bench, BenchConfig, MethodId};
use streamid::compress::{compress_stream, evaluate_model};
use streamid::config::{
    check_budget, GcvConfig, GradientMode, GridSpec, RunConfig, Scaling, SplitFractions,
    DEFAULT_ORACLE_BUDGET,
};
use streamid::error::Error;
use streamid::stream_io::{
    gen_advecting_bump, gen_lowrank, open_column_stream, read_id_model, read_matrix_dense,
    reconstruct, write_id_model, write_matrix_dense,
};

#[derive(Parser)]
#[command(
    name = "streamid",
    version,
    about = "Streaming randomized interpolative decomposition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic snapshot matrix file.
    Gen(GenArgs),
    /// Compress a snapshot matrix in one pass.
    Compress(CompressArgs),
    /// Reconstruct columns from a compressed model.
    Reconstruct(ReconstructArgs),
    /// Compare a model against the original data.
    Eval(EvalArgs),
    /// Run the offline/streaming method comparison on a dataset.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    kind: GenKind,
}

#[derive(Subcommand)]
enum GenKind {
    /// Planted low-rank matrix plus Gaussian noise.
    Lowrank {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        oracle_budget: usize,
    },
    /// Gaussian bump advecting across a 2-D grid.
    Bump {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        oracle_budget: usize,
    },
}

#[derive(Args)]
struct SketchArgs {
    /// Oversampling; sketch rows are k + p.
    #[arg(short, long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Sampling constant for admission probabilities.
    #[arg(long = "sampling-c", default_value_t = 1.0)]
    sampling_c: f64,
    /// Projection scaling: scaled (unbiased sketch norms) or unscaled.
    #[arg(long, default_value = "scaled")]
    scaling: String,
    /// Estimator row-split fractions c1,c2,c3.
    #[arg(long)]
    split: Option<String>,
}

impl SketchArgs {
    fn scaling(&self) -> Result<Scaling, Error> {
        match self.scaling.as_str() {
            "scaled" => Ok(Scaling::Scaled),
            "unscaled" => Ok(Scaling::Unscaled),
            other => Err(Error::Config(format!("unknown scaling mode {other:?}"))),
        }
    }

    fn split(&self) -> Result<SplitFractions, Error> {
        let Some(spec) = &self.split else {
            return Ok(SplitFractions::default());
        };
        let parts: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad split fractions: {e}")))?;
        if parts.len() != 3 {
            return Err(Error::Config("split needs exactly c1,c2,c3".into()));
        }
        let split = SplitFractions {
            c1: parts[0],
            c2: parts[1],
            c3: parts[2],
        };
        split.validate()?;
        Ok(split)
    }
}

#[derive(Args)]
struct GradientArgs {
    /// Where gradient estimates participate: none, css, coeff or both.
    #[arg(long, default_value = "none")]
    gradient: String,
    /// Grid dimensions nx,ny[,nz]; required for gradient modes.
    #[arg(long)]
    grid: Option<String>,
    /// Uniform grid spacing applied to every axis.
    #[arg(long = "grid-spacing", default_value_t = 1.0)]
    grid_spacing: f64,
    /// Golden-section tolerance for the regularization search (log10 units).
    #[arg(long = "gcv-tol", default_value_t = 1e-4)]
    gcv_tol: f64,
    /// Weight of the gradient blocks in augmented column scores.
    #[arg(long = "gradient-weight", default_value_t = 1.0)]
    gradient_weight: f64,
}

impl GradientArgs {
    fn mode(&self) -> Result<GradientMode, Error> {
        match self.gradient.as_str() {
            "none" => Ok(GradientMode::None),
            "css" => Ok(GradientMode::Css),
            "coeff" => Ok(GradientMode::Coeff),
            "both" => Ok(GradientMode::Both),
            other => Err(Error::Config(format!("unknown gradient mode {other:?}"))),
        }
    }

    fn grid(&self) -> Result<Option<GridSpec>, Error> {
        match &self.grid {
            None => Ok(None),
            Some(spec) => {
                let dims: Vec<usize> = spec
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| Error::Config(format!("bad grid dims: {e}")))?;
                if self.grid_spacing <= 0.0 {
                    return Err(Error::Config("grid spacing must be positive".into()));
                }
                let spacing = vec![self.grid_spacing; dims.len()];
                Ok(Some(GridSpec { dims, spacing }))
            }
        }
    }
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Target rank.
    #[arg(short, long)]
    k: usize,
    /// Basis size; defaults to k.
    #[arg(short, long)]
    t: Option<usize>,
    #[command(flatten)]
    sketch: SketchArgs,
    #[command(flatten)]
    gradient: GradientArgs,
    #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
    oracle_budget: usize,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Column interval start..end (half-open); whole matrix when omitted.
    #[arg(long)]
    range: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    original: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report format; v1 reports are JSON only.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated target ranks.
    #[arg(long)]
    ranks: String,
    /// Comma-separated methods; defaults to all of svd, rsvd, cpqr, lev,
    /// residual-css, rid-alg4..rid-alg7, rid-best.
    #[arg(long)]
    methods: Option<String>,
    #[command(flatten)]
    sketch: SketchArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long = "output-json")]
    output_json: Option<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long = "output-csv")]
    output_csv: Option<PathBuf>,
    /// Stdout format when no output file is given: json or csv.
    #[arg(long, default_value = "json")]
    format: String,
    #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
    oracle_budget: usize,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("STREAMID_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format(_) | Error::SecondPass => 3,
        Error::Dimension(_) | Error::Numerical(_) | Error::BudgetExceeded { .. } => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Compress(args) => cmd_compress(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), Error> {
    match args.kind {
        GenKind::Lowrank {
            m,
            n,
            rank,
            noise,
            seed,
            output,
            oracle_budget,
        } => {
            check_budget(m.saturating_mul(n), oracle_budget)?;
            let a = gen_lowrank(m, n, rank, noise, seed)?;
            write_matrix_dense(&output, &a)
        }
        GenKind::Bump {
            nx,
            ny,
            steps,
            seed,
            output,
            oracle_budget,
        } => {
            check_budget(nx.saturating_mul(ny).saturating_mul(steps), oracle_budget)?;
            let a = gen_advecting_bump(nx, ny, steps, seed)?;
            write_matrix_dense(&output, &a)
        }
    }
}

fn run_config_from(
    k: usize,
    t: Option<usize>,
    sketch: &SketchArgs,
    gradient: &GradientArgs,
    oracle_budget: usize,
) -> Result<RunConfig, Error> {
    let mut config = RunConfig::new(k, t.unwrap_or(k), sketch.seed);
    config.p = sketch.p;
    config.epsilon = sketch.epsilon;
    config.delta = sketch.delta;
    config.c = sketch.sampling_c;
    config.scaling = sketch.scaling()?;
    config.split = sketch.split()?;
    config.gradient = gradient.mode()?;
    config.grid = gradient.grid()?;
    config.gradient_weight = gradient.gradient_weight;
    config.gcv = GcvConfig {
        tol: gradient.gcv_tol,
        ..GcvConfig::default()
    };
    config.oracle_budget = oracle_budget;
    Ok(config)
}

fn cmd_compress(args: CompressArgs) -> Result<(), Error> {
    let config = run_config_from(
        args.k,
        args.t,
        &args.sketch,
        &args.gradient,
        args.oracle_budget,
    )?;
    let stream = open_column_stream(&args.input)?;
    let outcome = compress_stream(stream, &config)?;
    write_id_model(&args.output, &outcome.model)?;
    eprintln!(
        "compressed {} columns: estimated relative error {:.4e}, {} epochs",
        outcome.model.n(),
        outcome.model.trailer.est_rel_error,
        outcome.model.trailer.epoch_decisions.len()
    );
    Ok(())
}

fn parse_range(spec: &str, n: usize) -> Result<std::ops::Range<usize>, Error> {
    let parts: Vec<&str> = spec.split("..").collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!(
            "bad range {spec:?}; expected start..end"
        )));
    }
    let start: usize = parts[0]
        .parse()
        .map_err(|e| Error::Config(format!("bad range start: {e}")))?;
    let end: usize = if parts[1].is_empty() {
        n
    } else {
        parts[1]
            .parse()
            .map_err(|e| Error::Config(format!("bad range end: {e}")))?
    };
    Ok(start..end)
}

fn cmd_reconstruct(args: ReconstructArgs) -> Result<(), Error> {
    let model = read_id_model(&args.model)?;
    let range = match &args.range {
        Some(spec) => parse_range(spec, model.n())?,
        None => 0..model.n(),
    };
    let block = reconstruct(&model, range)?;
    write_matrix_dense(&args.output, &block)
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    if args.format != "json" {
        return Err(Error::Config(format!(
            "unsupported report format {:?}",
            args.format
        )));
    }
    let model = read_id_model(&args.model)?;
    let mut stream = open_column_stream(&args.original)?;
    let report = evaluate_model(&model, &mut stream)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
    match &args.output {
        Some(path) => std::fs::write(path, json).map_err(|e| Error::io(path, e))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Error> {
    let a = read_matrix_dense(&args.input)?;
    check_budget(a.nrows() * a.ncols(), args.oracle_budget)?;
    let ranks: Vec<usize> = args
        .ranks
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad ranks: {e}")))?;
    if ranks.is_empty() {
        return Err(Error::Config("need at least one rank".into()));
    }
    let methods: Vec<MethodId> = match &args.methods {
        None => MethodId::ALL.to_vec(),
        Some(spec) => spec
            .split(',')
            .map(|s| MethodId::parse(s.trim()))
            .collect::<Result<_, _>>()?,
    };
    let mut cfg = BenchConfig::new(ranks, args.sketch.seed);
    cfg.methods = methods;
    cfg.p = args.sketch.p;
    cfg.epsilon = args.sketch.epsilon;
    cfg.delta = args.sketch.delta;
    cfg.c = args.sketch.sampling_c;
    cfg.scaling = args.sketch.scaling()?;
    cfg.oracle_budget = args.oracle_budget;
    let report = run_bench(&a, &cfg)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
    match &args.output_json {
        Some(path) => std::fs::write(path, json).map_err(|e| Error::io(path, e))?,
        None => match args.format.as_str() {
            "json" => println!("{json}"),
            "csv" => print!("{}", report.to_csv()),
            other => return Err(Error::Config(format!("unsupported table format {other:?}"))),
        },
    }
    if let Some(path) = &args.output_csv {
        std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
