use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use epiline_cli::*;
use epiline_core::pair_search::default_precision_grid;
use epiline_core::{AttentionConfig, ImageSize, PeMode, SearchConfig, Strategy, ThreadMode};

#[derive(Parser)]
#[command(name = "epiline", version, about = "Epipolar line-pair search and line-constrained feature aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster reference pixels into epipolar line pairs and emit JSON.
    Pairs(PairsArgs),
    /// Render a pair set as two PPM images.
    Visualize(VisualizeArgs),
    /// Run the line-constrained transformer and local smoothing on feature maps.
    Augment(AugmentArgs),
    /// Compare aggregation strategies: analytic MACs and median wall time.
    Bench(BenchArgs),
    /// Run the oracle suites.
    Verify(VerifyArgs),
    /// Tabulate cluster count and coverage over a grid of quantization steps.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CamArgs {
    /// Reference camera file.
    #[arg(long, requires = "src_cam")]
    ref_cam: Option<PathBuf>,
    /// Source camera file.
    #[arg(long, requires = "ref_cam")]
    src_cam: Option<PathBuf>,
    /// Image size as HxW.
    #[arg(long, value_parser = parse_size, default_value = "64x80")]
    size: ImageSize,
    /// Seed for synthetic rigs, features and weights.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl CamArgs {
    fn pair(&self) -> Result<epiline_core::CameraPair> {
        let cams = match (&self.ref_cam, &self.src_cam) {
            (Some(r), Some(s)) => Some((r.as_path(), s.as_path())),
            _ => None,
        };
        pair_or_synthetic(cams, self.size, self.seed)
    }
}

#[derive(Args)]
struct SearchArgs {
    /// Slope quantization step.
    #[arg(long, default_value_t = 0.1)]
    sk: f64,
    /// Intercept quantization step (pixels).
    #[arg(long, default_value_t = 10.0)]
    sb: f64,
    /// Source band half-width (pixels).
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Clusters smaller than this become holes.
    #[arg(long, default_value_t = 2)]
    min_cluster: usize,
}

impl SearchArgs {
    fn config(&self) -> Result<SearchConfig> {
        Ok(SearchConfig::new(self.sk, self.sb, self.delta, self.min_cluster)?)
    }
}

#[derive(Args)]
struct PairsArgs {
    #[command(flatten)]
    cams: CamArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VisualizeArgs {
    /// Pair-set JSON written by `pairs`; cameras are searched when omitted.
    #[arg(long, conflicts_with_all = ["ref_cam", "src_cam"])]
    pairs: Option<PathBuf>,
    #[command(flatten)]
    cams: CamArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Output prefix: writes <out>_ref.ppm and <out>_src.ppm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 1)]
    blocks: usize,
    /// Positional encoding: none, sine or learnable.
    #[arg(long, default_value = "sine")]
    pe: PeMode,
}

impl ModelArgs {
    fn config(&self) -> AttentionConfig {
        AttentionConfig { n_blocks: self.blocks, pe_mode: self.pe, ..AttentionConfig::new(self.channels, self.heads) }
    }
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    cams: CamArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Reference and source feature maps (EPFM); seeded random maps when omitted.
    #[arg(long, num_args = 2, value_names = ["REF", "SRC"])]
    features: Option<Vec<PathBuf>>,
    /// Weight container (EPWT); seeded weights when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Also augment the reference map with reference lines as queries.
    #[arg(long)]
    symmetric: bool,
    /// Output prefix: writes <out>_src.epfm (and <out>_ref.epfm).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    cams: CamArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated strategies.
    #[arg(long, default_value = "point-to-line,line-to-line,plane-to-plane")]
    strategies: String,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Run on one thread.
    #[arg(long)]
    single_threaded: bool,
    /// Also write the results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// Negates closed-form slopes so the collinearity suite must fail.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cams: CamArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Grid as s_k:s_b pairs, comma separated.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Pairs(a) => {
            let json = cmd_pairs(&a.cams.pair()?, &a.search.config()?)?;
            match a.out {
                Some(path) => write_text(&path, &json)?,
                None => print!("{json}"),
            }
        }
        Command::Visualize(a) => {
            let set = match &a.pairs {
                Some(path) => read_pairs(path)?,
                None => epiline_core::pair_search::search_pairs(&a.cams.pair()?, &a.search.config()?)?,
            };
            let (r, s) = cmd_visualize(&set, &a.out)?;
            println!("{} pairs -> {} {}", set.len(), r.display(), s.display());
        }
        Command::Augment(a) => {
            let pair = a.cams.pair()?;
            let features = a.features.as_ref().map(|f| (f[0].as_path(), f[1].as_path()));
            let inputs = AugmentInputs {
                pair: &pair,
                search: a.search.config()?,
                features,
                weights: a.weights.as_deref(),
                config: a.model.config(),
                seed: a.cams.seed,
                symmetric: a.symmetric,
            };
            let (src, reference) = cmd_augment(&inputs)?;
            for path in save_augmented(&a.out, &src, reference.as_ref())? {
                println!("{}", path.display());
            }
        }
        Command::Bench(a) => {
            let pair = a.cams.pair()?;
            let config = a.model.config();
            let strategies: Vec<Strategy> = parse_strategies(&a.strategies)?;
            let mode = if a.single_threaded { ThreadMode::Single } else { ThreadMode::Parallel };
            let reports = cmd_bench(&pair, &config, &strategies, a.repeats, mode)?;
            print!("{}", bench_table(&pair, &config, &reports)?);
            if let Some(path) = a.csv {
                write_text(&path, &bench_csv(&reports))?;
            }
        }
        Command::Verify(a) => {
            let (reports, ok) = cmd_verify(a.seed, a.trials as usize, a.inject_fault)?;
            for r in &reports {
                println!("{r}");
            }
            return Ok(ok);
        }
        Command::Sweep(a) => {
            let grid = match &a.grid {
                Some(text) => parse_grid(text).map_err(anyhow::Error::msg)?,
                None => default_precision_grid(),
            };
            let rows = cmd_sweep(&a.cams.pair()?, &grid, &a.search.config()?)?;
            print!("{}", sweep_table(&rows));
            if let Some(path) = a.csv {
                write_text(&path, &sweep_csv(&rows))?;
            }
        }
    }
    Ok(true)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EPILINE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("EPILINE_THREADS must be a positive integer, got \"{v}\""))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
