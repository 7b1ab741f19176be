mod config;
mod output;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use rekp_core::features::Dataset;
use rekp_core::geometry::{canonical_street_scene, segment_blocked, Scene, SceneDocument, Trajectory};
use rekp_core::pipeline::{learn, leave_one_out, simulate};
use rekp_core::pool::Pool;
use rekp_core::predict::evaluate;
use rekp_core::propagation::path_loss;
use rekp_core::spectrum::write_spectrum_csv;
use rekp_core::RekpError;
use thiserror::Error;

use config::RunConfig;
use output::{write_atomic, write_text};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {1}", path = .0.display())]
    Io(PathBuf, std::io::Error),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] RekpError),
}

#[derive(Debug, Parser)]
#[command(name = "rekp", version, about = "Radio environment knowledge pool")]
struct Cli {
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the canonical street scene and write scene.json.
    SceneGen {
        #[arg(long)]
        positions: Option<usize>,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        frequency: Option<f64>,
        /// Leave out the street wall, making every position LOS.
        #[arg(long)]
        no_blocker: bool,
    },
    /// Monte Carlo realizations for every position; writes dataset.csv.
    Simulate {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        scatterer_sigma: Option<f64>,
        #[arg(long)]
        rx_sigma: Option<f64>,
    },
    /// Learn spectra and fill a pool; writes spectrum.csv and pool.json.
    Learn {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        capacity: Option<usize>,
        #[arg(long)]
        trees: Option<usize>,
        /// Also write spectrum.svg.
        #[arg(long)]
        plots: bool,
    },
    /// Leave-one-position-out evaluation; writes cdf.csv and summary.csv.
    Predict {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        /// Also write cdf.svg.
        #[arg(long)]
        plots: bool,
    },
    /// Inspect or modify a pool file.
    Pool {
        #[command(subcommand)]
        action: PoolAction,
    },
}

#[derive(Debug, Subcommand)]
enum PoolAction {
    /// List entries and the similarity matrix.
    Show { pool: PathBuf },
    /// Evict down to capacity, in place.
    Evict {
        pool: PathBuf,
        #[arg(long)]
        capacity: Option<usize>,
    },
    /// Ingest every entry of FROM into INTO.
    Merge {
        into: PathBuf,
        from: PathBuf,
        /// Where to write the result; defaults to INTO.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: RunConfig,
    quiet: bool,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn seed(&self, what: &str) -> Result<u64, CliError> {
        self.cfg.seed.ok_or_else(|| CliError::Usage(format!("{what} is stochastic and needs --seed")))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir().join(name)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn load_scene(path: &Path) -> Result<(Scene, Trajectory), CliError> {
    Ok(SceneDocument::from_json(&read(path)?)?.into_scene()?)
}

fn load_pool(path: &Path) -> Result<Pool, CliError> {
    Ok(Pool::from_json(&read(path)?)?)
}

fn scene_gen(ctx: &mut Ctx, positions: Option<usize>, spacing: Option<f64>, freq: Option<f64>, no_blocker: bool) -> Result<(), CliError> {
    let seed = ctx.seed("scene-gen")?;
    let p = &mut ctx.cfg.street;
    p.seed = seed;
    if let Some(n) = positions {
        p.n_positions = n;
    }
    if let Some(s) = spacing {
        p.spacing_m = s;
    }
    if let Some(f) = freq {
        p.frequency_hz = f;
    }
    if no_blocker {
        p.blocker = None;
    }
    let (scene, traj) = canonical_street_scene(p)?;
    let path = ctx.out("scene.json");
    write_text(&path, &SceneDocument::from_parts(&scene, &traj.positions).to_json())?;

    ctx.say(format!("{:>4} {:>8} {:>8} {:>6} {:>5} {:>10}", "pos", "x", "y", "z", "state", "pl_db"));
    let mut n_los = 0;
    for (i, rx) in traj.positions.iter().enumerate() {
        let los = !segment_blocked(scene.tx, *rx, &scene)?.blocked;
        n_los += los as usize;
        let pl = path_loss(&scene, *rx)?.path_loss_db;
        let state = if los { "LOS" } else { "NLOS" };
        ctx.say(format!("{:>4} {:>8.2} {:>8.2} {:>6.2} {state:>5} {pl:>10.3}", i + 1, rx.x, rx.y, rx.z));
    }
    ctx.say(format!("{n_los} LOS, {} NLOS; wrote {}", traj.positions.len() - n_los, path.display()));
    Ok(())
}

fn simulate_cmd(
    ctx: &mut Ctx,
    scene: Option<PathBuf>,
    realizations: Option<usize>,
    scatterer_sigma: Option<f64>,
    rx_sigma: Option<f64>,
) -> Result<(), CliError> {
    let seed = ctx.seed("simulate")?;
    let r = &mut ctx.cfg.realization;
    r.seed = seed;
    if let Some(n) = realizations {
        r.n_realizations = n;
    }
    if let Some(s) = scatterer_sigma {
        r.scatterer_jitter_sigma = s;
    }
    if let Some(s) = rx_sigma {
        r.rx_jitter_sigma = s;
    }
    let (scene, traj) = load_scene(&scene.unwrap_or_else(|| ctx.cfg.scene_path()))?;
    let ds = simulate(&scene, &traj, &ctx.cfg.realization)?;
    let path = ctx.out("dataset.csv");
    write_atomic(&path, |w| Ok(ds.write_csv(w)?))?;
    ctx.say(format!("{} rows over {} positions; wrote {}", ds.len(), traj.positions.len(), path.display()));
    Ok(())
}

fn learn_cmd(
    ctx: &mut Ctx,
    scene: Option<PathBuf>,
    dataset: Option<PathBuf>,
    capacity: Option<usize>,
    trees: Option<usize>,
    plots: bool,
) -> Result<(), CliError> {
    let seed = ctx.seed("learn")?;
    let params = &mut ctx.cfg.pool;
    params.forest.seed = seed;
    if let Some(c) = capacity {
        params.capacity = c;
    }
    if let Some(t) = trees {
        params.forest.n_trees = t;
    }
    let (scene, traj) = load_scene(&scene.unwrap_or_else(|| ctx.cfg.scene_path()))?;
    let ds_path = dataset.unwrap_or_else(|| ctx.out("dataset.csv"));
    let file = std::fs::File::open(&ds_path).map_err(|e| CliError::Io(ds_path.clone(), e))?;
    let ds = Dataset::read_csv(file)?;
    let mut pool = Pool::new(ctx.cfg.pool.clone())?;
    let out = learn(&scene, &traj, &ds, &mut pool)?;

    for row in out.spectra.iter().filter(|r| r.spectrum.is_none()) {
        eprintln!("warning: position {} has no learnable structure; its spectrum row is empty", row.position_id);
    }
    let spectrum_path = ctx.out("spectrum.csv");
    write_atomic(&spectrum_path, |w| Ok(write_spectrum_csv(&out.spectra, w)?))?;
    let pool_path = ctx.out("pool.json");
    write_text(&pool_path, &pool.to_json())?;
    if plots {
        write_text(&ctx.out("spectrum.svg"), &plot::spectrum_heatmap(&out.spectra))?;
    }

    ctx.say(format!("{:>4} {:>5} {:>6} {:>6} {:>6} {:>6}  outcome", "pos", "state", "w_L", "w_V", "w_B", "w_D"));
    for (row, (_, rep)) in out.spectra.iter().zip(&out.reports) {
        let w = row.weights.w;
        let state = if row.los { "LOS" } else { "NLOS" };
        ctx.say(format!(
            "{:>4} {state:>5} {:>6.3} {:>6.3} {:>6.3} {:>6.3}  {:?} -> entry {}",
            row.position_id, w[0], w[1], w[2], w[3], rep.outcome, rep.entry_id
        ));
    }
    ctx.say(format!("pool holds {} entries; wrote {} and {}", pool.len(), spectrum_path.display(), pool_path.display()));
    Ok(())
}

fn predict_cmd(
    ctx: &mut Ctx,
    scene: Option<PathBuf>,
    pool: Option<PathBuf>,
    tau: Option<f64>,
    k: Option<usize>,
    plots: bool,
) -> Result<(), CliError> {
    let tau = tau.unwrap_or(ctx.cfg.tau);
    let k = k.unwrap_or(ctx.cfg.k);
    let (scene, traj) = load_scene(&scene.unwrap_or_else(|| ctx.cfg.scene_path()))?;
    let pool = load_pool(&pool.unwrap_or_else(|| ctx.out("pool.json")))?;
    let preds = leave_one_out(&scene, &traj, &pool, tau, k)?;
    let report = evaluate(&preds)?;
    write_atomic(&ctx.out("cdf.csv"), |w| Ok(report.write_cdf_csv(w)?))?;
    write_atomic(&ctx.out("summary.csv"), |w| Ok(report.write_summary_csv(w)?))?;
    if plots {
        write_text(&ctx.out("cdf.svg"), &plot::error_cdf(&report))?;
    }
    let fallbacks = preds.iter().filter(|p| p.fallback).count();
    ctx.say(format!("{:<13} {:>8} {:>8} {:>8} {:>4} {:>8}", "method", "mean", "rmse", "p80", "n", "n_capped"));
    for m in &report.methods {
        ctx.say(format!(
            "{:<13} {:>8.3} {:>8.3} {:>8.3} {:>4} {:>8}",
            m.method.as_str(),
            m.mean(),
            m.rmse(),
            m.p80(),
            m.n(),
            m.n_capped
        ));
    }
    if fallbacks > 0 {
        ctx.say(format!("{fallbacks} REKP predictions fell back to log-distance"));
    }
    Ok(())
}

fn pool_cmd(ctx: &mut Ctx, action: PoolAction) -> Result<(), CliError> {
    match action {
        PoolAction::Show { pool } => {
            let pool = load_pool(&pool)?;
            println!("{} entries (capacity {})", pool.len(), pool.capacity());
            if pool.is_empty() {
                return Ok(());
            }
            println!("{:>4} {:>4} {:>5} {:>5} {:>7} {:>7} {:>6}  top", "id", "pos", "state", "util", "created", "updated", "trees");
            for e in pool.entries() {
                let top: String = e.weights.top_groups(ctx.cfg.tau).iter().map(|g| g.letter()).collect();
                let top = if e.is_degenerate() { "-".to_string() } else { top };
                println!(
                    "{:>4} {:>4} {:>5} {:>5} {:>7} {:>7} {:>6}  {top}",
                    e.id,
                    e.context.position_id,
                    if e.context.los { "LOS" } else { "NLOS" },
                    e.utilization_count,
                    e.created_at,
                    e.updated_at,
                    e.model.trees.len()
                );
            }
            println!("similarity");
            for row in pool.similarity_matrix() {
                println!("{}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
            }
        }
        PoolAction::Evict { pool: path, capacity } => {
            let mut pool = load_pool(&path)?;
            let removed = match capacity {
                Some(c) => pool.set_capacity(c)?,
                None => pool.sort_and_evict(),
            };
            write_text(&path, &pool.to_json())?;
            ctx.say(format!("evicted {} entries {:?}; {} remain", removed.len(), removed, pool.len()));
        }
        PoolAction::Merge { into, from, out } => {
            let mut target = load_pool(&into)?;
            let source = load_pool(&from)?;
            let now = target.entries().map(|e| e.updated_at).fold(0.0, f64::max) + 1.0;
            let reports = target.merge(&source, now)?;
            for (e, r) in source.entries().zip(&reports) {
                ctx.say(format!("entry {} -> {:?} as {}", e.id, r.outcome, r.entry_id));
            }
            write_text(&out.unwrap_or(into), &target.to_json())?;
            ctx.say(format!("{} entries after merge", target.len()));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out_dir.is_some() {
        cfg.out_dir = cli.out_dir;
    }
    let mut ctx = Ctx { cfg, quiet: cli.quiet };
    match cli.command {
        Command::SceneGen { positions, spacing, frequency, no_blocker } => {
            scene_gen(&mut ctx, positions, spacing, frequency, no_blocker)
        }
        Command::Simulate { scene, realizations, scatterer_sigma, rx_sigma } => {
            simulate_cmd(&mut ctx, scene, realizations, scatterer_sigma, rx_sigma)
        }
        Command::Learn { scene, dataset, capacity, trees, plots } => {
            learn_cmd(&mut ctx, scene, dataset, capacity, trees, plots)
        }
        Command::Predict { scene, pool, tau, k, plots } => predict_cmd(&mut ctx, scene, pool, tau, k, plots),
        Command::Pool { action } => pool_cmd(&mut ctx, action),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => Cli::command().error(ErrorKind::MissingRequiredArgument, msg).exit(),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
