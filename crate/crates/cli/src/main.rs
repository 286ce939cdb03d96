//! crowdsim: two-scale pedestrian counterflow simulation runner.
//!
//! Exit codes: 0 on success, 2 for configuration/input validation errors,
//! 3 for runtime aborts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crowdsim_core::analysis::{detect_clusters, detect_lanes, Frame};
use crowdsim_core::dynamics::weak_form_residual;
use crowdsim_core::output::{read_density, read_trajectory, ReadError};
use crowdsim_core::scenario::{
    parse_config, reconstruct_states, run_to_dir, ConfigError, RunError, RunSummary, ScenarioConfig,
};
use crowdsim_core::testfields::TestField;

#[derive(Parser)]
#[command(name = "crowdsim", version, about = "Two-scale pedestrian counterflow simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write CSV/JSON artifacts.
    Run {
        /// Scenario config file (TOML sections).
        #[arg(long)]
        config: PathBuf,
        /// Seed for the initial agent placement.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect lanes and clusters in a trajectory frame.
    Analyze {
        /// Trajectory CSV produced by `run`.
        #[arg(long)]
        trajectory: PathBuf,
        /// Report lanes.
        #[arg(long)]
        lanes: bool,
        /// Report cluster sizes per subpopulation.
        #[arg(long)]
        clusters: bool,
        /// Lane gap threshold in meters.
        #[arg(long, default_value_t = 0.5)]
        gap: f64,
        /// Cluster link distance in meters (defaults to the attraction
        /// radius from the sibling scenario.cfg when present, else 2.0).
        #[arg(long)]
        link: Option<f64>,
        /// Frame time to analyze (defaults to the last frame).
        #[arg(long)]
        time: Option<f64>,
    },
    /// Residuals of the transport identity along a recorded trajectory.
    Audit {
        /// Trajectory CSV produced by `run`.
        #[arg(long)]
        trajectory: PathBuf,
        /// Test field: linear_x, linear_y, quadratic, sin_x or bump.
        #[arg(long)]
        psi: String,
        /// Scenario config (defaults to scenario.cfg next to the trajectory).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Subpopulation to audit (1 or 2).
        #[arg(long, default_value_t = 1)]
        subpop: usize,
    },
    /// Run a range of seeds (concurrently) and summarize the outcomes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive seed range, e.g. 0..19.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(_) | RunError::Geometry(_) | RunError::Placement(_) => {
                CliError::Validation(e.to_string())
            }
            RunError::Step(_) | RunError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ReadError> for CliError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Malformed { .. } => CliError::Validation(e.to_string()),
            ReadError::Io { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, &out),
        Command::Analyze { trajectory, lanes, clusters, gap, link, time } => {
            cmd_analyze(&trajectory, lanes, clusters, gap, link, time)
        }
        Command::Audit { trajectory, psi, config, subpop } => {
            cmd_audit(&trajectory, &psi, config.as_deref(), subpop)
        }
        Command::Sweep { config, seeds, out } => cmd_sweep(&config, &seeds, &out),
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

fn cmd_run(config: &Path, seed: u64, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let summary = run_to_dir(&cfg, seed, out)?;
    print_summary(&summary);
    println!("artifacts: {}", out.display());
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!(
        "seed {}: {} steps to t = {}, mass [{}, {}], lanes {} (pop1 {}, pop2 {}), unconverged steps {}",
        s.seed,
        s.steps,
        s.final_time,
        s.final_mass[0],
        s.final_mass[1],
        s.total_lanes,
        s.lanes_per_pop[0],
        s.lanes_per_pop[1],
        s.unconverged_steps,
    );
}

/// Reads the scenario config sitting next to a trajectory file, if any.
fn sibling_config(trajectory: &Path) -> Option<ScenarioConfig> {
    let path = trajectory.parent()?.join("scenario.cfg");
    let text = fs::read_to_string(path).ok()?;
    parse_config(&text).ok()
}

fn pick_frame(frames: &[Frame], time: Option<f64>) -> Result<&Frame, CliError> {
    if frames.is_empty() {
        return Err(CliError::Validation("trajectory contains no frames".into()));
    }
    Ok(match time {
        None => frames.last().unwrap(),
        Some(t) => frames
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .unwrap(),
    })
}

fn cmd_analyze(
    trajectory: &Path,
    lanes: bool,
    clusters: bool,
    gap: f64,
    link: Option<f64>,
    time: Option<f64>,
) -> Result<(), CliError> {
    let frames = read_trajectory(trajectory)?;
    let frame = pick_frame(&frames, time)?;
    let link = link
        .or_else(|| sibling_config(trajectory).map(|c| c.kernels.r_a_own))
        .unwrap_or(2.0);
    println!(
        "frame t = {} ({} + {} agents)",
        frame.t,
        frame.positions[0].len(),
        frame.positions[1].len()
    );
    let report = detect_lanes(frame, gap, link);
    if lanes || !clusters {
        println!("lanes: {} total", report.total_lanes);
        for (pop, lanes) in report.lanes.iter().enumerate() {
            for (k, lane) in lanes.iter().enumerate() {
                println!(
                    "  pop{} lane {}: center y = {:.3}, span [{:.3}, {:.3}], {} agents",
                    pop + 1,
                    k,
                    lane.center,
                    lane.y_min,
                    lane.y_max,
                    lane.occupancy
                );
            }
        }
    }
    if clusters {
        for pop in 0..2 {
            let sizes = detect_clusters(frame, pop, link);
            println!("clusters pop{}: {:?}", pop + 1, sizes);
        }
    }
    Ok(())
}

fn cmd_audit(
    trajectory: &Path,
    psi_name: &str,
    config: Option<&Path>,
    subpop: usize,
) -> Result<(), CliError> {
    if !(subpop == 1 || subpop == 2) {
        return Err(CliError::Validation(format!("subpop must be 1 or 2 (got {subpop})")));
    }
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => sibling_config(trajectory).ok_or_else(|| {
            CliError::Validation(
                "no scenario.cfg next to the trajectory; pass --config explicitly".into(),
            )
        })?,
    };
    let domain = cfg.build_domain().map_err(RunError::from)?;
    let psi = TestField::by_name(psi_name, &domain).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown test field {psi_name:?}; available: {}",
            TestField::NAMES.join(", ")
        ))
    })?;

    let frames = read_trajectory(trajectory)?;
    if frames.len() < 3 {
        return Err(CliError::Validation(
            "audit needs at least 3 frames; rerun with a smaller frame_interval".into(),
        ));
    }
    let dt = frames[1].t - frames[0].t;
    for pair in frames.windows(2) {
        if ((pair[1].t - pair[0].t) - dt).abs() > 1e-9 {
            return Err(CliError::Validation(
                "audit needs uniformly spaced frames".into(),
            ));
        }
    }
    let dir = trajectory.parent().unwrap_or(Path::new("."));
    let density = |name: &str| {
        let path = dir.join(name);
        path.exists()
            .then(|| read_density(&path, cfg.grid.nx, cfg.grid.ny))
            .transpose()
    };
    let d1 = density("density_1.csv")?;
    let d2 = density("density_2.csv")?;
    let states = reconstruct_states(&cfg, &frames, d1.as_deref(), d2.as_deref())?;
    let model = cfg.velocity.model(cfg.kernels.params());
    let residuals = weak_form_residual(&states, dt, subpop - 1, &psi, &domain, &model)
        .map_err(RunError::from)?;

    println!("t,residual");
    let mut max_abs: f64 = 0.0;
    for (t, r) in &residuals {
        println!("{},{}", frames[0].t + t, r);
        max_abs = max_abs.max(r.abs());
    }
    eprintln!("max |residual| = {max_abs:e} over {} samples (dt = {dt})", residuals.len());
    Ok(())
}

fn parse_seed_range(text: &str) -> Result<(u64, u64), CliError> {
    let cleaned = text.replace("..=", "..");
    let parts: Vec<&str> = cleaned.split("..").collect();
    let bad = || CliError::Validation(format!("cannot parse seed range {text:?}; expected A..B"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let a: u64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: u64 = parts[1].trim().parse().map_err(|_| bad())?;
    if b < a {
        return Err(bad());
    }
    Ok((a, b))
}

fn cmd_sweep(config: &Path, seeds: &str, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let (first, last) = parse_seed_range(seeds)?;
    fs::create_dir_all(out)?;

    let seeds: Vec<u64> = (first..=last).collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut results: Vec<Option<Result<RunSummary, RunError>>> = Vec::new();
    results.resize_with(seeds.len(), || None);

    let mut work: Vec<(u64, &mut Option<Result<RunSummary, RunError>>)> =
        seeds.iter().copied().zip(results.iter_mut()).collect();
    std::thread::scope(|scope| {
        for chunk in work.chunks_mut(seeds.len().div_ceil(threads)) {
            let cfg = &cfg;
            scope.spawn(move || {
                for (seed, slot) in chunk {
                    let dir = out.join(format!("seed_{seed:04}"));
                    **slot = Some(run_to_dir(cfg, *seed, &dir));
                }
            });
        }
    });

    let mut summary_csv = String::from(
        "seed,total_lanes,lanes_1,lanes_2,final_mass_1,final_mass_2,unconverged_steps\n",
    );
    for slot in results {
        let summary = slot.expect("every seed was scheduled").map_err(CliError::from)?;
        print_summary(&summary);
        summary_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            summary.seed,
            summary.total_lanes,
            summary.lanes_per_pop[0],
            summary.lanes_per_pop[1],
            summary.final_mass[0],
            summary.final_mass[1],
            summary.unconverged_steps,
        ));
    }
    fs::write(out.join("sweep_summary.csv"), summary_csv)?;
    Ok(())
}
