//! Scenario configuration (TOML with sections [domain], [grid], [kernels],
//! [velocity], [step], [pop1], [pop2], [output]), its validation, and the
//! reproducible run driver that writes the CSV/JSON artifacts.
//!
//! A run is a pure function of (config, seed): identical inputs produce
//! byte-identical artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{detect_lanes, Frame};
use crate::dynamics::{coupled_step, StepConfig, StepDiagnostics, StepError, Substeps};
use crate::geometry::{BoundaryX, Domain, GeometryError, Obstacle, PorosityGrid, Rect};
use crate::kernels::KernelParams;
use crate::measures::{MacroField, MicroMeasure, Population, TwoScaleState};
use crate::output;
use crate::vec2::Vec2;
use crate::velocity::{Variant, VelocityModel, WeightFn};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("initial placement failed: {0}")]
    Placement(String),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// config schema

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainSection,
    pub grid: GridSection,
    pub kernels: KernelsSection,
    pub velocity: VelocitySection,
    pub step: StepSection,
    pub pop1: PopSection,
    pub pop2: PopSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub length: f64,
    pub width: f64,
    #[serde(default = "default_boundary")]
    pub boundary_x: BoundaryMode,
    #[serde(default, rename = "obstacle", skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<ObstacleSection>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    Periodic,
    Open,
}

fn default_boundary() -> BoundaryMode {
    BoundaryMode::Periodic
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObstacleSection {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

impl From<&ObstacleSection> for Obstacle {
    fn from(s: &ObstacleSection) -> Obstacle {
        match *s {
            ObstacleSection::Rect { x0, y0, x1, y1 } => Obstacle::Rect(Rect::new(x0, y0, x1, y1)),
            ObstacleSection::Disc { cx, cy, r } => Obstacle::Disc {
                center: Vec2::new(cx, cy),
                radius: r,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "default_samples")]
    pub samples_per_cell: usize,
}

fn default_samples() -> usize {
    16
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsSection {
    pub f_opp: f64,
    pub f_own: f64,
    pub f_wall: f64,
    pub r_r_opp: f64,
    pub r_r_own: f64,
    pub r_a_own: f64,
    pub r_wall: f64,
    pub sigma: f64,
    /// Interaction radii must stay below this fraction of the corridor
    /// length (short-range interactions in a long corridor).
    #[serde(default = "default_radius_fraction")]
    pub radius_fraction_limit: f64,
}

fn default_radius_fraction() -> f64 {
    0.25
}

impl KernelsSection {
    pub fn params(&self) -> KernelParams {
        KernelParams {
            f_opp: self.f_opp,
            f_own: self.f_own,
            f_wall: self.f_wall,
            r_r_opp: self.r_r_opp,
            r_r_own: self.r_r_own,
            r_a_own: self.r_a_own,
            r_wall: self.r_wall,
            sigma: self.sigma,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum VariantMode {
    Explicit,
    ActualAngle,
    PredictFixed,
    PredictInterval,
    PredictWeighted,
}

impl From<VariantMode> for Variant {
    fn from(m: VariantMode) -> Variant {
        match m {
            VariantMode::Explicit => Variant::Explicit,
            VariantMode::ActualAngle => Variant::ActualAngle,
            VariantMode::PredictFixed => Variant::PredictFixed,
            VariantMode::PredictInterval => Variant::PredictInterval,
            VariantMode::PredictWeighted => Variant::PredictWeighted,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Constant,
    LinearDecay,
    ExponentialDecay,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySection {
    pub v_des_1: [f64; 2],
    pub v_des_2: [f64; 2],
    #[serde(default = "default_variant")]
    pub variant: VariantMode,
    /// When true (the default), the two desired velocities must be exact
    /// opposites.
    #[serde(default = "default_true")]
    pub counterflow: bool,
    #[serde(default = "default_dt_pred")]
    pub dt_pred: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default = "default_weight_fn")]
    pub weight_fn: WeightMode,
    #[serde(default = "default_weight_rate")]
    pub weight_rate: f64,
    #[serde(default = "default_quadrature_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_fp_max_iter")]
    pub fp_max_iter: usize,
    /// Interaction speed cap; omitted means 2x the larger desired speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_cap: Option<f64>,
}

fn default_variant() -> VariantMode {
    VariantMode::Explicit
}
fn default_true() -> bool {
    true
}
fn default_dt_pred() -> f64 {
    0.5
}
fn default_dt_max() -> f64 {
    1.0
}
fn default_weight_fn() -> WeightMode {
    WeightMode::Constant
}
fn default_weight_rate() -> f64 {
    1.0
}
fn default_quadrature_nodes() -> usize {
    16
}
fn default_fp_tol() -> f64 {
    1e-8
}
fn default_fp_max_iter() -> usize {
    50
}

impl VelocitySection {
    pub fn model(&self, kernels: KernelParams) -> VelocityModel {
        let v1 = Vec2::from(self.v_des_1);
        let v2 = Vec2::from(self.v_des_2);
        let vmax = v1.norm().max(v2.norm());
        VelocityModel {
            v_des: [v1, v2],
            kernels,
            variant: self.variant.into(),
            dt_pred: self.dt_pred,
            dt_max: self.dt_max,
            weight: match self.weight_fn {
                WeightMode::Constant => WeightFn::Constant,
                WeightMode::LinearDecay => WeightFn::LinearDecay,
                WeightMode::ExponentialDecay => WeightFn::ExponentialDecay {
                    rate: self.weight_rate,
                },
            },
            quadrature_nodes: self.quadrature_nodes,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            speed_cap: self
                .speed_cap
                .unwrap_or(if vmax > 0.0 { 2.0 * vmax } else { 1.0 }),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSection {
    pub dt: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_end: f64,
    /// Fixed macro substep count; omitted derives it from the CFL bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_substeps: Option<usize>,
}

fn default_cfl() -> f64 {
    0.9
}

impl StepSection {
    pub fn config(&self) -> StepConfig {
        StepConfig {
            dt: self.dt,
            cfl: self.cfl,
            t_end: self.t_end,
            substeps: match self.macro_substeps {
                Some(n) => Substeps::Fixed(n),
                None => Substeps::Auto,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    /// Fixed weight in [0, 1].
    Value(f64),
    /// The string "auto": theta = n / (n + initial macro mass).
    Auto(String),
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec::Value(1.0)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    UniformRandom,
    Grid,
    Explicit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopSection {
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub theta: ThetaSpec,
    #[serde(default = "default_placement")]
    pub placement: PlacementKind,
    /// Agents are placed at least this far from the y walls.
    #[serde(default = "default_y_margin")]
    pub y_margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_init: Option<MacroInitSection>,
}

impl Default for PopSection {
    fn default() -> Self {
        PopSection {
            n: 0,
            theta: ThetaSpec::default(),
            placement: default_placement(),
            y_margin: default_y_margin(),
            positions: None,
            macro_init: None,
        }
    }
}

fn default_placement() -> PlacementKind {
    PlacementKind::UniformRandom
}
fn default_y_margin() -> f64 {
    0.2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MacroInitSection {
    /// Constant density over the cells whose centers fall in `rect`.
    Constant { mass: f64, rect: [f64; 4] },
    /// Truncated Gaussian blob, masked by the porosity and renormalized.
    Gaussian {
        mass: f64,
        center: [f64; 2],
        sigma: f64,
        #[serde(default = "default_cutoff_sigmas")]
        cutoff_sigmas: f64,
    },
}

fn default_cutoff_sigmas() -> f64 {
    3.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_frame_interval")]
    pub frame_interval: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
            frame_interval: default_frame_interval(),
        }
    }
}

fn default_out_dir() -> String {
    "out".to_string()
}
fn default_frame_interval() -> f64 {
    0.5
}

// ---------------------------------------------------------------------------
// parsing and validation

/// Parses and validates a scenario config. Validation reports every
/// violated constraint, not just the first.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let issues = cfg.validate();
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

impl ScenarioConfig {
    /// All constraint violations in this config.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let d = &self.domain;
        if !(d.length > 0.0 && d.width > 0.0) {
            issues.push(format!(
                "corridor dimensions must be positive (length={}, width={})",
                d.length, d.width
            ));
        }
        if let Err(e) = self.build_domain() {
            issues.push(e.to_string());
        }

        let g = &self.grid;
        if g.nx == 0 || g.ny == 0 {
            issues.push(format!("grid cell counts must be at least 1 (nx={}, ny={})", g.nx, g.ny));
        } else if d.length > 0.0 && d.width > 0.0 {
            let hx = d.length / g.nx as f64;
            let hy = d.width / g.ny as f64;
            if (hx - hy).abs() > 1e-9 * hx.max(hy) {
                issues.push(format!(
                    "grid cells must be square: length/nx = {hx} but width/ny = {hy}"
                ));
            }
        }
        if g.samples_per_cell == 0 {
            issues.push("samples_per_cell must be at least 1".to_string());
        }

        let kp = self.kernels.params();
        kp.validate(&mut issues);
        let limit = self.kernels.radius_fraction_limit;
        if !(limit > 0.0 && limit <= 1.0) {
            issues.push(format!("radius_fraction_limit must lie in (0, 1] (got {limit})"));
        } else if kp.interaction_range() > limit * d.length {
            issues.push(format!(
                "interaction radii must be short-range: max(R_a_own, R_r_opp) = {} exceeds {} * length = {}",
                kp.interaction_range(),
                limit,
                limit * d.length
            ));
        }

        let model = self.velocity.model(kp);
        model.validate(&mut issues);
        if self.velocity.counterflow {
            let v1 = Vec2::from(self.velocity.v_des_1);
            let v2 = Vec2::from(self.velocity.v_des_2);
            if v1 + v2 != Vec2::ZERO {
                issues.push(format!(
                    "counterflow requires v_des_1 = -v_des_2 (got {:?} and {:?}); set counterflow = false for other regimes",
                    self.velocity.v_des_1, self.velocity.v_des_2
                ));
            }
        }

        self.step.config().validate(&mut issues);

        for (name, pop) in [("pop1", &self.pop1), ("pop2", &self.pop2)] {
            match &pop.theta {
                ThetaSpec::Value(t) => {
                    if !(0.0..=1.0).contains(t) {
                        issues.push(format!("{name}.theta must lie in [0, 1] (got {t})"));
                    }
                }
                ThetaSpec::Auto(s) => {
                    if s != "auto" {
                        issues.push(format!(
                            "{name}.theta must be a number in [0, 1] or the string \"auto\" (got {s:?})"
                        ));
                    }
                }
            }
            if !(pop.y_margin >= 0.0 && 2.0 * pop.y_margin < d.width) {
                issues.push(format!(
                    "{name}.y_margin must satisfy 0 <= 2*y_margin < width (got {})",
                    pop.y_margin
                ));
            }
            match pop.placement {
                PlacementKind::Explicit => match &pop.positions {
                    None => issues.push(format!("{name}: explicit placement needs positions")),
                    Some(ps) => {
                        if ps.len() != pop.n {
                            issues.push(format!(
                                "{name}: positions has {} entries but n = {}",
                                ps.len(),
                                pop.n
                            ));
                        }
                        for (k, p) in ps.iter().enumerate() {
                            if !(p[0] >= 0.0 && p[0] <= d.length && p[1] >= 0.0 && p[1] <= d.width)
                            {
                                issues.push(format!(
                                    "{name}.positions[{k}] = ({}, {}) lies outside the corridor",
                                    p[0], p[1]
                                ));
                            }
                        }
                    }
                },
                _ => {
                    if pop.positions.is_some() {
                        issues.push(format!(
                            "{name}: positions is only valid with placement = \"explicit\""
                        ));
                    }
                }
            }
            match &pop.macro_init {
                Some(MacroInitSection::Constant { mass, rect }) => {
                    if *mass < 0.0 {
                        issues.push(format!("{name}.macro_init.mass must be non-negative (got {mass})"));
                    }
                    if !(rect[0] < rect[2] && rect[1] < rect[3]) {
                        issues.push(format!("{name}.macro_init.rect must have positive extent"));
                    }
                }
                Some(MacroInitSection::Gaussian { mass, sigma, cutoff_sigmas, .. }) => {
                    if *mass < 0.0 {
                        issues.push(format!("{name}.macro_init.mass must be non-negative (got {mass})"));
                    }
                    if *sigma <= 0.0 {
                        issues.push(format!("{name}.macro_init.sigma must be positive (got {sigma})"));
                    }
                    if *cutoff_sigmas <= 0.0 {
                        issues.push(format!(
                            "{name}.macro_init.cutoff_sigmas must be positive (got {cutoff_sigmas})"
                        ));
                    }
                }
                None => {}
            }
        }

        if self.output.frame_interval <= 0.0 {
            issues.push(format!(
                "output.frame_interval must be positive (got {})",
                self.output.frame_interval
            ));
        }
        issues
    }

    pub fn build_domain(&self) -> Result<Domain, GeometryError> {
        Domain::new(
            self.domain.length,
            self.domain.width,
            self.domain.obstacles.iter().map(Obstacle::from).collect(),
            match self.domain.boundary_x {
                BoundaryMode::Periodic => BoundaryX::Periodic,
                BoundaryMode::Open => BoundaryX::Open,
            },
        )
    }
}

// ---------------------------------------------------------------------------
// simulation driver

/// A fully built scenario ready to step.
pub struct Simulation {
    domain: Domain,
    grid: Arc<PorosityGrid>,
    model: VelocityModel,
    step_cfg: StepConfig,
    state: TwoScaleState,
    step_index: u64,
    seed: u64,
    unconverged_steps: u64,
    cap_hits_total: u64,
}

impl Simulation {
    /// Validates the config, builds the geometry, places the agents from
    /// the seeded generator, and initializes the macro fields.
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self, RunError> {
        let issues = cfg.validate();
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues).into());
        }
        let domain = cfg.build_domain()?;
        let grid = PorosityGrid::build(&domain, cfg.grid.nx, cfg.grid.ny, cfg.grid.samples_per_cell)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut pops = Vec::with_capacity(2);
        let mut first_id = 0u64;
        for section in [&cfg.pop1, &cfg.pop2] {
            let positions = place_agents(section, &domain, &mut rng)?;
            let micro = MicroMeasure::from_positions(first_id, positions);
            first_id += micro.len() as u64;
            let field = build_macro_field(section, &grid).map_err(RunError::Placement)?;
            let theta = match &section.theta {
                ThetaSpec::Value(t) => *t,
                ThetaSpec::Auto(_) => {
                    let n = section.n as f64;
                    let m = field.total_mass();
                    if n + m > 0.0 {
                        n / (n + m)
                    } else {
                        1.0
                    }
                }
            };
            pops.push(Population::new(micro, field, theta));
        }
        let pop2 = pops.pop().unwrap();
        let pop1 = pops.pop().unwrap();

        Ok(Simulation {
            domain,
            grid,
            model: cfg.velocity.model(cfg.kernels.params()),
            step_cfg: cfg.step.config(),
            state: TwoScaleState::new([pop1, pop2]),
            step_index: 0,
            seed,
            unconverged_steps: 0,
            cap_hits_total: 0,
        })
    }

    pub fn state(&self) -> &TwoScaleState {
        &self.state
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn grid(&self) -> &Arc<PorosityGrid> {
        &self.grid
    }

    pub fn model(&self) -> &VelocityModel {
        &self.model
    }

    pub fn step_config(&self) -> &StepConfig {
        &self.step_cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.step_cfg.dt
    }

    /// Steps needed to reach t_end (covering it when dt does not divide it).
    pub fn total_steps(&self) -> u64 {
        (self.step_cfg.t_end / self.step_cfg.dt - 1e-9).ceil().max(1.0) as u64
    }

    pub fn frame(&self) -> Frame {
        Frame::from_state(self.time(), &self.state)
    }

    pub fn step(&mut self) -> Result<StepDiagnostics, StepError> {
        let (next, diag) = coupled_step(&self.state, &self.domain, &self.model, &self.step_cfg)?;
        self.state = next;
        self.step_index += 1;
        if diag.unconverged {
            self.unconverged_steps += 1;
        }
        self.cap_hits_total += diag.cap_hits;
        Ok(diag)
    }
}

fn place_agents(
    section: &PopSection,
    domain: &Domain,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec2>, RunError> {
    let blocked = |p: Vec2| domain.obstacles.iter().any(|o| o.contains(p));
    let y_lo = section.y_margin;
    let y_hi = domain.width - section.y_margin;
    match section.placement {
        PlacementKind::Explicit => {
            let positions = section.positions.as_ref().expect("validated");
            let mut out = Vec::with_capacity(positions.len());
            for (k, p) in positions.iter().enumerate() {
                let p = Vec2::new(p[0], p[1]);
                if !domain.in_pore_closure(p) {
                    return Err(RunError::Placement(format!(
                        "explicit position {k} at ({}, {}) lies inside an obstacle",
                        p.x, p.y
                    )));
                }
                out.push(p);
            }
            Ok(out)
        }
        PlacementKind::UniformRandom => {
            let mut out = Vec::with_capacity(section.n);
            for k in 0..section.n {
                let mut placed = false;
                for _ in 0..10_000 {
                    let p = Vec2::new(
                        rng.random_range(0.0..domain.length),
                        rng.random_range(y_lo..y_hi),
                    );
                    if !blocked(p) {
                        out.push(p);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(RunError::Placement(format!(
                        "could not place agent {k}: domain too blocked"
                    )));
                }
            }
            Ok(out)
        }
        PlacementKind::Grid => {
            if section.n == 0 {
                return Ok(Vec::new());
            }
            let usable = y_hi - y_lo;
            let cols = ((section.n as f64 * domain.length / usable).sqrt().ceil() as usize).max(1);
            let rows = section.n.div_ceil(cols);
            let mut out = Vec::with_capacity(section.n);
            'outer: for j in 0..rows {
                for i in 0..cols {
                    if out.len() == section.n {
                        break 'outer;
                    }
                    let p = Vec2::new(
                        (i as f64 + 0.5) * domain.length / cols as f64,
                        y_lo + (j as f64 + 0.5) * usable / rows as f64,
                    );
                    if !blocked(p) {
                        out.push(p);
                    }
                }
            }
            if out.len() < section.n {
                return Err(RunError::Placement(format!(
                    "grid placement found only {} of {} free sites",
                    out.len(),
                    section.n
                )));
            }
            Ok(out)
        }
    }
}

fn build_macro_field(
    section: &PopSection,
    grid: &Arc<PorosityGrid>,
) -> Result<MacroField, String> {
    match &section.macro_init {
        None => Ok(MacroField::zeros(grid.clone())),
        Some(MacroInitSection::Constant { mass, rect }) => MacroField::constant_in_rect(
            grid.clone(),
            &Rect::new(rect[0], rect[1], rect[2], rect[3]),
            *mass,
        ),
        Some(MacroInitSection::Gaussian { mass, center, sigma, cutoff_sigmas }) => {
            MacroField::gaussian_blob(
                grid.clone(),
                Vec2::new(center[0], center[1]),
                *sigma,
                *cutoff_sigmas,
                *mass,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// artifacts

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: u64,
    pub final_time: f64,
    pub final_mass: [f64; 2],
    pub total_lanes: usize,
    pub lanes_per_pop: [usize; 2],
    pub unconverged_steps: u64,
    pub cap_hits_total: u64,
}

/// Runs the scenario to t_end, writing all artifacts into `out_dir`:
/// `scenario.cfg` (the resolved config), `run_meta.json`, `porosity.csv`,
/// `trajectory.csv`, `density_1.csv`, `density_2.csv`, `diagnostics.csv`
/// and `lane_report.json`. Frames are written every `frame_interval` plus
/// the final state. On a step failure the files written so far are flushed
/// before the error is returned.
pub fn run_to_dir(cfg: &ScenarioConfig, seed: u64, out_dir: &Path) -> Result<RunSummary, RunError> {
    let mut sim = Simulation::new(cfg, seed)?;
    fs::create_dir_all(out_dir)?;

    let cfg_text = toml::to_string_pretty(cfg)
        .map_err(|e| ConfigError::Parse(format!("could not serialize config: {e}")))?;
    fs::write(out_dir.join("scenario.cfg"), cfg_text)?;

    let meta = serde_json::json!({
        "seed": seed,
        "steps": sim.total_steps(),
        "dt": sim.step_cfg.dt,
        "frame_interval": cfg.output.frame_interval,
        "theta": [sim.state.pops[0].theta, sim.state.pops[1].theta],
        "speed_cap": sim.model.speed_cap,
    });
    fs::write(out_dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let mut porosity = BufWriter::new(File::create(out_dir.join("porosity.csv"))?);
    sim.grid.write_csv(&mut porosity)?;
    porosity.flush()?;

    let mut trajectory = BufWriter::new(File::create(out_dir.join("trajectory.csv"))?);
    let mut density = [
        BufWriter::new(File::create(out_dir.join("density_1.csv"))?),
        BufWriter::new(File::create(out_dir.join("density_2.csv"))?),
    ];
    let mut diagnostics = BufWriter::new(File::create(out_dir.join("diagnostics.csv"))?);
    output::write_trajectory_header(&mut trajectory)?;
    output::write_density_header(&mut density[0])?;
    output::write_density_header(&mut density[1])?;
    output::write_diagnostics_header(&mut diagnostics)?;

    let dt = sim.step_cfg.dt;
    let stride = ((cfg.output.frame_interval / dt).round() as u64).max(1);
    let total = sim.total_steps();

    let write_frame = |sim: &Simulation,
                           trajectory: &mut BufWriter<File>,
                           density: &mut [BufWriter<File>; 2]|
     -> Result<(), RunError> {
        let t = sim.time();
        output::write_trajectory_frame(trajectory, t, &sim.state)?;
        for (w, pop) in density.iter_mut().zip(&sim.state.pops) {
            output::write_density_frame(w, t, &pop.field)?;
        }
        Ok(())
    };

    write_frame(&sim, &mut trajectory, &mut density)?;
    let mut step_result: Result<(), RunError> = Ok(());
    for s in 1..=total {
        match sim.step() {
            Ok(diag) => {
                output::write_diagnostics_row(&mut diagnostics, s as f64 * dt, &diag)?;
                if s % stride == 0 || s == total {
                    write_frame(&sim, &mut trajectory, &mut density)?;
                }
            }
            Err(e) => {
                step_result = Err(e.into());
                break;
            }
        }
    }
    trajectory.flush()?;
    density[0].flush()?;
    density[1].flush()?;
    diagnostics.flush()?;
    step_result?;

    let report = detect_lanes(
        &sim.frame(),
        cfg.kernels.r_r_own,
        cfg.kernels.r_a_own,
    );
    fs::write(
        out_dir.join("lane_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    Ok(RunSummary {
        seed,
        steps: sim.step_index,
        final_time: sim.time(),
        final_mass: [sim.state.total_mass(0), sim.state.total_mass(1)],
        total_lanes: report.total_lanes,
        lanes_per_pop: [report.lanes[0].len(), report.lanes[1].len()],
        unconverged_steps: sim.unconverged_steps,
        cap_hits_total: sim.cap_hits_total,
    })
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Io(std::io::Error::other(e))
    }
}

/// Rebuilds two-scale states from run artifacts for auditing: micro
/// positions from trajectory frames, densities from the per-population
/// density frames when given (zeros otherwise). Thetas resolve as in the
/// original run, with "auto" using the first density frame's mass.
pub fn reconstruct_states(
    cfg: &ScenarioConfig,
    frames: &[Frame],
    densities: Option<&[(f64, Vec<f64>)]>,
    densities_2: Option<&[(f64, Vec<f64>)]>,
) -> Result<Vec<TwoScaleState>, RunError> {
    let domain = cfg.build_domain()?;
    let grid = PorosityGrid::build(&domain, cfg.grid.nx, cfg.grid.ny, cfg.grid.samples_per_cell)?;
    let density_for = |pop: usize, k: usize| -> MacroField {
        let source = if pop == 0 { densities } else { densities_2 };
        match source {
            Some(rows) if k < rows.len() => MacroField::new(grid.clone(), rows[k].1.clone()),
            _ => MacroField::zeros(grid.clone()),
        }
    };
    let mut thetas = [1.0, 1.0];
    for (pop, (theta, section)) in thetas.iter_mut().zip([&cfg.pop1, &cfg.pop2]).enumerate() {
        *theta = match &section.theta {
            ThetaSpec::Value(t) => *t,
            ThetaSpec::Auto(_) => {
                let n = section.n as f64;
                let m = density_for(pop, 0).total_mass();
                if n + m > 0.0 {
                    n / (n + m)
                } else {
                    1.0
                }
            }
        };
    }
    let mut out = Vec::with_capacity(frames.len());
    for (k, frame) in frames.iter().enumerate() {
        let mut pops = Vec::with_capacity(2);
        let mut first_id = 0u64;
        for (pop, theta) in thetas.iter().enumerate() {
            let micro = MicroMeasure::from_positions(first_id, frame.positions[pop].clone());
            first_id += micro.len() as u64;
            pops.push(Population::new(micro, density_for(pop, k), *theta));
        }
        let pop2 = pops.pop().unwrap();
        let pop1 = pops.pop().unwrap();
        out.push(TwoScaleState::new([pop1, pop2]));
    }
    Ok(out)
}
