//! Assembly of the full velocity field: a constant desired velocity per
//! subpopulation plus a nonlocal interaction contribution driven by both
//! scales of both subpopulations, with optional anticipation variants that
//! make the field depend on itself. The self-referential variants are
//! resolved by Picard (fixed-point) iteration started from the desired
//! velocities.

use rayon::prelude::*;

use crate::geometry::Domain;
use crate::kernels::KernelParams;
use crate::measures::{other, TwoScaleState};
use crate::neighbors::CellList;
use crate::vec2::Vec2;

/// Floor for kernel distance arguments produced by prediction, which can
/// bring extrapolated positions arbitrarily close together.
const MIN_KERNEL_DIST: f64 = 1e-9;

/// How the interaction terms react to motion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Kernel argument is the current distance, anisotropy angle is measured
    /// against the desired velocity. The only variant with no
    /// self-reference.
    Explicit,
    /// Anisotropy angle measured against the actual (resolved) velocity at
    /// the evaluation point.
    ActualAngle,
    /// Kernel argument is the distance extrapolated one fixed horizon ahead
    /// using current velocities.
    PredictFixed,
    /// Kernel value averaged over extrapolated distances across a whole
    /// look-ahead interval.
    PredictInterval,
    /// Like `PredictInterval` with a decaying weight on farther look-ahead
    /// times.
    PredictWeighted,
}

impl Variant {
    /// Whether the velocity definition refers to the velocities being
    /// solved for.
    pub fn is_implicit(self) -> bool {
        self != Variant::Explicit
    }

    fn uses_interval(self) -> bool {
        matches!(self, Variant::PredictInterval | Variant::PredictWeighted)
    }
}

/// Look-ahead weight on [0, dt_max], mapped into [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightFn {
    Constant,
    LinearDecay,
    ExponentialDecay { rate: f64 },
}

impl WeightFn {
    pub fn eval(&self, tau: f64, dt_max: f64) -> f64 {
        match self {
            WeightFn::Constant => 1.0,
            WeightFn::LinearDecay => 1.0 - tau / dt_max,
            WeightFn::ExponentialDecay { rate } => (-rate * tau).exp(),
        }
    }
}

/// All parameters of the velocity law.
#[derive(Clone, Copy, Debug)]
pub struct VelocityModel {
    /// Desired velocity per subpopulation.
    pub v_des: [Vec2; 2],
    pub kernels: KernelParams,
    pub variant: Variant,
    /// Fixed prediction horizon for `PredictFixed`.
    pub dt_pred: f64,
    /// Look-ahead interval length for the interval variants.
    pub dt_max: f64,
    pub weight: WeightFn,
    /// Midpoint-rule nodes for the look-ahead integral.
    pub quadrature_nodes: usize,
    /// Fixed-point stop tolerance on the max velocity change per sweep.
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Cap on the magnitude of the interaction contribution, guarding the
    /// explicit time integrator against the kernel singularity.
    pub speed_cap: f64,
}

impl VelocityModel {
    /// Counterflow model with desired speed `speed` along +x / -x and
    /// reference kernel parameters.
    pub fn counterflow(speed: f64) -> Self {
        VelocityModel {
            v_des: [Vec2::new(speed, 0.0), Vec2::new(-speed, 0.0)],
            kernels: KernelParams::default(),
            variant: Variant::Explicit,
            dt_pred: 0.5,
            dt_max: 1.0,
            weight: WeightFn::Constant,
            quadrature_nodes: 16,
            fp_tol: 1e-8,
            fp_max_iter: 50,
            speed_cap: 2.0 * speed,
        }
    }

    pub fn validate(&self, issues: &mut Vec<String>) {
        self.kernels.validate(issues);
        if self.fp_tol <= 0.0 {
            issues.push(format!("fp_tol must be positive (got {})", self.fp_tol));
        }
        if self.fp_max_iter == 0 {
            issues.push("fp_max_iter must be at least 1".to_string());
        }
        if self.quadrature_nodes == 0 {
            issues.push("quadrature_nodes must be at least 1".to_string());
        }
        if self.variant.uses_interval() && self.dt_max <= 0.0 {
            issues.push(format!(
                "dt_max must be positive for interval prediction (got {})",
                self.dt_max
            ));
        }
        if self.variant == Variant::PredictFixed && self.dt_pred < 0.0 {
            issues.push(format!(
                "dt_pred must be non-negative (got {})",
                self.dt_pred
            ));
        }
        if self.speed_cap <= 0.0 {
            issues.push(format!("speed_cap must be positive (got {})", self.speed_cap));
        }
        if let WeightFn::ExponentialDecay { rate } = self.weight {
            if rate < 0.0 {
                issues.push(format!("weight decay rate must be non-negative (got {rate})"));
            }
        }
    }

    /// Upper bound on any resolved speed: desired speed plus the interaction
    /// cap.
    pub fn speed_bound(&self) -> f64 {
        self.v_des[0].norm().max(self.v_des[1].norm()) + self.speed_cap
    }

    /// Look-ahead horizon of the active variant.
    pub fn horizon(&self) -> f64 {
        match self.variant {
            Variant::Explicit | Variant::ActualAngle => 0.0,
            Variant::PredictFixed => self.dt_pred,
            Variant::PredictInterval | Variant::PredictWeighted => self.dt_max,
        }
    }

    /// Distance beyond which no source can contribute, accounting for how
    /// far prediction can close a gap within the horizon.
    pub fn interaction_reach(&self) -> f64 {
        self.kernels.interaction_range() + 2.0 * self.speed_bound() * self.horizon()
    }
}

/// Signed angle between `y - x` and a reference velocity. A zero reference
/// (stationary agent) is treated as forward-facing: the angle is 0 and the
/// anisotropy weight becomes 1.
pub fn alpha_angle(x: Vec2, y: Vec2, reference_velocity: Vec2) -> f64 {
    let r = y - x;
    assert!(!r.is_zero(), "alpha_angle requires y != x");
    angle_between(reference_velocity, r)
}

fn angle_between(reference: Vec2, r: Vec2) -> f64 {
    if reference.is_zero() {
        0.0
    } else {
        reference.cross(r).atan2(reference.dot(r))
    }
}

/// Distance between `x` and `y` extrapolated `tau` seconds ahead with the
/// given velocities.
pub fn predicted_kernel_arg(x: Vec2, y: Vec2, vx: Vec2, vy: Vec2, tau: f64) -> f64 {
    assert!(tau >= 0.0, "prediction horizon must be non-negative");
    ((y + vy * tau) - (x + vx * tau)).norm()
}

/// Midpoint-rule average of `f` over predicted distances on
/// [0, dt_max], weighted by the model's look-ahead weight when the variant
/// is `PredictWeighted` and by 1 otherwise.
pub fn interval_averaged_kernel<F: Fn(f64) -> f64>(
    f: F,
    x: Vec2,
    y: Vec2,
    vx: Vec2,
    vy: Vec2,
    model: &VelocityModel,
) -> f64 {
    let weight = match model.variant {
        Variant::PredictWeighted => Some(&model.weight),
        _ => None,
    };
    interval_average(&f, y - x, vy - vx, model.dt_max, model.quadrature_nodes, weight)
}

fn interval_average<F: Fn(f64) -> f64>(
    f: &F,
    r0: Vec2,
    dv: Vec2,
    dt_max: f64,
    nodes: usize,
    weight: Option<&WeightFn>,
) -> f64 {
    assert!(dt_max > 0.0, "dt_max must be positive");
    assert!(nodes >= 1, "quadrature needs at least one node");
    let dtau = dt_max / nodes as f64;
    let mut sum = 0.0;
    for q in 0..nodes {
        let tau = (q as f64 + 0.5) * dtau;
        let s = (r0 + dv * tau).norm().max(MIN_KERNEL_DIST);
        let w = weight.map_or(1.0, |w| w.eval(tau, dt_max));
        sum += f(s) * w;
    }
    sum / nodes as f64
}

/// Velocities at every micro agent and every grid cell, per subpopulation.
/// Serves both as the Picard iterate and as the resolved result.
#[derive(Clone, Debug)]
pub struct VelocityField {
    pub micro: [Vec<Vec2>; 2],
    pub cells: [Vec<Vec2>; 2],
}

impl VelocityField {
    /// Constant field: every agent and cell of subpopulation i moves with
    /// `velocities[i]`.
    pub fn uniform(state: &TwoScaleState, velocities: [Vec2; 2]) -> Self {
        let n_cells = state.grid().cell_count();
        VelocityField {
            micro: [
                vec![velocities[0]; state.pops[0].micro.len()],
                vec![velocities[1]; state.pops[1].micro.len()],
            ],
            cells: [vec![velocities[0]; n_cells], vec![velocities[1]; n_cells]],
        }
    }

    fn max_difference(&self, other: &VelocityField) -> f64 {
        let mut worst: f64 = 0.0;
        for pop in 0..2 {
            for (a, b) in self.micro[pop].iter().zip(&other.micro[pop]) {
                worst = worst.max((*a - *b).norm());
            }
            for (a, b) in self.cells[pop].iter().zip(&other.cells[pop]) {
                worst = worst.max((*a - *b).norm());
            }
        }
        worst
    }
}

/// The four unweighted interaction parts plus the wall contribution,
/// evaluated at one point for one subpopulation.
#[derive(Clone, Copy, Debug, Default)]
pub struct InteractionParts {
    pub own_micro: Vec2,
    pub own_macro: Vec2,
    pub opp_micro: Vec2,
    pub opp_macro: Vec2,
    pub wall: Vec2,
}

impl InteractionParts {
    /// Theta-weighted combination (before the speed cap).
    pub fn combine(&self, theta_own: f64, theta_opp: f64) -> Vec2 {
        self.own_micro * theta_own
            + self.own_macro * (1.0 - theta_own)
            + self.opp_micro * theta_opp
            + self.opp_macro * (1.0 - theta_opp)
            + self.wall
    }
}

/// Interaction evaluator over a frozen state. Builds one cell list per
/// subpopulation on construction; all queries afterwards are read-only.
pub struct Evaluator<'a> {
    state: &'a TwoScaleState,
    domain: &'a Domain,
    model: &'a VelocityModel,
    lists: [CellList; 2],
    macro_mass: [f64; 2],
    reach: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(state: &'a TwoScaleState, domain: &'a Domain, model: &'a VelocityModel) -> Self {
        assert!(
            std::sync::Arc::ptr_eq(state.pops[0].field.grid(), state.pops[1].field.grid()),
            "both subpopulations must share one porosity grid"
        );
        let reach = model.interaction_reach();
        let lists = [
            CellList::build(state.pops[0].micro.positions(), domain, reach),
            CellList::build(state.pops[1].micro.positions(), domain, reach),
        ];
        let macro_mass = [
            state.pops[0].field.total_mass(),
            state.pops[1].field.total_mass(),
        ];
        Evaluator {
            state,
            domain,
            model,
            lists,
            macro_mass,
            reach,
        }
    }

    fn angle_reference(&self, pop: usize, x_vel: Vec2) -> Vec2 {
        match self.model.variant {
            Variant::ActualAngle => x_vel,
            _ => self.model.v_des[pop],
        }
    }

    fn require_guess<'g>(&self, guess: Option<&'g VelocityField>) -> Option<&'g VelocityField> {
        assert!(
            guess.is_some() || !self.model.variant.is_implicit(),
            "implicit velocity variant requires a velocity guess"
        );
        guess
    }

    /// Interaction contribution at `x` for subpopulation `pop`, magnitude
    /// capped at the model's speed cap. `x_velocity` is the current velocity
    /// estimate at `x` (the Picard iterate there); the explicit variant
    /// ignores it. Implicit variants additionally need the guess field for
    /// source velocities.
    pub fn interaction_velocity(
        &self,
        x: Vec2,
        x_velocity: Vec2,
        pop: usize,
        guess: Option<&VelocityField>,
    ) -> Vec2 {
        self.evaluate(x, x_velocity, pop, guess, false).0
    }

    /// Reference path enumerating every agent and every cell directly, with
    /// no neighbor acceleration. Must agree with `interaction_velocity` to
    /// floating-point roundoff.
    pub fn interaction_velocity_direct(
        &self,
        x: Vec2,
        x_velocity: Vec2,
        pop: usize,
        guess: Option<&VelocityField>,
    ) -> Vec2 {
        self.evaluate(x, x_velocity, pop, guess, true).0
    }

    /// The unweighted two-scale parts at `x`, fully evaluated regardless of
    /// the theta weights.
    pub fn parts(
        &self,
        x: Vec2,
        x_velocity: Vec2,
        pop: usize,
        guess: Option<&VelocityField>,
    ) -> InteractionParts {
        let guess = self.require_guess(guess);
        InteractionParts {
            own_micro: self.micro_part(x, x_velocity, pop, pop, guess, false),
            own_macro: self.macro_part(x, x_velocity, pop, pop, guess, false),
            opp_micro: self.micro_part(x, x_velocity, pop, other(pop), guess, false),
            opp_macro: self.macro_part(x, x_velocity, pop, other(pop), guess, false),
            wall: self.wall_part(x),
        }
    }

    fn evaluate(
        &self,
        x: Vec2,
        x_velocity: Vec2,
        pop: usize,
        guess: Option<&VelocityField>,
        brute: bool,
    ) -> (Vec2, bool) {
        let guess = self.require_guess(guess);
        let kp = &self.model.kernels;
        let theta_own = self.state.pops[pop].theta;
        let opp = other(pop);
        let theta_opp = self.state.pops[opp].theta;

        let mut v = Vec2::ZERO;
        if kp.f_own > 0.0 {
            if theta_own > 0.0 {
                v += self.micro_part(x, x_velocity, pop, pop, guess, brute) * theta_own;
            }
            if theta_own < 1.0 && self.macro_mass[pop] > 0.0 {
                v += self.macro_part(x, x_velocity, pop, pop, guess, brute) * (1.0 - theta_own);
            }
        }
        if kp.f_opp > 0.0 {
            if theta_opp > 0.0 {
                v += self.micro_part(x, x_velocity, pop, opp, guess, brute) * theta_opp;
            }
            if theta_opp < 1.0 && self.macro_mass[opp] > 0.0 {
                v += self.macro_part(x, x_velocity, pop, opp, guess, brute) * (1.0 - theta_opp);
            }
        }
        v += self.wall_part(x);

        let capped = v.norm() > self.model.speed_cap;
        if capped {
            v = v.clamp_norm(self.model.speed_cap);
        }
        (v, capped)
    }

    /// Dirac sum over the agents of `source_pop`, skipping sources located
    /// exactly at `x`.
    fn micro_part(
        &self,
        x: Vec2,
        x_velocity: Vec2,
        pop: usize,
        source_pop: usize,
        guess: Option<&VelocityField>,
        brute: bool,
    ) -> Vec2 {
        let own = source_pop == pop;
        let positions = self.state.pops[source_pop].micro.positions();
        if positions.is_empty() {
            return Vec2::ZERO;
        }
        let kp = &self.model.kernels;
        let ref_vel = self.angle_reference(pop, x_velocity);
        let candidates: Vec<u32> = if brute {
            (0..positions.len() as u32).collect()
        } else {
            self.lists[source_pop].candidates(x)
        };
        let mut acc = Vec2::ZERO;
        for &k in &candidates {
            let p = positions[k as usize];
            let r = self.domain.displacement(x, p);
            if r.is_zero() {
                continue;
            }
            let source_vel = || {
                guess.expect("implicit variant checked on entry").micro[source_pop][k as usize]
            };
            let kern = self.kernel_value(own, r, x_velocity, source_vel);
            if kern == 0.0 {
                continue;
            }
            let s = r.norm();
            let g = kp.aniso(angle_between(ref_vel, r));
            acc += (r / s) * (kern * g);
        }
        acc
    }

    /// Midpoint-rule integral over the density of `source_pop`, restricted
    /// to cells within interaction reach. The evaluation point's own cell is
    /// excluded when its center essentially coincides with `x` (within
    /// h/10), removing the kernel singularity from the quadrature.
    fn macro_part(
        &self,
        x: Vec2,
        x_velocity: Vec2,
        pop: usize,
        source_pop: usize,
        guess: Option<&VelocityField>,
        brute: bool,
    ) -> Vec2 {
        let field = &self.state.pops[source_pop].field;
        if self.macro_mass[source_pop] == 0.0 {
            return Vec2::ZERO;
        }
        let own = source_pop == pop;
        let grid = field.grid();
        let (nx, ny) = (grid.nx(), grid.ny());
        let h = grid.cell_size();
        let h2 = h * h;
        let kp = &self.model.kernels;
        let ref_vel = self.angle_reference(pop, x_velocity);
        let periodic = matches!(self.domain.boundary_x, crate::geometry::BoundaryX::Periodic);

        // index window covering the interaction reach (whole grid when brute)
        let (i_lo, i_hi, j_lo, j_hi) = if brute {
            (0i64, nx as i64 - 1, 0i64, ny as i64 - 1)
        } else {
            let pad = self.reach / h + 1.0;
            let ci = (x.x / h).floor();
            let cj = (x.y / h).floor();
            (
                (ci - pad) as i64,
                (ci + pad) as i64,
                ((cj - pad) as i64).max(0),
                ((cj + pad) as i64).min(ny as i64 - 1),
            )
        };
        let (i_lo, i_hi) = if periodic {
            if i_hi - i_lo + 1 >= nx as i64 {
                (0, nx as i64 - 1)
            } else {
                (i_lo, i_hi)
            }
        } else {
            (i_lo.max(0), i_hi.min(nx as i64 - 1))
        };

        let mut acc = Vec2::ZERO;
        for j in j_lo..=j_hi {
            for raw_i in i_lo..=i_hi {
                let i = if periodic {
                    raw_i.rem_euclid(nx as i64) as usize
                } else {
                    raw_i as usize
                };
                let idx = j as usize * nx + i;
                let rh = field.rho_hat_at(idx);
                if rh == 0.0 {
                    continue;
                }
                let c = grid.cell_center(i, j as usize);
                let r = self.domain.displacement(x, c);
                let s = r.norm();
                if s < h / 10.0 {
                    continue;
                }
                let source_vel =
                    || guess.expect("implicit variant checked on entry").cells[source_pop][idx];
                let kern = self.kernel_value(own, r, x_velocity, source_vel);
                if kern == 0.0 {
                    continue;
                }
                let g = kp.aniso(angle_between(ref_vel, r));
                acc += (r / s) * (kern * g * rh * h2);
            }
        }
        acc
    }

    /// Kernel value for a source at displacement `r`, with the variant's
    /// choice of distance argument. `source_vel` is only invoked by the
    /// prediction variants.
    fn kernel_value<F: Fn() -> Vec2>(&self, own: bool, r: Vec2, x_vel: Vec2, source_vel: F) -> f64 {
        let kp = &self.model.kernels;
        let f = |s: f64| if own { kp.own(s) } else { kp.opp(s) };
        match self.model.variant {
            Variant::Explicit | Variant::ActualAngle => f(r.norm()),
            Variant::PredictFixed => {
                let dv = source_vel() - x_vel;
                f((r + dv * self.model.dt_pred).norm().max(MIN_KERNEL_DIST))
            }
            Variant::PredictInterval | Variant::PredictWeighted => {
                let dv = source_vel() - x_vel;
                let weight = match self.model.variant {
                    Variant::PredictWeighted => Some(&self.model.weight),
                    _ => None,
                };
                interval_average(&f, r, dv, self.model.dt_max, self.model.quadrature_nodes, weight)
            }
        }
    }

    /// Wall and obstacle repulsion along the inward normal.
    fn wall_part(&self, x: Vec2) -> Vec2 {
        let kp = &self.model.kernels;
        if kp.f_wall == 0.0 {
            return Vec2::ZERO;
        }
        let (dist, normal) = self.domain.wall_clearance(x);
        normal * (-kp.wall(dist))
    }

    /// One Picard sweep: full velocities (desired + interaction) at every
    /// agent and every walkable cell, evaluated against the previous
    /// iterate. Returns the number of points where the speed cap engaged.
    fn sweep(&self, prev: &VelocityField) -> (VelocityField, u64) {
        let guess = if self.model.variant.is_implicit() {
            Some(prev)
        } else {
            None
        };
        let grid = self.state.grid();
        let mut micro: [Vec<Vec2>; 2] = [Vec::new(), Vec::new()];
        let mut cells: [Vec<Vec2>; 2] = [Vec::new(), Vec::new()];
        let mut cap_hits = 0u64;
        for pop in 0..2 {
            let v_des = self.model.v_des[pop];
            let results: Vec<(Vec2, bool)> = self.state.pops[pop]
                .micro
                .positions()
                .par_iter()
                .enumerate()
                .map(|(k, &p)| {
                    let (dv, capped) = self.evaluate(p, prev.micro[pop][k], pop, guess, false);
                    (v_des + dv, capped)
                })
                .collect();
            cap_hits += results.iter().filter(|(_, c)| *c).count() as u64;
            micro[pop] = results.into_iter().map(|(v, _)| v).collect();

            // cells only matter while this subpopulation carries macro mass
            if self.macro_mass[pop] == 0.0 {
                cells[pop] = vec![v_des; grid.cell_count()];
                continue;
            }
            let results: Vec<(Vec2, bool)> = (0..grid.cell_count())
                .into_par_iter()
                .map(|idx| {
                    if grid.phi_at(idx) == 0.0 {
                        return (v_des, false);
                    }
                    let (i, j) = (idx % grid.nx(), idx / grid.nx());
                    let c = grid.cell_center(i, j);
                    let (dv, capped) = self.evaluate(c, prev.cells[pop][idx], pop, guess, false);
                    (v_des + dv, capped)
                })
                .collect();
            cap_hits += results.iter().filter(|(_, c)| *c).count() as u64;
            cells[pop] = results.into_iter().map(|(v, _)| v).collect();
        }
        (VelocityField { micro, cells }, cap_hits)
    }
}

/// Resolved velocities with fixed-point diagnostics.
#[derive(Clone, Debug)]
pub struct VelocitySolution {
    pub velocities: VelocityField,
    /// Picard sweeps performed (0 for the explicit variant).
    pub iterations: usize,
    /// Max velocity change over all evaluation points in the last sweep.
    pub residual: f64,
    pub converged: bool,
    /// Residual after each sweep.
    pub residual_history: Vec<f64>,
    /// Evaluation points where the speed cap engaged in the final sweep.
    pub cap_hits: u64,
}

/// Resolves the velocity field for the current state. The explicit variant
/// evaluates once against the desired velocities; implicit variants iterate
/// v^(n+1) = v_des + interaction(v^(n)) from v^(0) = v_des until the max
/// change drops below `fp_tol` or the iteration cap is hit, in which case
/// the last iterate is returned flagged as unconverged.
pub fn resolve_velocities(
    state: &TwoScaleState,
    domain: &Domain,
    model: &VelocityModel,
) -> VelocitySolution {
    let eval = Evaluator::new(state, domain, model);
    let start = VelocityField::uniform(state, model.v_des);
    if !model.variant.is_implicit() {
        let (velocities, cap_hits) = eval.sweep(&start);
        return VelocitySolution {
            velocities,
            iterations: 0,
            residual: 0.0,
            converged: true,
            residual_history: Vec::new(),
            cap_hits,
        };
    }
    let mut current = start;
    let mut history = Vec::new();
    let mut cap_hits = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < model.fp_max_iter {
        let (next, hits) = eval.sweep(&current);
        iterations += 1;
        cap_hits = hits;
        residual = next.max_difference(&current);
        history.push(residual);
        current = next;
        if residual < model.fp_tol {
            converged = true;
            break;
        }
    }
    VelocitySolution {
        velocities: current,
        iterations,
        residual,
        converged,
        residual_history: history,
        cap_hits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryX, PorosityGrid};
    use crate::measures::{MacroField, MicroMeasure, Population};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn corridor(boundary: BoundaryX) -> (Domain, Arc<PorosityGrid>) {
        let d = Domain::corridor(20.0, 4.0, boundary);
        let g = PorosityGrid::build(&d, 80, 16, 1).unwrap();
        (d, g)
    }

    /// Pure micro state from explicit agent positions.
    fn micro_state(
        grid: &Arc<PorosityGrid>,
        pop1: &[(f64, f64)],
        pop2: &[(f64, f64)],
    ) -> TwoScaleState {
        let to_micro = |first: u64, pts: &[(f64, f64)]| {
            MicroMeasure::from_positions(
                first,
                pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
            )
        };
        TwoScaleState::new([
            Population::new(to_micro(0, pop1), MacroField::zeros(grid.clone()), 1.0),
            Population::new(
                to_micro(pop1.len() as u64, pop2),
                MacroField::zeros(grid.clone()),
                1.0,
            ),
        ])
    }

    #[test]
    fn alpha_angle_cases() {
        let x = Vec2::ZERO;
        assert_eq!(alpha_angle(x, Vec2::new(1.0, 0.0), Vec2::new(1.34, 0.0)), 0.0);
        assert!((alpha_angle(x, Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)) - PI / 2.0).abs() < 1e-15);
        assert!((alpha_angle(x, Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)) - PI).abs() < 1e-15);
        // stationary reference: forward-facing by convention
        assert_eq!(alpha_angle(x, Vec2::new(0.0, 1.0), Vec2::ZERO), 0.0);
    }

    #[test]
    #[should_panic(expected = "y != x")]
    fn alpha_angle_rejects_coincident_points() {
        alpha_angle(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn predicted_arg_cases() {
        let x = Vec2::ZERO;
        let y = Vec2::new(2.0, 0.0);
        // common drift cancels
        let v = Vec2::new(0.7, -0.3);
        assert!((predicted_kernel_arg(x, y, v, v, 3.0) - 2.0).abs() < 1e-15);
        // head-on closing at speed 2
        let s = predicted_kernel_arg(x, y, Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0), 0.5);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(predicted_kernel_arg(x, y, v, Vec2::new(2.0, 1.0), 0.0), 2.0);
    }

    #[test]
    fn interval_average_constant_integrand() {
        let model = VelocityModel {
            variant: Variant::PredictInterval,
            quadrature_nodes: 64,
            dt_max: 1.0,
            ..VelocityModel::counterflow(1.34)
        };
        let kp = model.kernels;
        let x = Vec2::ZERO;
        let y = Vec2::new(1.0, 0.0);
        let avg = interval_averaged_kernel(|s| kp.opp(s), x, y, Vec2::ZERO, Vec2::ZERO, &model);
        assert!((avg - kp.opp(1.0)).abs() <= 1e-13 * kp.opp(1.0).abs());
    }

    #[test]
    fn interval_average_head_on_analytic_oracle() {
        // head-on pair starting outside the repulsion radius; the exact
        // value is 0.5 * integral of f_opp over s in [0.5, 2] = -0.16875
        let kp = KernelParams::default();
        let x = Vec2::ZERO;
        let y = Vec2::new(2.5, 0.0);
        let vx = Vec2::new(1.0, 0.0);
        let vy = Vec2::new(-1.0, 0.0);
        let oracle = -0.16875;

        let mut model = VelocityModel::counterflow(1.34);
        model.variant = Variant::PredictInterval;
        model.dt_max = 1.0;
        model.quadrature_nodes = 64;
        let avg64 = interval_averaged_kernel(|s| kp.opp(s), x, y, vx, vy, &model);
        assert!(avg64 < 0.0, "anticipation must engage repulsion before contact");
        assert!((avg64 - oracle).abs() < 1e-3, "64-node value {avg64} vs oracle {oracle}");

        model.quadrature_nodes = 10_000;
        let avg_fine = interval_averaged_kernel(|s| kp.opp(s), x, y, vx, vy, &model);
        assert!((avg_fine - oracle).abs() < 1e-6);

        // instantaneous kernel sees nothing at this distance
        assert_eq!(kp.opp(2.5), 0.0);
    }

    #[test]
    fn weighted_with_constant_weight_matches_unweighted_exactly() {
        let kp = KernelParams::default();
        let x = Vec2::ZERO;
        let y = Vec2::new(2.2, 0.4);
        let vx = Vec2::new(1.3, 0.0);
        let vy = Vec2::new(-1.1, 0.2);
        let mut unweighted = VelocityModel::counterflow(1.34);
        unweighted.variant = Variant::PredictInterval;
        let mut weighted = unweighted;
        weighted.variant = Variant::PredictWeighted;
        weighted.weight = WeightFn::Constant;
        let a = interval_averaged_kernel(|s| kp.opp(s), x, y, vx, vy, &unweighted);
        let b = interval_averaged_kernel(|s| kp.opp(s), x, y, vx, vy, &weighted);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_state_gives_zero_interaction() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let state = micro_state(&grid, &[], &[]);
        let model = VelocityModel::counterflow(1.34);
        let eval = Evaluator::new(&state, &domain, &model);
        let v = eval.interaction_velocity(Vec2::new(10.0, 2.0), model.v_des[0], 0, None);
        assert_eq!(v, Vec2::ZERO);
    }

    #[test]
    fn single_opponent_ahead_hand_value() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        // evaluation point and opponent at unit distance, far from walls
        let state = micro_state(&grid, &[(5.0, 2.0)], &[(6.0, 2.0)]);
        let model = VelocityModel::counterflow(1.34);
        let eval = Evaluator::new(&state, &domain, &model);
        let v = eval.interaction_velocity(Vec2::new(5.0, 2.0), model.v_des[0], 0, None);
        assert!((v - Vec2::new(-0.225, 0.0)).norm() < 1e-12);

        // opponent outside the repulsion radius contributes nothing
        let far = micro_state(&grid, &[(5.0, 2.0)], &[(8.0, 2.0)]);
        let eval = Evaluator::new(&far, &domain, &model);
        let v = eval.interaction_velocity(Vec2::new(5.0, 2.0), model.v_des[0], 0, None);
        assert_eq!(v, Vec2::ZERO);
    }

    #[test]
    fn single_mate_ahead_attracts() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let state = micro_state(&grid, &[(5.0, 2.0), (6.0, 2.0)], &[]);
        let model = VelocityModel::counterflow(1.34);
        let eval = Evaluator::new(&state, &domain, &model);
        let v = eval.interaction_velocity(Vec2::new(5.0, 2.0), model.v_des[0], 0, None);
        assert!((v - Vec2::new(0.15, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn wall_repulsion_points_inward() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let state = micro_state(&grid, &[], &[]);
        let model = VelocityModel::counterflow(1.34);
        let eval = Evaluator::new(&state, &domain, &model);
        // 0.25 m above the lower wall: f_wall(0.25) = -6, pushed up, capped
        let v = eval.interaction_velocity(Vec2::new(10.0, 0.25), model.v_des[0], 0, None);
        assert!(v.y > 0.0);
        assert!((v.norm() - model.speed_cap).abs() < 1e-12, "cap engages at {}", v.norm());
        // beyond the wall range: nothing
        let v = eval.interaction_velocity(Vec2::new(10.0, 1.0), model.v_des[0], 0, None);
        assert_eq!(v, Vec2::ZERO);
    }

    #[test]
    fn periodic_interactions_wrap_across_the_seam() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let state = micro_state(&grid, &[(0.5, 2.0)], &[(19.5, 2.0)]);
        let model = VelocityModel::counterflow(1.34);
        let eval = Evaluator::new(&state, &domain, &model);
        // the opponent is 1 m away through the seam, behind the walker
        let v = eval.interaction_velocity(Vec2::new(0.5, 2.0), model.v_des[0], 0, None);
        assert!(v.x > 0.0, "repulsion from behind pushes forward, got {v:?}");
        let expected = -KernelParams::default().opp(1.0) * KernelParams::default().aniso(PI);
        assert!((v.x - expected).abs() < 1e-12);
    }

    #[test]
    fn locality_added_far_agent_changes_nothing() {
        let (domain, grid) = corridor(BoundaryX::Open);
        let model = VelocityModel::counterflow(1.34);
        let base = micro_state(&grid, &[(5.0, 2.0), (5.5, 2.4)], &[(6.0, 1.8)]);
        let extended = micro_state(&grid, &[(5.0, 2.0), (5.5, 2.4)], &[(6.0, 1.8), (15.0, 2.0)]);
        let eval_a = Evaluator::new(&base, &domain, &model);
        let eval_b = Evaluator::new(&extended, &domain, &model);
        for &(px, py) in &[(5.0, 2.0), (5.5, 2.4), (6.0, 1.8)] {
            let x = Vec2::new(px, py);
            let va = eval_a.interaction_velocity(x, model.v_des[0], 0, None);
            let vb = eval_b.interaction_velocity(x, model.v_des[0], 0, None);
            assert_eq!(va, vb, "compact support must make the far agent invisible");
        }
    }

    #[test]
    fn mirror_symmetry_through_midline() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let d = 4.0;
        let pop1: Vec<(f64, f64)> = vec![(3.0, 1.0), (4.2, 2.5), (5.1, 3.2), (3.8, 0.7)];
        let pop2: Vec<(f64, f64)> = vec![(4.0, 1.4), (5.6, 2.8), (2.9, 3.0)];
        let mirror_pts =
            |pts: &[(f64, f64)]| pts.iter().map(|&(x, y)| (x, d - y)).collect::<Vec<_>>();
        let state = micro_state(&grid, &pop1, &pop2);
        let mirrored = micro_state(&grid, &mirror_pts(&pop1), &mirror_pts(&pop2));

        let mut model = VelocityModel::counterflow(1.34);
        model.v_des = [Vec2::new(1.0, 0.3), Vec2::new(-0.8, 0.2)];
        model.variant = Variant::ActualAngle;
        let mut mirrored_model = model;
        mirrored_model.v_des = [Vec2::new(1.0, -0.3), Vec2::new(-0.8, -0.2)];

        let sol = resolve_velocities(&state, &domain, &model);
        let sol_m = resolve_velocities(&mirrored, &domain, &mirrored_model);
        assert!(sol.converged && sol_m.converged);
        for pop in 0..2 {
            for (v, vm) in sol.velocities.micro[pop].iter().zip(&sol_m.velocities.micro[pop]) {
                assert!((v.x - vm.x).abs() < 1e-12, "{v:?} vs {vm:?}");
                assert!((v.y + vm.y).abs() < 1e-12, "{v:?} vs {vm:?}");
            }
        }
    }

    #[test]
    fn zero_forces_converge_in_one_iteration() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let state = micro_state(&grid, &[(5.0, 2.0), (5.5, 2.0)], &[(6.0, 2.0)]);
        let mut model = VelocityModel::counterflow(1.34);
        model.variant = Variant::ActualAngle;
        model.kernels.f_opp = 0.0;
        model.kernels.f_own = 0.0;
        model.kernels.f_wall = 0.0;
        let sol = resolve_velocities(&state, &domain, &model);
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        for (pop, vs) in sol.velocities.micro.iter().enumerate() {
            for v in vs {
                assert_eq!(*v, model.v_des[pop]);
            }
        }
    }

    #[test]
    fn single_agent_any_variant_returns_v_des() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let state = micro_state(&grid, &[(10.0, 2.0)], &[]);
        for variant in [
            Variant::Explicit,
            Variant::ActualAngle,
            Variant::PredictFixed,
            Variant::PredictInterval,
            Variant::PredictWeighted,
        ] {
            let mut model = VelocityModel::counterflow(1.34);
            model.variant = variant;
            let sol = resolve_velocities(&state, &domain, &model);
            assert!(sol.converged);
            assert!(sol.iterations <= 1);
            assert_eq!(sol.velocities.micro[0][0], model.v_des[0]);
        }
    }

    #[test]
    #[should_panic(expected = "velocity guess")]
    fn implicit_variant_requires_guess() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let state = micro_state(&grid, &[(5.0, 2.0)], &[(6.0, 2.0)]);
        let mut model = VelocityModel::counterflow(1.34);
        model.variant = Variant::PredictFixed;
        let eval = Evaluator::new(&state, &domain, &model);
        eval.interaction_velocity(Vec2::new(5.0, 2.0), model.v_des[0], 0, None);
    }

    #[test]
    fn resolve_is_bit_deterministic() {
        let (domain, grid) = corridor(BoundaryX::Periodic);
        let pop1: Vec<(f64, f64)> = (0..12).map(|k| (1.3 + 1.4 * k as f64, 1.0 + 0.17 * k as f64 % 2.0)).collect();
        let pop2: Vec<(f64, f64)> = (0..12).map(|k| (2.1 + 1.3 * k as f64, 3.0 - 0.13 * k as f64 % 2.0)).collect();
        let state = micro_state(&grid, &pop1, &pop2);
        let mut model = VelocityModel::counterflow(1.34);
        model.variant = Variant::ActualAngle;
        let a = resolve_velocities(&state, &domain, &model);
        let b = resolve_velocities(&state, &domain, &model);
        for pop in 0..2 {
            for (va, vb) in a.velocities.micro[pop].iter().zip(&b.velocities.micro[pop]) {
                assert_eq!(va.x.to_bits(), vb.x.to_bits());
                assert_eq!(va.y.to_bits(), vb.y.to_bits());
            }
        }
    }
}
