//! Time evolution of the two-scale state: explicit Euler transport of the
//! agents along their resolved velocities with reflecting walls and
//! obstacles, a conservative first-order upwind finite-volume update of the
//! continuum densities with porosity-masked fluxes, and the integral
//! transport identity used as a numerical audit of whole trajectories.

use thiserror::Error;

use crate::geometry::{BoundaryX, Domain, Obstacle};
use crate::measures::{MacroField, MicroMeasure, Population, TwoScaleState};
use crate::testfields::TestField;
use crate::vec2::Vec2;
use crate::velocity::{resolve_velocities, VelocityModel};

#[derive(Debug, Error)]
pub enum StepError {
    #[error("agent {id} ended inside an obstacle at ({x}, {y}); the time step is too large, reduce dt")]
    AgentInObstacle { id: u64, x: f64, y: f64 },
    #[error("agent {id} overshot the corridor walls at ({x}, {y}) within one step; reduce dt")]
    WallOvershoot { id: u64, x: f64, y: f64 },
    #[error("negative cell mass {mass} in cell ({i}, {j}) after a transport update; this breaks the upwind scheme's positivity guarantee")]
    NegativeDensity { i: usize, j: usize, mass: f64 },
    #[error("weak-form audit needs at least 3 uniformly spaced states")]
    TooFewSamples,
}

/// Macro substep policy: derive the count from the CFL condition or force a
/// fixed number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Substeps {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct StepConfig {
    /// Micro time step (one coupled step advances this far).
    pub dt: f64,
    /// Courant number in (0, 1] for the macro substepping.
    pub cfl: f64,
    /// Final simulation time.
    pub t_end: f64,
    pub substeps: Substeps,
}

impl StepConfig {
    pub fn validate(&self, issues: &mut Vec<String>) {
        if self.dt <= 0.0 {
            issues.push(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            issues.push(format!("cfl must lie in (0, 1] (got {})", self.cfl));
        }
        if self.t_end <= 0.0 {
            issues.push(format!("t_end must be positive (got {})", self.t_end));
        }
        if self.substeps == Substeps::Fixed(0) {
            issues.push("macro_substeps must be at least 1".to_string());
        }
    }
}

/// Advances every agent by `dt` along its velocity, then applies the
/// boundary rules: periodic wrap or open removal in x, mirror reflection at
/// the y walls, and mirror reflection of the penetration depth out of any
/// obstacle. An agent that still sits inside an obstacle (or beyond a wall)
/// after one reflection pass aborts the step.
pub fn micro_step(
    micro: &MicroMeasure,
    velocities: &[Vec2],
    domain: &Domain,
    dt: f64,
) -> Result<MicroMeasure, StepError> {
    assert_eq!(micro.len(), velocities.len());
    let mut ids = Vec::with_capacity(micro.len());
    let mut positions = Vec::with_capacity(micro.len());
    for (k, (id, p)) in micro.iter().enumerate() {
        let mut q = p + velocities[k] * dt;
        match domain.boundary_x {
            BoundaryX::Periodic => q.x = q.x.rem_euclid(domain.length),
            BoundaryX::Open => {
                if q.x < 0.0 || q.x > domain.length {
                    continue;
                }
            }
        }
        if q.y < 0.0 {
            q.y = -q.y;
        } else if q.y > domain.width {
            q.y = 2.0 * domain.width - q.y;
        }
        if !(q.y >= 0.0 && q.y <= domain.width) {
            return Err(StepError::WallOvershoot { id, x: q.x, y: q.y });
        }
        for ob in &domain.obstacles {
            if ob.contains_interior(q) {
                q = reflect_out(ob, q);
            }
        }
        match domain.boundary_x {
            BoundaryX::Periodic => q.x = q.x.rem_euclid(domain.length),
            BoundaryX::Open => {
                if q.x < 0.0 || q.x > domain.length {
                    continue;
                }
            }
        }
        if !domain.in_pore_closure(q) {
            return Err(StepError::AgentInObstacle { id, x: q.x, y: q.y });
        }
        ids.push(id);
        positions.push(q);
    }
    Ok(MicroMeasure::new(ids, positions))
}

/// Mirrors a point that penetrated an obstacle across the nearest boundary
/// feature, so the normal displacement component reflects.
fn reflect_out(ob: &Obstacle, q: Vec2) -> Vec2 {
    match ob {
        Obstacle::Rect(r) => {
            let depths = [
                (q.x - r.x0, 0usize),
                (r.x1 - q.x, 1),
                (q.y - r.y0, 2),
                (r.y1 - q.y, 3),
            ];
            let mut best = depths[0];
            for d in &depths[1..] {
                if d.0 < best.0 {
                    best = *d;
                }
            }
            match best.1 {
                0 => Vec2::new(2.0 * r.x0 - q.x, q.y),
                1 => Vec2::new(2.0 * r.x1 - q.x, q.y),
                2 => Vec2::new(q.x, 2.0 * r.y0 - q.y),
                _ => Vec2::new(q.x, 2.0 * r.y1 - q.y),
            }
        }
        Obstacle::Disc { center, radius } => {
            let d = q - *center;
            let dist = d.norm();
            if dist == 0.0 {
                // dead center: deterministic ejection along +x
                *center + Vec2::new(2.0 * radius, 0.0)
            } else {
                *center + d * ((2.0 * radius - dist) / dist)
            }
        }
    }
}

/// One conservative upwind update of the cell masses rho*phi*h^2 over `dt`,
/// internally substepped to respect the CFL bound. Face values are upwinded
/// from the adjacent cell masses, face velocities are the average of the two
/// adjacent cell-center velocities, and any face touching a fully solid
/// cell carries zero flux, as do the corridor walls. The x boundary wraps or
/// lets mass leave depending on the domain.
pub fn macro_step(
    field: &MacroField,
    cell_velocities: &[Vec2],
    domain: &Domain,
    dt: f64,
    cfl: f64,
    substeps: Substeps,
) -> Result<MacroField, StepError> {
    let grid = field.grid().clone();
    let (nx, ny) = (grid.nx(), grid.ny());
    assert_eq!(cell_velocities.len(), nx * ny);
    let h = grid.cell_size();
    let h2 = h * h;

    let mut q: Vec<f64> = (0..nx * ny).map(|idx| field.rho_hat_at(idx) * h2).collect();
    let total: f64 = q.iter().sum();
    if total == 0.0 {
        return Ok(field.clone());
    }
    let neg_tol = -1e-12 * total.max(1.0);

    let n_sub = match substeps {
        Substeps::Fixed(n) => n.max(1),
        Substeps::Auto => {
            let mut vmax: f64 = 0.0;
            for (idx, v) in cell_velocities.iter().enumerate() {
                if grid.phi_at(idx) > 0.0 {
                    vmax = vmax.max(v.x.abs() + v.y.abs());
                }
            }
            ((dt * vmax) / (cfl * h)).ceil().max(1.0) as usize
        }
    };
    let tau = dt / n_sub as f64;
    let periodic = domain.boundary_x == BoundaryX::Periodic;

    let mut dq = vec![0.0; nx * ny];
    for _ in 0..n_sub {
        dq.iter_mut().for_each(|d| *d = 0.0);

        // x faces; flux is mass flow in +x through the face
        for j in 0..ny {
            let row = j * nx;
            for fi in 0..=nx {
                if fi == 0 || fi == nx {
                    if periodic {
                        if fi == nx {
                            continue; // face nx is the same seam as face 0
                        }
                        let left = row + nx - 1;
                        let right = row;
                        if grid.phi_at(left) == 0.0 || grid.phi_at(right) == 0.0 {
                            continue;
                        }
                        let u = 0.5 * (cell_velocities[left].x + cell_velocities[right].x);
                        let upwind = if u > 0.0 { q[left] } else { q[right] };
                        let flux = u * upwind / h;
                        dq[left] -= tau * flux;
                        dq[right] += tau * flux;
                    } else {
                        // open boundary: outflow only, nothing enters
                        let cell = if fi == 0 { row } else { row + nx - 1 };
                        if grid.phi_at(cell) == 0.0 {
                            continue;
                        }
                        let u = cell_velocities[cell].x;
                        if fi == 0 && u < 0.0 {
                            dq[cell] += tau * u * q[cell] / h;
                        } else if fi == nx && u > 0.0 {
                            dq[cell] -= tau * u * q[cell] / h;
                        }
                    }
                } else {
                    let left = row + fi - 1;
                    let right = row + fi;
                    if grid.phi_at(left) == 0.0 || grid.phi_at(right) == 0.0 {
                        continue;
                    }
                    let u = 0.5 * (cell_velocities[left].x + cell_velocities[right].x);
                    let upwind = if u > 0.0 { q[left] } else { q[right] };
                    let flux = u * upwind / h;
                    dq[left] -= tau * flux;
                    dq[right] += tau * flux;
                }
            }
        }

        // y faces; walls at j = 0 and j = ny carry no flux
        for fj in 1..ny {
            for i in 0..nx {
                let lower = (fj - 1) * nx + i;
                let upper = fj * nx + i;
                if grid.phi_at(lower) == 0.0 || grid.phi_at(upper) == 0.0 {
                    continue;
                }
                let u = 0.5 * (cell_velocities[lower].y + cell_velocities[upper].y);
                let upwind = if u > 0.0 { q[lower] } else { q[upper] };
                let flux = u * upwind / h;
                dq[lower] -= tau * flux;
                dq[upper] += tau * flux;
            }
        }

        for idx in 0..nx * ny {
            q[idx] += dq[idx];
            if q[idx] < neg_tol {
                return Err(StepError::NegativeDensity {
                    i: idx % nx,
                    j: idx / nx,
                    mass: q[idx],
                });
            }
        }
    }

    let rho: Vec<f64> = (0..nx * ny)
        .map(|idx| {
            let phi = grid.phi_at(idx);
            if phi > 0.0 {
                (q[idx] / (phi * h2)).max(0.0)
            } else {
                debug_assert_eq!(q[idx], 0.0, "mass leaked into a solid cell");
                0.0
            }
        })
        .collect();
    Ok(MacroField::new(grid, rho))
}

/// Per-step run diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct StepDiagnostics {
    /// Total two-scale mass per subpopulation after the step.
    pub mass: [f64; 2],
    /// Largest resolved speed over agents (and cells carrying mass).
    pub max_speed: f64,
    pub fp_iterations: usize,
    pub fp_residual: f64,
    pub unconverged: bool,
    /// Evaluation points where the interaction speed cap engaged.
    pub cap_hits: u64,
}

/// One synchronous step of the coupled system: resolve the velocity field
/// for the current state, then advance the agents and the densities of both
/// subpopulations with it.
pub fn coupled_step(
    state: &TwoScaleState,
    domain: &Domain,
    model: &VelocityModel,
    cfg: &StepConfig,
) -> Result<(TwoScaleState, StepDiagnostics), StepError> {
    let sol = resolve_velocities(state, domain, model);

    let mut max_speed: f64 = 0.0;
    for pop in 0..2 {
        for v in &sol.velocities.micro[pop] {
            max_speed = max_speed.max(v.norm());
        }
        if state.pops[pop].field.total_mass() > 0.0 {
            let grid = state.grid();
            for idx in 0..grid.cell_count() {
                if grid.phi_at(idx) > 0.0 {
                    max_speed = max_speed.max(sol.velocities.cells[pop][idx].norm());
                }
            }
        }
    }

    let step_pop = |pop: usize| -> Result<Population, StepError> {
        let p = &state.pops[pop];
        let micro = micro_step(&p.micro, &sol.velocities.micro[pop], domain, cfg.dt)?;
        let field = macro_step(
            &p.field,
            &sol.velocities.cells[pop],
            domain,
            cfg.dt,
            cfg.cfl,
            cfg.substeps,
        )?;
        Ok(Population::new(micro, field, p.theta))
    };
    let next = TwoScaleState::new([step_pop(0)?, step_pop(1)?]);

    let diag = StepDiagnostics {
        mass: [next.total_mass(0), next.total_mass(1)],
        max_speed,
        fp_iterations: sol.iterations,
        fp_residual: sol.residual,
        unconverged: !sol.converged,
        cap_hits: sol.cap_hits,
    };
    Ok((next, diag))
}

/// Residual of the integral transport identity along a trajectory sampled
/// at uniform spacing `dt`: for each interior sample, the central difference
/// of t -> ∫ psi dmu_t minus ∫ v · grad(psi) dmu_t. First-order transport
/// makes this O(dt). For periodic domains psi must be smooth across the
/// seam (compact interior support or a periodic field), otherwise wrap
/// events contaminate the difference quotient.
pub fn weak_form_residual(
    states: &[TwoScaleState],
    dt: f64,
    pop: usize,
    psi: &TestField,
    domain: &Domain,
    model: &VelocityModel,
) -> Result<Vec<(f64, f64)>, StepError> {
    if states.len() < 3 {
        return Err(StepError::TooFewSamples);
    }
    let integrals: Vec<f64> = states
        .iter()
        .map(|s| s.integrate(pop, |p| psi.eval(p)))
        .collect();
    let mut out = Vec::with_capacity(states.len() - 2);
    for n in 1..states.len() - 1 {
        let state = &states[n];
        let sol = resolve_velocities(state, domain, model);
        let p = &state.pops[pop];
        let micro_rhs: f64 = p
            .micro
            .positions()
            .iter()
            .enumerate()
            .map(|(k, &x)| sol.velocities.micro[pop][k].dot(psi.grad(x)))
            .sum();
        let grid = p.field.grid();
        let h2 = grid.cell_size() * grid.cell_size();
        let mut macro_rhs = 0.0;
        if p.theta < 1.0 && p.field.total_mass() > 0.0 {
            for j in 0..grid.ny() {
                for i in 0..grid.nx() {
                    let idx = grid.index(i, j);
                    let rh = p.field.rho_hat_at(idx);
                    if rh != 0.0 {
                        let c = grid.cell_center(i, j);
                        macro_rhs += sol.velocities.cells[pop][idx].dot(psi.grad(c)) * rh * h2;
                    }
                }
            }
        }
        let rhs = p.theta * micro_rhs + (1.0 - p.theta) * macro_rhs;
        let lhs = (integrals[n + 1] - integrals[n - 1]) / (2.0 * dt);
        out.push((n as f64 * dt, lhs - rhs));
    }
    Ok(out)
}
