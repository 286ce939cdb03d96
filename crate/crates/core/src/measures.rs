//! The two descriptions of a crowd and their coupling: a counting measure
//! over discrete agent positions (micro), a cell-averaged density carried by
//! the porosity grid (macro), and the convex combination of both scales per
//! subpopulation.
//!
//! The macro density `rho` is measured per unit of *walkable* area; the
//! corresponding plain-area density is `rho_hat = rho * phi`, which vanishes
//! wherever the porosity does.

use std::sync::Arc;

use crate::geometry::{PorosityGrid, Rect};
use crate::vec2::Vec2;

/// A finite set of agent positions with stable ids, acting as a counting
/// measure on boxes.
#[derive(Clone, Debug, Default)]
pub struct MicroMeasure {
    ids: Vec<u64>,
    positions: Vec<Vec2>,
}

impl MicroMeasure {
    pub fn new(ids: Vec<u64>, positions: Vec<Vec2>) -> Self {
        assert_eq!(ids.len(), positions.len(), "one id per position");
        MicroMeasure { ids, positions }
    }

    /// Positions with ids assigned sequentially from `first_id`.
    pub fn from_positions(first_id: u64, positions: Vec<Vec2>) -> Self {
        let ids = (0..positions.len() as u64).map(|k| first_id + k).collect();
        MicroMeasure { ids, positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, Vec2)> + '_ {
        self.ids.iter().copied().zip(self.positions.iter().copied())
    }

    /// Number of agents inside the half-open box [x0,x1) x [y0,y1). The
    /// half-open convention makes disjoint tilings partition the count.
    pub fn count_in(&self, b: &Rect) -> usize {
        self.positions
            .iter()
            .filter(|p| b.contains_half_open(**p))
            .count()
    }
}

/// Cell-averaged density with respect to the porosity measure, tied to the
/// grid it lives on.
#[derive(Clone, Debug)]
pub struct MacroField {
    grid: Arc<PorosityGrid>,
    rho: Vec<f64>,
}

impl MacroField {
    pub fn zeros(grid: Arc<PorosityGrid>) -> Self {
        let rho = vec![0.0; grid.cell_count()];
        MacroField { grid, rho }
    }

    /// Wraps a raw density vector. Densities must be non-negative and zero
    /// on fully solid cells.
    pub fn new(grid: Arc<PorosityGrid>, rho: Vec<f64>) -> Self {
        assert_eq!(rho.len(), grid.cell_count());
        for (idx, &r) in rho.iter().enumerate() {
            assert!(r >= 0.0, "negative density {r} in cell {idx}");
            assert!(
                !(grid.phi_at(idx) == 0.0 && r != 0.0),
                "density {r} on a fully solid cell {idx}"
            );
        }
        MacroField { grid, rho }
    }

    pub fn grid(&self) -> &Arc<PorosityGrid> {
        &self.grid
    }

    pub fn rho(&self, i: usize, j: usize) -> f64 {
        self.rho[self.grid.index(i, j)]
    }

    pub fn rho_slice(&self) -> &[f64] {
        &self.rho
    }

    /// Plain-area density rho * phi of one cell.
    pub fn rho_hat(&self, i: usize, j: usize) -> f64 {
        let idx = self.grid.index(i, j);
        self.rho[idx] * self.grid.phi_at(idx)
    }

    pub fn rho_hat_at(&self, idx: usize) -> f64 {
        self.rho[idx] * self.grid.phi_at(idx)
    }

    /// Mass carried by the listed cells: sum of rho * phi * h^2.
    pub fn mass_in_cells(&self, cells: &[(usize, usize)]) -> f64 {
        let h2 = self.grid.cell_size() * self.grid.cell_size();
        cells
            .iter()
            .map(|&(i, j)| self.rho_hat(i, j) * h2)
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        let h2 = self.grid.cell_size() * self.grid.cell_size();
        (0..self.rho.len()).map(|idx| self.rho_hat_at(idx) * h2).sum()
    }

    /// Constant density over the cells whose centers fall in `rect`, scaled
    /// so the field carries `mass`. Solid cells stay empty.
    pub fn constant_in_rect(
        grid: Arc<PorosityGrid>,
        rect: &Rect,
        mass: f64,
    ) -> Result<Self, String> {
        let weights: Vec<f64> = (0..grid.cell_count())
            .map(|idx| {
                let (i, j) = (idx % grid.nx(), idx / grid.nx());
                if grid.phi_at(idx) > 0.0 && rect.contains_half_open(grid.cell_center(i, j)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_weights(grid, weights, mass)
    }

    /// Gaussian blob truncated at `cutoff_sigmas`, masked by the porosity
    /// and scaled to carry `mass`.
    pub fn gaussian_blob(
        grid: Arc<PorosityGrid>,
        center: Vec2,
        sigma: f64,
        cutoff_sigmas: f64,
        mass: f64,
    ) -> Result<Self, String> {
        if sigma <= 0.0 {
            return Err(format!("gaussian sigma must be positive (got {sigma})"));
        }
        let cut2 = (cutoff_sigmas * sigma) * (cutoff_sigmas * sigma);
        let weights: Vec<f64> = (0..grid.cell_count())
            .map(|idx| {
                let (i, j) = (idx % grid.nx(), idx / grid.nx());
                let d2 = (grid.cell_center(i, j) - center).norm_sq();
                if grid.phi_at(idx) > 0.0 && d2 <= cut2 {
                    (-d2 / (2.0 * sigma * sigma)).exp()
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_weights(grid, weights, mass)
    }

    /// Normalizes non-negative per-cell weights (a density w.r.t. the
    /// porosity measure) so the resulting field carries `mass`.
    fn from_weights(grid: Arc<PorosityGrid>, weights: Vec<f64>, mass: f64) -> Result<Self, String> {
        if mass < 0.0 {
            return Err(format!("macro mass must be non-negative (got {mass})"));
        }
        if mass == 0.0 {
            return Ok(Self::zeros(grid));
        }
        let h2 = grid.cell_size() * grid.cell_size();
        let raw_mass: f64 = weights
            .iter()
            .enumerate()
            .map(|(idx, w)| w * grid.phi_at(idx) * h2)
            .sum();
        if raw_mass <= 0.0 {
            return Err("macro initial condition has no support inside the walkable region".into());
        }
        let scale = mass / raw_mass;
        let rho = weights.into_iter().map(|w| w * scale).collect();
        Ok(Self::new(grid, rho))
    }
}

/// One subpopulation: its agents, its continuum density, and the weight
/// theta blending them (1 = purely discrete, 0 = purely continuum).
#[derive(Clone, Debug)]
pub struct Population {
    pub micro: MicroMeasure,
    pub field: MacroField,
    pub theta: f64,
}

impl Population {
    pub fn new(micro: MicroMeasure, field: MacroField, theta: f64) -> Self {
        assert!((0.0..=1.0).contains(&theta), "theta must lie in [0, 1]");
        Population { micro, field, theta }
    }

    pub fn total_mass(&self) -> f64 {
        self.theta * self.micro.len() as f64 + (1.0 - self.theta) * self.field.total_mass()
    }
}

/// Index of the other subpopulation.
pub fn other(pop: usize) -> usize {
    debug_assert!(pop < 2);
    1 - pop
}

/// The full two-population, two-scale crowd state.
#[derive(Clone, Debug)]
pub struct TwoScaleState {
    pub pops: [Population; 2],
}

impl TwoScaleState {
    pub fn new(pops: [Population; 2]) -> Self {
        TwoScaleState { pops }
    }

    pub fn grid(&self) -> &Arc<PorosityGrid> {
        self.pops[0].field.grid()
    }

    pub fn total_mass(&self, pop: usize) -> f64 {
        self.pops[pop].total_mass()
    }

    /// Integrates a scalar test function against the two-scale measure of
    /// subpopulation `pop`: theta-weighted sum over agent positions plus the
    /// midpoint-rule integral of psi * rho * phi over the grid.
    pub fn integrate<F: Fn(Vec2) -> f64>(&self, pop: usize, psi: F) -> f64 {
        let p = &self.pops[pop];
        let micro: f64 = p.micro.positions().iter().map(|&x| psi(x)).sum();
        let grid = p.field.grid();
        let h2 = grid.cell_size() * grid.cell_size();
        let mut macro_part = 0.0;
        if p.theta < 1.0 || p.field.total_mass() != 0.0 {
            for j in 0..grid.ny() {
                for i in 0..grid.nx() {
                    let rh = p.field.rho_hat(i, j);
                    if rh != 0.0 {
                        macro_part += psi(grid.cell_center(i, j)) * rh * h2;
                    }
                }
            }
        }
        p.theta * micro + (1.0 - p.theta) * macro_part
    }
}
