//! Shared builders for the benchmark targets.

use std::sync::Arc;

use crowdsim_core::geometry::{BoundaryX, Domain, PorosityGrid};
use crowdsim_core::measures::{MacroField, MicroMeasure, Population, TwoScaleState};
use crowdsim_core::vec2::Vec2;

/// Corridor with an 80x16 porosity grid.
pub fn corridor() -> (Domain, Arc<PorosityGrid>) {
    let domain = Domain::corridor(20.0, 4.0, BoundaryX::Periodic);
    let grid = PorosityGrid::build(&domain, 80, 16, 1).unwrap();
    (domain, grid)
}

/// Purely agent-based state with `n` agents per subpopulation placed on a
/// deterministic jittered lattice.
pub fn micro_state(grid: &Arc<PorosityGrid>, n: usize) -> TwoScaleState {
    let place = |salt: u64| -> Vec<Vec2> {
        (0..n)
            .map(|k| {
                let t = (k as u64 * 2654435761 + salt * 97) % 10_000;
                let u = ((k as u64 * 40503 + salt * 131) % 10_000) as f64 / 10_000.0;
                Vec2::new(t as f64 / 10_000.0 * 20.0, 0.3 + 3.4 * u)
            })
            .collect()
    };
    TwoScaleState::new([
        Population::new(
            MicroMeasure::from_positions(0, place(1)),
            MacroField::zeros(grid.clone()),
            1.0,
        ),
        Population::new(
            MicroMeasure::from_positions(n as u64, place(2)),
            MacroField::zeros(grid.clone()),
            1.0,
        ),
    ])
}

/// Two-scale state carrying a Gaussian density blob per subpopulation in
/// addition to the agents.
pub fn hybrid_state(grid: &Arc<PorosityGrid>, n: usize) -> TwoScaleState {
    let micro = micro_state(grid, n);
    let blob = |x: f64| {
        MacroField::gaussian_blob(grid.clone(), Vec2::new(x, 2.0), 1.0, 3.0, 20.0).unwrap()
    };
    TwoScaleState::new([
        Population::new(micro.pops[0].micro.clone(), blob(6.0), 0.5),
        Population::new(micro.pops[1].micro.clone(), blob(14.0), 0.5),
    ])
}
