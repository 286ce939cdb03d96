//! Uniform-bin cell list for short-range neighbor queries over agent
//! positions. Bins are at least as wide as the query radius, so a 3x3 bin
//! window is guaranteed to contain every point within that radius (wrapping
//! in x for periodic domains). Candidates come back sorted by index so
//! downstream accumulation order stays fixed.

use crate::geometry::{BoundaryX, Domain};
use crate::vec2::Vec2;

#[derive(Debug)]
pub struct CellList {
    bins: Vec<Vec<u32>>,
    nbx: usize,
    nby: usize,
    bw_x: f64,
    bw_y: f64,
    periodic_x: bool,
}

impl CellList {
    /// Bins `points` for queries up to distance `radius`.
    pub fn build(points: &[Vec2], domain: &Domain, radius: f64) -> Self {
        assert!(radius > 0.0, "query radius must be positive");
        let nbx = ((domain.length / radius).floor() as usize).max(1);
        let nby = ((domain.width / radius).floor() as usize).max(1);
        let bw_x = domain.length / nbx as f64;
        let bw_y = domain.width / nby as f64;
        let mut bins = vec![Vec::new(); nbx * nby];
        for (k, p) in points.iter().enumerate() {
            let (bi, bj) = bin_of(p.x, p.y, bw_x, bw_y, nbx, nby);
            bins[bj * nbx + bi].push(k as u32);
        }
        CellList {
            bins,
            nbx,
            nby,
            bw_x,
            bw_y,
            periodic_x: domain.boundary_x == BoundaryX::Periodic,
        }
    }

    /// Indices of all points that could lie within the build radius of `x`,
    /// sorted ascending. May include farther points; never misses one.
    pub fn candidates(&self, x: Vec2) -> Vec<u32> {
        let (bi, bj) = bin_of(x.x, x.y, self.bw_x, self.bw_y, self.nbx, self.nby);
        let mut xs: Vec<usize> = Vec::with_capacity(3);
        for di in -1i64..=1 {
            let raw = bi as i64 + di;
            let wrapped = if self.periodic_x {
                raw.rem_euclid(self.nbx as i64) as usize
            } else if raw < 0 || raw >= self.nbx as i64 {
                continue;
            } else {
                raw as usize
            };
            if !xs.contains(&wrapped) {
                xs.push(wrapped);
            }
        }
        let mut out = Vec::new();
        for dj in -1i64..=1 {
            let j = bj as i64 + dj;
            if j < 0 || j >= self.nby as i64 {
                continue;
            }
            for &i in &xs {
                out.extend_from_slice(&self.bins[j as usize * self.nbx + i]);
            }
        }
        out.sort_unstable();
        out
    }
}

fn bin_of(x: f64, y: f64, bw_x: f64, bw_y: f64, nbx: usize, nby: usize) -> (usize, usize) {
    let bi = ((x / bw_x).floor() as i64).clamp(0, nbx as i64 - 1) as usize;
    let bj = ((y / bw_y).floor() as i64).clamp(0, nby as i64 - 1) as usize;
    (bi, bj)
}
