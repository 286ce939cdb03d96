//! Closed-form pairwise interaction kernels: repulsion from the opposite
//! group, repulsion/attraction within the own group, directional anisotropy,
//! and wall repulsion.
//!
//! All distance kernels have compact support and are continuous at their
//! support boundary. Negative values repel (the velocity contribution points
//! away from the source), positive values attract.

use std::f64::consts::{PI, TAU};

/// Interaction amplitudes and ranges, shared by both subpopulations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    /// Amplitude of the opposite-group repulsion.
    pub f_opp: f64,
    /// Amplitude of the own-group repulsion/attraction.
    pub f_own: f64,
    /// Amplitude of the wall repulsion.
    pub f_wall: f64,
    /// Repulsion radius against the opposite group.
    pub r_r_opp: f64,
    /// Own-group repulsion radius (equilibrium spacing inside clusters).
    pub r_r_own: f64,
    /// Own-group attraction radius (outer interaction range).
    pub r_a_own: f64,
    /// Wall repulsion range.
    pub r_wall: f64,
    /// Anisotropy floor in [0, 1]: 1 = full all-around vision, 0 = reacts
    /// only to what is straight ahead.
    pub sigma: f64,
}

impl Default for KernelParams {
    /// Reference counterflow parameter set used throughout the test suite.
    fn default() -> Self {
        KernelParams {
            f_opp: 0.3,
            f_own: 0.3,
            f_wall: 0.5,
            r_r_opp: 2.0,
            r_r_own: 0.5,
            r_a_own: 2.0,
            r_wall: 0.5,
            sigma: 0.5,
        }
    }
}

impl KernelParams {
    /// Checks the internal parameter constraints, pushing one message per
    /// violation into `issues`.
    pub fn validate(&self, issues: &mut Vec<String>) {
        if self.f_opp < 0.0 || self.f_own < 0.0 || self.f_wall < 0.0 {
            issues.push(format!(
                "kernel amplitudes must be non-negative (f_opp={}, f_own={}, f_wall={})",
                self.f_opp, self.f_own, self.f_wall
            ));
        }
        if !(self.r_r_own > 0.0 && self.r_r_own < self.r_a_own) {
            issues.push(format!(
                "kernel radii must satisfy 0 < R_r_own < R_a_own (got R_r_own={}, R_a_own={})",
                self.r_r_own, self.r_a_own
            ));
        }
        if self.r_r_opp <= 0.0 {
            issues.push(format!("R_r_opp must be positive (got {})", self.r_r_opp));
        }
        if self.r_wall <= 0.0 {
            issues.push(format!("R_wall must be positive (got {})", self.r_wall));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            issues.push(format!("sigma must lie in [0, 1] (got {})", self.sigma));
        }
    }

    /// Outer range of pedestrian-pedestrian interactions.
    pub fn interaction_range(&self) -> f64 {
        self.r_a_own.max(self.r_r_opp)
    }

    /// Opposite-group kernel: -F_opp (1/s^2 - 1/R^2) inside the repulsion
    /// radius, zero beyond. Always <= 0.
    pub fn opp(&self, s: f64) -> f64 {
        assert!(s > 0.0, "opposite-group kernel needs s > 0 (got {s})");
        if s > self.r_r_opp {
            0.0
        } else {
            -self.f_opp * (1.0 / (s * s) - 1.0 / (self.r_r_opp * self.r_r_opp))
        }
    }

    /// Own-group kernel: -F_own (1/s - 1/R_r)(1/s - 1/R_a) inside the
    /// attraction radius, zero beyond. Negative (repulsive) below R_r_own,
    /// positive (attractive) between R_r_own and R_a_own, with exact zeros at
    /// both radii.
    pub fn own(&self, s: f64) -> f64 {
        assert!(s > 0.0, "own-group kernel needs s > 0 (got {s})");
        if s > self.r_a_own {
            0.0
        } else {
            -self.f_own * (1.0 / s - 1.0 / self.r_r_own) * (1.0 / s - 1.0 / self.r_a_own)
        }
    }

    /// Directional weight sigma + (1 - sigma)(1 + cos alpha)/2 in
    /// [sigma, 1]. Angles outside [-pi, pi] are wrapped.
    pub fn aniso(&self, alpha: f64) -> f64 {
        let a = wrap_angle(alpha);
        self.sigma + (1.0 - self.sigma) * (1.0 + a.cos()) / 2.0
    }

    /// Wall repulsion with the same inverse-square shape as the
    /// opposite-group kernel. Distances at or below zero (agent touching the
    /// wall) are capped at 1e-3 * R_wall so the value stays finite.
    pub fn wall(&self, s: f64) -> f64 {
        let s = s.max(1e-3 * self.r_wall);
        if s > self.r_wall {
            0.0
        } else {
            -self.f_wall * (1.0 / (s * s) - 1.0 / (self.r_wall * self.r_wall))
        }
    }
}

/// Wraps an angle into [-pi, pi]; +pi stays +pi.
pub fn wrap_angle(alpha: f64) -> f64 {
    if (-PI..=PI).contains(&alpha) {
        return alpha;
    }
    let mut a = alpha % TAU;
    if a > PI {
        a -= TAU;
    } else if a < -PI {
        a += TAU;
    }
    a
}
