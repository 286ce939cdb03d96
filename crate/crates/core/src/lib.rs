//! Two-scale pedestrian counterflow simulation: discrete agents and a
//! continuum density per subpopulation, transported through a corridor whose
//! obstacles enter as a cell-averaged porosity.

pub mod analysis;
pub mod dynamics;
pub mod geometry;
pub mod kernels;
pub mod measures;
pub mod neighbors;
pub mod output;
pub mod scenario;
pub mod testfields;
pub mod vec2;
pub mod velocity;

pub use geometry::{BoundaryX, Domain, GeometryError, Obstacle, PorosityGrid, Rect};
pub use kernels::KernelParams;
pub use measures::{MacroField, MicroMeasure, Population, TwoScaleState};
pub use vec2::Vec2;
pub use velocity::{
    alpha_angle, interval_averaged_kernel, predicted_kernel_arg, resolve_velocities, Evaluator,
    InteractionParts, Variant, VelocityField, VelocityModel, VelocitySolution, WeightFn,
};
