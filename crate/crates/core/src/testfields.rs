//! Smooth scalar fields with analytic gradients, used to probe the
//! transport dynamics through the integral identity
//! d/dt ∫ psi dmu = ∫ v · grad(psi) dmu.

use std::f64::consts::TAU;

use crate::geometry::Domain;
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestField {
    /// psi = x
    LinearX,
    /// psi = y
    LinearY,
    /// psi = a x + b y + c
    Affine { a: f64, b: f64, c: f64 },
    /// psi = x^2 + y^2
    Quadratic,
    /// psi = sin(2 pi x / wavelength); smooth across a periodic seam when
    /// the wavelength divides the corridor length
    SinX { wavelength: f64 },
    /// C-infinity bump supported on the disc of `radius` around `center`,
    /// normalized to 1 at the center
    Bump { center: Vec2, radius: f64 },
}

impl TestField {
    pub fn eval(&self, p: Vec2) -> f64 {
        match *self {
            TestField::LinearX => p.x,
            TestField::LinearY => p.y,
            TestField::Affine { a, b, c } => a * p.x + b * p.y + c,
            TestField::Quadratic => p.x * p.x + p.y * p.y,
            TestField::SinX { wavelength } => (TAU * p.x / wavelength).sin(),
            TestField::Bump { center, radius } => {
                let u = (p - center).norm_sq() / (radius * radius);
                if u >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - u)).exp()
                }
            }
        }
    }

    pub fn grad(&self, p: Vec2) -> Vec2 {
        match *self {
            TestField::LinearX => Vec2::new(1.0, 0.0),
            TestField::LinearY => Vec2::new(0.0, 1.0),
            TestField::Affine { a, b, .. } => Vec2::new(a, b),
            TestField::Quadratic => Vec2::new(2.0 * p.x, 2.0 * p.y),
            TestField::SinX { wavelength } => {
                let k = TAU / wavelength;
                Vec2::new(k * (k * p.x).cos(), 0.0)
            }
            TestField::Bump { center, radius } => {
                let r2 = radius * radius;
                let d = p - center;
                let u = d.norm_sq() / r2;
                if u >= 1.0 {
                    Vec2::ZERO
                } else {
                    let psi = (1.0 - 1.0 / (1.0 - u)).exp();
                    let denom = (1.0 - u) * (1.0 - u);
                    d * (-2.0 / r2 / denom * psi)
                }
            }
        }
    }

    /// Resolves a field by CLI name, sized to the given domain:
    /// `linear_x`, `linear_y`, `quadratic`, `sin_x` (one full period along
    /// the corridor), `bump` (centered, radius 0.45 * min extent).
    pub fn by_name(name: &str, domain: &Domain) -> Option<TestField> {
        match name {
            "linear_x" => Some(TestField::LinearX),
            "linear_y" => Some(TestField::LinearY),
            "quadratic" => Some(TestField::Quadratic),
            "sin_x" => Some(TestField::SinX {
                wavelength: domain.length,
            }),
            "bump" => Some(TestField::Bump {
                center: Vec2::new(domain.length / 2.0, domain.width / 2.0),
                radius: 0.45 * domain.length.min(domain.width),
            }),
            _ => None,
        }
    }

    pub const NAMES: &'static [&'static str] =
        &["linear_x", "linear_y", "quadratic", "sin_x", "bump"];
}
