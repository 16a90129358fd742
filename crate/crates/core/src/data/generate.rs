use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    TwoCurve,
    ThreeSemi,
    TwoCircle,
    Pinwheel,
}

impl Shape {
    pub fn num_classes(self) -> usize {
        match self {
            Shape::TwoCurve | Shape::TwoCircle => 2,
            Shape::ThreeSemi => 3,
            Shape::Pinwheel => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::TwoCurve => "two-curve",
            Shape::ThreeSemi => "three-semi",
            Shape::TwoCircle => "two-circle",
            Shape::Pinwheel => "pinwheel",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "two-curve" => Ok(Shape::TwoCurve),
            "three-semi" => Ok(Shape::ThreeSemi),
            "two-circle" => Ok(Shape::TwoCircle),
            "pinwheel" => Ok(Shape::Pinwheel),
            other => Err(Error::Config(format!("unknown shape '{other}'"))),
        }
    }
}

/// Shape parameters for the synthetic generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    /// Two-curve: vertical offset between the two parabolic arcs.
    pub curve_gap: f64,
    /// Two-curve: noise sd as a fraction of the arc's horizontal span.
    pub curve_noise: f64,
    /// Three-semi: isotropic noise sd around unit-radius semicircles.
    pub semi_noise: f64,
    /// Two-circle: noise sd around circles of radius 1 and 2.
    pub circle_noise: f64,
    pub pinwheel_rate: f64,
    pub pinwheel_radial_noise: f64,
    pub pinwheel_tangential_noise: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            curve_gap: 0.8,
            curve_noise: 0.05,
            semi_noise: 0.08,
            circle_noise: 0.1,
            pinwheel_rate: 0.3,
            pinwheel_radial_noise: 0.3,
            pinwheel_tangential_noise: 0.05,
        }
    }
}

/// Class of each of `n` points: consecutive blocks, sizes differing by at most 1.
fn balanced_labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i * classes / n).collect()
}

pub fn generate(shape: Shape, n: usize, seed: u64) -> Result<Dataset> {
    generate_with(shape, n, seed, &GeneratorParams::default())
}

pub fn generate_with(shape: Shape, n: usize, seed: u64, p: &GeneratorParams) -> Result<Dataset> {
    let classes = shape.num_classes();
    if n < classes {
        return Err(Error::InvalidSize(format!(
            "{shape} needs at least {classes} points, got {n}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let labels = balanced_labels(n, classes);
    let mut y = DMatrix::zeros(n, 2);
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    for (i, &c) in labels.iter().enumerate() {
        let (a, b) = match shape {
            Shape::TwoCurve => {
                let t: f64 = rng.random_range(-1.0..1.0);
                let sd = p.curve_noise * 2.0;
                let offset = if c == 0 { 0.0 } else { -p.curve_gap };
                (t + sd * normal(&mut rng), t * t + offset + sd * normal(&mut rng))
            }
            Shape::ThreeSemi => {
                // Unit semicircles, alternately upright and inverted, each
                // nested into its neighbour's opening.
                let theta: f64 = rng.random_range(0.0..PI);
                let (cx, cy, sign) = match c {
                    0 => (0.0, 0.0, 1.0),
                    1 => (1.2, 0.5, -1.0),
                    _ => (2.4, 0.0, 1.0),
                };
                (
                    cx + theta.cos() + p.semi_noise * normal(&mut rng),
                    cy + sign * theta.sin() + p.semi_noise * normal(&mut rng),
                )
            }
            Shape::TwoCircle => {
                let theta: f64 = rng.random_range(0.0..2.0 * PI);
                let r = if c == 0 { 1.0 } else { 2.0 };
                (
                    r * theta.cos() + p.circle_noise * normal(&mut rng),
                    r * theta.sin() + p.circle_noise * normal(&mut rng),
                )
            }
            Shape::Pinwheel => {
                let radial = 1.0 + p.pinwheel_radial_noise * normal(&mut rng);
                let tangential = p.pinwheel_tangential_noise * normal(&mut rng);
                let angle = 2.0 * PI * c as f64 / classes as f64 + p.pinwheel_rate * radial.exp();
                let (s, co) = angle.sin_cos();
                (
                    10.0 * (radial * co - tangential * s),
                    10.0 * (radial * s + tangential * co),
                )
            }
        };
        y[(i, 0)] = a;
        y[(i, 1)] = b;
    }
    Dataset::new(y, Some(labels), shape.name())
}
