//! Two-dimensional benchmark functions with analytic gradients.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandscapeId {
    Rosenbrock,
    Rastrigin,
    Himmelblau,
    Beale,
    Ackley,
}

impl LandscapeId {
    pub const ALL: [LandscapeId; 5] = [
        LandscapeId::Rosenbrock,
        LandscapeId::Rastrigin,
        LandscapeId::Himmelblau,
        LandscapeId::Beale,
        LandscapeId::Ackley,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LandscapeId::Rosenbrock => "rosenbrock",
            LandscapeId::Rastrigin => "rastrigin",
            LandscapeId::Himmelblau => "himmelblau",
            LandscapeId::Beale => "beale",
            LandscapeId::Ackley => "ackley",
        }
    }
}

impl fmt::Display for LandscapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LandscapeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|l| l.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|l| l.name()).collect();
                Error::invalid(
                    "landscape",
                    format!("unknown landscape `{s}`; valid: {}", names.join(", ")),
                )
            })
    }
}

// Himmelblau's three irrational minima, polished to double precision.
const HIMMELBLAU_MINIMA: [[f64; 2]; 4] = [
    [3.0, 2.0],
    [-2.805118086952745, 3.131312518250573],
    [-3.779310253377747, -3.2831859912861696],
    [3.5844283403304917, -1.8481265269644036],
];

/// A test function, optionally shifted by a positive constant so that its
/// minimum value is strictly positive (needed by the log-loss embedding).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landscape {
    id: LandscapeId,
    offset: f64,
}

/// Standard two-dimensional form of a named test function.
pub fn make_landscape(name: &str) -> Result<Landscape> {
    Ok(Landscape::new(name.parse()?))
}

/// `l` shifted upward by `c`; gradients and minimisers are unchanged.
pub fn offset_loss(l: &Landscape, c: f64) -> Result<Landscape> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("offset", format!("must be > 0, got {c}")));
    }
    Ok(Landscape {
        id: l.id,
        offset: l.offset + c,
    })
}

impl Landscape {
    pub fn new(id: LandscapeId) -> Self {
        Self { id, offset: 0.0 }
    }

    pub fn id(&self) -> LandscapeId {
        self.id
    }

    pub fn name(&self) -> &'static str {
        self.id.name()
    }

    pub fn dim(&self) -> usize {
        2
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn min_value(&self) -> f64 {
        self.offset
    }

    pub fn minima(&self) -> Vec<ParamVector> {
        let pts: &[[f64; 2]] = match self.id {
            LandscapeId::Rosenbrock => &[[1.0, 1.0]],
            LandscapeId::Rastrigin | LandscapeId::Ackley => &[[0.0, 0.0]],
            LandscapeId::Himmelblau => &HIMMELBLAU_MINIMA,
            LandscapeId::Beale => &[[3.0, 0.5]],
        };
        pts.iter()
            .map(|p| ParamVector::from_raw(p.to_vec()))
            .collect()
    }

    /// Fixed start point shared by every optimizer, away from all minima.
    pub fn default_start(&self) -> ParamVector {
        let p = match self.id {
            LandscapeId::Rosenbrock => [-1.2, 1.0],
            LandscapeId::Rastrigin => [1.2, -0.8],
            LandscapeId::Himmelblau => [0.0, 0.0],
            LandscapeId::Beale => [1.0, 1.0],
            LandscapeId::Ackley => [2.5, -1.6],
        };
        ParamVector::from_raw(p.to_vec())
    }

    /// Euclidean distance from `theta` to the nearest global minimiser.
    pub fn distance_to_minimum(&self, theta: &ParamVector) -> f64 {
        self.minima()
            .iter()
            .map(|m| {
                m.iter()
                    .zip(theta)
                    .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b))
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, theta: &ParamVector) -> Result<f64> {
        Error::check_len(2, theta.len())?;
        let (x, y) = (theta[0], theta[1]);
        let raw = match self.id {
            LandscapeId::Rosenbrock => (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2),
            LandscapeId::Rastrigin => {
                20.0 + x * x - 10.0 * (2.0 * PI * x).cos() + y * y - 10.0 * (2.0 * PI * y).cos()
            }
            LandscapeId::Himmelblau => (x * x + y - 11.0).powi(2) + (x + y * y - 7.0).powi(2),
            LandscapeId::Beale => {
                let (a1, a2, a3) = beale_terms(x, y);
                a1 * a1 + a2 * a2 + a3 * a3
            }
            LandscapeId::Ackley => {
                // a = 20, b = 0.2, c = 2π, written with expm1 so the value is
                // exactly 0 at the origin and never negative nearby.
                let rho = (0.5 * (x * x + y * y)).sqrt();
                let sin_sq = (PI * x).sin().powi(2) + (PI * y).sin().powi(2);
                -20.0 * (-0.2 * rho).exp_m1() - E * (-sin_sq).exp_m1()
            }
        };
        Ok(raw + self.offset)
    }

    pub fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        Error::check_len(2, theta.len())?;
        let (x, y) = (theta[0], theta[1]);
        let g = match self.id {
            LandscapeId::Rosenbrock => {
                let w = y - x * x;
                [-2.0 * (1.0 - x) - 400.0 * x * w, 200.0 * w]
            }
            LandscapeId::Rastrigin => [
                2.0 * x + 20.0 * PI * (2.0 * PI * x).sin(),
                2.0 * y + 20.0 * PI * (2.0 * PI * y).sin(),
            ],
            LandscapeId::Himmelblau => {
                let a = x * x + y - 11.0;
                let b = x + y * y - 7.0;
                [4.0 * x * a + 2.0 * b, 2.0 * a + 4.0 * y * b]
            }
            LandscapeId::Beale => {
                let (a1, a2, a3) = beale_terms(x, y);
                [
                    2.0 * (a1 * (y - 1.0) + a2 * (y * y - 1.0) + a3 * (y * y * y - 1.0)),
                    2.0 * x * (a1 + 2.0 * a2 * y + 3.0 * a3 * y * y),
                ]
            }
            LandscapeId::Ackley => {
                let rho = (0.5 * (x * x + y * y)).sqrt();
                // The cone tip at the origin has no gradient; report zero there.
                let radial = if rho > 0.0 {
                    2.0 * (-0.2 * rho).exp() / rho
                } else {
                    0.0
                };
                let c = (0.5 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos())).exp();
                [
                    radial * x + PI * (2.0 * PI * x).sin() * c,
                    radial * y + PI * (2.0 * PI * y).sin() * c,
                ]
            }
        };
        Ok(ParamVector::from_raw(g.to_vec()))
    }
}

fn beale_terms(x: f64, y: f64) -> (f64, f64, f64) {
    (
        1.5 - x + x * y,
        2.25 - x + x * y * y,
        2.625 - x + x * y * y * y,
    )
}
