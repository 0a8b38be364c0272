//! Initial-data presets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{integrate, DomainSpec, ScalarField, VectorField};
use crate::ops::DiscreteOps;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// `n = n`, `c = c`, `u = 0`.
    Constant { n: f64, c: f64 },
    /// Centered Gaussian normalized to `mass`.
    GaussianBump { mass: f64, width: f64 },
    /// Two off-center Gaussians sharing `mass` equally.
    TwoBump { mass: f64, width: f64 },
    /// Cellwise random `n in mean * [0.5, 1.5)`, `c in mean * [0, 0.5)`.
    RandomPositive { mean: f64 },
}

/// Serializable initial-data description; which optional knobs apply depends
/// on `preset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub preset: String,
    #[serde(default)]
    pub seed: u64,
    /// Total cell mass for the bump presets.
    #[serde(default = "default_mass")]
    pub mass: f64,
    /// Gaussian standard deviation for the bump presets.
    #[serde(default = "default_width")]
    pub width: f64,
    /// Constant levels for `constant`, mean level for `random-positive`.
    #[serde(default = "default_level")]
    pub n_level: f64,
    #[serde(default)]
    pub c_level: f64,
    /// Amplitude of the (projected) initial velocity.
    #[serde(default)]
    pub swirl: f64,
}

fn default_mass() -> f64 {
    1.0
}

fn default_width() -> f64 {
    0.1
}

fn default_level() -> f64 {
    1.0
}

impl InitialSpec {
    pub fn named(preset: &str) -> Self {
        InitialSpec {
            preset: preset.to_string(),
            seed: 0,
            mass: default_mass(),
            width: default_width(),
            n_level: default_level(),
            c_level: 0.0,
            swirl: 0.0,
        }
    }

    pub fn preset(&self) -> Result<Preset> {
        let p = match self.preset.as_str() {
            "constant" => Preset::Constant {
                n: self.n_level,
                c: self.c_level,
            },
            "gaussian-bump" => Preset::GaussianBump {
                mass: self.mass,
                width: self.width,
            },
            "two-bump" => Preset::TwoBump {
                mass: self.mass,
                width: self.width,
            },
            "random-positive" => Preset::RandomPositive { mean: self.n_level },
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        let ok = match p {
            Preset::Constant { n, c } => n >= 0.0 && c >= 0.0 && n.is_finite() && c.is_finite(),
            Preset::GaussianBump { mass, width } | Preset::TwoBump { mass, width } => {
                mass > 0.0 && width > 0.0 && mass.is_finite() && width.is_finite()
            }
            Preset::RandomPositive { mean } => mean > 0.0 && mean.is_finite(),
        };
        if !ok || !self.swirl.is_finite() {
            return Err(Error::InvalidParams(format!(
                "initial data `{}` has invalid levels",
                self.preset
            )));
        }
        Ok(p)
    }
}

fn gaussian(domain: DomainSpec, centers: &[(f64, f64)], width: f64) -> Result<ScalarField> {
    let s2 = 2.0 * width * width;
    ScalarField::from_fn(domain, |x, y| {
        centers
            .iter()
            .map(|(cx, cy)| (-((x - cx).powi(2) + (y - cy).powi(2)) / s2).exp())
            .sum()
    })
}

fn normalized(f: ScalarField, mass: f64) -> ScalarField {
    let m = integrate(&f);
    f.scale(mass / m)
}

/// `(n0, c0, u0)` for the given preset. `u0` is the Helmholtz projection of a
/// raw field (a smooth cellular flow, or iid noise for `random-positive`),
/// hence discretely divergence-free and no-slip.
pub fn make_initial_data(
    domain: DomainSpec,
    spec: &InitialSpec,
) -> Result<(ScalarField, ScalarField, VectorField)> {
    let preset = spec.preset()?;
    let (lx, ly) = (domain.length_x(), domain.length_y());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (n0, c0) = match preset {
        Preset::Constant { n, c } => (ScalarField::constant(domain, n), ScalarField::constant(domain, c)),
        Preset::GaussianBump { mass, width } => (
            normalized(gaussian(domain, &[(0.5 * lx, 0.5 * ly)], width)?, mass),
            ScalarField::constant(domain, spec.c_level),
        ),
        Preset::TwoBump { mass, width } => (
            normalized(
                gaussian(domain, &[(0.3 * lx, 0.4 * ly), (0.7 * lx, 0.6 * ly)], width)?,
                mass,
            ),
            ScalarField::constant(domain, spec.c_level),
        ),
        Preset::RandomPositive { mean } => {
            let n = (0..domain.num_cells())
                .map(|_| mean * rng.gen_range(0.5..1.5))
                .collect();
            let c = (0..domain.num_cells())
                .map(|_| mean * rng.gen_range(0.0..0.5))
                .collect();
            (ScalarField::new(domain, n)?, ScalarField::new(domain, c)?)
        }
    };

    let raw = match preset {
        Preset::Constant { .. } => VectorField::zeros(domain),
        Preset::RandomPositive { .. } => {
            let u = (0..domain.num_u_faces()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = (0..domain.num_v_faces()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            VectorField::from_raw(domain, u, v)
        }
        _ => VectorField::from_fn(
            domain,
            |x, y| (PI * x / lx).sin() * (2.0 * PI * y / ly).sin(),
            |x, y| (2.0 * PI * x / lx).sin() * (PI * y / ly).sin(),
        )?,
    };
    let u0 = if spec.swirl == 0.0 || raw.max_abs() == 0.0 {
        VectorField::zeros(domain)
    } else {
        let (p, _) = DiscreteOps::new(domain).project(&raw)?;
        p.scale(spec.swirl / p.max_abs())
    };
    Ok((n0, c0, u0))
}
