//! Manufactured-solution convergence of the density and signal updates.
//!
//! The signal is held at a constant (its forcing cancels production), so the
//! chemotactic flux vanishes and the density sees diffusion, reaction and, in
//! the advection case, a frozen solenoidal velocity.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fitted_slope, RunConfig};
use crate::error::{Error, Result};
use crate::mesh::{DomainSpec, ScalarField, VectorField};
use crate::stepper::{SimState, Stepper};
use crate::stokes::curl;

/// Amplitude of the manufactured density perturbation.
const AMPLITUDE: f64 = 0.5;
/// Streamfunction amplitude of the advection case.
const STREAM: f64 = 5.0;
const C_LEVEL: f64 = 0.5;
/// `dt <= DT_FACTOR * h^2`, so the first-order time error is `O(h^2)`.
const DT_FACTOR: f64 = 0.1;
pub const MMS_FINAL_TIME: f64 = 0.05;
/// Errors below this are round-off; no order is fitted.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    Constant,
    DiffusionReaction,
    Advection,
}

impl Case {
    fn name(self) -> &'static str {
        match self {
            Case::Constant => "constant",
            Case::DiffusionReaction => "diffusion-reaction",
            Case::Advection => "advection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsCase {
    pub name: String,
    pub cells: Vec<usize>,
    pub h: Vec<f64>,
    /// Discrete `L2` error of `n` at the final time.
    pub errors: Vec<f64>,
    /// Discrete `L2` error of `c` at the final time.
    pub c_errors: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln h`.
    pub order: Option<f64>,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsReport {
    pub schema: u32,
    pub final_time: f64,
    pub cases: Vec<MmsCase>,
}

impl MmsReport {
    pub fn case(&self, name: &str) -> Option<&MmsCase> {
        self.cases.iter().find(|c| c.name == name)
    }
}

struct Exact {
    case: Case,
    kx: f64,
    ky: f64,
}

impl Exact {
    fn n(&self, x: f64, y: f64, t: f64) -> f64 {
        match self.case {
            Case::Constant => 1.0,
            _ => 1.0 + AMPLITUDE * (-t).exp() * (self.kx * x).cos() * (self.ky * y).cos(),
        }
    }

    /// `(psi_y, -psi_x)` for `psi = STREAM sin^2(kx x) sin^2(ky y)`.
    fn velocity(&self, x: f64, y: f64) -> (f64, f64) {
        if self.case != Case::Advection {
            return (0.0, 0.0);
        }
        let (sx, sy) = ((self.kx * x).sin(), (self.ky * y).sin());
        (
            STREAM * self.ky * sx * sx * (2.0 * self.ky * y).sin(),
            -STREAM * self.kx * (2.0 * self.kx * x).sin() * sy * sy,
        )
    }

    fn psi(&self, x: f64, y: f64) -> f64 {
        if self.case != Case::Advection {
            return 0.0;
        }
        STREAM * ((self.kx * x).sin() * (self.ky * y).sin()).powi(2)
    }

    /// `n_t + u.grad n - Lap n` of the exact density.
    fn transport_diffusion(&self, x: f64, y: f64, t: f64) -> f64 {
        if self.case == Case::Constant {
            return 0.0;
        }
        let e = AMPLITUDE * (-t).exp();
        let (cx, cy) = ((self.kx * x).cos(), (self.ky * y).cos());
        let (sx, sy) = ((self.kx * x).sin(), (self.ky * y).sin());
        let pert = e * cx * cy;
        let (u, v) = self.velocity(x, y);
        let adv = u * (-e * self.kx * sx * cy) + v * (-e * self.ky * cx * sy);
        -pert + adv + (self.kx * self.kx + self.ky * self.ky) * pert
    }
}

fn sample(d: DomainSpec, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
    ScalarField::from_fn(d, f)
}

fn l2_error(a: &ScalarField, b: &ScalarField) -> f64 {
    let area = a.domain().cell_area();
    (area * a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt()
}

fn run_case(base: &RunConfig, case: Case, cells: usize) -> Result<(f64, f64, f64)> {
    let (lx, ly) = (base.domain.length_x(), base.domain.length_y());
    let d = DomainSpec::new(lx, ly, cells, cells)?;
    let params = base.params.build(d)?;
    let eps = params.epsilon;
    let exact = Exact {
        case,
        kx: PI / lx,
        ky: PI / ly,
    };
    let h = d.hx().min(d.hy());
    let mut psi = Vec::with_capacity((cells - 1) * (cells - 1));
    for j in 1..cells {
        for i in 1..cells {
            psi.push(exact.psi(i as f64 * d.hx(), j as f64 * d.hy()));
        }
    }
    let u: VectorField = curl(&d, &psi);
    let n0 = sample(d, |x, y| exact.n(x, y, 0.0))?;
    let mut state = SimState::new(n0, ScalarField::constant(d, C_LEVEL), u)?;
    let stepper = Stepper::new(params.clone(), DT_FACTOR * h * h)?;
    // The frozen velocity and bounded density keep the initial limit valid;
    // only the coarsest advection grids are limited by it.
    let dt_target = 0.9 * stepper.stable_dt(&state)?;
    let steps = (MMS_FINAL_TIME / dt_target).ceil() as usize;
    let dt = MMS_FINAL_TIME / steps as f64;
    for k in 0..steps {
        let t = k as f64 * dt;
        let n_src = sample(d, |x, y| {
            let ne = exact.n(x, y, t);
            exact.transport_diffusion(x, y, t) - params.f(ne) + eps * ne * ne
        })?;
        let c_src = sample(d, |x, y| {
            let ne = exact.n(x, y, t);
            C_LEVEL - ne / (1.0 + eps * ne)
        })?;
        let ns = stepper.step_n(&state, dt, Some(&n_src))?;
        let (c, _) = stepper.step_c(&state, dt, Some(&c_src))?;
        state.n = ns.n;
        state.c = c;
        state.time = (k + 1) as f64 * dt;
        state.n.ensure_finite("n")?;
    }
    let n_exact = sample(d, |x, y| exact.n(x, y, MMS_FINAL_TIME))?;
    let c_exact = ScalarField::constant(d, C_LEVEL);
    Ok((h, l2_error(&state.n, &n_exact), l2_error(&state.c, &c_exact)))
}

/// Errors on grids `8, 16, ..., 8 * 2^(levels-1)` cells per side for the
/// constant, diffusion-reaction and advection cases, with fitted orders.
pub fn run_mms_convergence(base: &RunConfig, levels: usize) -> Result<MmsReport> {
    if levels < 3 {
        return Err(Error::InvalidInput(format!("MMS needs at least 3 levels, got {levels}")));
    }
    base.validate()?;
    let grids: Vec<usize> = (0..levels).map(|k| 8 << k).collect();
    let mut cases = Vec::new();
    for case in [Case::Constant, Case::DiffusionReaction, Case::Advection] {
        let results: Vec<(f64, f64, f64)> = grids
            .par_iter()
            .map(|&n| run_case(base, case, n))
            .collect::<Result<_>>()?;
        let h: Vec<f64> = results.iter().map(|r| r.0).collect();
        let errors: Vec<f64> = results.iter().map(|r| r.1).collect();
        let max_error = errors.iter().cloned().fold(0.0, f64::max);
        let order = (max_error > ROUNDOFF)
            .then(|| {
                let lh: Vec<f64> = h.iter().map(|x| x.ln()).collect();
                let le: Vec<f64> = errors.iter().map(|x| x.ln()).collect();
                fitted_slope(&lh, &le)
            })
            .flatten();
        cases.push(MmsCase {
            name: case.name().into(),
            cells: grids.clone(),
            h,
            errors,
            c_errors: results.iter().map(|r| r.2).collect(),
            order,
            max_error,
        });
    }
    Ok(MmsReport {
        schema: 1,
        final_time: MMS_FINAL_TIME,
        cases,
    })
}
