//! Comparison oracles: the ODE comparison lemma, the logistic mass bound and
//! a lower estimate of the Gagliardo-Nirenberg constant
//! `||phi||_4 <= C* (||grad phi||_2^(1/2) ||phi||_2^(1/2) + ||phi||_2)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{DomainSpec, ScalarField};
use crate::ops::laplacian_neumann;
use crate::params::pow_gamma;

/// Absolute slack of the comparison-lemma verdict.
pub const ODI_SLACK: f64 = 1e-9;

/// `C = (M1 + 1) max(e^M1, M2 e^M1)`.
pub fn odi_constant(m1: f64, m2: f64) -> Result<f64> {
    if !(m1 >= 0.0 && m2 >= 0.0 && m1.is_finite() && m2.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "budgets must be nonnegative, got M1 = {m1}, M2 = {m2}"
        )));
    }
    let e = m1.exp();
    Ok((m1 + 1.0) * e.max(m2 * e))
}

/// Samples of `y, h, a, b` on the uniform grid `tau + k dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdiInput {
    pub tau: f64,
    pub dt: f64,
    pub y: Vec<f64>,
    pub h: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Set when the horizon is a truncation of an infinite one.
    #[serde(default)]
    pub truncated: bool,
}

impl OdiInput {
    pub fn t_end(&self) -> f64 {
        self.tau + self.dt * (self.y.len().saturating_sub(1)) as f64
    }

    /// Admissibility: equal lengths, nonnegative finite samples and the
    /// sampled inequality `y' + h <= a y + b` (interval averages, relative
    /// tolerance `tol`).
    pub fn validate(&self, tol: f64) -> Result<()> {
        let m = self.y.len();
        if m < 2 || self.h.len() != m || self.a.len() != m || self.b.len() != m {
            return Err(Error::InvalidInput("series need equal lengths >= 2".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite() && self.tau.is_finite()) {
            return Err(Error::InvalidInput(format!("bad grid step {}", self.dt)));
        }
        for (name, s) in [("y", &self.y), ("h", &self.h), ("a", &self.a), ("b", &self.b)] {
            if let Some(k) = s.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "{name}[{k}] = {} is not a nonnegative number",
                    s[k]
                )));
            }
        }
        for k in 0..m - 1 {
            let dy = (self.y[k + 1] - self.y[k]) / self.dt;
            let h = 0.5 * (self.h[k] + self.h[k + 1]);
            let rhs = 0.5
                * (self.a[k] * self.y[k] + self.b[k] + self.a[k + 1] * self.y[k + 1] + self.b[k + 1]);
            let scale = dy.abs() + h + rhs + 1.0;
            if dy + h > rhs + tol * scale {
                return Err(Error::InvalidInput(format!(
                    "differential inequality violated on interval {k}: {} > {rhs}",
                    dy + h
                )));
            }
        }
        Ok(())
    }
}

fn trapezoid(dt: f64, s: &[f64]) -> f64 {
    s.windows(2).map(|w| 0.5 * dt * (w[0] + w[1])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdiVerdict {
    pub pass: bool,
    pub m1: f64,
    pub m2: f64,
    pub c: f64,
    pub bound: f64,
    pub sup_y: f64,
    pub int_h: f64,
    pub truncated: bool,
}

/// Verifies `sup y <= C y(tau) + C` and `integral h <= C y(tau) + C`.
/// Inputs that break the sampled inequality (relative tolerance `1e-6`) are
/// rejected rather than failed.
pub fn odi_verify(input: &OdiInput) -> Result<OdiVerdict> {
    input.validate(1e-6)?;
    let m1 = trapezoid(input.dt, &input.a);
    let m2 = trapezoid(input.dt, &input.b);
    let c = odi_constant(m1, m2)?;
    let bound = c * input.y[0] + c;
    let sup_y = input.y.iter().cloned().fold(0.0, f64::max);
    let int_h = trapezoid(input.dt, &input.h);
    Ok(OdiVerdict {
        pass: sup_y <= bound + ODI_SLACK && int_h <= bound + ODI_SLACK,
        m1,
        m2,
        c,
        bound,
        sup_y,
        int_h,
        truncated: input.truncated,
    })
}

/// `area (r_+ / mu)^(1 / (gamma - 1))`.
pub fn logistic_limit(r: f64, mu: f64, gamma: f64, area: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    area * (r / mu).powf(1.0 / (gamma - 1.0))
}

/// RK4 solution of `y' = r y - mu / area^(gamma-1) y^gamma` at the grid times.
///
/// Each grid interval is covered by substeps of at most `h_max`; a substep is
/// halved while step doubling disagrees by more than `1e-12 (1 + |y|)` or the
/// state would turn negative, and the solve aborts below `1e-14`.
pub fn logistic_ode_solve(
    r: f64,
    mu: f64,
    gamma: f64,
    area: f64,
    y0: f64,
    t_grid: &[f64],
) -> Result<Vec<f64>> {
    if !(y0 >= 0.0 && y0.is_finite()) {
        return Err(Error::InvalidInput(format!("y0 must be nonnegative, got {y0}")));
    }
    if !(mu > 0.0 && gamma > 1.0 && area > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParams("logistic ODE needs mu > 0, gamma > 1, area > 0".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("time grid must be nondecreasing".into()));
    }
    let k = mu / area.powf(gamma - 1.0);
    let rhs = |y: f64| r * y - k * pow_gamma(y.max(0.0), gamma);
    let rk4 = |y: f64, h: f64| {
        let k1 = rhs(y);
        let k2 = rhs(y + 0.5 * h * k1);
        let k3 = rhs(y + 0.5 * h * k2);
        let k4 = rhs(y + h * k3);
        y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let h_max: f64 = 1e-2;
    let mut out = Vec::with_capacity(t_grid.len());
    let Some(&first) = t_grid.first() else {
        return Ok(out);
    };
    let mut t = first;
    let mut y = y0;
    let mut h = h_max;
    out.push(y);
    for &target in &t_grid[1..] {
        while t < target {
            let step = h.min(target - t);
            let full = rk4(y, step);
            let half = rk4(rk4(y, 0.5 * step), 0.5 * step);
            if (full - half).abs() > 1e-12 * (1.0 + half.abs()) || half < 0.0 {
                h = 0.5 * step;
                if h < 1e-14 {
                    return Err(Error::Solver(format!("logistic ODE step underflow at t = {t}")));
                }
                continue;
            }
            y = half;
            t = if step == target - t { target } else { t + step };
            h = (2.0 * h).min(h_max);
        }
        out.push(y);
    }
    Ok(out)
}

/// Lower estimate of the Gagliardo-Nirenberg constant on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnEstimate {
    pub c_star_lower: f64,
    pub maximizer: ScalarField,
    /// Accepted ascent steps on the winning probe.
    pub iterations: usize,
    /// `(16 C*^4 |Omega| / 3)^(gamma - 1)` from the estimate.
    pub mu0: f64,
    pub gamma: f64,
    /// Some probe made no relative progress above `1e-13` for 50 steps.
    pub warning: bool,
}

/// `(16 c^4 area / 3)^(gamma - 1)`.
pub fn mu0_from(c_star: f64, area: f64, gamma: f64) -> f64 {
    (16.0 * c_star.powi(4) * area / 3.0).powf(gamma - 1.0)
}

impl GnEstimate {
    /// Mass gate `3 / (16 C*^4)` of the quasi-energy argument.
    pub fn mass_gate(&self) -> f64 {
        3.0 / (16.0 * self.c_star_lower.powi(4))
    }
}

/// Quotient `R = ||phi||_4 / (||grad phi||^(1/2) ||phi||^(1/2) + ||phi||)`
/// and its gradient with respect to the cell values.
#[derive(Debug, Clone)]
pub struct GnQuotient {
    domain: DomainSpec,
}

impl GnQuotient {
    pub fn new(domain: DomainSpec) -> Self {
        GnQuotient { domain }
    }

    fn parts(&self, phi: &ScalarField) -> (f64, f64, f64) {
        let a = self.domain.cell_area();
        let p: f64 = a * phi.values().iter().map(|v| v.powi(4)).sum::<f64>();
        let s: f64 = a * phi.values().iter().map(|v| v * v).sum::<f64>();
        let lap = laplacian_neumann(phi);
        let q: f64 = -a * lap.values().iter().zip(phi.values()).map(|(l, v)| l * v).sum::<f64>();
        (p, q.max(0.0), s)
    }

    pub fn ratio(&self, phi: &ScalarField) -> f64 {
        let (p, q, s) = self.parts(phi);
        if s == 0.0 {
            return 0.0;
        }
        p.powf(0.25) / (q.powf(0.25) * s.powf(0.25) + s.sqrt())
    }

    /// `None` where the gradient norm vanishes (the quotient is not
    /// differentiable at constants).
    pub fn gradient(&self, phi: &ScalarField) -> Option<Vec<f64>> {
        let (p, q, s) = self.parts(phi);
        if q <= 0.0 || s <= 0.0 || p <= 0.0 {
            return None;
        }
        let a = self.domain.cell_area();
        let lap = laplacian_neumann(phi);
        let num = p.powf(0.25);
        let den = q.powf(0.25) * s.powf(0.25) + s.sqrt();
        let dq_coef = 0.25 * q.powf(-0.75) * s.powf(0.25);
        let ds_coef = 0.25 * q.powf(0.25) * s.powf(-0.75) + 0.5 / s.sqrt();
        let p34 = p.powf(-0.75);
        Some(
            phi.values()
                .iter()
                .zip(lap.values())
                .map(|(v, l)| {
                    let dn = p34 * v.powi(3) * a;
                    let dd = dq_coef * (-2.0 * a * l) + ds_coef * 2.0 * a * v;
                    (dn * den - num * dd) / (den * den)
                })
                .collect(),
        )
    }
}

/// SplitMix64 step, used to derive independent per-probe seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Smooth random start: a random low cosine series or a random Gaussian
/// bump, possibly centered near the boundary.
pub fn random_probe(domain: DomainSpec, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lx, ly) = (domain.length_x(), domain.length_y());
    let field = if rng.gen_bool(0.5) {
        let terms: Vec<(f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.gen_range(0..5) as f64,
                    rng.gen_range(0..5) as f64,
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let offset = rng.gen_range(-0.5..1.5);
        ScalarField::from_fn(domain, |x, y| {
            offset
                + terms
                    .iter()
                    .map(|(kx, ky, a)| {
                        a * (std::f64::consts::PI * kx * x / lx).cos()
                            * (std::f64::consts::PI * ky * y / ly).cos()
                    })
                    .sum::<f64>()
        })
    } else {
        let (cx, cy) = (rng.gen_range(0.0..lx), rng.gen_range(0.0..ly));
        let w = rng.gen_range(0.05..0.6) * lx.min(ly);
        let base = rng.gen_range(0.0..0.3);
        ScalarField::from_fn(domain, |x, y| {
            base + (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * w * w)).exp()
        })
    };
    field.expect("probe values are finite")
}

fn normalized(q: &GnQuotient, phi: ScalarField) -> ScalarField {
    let (_, _, s) = q.parts(&phi);
    if s > 0.0 {
        phi.scale(1.0 / s.sqrt())
    } else {
        phi
    }
}

struct Ascent {
    best: ScalarField,
    ratio: f64,
    accepted: usize,
    warning: bool,
}

/// Backtracking gradient ascent on the quotient, renormalizing to unit `L2`
/// norm after each step. Only improving steps are accepted, so the ratio is
/// nondecreasing in the iteration count.
fn ascend(q: &GnQuotient, start: ScalarField, iters: usize) -> Ascent {
    let mut phi = normalized(q, start);
    let mut r = q.ratio(&phi);
    let mut step = 1.0;
    let mut accepted = 0;
    let mut flat = 0;
    let mut warning = false;
    for _ in 0..iters {
        let Some(g) = q.gradient(&phi) else { break };
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm == 0.0 || !gnorm.is_finite() {
            break;
        }
        let scale = phi.max_abs() / gnorm;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = phi
                .values()
                .iter()
                .zip(&g)
                .map(|(v, gi)| v + step * scale * gi)
                .collect();
            let cand = normalized(q, ScalarField::new(*phi.domain(), cand).expect("finite"));
            let rc = q.ratio(&cand);
            if rc > r {
                if rc - r <= 1e-13 * r {
                    flat += 1;
                } else {
                    flat = 0;
                }
                phi = cand;
                r = rc;
                improved = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
        accepted += 1;
        if flat >= 50 {
            warning = true;
            break;
        }
    }
    Ascent {
        best: phi,
        ratio: r,
        accepted,
        warning,
    }
}

fn probe_seed(seed: u64, k: usize) -> u64 {
    splitmix64(seed ^ splitmix64(k as u64 + 1))
}

fn probe_runs(q: &GnQuotient, probes: usize, iters: usize, seed: u64) -> Vec<Ascent> {
    (0..probes)
        .into_par_iter()
        .map(|k| ascend(q, random_probe(q.domain, probe_seed(seed, k)), iters))
        .collect()
}

/// Final quotient of each ascended random probe, in probe order.
pub fn gn_probe_ratios(domain: DomainSpec, probes: usize, ascent_iters: usize, seed: u64) -> Vec<f64> {
    probe_runs(&GnQuotient::new(domain), probes, ascent_iters, seed)
        .iter()
        .map(|a| a.ratio)
        .collect()
}

/// Maximizes the quotient from the constant start plus `probes` random
/// starts (seeds derived from `seed`), each ascended for `ascent_iters`
/// steps; the constant start is a critical point and is not ascended.
pub fn gn_estimate(
    domain: DomainSpec,
    probes: usize,
    ascent_iters: usize,
    seed: u64,
    gamma: f64,
) -> Result<GnEstimate> {
    if probes == 0 {
        return Err(Error::InvalidInput("gn_estimate needs at least one probe".into()));
    }
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidParams(format!("gamma must exceed 1, got {gamma}")));
    }
    let q = GnQuotient::new(domain);
    let constant = ScalarField::constant(domain, 1.0);
    let runs = probe_runs(&q, probes, ascent_iters, seed);
    let mut best = Ascent {
        ratio: q.ratio(&constant),
        best: normalized(&q, constant),
        accepted: 0,
        warning: false,
    };
    let warning = runs.iter().any(|a| a.warning);
    for a in runs {
        if a.ratio > best.ratio {
            best = a;
        }
    }
    Ok(GnEstimate {
        c_star_lower: best.ratio,
        maximizer: best.best,
        iterations: best.accepted,
        mu0: mu0_from(best.ratio, domain.area(), gamma),
        gamma,
        warning,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    c_star_lower: f64,
    iterations: usize,
    warning: bool,
    maximizer: Vec<f64>,
}

fn cache_key(domain: &DomainSpec, probes: usize, iters: usize, seed: u64) -> String {
    format!(
        "{}x{}:{}x{}:probes={probes}:iters={iters}:seed={seed}",
        domain.length_x(),
        domain.length_y(),
        domain.cells_x(),
        domain.cells_y()
    )
}

/// [`gn_estimate`] through a JSON sidecar keyed by domain, grid, probes,
/// iterations and seed. `mu0` is recomputed for the requested `gamma`.
pub fn gn_estimate_cached(
    cache: &Path,
    domain: DomainSpec,
    probes: usize,
    ascent_iters: usize,
    seed: u64,
    gamma: f64,
) -> Result<GnEstimate> {
    let mut map: BTreeMap<String, CacheEntry> = if cache.exists() {
        serde_json::from_str(&std::fs::read_to_string(cache)?)?
    } else {
        BTreeMap::new()
    };
    let key = cache_key(&domain, probes, ascent_iters, seed);
    if let Some(e) = map.get(&key) {
        log::debug!("GN cache hit for {key}");
        return Ok(GnEstimate {
            c_star_lower: e.c_star_lower,
            maximizer: ScalarField::new(domain, e.maximizer.clone())?,
            iterations: e.iterations,
            mu0: mu0_from(e.c_star_lower, domain.area(), gamma),
            gamma,
            warning: e.warning,
        });
    }
    let est = gn_estimate(domain, probes, ascent_iters, seed, gamma)?;
    map.insert(
        key,
        CacheEntry {
            c_star_lower: est.c_star_lower,
            iterations: est.iterations,
            warning: est.warning,
            maximizer: est.maximizer.values().to_vec(),
        },
    );
    if let Some(dir) = cache.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(cache, serde_json::to_string_pretty(&map)?)?;
    Ok(est)
}
