//! Monitored functionals, weak-form residuals and the energy-type checks.
//!
//! Every record entry is computed by direct quadrature over cells or faces;
//! [`cross_check`] recomputes the quadratic ones through the spectral bases.
//! The weak residuals use the face forms that the stepper's flux operators
//! reduce to after summation by parts, so for a converged ε-level trajectory
//! they measure the time-discretization error only.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{inner_vec, integrate, DomainSpec, ScalarField, VectorField};
use crate::ops::{
    advect_vector, gradient, laplacian_neumann, max_divergence, upwind_x, upwind_y,
    vector_laplacian, ADVECTION_DIV_TOL,
};
use crate::params::{pow_gamma, Params};
use crate::spectral::NeumannBasis;
use crate::stepper::{face_product, SimState, StepReport};
use crate::stokes::{curl, StokesBasis};

/// Relative agreement demanded between quadrature and spectral routes.
pub const CROSS_CHECK_TOL: f64 = 1e-9;
/// Mass inequality tolerance, relative to the initial mass.
pub const MASS_TOL: f64 = 1e-8;
/// Largest fraction of intervals allowed to violate the dissipation inequality.
pub const ENERGY_VIOLATION_FRACTION: f64 = 0.01;

/// `s ln s` with `0 ln 0 = 0`.
pub fn xlogx(s: f64) -> f64 {
    if s > 0.0 {
        s * s.ln()
    } else {
        0.0
    }
}

/// Spectral bases for the fractional norms. The dense Stokes basis is
/// optional because of its size gate.
#[derive(Debug, Clone)]
pub struct Bases {
    pub neumann: NeumannBasis,
    pub stokes: Option<StokesBasis>,
}

impl Bases {
    pub fn new(domain: DomainSpec, dense_stokes: bool) -> Result<Self> {
        Ok(Bases {
            neumann: NeumannBasis::new(domain),
            stokes: if dense_stokes {
                Some(StokesBasis::new(domain)?)
            } else {
                None
            },
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        self.neumann.domain()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub mass: f64,
    pub f_abs_integral: f64,
    /// `integral n^gamma`.
    pub n_gamma_norm: f64,
    /// `||n||_p^2` with `p = 2 / (3 - gamma)`, only for `gamma < 2`.
    pub n_interp_norm: Option<f64>,
    pub c_l2: f64,
    pub grad_c_l2: f64,
    pub u_l2: f64,
    pub grad_u_l2: f64,
    pub u_l4: f64,
    /// `||L^((beta+1)/2) c||^2`.
    pub frac_c: f64,
    /// `||A^((delta+1)/2) u||^2`, only with a dense Stokes basis.
    pub frac_u: Option<f64>,
    pub grad_log_n: f64,
    pub grad_inv_n: f64,
    /// `integral n ln n + 1/2 integral |grad c|^2`.
    pub quasi_energy: f64,
    pub n_l2_sq: f64,
    pub lap_c_l2: f64,
    pub n_linf: f64,
    /// `integral |grad sqrt n|^2`.
    pub grad_sqrt_n: f64,
    /// `integral |u . grad c|^2`.
    pub u_grad_c_l2: f64,
    /// `(p, integral n^p)` for the configured exponents.
    pub n_lp: Vec<(f64, f64)>,
}

/// Column names and units, in output order (the `n_lp` columns follow).
pub const RECORD_COLUMNS: [(&str, &str); 20] = [
    ("time", "T"),
    ("mass", "N"),
    ("f_abs_integral", "N/T"),
    ("n_gamma_norm", "N^gamma L^(2-2gamma)"),
    ("n_interp_norm", "N^2 L^(2(2-p)/p-2)"),
    ("c_l2", "C^2 L^-2"),
    ("grad_c_l2", "C^2 L^-4"),
    ("u_l2", "L^4 T^-2"),
    ("grad_u_l2", "L^2 T^-2"),
    ("u_l4", "L^6 T^-4"),
    ("frac_c", "C^2 L^-2"),
    ("frac_u", "L^4 T^-2"),
    ("grad_log_n", "1"),
    ("grad_inv_n", "1"),
    ("quasi_energy", "N"),
    ("n_l2_sq", "N^2 L^-2"),
    ("lap_c_l2", "C^2 L^-6"),
    ("n_linf", "N L^-2"),
    ("grad_sqrt_n", "N L^-2"),
    ("u_grad_c_l2", "C^2 T^-2 L^-2"),
];

/// Interior face between cells `l` and `r` (`r` on the positive side).
#[derive(Debug, Clone, Copy)]
struct Face {
    l: usize,
    r: usize,
    h: f64,
    /// Index into the matching velocity component.
    idx: usize,
    x: bool,
}

fn interior_faces(d: &DomainSpec) -> Vec<Face> {
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let mut out = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 1..nx {
            out.push(Face {
                l: j * nx + i - 1,
                r: j * nx + i,
                h: d.hx(),
                idx: j * (nx + 1) + i,
                x: true,
            });
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            out.push(Face {
                l: (j - 1) * nx + i,
                r: j * nx + i,
                h: d.hy(),
                idx: j * nx + i,
                x: false,
            });
        }
    }
    out
}

fn face_velocity(w: &VectorField, f: &Face) -> f64 {
    if f.x {
        w.u()[f.idx]
    } else {
        w.v()[f.idx]
    }
}

/// Upwind value of `s` at face `f` for face velocity `a`.
fn face_upwind(s: &ScalarField, a: f64, f: &Face) -> f64 {
    let nx = s.domain().cells_x();
    let (i, j) = (f.r % nx, f.r / nx);
    if f.x {
        upwind_x(s, a, i, j)
    } else {
        upwind_y(s, a, i, j)
    }
}

/// `sum over interior faces of g(face) * cell_area`.
fn face_sum(d: &DomainSpec, faces: &[Face], g: impl Fn(&Face) -> f64) -> f64 {
    d.cell_area() * faces.iter().map(g).sum::<f64>()
}

fn cell_sum(f: &ScalarField, g: impl Fn(f64) -> f64) -> f64 {
    f.domain().cell_area() * f.values().iter().map(|&v| g(v)).sum::<f64>()
}

/// `integral |grad u|^2` with odd ghosts at tangential walls.
fn grad_velocity_sq(w: &VectorField) -> f64 {
    let d = *w.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let (hx, hy) = (d.hx(), d.hy());
    let mut s = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            s += ((w.u_at(i + 1, j) - w.u_at(i, j)) / hx).powi(2);
        }
        for i in 1..nx {
            if j + 1 < ny {
                s += ((w.u_at(i, j + 1) - w.u_at(i, j)) / hy).powi(2);
            }
            if j == 0 || j + 1 == ny {
                s += 2.0 * (w.u_at(i, j) / hy).powi(2);
            }
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            s += ((w.v_at(i, j + 1) - w.v_at(i, j)) / hy).powi(2);
        }
        for j in 1..ny {
            if i + 1 < nx {
                s += ((w.v_at(i + 1, j) - w.v_at(i, j)) / hx).powi(2);
            }
            if i == 0 || i + 1 == nx {
                s += 2.0 * (w.v_at(i, j) / hx).powi(2);
            }
        }
    }
    s * d.cell_area()
}

/// Cell-centered `grad c` from averaged face differences.
fn cell_gradient(c: &ScalarField) -> (Vec<f64>, Vec<f64>) {
    let d = *c.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let mut gx = vec![0.0; nx * ny];
    let mut gy = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let e = if i + 1 < nx { (c.at(i + 1, j) - c.at(i, j)) / d.hx() } else { 0.0 };
            let w = if i > 0 { (c.at(i, j) - c.at(i - 1, j)) / d.hx() } else { 0.0 };
            let nn = if j + 1 < ny { (c.at(i, j + 1) - c.at(i, j)) / d.hy() } else { 0.0 };
            let s = if j > 0 { (c.at(i, j) - c.at(i, j - 1)) / d.hy() } else { 0.0 };
            gx[j * nx + i] = 0.5 * (e + w);
            gy[j * nx + i] = 0.5 * (nn + s);
        }
    }
    (gx, gy)
}

/// One record from `state`. Every entry is a fresh quadrature.
pub fn compute_record(
    state: &SimState,
    params: &Params,
    bases: &Bases,
    lp: &[f64],
) -> Result<DiagnosticsRecord> {
    let d = *state.domain();
    d.check_same(bases.domain(), "diagnostics bases")?;
    d.check_same(params.potential.domain(), "diagnostics params")?;
    let (n, c, u) = (&state.n, &state.c, &state.u);
    let faces = interior_faces(&d);
    let nv = n.values();
    let cv = c.values();
    let gamma = params.gamma;

    let n_interp_norm = (gamma < 2.0).then(|| {
        let p = 2.0 / (3.0 - gamma);
        cell_sum(n, |s| s.max(0.0).powf(p)).powf(2.0 / p)
    });
    let grad_c_l2 = face_sum(&d, &faces, |f| ((cv[f.r] - cv[f.l]) / f.h).powi(2));
    let lap = laplacian_neumann(c);
    let (ucx, ucy) = u.cell_centered();
    let (gcx, gcy) = cell_gradient(c);
    let area = d.cell_area();
    let frac_u = match &bases.stokes {
        Some(b) => Some(b.fractional_norm_sq(0.5 * (params.delta() + 1.0), u)?),
        None => None,
    };
    let log1 = |s: f64| (s + 1.0).ln();
    let inv1 = |s: f64| 1.0 / (s + 1.0);
    let mut n_lp = Vec::with_capacity(lp.len());
    for &p in lp {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::InvalidExponent(p));
        }
        n_lp.push((p, cell_sum(n, |s| s.max(0.0).powf(p))));
    }

    Ok(DiagnosticsRecord {
        time: state.time,
        mass: integrate(n),
        f_abs_integral: cell_sum(n, |s| params.f(s).abs()),
        n_gamma_norm: cell_sum(n, |s| pow_gamma(s.max(0.0), gamma)),
        n_interp_norm,
        c_l2: cell_sum(c, |s| s * s),
        grad_c_l2,
        u_l2: area * u.u().iter().chain(u.v()).map(|a| a * a).sum::<f64>(),
        grad_u_l2: grad_velocity_sq(u),
        u_l4: area
            * ucx
                .iter()
                .zip(&ucy)
                .map(|(a, b)| (a * a + b * b).powi(2))
                .sum::<f64>(),
        frac_c: bases
            .neumann
            .fractional_norm_sq(0.5 * (params.beta() + 1.0), c)?,
        frac_u,
        grad_log_n: face_sum(&d, &faces, |f| {
            ((log1(nv[f.r]) - log1(nv[f.l])) / f.h).powi(2)
        }),
        grad_inv_n: face_sum(&d, &faces, |f| {
            ((inv1(nv[f.r]) - inv1(nv[f.l])) / f.h).powi(2)
        }),
        quasi_energy: cell_sum(n, xlogx) + 0.5 * grad_c_l2,
        n_l2_sq: cell_sum(n, |s| s * s),
        lap_c_l2: cell_sum(&lap, |s| s * s),
        n_linf: n.max(),
        grad_sqrt_n: face_sum(&d, &faces, |f| {
            let mid = 0.5 * (nv[f.l] + nv[f.r]);
            if mid > 0.0 {
                ((nv[f.r] - nv[f.l]) / f.h).powi(2) / (4.0 * mid)
            } else {
                0.0
            }
        }),
        u_grad_c_l2: area
            * (0..d.num_cells())
                .map(|k| (ucx[k] * gcx[k] + ucy[k] * gcy[k]).powi(2))
                .sum::<f64>(),
        n_lp,
    })
}

fn rel_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative disagreement between the quadrature entries of `rec` and
/// the same quantities recomputed from spectral coefficients (Parseval) or
/// from the assembled operators.
pub fn cross_check(state: &SimState, rec: &DiagnosticsRecord, bases: &Bases) -> Result<f64> {
    let d = *state.domain();
    d.check_same(bases.domain(), "cross check")?;
    let nb = &bases.neumann;
    let coef = nb.coefficients(&state.c);
    let area = d.cell_area();
    let lmax = nb.eigenvalues().iter().cloned().fold(0.0, f64::max);
    let mut spec_c = 0.0;
    let mut spec_grad = 0.0;
    let mut spec_lap = 0.0;
    for (a, l) in coef.iter().zip(nb.eigenvalues()) {
        let lap = l - 1.0;
        spec_c += area * a * a;
        spec_grad += area * lap * a * a;
        spec_lap += area * lap * lap * a * a;
    }
    let floor_c = 1e-14 * rec.c_l2.max(f64::MIN_POSITIVE);
    let mut gap = rel_gap(rec.c_l2, spec_c, floor_c)
        .max(rel_gap(rec.grad_c_l2, spec_grad, floor_c * lmax))
        .max(rel_gap(rec.lap_c_l2, spec_lap, floor_c * lmax * lmax));

    let op = -inner_vec(&vector_laplacian(&state.u), &state.u);
    let floor_u = 1e-14 * rec.u_l2.max(f64::MIN_POSITIVE);
    let umax = 8.0 / d.hx().min(d.hy()).powi(2);
    gap = gap.max(rel_gap(rec.grad_u_l2, op, floor_u * umax));
    if let Some(sb) = &bases.stokes {
        let coef = sb.coefficients(&state.u)?;
        let spec_u: f64 = coef.iter().map(|a| a * a).sum();
        let spec_grad_u: f64 = coef.iter().zip(sb.eigenvalues()).map(|(a, l)| l * a * a).sum();
        gap = gap
            .max(rel_gap(rec.u_l2, spec_u, floor_u))
            .max(rel_gap(rec.grad_u_l2, spec_grad_u, floor_u * umax));
    }
    Ok(gap)
}

/// Both sides of the two-factor Hölder bound
/// `integral n^p <= (integral n)^((gamma-p)/(gamma-1)) (integral n^gamma)^((p-1)/(gamma-1))`
/// with `p = 2 / (3 - gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl HolderCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-300
    }
}

/// `None` unless `1 < gamma < 2`.
pub fn holder_check(rec: &DiagnosticsRecord, gamma: f64) -> Option<HolderCheck> {
    let norm = rec.n_interp_norm?;
    if gamma <= 1.0 {
        return None;
    }
    let p = 2.0 / (3.0 - gamma);
    let lhs = norm.powf(0.5 * p);
    let rhs = rec.mass.max(0.0).powf((gamma - p) / (gamma - 1.0))
        * rec.n_gamma_norm.powf((p - 1.0) / (gamma - 1.0));
    Some(HolderCheck { lhs, rhs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassVerdict {
    pub pass: bool,
    /// Largest `mass(t) - mass(0) - sum dt integral f - clip mass`.
    pub max_excess: f64,
    pub tolerance: f64,
    /// First step whose end state breaks the bound.
    pub first_failure: Option<usize>,
}

/// Checks `mass(t) <= mass(0) + integral_0^t integral f(n)` after every step,
/// crediting mass added by clipping.
pub fn check_mass_inequality(history: &[StepReport]) -> Result<MassVerdict> {
    let first = history
        .first()
        .ok_or_else(|| Error::InvalidInput("empty step history".into()))?;
    let m0 = first.mass_before;
    let tolerance = MASS_TOL * m0.abs();
    let mut budget = m0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut first_failure = None;
    for (k, s) in history.iter().enumerate() {
        budget += s.dt_used * s.f_integral + s.clip_mass;
        let excess = s.mass_after - budget;
        if excess > tolerance && first_failure.is_none() {
            first_failure = Some(k);
        }
        max_excess = max_excess.max(excess);
    }
    Ok(MassVerdict {
        pass: first_failure.is_none(),
        max_excess,
        tolerance,
        first_failure,
    })
}

/// Cubic B-spline bump with `B(center) = 1`, twice continuously
/// differentiable and supported on `|t - center| < half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub half_width: f64,
}

impl Bump {
    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        if !(center.is_finite() && half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidInput(format!(
                "bump needs a positive half width, got {half_width}"
            )));
        }
        Ok(Bump { center, half_width })
    }

    fn arg(&self, t: f64) -> f64 {
        2.0 * (t - self.center) / self.half_width
    }

    pub fn value(&self, t: f64) -> f64 {
        let x = self.arg(t).abs();
        let m = if x < 1.0 {
            2.0 / 3.0 - x * x + 0.5 * x * x * x
        } else if x < 2.0 {
            (2.0 - x).powi(3) / 6.0
        } else {
            0.0
        };
        1.5 * m
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let y = self.arg(t);
        let x = y.abs();
        let dm = if x < 1.0 {
            -2.0 * x + 1.5 * x * x
        } else if x < 2.0 {
            -0.5 * (2.0 - x).powi(2)
        } else {
            0.0
        };
        1.5 * dm * y.signum() * 2.0 / self.half_width
    }

    pub fn end(&self) -> f64 {
        self.center + self.half_width
    }

    fn overlaps(&self, lo: f64, hi: f64) -> bool {
        hi > self.center - self.half_width && lo < self.end()
    }

    /// `integral_ta^tb B(t) g(t) dt` for `g` linear with `g(ta) = ga`,
    /// `g(tb) = gb`. Exact: the interval is split at the spline knots and each
    /// polynomial piece gets 3-point Gauss-Legendre.
    pub fn integral_linear(&self, ta: f64, tb: f64, ga: f64, gb: f64) -> f64 {
        if !self.overlaps(ta, tb) || (ga == 0.0 && gb == 0.0) {
            return 0.0;
        }
        let w = self.half_width;
        let mut cuts = vec![ta];
        for k in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let t = self.center + k * w;
            if t > ta && t < tb {
                cuts.push(t);
            }
        }
        cuts.push(tb);
        let g = |t: f64| ga + (gb - ga) * (t - ta) / (tb - ta);
        let nodes = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
        let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        cuts.windows(2)
            .map(|c| {
                let (mid, half) = (0.5 * (c[0] + c[1]), 0.5 * (c[1] - c[0]));
                half * nodes
                    .iter()
                    .zip(weights)
                    .map(|(x, wt)| {
                        let t = mid + half * x;
                        wt * self.value(t) * g(t)
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Separable test function `time(t) * space(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTest {
    pub time: Bump,
    pub space: ScalarField,
}

/// Separable solenoidal test field `time(t) * space(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTest {
    pub time: Bump,
    pub space: VectorField,
}

const TIME_CENTERS: [f64; 3] = [0.0, 0.4, 0.7];
const TIME_HALF_WIDTH: f64 = 0.3;
/// `(cx, cy, half width)` in units of the domain lengths.
const PLACEMENTS: [(f64, f64, f64); 4] = [
    (0.5, 0.5, 0.45),
    (0.3, 0.3, 0.25),
    (0.7, 0.35, 0.25),
    (0.4, 0.7, 0.28),
];
const EXTRA_STREAM: (f64, f64, f64) = (0.65, 0.65, 0.3);

fn time_bumps(t0: f64, t_end: f64) -> Result<Vec<Bump>> {
    let len = t_end - t0;
    if !(len > 0.0 && len.is_finite()) {
        return Err(Error::InvalidInput(format!("empty time window [{t0}, {t_end}]")));
    }
    TIME_CENTERS
        .iter()
        .map(|c| Bump::new(t0 + c * len, TIME_HALF_WIDTH * len))
        .collect()
}

fn spatial_bump(d: &DomainSpec, (cx, cy, w): (f64, f64, f64), x: f64, y: f64) -> f64 {
    let bx = Bump::new(cx * d.length_x(), w * d.length_x()).map(|b| b.value(x));
    let by = Bump::new(cy * d.length_y(), w * d.length_y()).map(|b| b.value(y));
    bx.unwrap_or(0.0) * by.unwrap_or(0.0)
}

/// Three time bumps covering `[t0, t_end]` times four localized spatial bumps
/// and the constant; every member is nonnegative and vanishes at `t_end`.
pub fn scalar_test_bank(domain: DomainSpec, t0: f64, t_end: f64) -> Result<Vec<ScalarTest>> {
    let mut spaces = Vec::new();
    for p in PLACEMENTS {
        spaces.push(ScalarField::from_fn(domain, |x, y| spatial_bump(&domain, p, x, y))?);
    }
    spaces.push(ScalarField::constant(domain, 1.0));
    let mut bank = Vec::new();
    for time in time_bumps(t0, t_end)? {
        for space in &spaces {
            bank.push(ScalarTest {
                time,
                space: space.clone(),
            });
        }
    }
    Ok(bank)
}

/// Solenoidal no-slip test fields: discrete curls of vertex-sampled stream
/// bumps supported inside the domain.
pub fn vector_test_bank(domain: DomainSpec, t0: f64, t_end: f64) -> Result<Vec<VectorTest>> {
    let (nx, ny) = (domain.cells_x(), domain.cells_y());
    let mut spaces = Vec::new();
    for p in PLACEMENTS.iter().copied().chain(std::iter::once(EXTRA_STREAM)) {
        let mut psi = Vec::with_capacity((nx - 1) * (ny - 1));
        for j in 1..ny {
            for i in 1..nx {
                let (x, y) = (i as f64 * domain.hx(), j as f64 * domain.hy());
                psi.push(spatial_bump(&domain, p, x, y));
            }
        }
        spaces.push(curl(&domain, &psi));
    }
    let mut bank = Vec::new();
    for time in time_bumps(t0, t_end)? {
        for space in &spaces {
            bank.push(VectorTest {
                time,
                space: space.clone(),
            });
        }
    }
    Ok(bank)
}

/// States sampled at strictly increasing times.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub states: Vec<SimState>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, state: SimState) {
        self.states.push(state);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn validate(&self, domain: &DomainSpec, support_end: f64) -> Result<()> {
        if self.states.len() < 2 {
            return Err(Error::InvalidInput("trajectory needs two samples".into()));
        }
        for w in self.states.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::InvalidInput("trajectory times must increase".into()));
            }
        }
        for s in &self.states {
            domain.check_same(s.domain(), "trajectory")?;
        }
        let last = self.states.last().map(|s| s.time).unwrap_or(0.0);
        if support_end > last * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "test function supported up to {support_end}, trajectory ends at {last}"
            )));
        }
        Ok(())
    }

    /// Samples `f` wherever the bump touches a neighboring interval; zero
    /// elsewhere.
    fn series<const K: usize>(
        &self,
        time: &Bump,
        mut f: impl FnMut(&SimState) -> [f64; K],
    ) -> Vec<(f64, [f64; K])> {
        let m = self.states.len();
        (0..m)
            .map(|k| {
                let lo = self.states[k.saturating_sub(1)].time;
                let hi = self.states[(k + 1).min(m - 1)].time;
                let st = &self.states[k];
                if time.overlaps(lo, hi) {
                    (st.time, f(st))
                } else {
                    (st.time, [0.0; K])
                }
            })
            .collect()
    }
}

/// `-B(t0) a(t0) - integral B' a + integral B b` for `a`, `b` linear between
/// samples. With `B` vanishing at the end this equals `integral B (a' + b)`,
/// which is evaluated exactly.
fn weak_form(time: &Bump, series: &[(f64, [f64; 2])]) -> f64 {
    series
        .windows(2)
        .map(|w| {
            let ((ta, [aa, ba]), (tb, [ab, bb])) = (w[0], w[1]);
            let slope = (ab - aa) / (tb - ta);
            time.integral_linear(ta, tb, slope, slope) + time.integral_linear(ta, tb, ba, bb)
        })
        .sum()
}

/// Residual of the weak signal equation at the ε level,
/// `-int c0 phi(0) - intint c phi_t + intint grad c.grad phi - intint c u.grad phi
///  - intint n phi / (1 + eps n) + intint c phi`, returned in absolute value.
pub fn weak_residual_c(traj: &Trajectory, params: &Params, test: &ScalarTest) -> Result<f64> {
    let d = *test.space.domain();
    traj.validate(&d, test.time.end())?;
    let eps = params.epsilon;
    let faces = interior_faces(&d);
    let s = test.space.values();
    let series = traj.series(&test.time, |st| {
        let cv = st.c.values();
        let diffusion = face_sum(&d, &faces, |f| {
            (cv[f.r] - cv[f.l]) * (s[f.r] - s[f.l]) / (f.h * f.h)
        });
        let transport = face_sum(&d, &faces, |f| {
            let a = face_velocity(&st.u, f);
            a * face_upwind(&st.c, a, f) * (s[f.r] - s[f.l]) / f.h
        });
        let mut source = 0.0;
        let mut mass = 0.0;
        for k in 0..d.num_cells() {
            let n = st.n.values()[k];
            source += n / (1.0 + eps * n) * s[k];
            mass += cv[k] * s[k];
        }
        source *= d.cell_area();
        mass *= d.cell_area();
        [mass, diffusion - transport - source + mass]
    });
    Ok(weak_form(&test.time, &series).abs())
}

/// Residual of the weak momentum equation against a solenoidal field,
/// `-int u0.phi(0) - intint u.phi_t - kappa intint u (x) u : grad phi
///  - intint n grad(potential).phi + intint grad u : grad phi`, in absolute value.
pub fn weak_residual_u(traj: &Trajectory, params: &Params, test: &VectorTest) -> Result<f64> {
    let d = *test.space.domain();
    let div = max_divergence(&test.space);
    if div > ADVECTION_DIV_TOL {
        return Err(Error::NotDivergenceFree {
            max_div: div,
            tolerance: ADVECTION_DIV_TOL,
        });
    }
    test.space.validate()?;
    traj.validate(&d, test.time.end())?;
    let grad_phi = gradient(&params.potential);
    let lap_test = vector_laplacian(&test.space);
    let kappa = params.kappa;
    let series = traj.series(&test.time, |st| {
        let u = &st.u;
        let convection = if kappa == 0.0 {
            0.0
        } else {
            kappa * inner_vec(&advect_vector(u), &test.space)
        };
        let force = inner_vec(&face_product(&st.n, &grad_phi), &test.space);
        let viscous = -inner_vec(u, &lap_test);
        [inner_vec(u, &test.space), convection - force + viscous]
    });
    Ok(weak_form(&test.time, &series).abs())
}

/// Outcome of the logarithmic test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogResidual {
    /// Signed residual of the exact ε-level identity for `ln(n + 1)`.
    pub identity: f64,
    /// Right minus left side of the generalized-solution inequality, which
    /// omits the `-eps n^2 / (n + 1)` term.
    pub slack: f64,
    /// `eps intint n^2 phi / (n + 1)`, the omitted term.
    pub eps_term: f64,
}

/// Identity residual and inequality slack for the logarithmic supersolution
/// property, against a nonnegative test function.
///
/// The gradient terms are the discrete chain-rule forms obtained by testing
/// the scheme's flux divergences with `phi / (n + 1)`.
pub fn log_supersolution_residual(
    traj: &Trajectory,
    params: &Params,
    test: &ScalarTest,
) -> Result<LogResidual> {
    let d = *test.space.domain();
    if test.space.min() < 0.0 {
        return Err(Error::InvalidInput("log test function must be nonnegative".into()));
    }
    traj.validate(&d, test.time.end())?;
    let eps = params.epsilon;
    let faces = interior_faces(&d);
    let s = test.space.values();
    let area = d.cell_area();

    // Per sample: (integral ln(n+1) phi, identity right side, eps term).
    let series = traj.series(&test.time, |st| {
        let nv = st.n.values();
        let cv = st.c.values();
        let inv: Vec<f64> = nv.iter().map(|n| 1.0 / (n + 1.0)).collect();
        let mut g = 0.0; // |grad ln(n+1)|^2 phi
        let mut x = 0.0; // (n+1)^-1 grad n . grad phi
        let mut t = 0.0; // ln(n+1) u . grad phi
        let mut h = 0.0; // (n+1)^-2 n grad n . grad c phi
        let mut k = 0.0; // (n+1)^-1 n grad c . grad phi
        for f in &faces {
            let dn = (nv[f.r] - nv[f.l]) / f.h;
            let dc = (cv[f.r] - cv[f.l]) / f.h;
            let ds = (s[f.r] - s[f.l]) / f.h;
            let sbar = 0.5 * (s[f.l] + s[f.r]);
            let ibar = 0.5 * (inv[f.l] + inv[f.r]);
            let iprod = inv[f.l] * inv[f.r];
            let a = face_velocity(&st.u, f);
            t += a * face_upwind(&st.n, a, f) * (s[f.r] * inv[f.r] - s[f.l] * inv[f.l]) / f.h;
            let nup = face_upwind(&st.n, dc, f);
            g += sbar * dn * dn * iprod;
            x += ibar * dn * ds;
            h += sbar * dn * dc * nup * iprod;
            k += ibar * nup * dc * ds;
        }
        let mut react = 0.0;
        let mut damp = 0.0;
        let mut lg = 0.0;
        for q in 0..d.num_cells() {
            let n = nv[q];
            react += params.f(n) * inv[q] * s[q];
            damp += eps * n * n * inv[q] * s[q];
            lg += (n + 1.0).ln() * s[q];
        }
        [
            area * lg,
            area * (g - x + t - h + k + react),
            area * damp,
        ]
    });
    // time_term = intint phi d/dt ln(n+1), the rest as in `weak_form`
    let mut time_term = 0.0;
    let mut rhs_total = 0.0;
    let mut eps_term = 0.0;
    for w in series.windows(2) {
        let ((ta, [la, ra, ea]), (tb, [lb, rb, eb])) = (w[0], w[1]);
        let slope = (lb - la) / (tb - ta);
        time_term += test.time.integral_linear(ta, tb, slope, slope);
        rhs_total += test.time.integral_linear(ta, tb, ra, rb);
        eps_term += test.time.integral_linear(ta, tb, ea, eb);
    }
    // The inequality reads -time_term <= -rhs_total.
    Ok(LogResidual {
        identity: time_term - (rhs_total - eps_term),
        slack: time_term - rhs_total,
        eps_term,
    })
}

/// Maximum of `g(10^e)` over `e in [lo, hi]`: a uniform scan followed by
/// golden-section refinement around the best node.
fn scan_max(g: impl Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> f64 {
    let h = |e: f64| g(10f64.powf(e));
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..=m {
        let e = lo + (hi - lo) * k as f64 / m as f64;
        let v = h(e);
        if v > best.0 {
            best = (v, e);
        }
    }
    let step = (hi - lo) / m as f64;
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if h(x1) < h(x2) {
            a = x1;
        } else {
            b = x2;
        }
    }
    best.0.max(h(0.5 * (a + b)))
}

/// `sup_{s > 0} (r s - mu s^gamma)(1 + ln s)`.
fn sup_reaction_entropy(params: &Params) -> f64 {
    scan_max(|s| params.logistic(s) * (1.0 + s.ln()), -12.0, 12.0, 24_000)
}

/// `inf_{s > 0} s^2 ln s`; the exact value is `-1/(2e)`.
fn inf_square_log() -> f64 {
    -scan_max(|s| -s * s * s.ln(), -6.0, 2.0, 16_000)
}

/// Constant of the entropy estimate,
/// `|Omega| sup (r s - mu s^gamma)(1 + ln s) - |Omega| inf s^2 ln s`.
pub fn entropy_constant(params: &Params, area: f64) -> f64 {
    area * sup_reaction_entropy(params) - area * inf_square_log()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyStatus {
    Pass,
    Fail,
    /// The mass never settled below the gate: nothing is asserted.
    PreconditionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyVerdict {
    pub status: EnergyStatus,
    /// Mass gate `3 / (16 C*^4)`.
    pub mass_gate: f64,
    /// Index of the first record of the checked window.
    pub window_start: Option<usize>,
    pub c3: f64,
    pub c4: f64,
    pub intervals: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` over the window.
    pub worst_excess: f64,
}

/// Checks the quasi-energy inequality
/// `d/dt E + integral |grad sqrt n|^2 + 1/4 integral |Lap c|^2 <= c3 frac_u grad_c_l2 + c4`
/// on the tail of `records` where the mass stays below `3 / (16 C*^4)`.
///
/// `c3` is the measured sup of `integral |u.grad c|^2 / (frac_u grad_c_l2)`
/// plus 10%, `c4` is the entropy constant plus the bound `3` on the
/// `16 C*^4 integral n` term.
pub fn check_energy_dissipation(
    records: &[DiagnosticsRecord],
    params: &Params,
    c_star: f64,
) -> Result<EnergyVerdict> {
    if !(c_star.is_finite() && c_star > 0.0) {
        return Err(Error::InvalidInput(format!("C* must be positive, got {c_star}")));
    }
    let area = params.potential.domain().area();
    let mass_gate = 3.0 / (16.0 * c_star.powi(4));
    let c4 = entropy_constant(params, area) + 3.0;
    let mut verdict = EnergyVerdict {
        status: EnergyStatus::PreconditionFailed,
        mass_gate,
        window_start: None,
        c3: 0.0,
        c4,
        intervals: 0,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    let start = records
        .iter()
        .rposition(|r| r.mass >= mass_gate)
        .map_or(0, |k| k + 1);
    if records.len() < start + 2 {
        return Ok(verdict);
    }
    let window = &records[start..];
    if window.iter().any(|r| r.frac_u.is_none()) {
        return Err(Error::InvalidInput(
            "energy check needs frac_u (dense Stokes basis)".into(),
        ));
    }
    let product = |r: &DiagnosticsRecord| r.frac_u.unwrap_or(0.0) * r.grad_c_l2;
    let ratio = window
        .iter()
        .filter(|r| product(r) > 0.0)
        .map(|r| r.u_grad_c_l2 / product(r))
        .fold(0.0, f64::max);
    let c3 = 1.1 * ratio;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for w in window.windows(2) {
        let dt = w[1].time - w[0].time;
        if dt <= 0.0 {
            return Err(Error::InvalidInput("records must be time ordered".into()));
        }
        let avg = |g: &dyn Fn(&DiagnosticsRecord) -> f64| 0.5 * (g(&w[0]) + g(&w[1]));
        let lhs = (w[1].quasi_energy - w[0].quasi_energy) / dt
            + avg(&|r| r.grad_sqrt_n)
            + 0.25 * avg(&|r| r.lap_c_l2);
        let rhs = c3 * avg(&product) + c4;
        let excess = lhs - rhs;
        worst = worst.max(excess);
        if excess > 1e-12 * rhs.abs().max(1.0) {
            violations += 1;
        }
    }
    let intervals = window.len() - 1;
    verdict.window_start = Some(start);
    verdict.c3 = c3;
    verdict.intervals = intervals;
    verdict.violations = violations;
    verdict.worst_excess = worst;
    verdict.status = if (violations as f64) < ENERGY_VIOLATION_FRACTION * intervals as f64 {
        EnergyStatus::Pass
    } else {
        EnergyStatus::Fail
    };
    Ok(verdict)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// CSV with a `name [unit]` header; optional entries are left empty.
pub fn write_records_csv<W: Write>(records: &[DiagnosticsRecord], mut out: W) -> Result<()> {
    let lp: Vec<f64> = records
        .first()
        .map(|r| r.n_lp.iter().map(|p| p.0).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = RECORD_COLUMNS
        .iter()
        .map(|(n, u)| format!("{n} [{u}]"))
        .collect();
    header.extend(lp.iter().map(|p| format!("n_lp_{p} [N^p]")));
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![
            format!("{:e}", r.time),
            format!("{:e}", r.mass),
            format!("{:e}", r.f_abs_integral),
            format!("{:e}", r.n_gamma_norm),
            opt(r.n_interp_norm),
            format!("{:e}", r.c_l2),
            format!("{:e}", r.grad_c_l2),
            format!("{:e}", r.u_l2),
            format!("{:e}", r.grad_u_l2),
            format!("{:e}", r.u_l4),
            format!("{:e}", r.frac_c),
            opt(r.frac_u),
            format!("{:e}", r.grad_log_n),
            format!("{:e}", r.grad_inv_n),
            format!("{:e}", r.quasi_energy),
            format!("{:e}", r.n_l2_sq),
            format!("{:e}", r.lap_c_l2),
            format!("{:e}", r.n_linf),
            format!("{:e}", r.grad_sqrt_n),
            format!("{:e}", r.u_grad_c_l2),
        ];
        row.extend(r.n_lp.iter().map(|(_, v)| format!("{v:e}")));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Inverse of [`write_records_csv`].
pub fn read_records_csv<R: BufRead>(input: R) -> Result<Vec<DiagnosticsRecord>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty records file".into()))??;
    let names: Vec<&str> = header
        .split(',')
        .map(|h| h.split(" [").next().unwrap_or(h).trim())
        .collect();
    if names.len() < RECORD_COLUMNS.len()
        || names.iter().zip(RECORD_COLUMNS.iter()).any(|(a, (b, _))| a != b)
    {
        return Err(Error::Parse("records header does not match the column layout".into()));
    }
    let mut lp = Vec::new();
    for name in &names[RECORD_COLUMNS.len()..] {
        let p = name
            .strip_prefix("n_lp_")
            .and_then(|p| p.parse::<f64>().ok())
            .ok_or_else(|| Error::Parse(format!("unknown column `{name}`")))?;
        lp.push(p);
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Parse(format!("row {} has {} cells", k + 1, cells.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {} column {}: {e}", k + 1, names[i])))
        };
        let maybe = |i: usize| -> Result<Option<f64>> {
            if cells[i].trim().is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let mut n_lp = Vec::with_capacity(lp.len());
        for (q, p) in lp.iter().enumerate() {
            n_lp.push((*p, num(RECORD_COLUMNS.len() + q)?));
        }
        out.push(DiagnosticsRecord {
            time: num(0)?,
            mass: num(1)?,
            f_abs_integral: num(2)?,
            n_gamma_norm: num(3)?,
            n_interp_norm: maybe(4)?,
            c_l2: num(5)?,
            grad_c_l2: num(6)?,
            u_l2: num(7)?,
            grad_u_l2: num(8)?,
            u_l4: num(9)?,
            frac_c: num(10)?,
            frac_u: maybe(11)?,
            grad_log_n: num(12)?,
            grad_inv_n: num(13)?,
            quasi_energy: num(14)?,
            n_l2_sq: num(15)?,
            lap_c_l2: num(16)?,
            n_linf: num(17)?,
            grad_sqrt_n: num(18)?,
            u_grad_c_l2: num(19)?,
            n_lp,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{make_initial_data, InitialSpec};
    use crate::stepper::Stepper;

    fn params(d: DomainSpec, gamma: f64, eps: f64) -> Params {
        Params::new(d, 1.0, 2.0, gamma, 1.0, eps, 0.2, 1.0).unwrap()
    }

    fn random_state(d: DomainSpec, seed: u64) -> SimState {
        let mut spec = InitialSpec::named("random-positive");
        spec.seed = seed;
        spec.swirl = 0.7;
        let (n, c, u) = make_initial_data(d, &spec).unwrap();
        SimState::new(n, c, u).unwrap()
    }

    #[test]
    fn zero_state_record() {
        let d = DomainSpec::unit_square(8).unwrap();
        let b = Bases::new(d, true).unwrap();
        let r = compute_record(&SimState::zeros(d), &params(d, 1.5, 0.1), &b, &[3.0]).unwrap();
        for v in [
            r.mass, r.f_abs_integral, r.n_gamma_norm, r.c_l2, r.grad_c_l2, r.u_l2, r.grad_u_l2,
            r.u_l4, r.frac_c, r.grad_log_n, r.grad_inv_n, r.quasi_energy, r.n_l2_sq, r.lap_c_l2,
            r.n_linf, r.grad_sqrt_n, r.u_grad_c_l2,
        ] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(r.n_interp_norm, Some(0.0));
        assert_eq!(r.frac_u, Some(0.0));
        assert_eq!(r.n_lp, vec![(3.0, 0.0)]);
    }

    #[test]
    fn unit_density_record() {
        let d = DomainSpec::unit_square(8).unwrap();
        let b = Bases::new(d, false).unwrap();
        let mut st = SimState::zeros(d);
        st.n = ScalarField::constant(d, 1.0);
        let r = compute_record(&st, &params(d, 2.0, 0.1), &b, &[]).unwrap();
        assert!((r.mass - 1.0).abs() < 1e-14);
        assert_eq!(r.quasi_energy, 0.0);
        assert_eq!(r.n_linf, 1.0);
        assert_eq!(r.n_interp_norm, None);
        assert_eq!(r.frac_u, None);
    }

    #[test]
    fn grad_log_matches_brute_force() {
        let d = DomainSpec::new(1.0, 0.7, 13, 9).unwrap();
        let st = random_state(d, 3);
        let b = Bases::new(d, false).unwrap();
        let r = compute_record(&st, &params(d, 1.5, 0.1), &b, &[]).unwrap();
        let l = |i: usize, j: usize| (st.n.at(i, j) + 1.0).ln();
        let mut brute = 0.0;
        for j in 0..9 {
            for i in 0..13 {
                if i + 1 < 13 {
                    brute += ((l(i + 1, j) - l(i, j)) / d.hx()).powi(2);
                }
                if j + 1 < 9 {
                    brute += ((l(i, j + 1) - l(i, j)) / d.hy()).powi(2);
                }
            }
        }
        brute *= d.cell_area();
        assert!((r.grad_log_n - brute).abs() <= 1e-12 * brute);
    }

    #[test]
    fn quadrature_agrees_with_spectral_routes() {
        let d = DomainSpec::new(1.0, 0.8, 12, 10).unwrap();
        let b = Bases::new(d, true).unwrap();
        for seed in 0..4 {
            let st = random_state(d, seed);
            let r = compute_record(&st, &params(d, 1.5, 0.1), &b, &[]).unwrap();
            let gap = cross_check(&st, &r, &b).unwrap();
            assert!(gap <= CROSS_CHECK_TOL, "seed {seed}: gap {gap:e}");
        }
    }

    #[test]
    fn holder_and_entropy_floor_hold() {
        let d = DomainSpec::unit_square(10).unwrap();
        let b = Bases::new(d, false).unwrap();
        for seed in 0..10 {
            let mut st = random_state(d, seed);
            st.n = st.n.scale(0.2 + 0.3 * seed as f64);
            for gamma in [1.1, 1.5, 1.9] {
                let r = compute_record(&st, &params(d, gamma, 0.1), &b, &[]).unwrap();
                let h = holder_check(&r, gamma).unwrap();
                assert!(h.holds(), "{h:?}");
                assert!(r.quasi_energy >= -d.area() / std::f64::consts::E);
            }
        }
    }

    #[test]
    fn corrupted_history_is_located() {
        let d = DomainSpec::unit_square(8).unwrap();
        // without damping the budget is tight, so a 1% bump must show
        let s = Stepper::new(params(d, 2.0, 0.0), 1e-2).unwrap();
        let mut spec = InitialSpec::named("gaussian-bump");
        spec.mass = 2.0;
        let (n, c, u) = make_initial_data(d, &spec).unwrap();
        let mut st = SimState::new(n, c, u).unwrap();
        let mut hist = Vec::new();
        for _ in 0..20 {
            let (next, rep) = s.step(&st, None).unwrap();
            hist.push(rep);
            st = next;
        }
        assert!(check_mass_inequality(&hist).unwrap().pass);
        for r in hist.iter_mut().skip(7) {
            r.mass_after *= 1.01;
        }
        let v = check_mass_inequality(&hist).unwrap();
        assert!(!v.pass);
        assert_eq!(v.first_failure, Some(7));
        assert!(check_mass_inequality(&[]).is_err());
    }

    #[test]
    fn bump_shape() {
        let b = Bump::new(0.3, 0.2).unwrap();
        assert!((b.value(0.3) - 1.0).abs() < 1e-15);
        assert!(b.value(0.5).abs() < 1e-15 && b.value(0.1).abs() < 1e-15);
        assert_eq!(b.value(0.51), 0.0);
        let h = 1e-6;
        for t in [0.12, 0.2, 0.25, 0.3, 0.33, 0.45] {
            let fd = (b.value(t + h) - b.value(t - h)) / (2.0 * h);
            assert!((fd - b.derivative(t)).abs() < 1e-6, "t {t}");
        }
        // second derivative continuous at the spline knots
        let dd = |t: f64| (b.derivative(t + h) - b.derivative(t - h)) / (2.0 * h);
        let gap = |e: f64| (dd(0.4 - e) - dd(0.4 + e)).abs();
        assert!(gap(1e-4) < 0.2 * gap(1e-3));
        // the B-spline has unit integral: int B = 0.75 w, int t B = 0.75 w c
        assert!((b.integral_linear(0.0, 1.0, 1.0, 1.0) - 0.15).abs() < 1e-14);
        assert!((b.integral_linear(0.0, 1.0, 0.0, 1.0) - 0.045).abs() < 1e-14);
        let split = b.integral_linear(0.0, 0.37, 0.0, 0.37) + b.integral_linear(0.37, 1.0, 0.37, 1.0);
        assert!((split - 0.045).abs() < 1e-14);
    }

    #[test]
    fn banks_are_admissible() {
        let d = DomainSpec::new(1.0, 0.5, 16, 8).unwrap();
        let sb = scalar_test_bank(d, 0.0, 1.0).unwrap();
        assert_eq!(sb.len(), 15);
        assert!(sb.iter().all(|t| t.space.min() >= 0.0 && t.time.end() <= 1.0 + 1e-15));
        let vb = vector_test_bank(d, 0.0, 1.0).unwrap();
        assert_eq!(vb.len(), 15);
        for t in &vb {
            t.space.validate().unwrap();
            assert!(max_divergence(&t.space) < 1e-12);
            assert!(t.space.max_abs() > 0.0);
        }
    }

    fn constant_trajectory(d: DomainSpec, p: &Params, nbar: f64, t_end: f64, k: usize) -> Trajectory {
        let cbar = nbar / (1.0 + p.epsilon * nbar);
        let mut traj = Trajectory::new();
        for s in 0..=k {
            let mut st = SimState::zeros(d);
            st.n = ScalarField::constant(d, nbar);
            st.c = ScalarField::constant(d, cbar);
            st.time = t_end * s as f64 / k as f64;
            traj.push(st);
        }
        traj
    }

    #[test]
    fn stationary_constant_state_residuals() {
        let d = DomainSpec::unit_square(8).unwrap();
        let (nbar, eps, gamma, mu): (f64, f64, f64, f64) = (1.5, 0.1, 1.5, 2.0);
        // r balances f(n) - eps n^2 at nbar
        let r = mu * nbar.powf(gamma - 1.0) + eps * nbar;
        let p = Params::new(d, r, mu, gamma, 1.0, eps, 0.2, 0.0).unwrap();
        let traj = constant_trajectory(d, &p, nbar, 1.0, 400);
        for t in scalar_test_bank(d, 0.0, 1.0).unwrap() {
            assert!(weak_residual_c(&traj, &p, &t).unwrap() <= 1e-6);
            let l = log_supersolution_residual(&traj, &p, &t).unwrap();
            assert!(l.identity.abs() <= 1e-6, "{l:?}");
            assert!(l.slack <= 0.0 && (l.slack + l.eps_term).abs() <= 1e-6);
        }
        for t in vector_test_bank(d, 0.0, 1.0).unwrap() {
            assert!(weak_residual_u(&traj, &p, &t).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn zero_test_function_gives_zero() {
        let d = DomainSpec::unit_square(8).unwrap();
        let p = params(d, 1.5, 0.1);
        let mut traj = Trajectory::new();
        for k in 0..5 {
            let mut st = random_state(d, k);
            st.time = 0.1 * k as f64;
            traj.push(st);
        }
        let time = Bump::new(0.1, 0.2).unwrap();
        let zs = ScalarTest {
            time,
            space: ScalarField::zeros(d),
        };
        assert_eq!(weak_residual_c(&traj, &p, &zs).unwrap(), 0.0);
        let l = log_supersolution_residual(&traj, &p, &zs).unwrap();
        assert_eq!((l.identity, l.slack), (0.0, 0.0));
        let zv = VectorTest {
            time,
            space: VectorField::zeros(d),
        };
        assert_eq!(weak_residual_u(&traj, &p, &zv).unwrap(), 0.0);
    }

    #[test]
    fn invalid_tests_are_rejected() {
        let d = DomainSpec::unit_square(8).unwrap();
        let p = params(d, 1.5, 0.1);
        let traj = constant_trajectory(d, &p, 1.0, 1.0, 10);
        let time = Bump::new(0.5, 0.3).unwrap();
        let neg = ScalarTest {
            time,
            space: ScalarField::constant(d, -1.0),
        };
        assert!(log_supersolution_residual(&traj, &p, &neg).is_err());
        let raw = VectorField::from_fn(d, |x, _| x * (1.0 - x), |_, _| 0.0).unwrap();
        let bad = VectorTest { time, space: raw };
        assert!(matches!(
            weak_residual_u(&traj, &p, &bad),
            Err(Error::NotDivergenceFree { .. })
        ));
        let late = ScalarTest {
            time: Bump::new(0.9, 0.3).unwrap(),
            space: ScalarField::constant(d, 1.0),
        };
        assert!(weak_residual_c(&traj, &p, &late).is_err());
    }

    #[test]
    fn entropy_constant_scan() {
        assert!((inf_square_log() + 0.5 / std::f64::consts::E).abs() < 1e-8);
        // r = mu = 1, gamma = 2: brute-force dense linear scan
        let d = DomainSpec::unit_square(4).unwrap();
        let p = Params::new(d, 1.0, 1.0, 2.0, 1.0, 0.1, 0.2, 0.0).unwrap();
        let brute = (1..2_000_000)
            .map(|k| {
                let s = k as f64 * 1e-6;
                (s - s * s) * (1.0 + s.ln())
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((sup_reaction_entropy(&p) - brute).abs() < 1e-9);
        let c2 = entropy_constant(&p, 1.0);
        assert!((c2 - brute - 0.5 / std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn energy_check_gating() {
        let d = DomainSpec::unit_square(6).unwrap();
        let b = Bases::new(d, true).unwrap();
        let p = params(d, 1.5, 0.1);
        let mut recs = Vec::new();
        for k in 0..10 {
            let mut st = SimState::zeros(d);
            st.time = k as f64;
            recs.push(compute_record(&st, &p, &b, &[]).unwrap());
        }
        let v = check_energy_dissipation(&recs, &p, 1.0).unwrap();
        assert_eq!(v.status, EnergyStatus::Pass);
        assert_eq!(v.window_start, Some(0));
        assert_eq!(v.violations, 0);

        let mut heavy = recs.clone();
        for r in &mut heavy {
            r.mass = 10.0;
        }
        let v = check_energy_dissipation(&heavy, &p, 1.0).unwrap();
        assert_eq!(v.status, EnergyStatus::PreconditionFailed);
    }

    #[test]
    fn csv_round_trip() {
        let d = DomainSpec::unit_square(6).unwrap();
        let b = Bases::new(d, false).unwrap();
        let p = params(d, 2.0, 0.1);
        let recs: Vec<_> = (0..3)
            .map(|k| compute_record(&random_state(d, k), &p, &b, &[1.5, 4.0]).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time [T],mass [N],"));
        let back = read_records_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, recs);
    }
}
