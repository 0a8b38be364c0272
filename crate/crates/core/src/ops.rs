//! Spatial discrete operators on the MAC grid: Neumann Laplacian,
//! gradient/divergence pair, upwind scalar transport, energy-neutral momentum
//! convection, no-slip vector Laplacian and the Helmholtz projection.

use crate::error::{Error, Result};
use crate::mesh::{DomainSpec, ScalarField, VectorField};
use crate::spectral::{Basis1d, Closure, NeumannBasis, Separable};

/// Divergence tolerance for velocities handed to [`advect_scalar`].
pub const ADVECTION_DIV_TOL: f64 = 1e-8;

/// 5-point Laplacian with mirror ghosts (zero normal flux).
pub fn laplacian_neumann(f: &ScalarField) -> ScalarField {
    let d = *f.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let (ax, ay) = (1.0 / (d.hx() * d.hx()), 1.0 / (d.hy() * d.hy()));
    let v = f.values();
    let mut out = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let c = v[j * nx + i];
            let mut s = 0.0;
            if i > 0 {
                s += ax * (v[j * nx + i - 1] - c);
            }
            if i + 1 < nx {
                s += ax * (v[j * nx + i + 1] - c);
            }
            if j > 0 {
                s += ay * (v[(j - 1) * nx + i] - c);
            }
            if j + 1 < ny {
                s += ay * (v[(j + 1) * nx + i] - c);
            }
            out[j * nx + i] = s;
        }
    }
    ScalarField::from_raw(d, out)
}

/// Face-centered differences; boundary-normal faces are zero.
pub fn gradient(f: &ScalarField) -> VectorField {
    let d = *f.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let v = f.values();
    let mut gu = vec![0.0; d.num_u_faces()];
    for j in 0..ny {
        for i in 1..nx {
            gu[j * (nx + 1) + i] = (v[j * nx + i] - v[j * nx + i - 1]) / d.hx();
        }
    }
    let mut gv = vec![0.0; d.num_v_faces()];
    for j in 1..ny {
        for i in 0..nx {
            gv[j * nx + i] = (v[j * nx + i] - v[(j - 1) * nx + i]) / d.hy();
        }
    }
    VectorField::from_raw(d, gu, gv)
}

pub fn divergence(w: &VectorField) -> ScalarField {
    let d = *w.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let (u, v) = (w.u(), w.v());
    let mut out = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            out[j * nx + i] = (u[j * (nx + 1) + i + 1] - u[j * (nx + 1) + i]) / d.hx()
                + (v[(j + 1) * nx + i] - v[j * nx + i]) / d.hy();
        }
    }
    ScalarField::from_raw(d, out)
}

pub fn max_divergence(w: &VectorField) -> f64 {
    divergence(w).max_abs()
}

/// `div(w f)` with first-order upwind face values of `f`. `w` need not be
/// divergence-free; boundary fluxes vanish because `w` has no normal component
/// there.
pub(crate) fn upwind_flux_divergence(w: &VectorField, f: &ScalarField) -> ScalarField {
    let d = *f.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let fv = f.values();
    let mut out = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 1..nx {
            let a = w.u()[j * (nx + 1) + i];
            let up = if a > 0.0 { fv[j * nx + i - 1] } else { fv[j * nx + i] };
            let flux = a * up / d.hx();
            out[j * nx + i - 1] += flux;
            out[j * nx + i] -= flux;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let a = w.v()[j * nx + i];
            let up = if a > 0.0 { fv[(j - 1) * nx + i] } else { fv[j * nx + i] };
            let flux = a * up / d.hy();
            out[(j - 1) * nx + i] += flux;
            out[j * nx + i] -= flux;
        }
    }
    ScalarField::from_raw(d, out)
}

/// Upwind face value of `f` at x-face `(i, j)` for face velocity `a`.
#[inline]
pub(crate) fn upwind_x(f: &ScalarField, a: f64, i: usize, j: usize) -> f64 {
    if a > 0.0 {
        f.at(i - 1, j)
    } else {
        f.at(i, j)
    }
}

/// Upwind face value of `f` at y-face `(i, j)` for face velocity `a`.
#[inline]
pub(crate) fn upwind_y(f: &ScalarField, a: f64, i: usize, j: usize) -> f64 {
    if a > 0.0 {
        f.at(i, j - 1)
    } else {
        f.at(i, j)
    }
}

/// Conservative transport term `div(v f)` (equal to `v . grad f` for
/// divergence-free `v`). Rejects velocities that have not been projected.
pub fn advect_scalar(v: &VectorField, f: &ScalarField) -> Result<ScalarField> {
    v.domain().check_same(f.domain(), "advect_scalar")?;
    let max_div = max_divergence(v);
    if max_div > ADVECTION_DIV_TOL {
        return Err(Error::NotDivergenceFree {
            max_div,
            tolerance: ADVECTION_DIV_TOL,
        });
    }
    Ok(upwind_flux_divergence(v, f))
}

/// `(v . grad) v` in divergence form with centrally averaged transported and
/// transporting velocities. For discretely divergence-free `v` the result is
/// orthogonal to `v`, so convection neither creates nor destroys energy.
pub fn advect_vector(w: &VectorField) -> VectorField {
    let d = *w.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let (hx, hy) = (d.hx(), d.hy());
    let u = |i: usize, j: usize| w.u()[j * (nx + 1) + i];
    let v = |i: usize, j: usize| w.v()[j * nx + i];

    let mut au = vec![0.0; d.num_u_faces()];
    for j in 0..ny {
        for i in 1..nx {
            let ue = 0.5 * (u(i, j) + u(i + 1, j));
            let uw = 0.5 * (u(i - 1, j) + u(i, j));
            let (fn_, fs) = {
                let north = if j + 1 < ny {
                    0.5 * (v(i - 1, j + 1) + v(i, j + 1)) * 0.5 * (u(i, j) + u(i, j + 1))
                } else {
                    0.0
                };
                let south = if j > 0 {
                    0.5 * (v(i - 1, j) + v(i, j)) * 0.5 * (u(i, j - 1) + u(i, j))
                } else {
                    0.0
                };
                (north, south)
            };
            au[j * (nx + 1) + i] = (ue * ue - uw * uw) / hx + (fn_ - fs) / hy;
        }
    }

    let mut av = vec![0.0; d.num_v_faces()];
    for j in 1..ny {
        for i in 0..nx {
            let vn = 0.5 * (v(i, j) + v(i, j + 1));
            let vs = 0.5 * (v(i, j - 1) + v(i, j));
            let east = if i + 1 < nx {
                0.5 * (u(i + 1, j - 1) + u(i + 1, j)) * 0.5 * (v(i, j) + v(i + 1, j))
            } else {
                0.0
            };
            let west = if i > 0 {
                0.5 * (u(i, j - 1) + u(i, j)) * 0.5 * (v(i - 1, j) + v(i, j))
            } else {
                0.0
            };
            av[j * nx + i] = (vn * vn - vs * vs) / hy + (east - west) / hx;
        }
    }
    VectorField::from_raw(d, au, av)
}

/// Componentwise Laplacian with no-slip walls: boundary-normal faces are
/// Dirichlet nodes, tangential walls use odd ghosts.
pub fn vector_laplacian(w: &VectorField) -> VectorField {
    let d = *w.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let (ax, ay) = (1.0 / (d.hx() * d.hx()), 1.0 / (d.hy() * d.hy()));
    let (u, v) = (w.u(), w.v());

    let mut lu = vec![0.0; d.num_u_faces()];
    for j in 0..ny {
        for i in 1..nx {
            let c = u[j * (nx + 1) + i];
            let xs = u[j * (nx + 1) + i - 1] + u[j * (nx + 1) + i + 1] - 2.0 * c;
            let below = if j > 0 { u[(j - 1) * (nx + 1) + i] } else { -c };
            let above = if j + 1 < ny { u[(j + 1) * (nx + 1) + i] } else { -c };
            lu[j * (nx + 1) + i] = ax * xs + ay * (below + above - 2.0 * c);
        }
    }
    let mut lv = vec![0.0; d.num_v_faces()];
    for j in 1..ny {
        for i in 0..nx {
            let c = v[j * nx + i];
            let ys = v[(j - 1) * nx + i] + v[(j + 1) * nx + i] - 2.0 * c;
            let left = if i > 0 { v[j * nx + i - 1] } else { -c };
            let right = if i + 1 < nx { v[j * nx + i + 1] } else { -c };
            lv[j * nx + i] = ay * ys + ax * (left + right - 2.0 * c);
        }
    }
    VectorField::from_raw(d, lu, lv)
}

/// Precomputed eigenbases for the implicit solves on one domain.
#[derive(Debug, Clone)]
pub struct DiscreteOps {
    domain: DomainSpec,
    neumann: NeumannBasis,
    u_modes: Separable,
    v_modes: Separable,
}

impl DiscreteOps {
    pub fn new(domain: DomainSpec) -> Self {
        let (nx, ny) = (domain.cells_x(), domain.cells_y());
        let (hx, hy) = (domain.hx(), domain.hy());
        DiscreteOps {
            domain,
            neumann: NeumannBasis::new(domain),
            u_modes: Separable::new(
                Basis1d::new(Closure::DirichletNode, nx, hx),
                Basis1d::new(Closure::DirichletCell, ny, hy),
            ),
            v_modes: Separable::new(
                Basis1d::new(Closure::DirichletCell, nx, hx),
                Basis1d::new(Closure::DirichletNode, ny, hy),
            ),
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn neumann(&self) -> &NeumannBasis {
        &self.neumann
    }

    /// Solves `(a - b Laplacian_N) x = rhs`; `a = 0` returns the mean-zero
    /// solution.
    pub fn solve_scalar(&self, rhs: &ScalarField, a: f64, b: f64) -> ScalarField {
        ScalarField::from_raw(self.domain, self.neumann.solve_shifted(rhs.values(), a, b))
    }

    /// Solves `(I - b vector_laplacian) x = rhs` for a no-slip field.
    pub fn solve_velocity(&self, rhs: &VectorField, b: f64) -> VectorField {
        let (nx, ny) = (self.domain.cells_x(), self.domain.cells_y());
        let inv = |lap: f64| 1.0 / (1.0 + b * lap);

        let mut ui = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            ui.extend_from_slice(&rhs.u()[j * (nx + 1) + 1..j * (nx + 1) + nx]);
        }
        let ui = self.u_modes.apply_fn(&ui, inv);
        let mut u = vec![0.0; self.domain.num_u_faces()];
        for j in 0..ny {
            u[j * (nx + 1) + 1..j * (nx + 1) + nx].copy_from_slice(&ui[j * (nx - 1)..(j + 1) * (nx - 1)]);
        }

        let vi = self.v_modes.apply_fn(&rhs.v()[nx..ny * nx], inv);
        let mut v = vec![0.0; self.domain.num_v_faces()];
        v[nx..ny * nx].copy_from_slice(&vi);
        VectorField::from_raw(self.domain, u, v)
    }

    /// Splits `w = P w + grad q` with `div(P w) = 0`; returns `(P w, q)`, `q`
    /// normalized to zero mean.
    pub fn project(&self, w: &VectorField) -> Result<(VectorField, ScalarField)> {
        self.domain.check_same(w.domain(), "helmholtz_project")?;
        let div = divergence(w);
        // Laplacian_N q = div w  <=>  (0 - 1 Laplacian_N) q = -div w
        let q = self.solve_scalar(&div.scale(-1.0), 0.0, 1.0);
        let projected = w.lin_comb(1.0, &gradient(&q), -1.0);
        let residual = max_divergence(&projected);
        let scale = w.max_abs().max(1.0) / self.domain.hx().min(self.domain.hy());
        if !(residual <= 1e-10 * scale) {
            return Err(Error::Solver(format!(
                "pressure projection left max |div| = {residual:e}"
            )));
        }
        Ok((projected, q))
    }
}

/// Helmholtz projection onto discretely divergence-free no-slip fields.
pub fn helmholtz_project(w: &VectorField) -> Result<(VectorField, ScalarField)> {
    DiscreteOps::new(*w.domain()).project(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{inner, inner_vec, integrate, norm_vec_sq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rand_scalar(d: DomainSpec, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::new(d, (0..d.num_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_vector(d: DomainSpec, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..d.num_u_faces()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = (0..d.num_v_faces()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        VectorField::from_raw(d, u, v)
    }

    #[test]
    fn laplacian_of_constant_and_mass() {
        let d = DomainSpec::new(1.5, 1.0, 9, 7).unwrap();
        let c = laplacian_neumann(&ScalarField::constant(d, 3.0));
        assert!(c.max_abs() == 0.0);
        let f = rand_scalar(d, 1);
        assert!(integrate(&laplacian_neumann(&f)).abs() < 1e-12);
    }

    #[test]
    fn laplacian_second_order_on_cosine_mode() {
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let d = DomainSpec::new(2.0, 1.0, n, 4).unwrap();
            let f = ScalarField::from_fn(d, |x, _| (PI * x / 2.0).cos()).unwrap();
            let lap = laplacian_neumann(&f);
            let k2 = (PI / 2.0).powi(2);
            let err = lap
                .values()
                .iter()
                .zip(f.values())
                .map(|(l, v)| (l + k2 * v).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.9, "rate {rate}");
        }
    }

    #[test]
    fn laplacian_negative_semidefinite() {
        let d = DomainSpec::unit_square(10).unwrap();
        for s in 0..5 {
            let f = rand_scalar(d, s);
            assert!(inner(&laplacian_neumann(&f), &f) < 0.0);
        }
        let c = ScalarField::constant(d, 1.0);
        assert_eq!(inner(&laplacian_neumann(&c), &c), 0.0);
    }

    #[test]
    fn gradient_divergence_adjoint() {
        let d = DomainSpec::new(1.0, 0.6, 12, 8).unwrap();
        for s in 0..4 {
            let f = rand_scalar(d, s);
            let w = rand_vector(d, 100 + s);
            let lhs = inner_vec(&gradient(&f), &w);
            let rhs = -inner(&f, &divergence(&w));
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
        assert_eq!(gradient(&ScalarField::constant(d, 2.0)).max_abs(), 0.0);
        assert_eq!(divergence(&VectorField::zeros(d)).max_abs(), 0.0);
    }

    #[test]
    fn projection_properties() {
        let d = DomainSpec::new(1.0, 1.3, 10, 13).unwrap();
        let ops = DiscreteOps::new(d);
        let w = rand_vector(d, 5);
        let (p, _) = ops.project(&w).unwrap();
        assert!(max_divergence(&p) < 1e-10);
        let (pp, q) = ops.project(&p).unwrap();
        assert!(pp.lin_comb(1.0, &p, -1.0).max_abs() < 1e-9);
        assert!(q.max_abs() < 1e-10);
        // pure gradients are annihilated
        let f = rand_scalar(d, 6);
        let (z, _) = ops.project(&gradient(&f)).unwrap();
        assert!(z.max_abs() < 1e-9);
    }

    #[test]
    fn advect_scalar_rejects_unprojected() {
        let d = DomainSpec::unit_square(6).unwrap();
        let w = rand_vector(d, 1);
        assert!(matches!(
            advect_scalar(&w, &ScalarField::zeros(d)),
            Err(Error::NotDivergenceFree { .. })
        ));
    }

    #[test]
    fn advect_scalar_conserves_and_kills_constants() {
        let d = DomainSpec::unit_square(16).unwrap();
        let (w, _) = helmholtz_project(&rand_vector(d, 2)).unwrap();
        let f = rand_scalar(d, 3);
        assert!(integrate(&advect_scalar(&w, &f).unwrap()).abs() < 1e-12);
        let k = advect_scalar(&w, &ScalarField::constant(d, 4.0)).unwrap();
        assert!(k.max_abs() < 1e-12 * 4.0 * 16.0 * 16.0);
        assert_eq!(advect_scalar(&VectorField::zeros(d), &f).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn advect_vector_is_energy_neutral() {
        let d = DomainSpec::new(1.0, 0.8, 14, 11).unwrap();
        for s in 0..5 {
            let (w, _) = helmholtz_project(&rand_vector(d, 20 + s)).unwrap();
            let a = advect_vector(&w);
            assert!(inner_vec(&a, &w).abs() <= 1e-10 * norm_vec_sq(&w));
        }
        assert_eq!(advect_vector(&VectorField::zeros(d)).max_abs(), 0.0);
    }

    #[test]
    fn vector_laplacian_symmetric_negative() {
        let d = DomainSpec::new(1.0, 0.7, 9, 6).unwrap();
        let a = rand_vector(d, 1);
        let b = rand_vector(d, 2);
        let ab = inner_vec(&vector_laplacian(&a), &b);
        let ba = inner_vec(&a, &vector_laplacian(&b));
        assert!((ab - ba).abs() < 1e-10 * ab.abs().max(1.0));
        assert!(inner_vec(&vector_laplacian(&a), &a) < 0.0);
    }

    #[test]
    fn velocity_solve_inverts_operator() {
        let d = DomainSpec::new(1.0, 0.7, 9, 6).unwrap();
        let ops = DiscreteOps::new(d);
        let x = rand_vector(d, 8);
        let b = 0.013;
        let rhs = x.lin_comb(1.0, &vector_laplacian(&x), -b);
        let y = ops.solve_velocity(&rhs, b);
        assert!(y.lin_comb(1.0, &x, -1.0).max_abs() < 1e-11);
    }

    #[test]
    fn scalar_solve_inverts_operator() {
        let d = DomainSpec::new(1.0, 0.7, 9, 6).unwrap();
        let ops = DiscreteOps::new(d);
        let x = rand_scalar(d, 8);
        let rhs = x.lin_comb(1.3, &laplacian_neumann(&x), -0.2);
        let y = ops.solve_scalar(&rhs, 1.3, 0.2);
        assert!(y.lin_comb(1.0, &x, -1.0).max_abs() < 1e-12);
    }
}
