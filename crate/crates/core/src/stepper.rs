//! Time stepping for the regularized system.
//!
//! One step advances `n`, then `c`, then `u`, each using the fields at the
//! beginning of the step for its couplings:
//!
//! * `n`: explicit upwind transport by `u` and by the chemotactic velocity
//!   `grad c`, explicit reaction `f(n) - eps n^2`, implicit diffusion;
//! * `c`: explicit upwind transport, explicit source `n / (1 + eps n)`,
//!   implicit `Laplacian - 1`;
//! * `u`: explicit convection and buoyancy (projected), implicit viscosity,
//!   then a final pressure projection.
//!
//! All implicit solves are exact spectral solves, so the only sources of
//! mass change are the reaction term and (accounted) clipping.

use crate::error::{Error, Result};
use crate::mesh::{inner_vec, integrate, norm_vec_sq, DomainSpec, ScalarField, VectorField};
use crate::ops::{
    advect_scalar, advect_vector, divergence, gradient, upwind_flux_divergence, vector_laplacian,
    DiscreteOps,
};
use crate::params::Params;

/// Safety factor applied to every explicit stability bound.
pub const SAFETY: f64 = 0.4;
pub const DEFAULT_DT_MAX: f64 = 1e-2;
/// Negative values above `-CLIP_NOISE * max n` are roundoff from the spectral
/// solve: zeroed and added to the clip mass, but not counted as clip events.
pub const CLIP_NOISE: f64 = 1e-12;
/// Largest acceptable `max |div u|` after a step.
pub const DIV_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time: f64,
    pub n: ScalarField,
    pub c: ScalarField,
    pub u: VectorField,
    /// Pressure, defined up to an additive constant (stored with zero mean).
    pub pressure: ScalarField,
}

impl SimState {
    pub fn new(n: ScalarField, c: ScalarField, u: VectorField) -> Result<Self> {
        let d = *n.domain();
        d.check_same(c.domain(), "state c")?;
        d.check_same(u.domain(), "state u")?;
        let s = SimState {
            time: 0.0,
            pressure: ScalarField::zeros(d),
            n,
            c,
            u,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn zeros(domain: DomainSpec) -> Self {
        SimState {
            time: 0.0,
            n: ScalarField::zeros(domain),
            c: ScalarField::zeros(domain),
            u: VectorField::zeros(domain),
            pressure: ScalarField::zeros(domain),
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        self.n.domain()
    }

    /// Finiteness, nonnegativity, no-slip and the divergence constraint.
    pub fn validate(&self) -> Result<()> {
        self.n.ensure_finite("n")?;
        self.c.ensure_finite("c")?;
        self.u.ensure_finite("u")?;
        self.pressure.ensure_finite("pressure")?;
        self.u.validate()?;
        if self.n.min() < 0.0 || self.c.min() < 0.0 {
            return Err(Error::InvalidInput("state has negative density or signal".into()));
        }
        let div = divergence(&self.u).max_abs();
        if div > DIV_TOL {
            return Err(Error::NotDivergenceFree {
                max_div: div,
                tolerance: DIV_TOL,
            });
        }
        Ok(())
    }
}

/// Terms of the discrete kinetic-energy inequality
/// `KE' - KE + dissipation <= forcing + convection + splitting`
/// satisfied by every velocity step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FluidEnergyAudit {
    pub kinetic_before: f64,
    pub kinetic_after: f64,
    /// `dt ||grad u*||^2` of the viscous predictor.
    pub dissipation: f64,
    /// `dt <u, n grad phi>`.
    pub forcing_work: f64,
    /// `-kappa dt <u, (u.grad) u>`, zero up to roundoff.
    pub convection_work: f64,
    /// `dt^2 / 2 ||P(explicit terms)||^2`, the price of the explicit split.
    pub splitting_term: f64,
}

impl FluidEnergyAudit {
    /// `rhs - lhs`; nonnegative up to roundoff.
    pub fn slack(&self) -> f64 {
        self.forcing_work + self.convection_work + self.splitting_term
            - (self.kinetic_after - self.kinetic_before + self.dissipation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub time_before: f64,
    pub dt_used: f64,
    pub mass_before: f64,
    pub mass_after: f64,
    /// `integral (f(n) - eps n^2)` at the beginning of the step.
    pub reaction_integral: f64,
    /// `integral f(n)` at the beginning of the step.
    pub f_integral: f64,
    /// Cells of `n` clipped from a significantly negative value.
    pub clip_count: usize,
    /// Total mass added by clipping `n` (including roundoff-level zeroing).
    pub clip_mass: f64,
    /// Clip events in `c`.
    pub c_clip_count: usize,
    /// Direct linear solves performed (each spectral solve counts once).
    pub solver_iterations: usize,
    pub max_divergence: f64,
    pub fluid_energy: FluidEnergyAudit,
}

impl StepReport {
    /// `mass_after - mass_before - dt * reaction_integral`: what transport and
    /// clipping changed.
    pub fn mass_residual(&self) -> f64 {
        self.mass_after - self.mass_before - self.dt_used * self.reaction_integral
    }
}

struct Clipped {
    field: ScalarField,
    count: usize,
    mass: f64,
}

fn clip_nonnegative(mut f: ScalarField) -> Clipped {
    let scale = f.max_abs();
    let area = f.domain().cell_area();
    let mut count = 0;
    let mut added = 0.0;
    for v in f.values_mut() {
        if *v < 0.0 {
            if *v < -CLIP_NOISE * scale {
                count += 1;
            }
            added -= *v * area;
            *v = 0.0;
        }
    }
    Clipped {
        field: f,
        count,
        mass: added,
    }
}

/// Face average of a cell field times a face vector field, boundary zero.
pub(crate) fn face_product(n: &ScalarField, w: &VectorField) -> VectorField {
    let d = *n.domain();
    let (nx, ny) = (d.cells_x(), d.cells_y());
    let mut u = vec![0.0; d.num_u_faces()];
    for j in 0..ny {
        for i in 1..nx {
            u[j * (nx + 1) + i] = 0.5 * (n.at(i - 1, j) + n.at(i, j)) * w.u_at(i, j);
        }
    }
    let mut v = vec![0.0; d.num_v_faces()];
    for j in 1..ny {
        for i in 0..nx {
            v[j * nx + i] = 0.5 * (n.at(i, j - 1) + n.at(i, j)) * w.v_at(i, j);
        }
    }
    VectorField::from_raw(d, u, v)
}

/// Optional manufactured-solution sources added to the right-hand sides.
#[derive(Debug, Clone, Default)]
pub struct Forcing {
    pub n_source: Option<ScalarField>,
    pub c_source: Option<ScalarField>,
}

pub struct NStep {
    pub n: ScalarField,
    pub clip_count: usize,
    pub clip_mass: f64,
    pub reaction_integral: f64,
    pub f_integral: f64,
}

pub struct UStep {
    pub u: VectorField,
    pub pressure: ScalarField,
    pub audit: FluidEnergyAudit,
}

/// Owns the precomputed solvers for one domain and parameter set.
#[derive(Debug, Clone)]
pub struct Stepper {
    ops: DiscreteOps,
    params: Params,
    grad_potential: VectorField,
    dt_max: f64,
}

impl Stepper {
    pub fn new(params: Params, dt_max: f64) -> Result<Self> {
        params.validate()?;
        if !(dt_max.is_finite() && dt_max > 0.0) {
            return Err(Error::InvalidParams(format!("dt_max must be positive, got {dt_max}")));
        }
        let domain = *params.potential.domain();
        Ok(Stepper {
            ops: DiscreteOps::new(domain),
            grad_potential: gradient(&params.potential),
            params,
            dt_max,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn ops(&self) -> &DiscreteOps {
        &self.ops
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }

    /// `SAFETY * min(1 / transport rate, 1 / reaction rate)`, capped at `dt_max`.
    ///
    /// The transport rate is the largest per-cell sum over faces of
    /// `(|u| + |grad c|) / h`; the reaction rate bounds `|f'|` plus the
    /// regularization at `max n`.
    pub fn stable_dt(&self, state: &SimState) -> Result<f64> {
        state.n.ensure_finite("n")?;
        state.c.ensure_finite("c")?;
        state.u.ensure_finite("u")?;
        let d = *state.domain();
        let (nx, ny) = (d.cells_x(), d.cells_y());
        let (hx, hy) = (d.hx(), d.hy());
        let gc = gradient(&state.c);
        let mut rate: f64 = 0.0;
        for j in 0..ny {
            for i in 0..nx {
                let fx = |k: usize| (state.u.u_at(k, j).abs() + gc.u_at(k, j).abs()) / hx;
                let fy = |k: usize| (state.u.v_at(i, k).abs() + gc.v_at(i, k).abs()) / hy;
                rate = rate.max(fx(i) + fx(i + 1) + fy(j) + fy(j + 1));
            }
        }
        let react = self.params.reaction_rate_bound(state.n.max().max(0.0));
        let mut dt = self.dt_max;
        if rate > 0.0 {
            dt = dt.min(SAFETY / rate);
        }
        if react > 0.0 {
            dt = dt.min(SAFETY / react);
        }
        Ok(dt)
    }

    pub fn step_n(&self, state: &SimState, dt: f64, forcing: Option<&ScalarField>) -> Result<NStep> {
        let p = &self.params;
        let n = &state.n;
        let transport = advect_scalar(&state.u, n)?;
        let chemotaxis = upwind_flux_divergence(&gradient(&state.c), n);
        let reaction = n.map(|s| p.f(s) - p.epsilon * s * s);
        let mut rhs: Vec<f64> = n
            .values()
            .iter()
            .zip(transport.values())
            .zip(chemotaxis.values())
            .zip(reaction.values())
            .map(|(((nv, a), x), r)| nv - dt * (a + x) + dt * r)
            .collect();
        if let Some(src) = forcing {
            for (r, s) in rhs.iter_mut().zip(src.values()) {
                *r += dt * s;
            }
        }
        let rhs = ScalarField::from_raw(*n.domain(), rhs);
        let solved = self.ops.solve_scalar(&rhs, 1.0, dt);
        let clipped = clip_nonnegative(solved);
        Ok(NStep {
            n: clipped.field,
            clip_count: clipped.count,
            clip_mass: clipped.mass,
            reaction_integral: integrate(&reaction),
            f_integral: integrate(&n.map(|s| p.f(s))),
        })
    }

    /// Returns the new signal and its clip count.
    pub fn step_c(
        &self,
        state: &SimState,
        dt: f64,
        forcing: Option<&ScalarField>,
    ) -> Result<(ScalarField, usize)> {
        let eps = self.params.epsilon;
        let transport = advect_scalar(&state.u, &state.c)?;
        let mut rhs: Vec<f64> = state
            .c
            .values()
            .iter()
            .zip(transport.values())
            .zip(state.n.values())
            .map(|((c, a), n)| c - dt * a + dt * n / (1.0 + eps * n))
            .collect();
        if let Some(src) = forcing {
            for (r, s) in rhs.iter_mut().zip(src.values()) {
                *r += dt * s;
            }
        }
        let rhs = ScalarField::from_raw(*state.domain(), rhs);
        let clipped = clip_nonnegative(self.ops.solve_scalar(&rhs, 1.0 + dt, dt));
        Ok((clipped.field, clipped.count))
    }

    pub fn step_u(&self, state: &SimState, dt: f64) -> Result<UStep> {
        let kappa = self.params.kappa;
        let u = &state.u;
        let force = face_product(&state.n, &self.grad_potential);
        let explicit = if kappa == 0.0 {
            force.clone()
        } else {
            force.lin_comb(1.0, &advect_vector(u), -kappa)
        };
        let (explicit_p, q1) = self.ops.project(&explicit)?;
        let predictor_rhs = u.lin_comb(1.0, &explicit_p, dt);
        let predicted = self.ops.solve_velocity(&predictor_rhs, dt);
        let (u_new, q2) = self.ops.project(&predicted)?;
        let pressure = q1.lin_comb(-1.0, &q2, -1.0 / dt);

        let audit = FluidEnergyAudit {
            kinetic_before: 0.5 * norm_vec_sq(u),
            kinetic_after: 0.5 * norm_vec_sq(&u_new),
            dissipation: -dt * inner_vec(&vector_laplacian(&predicted), &predicted),
            forcing_work: dt * inner_vec(u, &force),
            convection_work: if kappa == 0.0 {
                0.0
            } else {
                -kappa * dt * inner_vec(u, &advect_vector(u))
            },
            splitting_term: 0.5 * dt * dt * norm_vec_sq(&explicit_p),
        };
        Ok(UStep {
            u: u_new,
            pressure,
            audit,
        })
    }

    /// One full step. `dt = None` uses [`Stepper::stable_dt`]; an explicit
    /// `dt` may not exceed it.
    pub fn step(&self, state: &SimState, dt: Option<f64>) -> Result<(SimState, StepReport)> {
        self.step_forced(state, dt, &Forcing::default())
    }

    pub fn step_forced(
        &self,
        state: &SimState,
        dt: Option<f64>,
        forcing: &Forcing,
    ) -> Result<(SimState, StepReport)> {
        let stable = self.stable_dt(state)?;
        let dt = match dt {
            None => stable,
            Some(dt) if dt > 0.0 && dt <= stable * (1.0 + 1e-12) => dt,
            Some(dt) => {
                return Err(Error::InvalidInput(format!(
                    "requested dt {dt:e} exceeds stable dt {stable:e}"
                )))
            }
        };
        let mass_before = integrate(&state.n);
        let ns = self.step_n(state, dt, forcing.n_source.as_ref())?;
        let (c, c_clips) = self.step_c(state, dt, forcing.c_source.as_ref())?;
        let us = self.step_u(state, dt)?;

        let next = SimState {
            time: state.time + dt,
            n: ns.n,
            c,
            u: us.u,
            pressure: us.pressure,
        };
        next.n.ensure_finite("n")?;
        next.c.ensure_finite("c")?;
        next.u.ensure_finite("u")?;
        next.pressure.ensure_finite("pressure")?;
        let max_div = divergence(&next.u).max_abs();
        if max_div > DIV_TOL {
            return Err(Error::NotDivergenceFree {
                max_div,
                tolerance: DIV_TOL,
            });
        }
        let report = StepReport {
            time_before: state.time,
            dt_used: dt,
            mass_before,
            mass_after: integrate(&next.n),
            reaction_integral: ns.reaction_integral,
            f_integral: ns.f_integral,
            clip_count: ns.clip_count,
            clip_mass: ns.clip_mass,
            c_clip_count: c_clips,
            solver_iterations: 7,
            max_divergence: max_div,
            fluid_energy: us.audit,
        };
        Ok((next, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{make_initial_data, InitialSpec};
    use crate::params::pow_gamma;

    fn params(d: DomainSpec, r: f64, mu: f64, gamma: f64, eps: f64, g: f64) -> Params {
        Params::new(d, r, mu, gamma, 1.0, eps, 0.2, g).unwrap()
    }

    fn state(d: DomainSpec, spec: &InitialSpec) -> SimState {
        let (n, c, u) = make_initial_data(d, spec).unwrap();
        SimState::new(n, c, u).unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let d = DomainSpec::unit_square(8).unwrap();
        let s = Stepper::new(params(d, 1.0, 1.0, 2.0, 0.1, 1.0), 1e-2).unwrap();
        let mut st = SimState::zeros(d);
        assert_eq!(s.stable_dt(&st).unwrap(), 1e-2);
        for _ in 0..5 {
            let (next, rep) = s.step(&st, None).unwrap();
            assert!(next.time > st.time);
            assert_eq!(rep.dt_used, 1e-2);
            st = next;
        }
        assert_eq!(st.n.max_abs() + st.c.max_abs() + st.u.max_abs(), 0.0);
    }

    #[test]
    fn dt_halves_when_velocity_doubles() {
        let d = DomainSpec::unit_square(16).unwrap();
        let s = Stepper::new(params(d, 0.0, 1e-6, 2.0, 0.0, 0.0), 1.0).unwrap();
        let mut spec = InitialSpec::named("constant");
        spec.n_level = 0.0;
        let mut st = state(d, &spec);
        let (n, c, u) = make_initial_data(d, &{
            let mut g = InitialSpec::named("gaussian-bump");
            g.swirl = 1.0;
            g
        })
        .unwrap();
        let _ = (n, c);
        st.u = u.clone();
        let dt1 = s.stable_dt(&st).unwrap();
        st.u = u.scale(2.0);
        let dt2 = s.stable_dt(&st).unwrap();
        assert!((dt1 / dt2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_density_decay_matches_ode() {
        let d = DomainSpec::unit_square(8).unwrap();
        let (mu, gamma, eps) = (1.5, 1.7, 0.2);
        let s = Stepper::new(params(d, 0.0, mu, gamma, eps, 0.0), 1e-3).unwrap();
        let mut spec = InitialSpec::named("constant");
        spec.n_level = 2.0;
        spec.c_level = 0.3;
        let st = state(d, &spec);
        let rhs = |n: f64| -mu * pow_gamma(n, gamma) - eps * n * n;
        let exact = |dt: f64| {
            // fine RK4 reference for n' = -mu n^gamma - eps n^2
            let mut y = 2.0;
            let h = dt / 1000.0;
            for _ in 0..1000 {
                let k1 = rhs(y);
                let k2 = rhs(y + 0.5 * h * k1);
                let k3 = rhs(y + 0.5 * h * k2);
                let k4 = rhs(y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            y
        };
        let mut errs = Vec::new();
        for dt in [1e-3, 5e-4] {
            let (next, _) = s.step(&st, Some(dt)).unwrap();
            assert!(next.n.values().iter().all(|v| (v - next.n.values()[0]).abs() < 1e-13));
            errs.push((next.n.mean() - exact(dt)).abs());
        }
        let ratio = errs[0] / errs[1];
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn pure_signal_decay() {
        let d = DomainSpec::unit_square(8).unwrap();
        let s = Stepper::new(params(d, 0.0, 1.0, 2.0, 0.1, 0.0), 1e-2).unwrap();
        let mut spec = InitialSpec::named("constant");
        spec.n_level = 0.0;
        spec.c_level = 3.0;
        let st = state(d, &spec);
        let (c, _) = s.step_c(&st, 0.01, None).unwrap();
        assert!(c.values().iter().all(|v| (v - 3.0 / 1.01).abs() < 1e-13));
    }

    #[test]
    fn signal_relaxes_to_saturated_source() {
        let d = DomainSpec::unit_square(6).unwrap();
        for eps in [0.0, 0.3] {
            let s = Stepper::new(params(d, 0.0, 1.0, 2.0, eps, 0.0), 0.5).unwrap();
            let mut spec = InitialSpec::named("constant");
            spec.n_level = 2.0;
            let mut st = state(d, &spec);
            for _ in 0..200 {
                let (c, _) = s.step_c(&st, 0.5, None).unwrap();
                st.c = c;
            }
            let target = 2.0 / (1.0 + eps * 2.0);
            assert!((st.c.mean() - target).abs() < 1e-8);
        }
    }

    #[test]
    fn logistic_equilibrium_is_stationary() {
        let d = DomainSpec::unit_square(12).unwrap();
        let (mu, gamma, nbar) = (2.0, 1.5, 0.7);
        let r = mu * pow_gamma(nbar, gamma - 1.0);
        let s = Stepper::new(params(d, r, mu, gamma, 0.0, 1.0), 1e-2).unwrap();
        let mut spec = InitialSpec::named("constant");
        spec.n_level = nbar;
        spec.c_level = nbar;
        let mut st = state(d, &spec);
        for _ in 0..20 {
            let (next, _) = s.step(&st, None).unwrap();
            assert!(next.n.lin_comb(1.0, &st.n, -1.0).max_abs() < 1e-10);
            assert!(next.c.lin_comb(1.0, &st.c, -1.0).max_abs() < 1e-10);
            assert!(next.u.max_abs() < 1e-10);
            st = next;
        }
    }

    #[test]
    fn buoyancy_of_uniform_density_is_projected_out() {
        let d = DomainSpec::new(1.0, 0.7, 10, 8).unwrap();
        let s = Stepper::new(params(d, 0.0, 1.0, 2.0, 0.0, 9.8), 1e-2).unwrap();
        let mut spec = InitialSpec::named("constant");
        spec.n_level = 3.0;
        let st = state(d, &spec);
        let us = s.step_u(&st, 1e-2).unwrap();
        assert!(us.u.max_abs() < 1e-12);
    }

    #[test]
    fn mass_budget_and_positivity() {
        let d = DomainSpec::unit_square(24).unwrap();
        let s = Stepper::new(params(d, 1.0, 2.0, 2.0, 0.05, 1.0), 1e-2).unwrap();
        let mut spec = InitialSpec::named("two-bump");
        spec.mass = 1.5;
        spec.swirl = 0.5;
        let mut st = state(d, &spec);
        for _ in 0..100 {
            let (next, rep) = s.step(&st, None).unwrap();
            if rep.clip_count == 0 {
                assert!(rep.mass_residual().abs() <= 1e-10 * rep.mass_before);
            }
            assert!(next.n.min() >= 0.0 && next.c.min() >= 0.0);
            assert!(rep.max_divergence <= DIV_TOL);
            assert!(rep.fluid_energy.slack() >= -1e-12);
            st = next;
        }
    }

    #[test]
    fn convection_effect_is_quadratic_in_velocity() {
        let d = DomainSpec::unit_square(12).unwrap();
        let mut diffs = Vec::new();
        for amp in [1e-2, 5e-3] {
            let mut spec = InitialSpec::named("gaussian-bump");
            spec.swirl = amp;
            let st = state(d, &spec);
            let mut p = params(d, 0.0, 1.0, 2.0, 0.0, 1.0);
            let with = Stepper::new(p.clone(), 1e-2).unwrap().step_u(&st, 1e-2).unwrap();
            p.kappa = 0.0;
            let without = Stepper::new(p, 1e-2).unwrap().step_u(&st, 1e-2).unwrap();
            diffs.push(with.u.lin_comb(1.0, &without.u, -1.0).max_abs());
        }
        let slope = (diffs[0] / diffs[1]).log2();
        assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn rejects_oversized_dt() {
        let d = DomainSpec::unit_square(8).unwrap();
        let s = Stepper::new(params(d, 1.0, 1.0, 2.0, 0.0, 0.0), 1e-2).unwrap();
        assert!(s.step(&SimState::zeros(d), Some(1.0)).is_err());
    }
}
