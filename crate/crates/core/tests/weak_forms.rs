use chemoflow::diagnostics::{
    log_supersolution_residual, scalar_test_bank, vector_test_bank, weak_residual_c,
    weak_residual_u, Trajectory,
};
use chemoflow::initial::{make_initial_data, InitialSpec};
use chemoflow::{DomainSpec, Params, SimState, Stepper};

fn trajectory(p: &Params, d: DomainSpec, dt: f64, t_end: f64) -> Trajectory {
    let mut spec = InitialSpec::named("gaussian-bump");
    spec.mass = 1.0;
    spec.width = 0.15;
    spec.c_level = 0.1;
    spec.swirl = 0.5;
    let (n, c, u) = make_initial_data(d, &spec).unwrap();
    let mut st = SimState::new(n, c, u).unwrap();
    let s = Stepper::new(p.clone(), dt).unwrap();
    let steps = (t_end / dt).round() as usize;
    let mut traj = Trajectory::new();
    traj.push(st.clone());
    for _ in 0..steps {
        st = s.step(&st, Some(dt)).unwrap().0;
        traj.push(st.clone());
    }
    traj
}

fn rate(coarse: f64, fine: f64) -> f64 {
    (coarse.abs() / fine.abs()).log2()
}

/// Residuals are pure time-discretization error, so halving dt halves them.
/// Members whose residual is tiny against the bank are skipped: their leading
/// error coefficient nearly cancels and the ratio is not informative.
#[test]
fn residuals_are_first_order_in_time() {
    let d = DomainSpec::unit_square(16).unwrap();
    let p = Params::new(d, 1.0, 1.0, 1.5, 1.0, 0.05, 0.2, 1.0).unwrap();
    let t_end = 0.2;
    let a = trajectory(&p, d, 1e-3, t_end);
    let b = trajectory(&p, d, 5e-4, t_end);

    let sbank = scalar_test_bank(d, 0.0, t_end).unwrap();
    let rc: Vec<(f64, f64)> = sbank
        .iter()
        .map(|t| (weak_residual_c(&a, &p, t).unwrap(), weak_residual_c(&b, &p, t).unwrap()))
        .collect();
    let big = rc.iter().map(|r| r.0.abs()).fold(0.0, f64::max);
    for (k, (ra, rb)) in rc.iter().enumerate() {
        if ra.abs() > 1e-2 * big {
            let q = rate(*ra, *rb);
            assert!((0.8..1.3).contains(&q), "c member {k}: rate {q}");
        }
    }
    for (k, t) in sbank.iter().enumerate() {
        let la = log_supersolution_residual(&a, &p, t).unwrap();
        let lb = log_supersolution_residual(&b, &p, t).unwrap();
        let q = rate(la.identity, lb.identity);
        assert!((0.9..1.3).contains(&q), "log member {k}: rate {q}");
        assert!(lb.eps_term >= 0.0);
        // The omitted damping term is what separates slack from identity.
        assert!((lb.slack - (lb.identity - lb.eps_term)).abs() <= 1e-12 * lb.eps_term.max(1.0));
    }
    let vbank = vector_test_bank(d, 0.0, t_end).unwrap();
    let ru: Vec<(f64, f64)> = vbank
        .iter()
        .map(|t| (weak_residual_u(&a, &p, t).unwrap(), weak_residual_u(&b, &p, t).unwrap()))
        .collect();
    let big = ru.iter().map(|r| r.0.abs()).fold(0.0, f64::max);
    for (k, (ra, rb)) in ru.iter().enumerate() {
        if ra.abs() > 1e-2 * big {
            let q = rate(*ra, *rb);
            assert!((0.8..1.3).contains(&q), "u member {k}: rate {q}");
        }
    }
}
