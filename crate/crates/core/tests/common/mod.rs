//! Shared generators for the integration tests.

use chemoflow::oracles::OdiInput;
use rand::Rng;

/// Random admissible comparison system built by saturating the inequality:
/// with nonnegative smooth `a, b`, a fraction `theta` and a rate `lambda`,
/// `y` solves `y' = a y + b - h` where `h = theta (a y + b + lambda y)`.
/// Sampled every `dt`, integrated by RK4 on two substeps per sample.
pub fn saturated_odi<R: Rng>(rng: &mut R) -> OdiInput {
    let amp_a = rng.gen_range(0.0..2.0);
    let amp_b = rng.gen_range(0.0..2.0);
    let (wa, wb) = (rng.gen_range(0.5..5.0), rng.gen_range(0.5..5.0));
    let (pa, pb) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let decay = rng.gen_range(0.0..1.0);
    let theta = rng.gen_range(0.05..0.95);
    let lambda = rng.gen_range(0.0..3.0);
    let y0 = rng.gen_range(0.0..5.0);
    let tau = rng.gen_range(0.0..2.0);
    let horizon: f64 = rng.gen_range(0.5..5.0);
    let dt: f64 = 2.5e-4;
    let steps = (horizon / dt).round() as usize;

    let a = |t: f64| amp_a * (1.0 + (wa * t + pa).sin()) * (-decay * t).exp();
    let b = |t: f64| amp_b * (1.0 + (wb * t + pb).cos()) * (-decay * t).exp();
    let h = |t: f64, y: f64| theta * (a(t) * y + b(t) + lambda * y);
    let rhs = |t: f64, y: f64| a(t) * y + b(t) - h(t, y);

    let sub = 2;
    let hs = dt / sub as f64;
    let mut y = y0;
    let mut t = tau;
    let mut input = OdiInput {
        tau,
        dt,
        y: vec![y],
        h: vec![h(t, y)],
        a: vec![a(t)],
        b: vec![b(t)],
        truncated: false,
    };
    for k in 1..=steps {
        for _ in 0..sub {
            let k1 = rhs(t, y);
            let k2 = rhs(t + 0.5 * hs, y + 0.5 * hs * k1);
            let k3 = rhs(t + 0.5 * hs, y + 0.5 * hs * k2);
            let k4 = rhs(t + hs, y + hs * k3);
            y += hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += hs;
        }
        t = tau + k as f64 * dt;
        input.y.push(y);
        input.h.push(h(t, y));
        input.a.push(a(t));
        input.b.push(b(t));
    }
    input
}
