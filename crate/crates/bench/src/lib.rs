//! Fixtures shared by the benchmarks.

use chemoflow::initial::{make_initial_data, InitialSpec};
use chemoflow::{DomainSpec, Params, SimState};

/// A gaussian-bump state with a swirling velocity on an `n x n` unit square,
/// with moderate logistic parameters.
pub fn fixture(n: usize) -> (SimState, Params) {
    let d = DomainSpec::unit_square(n).expect("valid grid");
    let mut spec = InitialSpec::named("gaussian-bump");
    spec.c_level = 0.1;
    spec.swirl = 0.5;
    let (n0, c0, u0) = make_initial_data(d, &spec).expect("valid preset");
    let state = SimState::new(n0, c0, u0).expect("valid state");
    let params = Params::new(d, 1.0, 1.0, 1.5, 1.0, 0.05, 0.2, 1.0).expect("valid params");
    (state, params)
}
