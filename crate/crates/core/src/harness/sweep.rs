//! Parameter sweeps over the regularization and the degradation rate.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    late_log_slope, late_window, simulate, summarize, time_integral, RunConfig, Verdict,
};
use crate::diagnostics::{Bases, EnergyVerdict};
use crate::error::{Error, Result};
use crate::mesh::{norm_vec_sq, ScalarField};
use crate::ops::gradient;
use crate::oracles::GnEstimate;

/// Fraction of the run used for late-window sup and slope in sweeps.
pub const SWEEP_LATE_FRACTION: f64 = 0.5;

/// Position of `mu` relative to the thresholds `mu0 r_+` (below which no
/// claim is made) and `2 mu0 r_+` (the safety-margin gate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuLabel {
    Subcritical,
    Ungated,
    Gated,
}

pub fn mu_label(mu: f64, mu0: f64, r_plus: f64) -> MuLabel {
    let low = mu0 * r_plus;
    let gate = 2.0 * low;
    if (mu - low).abs() <= 1e-12 * low {
        MuLabel::Ungated
    } else if mu < low {
        MuLabel::Subcritical
    } else if mu >= gate * (1.0 - 1e-12) {
        MuLabel::Gated
    } else {
        MuLabel::Ungated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub value: f64,
    pub final_mass: f64,
    /// Sup of `n_linf` over the late window.
    pub late_n_linf_sup: f64,
    pub n_l2_time_integral: f64,
    /// Slope of `ln n_linf` over the late window.
    pub late_log_slope: Option<f64>,
    pub settling_time: Option<f64>,
    /// `t_end >= 4 * settling time`.
    pub long_enough: Option<bool>,
    pub label: Option<MuLabel>,
    pub energy: Option<EnergyVerdict>,
    pub verdicts: Vec<Verdict>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema: u32,
    pub axis: String,
    pub values: Vec<f64>,
    pub points: Vec<PointSummary>,
    /// `||n_k - n_{k+1}||` in `L1(Omega x (0, T))` (refinement only).
    pub distances_n: Vec<f64>,
    /// `||c_k - c_{k+1}||` in `L2((0, T); W^{1,2})` (refinement only).
    pub distances_c: Vec<f64>,
    /// `2 mu0 r_+` (mu sweeps only).
    pub gate: Option<f64>,
}

impl SweepResult {
    /// Writes `sweep.json` and a one-row-per-point `sweep.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(self)?)?;
        let mut csv = format!(
            "{},final_mass,late_n_linf_sup,n_l2_time_integral,late_log_slope,settling_time,label,exit_code,distance_n,distance_c\n",
            self.axis
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for (k, p) in self.points.iter().enumerate() {
            let label = p
                .label
                .and_then(|l| serde_json::to_value(l).ok().and_then(|v| v.as_str().map(String::from)))
                .unwrap_or_default();
            let _ = writeln!(
                csv,
                "{:e},{:e},{:e},{:e},{},{},{},{},{},{}",
                p.value,
                p.final_mass,
                p.late_n_linf_sup,
                p.n_l2_time_integral,
                opt(p.late_log_slope),
                opt(p.settling_time),
                label,
                p.exit_code,
                opt(self.distances_n.get(k).copied()),
                opt(self.distances_c.get(k).copied()),
            );
        }
        std::fs::write(dir.join("sweep.csv"), csv)?;
        Ok(())
    }
}

struct PointRun {
    summary: PointSummary,
    samples: Vec<(f64, ScalarField, ScalarField)>,
}

fn run_point(cfg: &RunConfig, value: f64, keep_samples: bool) -> Result<PointRun> {
    let bases = Bases::new(cfg.domain, cfg.diagnostics.dense_stokes)?;
    let mut samples = Vec::new();
    let sim = simulate(cfg, &bases, |state, _| {
        if keep_samples {
            samples.push((state.time, state.n.clone(), state.c.clone()));
        }
    })?;
    let summary = summarize(cfg, &sim)?;
    let late = late_window(&sim.records, SWEEP_LATE_FRACTION);
    let t_end = sim.records.last().map_or(0.0, |r| r.time);
    Ok(PointRun {
        summary: PointSummary {
            value,
            final_mass: summary.final_mass,
            late_n_linf_sup: late.iter().map(|r| r.n_linf).fold(0.0, f64::max),
            n_l2_time_integral: time_integral(&sim.records, |r| r.n_l2_sq),
            late_log_slope: late_log_slope(&sim.records, SWEEP_LATE_FRACTION),
            settling_time: summary.settling_time,
            long_enough: summary.settling_time.map(|s| t_end >= 4.0 * s),
            label: None,
            energy: summary.energy,
            verdicts: summary.verdicts,
            exit_code: summary.exit_code,
        },
        samples,
    })
}

fn strictly_monotone(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0]) || values.windows(2).all(|w| w[1] < w[0])
}

/// Runs `base` for every `eps` (strictly decreasing, at least three) and
/// reports the Cauchy profile of consecutive solutions on matched samples.
pub fn run_eps_refinement(base: &RunConfig, eps_list: &[f64]) -> Result<SweepResult> {
    if eps_list.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "epsilon refinement needs at least 3 values, got {}",
            eps_list.len()
        )));
    }
    if !eps_list.windows(2).all(|w| w[1] < w[0]) || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput(
            "epsilon values must be positive and strictly decreasing".into(),
        ));
    }
    base.validate()?;
    let runs: Vec<PointRun> = eps_list
        .par_iter()
        .map(|&eps| {
            let mut cfg = base.clone();
            cfg.params.epsilon = eps;
            cfg.output_dir = None;
            run_point(&cfg, eps, true)
        })
        .collect::<Result<_>>()?;

    let mut distances_n = Vec::new();
    let mut distances_c = Vec::new();
    for pair in runs.windows(2) {
        let (a, b) = (&pair[0].samples, &pair[1].samples);
        if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.0 != y.0) {
            return Err(Error::Solver(
                "refinement runs ended at different times; cannot match samples".into(),
            ));
        }
        let mut l1 = Vec::with_capacity(a.len());
        let mut h1 = Vec::with_capacity(a.len());
        for ((_, na, ca), (_, nb, cb)) in a.iter().zip(b) {
            let area = na.domain().cell_area();
            l1.push(area * na.values().iter().zip(nb.values()).map(|(x, y)| (x - y).abs()).sum::<f64>());
            let dc = ca.lin_comb(1.0, cb, -1.0);
            let l2: f64 = area * dc.values().iter().map(|x| x * x).sum::<f64>();
            h1.push(l2 + norm_vec_sq(&gradient(&dc)));
        }
        let trap = |v: &[f64]| -> f64 {
            a.windows(2)
                .zip(v.windows(2))
                .map(|(t, y)| 0.5 * (t[1].0 - t[0].0) * (y[0] + y[1]))
                .sum()
        };
        distances_n.push(trap(&l1));
        distances_c.push(trap(&h1).sqrt());
    }
    Ok(SweepResult {
        schema: 1,
        axis: "epsilon".into(),
        values: eps_list.to_vec(),
        points: runs.into_iter().map(|r| r.summary).collect(),
        distances_n,
        distances_c,
        gate: None,
    })
}

/// Runs `base` for every `mu` and labels each point against the threshold
/// implied by `gn`. Gated points run the energy check when the base config
/// has the dense Stokes basis.
pub fn run_mu_sweep(base: &RunConfig, mu_list: &[f64], gn: &GnEstimate) -> Result<SweepResult> {
    if mu_list.is_empty() || !strictly_monotone(mu_list) || mu_list.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidInput(
            "mu values must be positive and strictly monotone".into(),
        ));
    }
    if (gn.gamma - base.params.gamma).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "GN estimate was made for gamma = {}, sweep uses {}",
            gn.gamma, base.params.gamma
        )));
    }
    base.validate()?;
    let r_plus = base.params.r.max(0.0);
    let gate = 2.0 * gn.mu0 * r_plus;
    let lo = mu_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mu_list.iter().cloned().fold(0.0, f64::max);
    if !(lo < gate && hi >= gate) {
        log::warn!("mu list [{lo}, {hi}] does not straddle the gate {gate}");
    }
    let points: Vec<PointSummary> = mu_list
        .par_iter()
        .map(|&mu| {
            let label = mu_label(mu, gn.mu0, r_plus);
            let mut cfg = base.clone();
            cfg.params.mu = mu;
            cfg.output_dir = None;
            let gated = label == MuLabel::Gated && cfg.diagnostics.dense_stokes;
            cfg.diagnostics.energy_check = gated;
            cfg.diagnostics.c_star = gated.then_some(gn.c_star_lower);
            let mut run = run_point(&cfg, mu, false)?;
            run.summary.label = Some(label);
            Ok(run.summary)
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        schema: 1,
        axis: "mu".into(),
        values: mu_list.to_vec(),
        points,
        distances_n: Vec::new(),
        distances_c: Vec::new(),
        gate: Some(gate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tests::small_config;
    use crate::oracles::mu0_from;

    #[test]
    fn labels_follow_thresholds() {
        assert_eq!(mu_label(1.0, 2.0, 1.0), MuLabel::Subcritical);
        assert_eq!(mu_label(2.0, 2.0, 1.0), MuLabel::Ungated);
        assert_eq!(mu_label(3.0, 2.0, 1.0), MuLabel::Ungated);
        assert_eq!(mu_label(4.0, 2.0, 1.0), MuLabel::Gated);
        assert_eq!(mu_label(1e6, 2.0, 1.0), MuLabel::Gated);
    }

    #[test]
    fn eps_list_validation() {
        let cfg = small_config("gaussian-bump");
        assert!(run_eps_refinement(&cfg, &[0.1, 0.1, 0.1]).is_err());
        assert!(run_eps_refinement(&cfg, &[0.1, 0.05]).is_err());
        assert!(run_eps_refinement(&cfg, &[0.1, 0.2, 0.05]).is_err());
    }

    #[test]
    fn refinement_profile_is_finite() {
        let cfg = small_config("gaussian-bump");
        let res = run_eps_refinement(&cfg, &[0.2, 0.1, 0.05]).unwrap();
        assert_eq!(res.values, vec![0.2, 0.1, 0.05]);
        assert_eq!(res.distances_n.len(), 2);
        assert!(res.distances_n.iter().chain(&res.distances_c).all(|d| d.is_finite() && *d > 0.0));
    }

    fn gn_for(gamma: f64, c: f64) -> GnEstimate {
        let d = crate::mesh::DomainSpec::unit_square(8).unwrap();
        GnEstimate {
            c_star_lower: c,
            maximizer: ScalarField::constant(d, 1.0),
            iterations: 0,
            mu0: mu0_from(c, 1.0, gamma),
            gamma,
            warning: false,
        }
    }

    #[test]
    fn mu_sweep_preserves_order_and_labels() {
        let cfg = small_config("gaussian-bump");
        let gn = gn_for(1.5, 1.0);
        let mus = [1e6, 10.0, 1.0];
        let res = run_mu_sweep(&cfg, &mus, &gn).unwrap();
        assert_eq!(res.values, mus.to_vec());
        let got: Vec<f64> = res.points.iter().map(|p| p.value).collect();
        assert_eq!(got, mus.to_vec());
        assert_eq!(res.points[0].label, Some(MuLabel::Gated));
        assert_eq!(res.points[2].label, Some(MuLabel::Subcritical));
        assert!(res.points[0].energy.is_some());
        assert!(res.points[2].energy.is_none());
        assert!(run_mu_sweep(&cfg, &[1.0, 1.0], &gn).is_err());
        assert!(run_mu_sweep(&cfg, &[1.0, 2.0], &gn_for(2.0, 1.0)).is_err());
    }

    #[test]
    fn huge_mu_collapses_density() {
        let mut cfg = small_config("gaussian-bump");
        cfg.run.t_end = 0.2;
        let res = run_mu_sweep(&cfg, &[1e6], &gn_for(1.5, 1.0)).unwrap();
        let p = &res.points[0];
        assert!(p.late_log_slope.unwrap() <= 0.0);
        assert!(p.final_mass < 1e-3);
    }
}
