//! Scenario orchestration: single runs with all enabled checkers, parameter
//! sweeps, manufactured-solution convergence and the on-disk bundles.

pub mod bundle;
pub mod config;
pub mod mms;
pub mod sweep;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    check_energy_dissipation, check_mass_inequality, compute_record, cross_check, holder_check,
    log_supersolution_residual, read_records_csv, scalar_test_bank, vector_test_bank,
    weak_residual_c, weak_residual_u, write_records_csv, Bases, DiagnosticsRecord, EnergyStatus,
    EnergyVerdict, LogResidual, Trajectory, CROSS_CHECK_TOL,
};
use crate::error::{Error, Result};
use crate::initial::make_initial_data;
use crate::oracles::{gn_estimate, logistic_limit, logistic_ode_solve};
use crate::params::Params;
use crate::stepper::{SimState, StepReport, Stepper, DIV_TOL};

pub use bundle::{read_checkpoint, records_svg, write_checkpoint};
pub use config::{DiagnosticsFlags, GnSettings, ParamsSpec, RunConfig, RunSection};
pub use mms::{run_mms_convergence, MmsCase, MmsReport};
pub use sweep::{run_eps_refinement, run_mu_sweep, MuLabel, PointSummary, SweepResult};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_NAN: i32 = 3;

/// Clip-free steps must close the mass budget to this fraction of the mass.
pub const MASS_BUDGET_TOL: f64 = 1e-10;
/// Relative slack on the comparison bound `integral n <= y(t)`.
pub const COMPARISON_SLACK: f64 = 1e-6;
/// Total clip mass allowed as a fraction of the initial mass.
pub const CLIP_MASS_TOL: f64 = 1e-6;
/// The late-time mass may exceed the logistic limit by this fraction.
pub const MASS_LIMIT_SLACK: f64 = 0.10;
/// Fraction of the run (at its end) used for late-window statistics.
pub const LATE_FRACTION: f64 = 0.2;

/// Exit code for an error raised before or instead of a verdict.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } => EXIT_NAN,
        Error::Config(_)
        | Error::InvalidParams(_)
        | Error::InvalidDomain(_)
        | Error::UnknownPreset(_)
        | Error::StokesTooLarge { .. }
        | Error::Parse(_)
        | Error::Io(_)
        | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_VIOLATION,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    /// A failure is an invariant violation (exit 2).
    Hard,
    /// Reported only.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub severity: Severity,
    pub status: Status,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, severity: Severity, pass: bool, detail: String) -> Self {
        Verdict {
            name: name.to_string(),
            severity,
            status: if pass { Status::Pass } else { Status::Fail },
            detail,
        }
    }

    fn skipped(name: &str, severity: Severity, why: &str) -> Self {
        Verdict {
            name: name.to_string(),
            severity,
            status: Status::Skipped,
            detail: why.to_string(),
        }
    }

    pub fn is_hard_failure(&self) -> bool {
        self.severity == Severity::Hard && self.status == Status::Fail
    }
}

/// Why stepping stopped early.
#[derive(Debug, Clone)]
pub struct Failure {
    pub message: String,
    pub non_finite: bool,
    /// Last state that passed validation.
    pub state: SimState,
}

/// Raw output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Simulation {
    pub records: Vec<DiagnosticsRecord>,
    pub steps: Vec<StepReport>,
    /// Largest quadrature/spectral disagreement over all records.
    pub cross_check_max: f64,
    /// Smallest cell value of `n` and `c` over all records.
    pub min_n: f64,
    pub min_c: f64,
    pub trajectory: Option<Trajectory>,
    pub final_state: SimState,
    pub failure: Option<Failure>,
}

/// Step size that lands exactly on `target` using near-equal steps no larger
/// than `stable`.
fn landing_dt(remaining: f64, stable: f64) -> (f64, bool) {
    if remaining <= stable * (1.0 + 1e-12) {
        return (remaining, true);
    }
    let k = (remaining / stable - 1e-6).ceil().max(1.0);
    let dt = remaining / k;
    if dt > stable {
        (stable, false)
    } else {
        (dt, k == 1.0)
    }
}

/// Steps `cfg` to `t_end`, recording diagnostics at [`RunConfig::record_times`].
/// `on_record` sees every recorded state. Stepping errors end the run and are
/// returned in [`Simulation::failure`]; setup errors are returned directly.
pub fn simulate(
    cfg: &RunConfig,
    bases: &Bases,
    mut on_record: impl FnMut(&SimState, &DiagnosticsRecord),
) -> Result<Simulation> {
    cfg.validate()?;
    let params = cfg.build_params()?;
    let stepper = Stepper::new(params.clone(), cfg.run.dt_max)?;
    let (n, c, u) = make_initial_data(cfg.domain, &cfg.initial)?;
    let mut state = SimState::new(n, c, u)?;
    let lp = &cfg.run.lp;

    let mut sim = Simulation {
        records: Vec::new(),
        steps: Vec::new(),
        cross_check_max: 0.0,
        min_n: f64::INFINITY,
        min_c: f64::INFINITY,
        trajectory: cfg.diagnostics.weak_residuals.then(Trajectory::new),
        final_state: state.clone(),
        failure: None,
    };
    let mut record = |sim: &mut Simulation, state: &SimState| -> Result<()> {
        let rec = compute_record(state, &params, bases, lp)?;
        sim.cross_check_max = sim.cross_check_max.max(cross_check(state, &rec, bases)?);
        sim.min_n = sim.min_n.min(state.n.min());
        sim.min_c = sim.min_c.min(state.c.min());
        on_record(state, &rec);
        sim.records.push(rec);
        Ok(())
    };
    record(&mut sim, &state)?;
    if let Some(t) = sim.trajectory.as_mut() {
        t.push(state.clone());
    }

    let every = cfg.run.trajectory_every;
    'outer: for &target in &cfg.record_times()[1..] {
        while state.time < target {
            let outcome = stepper.stable_dt(&state).and_then(|stable| {
                let (dt, lands) = landing_dt(target - state.time, stable);
                stepper.step(&state, Some(dt)).map(|r| (r, lands))
            });
            match outcome {
                Ok(((mut next, report), lands)) => {
                    if lands {
                        next.time = target;
                    }
                    sim.steps.push(report);
                    state = next;
                    if sim.steps.len().is_multiple_of(every) {
                        if let Some(t) = sim.trajectory.as_mut() {
                            t.push(state.clone());
                        }
                    }
                }
                Err(e) => {
                    log::error!("stepping stopped at t = {}: {e}", state.time);
                    sim.failure = Some(Failure {
                        message: e.to_string(),
                        non_finite: matches!(e, Error::NonFinite { .. }),
                        state: state.clone(),
                    });
                    break 'outer;
                }
            }
        }
        record(&mut sim, &state)?;
    }
    if let Some(t) = sim.trajectory.as_mut() {
        if t.states.last().map(|s| s.time) != Some(state.time) {
            t.push(state.clone());
        }
    }
    sim.final_state = state;
    Ok(sim)
}

/// First record time from which three consecutive masses lie within 10% of
/// `limit`.
pub fn settling_time(records: &[DiagnosticsRecord], limit: f64) -> Option<f64> {
    let near = |r: &DiagnosticsRecord| (r.mass - limit).abs() <= 0.1 * limit;
    records
        .windows(3)
        .find(|w| w.iter().all(near))
        .map(|w| w[0].time)
}

/// Records in the last `fraction` of the recorded time span.
pub fn late_window(records: &[DiagnosticsRecord], fraction: f64) -> &[DiagnosticsRecord] {
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return records;
    };
    let cut = last.time - fraction * (last.time - first.time);
    let start = records.iter().position(|r| r.time >= cut).unwrap_or(records.len());
    &records[start..]
}

/// Least-squares slope of `y` against `t`.
pub fn fitted_slope(t: &[f64], y: &[f64]) -> Option<f64> {
    let n = t.len() as f64;
    if t.len() < 2 || t.len() != y.len() {
        return None;
    }
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Slope of `ln n_linf` over the last `fraction` of the run; `None` when the
/// window is too short or `n` vanishes.
pub fn late_log_slope(records: &[DiagnosticsRecord], fraction: f64) -> Option<f64> {
    let w = late_window(records, fraction);
    if w.iter().any(|r| r.n_linf <= 0.0) {
        return None;
    }
    let t: Vec<f64> = w.iter().map(|r| r.time).collect();
    let y: Vec<f64> = w.iter().map(|r| r.n_linf.ln()).collect();
    fitted_slope(&t, &y)
}

/// Trapezoid integral of a record column over time.
pub fn time_integral(records: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
    records
        .windows(2)
        .map(|w| 0.5 * (w[1].time - w[0].time) * (f(&w[0]) + f(&w[1])))
        .sum()
}

/// Verdicts recomputable from the stored record and step streams.
pub fn evaluate(
    params: &Params,
    records: &[DiagnosticsRecord],
    steps: &[StepReport],
    energy: Option<&EnergyVerdict>,
) -> Result<Vec<Verdict>> {
    use Severity::{Hard, Soft};
    let mut out = Vec::new();
    let area = params.potential.domain().area();
    let m0 = records.first().map_or(0.0, |r| r.mass);

    if steps.is_empty() {
        out.push(Verdict::skipped("mass_inequality", Hard, "no steps"));
    } else {
        let v = check_mass_inequality(steps)?;
        let detail = format!("max excess {:e} (tolerance {:e})", v.max_excess, v.tolerance);
        out.push(Verdict::new("mass_inequality", Hard, v.pass, detail));
    }

    let mut worst_budget = 0.0f64;
    let mut budget_fail = None;
    for (k, s) in steps.iter().enumerate().filter(|(_, s)| s.clip_count == 0) {
        let gap = (s.mass_residual() - s.clip_mass).abs();
        let rel = gap / s.mass_before.max(f64::MIN_POSITIVE);
        worst_budget = worst_budget.max(if gap == 0.0 { 0.0 } else { rel });
        if gap > MASS_BUDGET_TOL * s.mass_before && budget_fail.is_none() {
            budget_fail = Some(k);
        }
    }
    out.push(Verdict::new(
        "mass_budget",
        Hard,
        budget_fail.is_none(),
        format!("worst relative gap {worst_budget:e}, first failing step {budget_fail:?}"),
    ));

    let clip_total: f64 = steps.iter().map(|s| s.clip_mass).sum();
    out.push(Verdict::new(
        "clip_mass",
        Soft,
        clip_total <= CLIP_MASS_TOL * m0,
        format!("total clip mass {clip_total:e} vs initial mass {m0:e}"),
    ));

    let max_div = steps.iter().map(|s| s.max_divergence).fold(0.0, f64::max);
    out.push(Verdict::new(
        "divergence",
        Hard,
        max_div <= DIV_TOL,
        format!("max |div u| {max_div:e}"),
    ));

    let worst_audit = steps
        .iter()
        .map(|s| {
            let a = &s.fluid_energy;
            let scale = a.kinetic_before.max(a.kinetic_after).max(f64::MIN_POSITIVE);
            a.slack() / scale
        })
        .fold(f64::INFINITY, f64::min);
    out.push(Verdict::new(
        "fluid_energy",
        Soft,
        steps.is_empty() || worst_audit >= -1e-9,
        format!("min relative energy slack {worst_audit:e}"),
    ));

    if records.is_empty() {
        out.push(Verdict::skipped("comparison_ode", Hard, "no records"));
    } else {
        let times: Vec<f64> = records.iter().map(|r| r.time).collect();
        let y = logistic_ode_solve(params.r, params.mu, params.gamma, area, 2.0 * m0, &times)?;
        let mut clip_cum = 0.0;
        let mut steps_iter = steps.iter().peekable();
        let mut worst = f64::NEG_INFINITY;
        let mut fail = None;
        for (k, (r, yk)) in records.iter().zip(&y).enumerate() {
            while let Some(s) = steps_iter.next_if(|s| s.time_before < r.time) {
                clip_cum += s.clip_mass;
            }
            let bound = yk * (1.0 + COMPARISON_SLACK) + clip_cum + 1e-12 * m0;
            worst = worst.max(r.mass - bound);
            if r.mass > bound && fail.is_none() {
                fail = Some(k);
            }
        }
        out.push(Verdict::new(
            "comparison_ode",
            Hard,
            fail.is_none(),
            format!("max excess over comparison solution {worst:e}, first failing record {fail:?}"),
        ));
    }

    let holder: Vec<_> = records.iter().filter_map(|r| holder_check(r, params.gamma)).collect();
    if holder.is_empty() {
        out.push(Verdict::skipped("holder", Hard, "gamma >= 2"));
    } else {
        let bad = holder.iter().filter(|h| !h.holds()).count();
        out.push(Verdict::new(
            "holder",
            Hard,
            bad == 0,
            format!("{bad} of {} records violate the interpolation bound", holder.len()),
        ));
    }

    let limit = logistic_limit(params.r, params.mu, params.gamma, area);
    let late = late_window(records, LATE_FRACTION);
    let sup = late.iter().map(|r| r.mass).fold(f64::NEG_INFINITY, f64::max);
    if late.is_empty() {
        out.push(Verdict::skipped("mass_limit", Soft, "no records"));
    } else {
        out.push(Verdict::new(
            "mass_limit",
            Soft,
            sup <= limit * (1.0 + MASS_LIMIT_SLACK) + 1e-12,
            format!("late sup of integral n {sup:e} vs limit {limit:e}"),
        ));
    }

    match energy {
        None => out.push(Verdict::skipped("energy_dissipation", Soft, "not enabled")),
        Some(e) => {
            let detail = format!(
                "{:?}: {} of {} intervals violate (c3 {:e}, c4 {:e}, gate {:e})",
                e.status, e.violations, e.intervals, e.c3, e.c4, e.mass_gate
            );
            out.push(match e.status {
                EnergyStatus::PreconditionFailed => Verdict::skipped("energy_dissipation", Soft, &detail),
                s => Verdict::new("energy_dissipation", Soft, s == EnergyStatus::Pass, detail),
            });
        }
    }
    Ok(out)
}

/// Weak-form residuals of every bank member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResiduals {
    pub c: Vec<f64>,
    pub u: Vec<f64>,
    pub log: Vec<LogResidual>,
}

pub fn weak_residuals(traj: &Trajectory, params: &Params) -> Result<WeakResiduals> {
    let (first, last) = match (traj.states.first(), traj.states.last()) {
        (Some(a), Some(b)) if b.time > a.time => (a, b),
        _ => return Err(Error::InvalidInput("trajectory spans no time".into())),
    };
    let d = *first.domain();
    let sbank = scalar_test_bank(d, first.time, last.time)?;
    let vbank = vector_test_bank(d, first.time, last.time)?;
    Ok(WeakResiduals {
        c: sbank
            .iter()
            .map(|t| weak_residual_c(traj, params, t))
            .collect::<Result<_>>()?,
        u: vbank
            .iter()
            .map(|t| weak_residual_u(traj, params, t))
            .collect::<Result<_>>()?,
        log: sbank
            .iter()
            .map(|t| log_supersolution_residual(traj, params, t))
            .collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub config: RunConfig,
    pub steps: usize,
    pub final_time: f64,
    pub final_mass: f64,
    pub logistic_limit: f64,
    pub settling_time: Option<f64>,
    pub cross_check_max: f64,
    pub c_star: Option<f64>,
    pub energy: Option<EnergyVerdict>,
    pub weak_residuals: Option<WeakResiduals>,
    pub verdicts: Vec<Verdict>,
    pub failure: Option<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `config.output_dir`; no files are written when both are unset.
    pub out_dir: Option<PathBuf>,
    pub svg: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<DiagnosticsRecord>,
    pub steps: Vec<StepReport>,
    pub final_state: SimState,
    pub bundle: Option<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.summary.verdicts.iter().find(|v| v.name == name)
    }
}

fn exit_code(verdicts: &[Verdict], failure: Option<&Failure>) -> i32 {
    match failure {
        Some(f) if f.non_finite => EXIT_NAN,
        Some(_) => EXIT_VIOLATION,
        None if verdicts.iter().any(Verdict::is_hard_failure) => EXIT_VIOLATION,
        None => EXIT_PASS,
    }
}

/// Runs `cfg` to completion with every enabled checker and writes the bundle
/// (`records.csv`, `steps.csv`, `summary.json`, `final_state.json`, optional
/// `records.svg`, and `state_dump.json` after a stepping failure).
pub fn run_single(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let bases = Bases::new(cfg.domain, cfg.diagnostics.dense_stokes)?;
    let sim = simulate(cfg, &bases, |_, _| {})?;
    let summary = summarize(cfg, &sim)?;
    let bundle = opts.out_dir.clone().or_else(|| cfg.output_dir.clone());
    if let Some(dir) = &bundle {
        write_bundle(dir, &summary, &sim, opts.svg)?;
    }
    Ok(RunOutcome {
        summary,
        records: sim.records,
        steps: sim.steps,
        final_state: sim.final_state,
        bundle,
    })
}

/// Runs the enabled checkers on a finished simulation of `cfg`.
pub fn summarize(cfg: &RunConfig, sim: &Simulation) -> Result<RunSummary> {
    let params = cfg.build_params()?;
    let flags = &cfg.diagnostics;
    let c_star = if flags.energy_check {
        Some(match flags.c_star {
            Some(c) => c,
            None => {
                let g = &flags.gn;
                gn_estimate(cfg.domain, g.probes, g.iters, g.seed, params.gamma)?.c_star_lower
            }
        })
    } else {
        None
    };
    let energy = match (c_star, &sim.failure) {
        (Some(c), None) => Some(check_energy_dissipation(&sim.records, &params, c)?),
        _ => None,
    };
    let weak = match (&sim.trajectory, &sim.failure) {
        (Some(t), None) if t.len() >= 2 => Some(weak_residuals(t, &params)?),
        _ => None,
    };

    let mut verdicts = evaluate(&params, &sim.records, &sim.steps, energy.as_ref())?;
    verdicts.push(Verdict::new(
        "spectral_cross_check",
        Severity::Hard,
        sim.cross_check_max <= CROSS_CHECK_TOL,
        format!("max relative gap {:e}", sim.cross_check_max),
    ));
    verdicts.push(Verdict::new(
        "positivity",
        Severity::Hard,
        sim.min_n >= 0.0 && sim.min_c >= 0.0,
        format!("min n {:e}, min c {:e}", sim.min_n, sim.min_c),
    ));
    if let Some(f) = &sim.failure {
        verdicts.push(Verdict::new("stepping", Severity::Hard, false, f.message.clone()));
    }
    for v in verdicts.iter().filter(|v| v.status == Status::Fail) {
        log::warn!("{} {:?} failed: {}", v.name, v.severity, v.detail);
    }

    let limit = logistic_limit(params.r, params.mu, params.gamma, cfg.domain.area());
    Ok(RunSummary {
        schema: 1,
        config: cfg.clone(),
        steps: sim.steps.len(),
        final_time: sim.final_state.time,
        final_mass: sim.records.last().map_or(0.0, |r| r.mass),
        logistic_limit: limit,
        settling_time: settling_time(&sim.records, limit),
        cross_check_max: sim.cross_check_max,
        c_star,
        energy,
        weak_residuals: weak,
        exit_code: exit_code(&verdicts, sim.failure.as_ref()),
        verdicts,
        failure: sim.failure.as_ref().map(|f| f.message.clone()),
    })
}

fn write_bundle(dir: &Path, summary: &RunSummary, sim: &Simulation, svg: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records_csv(&sim.records, BufWriter::new(File::create(dir.join("records.csv"))?))?;
    bundle::write_steps_csv(&sim.steps, BufWriter::new(File::create(dir.join("steps.csv"))?))?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    write_checkpoint(&dir.join("final_state.json"), &sim.final_state)?;
    if let Some(f) = &sim.failure {
        write_checkpoint(&dir.join("state_dump.json"), &f.state)?;
    }
    if svg {
        std::fs::write(dir.join("records.svg"), records_svg(&sim.records))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub verdicts: Vec<Verdict>,
    pub exit_code: i32,
}

/// Re-runs the stream verdicts of a stored bundle.
pub fn check_bundle(dir: &Path) -> Result<CheckReport> {
    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json"))?)?;
    if summary.schema != 1 {
        return Err(Error::Parse(format!("unsupported summary schema {}", summary.schema)));
    }
    let params = summary.config.build_params()?;
    let records = read_records_csv(BufReader::new(File::open(dir.join("records.csv"))?))?;
    let steps = bundle::read_steps_csv(BufReader::new(File::open(dir.join("steps.csv"))?))?;
    let energy = match summary.c_star {
        Some(c) if summary.failure.is_none() => Some(check_energy_dissipation(&records, &params, c)?),
        _ => None,
    };
    let verdicts = evaluate(&params, &records, &steps, energy.as_ref())?;
    let exit = if summary.exit_code == EXIT_NAN {
        EXIT_NAN
    } else if summary.failure.is_some() || verdicts.iter().any(Verdict::is_hard_failure) {
        EXIT_VIOLATION
    } else {
        EXIT_PASS
    };
    Ok(CheckReport {
        verdicts,
        exit_code: exit,
    })
}
