//! On-disk formats: per-step CSV, binary-exact state checkpoints and a
//! minimal SVG time-series plot.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::mesh::{DomainSpec, ScalarField, VectorField};
use crate::stepper::{FluidEnergyAudit, SimState, StepReport};

const STEP_COLUMNS: [&str; 18] = [
    "step",
    "time_before",
    "dt",
    "mass_before",
    "mass_after",
    "reaction_integral",
    "f_integral",
    "clip_count",
    "clip_mass",
    "c_clip_count",
    "solver_iterations",
    "max_divergence",
    "kinetic_before",
    "kinetic_after",
    "dissipation",
    "forcing_work",
    "convection_work",
    "splitting_term",
];

pub fn write_steps_csv<W: Write>(steps: &[StepReport], mut out: W) -> Result<()> {
    writeln!(out, "{}", STEP_COLUMNS.join(","))?;
    for (k, s) in steps.iter().enumerate() {
        let a = &s.fluid_energy;
        writeln!(
            out,
            "{k},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            s.time_before,
            s.dt_used,
            s.mass_before,
            s.mass_after,
            s.reaction_integral,
            s.f_integral,
            s.clip_count,
            s.clip_mass,
            s.c_clip_count,
            s.solver_iterations,
            s.max_divergence,
            a.kinetic_before,
            a.kinetic_after,
            a.dissipation,
            a.forcing_work,
            a.convection_work,
            a.splitting_term,
        )?;
    }
    Ok(())
}

pub fn read_steps_csv<R: BufRead>(input: R) -> Result<Vec<StepReport>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty steps file".into()))??;
    if header.trim() != STEP_COLUMNS.join(",") {
        return Err(Error::Parse("steps header does not match the column layout".into()));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != STEP_COLUMNS.len() {
            return Err(Error::Parse(format!("step row {} has {} cells", k + 1, cells.len())));
        }
        let bad = |i: usize| Error::Parse(format!("step row {} column {}", k + 1, STEP_COLUMNS[i]));
        let f = |i: usize| cells[i].parse::<f64>().map_err(|_| bad(i));
        let n = |i: usize| cells[i].parse::<usize>().map_err(|_| bad(i));
        out.push(StepReport {
            time_before: f(1)?,
            dt_used: f(2)?,
            mass_before: f(3)?,
            mass_after: f(4)?,
            reaction_integral: f(5)?,
            f_integral: f(6)?,
            clip_count: n(7)?,
            clip_mass: f(8)?,
            c_clip_count: n(9)?,
            solver_iterations: n(10)?,
            max_divergence: f(11)?,
            fluid_energy: FluidEnergyAudit {
                kinetic_before: f(12)?,
                kinetic_after: f(13)?,
                dissipation: f(14)?,
                forcing_work: f(15)?,
                convection_work: f(16)?,
                splitting_term: f(17)?,
            },
        });
    }
    Ok(out)
}

/// Little-endian f64 payload in base64.
fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, len: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Parse(format!("checkpoint field {what}: {e}")))?;
    if bytes.len() != 8 * len {
        return Err(Error::Parse(format!(
            "checkpoint field {what} holds {} bytes, expected {}",
            bytes.len(),
            8 * len
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    schema: u32,
    time: f64,
    domain: DomainSpec,
    n: String,
    c: String,
    u_x: String,
    u_y: String,
    pressure: String,
}

/// Serializes `state` bit-exactly.
pub fn checkpoint_json(state: &SimState) -> Result<String> {
    let cp = Checkpoint {
        schema: 1,
        time: state.time,
        domain: *state.domain(),
        n: encode(state.n.values()),
        c: encode(state.c.values()),
        u_x: encode(state.u.u()),
        u_y: encode(state.u.v()),
        pressure: encode(state.pressure.values()),
    };
    Ok(serde_json::to_string_pretty(&cp)?)
}

/// Inverse of [`checkpoint_json`]; the state is re-validated.
pub fn checkpoint_from_json(text: &str) -> Result<SimState> {
    let cp: Checkpoint = serde_json::from_str(text)?;
    if cp.schema != 1 {
        return Err(Error::Parse(format!("unsupported checkpoint schema {}", cp.schema)));
    }
    let d = cp.domain;
    let cells = d.num_cells();
    let n = ScalarField::new(d, decode(&cp.n, cells, "n")?)?;
    let c = ScalarField::new(d, decode(&cp.c, cells, "c")?)?;
    let u = VectorField::new(
        d,
        decode(&cp.u_x, d.num_u_faces(), "u_x")?,
        decode(&cp.u_y, d.num_v_faces(), "u_y")?,
    )?;
    let pressure = ScalarField::new(d, decode(&cp.pressure, cells, "pressure")?)?;
    let mut state = SimState::new(n, c, u)?;
    state.time = cp.time;
    state.pressure = pressure;
    Ok(state)
}

pub fn write_checkpoint(path: &Path, state: &SimState) -> Result<()> {
    std::fs::write(path, checkpoint_json(state)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<SimState> {
    checkpoint_from_json(&std::fs::read_to_string(path)?)
}

/// Columns drawn by [`records_svg`], one panel each.
pub const PLOT_COLUMNS: [&str; 4] = ["mass", "n_linf", "quasi_energy", "u_l2"];

fn column(r: &DiagnosticsRecord, name: &str) -> f64 {
    match name {
        "mass" => r.mass,
        "n_linf" => r.n_linf,
        "quasi_energy" => r.quasi_energy,
        "u_l2" => r.u_l2,
        _ => f64::NAN,
    }
}

/// Stacked line plots of selected record columns against time.
pub fn records_svg(records: &[DiagnosticsRecord]) -> String {
    const W: f64 = 640.0;
    const PANEL: f64 = 150.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 20.0;
    let height = TOP + PANEL * PLOT_COLUMNS.len() as f64 + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let t0 = records.first().map_or(0.0, |r| r.time);
    let t1 = records.last().map_or(1.0, |r| r.time).max(t0 + f64::MIN_POSITIVE);
    let plot_w = W - LEFT - RIGHT;
    for (k, name) in PLOT_COLUMNS.iter().enumerate() {
        let y0 = TOP + PANEL * k as f64;
        let h = PANEL - 30.0;
        let vals: Vec<f64> = records.iter().map(|r| column(r, name)).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() && hi.is_finite() {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        } else {
            (0.0, 1.0)
        };
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{y0}" width="{plot_w}" height="{h}" fill="none" stroke="gray"/>"#
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, LEFT + 5.0, y0 + 12.0);
        let _ = writeln!(s, r#"<text x="5" y="{}">{hi:.4e}</text>"#, y0 + 10.0);
        let _ = writeln!(s, r#"<text x="5" y="{}">{lo:.4e}</text>"#, y0 + h);
        let points: Vec<String> = records
            .iter()
            .zip(&vals)
            .filter(|(_, v)| v.is_finite())
            .map(|(r, v)| {
                let x = LEFT + plot_w * (r.time - t0) / (t1 - t0);
                let y = y0 + h * (1.0 - (v - lo) / (hi - lo));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
    }
    let base = TOP + PANEL * PLOT_COLUMNS.len() as f64;
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{}">t = {t0}</text>"#, base);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">t = {t1}</text>"#,
        W - RIGHT,
        base
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{make_initial_data, InitialSpec};

    fn sample_state() -> SimState {
        let d = DomainSpec::unit_square(6).unwrap();
        let mut spec = InitialSpec::named("random-positive");
        spec.seed = 3;
        spec.swirl = 0.7;
        let (n, c, u) = make_initial_data(d, &spec).unwrap();
        let mut s = SimState::new(n, c, u).unwrap();
        s.time = 0.123456789;
        s.pressure = s.n.map(|x| x.sin());
        s
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let s = sample_state();
        let back = checkpoint_from_json(&checkpoint_json(&s).unwrap()).unwrap();
        assert_eq!(back.time.to_bits(), s.time.to_bits());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.n.values()), bits(s.n.values()));
        assert_eq!(bits(back.c.values()), bits(s.c.values()));
        assert_eq!(bits(back.u.u()), bits(s.u.u()));
        assert_eq!(bits(back.u.v()), bits(s.u.v()));
        assert_eq!(bits(back.pressure.values()), bits(s.pressure.values()));
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let s = sample_state();
        let mut v: serde_json::Value = serde_json::from_str(&checkpoint_json(&s).unwrap()).unwrap();
        v["n"] = serde_json::Value::String(encode(&[1.0, 2.0]));
        assert!(checkpoint_from_json(&v.to_string()).is_err());
    }

    #[test]
    fn steps_round_trip() {
        let steps = vec![StepReport {
            time_before: 0.1,
            dt_used: 1.0 / 3.0,
            mass_before: 2.0,
            mass_after: 2.000000001,
            reaction_integral: -0.3,
            f_integral: 0.7,
            clip_count: 2,
            clip_mass: 1e-17,
            c_clip_count: 0,
            solver_iterations: 7,
            max_divergence: 3e-15,
            fluid_energy: FluidEnergyAudit {
                kinetic_before: 1.0,
                kinetic_after: 0.9,
                dissipation: 0.1,
                forcing_work: 0.01,
                convection_work: -1e-18,
                splitting_term: 1e-6,
            },
        }];
        let mut buf = Vec::new();
        write_steps_csv(&steps, &mut buf).unwrap();
        assert_eq!(read_steps_csv(buf.as_slice()).unwrap(), steps);
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = records_svg(&[]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
