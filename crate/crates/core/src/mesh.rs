//! Rectangular grids, cell-centered scalar fields, staggered (MAC) velocity
//! fields, midpoint quadrature and norms.
//!
//! Index conventions used throughout the crate:
//!
//! * scalar value at cell `(i, j)` lives at `j * nx + i`, cell center
//!   `((i + 1/2) hx, (j + 1/2) hy)`;
//! * x-normal face `(i, j)` (`i = 0..=nx`) lives at `j * (nx + 1) + i`, located
//!   at `(i hx, (j + 1/2) hy)`;
//! * y-normal face `(i, j)` (`j = 0..=ny`) lives at `j * nx + i`, located at
//!   `((i + 1/2) hx, j hy)`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[0, length_x] x [0, length_y]` split into
/// `cells_x * cells_y` uniform cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain", into = "RawDomain")]
pub struct DomainSpec {
    length_x: f64,
    length_y: f64,
    cells_x: usize,
    cells_y: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    length_x: f64,
    length_y: f64,
    cells_x: usize,
    cells_y: usize,
}

impl TryFrom<RawDomain> for DomainSpec {
    type Error = Error;

    fn try_from(raw: RawDomain) -> Result<Self> {
        DomainSpec::new(raw.length_x, raw.length_y, raw.cells_x, raw.cells_y)
    }
}

impl From<DomainSpec> for RawDomain {
    fn from(d: DomainSpec) -> Self {
        RawDomain {
            length_x: d.length_x,
            length_y: d.length_y,
            cells_x: d.cells_x,
            cells_y: d.cells_y,
        }
    }
}

impl DomainSpec {
    pub fn new(length_x: f64, length_y: f64, cells_x: usize, cells_y: usize) -> Result<Self> {
        if !(length_x.is_finite() && length_x > 0.0 && length_y.is_finite() && length_y > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "side lengths must be finite and positive, got {length_x} x {length_y}"
            )));
        }
        if cells_x == 0 || cells_y == 0 {
            return Err(Error::InvalidDomain(format!(
                "cell counts must be positive, got {cells_x} x {cells_y}"
            )));
        }
        let d = DomainSpec {
            length_x,
            length_y,
            cells_x,
            cells_y,
        };
        if !(d.hx().is_finite() && d.hx() > 0.0 && d.hy().is_finite() && d.hy() > 0.0) {
            return Err(Error::InvalidDomain("degenerate cell spacing".into()));
        }
        Ok(d)
    }

    /// Unit square with `n x n` cells.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(1.0, 1.0, n, n)
    }

    pub fn length_x(&self) -> f64 {
        self.length_x
    }

    pub fn length_y(&self) -> f64 {
        self.length_y
    }

    pub fn cells_x(&self) -> usize {
        self.cells_x
    }

    pub fn cells_y(&self) -> usize {
        self.cells_y
    }

    pub fn hx(&self) -> f64 {
        self.length_x / self.cells_x as f64
    }

    pub fn hy(&self) -> f64 {
        self.length_y / self.cells_y as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn area(&self) -> f64 {
        self.length_x * self.length_y
    }

    pub fn num_cells(&self) -> usize {
        self.cells_x * self.cells_y
    }

    pub fn num_u_faces(&self) -> usize {
        (self.cells_x + 1) * self.cells_y
    }

    pub fn num_v_faces(&self) -> usize {
        self.cells_x * (self.cells_y + 1)
    }

    /// Total face count of a staggered velocity field.
    pub fn velocity_unknowns(&self) -> usize {
        self.num_u_faces() + self.num_v_faces()
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    pub(crate) fn check_same(&self, other: &DomainSpec, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} on {}x{} vs {}x{} on {}x{}",
                self.cells_x,
                self.cells_y,
                self.length_x,
                self.length_y,
                other.cells_x,
                other.cells_y,
                other.length_x,
                other.length_y
            )))
        }
    }
}

/// Cell-centered grid function. Values are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScalarField")]
pub struct ScalarField {
    domain: DomainSpec,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawScalarField {
    domain: DomainSpec,
    values: Vec<f64>,
}

impl TryFrom<RawScalarField> for ScalarField {
    type Error = Error;

    fn try_from(raw: RawScalarField) -> Result<Self> {
        ScalarField::new(raw.domain, raw.values)
    }
}

impl ScalarField {
    pub fn new(domain: DomainSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.num_cells() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} cell values, got {}",
                domain.num_cells(),
                values.len()
            )));
        }
        let f = ScalarField { domain, values };
        f.ensure_finite("scalar")?;
        Ok(f)
    }

    pub fn zeros(domain: DomainSpec) -> Self {
        Self::constant(domain, 0.0)
    }

    pub fn constant(domain: DomainSpec, value: f64) -> Self {
        assert!(value.is_finite(), "constant field value must be finite");
        ScalarField {
            domain,
            values: vec![value; domain.num_cells()],
        }
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(domain: DomainSpec, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(domain.num_cells());
        for j in 0..domain.cells_y() {
            for i in 0..domain.cells_x() {
                let (x, y) = domain.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        Self::new(domain, values)
    }

    /// Construction for internal operators whose output is finite whenever
    /// the inputs are; callers at module boundaries re-check.
    pub(crate) fn from_raw(domain: DomainSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), domain.num_cells());
        ScalarField { domain, values }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; callers must keep the values finite (checked again by
    /// [`ScalarField::ensure_finite`] wherever a field crosses a module boundary).
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.domain.cells_x() + i]
    }

    pub fn ensure_finite(&self, name: &str) -> Result<()> {
        let nx = self.domain.cells_x();
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::NonFinite {
                field: name.to_string(),
                i: k % nx,
                j: k / nx,
            }),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::from_raw(self.domain, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        debug_assert_eq!(self.domain, other.domain);
        ScalarField::from_raw(
            self.domain,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// `a * self + b * other`
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> ScalarField {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn scale(&self, a: f64) -> ScalarField {
        self.map(|v| a * v)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        integrate(self) / self.domain.area()
    }

    /// Writes the field as flat CSV: a `# scalar cells_x cells_y hx hy` header
    /// followed by one line per grid row (`j`), values separated by commas.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = &self.domain;
        writeln!(
            out,
            "# scalar {} {} {:e} {:e}",
            d.cells_x(),
            d.cells_y(),
            d.hx(),
            d.hy()
        )?;
        let mut line = String::new();
        for row in self.values.chunks(d.cells_x()) {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                write!(line, "{v:e}").expect("writing to String cannot fail");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads the format written by [`ScalarField::write_csv`]. Spacings in the
    /// header fix the side lengths.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty field file".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "#" || parts[1] != "scalar" {
            return Err(Error::Parse(format!("bad field header `{header}`")));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
        };
        let nx: usize = parts[2]
            .parse()
            .map_err(|e| Error::Parse(format!("cells_x: {e}")))?;
        let ny: usize = parts[3]
            .parse()
            .map_err(|e| Error::Parse(format!("cells_y: {e}")))?;
        let domain = DomainSpec::new(num(parts[4])? * nx as f64, num(parts[5])? * ny as f64, nx, ny)?;
        let mut values = Vec::with_capacity(nx * ny);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split(',') {
                values.push(num(tok.trim())?);
            }
        }
        ScalarField::new(domain, values)
    }
}

/// Staggered velocity: `u` on x-normal faces, `v` on y-normal faces.
/// Boundary-normal face values are identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    domain: DomainSpec,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl VectorField {
    pub fn new(domain: DomainSpec, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != domain.num_u_faces() || v.len() != domain.num_v_faces() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} u-faces and {} v-faces, got {} and {}",
                domain.num_u_faces(),
                domain.num_v_faces(),
                u.len(),
                v.len()
            )));
        }
        let f = VectorField { domain, u, v };
        f.validate()?;
        Ok(f)
    }

    pub fn zeros(domain: DomainSpec) -> Self {
        VectorField {
            domain,
            u: vec![0.0; domain.num_u_faces()],
            v: vec![0.0; domain.num_v_faces()],
        }
    }

    /// Samples `(fu, fv)` at face centers; boundary-normal faces are forced to 0.
    pub fn from_fn(
        domain: DomainSpec,
        fu: impl Fn(f64, f64) -> f64,
        fv: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let (nx, ny) = (domain.cells_x(), domain.cells_y());
        let (hx, hy) = (domain.hx(), domain.hy());
        let mut u = vec![0.0; domain.num_u_faces()];
        for j in 0..ny {
            for i in 1..nx {
                u[j * (nx + 1) + i] = fu(i as f64 * hx, (j as f64 + 0.5) * hy);
            }
        }
        let mut v = vec![0.0; domain.num_v_faces()];
        for j in 1..ny {
            for i in 0..nx {
                v[j * nx + i] = fv((i as f64 + 0.5) * hx, j as f64 * hy);
            }
        }
        Self::new(domain, u, v)
    }

    /// Zeroes the boundary-normal faces of raw component arrays.
    pub(crate) fn from_raw(domain: DomainSpec, mut u: Vec<f64>, mut v: Vec<f64>) -> Self {
        debug_assert_eq!(u.len(), domain.num_u_faces());
        debug_assert_eq!(v.len(), domain.num_v_faces());
        zero_boundary(&domain, &mut u, &mut v);
        VectorField { domain, u, v }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn u_at(&self, i: usize, j: usize) -> f64 {
        self.u[j * (self.domain.cells_x() + 1) + i]
    }

    pub fn v_at(&self, i: usize, j: usize) -> f64 {
        self.v[j * self.domain.cells_x() + i]
    }

    /// Mutates both components, then restores the no-slip boundary.
    pub fn update(&mut self, f: impl FnOnce(&mut [f64], &mut [f64])) {
        f(&mut self.u, &mut self.v);
        zero_boundary(&self.domain, &mut self.u, &mut self.v);
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.u, self.v)
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny) = (self.domain.cells_x(), self.domain.cells_y());
        for j in 0..ny {
            for i in [0, nx] {
                let k = j * (nx + 1) + i;
                if self.u[k] != 0.0 {
                    return Err(Error::NoSlip {
                        component: "u",
                        index: k,
                        value: self.u[k],
                    });
                }
            }
        }
        for j in [0, ny] {
            for i in 0..nx {
                let k = j * nx + i;
                if self.v[k] != 0.0 {
                    return Err(Error::NoSlip {
                        component: "v",
                        index: k,
                        value: self.v[k],
                    });
                }
            }
        }
        self.ensure_finite("velocity")
    }

    pub fn ensure_finite(&self, name: &str) -> Result<()> {
        let nx = self.domain.cells_x();
        if let Some(k) = self.u.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                field: format!("{name}.u"),
                i: k % (nx + 1),
                j: k / (nx + 1),
            });
        }
        if let Some(k) = self.v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                field: format!("{name}.v"),
                i: k % nx,
                j: k / nx,
            });
        }
        Ok(())
    }

    pub fn lin_comb(&self, a: f64, other: &VectorField, b: f64) -> VectorField {
        debug_assert_eq!(self.domain, other.domain);
        let u = self.u.iter().zip(&other.u).map(|(x, y)| a * x + b * y).collect();
        let v = self.v.iter().zip(&other.v).map(|(x, y)| a * x + b * y).collect();
        VectorField::from_raw(self.domain, u, v)
    }

    pub fn scale(&self, a: f64) -> VectorField {
        VectorField::from_raw(
            self.domain,
            self.u.iter().map(|x| a * x).collect(),
            self.v.iter().map(|x| a * x).collect(),
        )
    }

    /// Largest face value magnitude over both components.
    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0, |m: f64, x| m.max(x.abs()))
    }

    /// Velocity interpolated to cell centers.
    pub fn cell_centered(&self) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny) = (self.domain.cells_x(), self.domain.cells_y());
        let mut uc = vec![0.0; nx * ny];
        let mut vc = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                uc[j * nx + i] = 0.5 * (self.u_at(i, j) + self.u_at(i + 1, j));
                vc[j * nx + i] = 0.5 * (self.v_at(i, j) + self.v_at(i, j + 1));
            }
        }
        (uc, vc)
    }
}

fn zero_boundary(domain: &DomainSpec, u: &mut [f64], v: &mut [f64]) {
    let (nx, ny) = (domain.cells_x(), domain.cells_y());
    for j in 0..ny {
        u[j * (nx + 1)] = 0.0;
        u[j * (nx + 1) + nx] = 0.0;
    }
    for i in 0..nx {
        v[i] = 0.0;
        v[ny * nx + i] = 0.0;
    }
}

/// Midpoint quadrature `hx * hy * sum(values)`.
pub fn integrate(field: &ScalarField) -> f64 {
    field.domain.cell_area() * field.values.iter().sum::<f64>()
}

/// `(integral |f|^p)^(1/p)`; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(field: &ScalarField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(p));
    }
    if p.is_infinite() {
        return Ok(field.max_abs());
    }
    let area = field.domain.cell_area();
    let s: f64 = if p == 1.0 {
        field.values.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        field.values.iter().map(|v| v * v).sum()
    } else {
        field.values.iter().map(|v| v.abs().powf(p)).sum()
    };
    Ok((area * s).powf(1.0 / p))
}

/// Discrete L2 inner product of two scalar fields.
pub fn inner(a: &ScalarField, b: &ScalarField) -> f64 {
    debug_assert_eq!(a.domain, b.domain);
    a.domain.cell_area() * a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>()
}

/// Discrete L2 inner product of two velocity fields (every face carries the
/// weight `hx * hy`).
pub fn inner_vec(a: &VectorField, b: &VectorField) -> f64 {
    debug_assert_eq!(a.domain, b.domain);
    let s: f64 = a.u.iter().zip(&b.u).map(|(x, y)| x * y).sum::<f64>()
        + a.v.iter().zip(&b.v).map(|(x, y)| x * y).sum::<f64>();
    a.domain.cell_area() * s
}

pub fn norm_vec_sq(a: &VectorField) -> f64 {
    inner_vec(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(domain: DomainSpec, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..domain.num_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::new(domain, values).unwrap()
    }

    #[test]
    fn integrate_constants_and_half_indicator() {
        let d = DomainSpec::unit_square(16).unwrap();
        assert_eq!(integrate(&ScalarField::constant(d, 1.0)), 1.0);
        assert_eq!(integrate(&ScalarField::zeros(d)), 0.0);
        let half = ScalarField::from_fn(d, |x, _| if x < 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!((integrate(&half) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lp_norm_of_constants() {
        let d = DomainSpec::unit_square(8).unwrap();
        let f = ScalarField::constant(d, -3.5);
        assert!((lp_norm(&f, 2.0).unwrap() - 3.5).abs() < 1e-14);
        assert_eq!(lp_norm(&f, f64::INFINITY).unwrap(), 3.5);

        let rect = DomainSpec::new(2.0, 1.0, 8, 4).unwrap();
        let one = ScalarField::constant(rect, 1.0);
        assert!((lp_norm(&one, 4.0).unwrap() - 2f64.powf(0.25)).abs() < 1e-14);
    }

    #[test]
    fn lp_norm_matches_double_loop() {
        let d = DomainSpec::new(1.3, 0.7, 11, 9).unwrap();
        let f = random_field(d, 3);
        let mut s = 0.0;
        for j in 0..9 {
            for i in 0..11 {
                s += f.at(i, j).powi(2) * (1.3 / 11.0) * (0.7 / 9.0);
            }
        }
        assert!((lp_norm(&f, 2.0).unwrap() - s.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lp_norm_rejects_small_p() {
        let d = DomainSpec::unit_square(4).unwrap();
        assert!(matches!(
            lp_norm(&ScalarField::zeros(d), 0.5),
            Err(Error::InvalidExponent(_))
        ));
    }

    #[test]
    fn rejects_bad_domains_and_nan() {
        assert!(DomainSpec::new(0.0, 1.0, 4, 4).is_err());
        assert!(DomainSpec::new(1.0, 1.0, 0, 4).is_err());
        let d = DomainSpec::unit_square(2).unwrap();
        let err = ScalarField::new(d, vec![0.0, 1.0, f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { i: 0, j: 1, .. }));
    }

    #[test]
    fn vector_field_no_slip() {
        let d = DomainSpec::unit_square(3).unwrap();
        let mut u = vec![0.0; d.num_u_faces()];
        u[0] = 1.0;
        assert!(matches!(
            VectorField::new(d, u, vec![0.0; d.num_v_faces()]),
            Err(Error::NoSlip { component: "u", .. })
        ));
        let mut w = VectorField::from_fn(d, |_, _| 1.0, |_, _| 2.0).unwrap();
        w.update(|u, v| {
            u.iter_mut().for_each(|x| *x = 5.0);
            v.iter_mut().for_each(|x| *x = 5.0);
        });
        w.validate().unwrap();
    }

    #[test]
    fn csv_round_trip() {
        let d = DomainSpec::new(2.0, 1.0, 5, 3).unwrap();
        let f = random_field(d, 9);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# scalar 5 3 "));
        let g = ScalarField::read_csv(&buf[..]).unwrap();
        assert_eq!(g.values(), f.values());
        assert!((g.domain().length_x() - 2.0).abs() < 1e-14);
    }
}
