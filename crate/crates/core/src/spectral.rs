//! Separable sine/cosine eigenbases of the discrete Laplacians on the
//! rectangle, and spectral fractional powers of `L = -Laplacian + 1`
//! (Neumann).
//!
//! Every 1D second-difference operator used by the solver is diagonalized by
//! a discrete trigonometric transform:
//!
//! | unknowns          | boundary closure     | modes                         |
//! |-------------------|----------------------|-------------------------------|
//! | cell centers      | mirror ghost (even)  | `cos(pi k (i + 1/2) / n)`     |
//! | cell centers      | odd ghost (wall)     | `sin(pi k (i + 1/2) / n)`     |
//! | interior nodes    | Dirichlet node       | `sin(pi k i / n)`             |
//!
//! with eigenvalue `(2 / h^2) (1 - cos(pi k / n))` of `-D^2`. Transforms are
//! applied as dense orthonormal matrices, which is plenty at desk-scale grid
//! sizes.

use std::f64::consts::PI;

use crate::error::Result;
use crate::mesh::{DomainSpec, ScalarField};
use crate::stokes::StokesBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// Cell-centered, zero-flux (Neumann) ends.
    NeumannCell,
    /// Cell-centered, zero value at the end faces.
    DirichletCell,
    /// Node-centered interior unknowns `1..n`, zero at nodes `0` and `n`.
    DirichletNode,
}

/// Orthonormal eigenbasis of a 1D second difference.
#[derive(Debug, Clone)]
pub struct Basis1d {
    len: usize,
    /// `modes[i * len + k]` = component `i` of mode `k`.
    modes: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl Basis1d {
    pub fn new(closure: Closure, cells: usize, h: f64) -> Self {
        let n = cells as f64;
        let eig = |k: f64| (2.0 * (0.5 * PI * k / n).sin() / h).powi(2);
        let (len, ks): (usize, Vec<f64>) = match closure {
            Closure::NeumannCell => (cells, (0..cells).map(|k| k as f64).collect()),
            Closure::DirichletCell => (cells, (1..=cells).map(|k| k as f64).collect()),
            Closure::DirichletNode => (
                cells.saturating_sub(1),
                (1..cells).map(|k| k as f64).collect(),
            ),
        };
        let mut modes = vec![0.0; len * len];
        for (col, &k) in ks.iter().enumerate() {
            for row in 0..len {
                let i = row as f64;
                modes[row * len + col] = match closure {
                    Closure::NeumannCell => (PI * k * (i + 0.5) / n).cos(),
                    Closure::DirichletCell => (PI * k * (i + 0.5) / n).sin(),
                    Closure::DirichletNode => (PI * k * (i + 1.0) / n).sin(),
                };
            }
            let norm = (0..len)
                .map(|row| modes[row * len + col].powi(2))
                .sum::<f64>()
                .sqrt();
            for row in 0..len {
                modes[row * len + col] /= norm;
            }
        }
        let mut eigenvalues: Vec<f64> = ks.iter().map(|&k| eig(k)).collect();
        if closure == Closure::NeumannCell && !eigenvalues.is_empty() {
            eigenvalues[0] = 0.0;
        }
        Basis1d {
            len,
            modes,
            eigenvalues,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode(&self, i: usize, k: usize) -> f64 {
        self.modes[i * self.len + k]
    }
}

/// Tensor product of two 1D bases acting on row-major `(rows = y, cols = x)`
/// arrays.
#[derive(Debug, Clone)]
pub struct Separable {
    bx: Basis1d,
    by: Basis1d,
}

impl Separable {
    pub fn new(bx: Basis1d, by: Basis1d) -> Self {
        Separable { bx, by }
    }

    pub fn len(&self) -> usize {
        self.bx.len * self.by.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Eigenvalue of `-Laplacian` for coefficient `ky * len_x + kx`.
    pub fn eigenvalue(&self, kx: usize, ky: usize) -> f64 {
        self.bx.eigenvalues[kx] + self.by.eigenvalues[ky]
    }

    /// Grid values to mode coefficients.
    pub fn forward(&self, data: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.bx.len, self.by.len);
        debug_assert_eq!(data.len(), nx * ny);
        let mut tmp = vec![0.0; nx * ny];
        for j in 0..ny {
            let row = &data[j * nx..(j + 1) * nx];
            let out = &mut tmp[j * nx..(j + 1) * nx];
            for (i, &f) in row.iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                let m = &self.bx.modes[i * nx..(i + 1) * nx];
                for (o, &w) in out.iter_mut().zip(m) {
                    *o += f * w;
                }
            }
        }
        let mut coef = vec![0.0; nx * ny];
        for j in 0..ny {
            let t = &tmp[j * nx..(j + 1) * nx];
            for ky in 0..ny {
                let w = self.by.modes[j * ny + ky];
                let out = &mut coef[ky * nx..(ky + 1) * nx];
                for (o, &tv) in out.iter_mut().zip(t) {
                    *o += w * tv;
                }
            }
        }
        coef
    }

    /// Mode coefficients to grid values.
    pub fn inverse(&self, coef: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.bx.len, self.by.len);
        debug_assert_eq!(coef.len(), nx * ny);
        let mut tmp = vec![0.0; nx * ny];
        for j in 0..ny {
            let out = &mut tmp[j * nx..(j + 1) * nx];
            for ky in 0..ny {
                let w = self.by.modes[j * ny + ky];
                if w == 0.0 {
                    continue;
                }
                let c = &coef[ky * nx..(ky + 1) * nx];
                for (o, &cv) in out.iter_mut().zip(c) {
                    *o += w * cv;
                }
            }
        }
        let mut data = vec![0.0; nx * ny];
        for j in 0..ny {
            let t = &tmp[j * nx..(j + 1) * nx];
            let out = &mut data[j * nx..(j + 1) * nx];
            for (i, o) in out.iter_mut().enumerate() {
                let m = &self.bx.modes[i * nx..(i + 1) * nx];
                *o = m.iter().zip(t).map(|(a, b)| a * b).sum();
            }
        }
        data
    }

    /// Applies `g(eigenvalue of -Laplacian)` diagonally in the eigenbasis.
    pub fn apply_fn(&self, data: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut coef = self.forward(data);
        let nx = self.bx.len;
        for (k, c) in coef.iter_mut().enumerate() {
            *c *= g(self.eigenvalue(k % nx, k / nx));
        }
        self.inverse(&coef)
    }
}

/// Which operator a [`SpectralBasis`] diagonalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    CosineTensor,
    DenseStokes,
}

/// Eigenbasis of the discrete Neumann operator `L = -Laplacian + 1`.
///
/// Coefficients are taken against the Euclidean-orthonormal cosine modes, so
/// Parseval reads `||f||_2^2 = hx hy sum_k coef_k^2`.
#[derive(Debug, Clone)]
pub struct NeumannBasis {
    domain: DomainSpec,
    modes: Separable,
    eigenvalues: Vec<f64>,
}

impl NeumannBasis {
    pub fn new(domain: DomainSpec) -> Self {
        let modes = Separable::new(
            Basis1d::new(Closure::NeumannCell, domain.cells_x(), domain.hx()),
            Basis1d::new(Closure::NeumannCell, domain.cells_y(), domain.hy()),
        );
        let nx = domain.cells_x();
        let eigenvalues = (0..domain.num_cells())
            .map(|k| 1.0 + modes.eigenvalue(k % nx, k / nx))
            .collect();
        NeumannBasis {
            domain,
            modes,
            eigenvalues,
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    /// Eigenvalues of `L`, indexed like the coefficients (`ky * nx + kx`).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn separable(&self) -> &Separable {
        &self.modes
    }

    pub fn coefficients(&self, f: &ScalarField) -> Vec<f64> {
        self.modes.forward(f.values())
    }

    pub fn synthesize(&self, coef: &[f64]) -> ScalarField {
        ScalarField::from_raw(self.domain, self.modes.inverse(coef))
    }

    /// `L^alpha f`.
    pub fn fractional_power(&self, alpha: f64, f: &ScalarField) -> Result<ScalarField> {
        self.domain.check_same(f.domain(), "fractional power")?;
        if alpha == 0.0 {
            return Ok(f.clone());
        }
        // Integer powers go through the stencil: the transform's roundoff
        // scales with the largest eigenvalue raised to the applied power.
        let whole = if alpha >= 1.0 { alpha.floor() } else { 0.0 };
        let frac = alpha - whole;
        let mut out = if frac == 0.0 {
            f.clone()
        } else {
            ScalarField::from_raw(
                self.domain,
                self.modes.apply_fn(f.values(), |lap| (1.0 + lap).powf(frac)),
            )
        };
        for _ in 0..whole as usize {
            let lap = crate::ops::laplacian_neumann(&out);
            let v = out.values().iter().zip(lap.values()).map(|(a, b)| a - b).collect();
            out = ScalarField::from_raw(self.domain, v);
        }
        Ok(out)
    }

    /// `||L^alpha f||_2^2` straight from the coefficients.
    pub fn fractional_norm_sq(&self, alpha: f64, f: &ScalarField) -> Result<f64> {
        self.domain.check_same(f.domain(), "fractional norm")?;
        let coef = self.coefficients(f);
        Ok(self.domain.cell_area()
            * coef
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, l)| c * c * l.powf(2.0 * alpha))
                .sum::<f64>())
    }

    /// Solves `(a - b Laplacian) x = rhs`. With `a = 0` the constant mode is
    /// dropped, giving the mean-zero solution of the Neumann Poisson problem.
    pub fn solve_shifted(&self, rhs: &[f64], a: f64, b: f64) -> Vec<f64> {
        self.modes.apply_fn(rhs, |lap| {
            let d = a + b * lap;
            if d == 0.0 {
                0.0
            } else {
                1.0 / d
            }
        })
    }
}

/// A spectral basis of either `L` (cosine tensor) or the Stokes operator
/// (dense).
#[derive(Debug, Clone)]
pub enum SpectralBasis {
    CosineTensor(NeumannBasis),
    DenseStokes(StokesBasis),
}

impl SpectralBasis {
    pub fn kind(&self) -> TransformKind {
        match self {
            SpectralBasis::CosineTensor(_) => TransformKind::CosineTensor,
            SpectralBasis::DenseStokes(_) => TransformKind::DenseStokes,
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        match self {
            SpectralBasis::CosineTensor(b) => b.domain(),
            SpectralBasis::DenseStokes(b) => b.domain(),
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        match self {
            SpectralBasis::CosineTensor(b) => b.eigenvalues(),
            SpectralBasis::DenseStokes(b) => b.eigenvalues(),
        }
    }
}

/// Eigenbasis of the discrete Neumann operator on `domain`.
pub fn neumann_spectral_basis(domain: DomainSpec) -> NeumannBasis {
    NeumannBasis::new(domain)
}

/// `L^alpha f` in the given basis.
pub fn fractional_power_apply(
    basis: &NeumannBasis,
    alpha: f64,
    f: &ScalarField,
) -> Result<ScalarField> {
    basis.fractional_power(alpha, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn second_difference(closure: Closure, n: usize, h: f64) -> Vec<Vec<f64>> {
        let len = if closure == Closure::DirichletNode { n - 1 } else { n };
        let mut m = vec![vec![0.0; len]; len];
        for i in 0..len {
            m[i][i] = 2.0 / (h * h);
            if i > 0 {
                m[i][i - 1] = -1.0 / (h * h);
            }
            if i + 1 < len {
                m[i][i + 1] = -1.0 / (h * h);
            }
        }
        match closure {
            Closure::NeumannCell => {
                m[0][0] -= 1.0 / (h * h);
                m[len - 1][len - 1] -= 1.0 / (h * h);
            }
            Closure::DirichletCell => {
                m[0][0] += 1.0 / (h * h);
                m[len - 1][len - 1] += 1.0 / (h * h);
            }
            Closure::DirichletNode => {}
        }
        m
    }

    #[test]
    fn one_d_bases_diagonalize_their_stencils() {
        for closure in [Closure::NeumannCell, Closure::DirichletCell, Closure::DirichletNode] {
            let (n, h) = (7, 0.3);
            let b = Basis1d::new(closure, n, h);
            let m = second_difference(closure, n, h);
            for k in 0..b.len() {
                for (i, row) in m.iter().enumerate() {
                    let mv: f64 = row.iter().enumerate().map(|(l, v)| v * b.mode(l, k)).sum();
                    assert!(
                        (mv - b.eigenvalues()[k] * b.mode(i, k)).abs() < 1e-11,
                        "{closure:?} mode {k}"
                    );
                }
                for k2 in 0..b.len() {
                    let dot: f64 = (0..b.len()).map(|i| b.mode(i, k) * b.mode(i, k2)).sum();
                    let expect = if k == k2 { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn two_cell_eigenvalues() {
        // 1D Neumann stencil with h = 0.5: [[4, -4], [-4, 4]] has eigenvalues {0, 8}.
        let b = Basis1d::new(Closure::NeumannCell, 2, 0.5);
        assert_eq!(b.eigenvalues()[0], 0.0);
        assert!((b.eigenvalues()[1] - 8.0).abs() < 1e-13);
        let d = DomainSpec::new(1.0, 1.0, 2, 1).unwrap();
        let nb = NeumannBasis::new(d);
        assert_eq!(nb.eigenvalues()[0], 1.0);
        assert!((nb.eigenvalues()[1] - 9.0).abs() < 1e-13);
    }

    #[test]
    fn basis_size_and_smallest_eigenvalue() {
        let d = DomainSpec::new(2.0, 1.0, 12, 5).unwrap();
        let b = neumann_spectral_basis(d);
        assert_eq!(b.eigenvalues().len(), 60);
        let min = b.eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(min, 1.0);
    }

    #[test]
    fn transform_round_trip() {
        let d = DomainSpec::new(1.0, 2.0, 6, 9).unwrap();
        let b = NeumannBasis::new(d);
        let data: Vec<f64> = (0..54).map(|k| ((k * 37) % 11) as f64 - 4.0).collect();
        let back = b.separable().inverse(&b.separable().forward(&data));
        for (x, y) in data.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_is_fixed_by_every_power() {
        let d = DomainSpec::unit_square(8).unwrap();
        let b = NeumannBasis::new(d);
        let f = ScalarField::constant(d, 2.5);
        for alpha in [-0.5, 0.0, 0.37, 1.3] {
            let g = b.fractional_power(alpha, &f).unwrap();
            assert!(g.values().iter().all(|v| (v - 2.5).abs() < 1e-11));
        }
    }
}
