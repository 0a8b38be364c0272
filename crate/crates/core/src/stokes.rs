//! Dense eigenbasis of the discrete Stokes operator `A = -P Laplacian` on
//! divergence-free no-slip MAC fields.
//!
//! Divergence-free no-slip fields are exactly the discrete curls of
//! streamfunctions living on interior grid vertices, so the problem is posed
//! in streamfunction coordinates as the generalized symmetric eigenproblem
//! `C^T (-L) C x = lambda C^T C x` and mapped back through `C`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::{DomainSpec, VectorField};
use crate::ops::vector_laplacian;

/// Largest staggered-velocity size accepted by the dense eigensolve.
pub const STOKES_MAX_UNKNOWNS: usize = 8192;

#[derive(Debug, Clone)]
pub struct StokesBasis {
    domain: DomainSpec,
    eigenvalues: Vec<f64>,
    /// Columns are eigenvectors over all faces (u faces then v faces),
    /// orthonormal in the discrete L2 inner product.
    eigenvectors: DMatrix<f64>,
}

fn vertex_index(domain: &DomainSpec, i: usize, j: usize) -> usize {
    (j - 1) * (domain.cells_x() - 1) + (i - 1)
}

/// Discrete curl of a streamfunction given on interior vertices
/// (zero on the boundary).
pub fn curl(domain: &DomainSpec, psi: &[f64]) -> VectorField {
    let (nx, ny) = (domain.cells_x(), domain.cells_y());
    let (hx, hy) = (domain.hx(), domain.hy());
    let at = |i: usize, j: usize| {
        if i == 0 || j == 0 || i == nx || j == ny {
            0.0
        } else {
            psi[vertex_index(domain, i, j)]
        }
    };
    let mut u = vec![0.0; domain.num_u_faces()];
    for j in 0..ny {
        for i in 1..nx {
            u[j * (nx + 1) + i] = (at(i, j + 1) - at(i, j)) / hy;
        }
    }
    let mut v = vec![0.0; domain.num_v_faces()];
    for j in 1..ny {
        for i in 0..nx {
            v[j * nx + i] = -(at(i + 1, j) - at(i, j)) / hx;
        }
    }
    VectorField::from_raw(*domain, u, v)
}

/// Euclidean adjoint of [`curl`].
fn curl_adjoint(domain: &DomainSpec, w: &VectorField) -> Vec<f64> {
    let (nx, ny) = (domain.cells_x(), domain.cells_y());
    let (hx, hy) = (domain.hx(), domain.hy());
    let mut out = vec![0.0; (nx - 1) * (ny - 1)];
    for j in 1..ny {
        for i in 1..nx {
            out[vertex_index(domain, i, j)] = (w.u_at(i, j - 1) - w.u_at(i, j)) / hy
                + (w.v_at(i, j) - w.v_at(i - 1, j)) / hx;
        }
    }
    out
}

fn flatten(w: &VectorField) -> DVector<f64> {
    DVector::from_iterator(
        w.domain().velocity_unknowns(),
        w.u().iter().chain(w.v()).copied(),
    )
}

fn unflatten(domain: &DomainSpec, x: &[f64]) -> VectorField {
    let nu = domain.num_u_faces();
    VectorField::from_raw(*domain, x[..nu].to_vec(), x[nu..].to_vec())
}

impl StokesBasis {
    pub fn new(domain: DomainSpec) -> Result<Self> {
        let unknowns = domain.velocity_unknowns();
        if unknowns > STOKES_MAX_UNKNOWNS {
            return Err(Error::StokesTooLarge {
                unknowns,
                limit: STOKES_MAX_UNKNOWNS,
            });
        }
        let (nx, ny) = (domain.cells_x(), domain.cells_y());
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidDomain(
                "Stokes basis needs at least 2 cells per direction".into(),
            ));
        }
        let m = (nx - 1) * (ny - 1);
        let faces = unknowns;

        let mut stiffness = DMatrix::<f64>::zeros(m, m);
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut curl_matrix = DMatrix::<f64>::zeros(faces, m);
        let mut e = vec![0.0; m];
        for k in 0..m {
            e[k] = 1.0;
            let ck = curl(&domain, &e);
            let lk = vector_laplacian(&ck).scale(-1.0);
            stiffness.set_column(k, &DVector::from_vec(curl_adjoint(&domain, &lk)));
            gram.set_column(k, &DVector::from_vec(curl_adjoint(&domain, &ck)));
            curl_matrix.set_column(k, &flatten(&ck));
            e[k] = 0.0;
        }

        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Solver("streamfunction Gram matrix not positive definite".into()))?;
        let l = chol.l();
        // M = L^-1 K L^-T
        let lk = l
            .solve_lower_triangular(&stiffness)
            .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
        let mut reduced = l
            .solve_lower_triangular(&lk.transpose())
            .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
        reduced = (&reduced + reduced.transpose()) * 0.5;
        let eig = SymmetricEigen::new(reduced);

        // x = L^-T y, e = C x
        let x = l
            .transpose()
            .solve_upper_triangular(&eig.eigenvectors)
            .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
        let mut vectors = &curl_matrix * x;

        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let w = domain.cell_area();
        let mut eigenvectors = DMatrix::<f64>::zeros(faces, m);
        let mut eigenvalues = Vec::with_capacity(m);
        for (col, &k) in order.iter().enumerate() {
            let mut v = vectors.column_mut(k);
            let norm = (w * v.norm_squared()).sqrt();
            v /= norm;
            eigenvectors.set_column(col, &v);
            eigenvalues.push(eig.eigenvalues[k]);
        }
        if eigenvalues.first().is_some_and(|&l| l <= 0.0) {
            return Err(Error::Solver("Stokes operator has a nonpositive eigenvalue".into()));
        }
        Ok(StokesBasis {
            domain,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    /// Ascending eigenvalues of the discrete Stokes operator.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, k: usize) -> VectorField {
        unflatten(&self.domain, self.eigenvectors.column(k).as_slice())
    }

    /// Discrete L2 coefficients of `w` against the eigenvectors.
    pub fn coefficients(&self, w: &VectorField) -> Result<DVector<f64>> {
        self.domain.check_same(w.domain(), "Stokes coefficients")?;
        Ok(self.eigenvectors.tr_mul(&flatten(w)) * self.domain.cell_area())
    }

    /// `A^alpha w` on the divergence-free part of `w`.
    pub fn fractional_apply(&self, alpha: f64, w: &VectorField) -> Result<VectorField> {
        let mut coef = self.coefficients(w)?;
        for (c, l) in coef.iter_mut().zip(&self.eigenvalues) {
            *c *= l.powf(alpha);
        }
        let out = &self.eigenvectors * coef;
        Ok(unflatten(&self.domain, out.as_slice()))
    }

    /// `||A^alpha w||_2^2` from the coefficients.
    pub fn fractional_norm_sq(&self, alpha: f64, w: &VectorField) -> Result<f64> {
        let coef = self.coefficients(w)?;
        Ok(coef
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, l)| c * c * l.powf(2.0 * alpha))
            .sum())
    }

    /// Gram matrix of the eigenvectors in the discrete L2 inner product.
    pub fn gram(&self) -> DMatrix<f64> {
        self.eigenvectors.tr_mul(&self.eigenvectors) * self.domain.cell_area()
    }
}

/// Dense Stokes eigenbasis; errors out on grids above [`STOKES_MAX_UNKNOWNS`].
pub fn stokes_basis(domain: DomainSpec) -> Result<StokesBasis> {
    StokesBasis::new(domain)
}

/// `A^alpha v`.
pub fn stokes_fractional_apply(basis: &StokesBasis, alpha: f64, v: &VectorField) -> Result<VectorField> {
    basis.fractional_apply(alpha, v)
}
