//! Density operators and their coefficient-space geometry.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::sync::Arc;

use super::basis::{trace, Convention, OperatorBasis, StructureTensors};
use super::QuantumError;
use crate::poly::{Monomial, Polynomial};
use crate::variety::Variety;

/// Coefficients below this are dropped when structure tensors are turned
/// into polynomial generators.
const COEFF_CLIP: f64 = 1e-13;

/// Which tensor factor a partial trace removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

/// Validated density operator: hermitian, unit trace, positive.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self, QuantumError> {
        if entries.nrows() != entries.ncols() {
            return Err(QuantumError::Dimension {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        let herm = (&entries - entries.adjoint()).map(|z| z.norm()).max();
        if herm > 1e-12 {
            return Err(QuantumError::NotHermitian { residual: herm });
        }
        let tr = trace(&entries);
        if (tr.re - 1.0).abs() > 1e-12 || tr.im.abs() > 1e-12 {
            return Err(QuantumError::NotDensity {
                reason: format!("trace {} + {}i is not 1", tr.re, tr.im),
            });
        }
        let eig = entries.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(QuantumError::NotDensity {
                reason: format!("negative eigenvalue {min:.3e}"),
            });
        }
        Ok(Self { entries })
    }

    /// Rank-one projector onto a state vector (normalized first).
    pub fn from_pure(state: &DVector<Complex64>) -> Result<Self, QuantumError> {
        let norm = state.norm();
        if norm < 1e-12 {
            return Err(QuantumError::NotDensity { reason: "zero state vector".to_string() });
        }
        let psi = state / Complex64::new(norm, 0.0);
        Self::new(&psi * psi.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// tr(rho^2), which is 1 exactly for pure states.
    pub fn purity(&self) -> f64 {
        trace(&(&self.entries * &self.entries)).re
    }

    pub fn is_pure(&self, tol: f64) -> bool {
        (1.0 - self.purity()).abs() <= tol
    }

    /// Eigenvalues (descending) with matching eigenvectors.
    pub fn eigenpairs(&self) -> (Vec<f64>, Vec<DVector<Complex64>>) {
        let eig = self.entries.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors =
            order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        (values, vectors)
    }

    /// Number of eigenvalues above the cutoff.
    pub fn rank(&self, cutoff: f64) -> usize {
        let (values, _) = self.eigenpairs();
        values.iter().filter(|&&v| v > cutoff).count()
    }

    /// Removes one tensor factor of a state on C^M (x) C^N.
    pub fn partial_trace(
        &self,
        mdim: usize,
        ndim: usize,
        traced: Subsystem,
    ) -> Result<Self, QuantumError> {
        if mdim * ndim != self.dim() {
            return Err(QuantumError::Dimension { expected: self.dim(), got: mdim * ndim });
        }
        let rho = &self.entries;
        let entries = match traced {
            Subsystem::B => DMatrix::from_fn(mdim, mdim, |i, j| {
                (0..ndim).map(|b| rho[(i * ndim + b, j * ndim + b)]).sum()
            }),
            Subsystem::A => DMatrix::from_fn(ndim, ndim, |a, b| {
                (0..mdim).map(|i| rho[(i * ndim + a, i * ndim + b)]).sum()
            }),
        };
        Self::new(entries)
    }
}

/// Angle between two pure states: arccos((D tr(rho sigma) - 1)/(D - 1)).
pub fn angle(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64, QuantumError> {
    if rho.dim() != sigma.dim() {
        return Err(QuantumError::Dimension { expected: rho.dim(), got: sigma.dim() });
    }
    for state in [rho, sigma] {
        let residual = (1.0 - state.purity()).abs();
        if residual > 1e-8 {
            return Err(QuantumError::NotPure { residual });
        }
    }
    let d = rho.dim() as f64;
    let overlap = trace(&(rho.matrix() * sigma.matrix())).re;
    Ok(((d * overlap - 1.0) / (d - 1.0)).clamp(-1.0, 1.0).acos())
}

/// Real coefficient vector of a density operator over an operator basis.
#[derive(Debug, Clone)]
pub struct CoefficientVector {
    values: DVector<f64>,
    convention: Convention,
    basis: Arc<OperatorBasis>,
}

impl CoefficientVector {
    /// Embeds a state: scaled stores c_j = D tr(rho lambda^j) over the
    /// traceless elements, plain stores c_a = tr(rho mu^a) over all of them.
    pub fn embed(
        rho: &DensityMatrix,
        basis: &Arc<OperatorBasis>,
        convention: Convention,
    ) -> Result<Self, QuantumError> {
        if rho.dim() != basis.dim() {
            return Err(QuantumError::Dimension { expected: basis.dim(), got: rho.dim() });
        }
        if convention == Convention::Scaled && basis.convention() != Convention::Scaled {
            return Err(QuantumError::Convention {
                expected: Convention::Scaled,
                got: basis.convention(),
            });
        }
        let d = basis.dim() as f64;
        let values = match convention {
            Convention::Scaled => DVector::from_fn(basis.len() - 1, |j, _| {
                d * trace(&(rho.matrix() * basis.element(j + 1))).re
            }),
            Convention::Plain => DVector::from_fn(basis.len(), |a, _| {
                trace(&(rho.matrix() * basis.element(a))).re
            }),
        };
        Ok(Self { values, convention, basis: basis.clone() })
    }

    /// Wraps raw coefficients without validating that they form a state.
    pub fn from_values(
        values: DVector<f64>,
        basis: &Arc<OperatorBasis>,
        convention: Convention,
    ) -> Result<Self, QuantumError> {
        let expected = match convention {
            Convention::Scaled => basis.len() - 1,
            Convention::Plain => basis.len(),
        };
        if values.len() != expected {
            return Err(QuantumError::Dimension { expected, got: values.len() });
        }
        Ok(Self { values, convention, basis: basis.clone() })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn basis(&self) -> &Arc<OperatorBasis> {
        &self.basis
    }

    /// Rebuilds the operator; the result is hermitian with unit trace by
    /// construction but positivity is up to the coefficients.
    pub fn unembed_matrix(&self) -> DMatrix<Complex64> {
        let dim = self.basis.dim();
        let mut m: DMatrix<Complex64> = DMatrix::zeros(dim, dim);
        match self.convention {
            Convention::Scaled => {
                for (j, &c) in self.values.iter().enumerate() {
                    m += self.basis.element(j + 1) * Complex64::new(c, 0.0);
                }
                m += DMatrix::<Complex64>::identity(dim, dim);
                m /= Complex64::new(dim as f64, 0.0);
            }
            Convention::Plain => {
                for (a, &c) in self.values.iter().enumerate() {
                    m += self.basis.element(a) * Complex64::new(c, 0.0);
                }
            }
        }
        m
    }

    pub fn unembed(&self) -> Result<DensityMatrix, QuantumError> {
        DensityMatrix::new(self.unembed_matrix())
    }

    fn check_same(&self, other: &Self) -> Result<(), QuantumError> {
        if !Arc::ptr_eq(&self.basis, &other.basis) || self.convention != other.convention {
            return Err(QuantumError::BasisMismatch);
        }
        Ok(())
    }

    fn check_scaled(&self) -> Result<(), QuantumError> {
        if self.convention != Convention::Scaled {
            return Err(QuantumError::Convention {
                expected: Convention::Scaled,
                got: self.convention,
            });
        }
        Ok(())
    }

    pub fn inner(&self, other: &Self) -> Result<f64, QuantumError> {
        self.check_same(other)?;
        Ok(self.values.dot(&other.values))
    }

    /// (a wedge b)_l = a_j b_k f^{jk}_l on the traceless sector.
    pub fn wedge(&self, other: &Self) -> Result<Self, QuantumError> {
        self.check_same(other)?;
        self.check_scaled()?;
        let tensors = self.basis.tensors();
        Ok(Self {
            values: contract(&self.values, &other.values, |j, k, l| tensors.f_coeff(j, k, l)),
            convention: self.convention,
            basis: self.basis.clone(),
        })
    }

    /// (a star b)_l = a_j b_k d^{jk}_l on the traceless sector.
    pub fn star(&self, other: &Self) -> Result<Self, QuantumError> {
        self.check_same(other)?;
        self.check_scaled()?;
        let tensors = self.basis.tensors();
        Ok(Self {
            values: contract(&self.values, &other.values, |j, k, l| tensors.d_coeff(j, k, l)),
            convention: self.convention,
            basis: self.basis.clone(),
        })
    }
}

fn contract<F: Fn(usize, usize, usize) -> f64>(
    a: &DVector<f64>,
    b: &DVector<f64>,
    tensor: F,
) -> DVector<f64> {
    let n = a.len();
    DVector::from_fn(n, |l, _| {
        let mut sum = 0.0;
        for j in 0..n {
            if a[j] == 0.0 {
                continue;
            }
            for k in 0..n {
                sum += a[j] * b[k] * tensor(j, k, l);
            }
        }
        sum
    })
}

/// Residuals of the pure-state conditions for a scaled coefficient vector.
#[derive(Debug, Clone, Copy)]
pub struct PurityReport {
    pub is_pure: bool,
    /// |c|^2 - D(D-1).
    pub norm_residual: f64,
    /// max_l |c^T D^l c - (D-2) c_l|.
    pub product_residual: f64,
}

/// Evaluates the scaled-convention pure-state conditions at `c`.
pub fn purity_conditions(c: &CoefficientVector, tol: f64) -> Result<PurityReport, QuantumError> {
    c.check_scaled()?;
    let d = c.basis().dim() as f64;
    let v = c.values();
    let norm_residual = v.dot(v) - d * (d - 1.0);
    let tensors = c.basis().tensors();
    let mut product_residual = 0.0f64;
    for l in 0..v.len() {
        let mut quad = 0.0;
        for j in 0..v.len() {
            if v[j] == 0.0 {
                continue;
            }
            for k in 0..v.len() {
                quad += v[j] * v[k] * tensors.d_coeff(j, k, l);
            }
        }
        product_residual = product_residual.max((quad - (d - 2.0) * v[l]).abs());
    }
    let is_pure = norm_residual.abs() <= tol && product_residual <= tol;
    Ok(PurityReport { is_pure, norm_residual, product_residual })
}

/// Pure states as a polynomial variety in coefficient space.
///
/// Scaled: ambient R^{D^2-1} with |c|^2 = D(D-1) and the star-product rows
/// c^T D^l c = (D-2) c_l. Plain: ambient R^{D^2} with trace, norm, and
/// idempotency rows. Either way the variety has dimension 2(D-1).
pub fn pure_state_variety(basis: &Arc<OperatorBasis>) -> Result<Variety, QuantumError> {
    let dim = basis.dim();
    let tensors = basis.tensors();
    let generators = match basis.convention() {
        Convention::Scaled => scaled_purity_generators(dim, tensors),
        Convention::Plain => plain_purity_generators(dim, tensors),
    }?;
    let nvars = match basis.convention() {
        Convention::Scaled => dim * dim - 1,
        Convention::Plain => dim * dim,
    };
    Ok(Variety::new(nvars, generators, Some(2 * (dim - 1)))?)
}

fn scaled_purity_generators(
    dim: usize,
    tensors: &StructureTensors,
) -> Result<Vec<Polynomial>, QuantumError> {
    let n = dim * dim - 1;
    let d = dim as f64;
    let mut generators = Vec::with_capacity(n + 1);
    let mut norm_terms = vec![Monomial {
        exponents: vec![0; n],
        coefficient: -d * (d - 1.0),
    }];
    for j in 0..n {
        let mut e = vec![0; n];
        e[j] = 2;
        norm_terms.push(Monomial { exponents: e, coefficient: 1.0 });
    }
    generators.push(Polynomial::from_terms(n, &norm_terms)?);
    for l in 0..n {
        let mut terms = Vec::new();
        for j in 0..n {
            for k in 0..n {
                let coeff = tensors.d_coeff(j, k, l);
                if coeff.abs() <= COEFF_CLIP {
                    continue;
                }
                let mut e = vec![0; n];
                e[j] += 1;
                e[k] += 1;
                terms.push(Monomial { exponents: e, coefficient: coeff });
            }
        }
        if (d - 2.0).abs() > COEFF_CLIP {
            let mut e = vec![0; n];
            e[l] = 1;
            terms.push(Monomial { exponents: e, coefficient: -(d - 2.0) });
        }
        generators.push(Polynomial::from_terms(n, &terms)?);
    }
    Ok(generators)
}

fn plain_purity_generators(
    dim: usize,
    tensors: &StructureTensors,
) -> Result<Vec<Polynomial>, QuantumError> {
    let n = dim * dim;
    let mut generators = Vec::with_capacity(n + 2);
    let mut trace_terms = vec![Monomial { exponents: vec![0; n], coefficient: -1.0 }];
    for a in 0..n {
        if tensors.tau[a].abs() <= COEFF_CLIP {
            continue;
        }
        let mut e = vec![0; n];
        e[a] = 1;
        trace_terms.push(Monomial { exponents: e, coefficient: tensors.tau[a] });
    }
    generators.push(Polynomial::from_terms(n, &trace_terms)?);
    let mut norm_terms = vec![Monomial { exponents: vec![0; n], coefficient: -1.0 }];
    for a in 0..n {
        let mut e = vec![0; n];
        e[a] = 2;
        norm_terms.push(Monomial { exponents: e, coefficient: 1.0 });
    }
    generators.push(Polynomial::from_terms(n, &norm_terms)?);
    // rho^2 = rho: sum_{ab} Re(chi^{ab}_g) c_a c_b = c_g for every g.
    for g in 0..n {
        let mut terms = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let coeff = tensors.chi_coeff(a, b, g).re;
                if coeff.abs() <= COEFF_CLIP {
                    continue;
                }
                let mut e = vec![0; n];
                e[a] += 1;
                e[b] += 1;
                terms.push(Monomial { exponents: e, coefficient: coeff });
            }
        }
        let mut e = vec![0; n];
        e[g] = 1;
        terms.push(Monomial { exponents: e, coefficient: -1.0 });
        generators.push(Polynomial::from_terms(n, &terms)?);
    }
    Ok(generators)
}

/// Reduced-state coefficients: tr_B(rho) = sqrt(N) c_{a0} lambda^a, so the
/// plain coefficients of the reduced state carry an explicit sqrt(N).
pub fn reduced_coefficient_vector(
    c: &CoefficientVector,
    basis_a: &Arc<OperatorBasis>,
    ndim: usize,
) -> Result<CoefficientVector, QuantumError> {
    if c.convention() != Convention::Plain {
        return Err(QuantumError::Convention {
            expected: Convention::Plain,
            got: c.convention(),
        });
    }
    let ma = basis_a.len();
    let nb = ndim * ndim;
    if c.values().len() != ma * nb {
        return Err(QuantumError::Dimension { expected: ma * nb, got: c.values().len() });
    }
    let factor = (ndim as f64).sqrt();
    let values = DVector::from_fn(ma, |alpha, _| factor * c.values()[alpha * nb]);
    CoefficientVector::from_values(values, basis_a, Convention::Plain)
}

/// Pure-state variety restricted to the support of a mixed state.
#[derive(Debug)]
pub struct SupportSlice {
    pub variety: Variety,
    /// Rank of the restricting state at the eigenvalue cutoff.
    pub rank: usize,
    /// Affine dimension of the restricted hull: rank^2 - 1.
    pub hull_dim: usize,
}

impl SupportSlice {
    /// Largest decomposition size needed over the restricted hull.
    pub fn m_max(&self) -> usize {
        self.rank * self.rank
    }
}

/// Restricts the plain pure-state variety to states supported inside the
/// range of `rho`: linear rows <w| c_a mu^a |e_j> = 0 for every kernel
/// vector w and basis ket e_j, on top of the purity generators.
pub fn support_restricted_variety(
    rho: &DensityMatrix,
    basis: &Arc<OperatorBasis>,
    cutoff: f64,
) -> Result<SupportSlice, QuantumError> {
    let dim = basis.dim();
    if rho.dim() != dim {
        return Err(QuantumError::Dimension { expected: dim, got: rho.dim() });
    }
    let n = dim * dim;
    let tensors = basis.tensors();
    let mut generators = plain_purity_generators(dim, tensors)?;
    let (values, vectors) = rho.eigenpairs();
    let rank = values.iter().filter(|&&v| v > cutoff).count();
    for (lam, w) in values.iter().zip(&vectors) {
        if *lam > cutoff {
            continue;
        }
        for j in 0..dim {
            let mut re_terms = Vec::new();
            let mut im_terms = Vec::new();
            for a in 0..n {
                // <w| mu^a |e_j> = sum_i conj(w_i) mu^a_{ij}.
                let mut amp = Complex64::new(0.0, 0.0);
                for i in 0..dim {
                    amp += w[i].conj() * basis.element(a)[(i, j)];
                }
                let mut e = vec![0; n];
                e[a] = 1;
                if amp.re.abs() > COEFF_CLIP {
                    re_terms.push(Monomial { exponents: e.clone(), coefficient: amp.re });
                }
                if amp.im.abs() > COEFF_CLIP {
                    im_terms.push(Monomial { exponents: e, coefficient: amp.im });
                }
            }
            generators.push(Polynomial::from_terms(n, &re_terms)?);
            generators.push(Polynomial::from_terms(n, &im_terms)?);
        }
    }
    let variety = Variety::new(n, generators, Some(2 * rank.saturating_sub(1)))?;
    Ok(SupportSlice { variety, rank, hull_dim: rank * rank - 1 })
}
