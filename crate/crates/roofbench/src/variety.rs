//! Affine varieties cut out by polynomial generators, with numerically
//! estimated tangent data.
//!
//! A [`Variety`] is the common zero set of its generators in R^n. Tangent
//! frames come from the null space of the Jacobian, detected by a singular
//! value cutoff relative to the largest singular value; the frame dimension is
//! cross-checked against `expected_dim` when one is declared so that singular
//! points surface as errors instead of silently wrong frames.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::poly::{PolyError, Polynomial};

/// Default relative singular-value cutoff for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum VarietyError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("ambient dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("point is not on the variety: residual {residual:.3e} exceeds {tol:.3e}")]
    NotOnVariety { residual: f64, tol: f64 },
    #[error("singular point: tangent dimension {got} != expected {expected}")]
    SingularPoint { expected: usize, got: usize },
    #[error("tangent dimension varies across samples: {0:?}")]
    InconsistentDimension(Vec<usize>),
    #[error("projection onto the variety failed to converge (residual {residual:.3e})")]
    ProjectionFailed { residual: f64 },
    #[error("could not sample {requested} points ({found} found)")]
    SamplingFailed { requested: usize, found: usize },
}

/// Orthonormal basis of the tangent space at a point of the variety.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    pub base_point: DVector<f64>,
    pub basis: Vec<DVector<f64>>,
}

impl TangentFrame {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Orthogonal projection of `v` onto the tangent space.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for b in &self.basis {
            out += b * b.dot(v);
        }
        out
    }
}

/// Zero set of a list of polynomial generators in R^n.
#[derive(Debug, Clone)]
pub struct Variety {
    ambient_dim: usize,
    generators: Vec<Polynomial>,
    gradients: Vec<Vec<Polynomial>>,
    expected_dim: Option<usize>,
}

impl Variety {
    /// Builds a variety; identically-zero generators are dropped.
    pub fn new(
        ambient_dim: usize,
        generators: Vec<Polynomial>,
        expected_dim: Option<usize>,
    ) -> Result<Self, VarietyError> {
        for g in &generators {
            if g.nvars() != ambient_dim {
                return Err(VarietyError::Dimension { expected: ambient_dim, got: g.nvars() });
            }
        }
        let generators: Vec<Polynomial> =
            generators.into_iter().filter(|g| !g.is_zero()).collect();
        let gradients = generators.iter().map(|g| g.gradient()).collect();
        Ok(Self { ambient_dim, generators, gradients, expected_dim })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn generators(&self) -> &[Polynomial] {
        &self.generators
    }

    pub fn expected_dim(&self) -> Option<usize> {
        self.expected_dim
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), VarietyError> {
        if x.len() != self.ambient_dim {
            return Err(VarietyError::Dimension { expected: self.ambient_dim, got: x.len() });
        }
        Ok(())
    }

    /// Largest generator magnitude at `x`.
    pub fn residual(&self, x: &DVector<f64>) -> Result<f64, VarietyError> {
        self.check_dim(x)?;
        let mut worst = 0.0f64;
        for g in &self.generators {
            worst = worst.max(g.eval(x)?.abs());
        }
        Ok(worst)
    }

    pub fn membership(&self, x: &DVector<f64>, tol: f64) -> Result<bool, VarietyError> {
        Ok(self.residual(x)? <= tol)
    }

    /// Generator values stacked into a vector (fixed generator order).
    pub fn eval_generators(&self, x: &DVector<f64>) -> Result<DVector<f64>, VarietyError> {
        self.check_dim(x)?;
        let mut v = DVector::zeros(self.generators.len());
        for (i, g) in self.generators.iter().enumerate() {
            v[i] = g.eval(x)?;
        }
        Ok(v)
    }

    /// Jacobian of the generators at `x`: entry (j, k) = d l_j / d x_k.
    pub fn jacobian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, VarietyError> {
        self.check_dim(x)?;
        let mut jac = DMatrix::zeros(self.generators.len(), self.ambient_dim);
        for (j, grads) in self.gradients.iter().enumerate() {
            for (k, g) in grads.iter().enumerate() {
                jac[(j, k)] = g.eval(x)?;
            }
        }
        Ok(jac)
    }

    /// Jacobian rank at `x` with relative singular-value cutoff `tol`.
    pub fn jacobian_rank(&self, x: &DVector<f64>, tol: f64) -> Result<usize, VarietyError> {
        let jac = self.jacobian_at(x)?;
        if jac.nrows() == 0 {
            return Ok(0);
        }
        let sv = jac.svd(false, false).singular_values;
        let cutoff = tol * sv.max();
        Ok(sv.iter().filter(|&&s| s > cutoff).count())
    }

    /// Orthonormal basis of the Jacobian null space at a point of the variety.
    ///
    /// `x` must satisfy membership at `tol`-scale; if `expected_dim` is set and
    /// the frame dimension disagrees, the point is reported as singular.
    pub fn tangent_frame(&self, x: &DVector<f64>, tol: f64) -> Result<TangentFrame, VarietyError> {
        let membership_tol = tol.max(1e-12).sqrt().max(1e-8);
        let residual = self.residual(x)?;
        if residual > membership_tol {
            return Err(VarietyError::NotOnVariety { residual, tol: membership_tol });
        }
        let basis = self.nullspace_at(x, tol)?;
        if let Some(expected) = self.expected_dim {
            if basis.len() != expected {
                return Err(VarietyError::SingularPoint { expected, got: basis.len() });
            }
        }
        Ok(TangentFrame { base_point: x.clone(), basis })
    }

    /// Null space of the Jacobian via the eigendecomposition of J^T J, which
    /// (unlike a thin SVD) always yields the full orthonormal complement.
    fn nullspace_at(&self, x: &DVector<f64>, tol: f64) -> Result<Vec<DVector<f64>>, VarietyError> {
        let jac = self.jacobian_at(x)?;
        let n = self.ambient_dim;
        if jac.nrows() == 0 {
            return Ok((0..n).map(|i| DVector::from_fn(n, |k, _| f64::from(u8::from(k == i)))).collect());
        }
        let jtj = jac.transpose() * &jac;
        let eig = jtj.symmetric_eigen();
        let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        // Numerically zero eigenvalues land near eps * lambda_max, so the
        // squared-tolerance cutoff is floored there.
        let cutoff = (tol * tol).max(256.0 * f64::EPSILON) * lambda_max;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let mut basis = Vec::new();
        for &i in &order {
            if eig.eigenvalues[i] <= cutoff {
                basis.push(eig.eigenvectors.column(i).into_owned());
            }
        }
        Ok(basis)
    }

    /// Variety dimension as ambient dimension minus Jacobian rank, required to
    /// agree across all sample points.
    pub fn dimension_estimate(
        &self,
        samples: &[DVector<f64>],
        tol: f64,
    ) -> Result<usize, VarietyError> {
        assert!(!samples.is_empty(), "dimension estimate needs at least one sample");
        let mut dims = Vec::with_capacity(samples.len());
        for x in samples {
            dims.push(self.ambient_dim - self.jacobian_rank(x, tol)?);
        }
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(VarietyError::InconsistentDimension(dims));
        }
        let dim = dims[0];
        if let Some(expected) = self.expected_dim {
            if dim != expected {
                return Err(VarietyError::SingularPoint { expected, got: dim });
            }
        }
        Ok(dim)
    }

    /// Nearest-point projection onto the variety by damped Gauss-Newton on the
    /// generator residuals.
    pub fn project(&self, start: &DVector<f64>, tol: f64) -> Result<DVector<f64>, VarietyError> {
        self.check_dim(start)?;
        let mut x = start.clone();
        let mut res = self.eval_generators(&x)?;
        let mut norm = res.amax().max(0.0);
        if self.generators.is_empty() {
            return Ok(x);
        }
        for _ in 0..80 {
            if norm <= tol {
                return Ok(x);
            }
            let jac = self.jacobian_at(&x)?;
            let svd = jac.svd(true, true);
            let step = svd
                .solve(&res, 1e-13)
                .map_err(|_| VarietyError::ProjectionFailed { residual: norm })?;
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let cand = &x - &step * alpha;
                let cres = self.eval_generators(&cand)?;
                let cnorm = cres.amax().max(0.0);
                if cnorm < norm {
                    x = cand;
                    res = cres;
                    norm = cnorm;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if norm <= tol {
            Ok(x)
        } else {
            Err(VarietyError::ProjectionFailed { residual: norm })
        }
    }

    /// Deterministic seeded sampling: Gaussian draws over a cycle of radii,
    /// projected onto the variety.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>, VarietyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radii = [1.0, 2.0, 0.5, 4.0];
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        let budget = 200 * count.max(1);
        while out.len() < count && attempts < budget {
            let radius = radii[attempts % radii.len()];
            let draw = DVector::from_fn(self.ambient_dim, |_, _| {
                radius * gaussian(&mut rng)
            });
            attempts += 1;
            if let Ok(x) = self.project(&draw, 1e-11) {
                out.push(x);
            }
        }
        if out.len() < count {
            return Err(VarietyError::SamplingFailed { requested: count, found: out.len() });
        }
        Ok(out)
    }

    /// Dimension of the affine hull of the variety, estimated from the rank of
    /// centered sample points.
    pub fn hull_dimension_estimate(&self, seed: u64, tol: f64) -> Result<usize, VarietyError> {
        let count = 2 * (self.ambient_dim + 1);
        let pts = self.sample(count, seed)?;
        let base = &pts[0];
        let mut mat = DMatrix::zeros(pts.len() - 1, self.ambient_dim);
        for (i, p) in pts.iter().skip(1).enumerate() {
            mat.set_row(i, &(p - base).transpose());
        }
        let sv = mat.svd(false, false).singular_values;
        let cutoff = tol * sv.max().max(1.0);
        Ok(sv.iter().filter(|&&s| s > cutoff).count())
    }
}

/// Standard normal draw (Box-Muller, deterministic for a seeded generator).
pub(crate) fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
