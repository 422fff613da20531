//! Entanglement of formation by ensemble search and by convex roof.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::basis::{gellmann, tensor_product, Convention, OperatorBasis};
use super::measure::{measure_f_a_pure, measure_polynomial};
use super::state::{support_restricted_variety, CoefficientVector, DensityMatrix};
use super::QuantumError;
use crate::roof::{mix_seed, Decomposition, OracleOptions, RoofProblem, RoofSense};
use crate::variety::gaussian;

/// Eigenvalues below this count as outside the support.
const RANK_CUTOFF: f64 = 1e-12;

/// Largest total dimension the optimizers accept.
const SCALE_CAP: usize = 4;

/// Pure-state ensemble realizing a mixed state.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub weights: Vec<f64>,
    pub states: Vec<DVector<Complex64>>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Largest entry of sum_j q_j |psi_j><psi_j| - rho.
    pub fn reconstruction_residual(&self, rho: &DensityMatrix) -> f64 {
        let dim = rho.dim();
        let mut mix: DMatrix<Complex64> = DMatrix::zeros(dim, dim);
        for (q, psi) in self.weights.iter().zip(&self.states) {
            mix += psi * psi.adjoint() * Complex64::new(*q, 0.0);
        }
        (mix - rho.matrix()).map(|z| z.norm()).max()
    }

    /// Ensemble average of the pure-state measure.
    pub fn average_measure(
        &self,
        mdim: usize,
        ndim: usize,
        a: u32,
    ) -> Result<f64, QuantumError> {
        let mut total = 0.0;
        for (q, psi) in self.weights.iter().zip(&self.states) {
            total += q * measure_f_a_pure(psi, mdim, ndim, a)?;
        }
        Ok(total)
    }
}

/// Haar-ish random s x r factor with orthonormal columns.
pub fn random_right_unitary(
    s: usize,
    r: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<Complex64>, QuantumError> {
    if s < r || r == 0 {
        return Err(QuantumError::Dimension { expected: r, got: s });
    }
    let g = DMatrix::from_fn(s, r, |_, _| Complex64::new(gaussian(rng), gaussian(rng)));
    Ok(g.qr().q())
}

/// Ensemble |v_j> = sum_k conj(U_{jk}) sqrt(p_k) |u_k> induced by a
/// right-unitary U on the eigenensemble; every ensemble of at most s pure
/// states realizing rho arises this way.
pub fn hjw_ensemble(
    rho: &DensityMatrix,
    u: &DMatrix<Complex64>,
) -> Result<Ensemble, QuantumError> {
    let (values, vectors) = rho.eigenpairs();
    let rank = values.iter().filter(|&&v| v > RANK_CUTOFF).count();
    if u.ncols() != rank {
        return Err(QuantumError::Dimension { expected: rank, got: u.ncols() });
    }
    if u.nrows() < rank {
        return Err(QuantumError::Dimension { expected: rank, got: u.nrows() });
    }
    let ortho = (u.adjoint() * u - DMatrix::<Complex64>::identity(rank, rank))
        .map(|z| z.norm())
        .max();
    if ortho > 1e-10 {
        return Err(QuantumError::NotUnitary { residual: ortho });
    }
    let ubar: Vec<DVector<Complex64>> = (0..rank)
        .map(|k| &vectors[k] * Complex64::new(values[k].max(0.0).sqrt(), 0.0))
        .collect();
    let mut weights = Vec::new();
    let mut states = Vec::new();
    for j in 0..u.nrows() {
        let mut v: DVector<Complex64> = DVector::zeros(rho.dim());
        for (k, uk) in ubar.iter().enumerate() {
            v += uk * u[(j, k)].conj();
        }
        let q = v.norm_squared();
        if q <= 1e-14 {
            continue;
        }
        weights.push(q);
        states.push(v / Complex64::new(q.sqrt(), 0.0));
    }
    let ensemble = Ensemble { weights, states };
    let residual = ensemble.reconstruction_residual(rho);
    if residual > 1e-10 {
        return Err(QuantumError::Reconstruction { residual });
    }
    Ok(ensemble)
}

/// How the minimization over ensembles is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EofStrategy {
    /// Direct search over right-unitary mixing factors.
    UnitarySearch,
    /// Convex roof of the polynomial measure over the coefficient variety.
    PoincareRoof,
}

/// Tuning knobs for the formation optimizers.
#[derive(Debug, Clone)]
pub struct EofOptions {
    /// Order of the trace measure f_a.
    pub a: u32,
    pub strategy: EofStrategy,
    pub seed: u64,
    /// Restarts per ensemble size (unitary search) or oracle restarts
    /// (convex roof).
    pub restarts: usize,
    /// Largest ensemble size tried by the unitary search; defaults to
    /// rank + 2.
    pub s_max: Option<usize>,
}

impl Default for EofOptions {
    fn default() -> Self {
        Self { a: 2, strategy: EofStrategy::UnitarySearch, seed: 1, restarts: 64, s_max: None }
    }
}

/// Optimal value together with the realizing ensemble.
#[derive(Debug, Clone)]
pub struct EofResult {
    pub value: f64,
    pub ensemble: Ensemble,
}

/// Minimal ensemble-average measure sum_j q_j f_a(psi_j) over all pure
/// decompositions of a state on C^M (x) C^N.
pub fn entanglement_of_formation(
    rho: &DensityMatrix,
    mdim: usize,
    ndim: usize,
    opts: &EofOptions,
) -> Result<EofResult, QuantumError> {
    if mdim * ndim != rho.dim() {
        return Err(QuantumError::Dimension { expected: rho.dim(), got: mdim * ndim });
    }
    if rho.dim() > SCALE_CAP {
        return Err(QuantumError::UnsupportedScale { got: rho.dim(), cap: SCALE_CAP });
    }
    if opts.a < 2 {
        return Err(QuantumError::MeasureOrder { got: opts.a });
    }
    let (values, vectors) = rho.eigenpairs();
    let rank = values.iter().filter(|&&v| v > RANK_CUTOFF).count();
    if rank == 1 {
        let psi = vectors[0].clone();
        let value = measure_f_a_pure(&psi, mdim, ndim, opts.a)?;
        return Ok(EofResult {
            value,
            ensemble: Ensemble { weights: vec![1.0], states: vec![psi] },
        });
    }
    match opts.strategy {
        EofStrategy::UnitarySearch => unitary_search(rho, mdim, ndim, opts, rank),
        EofStrategy::PoincareRoof => poincare_roof(rho, mdim, ndim, opts, rank),
    }
}

/// Average measure of the ensemble induced by the chart point `x`.
fn ensemble_cost(
    u: &DMatrix<Complex64>,
    ubar: &[DVector<Complex64>],
    mdim: usize,
    ndim: usize,
    a: u32,
) -> f64 {
    let mut cost = 0.0;
    for j in 0..u.nrows() {
        let mut v: DVector<Complex64> = DVector::zeros(mdim * ndim);
        for (k, uk) in ubar.iter().enumerate() {
            v += uk * u[(j, k)].conj();
        }
        // Unnormalized reduction: A = tr_B |v><v| with tr A = q_j.
        let red = DMatrix::from_fn(mdim, mdim, |i, i2| {
            (0..ndim).map(|b| v[i * ndim + b] * v[i2 * ndim + b].conj()).sum::<Complex64>()
        });
        let q: f64 = (0..mdim).map(|i| red[(i, i)].re).sum();
        if q <= 1e-14 {
            continue;
        }
        let eig = red.symmetric_eigen();
        let power: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).powi(a as i32)).sum();
        cost += 2.0 * (q - q.powi(1 - a as i32) * power);
    }
    cost
}

/// Unpacks 2sr reals into an s x r right-unitary via a thin QR factor.
fn chart(x: &DVector<f64>, s: usize, r: usize) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(s, r, |j, k| {
        let idx = 2 * (j * r + k);
        Complex64::new(x[idx], x[idx + 1])
    });
    g.qr().q()
}

fn identity_chart(s: usize, r: usize) -> DVector<f64> {
    let mut x = DVector::zeros(2 * s * r);
    for k in 0..r {
        x[2 * (k * r + k)] = 1.0;
    }
    x
}

fn unitary_search(
    rho: &DensityMatrix,
    mdim: usize,
    ndim: usize,
    opts: &EofOptions,
    rank: usize,
) -> Result<EofResult, QuantumError> {
    let (values, vectors) = rho.eigenpairs();
    let ubar: Vec<DVector<Complex64>> = (0..rank)
        .map(|k| &vectors[k] * Complex64::new(values[k].max(0.0).sqrt(), 0.0))
        .collect();
    let s_max = opts.s_max.unwrap_or(rank + 2).max(rank);
    let restarts = opts.restarts.max(1);
    // (value, s, restart, chart point), minimized lexicographically so the
    // parallel sweep stays deterministic.
    let mut best: Option<(f64, usize, usize, DVector<f64>)> = None;
    for s in rank..=s_max {
        let dof = 2 * s * rank;
        let iters = 200 + 60 * dof;
        let outcomes: Vec<(f64, usize, DVector<f64>)> = (0..restarts)
            .into_par_iter()
            .map(|t| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, s as u64, t as u64));
                let x0 = if t == 0 {
                    identity_chart(s, rank)
                } else {
                    DVector::from_fn(dof, |_, _| gaussian(&mut rng))
                };
                let (x, value) = nelder_mead(
                    |x| ensemble_cost(&chart(x, s, rank), &ubar, mdim, ndim, opts.a),
                    &x0,
                    0.5,
                    iters,
                );
                (value, t, x)
            })
            .collect();
        for (value, t, x) in outcomes {
            let better = match &best {
                None => true,
                Some((bv, bs, bt, _)) => {
                    (value, s, t) < (*bv, *bs, *bt)
                }
            };
            if better {
                best = Some((value, s, t, x));
            }
        }
    }
    let (value, s, _, x) = best.expect("at least one restart ran");
    let ensemble = hjw_ensemble(rho, &chart(&x, s, rank))?;
    Ok(EofResult { value, ensemble })
}

fn ensemble_to_decomposition(
    ensemble: &Ensemble,
    basis: &Arc<OperatorBasis>,
) -> Result<Decomposition, QuantumError> {
    let mut points = Vec::with_capacity(ensemble.len());
    for psi in &ensemble.states {
        let rho = DensityMatrix::from_pure(psi)?;
        let c = CoefficientVector::embed(&rho, basis, Convention::Plain)?;
        points.push(c.values().iter().cloned().collect());
    }
    Ok(Decomposition::new(points, ensemble.weights.clone()))
}

fn poincare_roof(
    rho: &DensityMatrix,
    mdim: usize,
    ndim: usize,
    opts: &EofOptions,
    rank: usize,
) -> Result<EofResult, QuantumError> {
    let (basis_a, _) = gellmann(mdim)?;
    let (basis_b, _) = gellmann(ndim)?;
    let pair = tensor_product(&basis_a, &basis_b)?;
    let slice = support_restricted_variety(rho, &pair, RANK_CUTOFF)?;
    let objective = measure_polynomial(&basis_a, ndim, opts.a)?;
    let target = CoefficientVector::embed(rho, &pair, Convention::Plain)?;
    // Mixing-factor ensembles give exact decompositions to warm start from.
    let mut warm_starts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 0x9A3F, rank as u64));
    let mut sizes = vec![rank];
    if slice.m_max() > rank {
        sizes.push((rank + 1).min(slice.m_max()));
        sizes.push(slice.m_max());
    }
    for (i, &s) in sizes.iter().enumerate() {
        let u = if i == 0 {
            DMatrix::<Complex64>::identity(rank, rank)
        } else {
            random_right_unitary(s, rank, &mut rng)?
        };
        warm_starts.push(ensemble_to_decomposition(&hjw_ensemble(rho, &u)?, &pair)?);
    }
    let m_max = slice.m_max();
    let problem = RoofProblem::new(slice.variety, objective, RoofSense::Convex)?
        .with_hull_dim(slice.hull_dim);
    let roof_opts = OracleOptions {
        m_max: Some(m_max),
        restarts: opts.restarts.max(1),
        seed: opts.seed,
        tol: 1e-9,
        warm_starts,
        max_outer: 120,
    };
    let rv = problem.oracle(&target.values().clone_owned(), &roof_opts)?;
    let mut weights = Vec::with_capacity(rv.decomposition.len());
    let mut states = Vec::with_capacity(rv.decomposition.len());
    for j in 0..rv.decomposition.len() {
        let c = CoefficientVector::from_values(
            rv.decomposition.point(j),
            &pair,
            Convention::Plain,
        )?;
        let eig = c.unembed_matrix().symmetric_eigen();
        let mut top = 0;
        for i in 1..eig.eigenvalues.len() {
            if eig.eigenvalues[i] > eig.eigenvalues[top] {
                top = i;
            }
        }
        let v = eig.eigenvectors.column(top).into_owned();
        weights.push(rv.decomposition.weights[j]);
        states.push(&v / Complex64::new(v.norm(), 0.0));
    }
    Ok(EofResult { value: rv.value, ensemble: Ensemble { weights, states } })
}

/// Compact Nelder-Mead minimizer; returns the best vertex and its value.
fn nelder_mead<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    x0: &DVector<f64>,
    step: f64,
    max_iters: usize,
) -> (DVector<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.clone(), f(x0)));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if worst - best <= 1e-12 * (1.0 + best.abs()) {
            break;
        }
        let mut centroid: DVector<f64> = DVector::zeros(n);
        for entry in &simplex[..n] {
            centroid += &entry.0;
        }
        centroid /= n as f64;
        let reflected = &centroid * 2.0 - &simplex[n].0;
        let fr = f(&reflected);
        if fr < best {
            let expanded = &centroid * 3.0 - &simplex[n].0 * 2.0;
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = (&centroid + &simplex[n].0) * 0.5;
            let fc = f(&contracted);
            if fc < simplex[n].1 {
                simplex[n] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    entry.0 = (&entry.0 + &anchor) * 0.5;
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    (x, value)
}
