//! Convex and concave roof extensions of a function restricted to a variety.
//!
//! The roof value at a target r is the optimal value of
//!   minimize / maximize   sum_j p_j f(x_j)
//!   subject to            x_j on the variety, sum_j p_j x_j = r,
//!                         p_j >= 0, sum_j p_j = 1.
//! The oracle solves this by multi-start alternating minimization under a
//! quadratic penalty for the barycenter constraint, followed by a damped
//! Newton polish of the first-order optimality system and an exact
//! restoration of the weight constraints.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{PolyError, Polynomial};
use crate::variety::{gaussian, Variety, VarietyError, DEFAULT_RANK_TOL};

/// Barycenter residual above which a candidate counts as infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Distance below which two decomposition points are merged.
const MERGE_TOL: f64 = 1e-7;

/// Weights at or below this are dropped from a decomposition.
const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RoofError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Variety(#[from] VarietyError),
    #[error("objective has {got} variables but the variety lives in R^{expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid decomposition: {reason}")]
    InvalidDecomposition { reason: String },
    #[error("no admissible decomposition found (best barycenter gap {gap:.3e})")]
    Infeasible { gap: f64 },
}

/// Which boundary of the convex hull of the graph the roof follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoofSense {
    Convex,
    Concave,
}

impl RoofSense {
    /// Sign s such that minimizing s*f realizes this roof.
    pub fn sign(self) -> f64 {
        match self {
            RoofSense::Convex => 1.0,
            RoofSense::Concave => -1.0,
        }
    }
}

/// Weighted point ensemble representing a roof decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Decomposition {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.points[j])
    }

    pub fn barycenter(&self) -> DVector<f64> {
        let n = self.points.first().map_or(0, Vec::len);
        let mut out = DVector::zeros(n);
        for (p, w) in self.points.iter().zip(&self.weights) {
            out += DVector::from_column_slice(p) * *w;
        }
        out
    }

    /// Sorts the ensemble by point coordinates so equal decompositions
    /// serialize identically. Coordinates within solver noise of each other
    /// compare equal, so the order does not flip on 1e-13 perturbations.
    pub fn canonicalize(&mut self) {
        const COORD_TOL: f64 = 1e-7;
        let mut pairs: Vec<(Vec<f64>, f64)> =
            self.points.drain(..).zip(self.weights.drain(..)).collect();
        pairs.sort_by(|a, b| {
            for (x, y) in a.0.iter().zip(&b.0) {
                if (x - y).abs() > COORD_TOL {
                    return x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal);
                }
            }
            std::cmp::Ordering::Equal
        });
        for (p, w) in pairs {
            self.points.push(p);
            self.weights.push(w);
        }
    }
}

/// Roof value together with the decomposition that attains it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoofValue {
    pub value: f64,
    pub decomposition: Decomposition,
    /// Barycenter constraint residual of the returned decomposition.
    pub constraint_residual: f64,
    /// Max-norm residual of the first-order optimality system, when the
    /// Newton polish converged.
    pub kkt_residual: Option<f64>,
}

/// Best value found for each ensemble size in a sweep.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub best: RoofValue,
    /// Entry k holds the best result using exactly k+1 points, if feasible.
    pub per_size: Vec<Option<RoofValue>>,
}

/// Tuning knobs for the roof oracle.
#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Largest ensemble size to try; defaults to hull dimension + 1.
    pub m_max: Option<usize>,
    /// Random restarts per ensemble size.
    pub restarts: usize,
    /// Seed for all randomized choices; equal seeds give identical results.
    pub seed: u64,
    /// Target accuracy of the optimality polish.
    pub tol: f64,
    /// Decompositions used to warm start the search.
    pub warm_starts: Vec<Decomposition>,
    /// Outer iteration cap of the penalty loop.
    pub max_outer: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            m_max: None,
            restarts: 64,
            seed: 1,
            tol: 1e-8,
            warm_starts: Vec::new(),
            max_outer: 120,
        }
    }
}

impl OracleOptions {
    /// Barycenter residual accepted as feasible; tightens with `tol` so a
    /// stricter polish target also narrows the constraint slack.
    fn feasibility_goal(&self) -> f64 {
        FEASIBILITY_TOL.min(self.tol * 100.0)
    }
}

/// One oracle evaluation on a grid of targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEntry {
    pub target: Vec<f64>,
    pub feasible: bool,
    pub value: Option<f64>,
    pub decomposition: Option<Decomposition>,
}

/// A roof extension problem: variety, objective, and boundary sense.
#[derive(Debug)]
pub struct RoofProblem {
    variety: Variety,
    objective: Polynomial,
    sense: RoofSense,
    hull_dim: OnceLock<usize>,
    hull_dim_override: Option<usize>,
}

impl RoofProblem {
    pub fn new(
        variety: Variety,
        objective: Polynomial,
        sense: RoofSense,
    ) -> Result<Self, RoofError> {
        if objective.nvars() != variety.ambient_dim() {
            return Err(RoofError::Dimension {
                expected: variety.ambient_dim(),
                got: objective.nvars(),
            });
        }
        Ok(Self { variety, objective, sense, hull_dim: OnceLock::new(), hull_dim_override: None })
    }

    /// Overrides the sampled affine hull dimension with a known value.
    pub fn with_hull_dim(mut self, dim: usize) -> Self {
        self.hull_dim_override = Some(dim);
        self
    }

    pub fn variety(&self) -> &Variety {
        &self.variety
    }

    pub fn objective(&self) -> &Polynomial {
        &self.objective
    }

    pub fn sense(&self) -> RoofSense {
        self.sense
    }

    /// Affine hull dimension of the variety, sampled once and cached.
    pub fn hull_dim(&self) -> usize {
        if let Some(d) = self.hull_dim_override {
            return d;
        }
        *self.hull_dim.get_or_init(|| {
            self.variety
                .hull_dimension_estimate(0xD1CE, DEFAULT_RANK_TOL)
                .unwrap_or(self.variety.ambient_dim())
        })
    }

    /// Default ensemble size bound from the hull dimension.
    pub fn default_m_max(&self) -> usize {
        self.hull_dim() + 1
    }

    /// Ensemble average of the objective, in the original orientation.
    pub fn decomposition_value(&self, dec: &Decomposition) -> Result<f64, RoofError> {
        let mut value = 0.0;
        for j in 0..dec.len() {
            value += dec.weights[j] * self.objective.eval(&dec.point(j))?;
        }
        Ok(value)
    }

    /// Checks weights, normalization, membership, and the size bound.
    pub fn validate_decomposition(
        &self,
        dec: &Decomposition,
        membership_tol: f64,
    ) -> Result<(), RoofError> {
        if dec.points.len() != dec.weights.len() {
            return Err(RoofError::InvalidDecomposition {
                reason: format!("{} points but {} weights", dec.points.len(), dec.weights.len()),
            });
        }
        if dec.is_empty() {
            return Err(RoofError::InvalidDecomposition { reason: "empty ensemble".into() });
        }
        if dec.len() > self.default_m_max() {
            return Err(RoofError::InvalidDecomposition {
                reason: format!(
                    "{} points exceed the size bound {}",
                    dec.len(),
                    self.default_m_max()
                ),
            });
        }
        let mut total = 0.0;
        for &w in &dec.weights {
            if w < -1e-10 {
                return Err(RoofError::InvalidDecomposition {
                    reason: format!("negative weight {w:.3e}"),
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(RoofError::InvalidDecomposition {
                reason: format!("weights sum to {total:.12} instead of 1"),
            });
        }
        for j in 0..dec.len() {
            let x = dec.point(j);
            let res = self.variety.residual(&x)?;
            if res > membership_tol {
                return Err(RoofError::InvalidDecomposition {
                    reason: format!("point {j} off the variety by {res:.3e}"),
                });
            }
        }
        Ok(())
    }

    /// Roof value at `target`, keeping only the best decomposition.
    pub fn oracle(
        &self,
        target: &DVector<f64>,
        opts: &OracleOptions,
    ) -> Result<RoofValue, RoofError> {
        Ok(self.oracle_detailed(target, opts)?.best)
    }

    /// Roof value at `target` with the best result for every ensemble size.
    pub fn oracle_detailed(
        &self,
        target: &DVector<f64>,
        opts: &OracleOptions,
    ) -> Result<OracleReport, RoofError> {
        let n = self.variety.ambient_dim();
        if target.len() != n {
            return Err(RoofError::Dimension { expected: n, got: target.len() });
        }
        let m_max = opts.m_max.unwrap_or_else(|| self.default_m_max()).max(1);
        let model = PolishModel::new(self);
        let mut per_size: Vec<Option<RoofValue>> = vec![None; m_max];
        let mut best_gap = f64::INFINITY;
        let mut carried: Option<Decomposition> = None;

        for m in 1..=m_max {
            match self.solve_for_size(target, m, opts, &model, carried.as_ref()) {
                SizeOutcome::Feasible(rv) => {
                    carried = Some(rv.decomposition.clone());
                    per_size[m - 1] = Some(rv);
                }
                SizeOutcome::Infeasible(gap) => {
                    best_gap = best_gap.min(gap);
                }
            }
        }

        let mut best: Option<RoofValue> = None;
        for rv in per_size.iter().flatten() {
            let better = match &best {
                None => true,
                Some(b) => {
                    let delta = self.sense.sign() * (rv.value - b.value);
                    delta < -1e-12
                        || (delta.abs() <= 1e-12 && rv.decomposition.len() < b.decomposition.len())
                }
            };
            if better {
                best = Some(rv.clone());
            }
        }
        match best {
            Some(best) => Ok(OracleReport { best, per_size }),
            None => Err(RoofError::Infeasible { gap: best_gap }),
        }
    }

    /// Oracle evaluation over many targets in parallel, order preserving.
    pub fn grid(&self, targets: &[DVector<f64>], opts: &OracleOptions) -> Vec<GridEntry> {
        // Touch the cache before the parallel region so rayon workers share it.
        let _ = self.hull_dim();
        targets
            .par_iter()
            .enumerate()
            .map(|(idx, target)| {
                let mut local = opts.clone();
                local.seed = mix_seed(opts.seed, idx as u64 + 1, 0x9e3779b97f4a7c15);
                match self.oracle(target, &local) {
                    Ok(rv) => GridEntry {
                        target: target.iter().cloned().collect(),
                        feasible: true,
                        value: Some(rv.value),
                        decomposition: Some(rv.decomposition),
                    },
                    Err(_) => GridEntry {
                        target: target.iter().cloned().collect(),
                        feasible: false,
                        value: None,
                        decomposition: None,
                    },
                }
            })
            .collect()
    }

    /// Tests whether the roof is affine across the polytope spanned by a
    /// decomposition, by comparing interior oracle values with the linear
    /// interpolant of the objective.
    pub fn is_affine_on_polytope(
        &self,
        dec: &Decomposition,
        samples: usize,
        tol: f64,
        opts: &OracleOptions,
    ) -> Result<bool, RoofError> {
        self.validate_decomposition(dec, 1e-8)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 0xAFF1, dec.len() as u64));
        let m = dec.len();
        for _ in 0..samples {
            // Dirichlet(1) interior weights.
            let mut q: Vec<f64> = (0..m)
                .map(|_| -(rng.gen_range(f64::EPSILON..1.0f64)).ln())
                .collect();
            let total: f64 = q.iter().sum();
            q.iter_mut().for_each(|w| *w /= total);
            let mut target = DVector::zeros(self.variety.ambient_dim());
            let mut interp = 0.0;
            for j in 0..m {
                let x = dec.point(j);
                interp += q[j] * self.objective.eval(&x)?;
                target += x * q[j];
            }
            let mut local = opts.clone();
            local.warm_starts = vec![Decomposition::new(dec.points.clone(), q)];
            local.restarts = opts.restarts.clamp(4, 12);
            local.m_max = Some(m);
            let rv = self.oracle(&target, &local)?;
            if (rv.value - interp).abs() > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Best decomposition of exactly `m` points, or the smallest gap seen.
    fn solve_for_size(
        &self,
        target: &DVector<f64>,
        m: usize,
        opts: &OracleOptions,
        model: &PolishModel,
        carried: Option<&Decomposition>,
    ) -> SizeOutcome {
        // One point must reproduce the target exactly, so it only works on V.
        if m == 1 {
            return match self.variety.project(target, 1e-11) {
                Ok(x) if (&x - target).amax() <= 1e-7 => {
                    let dec = Decomposition::new(vec![x.iter().cloned().collect()], vec![1.0]);
                    match self.finish(target, dec, model, opts) {
                        Some(rv) if rv.decomposition.len() == 1 => SizeOutcome::Feasible(rv),
                        _ => SizeOutcome::Infeasible(f64::INFINITY),
                    }
                }
                Ok(x) => SizeOutcome::Infeasible((&x - target).amax()),
                Err(_) => SizeOutcome::Infeasible(f64::INFINITY),
            };
        }

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, m as u64, 0xC0FFEE));
        let mut warm: Vec<&Decomposition> = opts.warm_starts.iter().collect();
        if let Some(dec) = carried {
            warm.push(dec);
        }
        let pool = self.candidate_pool(target, m, opts, &warm, &mut rng);
        if pool.is_empty() {
            return SizeOutcome::Infeasible(f64::INFINITY);
        }

        // Warm starts first (exact, then perturbed), then fresh random starts.
        let mut starts: Vec<(Vec<DVector<f64>>, Vec<f64>)> = Vec::new();
        for dec in &warm {
            for &sigma in &[0.0, 0.05, 0.2] {
                if let Some(start) = self.warm_start(dec, m, sigma, &pool, &mut rng) {
                    starts.push(start);
                }
            }
        }
        while starts.len() < opts.restarts {
            let mut pts = Vec::with_capacity(m);
            for _ in 0..m {
                pts.push(pool[rng.gen_range(0..pool.len())].clone());
            }
            let mut p: Vec<f64> =
                (0..m).map(|_| -(rng.gen_range(f64::EPSILON..1.0f64)).ln()).collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|w| *w /= total);
            starts.push((pts, p));
        }

        let mut best: Option<RoofValue> = None;
        let mut best_gap = f64::INFINITY;
        let mut stale = 0usize;
        // Early-stop threshold scales with the restart budget so that raising
        // `restarts` keeps buying additional basin exploration.
        let stale_cap = 12usize.max(opts.restarts / 2);
        for (pts0, p0) in starts {
            let (pts, p, gap) = self.alternating_minimization(target, pts0, p0, model, opts);
            best_gap = best_gap.min(gap);
            if gap > 1e-4 {
                continue;
            }
            let dec = assemble(&pts, &p);
            if dec.len() != m {
                // Collapsed onto fewer points: belongs to a smaller size class.
                continue;
            }
            if let Some(rv) = self.finish(target, dec, model, opts) {
                if rv.decomposition.len() != m {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some(b) => self.sense.sign() * (rv.value - b.value) < -1e-12,
                };
                if better {
                    best = Some(rv);
                    stale = 0;
                } else {
                    stale += 1;
                }
                // Many consecutive restarts without improvement: stop early.
                if stale >= stale_cap && best.is_some() {
                    break;
                }
            }
        }
        match best {
            Some(rv) => SizeOutcome::Feasible(rv),
            None => SizeOutcome::Infeasible(best_gap),
        }
    }

    /// Candidate points for restarts: seeded variety samples, the projected
    /// target, and projected perturbations of any warm-start points.
    fn candidate_pool(
        &self,
        target: &DVector<f64>,
        m: usize,
        opts: &OracleOptions,
        warm: &[&Decomposition],
        rng: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>> {
        let n = self.variety.ambient_dim();
        let count = (4 * m).max(16);
        let mut pool = self
            .variety
            .sample(count, mix_seed(opts.seed, m as u64, 0x9001))
            .unwrap_or_default();
        if let Ok(x) = self.variety.project(target, 1e-11) {
            pool.push(x);
        }
        for dec in warm {
            for j in 0..dec.len() {
                let mut x = dec.point(j);
                pool.push(x.clone());
                for i in 0..n {
                    x[i] += 0.3 * gaussian(rng);
                }
                if let Ok(y) = self.variety.project(&x, 1e-11) {
                    pool.push(y);
                }
            }
        }
        pool
    }

    fn warm_start(
        &self,
        dec: &Decomposition,
        m: usize,
        sigma: f64,
        pool: &[DVector<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Option<(Vec<DVector<f64>>, Vec<f64>)> {
        if dec.is_empty() || dec.len() > m {
            return None;
        }
        let n = self.variety.ambient_dim();
        let mut pts = Vec::with_capacity(m);
        let mut p = Vec::with_capacity(m);
        for j in 0..dec.len() {
            let mut x = dec.point(j);
            if sigma > 0.0 {
                for i in 0..n {
                    x[i] += sigma * gaussian(rng);
                }
                x = self.variety.project(&x, 1e-11).ok()?;
            }
            pts.push(x);
            p.push(dec.weights[j].max(1e-6));
        }
        while pts.len() < m {
            pts.push(pool[rng.gen_range(0..pool.len())].clone());
            p.push(1e-3);
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|w| *w /= total);
        Some((pts, p))
    }

    /// Penalty-based alternating minimization; returns points, weights, and
    /// the final barycenter gap.
    fn alternating_minimization(
        &self,
        target: &DVector<f64>,
        mut pts: Vec<DVector<f64>>,
        mut p: Vec<f64>,
        model: &PolishModel,
        opts: &OracleOptions,
    ) -> (Vec<DVector<f64>>, Vec<f64>, f64) {
        let mut mu = 10.0f64;
        let mut merit_prev = f64::INFINITY;
        let mut stall = 0usize;
        let goal = 0.3 * opts.feasibility_goal();
        let mu_cap = 1e7 * (FEASIBILITY_TOL / opts.feasibility_goal());
        for _ in 0..opts.max_outer {
            self.weight_step(target, &pts, &mut p, mu);
            self.point_step(target, &mut pts, &p, mu, model);
            let gap = (barycenter(&pts, &p) - target).amax();
            let merit = self.tilde_ensemble_value(&pts, &p, model) + mu * gap * gap;
            if gap <= goal && merit >= merit_prev - 1e-11 {
                stall += 1;
                if stall >= 3 {
                    break;
                }
            } else {
                stall = 0;
            }
            merit_prev = merit;
            if gap > goal {
                mu = (mu * 2.5).min(mu_cap);
            }
        }
        let gap = (barycenter(&pts, &p) - target).amax();
        (pts, p, gap)
    }

    fn tilde_ensemble_value(&self, pts: &[DVector<f64>], p: &[f64], model: &PolishModel) -> f64 {
        pts.iter()
            .zip(p)
            .map(|(x, w)| w * model.tilde.eval(x).unwrap_or(f64::INFINITY))
            .sum()
    }

    /// Exact active-set solve of the weight subproblem
    /// min c.p + mu |X p - r|^2 over the probability simplex.
    fn weight_step(&self, target: &DVector<f64>, pts: &[DVector<f64>], p: &mut [f64], mu: f64) {
        let m = pts.len();
        let n = target.len();
        let sign = self.sense.sign();
        let mut c = DVector::zeros(m);
        for (j, x) in pts.iter().enumerate() {
            c[j] = sign * self.objective.eval(x).unwrap_or(0.0);
        }
        let mut xmat = DMatrix::zeros(n, m);
        for (j, x) in pts.iter().enumerate() {
            xmat.set_column(j, x);
        }
        let gram = xmat.transpose() * &xmat * (2.0 * mu);
        let lin = xmat.transpose() * target * (2.0 * mu) - &c;
        let reg = 1e-10 * (1.0 + gram.diagonal().amax());

        let mut support: Vec<usize> = (0..m).collect();
        for _ in 0..(m + 2) {
            let k = support.len();
            // Equality-constrained QP on the current support.
            let mut lhs = DMatrix::zeros(k + 1, k + 1);
            let mut rhs = DVector::zeros(k + 1);
            for (a, &ja) in support.iter().enumerate() {
                for (b, &jb) in support.iter().enumerate() {
                    lhs[(a, b)] = gram[(ja, jb)];
                }
                lhs[(a, a)] += reg;
                lhs[(a, k)] = 1.0;
                lhs[(k, a)] = 1.0;
                rhs[a] = lin[ja];
            }
            rhs[k] = 1.0;
            let Ok(sol) = lhs.svd(true, true).solve(&rhs, 1e-13) else { break };
            let q = sol.rows(0, k).into_owned();
            if let Some(worst) = (0..k).filter(|&a| q[a] < -1e-12).min_by(|&a, &b| {
                q[a].partial_cmp(&q[b]).unwrap_or(std::cmp::Ordering::Equal)
            }) {
                if support.len() <= 1 {
                    break;
                }
                support.remove(worst);
                continue;
            }
            p.iter_mut().for_each(|w| *w = 0.0);
            for (a, &ja) in support.iter().enumerate() {
                p[ja] = q[a].max(0.0);
            }
            let total: f64 = p.iter().sum();
            if total > 0.0 {
                p.iter_mut().for_each(|w| *w /= total);
            }
            return;
        }
        // Fallback: keep previous weights, renormalized.
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|w| *w /= total);
        }
    }

    /// Riemannian gradient descent on each ensemble point with projection
    /// retraction back onto the variety.
    fn point_step(
        &self,
        target: &DVector<f64>,
        pts: &mut [DVector<f64>],
        p: &[f64],
        mu: f64,
        model: &PolishModel,
    ) {
        for _pass in 0..2 {
            for j in 0..pts.len() {
                if p[j] <= WEIGHT_FLOOR {
                    continue;
                }
                let bary = barycenter(pts, p);
                let mut grad = model.tilde_gradient(&pts[j]) * p[j];
                grad += (&bary - target) * (2.0 * mu * p[j]);
                let gt = match self.variety.tangent_frame(&pts[j], DEFAULT_RANK_TOL) {
                    Ok(frame) => frame.project(&grad),
                    Err(_) => grad.clone(),
                };
                let gnorm = gt.norm();
                if gnorm < 1e-14 {
                    continue;
                }
                let merit0 = self.local_merit(target, pts, p, mu, model);
                let mut alpha = 1.0 / (1.0 + gnorm);
                let old = pts[j].clone();
                for _ in 0..20 {
                    let trial = &old - &gt * alpha;
                    if let Ok(projected) = self.variety.project(&trial, 1e-11) {
                        pts[j] = projected;
                        if self.local_merit(target, pts, p, mu, model) < merit0 - 1e-15 {
                            break;
                        }
                        pts[j] = old.clone();
                    }
                    alpha *= 0.4;
                }
            }
        }
    }

    fn local_merit(
        &self,
        target: &DVector<f64>,
        pts: &[DVector<f64>],
        p: &[f64],
        mu: f64,
        model: &PolishModel,
    ) -> f64 {
        let gap = (barycenter(pts, p) - target).norm();
        self.tilde_ensemble_value(pts, p, model) + mu * gap * gap
    }

    /// Final cleanup of a candidate: polish, project, merge, restore, check.
    fn finish(
        &self,
        target: &DVector<f64>,
        dec: Decomposition,
        model: &PolishModel,
        opts: &OracleOptions,
    ) -> Option<RoofValue> {
        let mut pts: Vec<DVector<f64>> = (0..dec.len()).map(|j| dec.point(j)).collect();
        let mut p = dec.weights.clone();

        let polish = kkt_polish(self, target, &mut pts, &mut p, model, opts.tol);
        for x in pts.iter_mut() {
            if let Ok(better) = self.variety.project(x, 1e-12) {
                *x = better;
            }
        }
        let merged = assemble(&pts, &p);
        let mut pts: Vec<DVector<f64>> = (0..merged.len()).map(|j| merged.point(j)).collect();
        let mut p = merged.weights.clone();
        restore_weights(&pts, &mut p, target);
        let cleaned = assemble(&pts, &p);
        if cleaned.is_empty() {
            return None;
        }
        pts = (0..cleaned.len()).map(|j| cleaned.point(j)).collect();
        p = cleaned.weights.clone();
        restore_weights(&pts, &mut p, target);

        let gap = (barycenter(&pts, &p) - target).amax();
        if gap > opts.feasibility_goal() {
            return None;
        }
        for x in &pts {
            if self.variety.residual(x).ok()? > 1e-7 {
                return None;
            }
        }
        let total: f64 = p.iter().sum();
        if !(0.999_999..=1.000_001).contains(&total) {
            return None;
        }
        let mut out = Decomposition::new(
            pts.iter().map(|x| x.iter().cloned().collect()).collect(),
            p,
        );
        out.canonicalize();
        let value = self.decomposition_value(&out).ok()?;
        Some(RoofValue {
            value,
            decomposition: out,
            constraint_residual: gap,
            kkt_residual: polish,
        })
    }
}

enum SizeOutcome {
    Feasible(RoofValue),
    Infeasible(f64),
}

/// Writes grid entries as CSV with full-precision floats, padding ensembles
/// to `m_max` columns.
pub fn grid_to_csv(entries: &[GridEntry], ambient_dim: usize, m_max: usize) -> String {
    let mut out = String::new();
    for i in 0..ambient_dim {
        out.push_str(&format!("target_{},", i + 1));
    }
    out.push_str("feasible,value,size");
    for j in 0..m_max {
        out.push_str(&format!(",weight_{}", j + 1));
        for i in 0..ambient_dim {
            out.push_str(&format!(",point_{}_{}", j + 1, i + 1));
        }
    }
    out.push('\n');
    for entry in entries {
        for v in &entry.target {
            out.push_str(&format!("{},", fmt_float(*v)));
        }
        match (&entry.value, &entry.decomposition) {
            (Some(value), Some(dec)) => {
                out.push_str(&format!("true,{},{}", fmt_float(*value), dec.len()));
                for j in 0..m_max {
                    if j < dec.len() {
                        out.push_str(&format!(",{}", fmt_float(dec.weights[j])));
                        for i in 0..ambient_dim {
                            out.push_str(&format!(",{}", fmt_float(dec.points[j][i])));
                        }
                    } else {
                        out.push(',');
                        for _ in 0..ambient_dim {
                            out.push(',');
                        }
                    }
                }
            }
            _ => {
                out.push_str("false,,");
                for _ in 0..m_max {
                    out.push(',');
                    for _ in 0..ambient_dim {
                        out.push(',');
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Full-precision float formatting used by all text output.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Deterministic seed derivation for nested random processes.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E3779B97F4A7C15) ^ b.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn barycenter(pts: &[DVector<f64>], p: &[f64]) -> DVector<f64> {
    let n = pts.first().map_or(0, DVector::len);
    let mut out = DVector::zeros(n);
    for (x, w) in pts.iter().zip(p) {
        out += x * *w;
    }
    out
}

/// Min-norm correction of the weights so the barycenter and normalization
/// constraints hold exactly, clamping at the simplex boundary.
fn restore_weights(pts: &[DVector<f64>], p: &mut [f64], target: &DVector<f64>) {
    let m = pts.len();
    let n = target.len();
    if m == 0 {
        return;
    }
    let mut a = DMatrix::zeros(n + 1, m);
    for (j, x) in pts.iter().enumerate() {
        for i in 0..n {
            a[(i, j)] = x[i];
        }
        a[(n, j)] = 1.0;
    }
    let mut b = DVector::zeros(n + 1);
    for i in 0..n {
        b[i] = target[i];
    }
    b[n] = 1.0;
    let svd = a.clone().svd(true, true);
    for _ in 0..3 {
        let p0 = DVector::from_column_slice(p);
        let resid = &b - &a * &p0;
        if resid.amax() < 1e-15 {
            break;
        }
        let Ok(delta) = svd.solve(&resid, 1e-12) else { break };
        for (j, w) in (p0 + delta).iter().enumerate() {
            p[j] = w.max(0.0);
        }
    }
}

/// Euclidean projection onto the probability simplex.
#[cfg(test)]
fn project_simplex(p: &mut DVector<f64>) {
    let m = p.len();
    let mut sorted: Vec<f64> = p.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    let _ = m;
    for v in p.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

/// Merges near-coincident points and drops negligible weights.
fn assemble(pts: &[DVector<f64>], p: &[f64]) -> Decomposition {
    let mut kept: Vec<(DVector<f64>, f64)> = Vec::new();
    for (x, &w) in pts.iter().zip(p) {
        if w <= WEIGHT_FLOOR {
            continue;
        }
        match kept.iter_mut().find(|(y, _)| (y.clone() - x).amax() < MERGE_TOL) {
            Some(slot) => {
                // Weighted average keeps the merged point on the variety to
                // within the merge tolerance.
                slot.0 = (&slot.0 * slot.1 + x * w) / (slot.1 + w);
                slot.1 += w;
            }
            None => kept.push((x.clone(), w)),
        }
    }
    let mut points = Vec::with_capacity(kept.len());
    let mut weights = Vec::with_capacity(kept.len());
    for (x, w) in kept {
        points.push(x.iter().cloned().collect());
        weights.push(w);
    }
    Decomposition::new(points, weights)
}

/// Precomputed derivatives of the sign-adjusted objective and the generators.
struct PolishModel {
    tilde: Polynomial,
    tilde_grad: Vec<Polynomial>,
    tilde_hess: Vec<Vec<Polynomial>>,
    gen_hess: Vec<Vec<Vec<Polynomial>>>,
}

impl PolishModel {
    fn new(problem: &RoofProblem) -> Self {
        let tilde = problem.objective.scale(problem.sense.sign());
        let tilde_grad = tilde.gradient();
        let tilde_hess = hessian(&tilde);
        let gen_hess: Vec<Vec<Vec<Polynomial>>> =
            problem.variety.generators().iter().map(hessian).collect();
        Self { tilde, tilde_grad, tilde_hess, gen_hess }
    }

    fn tilde_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| self.tilde_grad[i].eval(x).unwrap_or(0.0))
    }

    fn eval_hessian(polys: &[Vec<Polynomial>], x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        DMatrix::from_fn(n, n, |i, j| polys[i][j].eval(x).unwrap_or(0.0))
    }
}

fn hessian(poly: &Polynomial) -> Vec<Vec<Polynomial>> {
    let n = poly.nvars();
    let grads = poly.gradient();
    let mut hess = vec![vec![Polynomial::zero(n); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let second = grads[i].partial(j);
            hess[i][j] = second.clone();
            hess[j][i] = second;
        }
    }
    hess
}

/// Damped Newton solve of the first-order optimality system of the roof
/// minimization. Unknowns are the points, per-point constraint multipliers,
/// the weights, the shared linear multiplier, and the offset multiplier.
/// Returns the final residual when the solve converged.
fn kkt_polish(
    problem: &RoofProblem,
    target: &DVector<f64>,
    pts: &mut [DVector<f64>],
    p: &mut [f64],
    model: &PolishModel,
    tol: f64,
) -> Option<f64> {
    let n = problem.variety.ambient_dim();
    let a = problem.variety.generators().len();
    let m = pts.len();
    if m == 0 {
        return None;
    }
    let dim = m * (n + a + 1) + n + 1;

    let mut u = DVector::zeros(dim);
    for (j, x) in pts.iter().enumerate() {
        u.rows_mut(j * n, n).copy_from(x);
    }
    for j in 0..m {
        u[m * (n + a) + j] = p[j];
    }
    // Initialize multipliers by least squares on both stationarity groups.
    {
        let rows = m * (n + 1);
        let cols = m * a + n + 1;
        let mut mat = DMatrix::zeros(rows, cols);
        let mut rhs = DVector::zeros(rows);
        for (j, x) in pts.iter().enumerate() {
            let jac = problem.variety.jacobian_at(x).unwrap_or_else(|_| DMatrix::zeros(a, n));
            let grad = model.tilde_gradient(x);
            for i in 0..n {
                for k in 0..a {
                    mat[(j * n + i, j * a + k)] = jac[(k, i)];
                }
                mat[(j * n + i, m * a + i)] = 1.0;
                rhs[j * n + i] = -grad[i];
            }
            let fx = model.tilde.eval(x).unwrap_or(0.0);
            let row = m * n + j;
            for i in 0..n {
                mat[(row, m * a + i)] = x[i];
            }
            mat[(row, m * a + n)] = 1.0;
            rhs[row] = -fx;
        }
        if let Ok(sol) = mat.svd(true, true).solve(&rhs, 1e-12) {
            for j in 0..m {
                for k in 0..a {
                    u[m * n + j * a + k] = sol[j * a + k];
                }
            }
            for i in 0..n {
                u[m * (n + a) + m + i] = sol[m * a + i];
            }
            u[dim - 1] = sol[m * a + n];
        }
    }

    let residual =
        |u: &DVector<f64>| -> DVector<f64> { kkt_residual(problem, target, model, u, m, n, a) };
    let mut f = residual(&u);
    let mut fnorm = f.norm();
    let mut damping = 1e-8f64;
    let mut converged = false;
    for _ in 0..60 {
        if f.amax() <= tol * 1e-3 {
            converged = true;
            break;
        }
        let jac = kkt_jacobian(problem, model, &u, m, n, a);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtf = &jt * &f;
        let mut accepted = false;
        for _ in 0..10 {
            let mut lhs = jtj.clone();
            for i in 0..dim {
                lhs[(i, i)] += damping * (1.0 + jtj[(i, i)].abs());
            }
            let Some(chol) = lhs.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let step = chol.solve(&jtf);
            let cand = &u - &step;
            let fc = residual(&cand);
            let cnorm = fc.norm();
            if cnorm < fnorm {
                u = cand;
                f = fc;
                fnorm = cnorm;
                damping = (damping * 0.25).max(1e-14);
                accepted = true;
                break;
            }
            damping = (damping * 8.0).min(1e10);
        }
        if !accepted {
            break;
        }
    }
    if f.amax() <= tol {
        converged = true;
    }
    if converged {
        for j in 0..m {
            pts[j].copy_from(&u.rows(j * n, n).into_owned());
            p[j] = u[m * (n + a) + j];
        }
        Some(f.amax())
    } else {
        None
    }
}

/// Residual of the optimality system at packed unknowns `u`.
fn kkt_residual(
    problem: &RoofProblem,
    target: &DVector<f64>,
    model: &PolishModel,
    u: &DVector<f64>,
    m: usize,
    n: usize,
    a: usize,
) -> DVector<f64> {
    let dim = m * (n + a + 1) + n + 1;
    let lambda = u.rows(m * (n + a) + m, n).into_owned();
    let kappa = u[dim - 1];
    let mut out = DVector::zeros(dim);
    let mut bary = DVector::zeros(n);
    let mut total = 0.0;
    for j in 0..m {
        let x = u.rows(j * n, n).into_owned();
        let nu = u.rows(m * n + j * a, a).into_owned();
        let w = u[m * (n + a) + j];
        let jac = problem.variety.jacobian_at(&x).unwrap_or_else(|_| DMatrix::zeros(a, n));
        let grad = model.tilde_gradient(&x);
        let stat = grad + &lambda + jac.transpose() * &nu;
        out.rows_mut(j * n, n).copy_from(&stat);
        let fx = model.tilde.eval(&x).unwrap_or(0.0);
        out[m * n + j] = fx + lambda.dot(&x) + kappa;
        let gen_vals = problem.variety.eval_generators(&x).unwrap_or_else(|_| DVector::zeros(a));
        out.rows_mut(m * (n + 1) + j * a, a).copy_from(&gen_vals);
        bary += &x * w;
        total += w;
    }
    out.rows_mut(m * (n + 1 + a), n).copy_from(&(bary - target));
    out[dim - 1] = total - 1.0;
    out
}

/// Analytic Jacobian of the optimality system.
fn kkt_jacobian(
    problem: &RoofProblem,
    model: &PolishModel,
    u: &DVector<f64>,
    m: usize,
    n: usize,
    a: usize,
) -> DMatrix<f64> {
    let dim = m * (n + a + 1) + n + 1;
    let lambda = u.rows(m * (n + a) + m, n).into_owned();
    let mut jac = DMatrix::zeros(dim, dim);
    let col_p = m * (n + a);
    let col_lambda = col_p + m;
    let col_kappa = dim - 1;
    for j in 0..m {
        let x = u.rows(j * n, n).into_owned();
        let nu = u.rows(m * n + j * a, a).into_owned();
        let w = u[col_p + j];
        let gen_jac = problem.variety.jacobian_at(&x).unwrap_or_else(|_| DMatrix::zeros(a, n));

        // Stationarity rows: Hessian block, generator gradients, identity.
        let mut hess = PolishModel::eval_hessian(&model.tilde_hess, &x);
        for k in 0..a {
            hess += PolishModel::eval_hessian(&model.gen_hess[k], &x) * nu[k];
        }
        jac.view_mut((j * n, j * n), (n, n)).copy_from(&hess);
        for i in 0..n {
            for k in 0..a {
                jac[(j * n + i, m * n + j * a + k)] = gen_jac[(k, i)];
            }
            jac[(j * n + i, col_lambda + i)] = 1.0;
        }

        // Weight stationarity row.
        let grad = model.tilde_gradient(&x);
        let row = m * n + j;
        for i in 0..n {
            jac[(row, j * n + i)] = grad[i] + lambda[i];
            jac[(row, col_lambda + i)] = x[i];
        }
        jac[(row, col_kappa)] = 1.0;

        // Membership rows.
        for k in 0..a {
            for i in 0..n {
                jac[(m * (n + 1) + j * a + k, j * n + i)] = gen_jac[(k, i)];
            }
        }

        // Barycenter rows.
        for i in 0..n {
            jac[(m * (n + 1 + a) + i, j * n + i)] = w;
            jac[(m * (n + 1 + a) + i, col_p + j)] = x[i];
        }

        // Normalization row.
        jac[(dim - 1, col_p + j)] = 1.0;
    }
    jac
}
