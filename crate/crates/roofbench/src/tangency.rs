//! Tangent-hyperplane certificates for roof values.
//!
//! A roof value at a target r is witnessed by a hyperplane in R^{n+1} that
//! touches the graph of the objective over the variety at m contact points
//! whose convex hull contains (r, value). Tangency at all contacts at once is
//! a rank condition: stack the graph tangent frames at the lifted contacts
//! and the cyclic differences of the lifted contacts into a matrix R; the
//! hyperplane exists exactly when rank R <= n, i.e. the smallest singular
//! value of R vanishes and every (n+1) x (n+1) minor vanishes.
//!
//! The solver here never optimizes the objective. It solves the tangency
//! conditions themselves, with the hyperplane normal as an explicit unknown,
//! and reports machine-checkable residuals. Comparing its value against the
//! optimization oracle in [`crate::roof`] is the point of the crate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{PolyError, Polynomial};
use crate::roof::{mix_seed, Decomposition, RoofError, RoofProblem, RoofSense};
use crate::variety::{gaussian, Variety, VarietyError, DEFAULT_RANK_TOL};

/// Minor enumeration is skipped when the row-subset count exceeds this.
pub const MINOR_ENUMERATION_CAP: u128 = 5000;

#[derive(Debug, Error)]
pub enum TangencyError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Variety(#[from] VarietyError),
    #[error(transparent)]
    Roof(#[from] RoofError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid tangent basis: {reason}")]
    InvalidBasis { reason: String },
    #[error("symbolic system needs {needed} tangency rows to be square, got {got}")]
    NotSquare { needed: usize, got: usize },
    #[error("no tangency solution found (best residual {best_residual:.3e})")]
    NoSolution { best_residual: f64 },
    #[error("hyperplane is vertical: normal has no graph component")]
    VerticalHyperplane,
}

/// Graph of the objective over the variety, as a variety in R^{n+1}.
#[derive(Debug)]
pub struct GraphModel {
    variety: Variety,
    objective: Polynomial,
    base_dim: usize,
}

impl GraphModel {
    /// Lifts the problem to its graph: generators of V plus z - f(x).
    pub fn new(problem: &RoofProblem) -> Result<Self, TangencyError> {
        let n = problem.variety().ambient_dim();
        let ident: Vec<usize> = (0..n).collect();
        let mut generators = Vec::with_capacity(problem.variety().generators().len() + 1);
        for g in problem.variety().generators() {
            generators.push(g.remap_vars(n + 1, &ident)?);
        }
        let lifted_f = problem.objective().remap_vars(n + 1, &ident)?;
        generators.push(Polynomial::variable(n + 1, n).sub(&lifted_f)?);
        let variety = Variety::new(n + 1, generators, problem.variety().expected_dim())?;
        Ok(Self { variety, objective: problem.objective().clone(), base_dim: n })
    }

    pub fn variety(&self) -> &Variety {
        &self.variety
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn objective(&self) -> &Polynomial {
        &self.objective
    }

    /// Graph point (x, f(x)) over a base point x.
    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>, TangencyError> {
        if x.len() != self.base_dim {
            return Err(TangencyError::Dimension { expected: self.base_dim, got: x.len() });
        }
        let z = self.objective.eval(x)?;
        let mut out = DVector::zeros(self.base_dim + 1);
        out.rows_mut(0, self.base_dim).copy_from(x);
        out[self.base_dim] = z;
        Ok(out)
    }
}

/// Provenance of one row of the rank matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    /// Tangent frame vector `index` at lifted contact `contact`.
    Tangent { contact: usize, index: usize },
    /// Difference of lifted contacts `from` and `to`.
    Difference { from: usize, to: usize },
}

/// Rank residuals of a tangency matrix.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TangencyResiduals {
    /// Smallest singular value; zero when the matrix has fewer rows than
    /// columns.
    pub sv: f64,
    /// Largest absolute full-width minor, when enumeration is tractable.
    pub minor: Option<f64>,
}

/// Stacked tangent frames and cyclic contact differences on the graph.
#[derive(Debug, Clone)]
pub struct RMatrix {
    matrix: DMatrix<f64>,
    labels: Vec<RowLabel>,
}

impl RMatrix {
    /// Builds the matrix from base-space contact points.
    ///
    /// Rows are the graph tangent frame vectors at every lifted contact,
    /// followed by cyclic differences of the lifted contacts: the single
    /// difference for two contacts, the full cycle for three or more. Zero
    /// difference rows from coincident contacts are dropped.
    pub fn build(
        graph: &GraphModel,
        contacts: &[DVector<f64>],
        rank_tol: f64,
    ) -> Result<Self, TangencyError> {
        let width = graph.base_dim() + 1;
        let m = contacts.len();
        let mut lifted = Vec::with_capacity(m);
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (k, x) in contacts.iter().enumerate() {
            let g = graph.lift(x)?;
            let frame = graph.variety().tangent_frame(&g, rank_tol)?;
            for (i, v) in frame.basis.iter().enumerate() {
                rows.push(v.clone());
                labels.push(RowLabel::Tangent { contact: k, index: i });
            }
            lifted.push(g);
        }
        let cyc: Vec<(usize, usize)> = match m {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..m).map(|k| (k, (k + 1) % m)).collect(),
        };
        for (from, to) in cyc {
            let d = &lifted[from] - &lifted[to];
            if d.norm() <= 1e-13 {
                continue;
            }
            rows.push(d);
            labels.push(RowLabel::Difference { from, to });
        }
        let mut matrix = DMatrix::zeros(rows.len(), width);
        for (i, r) in rows.iter().enumerate() {
            matrix.set_row(i, &r.transpose());
        }
        Ok(Self { matrix, labels })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> &[RowLabel] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    /// Smallest singular value of the full matrix; the tangency condition is
    /// that it vanishes. Zero by convention when rows < width.
    pub fn sv_residual(&self) -> f64 {
        if self.rows() < self.width() {
            return 0.0;
        }
        let sv = self.matrix.clone().svd(false, false).singular_values;
        sv.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute determinant over all width x width row subsets, or
    /// None when there are too many subsets to enumerate.
    pub fn minor_residual(&self) -> Option<f64> {
        let rows = self.rows();
        let width = self.width();
        if rows < width {
            return Some(0.0);
        }
        if binomial(rows, width) > MINOR_ENUMERATION_CAP {
            return None;
        }
        let mut worst = 0.0f64;
        let mut idx: Vec<usize> = (0..width).collect();
        loop {
            let sub = self.matrix.select_rows(idx.iter());
            worst = worst.max(sub.determinant().abs());
            if !next_combination(&mut idx, rows) {
                break;
            }
        }
        Some(worst)
    }

    pub fn residuals(&self) -> TangencyResiduals {
        TangencyResiduals { sv: self.sv_residual(), minor: self.minor_residual() }
    }
}

/// Binomial coefficient with saturation, for enumeration budgeting.
fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 0..k {
        out = out.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if out > MINOR_ENUMERATION_CAP * 1000 {
            return u128::MAX;
        }
    }
    out
}

/// Advances `idx` to the next k-subset of 0..n in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Polynomial vector fields spanning the variety tangent spaces.
#[derive(Debug, Clone)]
pub struct PolynomialTangentBasis {
    fields: Vec<Vec<Polynomial>>,
}

impl PolynomialTangentBasis {
    pub fn new(fields: Vec<Vec<Polynomial>>) -> Self {
        Self { fields }
    }

    pub fn fields(&self) -> &[Vec<Polynomial>] {
        &self.fields
    }

    /// Checks that every field annihilates every generator identically.
    pub fn validate(&self, variety: &Variety) -> Result<(), TangencyError> {
        let n = variety.ambient_dim();
        for (b, field) in self.fields.iter().enumerate() {
            if field.len() != n {
                return Err(TangencyError::InvalidBasis {
                    reason: format!("field {b} has {} components, expected {n}", field.len()),
                });
            }
            for (g_idx, g) in variety.generators().iter().enumerate() {
                let mut dot = Polynomial::zero(n);
                for (i, v) in field.iter().enumerate() {
                    dot = dot.add(&g.partial(i).mul(v)?)?;
                }
                if !dot.is_zero() {
                    return Err(TangencyError::InvalidBasis {
                        reason: format!(
                            "field {b} does not annihilate generator {g_idx}: {dot}"
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Square polynomial system expressing the tangency optimality conditions
/// in the contact coordinates and weights.
#[derive(Debug, Clone)]
pub struct OptimalitySystem {
    nvars: usize,
    contacts: usize,
    base_dim: usize,
    equations: Vec<Polynomial>,
    labels: Vec<String>,
}

impl OptimalitySystem {
    /// Assembles the system at a fixed target: membership of every contact,
    /// the determinant of the symbolic tangency matrix, the barycenter
    /// equations, and weight normalization. Variables are the contact
    /// coordinates (blocks of n) followed by the weights.
    pub fn assemble(
        problem: &RoofProblem,
        basis: &PolynomialTangentBasis,
        target: &DVector<f64>,
        m: usize,
    ) -> Result<Self, TangencyError> {
        let n = problem.variety().ambient_dim();
        if target.len() != n {
            return Err(TangencyError::Dimension { expected: n, got: target.len() });
        }
        basis.validate(problem.variety())?;
        let t = basis.fields.len();
        let diff_rows = match m {
            0 | 1 => 0,
            2 => 1,
            _ => m,
        };
        if m * t + diff_rows != n + 1 {
            return Err(TangencyError::NotSquare { needed: n + 1, got: m * t + diff_rows });
        }
        let nvars = m * n + m;
        let block: Vec<Vec<usize>> =
            (0..m).map(|k| (0..n).map(|i| k * n + i).collect()).collect();

        let mut equations = Vec::new();
        let mut labels = Vec::new();
        for (k, map) in block.iter().enumerate() {
            for g in problem.variety().generators() {
                equations.push(g.remap_vars(nvars, map)?);
                labels.push(format!("membership[{k}]"));
            }
        }

        // Symbolic tangency matrix: lifted tangent fields then differences.
        let grad_f = problem.objective().gradient();
        let mut rows: Vec<Vec<Polynomial>> = Vec::new();
        for map in &block {
            for field in &basis.fields {
                let mut row = Vec::with_capacity(n + 1);
                for v in field {
                    row.push(v.remap_vars(nvars, map)?);
                }
                let mut slope = Polynomial::zero(nvars);
                for (i, v) in field.iter().enumerate() {
                    slope = slope.add(&v.mul(&grad_f[i])?.remap_vars(nvars, map)?)?;
                }
                row.push(slope);
                rows.push(row);
            }
        }
        let lifted_value = |k: usize| -> Result<Polynomial, PolyError> {
            problem.objective().remap_vars(nvars, &block[k])
        };
        let diff_pairs: Vec<(usize, usize)> = match m {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..m).map(|k| (k, (k + 1) % m)).collect(),
        };
        for (from, to) in diff_pairs {
            let mut row = Vec::with_capacity(n + 1);
            for i in 0..n {
                row.push(
                    Polynomial::variable(nvars, from * n + i)
                        .sub(&Polynomial::variable(nvars, to * n + i))?,
                );
            }
            row.push(lifted_value(from)?.sub(&lifted_value(to)?)?);
            rows.push(row);
        }
        equations.push(det_poly(&rows)?);
        labels.push("tangency".to_string());

        for i in 0..n {
            let mut eq = Polynomial::constant(nvars, -target[i]);
            for k in 0..m {
                let p_k = Polynomial::variable(nvars, m * n + k);
                let x_ki = Polynomial::variable(nvars, k * n + i);
                eq = eq.add(&p_k.mul(&x_ki)?)?;
            }
            equations.push(eq);
            labels.push("barycenter".to_string());
        }

        let mut norm = Polynomial::constant(nvars, -1.0);
        for k in 0..m {
            norm = norm.add(&Polynomial::variable(nvars, m * n + k))?;
        }
        equations.push(norm);
        labels.push("normalization".to_string());

        Ok(Self { nvars, contacts: m, base_dim: n, equations, labels })
    }

    /// Eliminates the last weight through the normalization equation,
    /// yielding a square system in one fewer variable.
    pub fn fold_normalization(&self) -> Result<Self, TangencyError> {
        let m = self.contacts;
        let n = self.base_dim;
        let last = self.nvars - 1;
        let mut replacement = Polynomial::constant(self.nvars, 1.0);
        for k in 0..m - 1 {
            replacement = replacement.sub(&Polynomial::variable(self.nvars, m * n + k))?;
        }
        // Map every old variable; the folded weight no longer occurs, so its
        // target is arbitrary.
        let mut keep: Vec<usize> = (0..last).collect();
        keep.push(0);
        let mut equations = Vec::new();
        let mut labels = Vec::new();
        for (eq, label) in self.equations.iter().zip(&self.labels) {
            if label == "normalization" {
                continue;
            }
            let folded = eq.substitute(last, &replacement)?.remap_vars(last, &keep)?;
            equations.push(folded);
            labels.push(label.clone());
        }
        Ok(Self { nvars: last, contacts: m, base_dim: n, equations, labels })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn equations(&self) -> &[Polynomial] {
        &self.equations
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>, TangencyError> {
        let mut out = DVector::zeros(self.equations.len());
        for (i, eq) in self.equations.iter().enumerate() {
            out[i] = eq.eval(u)?;
        }
        Ok(out)
    }

    pub fn max_residual(&self, u: &DVector<f64>) -> Result<f64, TangencyError> {
        Ok(self.eval(u)?.amax())
    }
}

/// Determinant of a square matrix of polynomials by cofactor expansion.
fn det_poly(rows: &[Vec<Polynomial>]) -> Result<Polynomial, PolyError> {
    let size = rows.len();
    assert!(rows.iter().all(|r| r.len() == size), "determinant needs a square matrix");
    if size == 1 {
        return Ok(rows[0][0].clone());
    }
    let nvars = rows[0][0].nvars();
    let mut det = Polynomial::zero(nvars);
    for (j, pivot) in rows[0].iter().enumerate() {
        if pivot.is_zero() {
            continue;
        }
        let minor: Vec<Vec<Polynomial>> = rows[1..]
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(c, _)| *c != j)
                    .map(|(_, p)| p.clone())
                    .collect()
            })
            .collect();
        let cof = pivot.mul(&det_poly(&minor)?)?;
        det = if j % 2 == 0 { det.add(&cof)? } else { det.sub(&cof)? };
    }
    Ok(det)
}

/// Tuning knobs for the certificate solver.
#[derive(Debug, Clone)]
pub struct CertificateOptions {
    /// Largest contact count to try; defaults to hull dimension + 1.
    pub m_max: Option<usize>,
    /// Random restarts per contact count.
    pub restarts: usize,
    /// Seed for all randomized choices.
    pub seed: u64,
    /// Residual level that counts as solved.
    pub tol: f64,
    /// Iteration cap of the damped least-squares solver.
    pub max_iters: usize,
    /// Minimum pairwise contact distance. Solutions with closer contacts are
    /// degenerate lower-size configurations (a split double contact) and are
    /// rejected; the size sweep covers them at the smaller count.
    pub contact_gap: f64,
    /// Decompositions whose points seed the first restarts.
    pub warm_starts: Vec<Decomposition>,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            m_max: None,
            restarts: 32,
            seed: 1,
            tol: 1e-9,
            max_iters: 200,
            contact_gap: 1e-3,
            warm_starts: Vec::new(),
        }
    }
}

/// Convergence record of the certificate solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverMetadata {
    pub restarts_used: usize,
    pub iterations: usize,
    pub system_residual: f64,
}

/// A solved multi-tangent hyperplane witnessing a roof value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangencyCertificate {
    pub sense: RoofSense,
    pub target: Vec<f64>,
    pub value: f64,
    pub decomposition: Decomposition,
    /// Unit normal of the hyperplane in R^{n+1}; the last component is
    /// negative for the lower roof and positive for the upper roof.
    pub normal: Vec<f64>,
    /// Hyperplane offset: normal . (x, z) = offset on the plane.
    pub offset: f64,
    pub sv_residual: f64,
    pub minor_residual: Option<f64>,
    pub solver: SolverMetadata,
}

impl TangencyCertificate {
    /// Height of the certified hyperplane over a base point.
    pub fn plane_height(&self, x: &DVector<f64>) -> Result<f64, TangencyError> {
        let n = self.normal.len() - 1;
        if x.len() != n {
            return Err(TangencyError::Dimension { expected: n, got: x.len() });
        }
        let wz = self.normal[n];
        if wz.abs() < 1e-12 {
            return Err(TangencyError::VerticalHyperplane);
        }
        let mut dot = 0.0;
        for i in 0..n {
            dot += self.normal[i] * x[i];
        }
        Ok((self.offset - dot) / wz)
    }
}

/// Best certificate for each contact count in a sweep.
#[derive(Debug, Clone)]
pub struct CertifyReport {
    pub best: TangencyCertificate,
    /// Entry k holds the best certificate using exactly k+1 contacts.
    pub per_size: Vec<Option<TangencyCertificate>>,
}

/// One verification check with its residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationGroup {
    pub name: String,
    pub residual: f64,
    pub passed: bool,
}

/// Independent recomputation of every certificate condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub groups: Vec<VerificationGroup>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn residual_of(&self, name: &str) -> Option<f64> {
        self.groups.iter().find(|g| g.name == name).map(|g| g.residual)
    }
}

/// Solves the m-contact tangency system at a target.
///
/// Unknowns are the contacts, the weights, the hyperplane normal, and one
/// normal-space multiplier vector per contact; tangency is expressed as the
/// normal lying in the row space of the graph Jacobian at every contact.
pub fn solve_certificate(
    problem: &RoofProblem,
    target: &DVector<f64>,
    m: usize,
    opts: &CertificateOptions,
) -> Result<TangencyCertificate, TangencyError> {
    assert!(m >= 1, "certificates need at least one contact");
    let graph = GraphModel::new(problem)?;
    let n = problem.variety().ambient_dim();
    if target.len() != n {
        return Err(TangencyError::Dimension { expected: n, got: target.len() });
    }
    let a = problem.variety().generators().len();
    let width = n + 1;
    let sense = problem.sense();

    let diff_pairs: Vec<(usize, usize)> = match m {
        1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..m).map(|k| (k, (k + 1) % m)).collect(),
    };
    // Packing: contacts (m*n), weights (m), normal (n+1), multipliers
    // (m*(a+1)).
    let dim = m * n + m + width + m * (a + 1);
    let off_p = m * n;
    let off_w = off_p + m;
    let off_c = off_w + width;

    let residual = |u: &DVector<f64>| -> DVector<f64> {
        let rows = m * a + m * width + diff_pairs.len() + n + 2;
        let mut out = DVector::zeros(rows);
        let w = u.rows(off_w, width).into_owned();
        let mut row = 0;
        let mut lifted = Vec::with_capacity(m);
        let mut bary = DVector::zeros(n);
        let mut total = 0.0;
        for k in 0..m {
            let x = u.rows(k * n, n).into_owned();
            let p = u[off_p + k];
            let gen_vals =
                problem.variety().eval_generators(&x).unwrap_or_else(|_| DVector::zeros(a));
            out.rows_mut(row, a).copy_from(&gen_vals);
            row += a;
            bary += &x * p;
            total += p;
            lifted.push(graph.lift(&x).unwrap_or_else(|_| DVector::zeros(width)));
        }
        for k in 0..m {
            let jac = graph
                .variety()
                .jacobian_at(&lifted[k])
                .unwrap_or_else(|_| DMatrix::zeros(a + 1, width));
            let c = u.rows(off_c + k * (a + 1), a + 1).into_owned();
            let diff = jac.transpose() * c - &w;
            out.rows_mut(row, width).copy_from(&diff);
            row += width;
        }
        for &(from, to) in &diff_pairs {
            out[row] = (&lifted[from] - &lifted[to]).dot(&w);
            row += 1;
        }
        out.rows_mut(row, n).copy_from(&(bary - target));
        row += n;
        out[row] = total - 1.0;
        out[row + 1] = w.dot(&w) - 1.0;
        out
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, m as u64, 0x7A4C));
    let pool = problem
        .variety()
        .sample((10 * m).max(30), mix_seed(opts.seed, m as u64, 0x5A11))
        .unwrap_or_default();
    let projected_target = problem.variety().project(target, 1e-11).ok();

    // Deterministic facet inits: vertex sets of supporting hyperplanes of the
    // lifted sample cloud, ranked so facets whose projected simplex covers
    // the target come first. These sit next to the true extremal tangent
    // configurations, which random inits rarely reach.
    let facet_inits = facet_initializations(&graph, &pool, target, sense, m);

    // Spread scale for envelope picks: a fraction of the pool diameter keeps
    // the chosen contacts on different arcs instead of one support cluster.
    let mut diameter = 0.0f64;
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            diameter = diameter.max((&pool[i] - &pool[j]).amax());
        }
    }
    let spread = diameter / (m.max(2) as f64 + 1.0);

    // Contacts of the supporting side of the lifted sample cloud for a random
    // slope: the true extremal tangent planes live on that envelope, so this
    // biases half the restarts away from interior tangency solutions.
    let envelope_init = |rng: &mut ChaCha8Rng| -> Vec<DVector<f64>> {
        let mut slope = DVector::zeros(n);
        for i in 0..n {
            slope[i] = gaussian(rng);
        }
        let mut scored: Vec<(f64, usize)> = pool
            .iter()
            .enumerate()
            .filter_map(|(i, x)| {
                let z = problem.objective().eval(x).ok()?;
                Some((sense.sign() * (z - slope.dot(x)), i))
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut picked: Vec<DVector<f64>> = Vec::with_capacity(m);
        for &(_, i) in &scored {
            let x = &pool[i];
            if picked.iter().all(|y| (x - y).amax() > spread) {
                picked.push(x.clone());
            }
            if picked.len() == m {
                break;
            }
        }
        picked
    };

    let mut best: Option<(TangencyCertificate, f64)> = None;
    let mut best_residual = f64::INFINITY;
    let n_warm = usize::from(opts.warm_starts.iter().any(|d| d.len() == m));
    for t in 0..opts.restarts.max(1) {
        // Initial contacts: warm-start points first, then the deterministic
        // facet inits, then alternating envelope-biased and random draws.
        let mut contacts: Vec<DVector<f64>> = Vec::with_capacity(m);
        let mut normal_hint: Option<DVector<f64>> = None;
        let warm = opts.warm_starts.iter().find(|d| d.len() == m);
        if let (0, Some(dec)) = (t, warm) {
            for j in 0..m {
                contacts.push(dec.point(j));
            }
        } else if t >= n_warm && t - n_warm < facet_inits.len() {
            let (pts, w) = &facet_inits[t - n_warm];
            contacts = pts.clone();
            normal_hint = Some(w.clone());
        } else {
            if pool.is_empty() && projected_target.is_none() {
                return Err(TangencyError::NoSolution { best_residual: f64::INFINITY });
            }
            if t % 2 == 0 {
                contacts = envelope_init(&mut rng);
            }
            while contacts.len() < m {
                if m == 1 {
                    if let Some(x) = &projected_target {
                        contacts.push(x.clone());
                        continue;
                    }
                }
                if pool.is_empty() {
                    return Err(TangencyError::NoSolution { best_residual: f64::INFINITY });
                }
                let mut x = pool[rng.gen_range(0..pool.len())].clone();
                if t > 1 {
                    for i in 0..n {
                        x[i] += 0.1 * gaussian(&mut rng);
                    }
                    if let Ok(y) = problem.variety().project(&x, 1e-11) {
                        x = y;
                    }
                }
                contacts.push(x);
            }
        }
        let weights0 = match (t, warm) {
            (0, Some(dec)) => dec.weights.iter().map(|&v| v.clamp(0.0, 1.0)).collect(),
            _ => barycentric_weights(&contacts, target),
        };
        let mut u = DVector::zeros(dim);
        for (k, x) in contacts.iter().enumerate() {
            u.rows_mut(k * n, n).copy_from(x);
            u[off_p + k] = weights0[k];
        }
        // Initial normal: facet plane if available, else a null direction of
        // the numeric tangency matrix, else straight down or up.
        let w0 = normal_hint
            .or_else(|| initial_normal(&graph, &contacts, sense).ok())
            .unwrap_or_else(|| {
                let mut w = DVector::zeros(width);
                w[width - 1] = -sense.sign();
                w
            });
        u.rows_mut(off_w, width).copy_from(&w0);
        for (k, x) in contacts.iter().enumerate() {
            if let Ok(g) = graph.lift(x) {
                if let Ok(jac) = graph.variety().jacobian_at(&g) {
                    if let Ok(c) = jac.transpose().svd(true, true).solve(&w0, 1e-12) {
                        u.rows_mut(off_c + k * (a + 1), a + 1).copy_from(&c);
                    }
                }
            }
        }

        let (u, res, iters) = lm_least_squares(&residual, u, opts.tol, opts.max_iters);
        let restarts_used = t + 1;
        best_residual = best_residual.min(res);
        if res > opts.tol {
            continue;
        }

        // Extract and screen the solution.
        let mut pts: Vec<DVector<f64>> = (0..m).map(|k| u.rows(k * n, n).into_owned()).collect();
        let p: Vec<f64> = (0..m).map(|k| u[off_p + k]).collect();
        let mut w = u.rows(off_w, width).into_owned();
        if p.iter().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
            continue;
        }
        let gap = opts.contact_gap.max(1e-9);
        let distinct = (0..m).all(|i| (i + 1..m).all(|j| (&pts[i] - &pts[j]).amax() > gap));
        if !distinct {
            continue;
        }
        if w[width - 1].abs() < 1e-8 {
            continue;
        }
        if sense.sign() * w[width - 1] > 0.0 {
            w = -w;
        }
        for x in pts.iter_mut() {
            if let Ok(better) = problem.variety().project(x, 1e-12) {
                *x = better;
            }
        }
        let lifted: Vec<DVector<f64>> =
            pts.iter().map(|x| graph.lift(x)).collect::<Result<_, _>>()?;
        let offset = lifted.iter().map(|g| g.dot(&w)).sum::<f64>() / m as f64;
        let mut wdot = 0.0;
        for i in 0..n {
            wdot += w[i] * target[i];
        }
        let value = (offset - wdot) / w[width - 1];
        let rmat = RMatrix::build(&graph, &pts, DEFAULT_RANK_TOL)?;
        let res_pair = rmat.residuals();
        let mut dec = Decomposition::new(
            pts.iter().map(|x| x.iter().cloned().collect()).collect(),
            p.iter().map(|&v| v.clamp(0.0, 1.0)).collect(),
        );
        dec.canonicalize();
        let cert = TangencyCertificate {
            sense,
            target: target.iter().cloned().collect(),
            value,
            decomposition: dec,
            normal: w.iter().cloned().collect(),
            offset,
            sv_residual: res_pair.sv,
            minor_residual: res_pair.minor,
            solver: SolverMetadata {
                restarts_used,
                iterations: iters,
                system_residual: res,
            },
        };
        let better = match &best {
            None => true,
            Some((b, bres)) => {
                let delta = sense.sign() * (cert.value - b.value);
                delta < -1e-10 || (delta.abs() <= 1e-10 && res < *bres)
            }
        };
        if better {
            best = Some((cert, res));
        }
    }
    match best {
        Some((cert, _)) => Ok(cert),
        None => Err(TangencyError::NoSolution { best_residual }),
    }
}

/// Best certificates over all contact counts up to the size bound.
pub fn certify_target(
    problem: &RoofProblem,
    target: &DVector<f64>,
    opts: &CertificateOptions,
) -> Result<CertifyReport, TangencyError> {
    let m_max = opts.m_max.unwrap_or_else(|| problem.default_m_max()).max(1);
    let mut per_size: Vec<Option<TangencyCertificate>> = vec![None; m_max];
    let mut best_residual = f64::INFINITY;
    for m in 1..=m_max {
        let mut local = opts.clone();
        local.seed = mix_seed(opts.seed, 0xCE47, m as u64);
        match solve_certificate(problem, target, m, &local) {
            Ok(cert) => per_size[m - 1] = Some(cert),
            Err(TangencyError::NoSolution { best_residual: r }) => {
                best_residual = best_residual.min(r);
            }
            Err(other) => return Err(other),
        }
    }
    let mut best: Option<TangencyCertificate> = None;
    for cert in per_size.iter().flatten() {
        let better = match &best {
            None => true,
            Some(b) => {
                let delta = problem.sense().sign() * (cert.value - b.value);
                delta < -1e-10
                    || (delta.abs() <= 1e-10
                        && cert.decomposition.len() < b.decomposition.len())
            }
        };
        if better {
            best = Some(cert.clone());
        }
    }
    match best {
        Some(best) => Ok(CertifyReport { best, per_size }),
        None => Err(TangencyError::NoSolution { best_residual }),
    }
}

/// Initial hyperplane normal: the right-singular direction of the numeric
/// tangency matrix with the smallest singular value.
fn initial_normal(
    graph: &GraphModel,
    contacts: &[DVector<f64>],
    sense: RoofSense,
) -> Result<DVector<f64>, TangencyError> {
    let width = graph.base_dim() + 1;
    let n = graph.base_dim();
    if contacts.len() == 1 {
        // Downhill graph normal (grad f, -1), normalized.
        let grads = graph.objective().gradient();
        let mut w = DVector::zeros(width);
        for i in 0..n {
            w[i] = grads[i].eval(&contacts[0])?;
        }
        w[n] = -1.0;
        w /= w.norm();
        if sense.sign() * w[n] > 0.0 {
            w = -w;
        }
        return Ok(w);
    }
    let rmat = RMatrix::build(graph, contacts, DEFAULT_RANK_TOL)?;
    if rmat.rows() < width {
        return Err(TangencyError::NoSolution { best_residual: f64::INFINITY });
    }
    let svd = rmat.matrix().clone().svd(false, true);
    let sv = &svd.singular_values;
    let mut arg = 0;
    for i in 0..sv.len() {
        if sv[i] < sv[arg] {
            arg = i;
        }
    }
    let vt = svd.v_t.as_ref().expect("svd computed with right vectors");
    let mut w = vt.row(arg).transpose().into_owned();
    if sense.sign() * w[width - 1] > 0.0 {
        w = -w;
    }
    Ok(w)
}

/// Initial contact sets from supporting hyperplanes of the lifted sample
/// cloud. Every (n+1)-subset whose interpolating hyperplane has the whole
/// cloud on the roof side is a discrete facet; its vertices approximate a
/// true multi-tangent contact set and its plane normal seeds the solve.
/// Facets whose projected simplex covers the target are ranked first, then
/// by simplex volume, so flat-region facets precede sliver facets.
fn facet_initializations(
    graph: &GraphModel,
    pool: &[DVector<f64>],
    target: &DVector<f64>,
    sense: RoofSense,
    m: usize,
) -> Vec<(Vec<DVector<f64>>, DVector<f64>)> {
    let n = graph.base_dim();
    let k = n + 1;
    let npts = pool.len();
    if m < 1 || m > k || npts < k || binomial(npts, k) > 20_000 {
        return Vec::new();
    }
    let Ok(lifted) = pool.iter().map(|x| graph.lift(x)).collect::<Result<Vec<_>, _>>() else {
        return Vec::new();
    };
    let s = sense.sign();
    let zmax = lifted.iter().map(|g| g[n].abs()).fold(0.0f64, f64::max);
    let slack = 1e-7 * (1.0 + zmax);
    let mut facets: Vec<(Vec<usize>, DVector<f64>)> = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut mat = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..n {
                mat[(r, c)] = pool[i][c];
            }
            mat[(r, n)] = 1.0;
            rhs[r] = lifted[i][n];
        }
        if let Ok(sol) = mat.clone().svd(true, true).solve(&rhs, 1e-10) {
            let interpolates = (&mat * &sol - &rhs).amax() <= slack;
            let supporting = interpolates
                && (0..npts).all(|j| {
                    let mut planed = sol[n];
                    for c in 0..n {
                        planed += sol[c] * pool[j][c];
                    }
                    s * (lifted[j][n] - planed) >= -slack
                });
            if supporting {
                let mut w = DVector::zeros(k);
                for c in 0..n {
                    w[c] = sol[c];
                }
                w[n] = -1.0;
                w /= w.norm();
                if s < 0.0 {
                    w = -w;
                }
                facets.push((idx.clone(), w));
            }
        }
        if !next_combination(&mut idx, npts) {
            break;
        }
    }

    let mut ranked: Vec<(u8, f64, Vec<DVector<f64>>, DVector<f64>)> = Vec::new();
    for (subset, w) in facets {
        let verts: Vec<DVector<f64>> = subset.iter().map(|&i| pool[i].clone()).collect();
        let chosen = best_spread_subset(&verts, m);
        let volume = simplex_volume(&chosen);
        if m > 1 && volume <= 1e-9 {
            continue;
        }
        let covers = u8::from(covers_target(&chosen, target));
        let duplicate = ranked.iter().any(|(_, _, pts, _)| {
            pts.len() == chosen.len()
                && pts.iter().zip(&chosen).all(|(a, b)| (a - b).amax() < 1e-12)
        });
        if !duplicate {
            ranked.push((covers, volume, chosen, w));
        }
    }
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)));
    ranked.into_iter().map(|(_, _, pts, w)| (pts, w)).collect()
}

/// The m-subset of the vertices with the largest simplex volume.
fn best_spread_subset(verts: &[DVector<f64>], m: usize) -> Vec<DVector<f64>> {
    if m >= verts.len() {
        return verts.to_vec();
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let pts: Vec<DVector<f64>> = idx.iter().map(|&i| verts[i].clone()).collect();
        let vol = simplex_volume(&pts);
        if best.as_ref().is_none_or(|(v, _)| vol > *v) {
            best = Some((vol, idx.clone()));
        }
        if !next_combination(&mut idx, verts.len()) {
            break;
        }
    }
    let (_, idx) = best.expect("at least one subset");
    idx.into_iter().map(|i| verts[i].clone()).collect()
}

/// Gram-determinant volume of the simplex spanned by the points.
fn simplex_volume(pts: &[DVector<f64>]) -> f64 {
    if pts.len() <= 1 {
        return 1.0;
    }
    let n = pts[0].len();
    let mut g = DMatrix::zeros(n, pts.len() - 1);
    for (j, x) in pts[1..].iter().enumerate() {
        g.set_column(j, &(x - &pts[0]));
    }
    (g.transpose() * g).determinant().max(0.0).sqrt()
}

/// Whether the target is (near-)contained in the affine hull and convex
/// hull of the points.
fn covers_target(pts: &[DVector<f64>], target: &DVector<f64>) -> bool {
    let q = barycentric_weights(pts, target);
    let n = target.len();
    let mut fit = DVector::zeros(n);
    for (x, &w) in pts.iter().zip(&q) {
        fit += x * w;
    }
    (fit - target).amax() <= 1e-6 && q.iter().all(|&v| v >= -0.05)
}

/// Least-squares barycentric weights of the target, clamped to the simplex.
fn barycentric_weights(contacts: &[DVector<f64>], target: &DVector<f64>) -> Vec<f64> {
    let m = contacts.len();
    let n = target.len();
    let uniform = vec![1.0 / m as f64; m];
    let mut a = DMatrix::zeros(n + 1, m);
    for (j, x) in contacts.iter().enumerate() {
        for i in 0..n {
            a[(i, j)] = x[i];
        }
        a[(n, j)] = 1.0;
    }
    let mut b = DVector::zeros(n + 1);
    b.rows_mut(0, n).copy_from(target);
    b[n] = 1.0;
    match a.svd(true, true).solve(&b, 1e-10) {
        Ok(q) => {
            let mut q: Vec<f64> = q.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
            let sum: f64 = q.iter().sum();
            if sum > 1e-9 {
                for v in q.iter_mut() {
                    *v /= sum;
                }
                q
            } else {
                uniform
            }
        }
        Err(_) => uniform,
    }
}

/// Damped least-squares solve with central finite-difference Jacobians.
/// Returns the final iterate, its max-norm residual, and iterations used.
fn lm_least_squares<F>(
    residual: &F,
    mut u: DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> (DVector<f64>, f64, usize)
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let dim = u.len();
    let mut f = residual(&u);
    let rows = f.len();
    let mut fnorm = f.norm();
    let mut damping = 1e-6f64;
    let mut iters = 0;
    for it in 0..max_iters {
        iters = it + 1;
        if f.amax() <= tol * 1e-2 {
            break;
        }
        // Central finite-difference Jacobian.
        let mut jac = DMatrix::zeros(rows, dim);
        for j in 0..dim {
            let h = 1e-6 * u[j].abs().max(1.0);
            let mut up = u.clone();
            up[j] += h;
            let mut dn = u.clone();
            dn[j] -= h;
            let fp = residual(&up);
            let fm = residual(&dn);
            for i in 0..rows {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtf = &jt * &f;
        let mut accepted = false;
        for _ in 0..12 {
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
                damping = (damping * 0.3).max(1e-14);
                accepted = true;
                break;
            }
            damping = (damping * 6.0).min(1e10);
        }
        if !accepted {
            break;
        }
    }
    let res = f.amax();
    (u, res, iters)
}

/// Recomputes every certificate condition from scratch and reports
/// per-group residuals against `tol`.
pub fn verify_certificate(
    problem: &RoofProblem,
    cert: &TangencyCertificate,
    tol: f64,
) -> Result<VerificationReport, TangencyError> {
    let graph = GraphModel::new(problem)?;
    let n = problem.variety().ambient_dim();
    let width = n + 1;
    if cert.normal.len() != width {
        return Err(TangencyError::Dimension { expected: width, got: cert.normal.len() });
    }
    let target = DVector::from_column_slice(&cert.target);
    let w = DVector::from_column_slice(&cert.normal);
    let dec = &cert.decomposition;
    let m = dec.len();
    let mut groups = Vec::new();
    let mut push = |name: &str, residual: f64, bound: f64| {
        groups.push(VerificationGroup {
            name: name.to_string(),
            residual,
            passed: residual <= bound,
        });
    };

    let mut membership = 0.0f64;
    let mut lifted = Vec::with_capacity(m);
    for j in 0..m {
        let x = dec.point(j);
        membership = membership.max(problem.variety().residual(&x)?);
        lifted.push(graph.lift(&x)?);
    }
    push("membership", membership, tol);

    let mut weight_res = 0.0f64;
    let mut total = 0.0;
    for &p in &dec.weights {
        weight_res = weight_res.max((-p).max(0.0)).max((p - 1.0).max(0.0));
        total += p;
    }
    weight_res = weight_res.max((total - 1.0).abs());
    push("weights", weight_res, tol);

    push("barycenter", (dec.barycenter() - &target).amax(), tol);
    push("unit_normal", (w.dot(&w) - 1.0).abs(), tol);

    let mut on_plane = 0.0f64;
    for g in &lifted {
        on_plane = on_plane.max((g.dot(&w) - cert.offset).abs());
    }
    push("on_hyperplane", on_plane, tol);

    let oriented = problem.sense().sign() * w[width - 1] < 0.0;
    push("orientation", f64::from(u8::from(!oriented)), 0.5);

    let contacts: Vec<DVector<f64>> = (0..m).map(|j| dec.point(j)).collect();
    match RMatrix::build(&graph, &contacts, DEFAULT_RANK_TOL) {
        Ok(rmat) => {
            let res_pair = rmat.residuals();
            push("tangency_rank", res_pair.sv, tol);
            if let Some(minor) = res_pair.minor {
                push("minor_rank", minor, tol);
            }
            // The normal must annihilate the whole matrix, not only be small
            // in one singular direction.
            push("normal_in_kernel", (rmat.matrix() * &w).amax(), tol.max(res_pair.sv * 10.0));
        }
        // Contacts too far off the variety for tangent frames: the rank
        // checks fail outright and membership carries the diagnosis.
        Err(_) => push("tangency_rank", f64::MAX, tol),
    }

    let plane_value = cert.plane_height(&target)?;
    let mut ensemble_value = 0.0;
    for j in 0..m {
        ensemble_value += dec.weights[j] * problem.objective().eval(&dec.point(j))?;
    }
    let value_res =
        (cert.value - plane_value).abs().max((cert.value - ensemble_value).abs());
    push("value", value_res, tol.max(1e-9));

    let passed = groups.iter().all(|g| g.passed);
    Ok(VerificationReport { groups, passed })
}
