//! Orthonormal hermitian operator bases and their structure tensors.

use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;
use std::sync::{Arc, OnceLock};

use super::QuantumError;

/// How a coefficient vector over the basis encodes a density operator.
///
/// Scaled: element 0 is I/sqrt(D), the vector stores the D^2-1 traceless
/// coefficients of rho = (I + c_j lambda^j)/D. Plain: the vector stores all
/// D^2 expansion coefficients of rho = c_alpha mu^alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    Scaled,
    Plain,
}

/// Orthonormal basis of hermitian D x D operators.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    dim: usize,
    elements: Vec<DMatrix<Complex64>>,
    convention: Convention,
    tensors: OnceLock<StructureTensors>,
}

/// Trace tensors of an operator basis.
///
/// `d` and `f` cover the traceless sector of a scaled basis (indices into
/// elements 1..D^2); `chi` and `tau` cover the full basis in either
/// convention: mu^a mu^b = chi^{ab}_g mu^g and tau_a = tr(mu^a).
#[derive(Debug, Clone)]
pub struct StructureTensors {
    dim: usize,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
    pub chi: Vec<Complex64>,
    pub tau: Vec<f64>,
}

impl StructureTensors {
    fn traceless(&self) -> usize {
        self.dim * self.dim - 1
    }

    fn idx3(&self, n: usize, j: usize, k: usize, l: usize) -> usize {
        (j * n + k) * n + l
    }

    /// Symmetric coefficient d^{jkl} on the traceless sector (1-based
    /// element indices shifted down by one).
    pub fn d_coeff(&self, j: usize, k: usize, l: usize) -> f64 {
        self.d[self.idx3(self.traceless(), j, k, l)]
    }

    /// Antisymmetric coefficient f^{jkl} on the traceless sector.
    pub fn f_coeff(&self, j: usize, k: usize, l: usize) -> f64 {
        self.f[self.idx3(self.traceless(), j, k, l)]
    }

    /// Full product coefficient chi^{ab}_g.
    pub fn chi_coeff(&self, a: usize, b: usize, g: usize) -> Complex64 {
        self.chi[self.idx3(self.dim * self.dim, a, b, g)]
    }

    /// The matrix [D^l]_{jk} = d^{jk}_l over the traceless sector.
    pub fn d_slice(&self, l: usize) -> DMatrix<f64> {
        let n = self.traceless();
        DMatrix::from_fn(n, n, |j, k| self.d_coeff(j, k, l))
    }

    /// Largest deviation of d from total symmetry and f from total
    /// antisymmetry.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.traceless();
        let mut worst = 0.0f64;
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let d = self.d_coeff(j, k, l);
                    worst = worst.max((d - self.d_coeff(k, j, l)).abs());
                    worst = worst.max((d - self.d_coeff(j, l, k)).abs());
                    let f = self.f_coeff(j, k, l);
                    worst = worst.max((f + self.f_coeff(k, j, l)).abs());
                    worst = worst.max((f + self.f_coeff(j, l, k)).abs());
                }
            }
        }
        worst
    }
}

impl OperatorBasis {
    /// Validates orthonormality and hermiticity and wraps the elements.
    pub fn new(
        dim: usize,
        elements: Vec<DMatrix<Complex64>>,
        convention: Convention,
    ) -> Result<Arc<Self>, QuantumError> {
        if dim < 2 {
            return Err(QuantumError::DimensionTooSmall { got: dim });
        }
        if elements.len() != dim * dim {
            return Err(QuantumError::Dimension { expected: dim * dim, got: elements.len() });
        }
        for e in &elements {
            if e.nrows() != dim || e.ncols() != dim {
                return Err(QuantumError::Dimension { expected: dim, got: e.nrows() });
            }
            let herm = (e - e.adjoint()).map(|z| z.norm()).max();
            if herm > 1e-12 {
                return Err(QuantumError::NotHermitian { residual: herm });
            }
        }
        let basis = Self { dim, elements, convention, tensors: OnceLock::new() };
        let gram = basis.gram_residual();
        if gram > 1e-10 {
            return Err(QuantumError::NotOrthogonal { residual: gram });
        }
        Ok(Arc::new(basis))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn element(&self, alpha: usize) -> &DMatrix<Complex64> {
        &self.elements[alpha]
    }

    pub fn elements(&self) -> &[DMatrix<Complex64>] {
        &self.elements
    }

    /// Largest deviation of tr(mu^a mu^b) from the identity Gram matrix.
    pub fn gram_residual(&self) -> f64 {
        let n = self.elements.len();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in a..n {
                let g = hs_inner(&self.elements[a], &self.elements[b]);
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g.re - target).abs()).max(g.im.abs());
            }
        }
        worst
    }

    /// Structure tensors, computed on first use and cached.
    pub fn tensors(&self) -> &StructureTensors {
        self.tensors.get_or_init(|| self.structure_tensors())
    }

    /// Trace tensors of this basis: d and f on the traceless sector (only
    /// meaningful in the scaled convention) and chi, tau on the full basis.
    pub fn structure_tensors(&self) -> StructureTensors {
        let full = self.elements.len();
        let n = full - 1;
        let mut d = vec![0.0; n * n * n];
        let mut f = vec![0.0; n * n * n];
        let mut chi = vec![Complex64::new(0.0, 0.0); full * full * full];
        let mut tau = vec![0.0; full];
        for (a, e) in self.elements.iter().enumerate() {
            tau[a] = trace(e).re;
        }
        for a in 0..full {
            for b in 0..full {
                let prod = &self.elements[a] * &self.elements[b];
                for g in 0..full {
                    let c = hs_inner(&self.elements[g], &prod);
                    chi[(a * full + b) * full + g] = c;
                    if self.convention == Convention::Scaled && a >= 1 && b >= 1 && g >= 1 {
                        // lambda^j lambda^k = delta/D + (d + i f) lambda^l in
                        // the scaled convention, with unit-normalized traces.
                        d[((a - 1) * n + (b - 1)) * n + (g - 1)] += c.re;
                        f[((a - 1) * n + (b - 1)) * n + (g - 1)] += c.im;
                    }
                }
            }
        }
        // Symmetrize d and antisymmetrize f over the first index pair; the
        // raw chi already carries d^{jk}_l + i f^{jk}_l.
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    if j > k {
                        let jk = ((j * n + k) * n) + l;
                        let kj = ((k * n + j) * n) + l;
                        let sym = 0.5 * (d[jk] + d[kj]);
                        d[jk] = sym;
                        d[kj] = sym;
                        let anti = 0.5 * (f[jk] - f[kj]);
                        f[jk] = anti;
                        f[kj] = -anti;
                    }
                }
            }
        }
        StructureTensors { dim: self.dim, d, f, chi, tau }
    }
}

/// Hilbert-Schmidt inner product tr(a^dag b).
pub fn hs_inner(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    trace(&(a.adjoint() * b))
}

pub fn trace(m: &DMatrix<Complex64>) -> Complex64 {
    let mut t = Complex64::new(0.0, 0.0);
    for i in 0..m.nrows().min(m.ncols()) {
        t += m[(i, i)];
    }
    t
}

/// Generalized Gell-Mann basis of C^{D x D}, unit-normalized.
///
/// Ordering: the scaled identity, the symmetric off-diagonal generators in
/// lexicographic (row, column) order, the antisymmetric ones likewise, then
/// the diagonal generators by increasing support.
pub fn gellmann(dim: usize) -> Result<(Arc<OperatorBasis>, StructureTensors), QuantumError> {
    if dim < 2 {
        return Err(QuantumError::DimensionTooSmall { got: dim });
    }
    let mut elements = Vec::with_capacity(dim * dim);
    let mut identity = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        identity[(i, i)] = Complex64::new(1.0 / (dim as f64).sqrt(), 0.0);
    }
    elements.push(identity);
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    for a in 0..dim {
        for b in a + 1..dim {
            let mut m = DMatrix::zeros(dim, dim);
            m[(a, b)] = Complex64::new(inv_sqrt2, 0.0);
            m[(b, a)] = Complex64::new(inv_sqrt2, 0.0);
            elements.push(m);
        }
    }
    for a in 0..dim {
        for b in a + 1..dim {
            let mut m = DMatrix::zeros(dim, dim);
            m[(a, b)] = Complex64::new(0.0, -inv_sqrt2);
            m[(b, a)] = Complex64::new(0.0, inv_sqrt2);
            elements.push(m);
        }
    }
    for a in 2..=dim {
        let norm = 1.0 / ((a * (a - 1)) as f64).sqrt();
        let mut m = DMatrix::zeros(dim, dim);
        for k in 0..a - 1 {
            m[(k, k)] = Complex64::new(norm, 0.0);
        }
        m[(a - 1, a - 1)] = Complex64::new(-norm * (a as f64 - 1.0), 0.0);
        elements.push(m);
    }
    let basis = OperatorBasis::new(dim, elements, Convention::Scaled)?;
    let tensors = basis.tensors().clone();
    Ok((basis, tensors))
}

/// Kronecker-product basis mu^{(a)} x mu^{(b)} on C^{MN}, ordered with the
/// second factor fastest. Scaled factors give a scaled product basis.
pub fn tensor_product(
    a: &Arc<OperatorBasis>,
    b: &Arc<OperatorBasis>,
) -> Result<Arc<OperatorBasis>, QuantumError> {
    let dim = a.dim() * b.dim();
    let mut elements = Vec::with_capacity(dim * dim);
    for ea in a.elements() {
        for eb in b.elements() {
            elements.push(ea.kronecker(eb));
        }
    }
    let convention =
        if a.convention() == Convention::Scaled && b.convention() == Convention::Scaled {
            Convention::Scaled
        } else {
            Convention::Plain
        };
    OperatorBasis::new(dim, elements, convention)
}

/// Adjoint representation [O(U)]_{ab} = tr(mu^a U mu^b U^dag): the real
/// orthogonal rotation of coefficient space induced by conjugation.
pub fn adjoint_representation(
    u: &DMatrix<Complex64>,
    basis: &OperatorBasis,
) -> Result<DMatrix<f64>, QuantumError> {
    let dim = basis.dim();
    if u.nrows() != dim || u.ncols() != dim {
        return Err(QuantumError::Dimension { expected: dim, got: u.nrows() });
    }
    let unitarity = (u.adjoint() * u - DMatrix::<Complex64>::identity(dim, dim))
        .map(|z| z.norm())
        .max();
    if unitarity > 1e-10 {
        return Err(QuantumError::NotUnitary { residual: unitarity });
    }
    let n = basis.len();
    let udag = u.adjoint();
    let mut o = DMatrix::zeros(n, n);
    for b in 0..n {
        let rotated = u * basis.element(b) * &udag;
        for a in 0..n {
            o[(a, b)] = hs_inner(basis.element(a), &rotated).re;
        }
    }
    Ok(o)
}

/// Rotated basis mu^a = O_{ab} lambda^b for an orthogonal O; the result is
/// tagged plain because the identity slot is generally mixed away.
pub fn rotate(
    basis: &OperatorBasis,
    o: &DMatrix<f64>,
) -> Result<Arc<OperatorBasis>, QuantumError> {
    let n = basis.len();
    if o.nrows() != n || o.ncols() != n {
        return Err(QuantumError::Dimension { expected: n, got: o.nrows() });
    }
    let ortho = (o.transpose() * o - DMatrix::<f64>::identity(n, n)).amax();
    if ortho > 1e-10 {
        return Err(QuantumError::NotOrthogonal { residual: ortho });
    }
    let dim = basis.dim();
    let mut elements = Vec::with_capacity(n);
    for a in 0..n {
        let mut m: DMatrix<Complex64> = DMatrix::zeros(dim, dim);
        for b in 0..n {
            m += basis.element(b) * Complex::new(o[(a, b)], 0.0);
        }
        elements.push(m);
    }
    OperatorBasis::new(dim, elements, Convention::Plain)
}

/// Rotation-invariant inner product of coefficient vectors.
pub fn coeff_inner(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-12;

    fn random_unitary(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        let g = DMatrix::from_fn(dim, dim, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        g.qr().q()
    }

    #[test]
    fn qubit_basis_is_scaled_pauli() {
        let (basis, tensors) = gellmann(2).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        let want = [
            [[s, 0.0, 0.0, 0.0], [0.0, 0.0, s, 0.0]],     // I / sqrt 2
            [[0.0, 0.0, s, 0.0], [s, 0.0, 0.0, 0.0]],     // sigma_x / sqrt 2
            [[0.0, 0.0, 0.0, -s], [0.0, s, 0.0, 0.0]],    // sigma_y / sqrt 2
            [[s, 0.0, 0.0, 0.0], [0.0, 0.0, -s, 0.0]],    // sigma_z / sqrt 2
        ];
        for (e, w) in basis.elements().iter().zip(want.iter()) {
            for r in 0..2 {
                assert!((e[(r, 0)].re - w[r][0]).abs() < TOL);
                assert!((e[(r, 0)].im - w[r][1]).abs() < TOL);
                assert!((e[(r, 1)].re - w[r][2]).abs() < TOL);
                assert!((e[(r, 1)].im - w[r][3]).abs() < TOL);
            }
        }
        // The symmetric sector vanishes for qubits.
        let dmax = tensors.d.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(dmax < TOL);
    }

    #[test]
    fn gram_matrices_are_identity_for_small_dims() {
        for dim in 2..=5 {
            let (basis, _) = gellmann(dim).unwrap();
            assert_eq!(basis.len(), dim * dim);
            assert!(basis.gram_residual() < TOL, "dim {dim}");
            // Elements beyond the identity are traceless.
            for e in &basis.elements()[1..] {
                assert!(trace(e).norm() < TOL);
            }
        }
    }

    #[test]
    fn dimension_one_is_rejected() {
        assert!(matches!(gellmann(1), Err(QuantumError::DimensionTooSmall { got: 1 })));
    }

    #[test]
    fn structure_tensors_have_the_right_symmetries() {
        for dim in 2..=4 {
            let (_, tensors) = gellmann(dim).unwrap();
            assert!(tensors.symmetry_residual() < 1e-12, "dim {dim}");
        }
    }

    #[test]
    fn products_rebuild_from_delta_d_and_f() {
        for dim in 2..=4 {
            let (basis, tensors) = gellmann(dim).unwrap();
            let n = dim * dim - 1;
            let mut worst = 0.0f64;
            for j in 0..n {
                for k in 0..n {
                    let direct = basis.element(j + 1) * basis.element(k + 1);
                    let mut rebuilt: DMatrix<Complex64> =
                        DMatrix::identity(dim, dim)
                            * Complex64::new(f64::from(u8::from(j == k)) / dim as f64, 0.0);
                    for l in 0..n {
                        let coeff = Complex64::new(
                            tensors.d_coeff(j, k, l),
                            tensors.f_coeff(j, k, l),
                        );
                        rebuilt += basis.element(l + 1) * coeff;
                    }
                    worst = worst.max((direct - rebuilt).map(|z| z.norm()).max());
                }
            }
            assert!(worst < 1e-12, "dim {dim}: {worst}");
        }
    }

    #[test]
    fn chi_rebuilds_products_in_a_rotated_basis() {
        let (basis, _) = gellmann(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_unitary(3, &mut rng);
        let o = adjoint_representation(&u, &basis).unwrap();
        let rotated = rotate(&basis, &o).unwrap();
        let tensors = rotated.structure_tensors();
        let n = rotated.len();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let direct = rotated.element(a) * rotated.element(b);
                let mut rebuilt: DMatrix<Complex64> = DMatrix::zeros(3, 3);
                for g in 0..n {
                    rebuilt += rotated.element(g) * tensors.chi_coeff(a, b, g);
                }
                worst = worst.max((direct - rebuilt).map(|z| z.norm()).max());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn adjoint_of_identity_is_identity() {
        let (basis, _) = gellmann(3).unwrap();
        let o = adjoint_representation(&DMatrix::identity(3, 3), &basis).unwrap();
        assert!((o - DMatrix::<f64>::identity(9, 9)).amax() < 1e-12);
    }

    #[test]
    fn adjoint_matrices_are_orthogonal_and_fix_the_identity_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 2..=4 {
            let (basis, _) = gellmann(dim).unwrap();
            let u = random_unitary(dim, &mut rng);
            let o = adjoint_representation(&u, &basis).unwrap();
            let n = dim * dim;
            assert!(
                (o.transpose() * &o - DMatrix::<f64>::identity(n, n)).amax() < 1e-10,
                "dim {dim}"
            );
            assert!((o[(0, 0)] - 1.0).abs() < 1e-12);
            for a in 1..n {
                assert!(o[(a, 0)].abs() < 1e-12);
                assert!(o[(0, a)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_preserves_inner_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (basis, _) = gellmann(3).unwrap();
        let u = random_unitary(3, &mut rng);
        let o = adjoint_representation(&u, &basis).unwrap();
        for _ in 0..20 {
            let a = DVector::from_fn(9, |_, _| rng.gen::<f64>() - 0.5);
            let b = DVector::from_fn(9, |_, _| rng.gen::<f64>() - 0.5);
            let lhs = coeff_inner(&(&o * &a), &(&o * &b));
            assert!((lhs - coeff_inner(&a, &b)).abs() < 1e-10);
        }
    }

    #[test]
    fn non_unitary_input_is_rejected() {
        let (basis, _) = gellmann(2).unwrap();
        let mut m: DMatrix<Complex64> = DMatrix::identity(2, 2);
        m[(0, 0)] = Complex64::new(1.5, 0.0);
        assert!(matches!(
            adjoint_representation(&m, &basis),
            Err(QuantumError::NotUnitary { .. })
        ));
    }

    #[test]
    fn rotate_by_identity_keeps_the_elements() {
        let (basis, _) = gellmann(2).unwrap();
        let rotated = rotate(&basis, &DMatrix::identity(4, 4)).unwrap();
        for (a, b) in basis.elements().iter().zip(rotated.elements()) {
            assert!((a - b).map(|z| z.norm()).max() < TOL);
        }
    }

    #[test]
    fn tensor_product_basis_is_orthonormal() {
        let (qubit, _) = gellmann(2).unwrap();
        let pair = tensor_product(&qubit, &qubit).unwrap();
        assert_eq!(pair.dim(), 4);
        assert_eq!(pair.len(), 16);
        assert_eq!(pair.convention(), Convention::Scaled);
        assert!(pair.gram_residual() < TOL);
        // Index 0 is the scaled identity on the product space.
        let id = pair.element(0);
        for i in 0..4 {
            assert!((id[(i, i)].re - 0.5).abs() < TOL);
        }
    }
}
