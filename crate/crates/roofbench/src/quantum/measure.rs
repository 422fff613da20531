//! Linear entropy style entanglement measures and their polynomial form.

use nalgebra::DVector;
use num_complex::Complex64;

use super::basis::{trace, OperatorBasis};
use super::state::{DensityMatrix, Subsystem};
use super::QuantumError;
use crate::poly::{Monomial, Polynomial};

/// Traces below this are dropped when assembling the polynomial measure.
const TRACE_CLIP: f64 = 1e-13;

/// f_a(rho) = 2(1 - tr rho^a) from the eigenvalues.
pub fn measure_f_a(rho: &DensityMatrix, a: u32) -> Result<f64, QuantumError> {
    if a < 2 {
        return Err(QuantumError::MeasureOrder { got: a });
    }
    let (values, _) = rho.eigenpairs();
    let power: f64 = values.iter().map(|&v| v.max(0.0).powi(a as i32)).sum();
    Ok(2.0 * (1.0 - power))
}

/// Measure of a pure bipartite state: f_a of its reduction to the first
/// factor. Both reductions share a spectrum, so the choice is immaterial.
pub fn measure_f_a_pure(
    state: &DVector<Complex64>,
    mdim: usize,
    ndim: usize,
    a: u32,
) -> Result<f64, QuantumError> {
    let rho = DensityMatrix::from_pure(state)?;
    let reduced = rho.partial_trace(mdim, ndim, Subsystem::B)?;
    measure_f_a(&reduced, a)
}

/// The pure-state measure as a polynomial in the plain coefficients over a
/// product basis whose second factor has the scaled identity at index 0:
///
///   f_a = 2 - 2 N^{a/2} sum tr(lambda^{a_1} ... lambda^{a_a})
///                           c_{a_1 0} ... c_{a_a 0},
///
/// using tr_B(rho) = sqrt(N) c_{a 0} lambda^a on the first factor.
pub fn measure_polynomial(
    basis_a: &OperatorBasis,
    ndim: usize,
    a: u32,
) -> Result<Polynomial, QuantumError> {
    if a < 2 {
        return Err(QuantumError::MeasureOrder { got: a });
    }
    let order = a as usize;
    let ma = basis_a.len();
    let nb = ndim * ndim;
    let nvars = ma * nb;
    let scale = (ndim as f64).powf(a as f64 / 2.0);
    let mut terms = vec![Monomial { exponents: vec![0; nvars], coefficient: 2.0 }];
    let mut tuple = vec![0usize; order];
    loop {
        let mut prod = basis_a.element(tuple[0]).clone();
        for &t in &tuple[1..] {
            prod = prod * basis_a.element(t);
        }
        // Imaginary parts cancel between a tuple and its reversal, which
        // share a monomial; keeping the real part applies that in place.
        let tr = trace(&prod).re;
        if tr.abs() > TRACE_CLIP {
            let mut exponents = vec![0u32; nvars];
            for &t in &tuple {
                exponents[t * nb] += 1;
            }
            terms.push(Monomial { exponents, coefficient: -2.0 * scale * tr });
        }
        if !advance(&mut tuple, ma) {
            break;
        }
    }
    Ok(Polynomial::from_terms(nvars, &terms)?)
}

fn advance(tuple: &mut [usize], base: usize) -> bool {
    for slot in tuple.iter_mut().rev() {
        *slot += 1;
        if *slot < base {
            return true;
        }
        *slot = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::basis::{gellmann, tensor_product, Convention};
    use crate::quantum::state::CoefficientVector;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-12;

    fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> DVector<Complex64> {
        let v = DVector::from_fn(dim, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        &v / Complex64::new(v.norm(), 0.0)
    }

    fn random_density(dim: usize, rank: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        let mut m: DMatrix<Complex64> = DMatrix::zeros(dim, dim);
        let mut weights = Vec::new();
        let mut total = 0.0;
        for _ in 0..rank {
            let w = rng.gen::<f64>() + 0.1;
            total += w;
            weights.push(w);
        }
        for w in &weights {
            let psi = random_state(dim, rng);
            m += &psi * psi.adjoint() * Complex64::new(w / total, 0.0);
        }
        DensityMatrix::new(m).unwrap()
    }

    fn bell() -> DVector<Complex64> {
        let s = 1.0 / 2.0f64.sqrt();
        DVector::from_vec(vec![
            Complex64::new(s, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(s, 0.0),
        ])
    }

    #[test]
    fn bell_state_saturates_the_qubit_measure() {
        assert!((measure_f_a_pure(&bell(), 2, 2, 2).unwrap() - 1.0).abs() < TOL);
        // a = 3: the reduction is I/2, so f_3 = 2(1 - 2/8).
        assert!((measure_f_a_pure(&bell(), 2, 2, 3).unwrap() - 1.5).abs() < TOL);
    }

    #[test]
    fn product_states_measure_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = random_state(2, &mut rng);
            let b = random_state(2, &mut rng);
            let prod = a.kronecker(&b);
            for order in [2, 3] {
                assert!(measure_f_a_pure(&prod, 2, 2, order).unwrap().abs() < TOL);
            }
        }
    }

    #[test]
    fn schmidt_pair_measures_match_the_closed_form() {
        for p in [0.1f64, 0.25, 0.5, 0.9] {
            let psi = DVector::from_vec(vec![
                Complex64::new(p.sqrt(), 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new((1.0 - p).sqrt(), 0.0),
            ]);
            let got = measure_f_a_pure(&psi, 2, 2, 2).unwrap();
            assert!((got - 4.0 * p * (1.0 - p)).abs() < TOL, "p {p}: {got}");
        }
    }

    #[test]
    fn low_orders_are_rejected() {
        let rho = DensityMatrix::from_pure(&bell()).unwrap();
        assert!(matches!(measure_f_a(&rho, 1), Err(QuantumError::MeasureOrder { got: 1 })));
        let (basis, _) = gellmann(2).unwrap();
        assert!(matches!(
            measure_polynomial(&basis, 2, 0),
            Err(QuantumError::MeasureOrder { got: 0 })
        ));
    }

    #[test]
    fn the_measure_is_concave_in_the_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for a in [2, 3] {
            for _ in 0..20 {
                let r1 = random_density(3, 2, &mut rng);
                let r2 = random_density(3, 3, &mut rng);
                let q = rng.gen::<f64>();
                let mix = DensityMatrix::new(
                    r1.matrix() * Complex64::new(q, 0.0)
                        + r2.matrix() * Complex64::new(1.0 - q, 0.0),
                )
                .unwrap();
                let lhs = measure_f_a(&mix, a).unwrap();
                let rhs = q * measure_f_a(&r1, a).unwrap()
                    + (1.0 - q) * measure_f_a(&r2, a).unwrap();
                assert!(lhs >= rhs - 1e-10, "a {a}: {lhs} < {rhs}");
            }
        }
    }

    #[test]
    fn the_measure_is_unitarily_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho = random_density(3, 2, &mut rng);
        let g = DMatrix::from_fn(3, 3, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let u = g.qr().q();
        let rotated = DensityMatrix::new(&u * rho.matrix() * u.adjoint()).unwrap();
        for a in [2, 3, 4] {
            let base = measure_f_a(&rho, a).unwrap();
            assert!((measure_f_a(&rotated, a).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn polynomial_route_matches_the_matrix_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (qubit, _) = gellmann(2).unwrap();
        let pair = tensor_product(&qubit, &qubit).unwrap();
        for a in [2, 3] {
            let objective = measure_polynomial(&qubit, 2, a).unwrap();
            assert_eq!(objective.nvars(), 16);
            for _ in 0..10 {
                let psi = random_state(4, &mut rng);
                let rho = DensityMatrix::from_pure(&psi).unwrap();
                let c = CoefficientVector::embed(&rho, &pair, Convention::Plain).unwrap();
                let via_poly = objective.eval(c.values()).unwrap();
                let via_matrix = measure_f_a_pure(&psi, 2, 2, a).unwrap();
                assert!((via_poly - via_matrix).abs() < 1e-12, "a {a}");
            }
        }
    }

    #[test]
    fn values_stay_inside_the_spectral_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for a in [2u32, 3] {
            // 0 <= f_a <= 2(1 - M^{1-a}) for reductions of pure states.
            let cap = 2.0 * (1.0 - 2.0f64.powi(1 - a as i32));
            for _ in 0..20 {
                let psi = random_state(4, &mut rng);
                let got = measure_f_a_pure(&psi, 2, 2, a).unwrap();
                assert!(got >= -TOL && got <= cap + TOL, "a {a}: {got}");
            }
        }
    }
}
