//! End-to-end acceptance checks, one test per release criterion.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{dvector, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use roofbench::poly::Polynomial;
use roofbench::quantum::{
    adjoint_representation, angle, entanglement_of_formation, gellmann, hjw_ensemble,
    measure_f_a, measure_f_a_pure, purity_conditions, random_right_unitary,
    CoefficientVector, Convention, DensityMatrix, EofOptions, EofStrategy,
};
use roofbench::roof::{Decomposition, OracleOptions, RoofProblem, RoofSense};
use roofbench::tangency::{
    certify_target, solve_certificate, verify_certificate, CertificateOptions, GraphModel,
    OptimalitySystem, PolynomialTangentBasis, RMatrix,
};
use roofbench::variety::{Variety, DEFAULT_RANK_TOL};

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

fn circle_problem(sense: RoofSense) -> RoofProblem {
    let gen = Polynomial::parse("1*x1^2 + 1*x2^2 - 1", 2).unwrap();
    let f = Polynomial::parse("1*x1^3", 2).unwrap();
    let variety = Variety::new(2, vec![gen], Some(1)).unwrap();
    RoofProblem::new(variety, f, sense).unwrap()
}

fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> DVector<Complex64> {
    let v = DVector::from_fn(dim, |_, _| {
        Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

fn random_unitary(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    g.qr().q()
}

/// Rank-2 mixture of two orthonormal random pure states.
fn random_rank_two(dim: usize, p: f64, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let v = random_state(dim, rng);
    let mut w = random_state(dim, rng);
    let overlap = v.dotc(&w);
    w -= &v * overlap;
    let n = w.norm();
    let w = w / Complex64::new(n, 0.0);
    let m = &v * v.adjoint() * Complex64::new(p, 0.0)
        + &w * w.adjoint() * Complex64::new(1.0 - p, 0.0);
    DensityMatrix::new(m).unwrap()
}

#[test]
fn criterion_1_tritangent_value_via_both_routes() {
    let start = Instant::now();
    let problem = circle_problem(RoofSense::Convex);
    let origin = dvector![0.0, 0.0];

    let opts =
        OracleOptions { m_max: Some(3), restarts: 32, seed: 3, ..OracleOptions::default() };
    let oracle = problem.oracle(&origin, &opts).unwrap();
    assert!((oracle.value + 0.25).abs() < 1e-6, "oracle value {}", oracle.value);

    let copts = CertificateOptions {
        m_max: Some(3),
        restarts: 32,
        seed: 3,
        ..CertificateOptions::default()
    };
    let report = certify_target(&problem, &origin, &copts).unwrap();
    assert!((report.best.value + 0.25).abs() < 1e-6, "certified value {}", report.best.value);

    let expected = [[-1.0, 0.0], [0.5, -SQRT3_2], [0.5, SQRT3_2]];
    for mut dec in [oracle.decomposition.clone(), report.best.decomposition.clone()] {
        dec.canonicalize();
        assert_eq!(dec.len(), 3);
        for (point, want) in dec.points.iter().zip(&expected) {
            for (got, want) in point.iter().zip(want) {
                assert!((got - want).abs() < 1e-5, "contact {point:?} vs {want:?}");
            }
        }
        for w in &dec.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-5, "weight {w}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "PASS criterion 1: conv f(0,0) = -1/4 via oracle ({:.12}) and certificate ({:.12}), \
         matching tritangent contacts, in {elapsed:?}",
        oracle.value, report.best.value
    );
}

#[test]
fn criterion_2_two_contact_system_matches_the_handwritten_one() {
    let problem = circle_problem(RoofSense::Convex);
    let target = dvector![0.9, 0.0];
    let basis = PolynomialTangentBasis::new(vec![vec![
        Polynomial::parse("1*x2^1", 2).unwrap(),
        Polynomial::parse("1*x1^1", 2).unwrap().scale(-1.0),
    ]]);
    let system = OptimalitySystem::assemble(&problem, &basis, &target, 2).unwrap();
    let folded = system.fold_normalization().unwrap();
    assert_eq!(folded.equations().len(), 5);
    assert_eq!(folded.nvars(), 5);
    assert_eq!(
        folded.labels(),
        ["membership[0]", "membership[1]", "tangency", "barycenter", "barycenter"]
    );

    // Hand-built five-equation system in (x1, y1, x2, y2, p): two circle
    // memberships, the 3x3 tangency determinant with the conventional
    // z-slope x^2 y, and the two barycenter equations.
    let v = |i: usize| Polynomial::variable(5, i);
    let (x1, y1, x2, y2, p) = (v(0), v(1), v(2), v(3), v(4));
    let sq = |q: &Polynomial| q.mul(q).unwrap();
    let cube = |q: &Polynomial| q.mul(q).unwrap().mul(q).unwrap();
    let e1 = sq(&x1).add(&sq(&y1)).unwrap().add(&Polynomial::constant(5, -1.0)).unwrap();
    let e2 = sq(&x2).add(&sq(&y2)).unwrap().add(&Polynomial::constant(5, -1.0)).unwrap();
    let r0 = [y1.clone(), x1.scale(-1.0), sq(&x1).mul(&y1).unwrap()];
    let r1 = [y2.clone(), x2.scale(-1.0), sq(&x2).mul(&y2).unwrap()];
    let r2 =
        [x1.sub(&x2).unwrap(), y1.sub(&y2).unwrap(), cube(&x1).sub(&cube(&x2)).unwrap()];
    let det2 = |a: &Polynomial, b: &Polynomial, c: &Polynomial, d: &Polynomial| {
        a.mul(d).unwrap().sub(&b.mul(c).unwrap()).unwrap()
    };
    let e3 = r0[0]
        .mul(&det2(&r1[1], &r1[2], &r2[1], &r2[2]))
        .unwrap()
        .sub(&r0[1].mul(&det2(&r1[0], &r1[2], &r2[0], &r2[2])).unwrap())
        .unwrap()
        .add(&r0[2].mul(&det2(&r1[0], &r1[1], &r2[0], &r2[1])).unwrap())
        .unwrap();
    let one_minus_p = Polynomial::constant(5, 1.0).sub(&p).unwrap();
    let e4 = p
        .mul(&x1)
        .unwrap()
        .add(&one_minus_p.mul(&x2).unwrap())
        .unwrap()
        .add(&Polynomial::constant(5, -0.9))
        .unwrap();
    let e5 = p.mul(&y1).unwrap().add(&one_minus_p.mul(&y2).unwrap()).unwrap();
    let hand = [e1, e2, e3, e4, e5];

    // The assembled system agrees equation by equation. The assembled
    // tangency row carries the exact lifted slope 3 x^2 y, so its
    // determinant relates to the conventional one through the cofactor
    // identity det_exact = 3 det_hand - 2 (x1^3 - x2^3)(x1 y2 - x2 y1).
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let u = DVector::from_fn(5, |_, _| 2.0 * rng.gen::<f64>() - 1.0);
        let assembled: Vec<f64> =
            folded.equations().iter().map(|eq| eq.eval(&u).unwrap()).collect();
        for (idx, hand_idx) in [(0usize, 0usize), (1, 1), (3, 3), (4, 4)] {
            let want = hand[hand_idx].eval(&u).unwrap();
            assert!(
                (assembled[idx] - want).abs() < 1e-10,
                "equation {idx}: {} vs {want}",
                assembled[idx]
            );
        }
        let correction = 2.0
            * (u[0].powi(3) - u[2].powi(3))
            * (u[0] * u[3] - u[2] * u[1]);
        let want = 3.0 * hand[2].eval(&u).unwrap() - correction;
        assert!(
            (assembled[2] - want).abs() < 1e-9,
            "tangency determinant: {} vs {want}",
            assembled[2]
        );
    }

    // A solved bitangent drives all five hand residuals to zero.
    let opts = CertificateOptions { seed: 3, restarts: 16, ..CertificateOptions::default() };
    let cert = solve_certificate(&problem, &target, 2, &opts).unwrap();
    let dec = &cert.decomposition;
    let u = DVector::from_vec(vec![
        dec.points[0][0],
        dec.points[0][1],
        dec.points[1][0],
        dec.points[1][1],
        dec.weights[0],
    ]);
    let mut worst = folded.max_residual(&u).unwrap();
    for eq in &hand {
        worst = worst.max(eq.eval(&u).unwrap().abs());
    }
    assert!(worst < 1e-8, "solved bitangent residual {worst}");
    println!(
        "PASS criterion 2: assembled two-contact system matches the handwritten five \
         equations; solved bitangent residual {worst:.3e}"
    );
}

#[test]
fn criterion_3_oracle_and_certificates_agree_on_the_disk_grid() {
    let start = Instant::now();
    let problem = circle_problem(RoofSense::Convex);
    let mut targets = Vec::new();
    for i in 0..9 {
        for j in 0..9 {
            let x = -0.8 + 0.2 * i as f64;
            let y = -0.8 + 0.2 * j as f64;
            if x * x + y * y < 1.0 {
                targets.push(dvector![x, y]);
            }
        }
    }
    assert_eq!(targets.len(), 69);

    let opts = OracleOptions {
        m_max: Some(3),
        restarts: 64,
        seed: 9,
        tol: 1e-9,
        ..OracleOptions::default()
    };
    let entries = problem.grid(&targets, &opts);
    assert!(entries.iter().all(|e| e.feasible), "oracle failed inside the disk");

    // Verified certificates agree with oracle values wherever the solver lands.
    let copts = CertificateOptions {
        m_max: Some(3),
        restarts: 64,
        seed: 9,
        ..CertificateOptions::default()
    };
    let certified: Vec<Option<f64>> = targets
        .par_iter()
        .map(|t| {
            certify_target(&problem, t, &copts)
                .ok()
                .filter(|r| verify_certificate(&problem, &r.best, 1e-6).unwrap().passed)
                .map(|r| r.best.value)
        })
        .collect();
    let solved = certified.iter().flatten().count();
    assert!(solved >= 60, "only {solved}/69 targets certified");
    let mut worst_gap = 0.0f64;
    let mut worst_at = dvector![0.0, 0.0];
    for ((entry, cert), target) in entries.iter().zip(&certified).zip(&targets) {
        if let Some(cv) = cert {
            let gap = (entry.value.unwrap() - cv).abs();
            if gap > worst_gap {
                worst_gap = gap;
                worst_at = target.clone();
            }
        }
    }
    assert!(worst_gap < 1e-5, "oracle/certificate gap {worst_gap} at {worst_at:?}");

    // Every optimal decomposition satisfies the rank-drop tangency test.
    let graph = GraphModel::new(&problem).unwrap();
    let mut worst_sv = 0.0f64;
    for entry in &entries {
        let dec = entry.decomposition.as_ref().unwrap();
        let contacts: Vec<DVector<f64>> =
            dec.points.iter().map(|p| DVector::from_vec(p.clone())).collect();
        let rmat = RMatrix::build(&graph, &contacts, DEFAULT_RANK_TOL).unwrap();
        worst_sv = worst_sv.max(rmat.sv_residual());
    }
    assert!(worst_sv < 1e-6, "tangency residual {worst_sv}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "PASS criterion 3: {solved}/69 certificates, worst oracle gap {worst_gap:.3e}, \
         worst tangency residual {worst_sv:.3e}, in {elapsed:?}"
    );
}

#[test]
fn criterion_4_roof_convexity_and_boundary_properties() {
    let problem = circle_problem(RoofSense::Convex);
    let opts =
        OracleOptions { m_max: Some(3), restarts: 8, seed: 23, ..OracleOptions::default() };

    // Midpoint convexity along 200 random chords of the graph: the two-point
    // mixture of the endpoints witnesses the roof value at the midpoint.
    // Near-coincident endpoints put the midpoint within solver tolerance of
    // the variety itself, so only well-separated chords are kept.
    let pool = problem.variety().sample(500, 41).unwrap();
    let chords: Vec<(&DVector<f64>, &DVector<f64>)> = pool
        .chunks(2)
        .filter(|pair| (&pair[0] - &pair[1]).norm() >= 0.1)
        .map(|pair| (&pair[0], &pair[1]))
        .take(200)
        .collect();
    assert_eq!(chords.len(), 200, "not enough separated chords in the sample");
    let mut worst_violation = f64::NEG_INFINITY;
    for (a, b) in chords {
        let mid = (a + b) / 2.0;
        let fa = problem.objective().eval(a).unwrap();
        let fb = problem.objective().eval(b).unwrap();
        let witness = Decomposition::new(
            vec![a.iter().cloned().collect(), b.iter().cloned().collect()],
            vec![0.5, 0.5],
        );
        let chord_opts = OracleOptions {
            m_max: Some(3),
            restarts: 4,
            seed: 23,
            warm_starts: vec![witness],
            ..OracleOptions::default()
        };
        let value = problem.oracle(&mid, &chord_opts).unwrap().value;
        worst_violation = worst_violation.max(value - 0.5 * (fa + fb));
    }
    assert!(worst_violation < 1e-6, "midpoint violation {worst_violation}");

    // The concave roof is the negated convex roof of the negated objective.
    let concave = circle_problem(RoofSense::Concave);
    let neg = RoofProblem::new(
        Variety::new(2, vec![Polynomial::parse("1*x1^2 + 1*x2^2 - 1", 2).unwrap()], Some(1))
            .unwrap(),
        Polynomial::parse("0 - 1*x1^3", 2).unwrap(),
        RoofSense::Convex,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mirror_targets: Vec<DVector<f64>> = (0..20)
        .map(|_| {
            let theta = rng.gen::<f64>() * std::f64::consts::TAU;
            let r = 0.95 * rng.gen::<f64>().sqrt();
            dvector![r * theta.cos(), r * theta.sin()]
        })
        .collect();
    let mirror_opts =
        OracleOptions { m_max: Some(3), restarts: 16, seed: 29, ..OracleOptions::default() };
    let up = concave.grid(&mirror_targets, &mirror_opts);
    let down = neg.grid(&mirror_targets, &mirror_opts);
    let mut worst_mirror = 0.0f64;
    for (u, d) in up.iter().zip(&down) {
        worst_mirror = worst_mirror.max((u.value.unwrap() + d.value.unwrap()).abs());
    }
    assert!(worst_mirror < 1e-8, "mirror gap {worst_mirror}");

    // The roof restricts to the objective on the variety itself. A tight
    // feasibility tolerance keeps short chords from shaving curvature slack.
    let on_variety = problem.variety().sample(50, 17).unwrap();
    let boundary_opts = OracleOptions { tol: 1e-10, ..opts.clone() };
    let restricted = problem.grid(&on_variety, &boundary_opts);
    let mut worst_boundary = 0.0f64;
    for (x, entry) in on_variety.iter().zip(&restricted) {
        let f = problem.objective().eval(x).unwrap();
        worst_boundary = worst_boundary.max((entry.value.unwrap() - f).abs());
    }
    assert!(worst_boundary < 1e-6, "boundary gap {worst_boundary}");

    // The roof is affine across the tritangent triangle.
    let triangle = Decomposition::new(
        vec![vec![-1.0, 0.0], vec![0.5, -SQRT3_2], vec![0.5, SQRT3_2]],
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    );
    let affine_opts =
        OracleOptions { m_max: Some(3), restarts: 8, seed: 5, ..OracleOptions::default() };
    assert!(problem.is_affine_on_polytope(&triangle, 20, 1e-6, &affine_opts).unwrap());

    println!(
        "PASS criterion 4: midpoint convexity ({worst_violation:.3e}), concave mirror \
         ({worst_mirror:.3e}), boundary restriction ({worst_boundary:.3e}), affine triangle"
    );
}

#[test]
fn criterion_5_operator_basis_and_pure_state_geometry() {
    let start = Instant::now();
    for dim in 2..=5usize {
        let (basis, tensors) = gellmann(dim).unwrap();
        assert!(basis.gram_residual() < 1e-12, "dim {dim} gram");

        // Product reconstruction from the structure tensors.
        if dim <= 4 {
            let n = dim * dim - 1;
            let mut worst = 0.0f64;
            for j in 0..n {
                for k in 0..n {
                    let direct = basis.element(j + 1) * basis.element(k + 1);
                    let mut rebuilt: DMatrix<Complex64> = DMatrix::identity(dim, dim)
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
            assert!(worst < 1e-12, "dim {dim} reconstruction {worst}");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(100 + dim as u64);
        let radius = (dim * (dim - 1)) as f64;

        // Pure states satisfy the sphere and star-product conditions.
        let mut pure_states = Vec::with_capacity(100);
        for _ in 0..100 {
            let rho = DensityMatrix::from_pure(&random_state(dim, &mut rng)).unwrap();
            let c = CoefficientVector::embed(&rho, &basis, Convention::Scaled).unwrap();
            let report = purity_conditions(&c, 1e-9).unwrap();
            assert!(report.is_pure, "dim {dim} pure state rejected");
            assert!(report.norm_residual.abs() < 1e-9, "dim {dim} sphere radius");
            assert!(report.product_residual < 1e-9, "dim {dim} star condition");
            assert!((c.values().norm_squared() - radius).abs() < 1e-9);
            pure_states.push(rho);
        }

        // Mixed states fail the purity conditions.
        for _ in 0..100 {
            let rho = random_rank_two(dim, 0.6, &mut rng);
            let c = CoefficientVector::embed(&rho, &basis, Convention::Scaled).unwrap();
            assert!(!purity_conditions(&c, 1e-9).unwrap().is_pure, "dim {dim} mixed");
        }

        // No pair of pure states exceeds the widest angle.
        let theta_max = (1.0 / (1.0 - dim as f64)).acos();
        for i in 0..100 {
            let a = &pure_states[i];
            let b = &pure_states[(i + 1) % 100];
            let theta = angle(a, b).unwrap();
            assert!(theta <= theta_max + 1e-9, "dim {dim} angle {theta} > {theta_max}");
        }

        // Unitary conjugation acts orthogonally and preserves the products.
        let traceless = dim * dim - 1;
        for _ in 0..3 {
            let u = random_unitary(dim, &mut rng);
            let o = adjoint_representation(&u, &basis).unwrap();
            let ortho = (o.transpose() * &o - DMatrix::identity(dim * dim, dim * dim)).amax();
            assert!(ortho < 1e-10, "dim {dim} orthogonality {ortho}");
            let block = o.view((1, 1), (traceless, traceless)).into_owned();
            for _ in 0..5 {
                let av = DVector::from_fn(traceless, |_, _| rng.gen::<f64>() - 0.5);
                let bv = DVector::from_fn(traceless, |_, _| rng.gen::<f64>() - 0.5);
                let a =
                    CoefficientVector::from_values(av.clone(), &basis, Convention::Scaled)
                        .unwrap();
                let b =
                    CoefficientVector::from_values(bv.clone(), &basis, Convention::Scaled)
                        .unwrap();
                let ra =
                    CoefficientVector::from_values(&block * &av, &basis, Convention::Scaled)
                        .unwrap();
                let rb =
                    CoefficientVector::from_values(&block * &bv, &basis, Convention::Scaled)
                        .unwrap();
                let wedge_gap =
                    (ra.wedge(&rb).unwrap().values() - &block * a.wedge(&b).unwrap().values())
                        .amax();
                let star_gap =
                    (ra.star(&rb).unwrap().values() - &block * a.star(&b).unwrap().values())
                        .amax();
                assert!(wedge_gap < 1e-10, "dim {dim} wedge equivariance {wedge_gap}");
                assert!(star_gap < 1e-10, "dim {dim} star equivariance {star_gap}");
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "PASS criterion 5: basis Gram, product reconstruction, purity conditions, angle \
         bound, and adjoint equivariance for dims 2..=5, in {elapsed:?}"
    );
}

#[test]
fn criterion_6_entanglement_measures_closed_forms_and_properties() {
    // Maximally entangled two-qubit state.
    let inv = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let bell = DVector::from_vec(vec![inv, zero, zero, inv]);
    assert!((measure_f_a_pure(&bell, 2, 2, 2).unwrap() - 1.0).abs() < 1e-12);

    // Schmidt family sqrt(p)|00> + sqrt(1-p)|11>.
    for i in 0..=20 {
        let p = i as f64 / 20.0;
        let state = DVector::from_vec(vec![
            Complex64::new(p.sqrt(), 0.0),
            zero,
            zero,
            Complex64::new((1.0 - p).sqrt(), 0.0),
        ]);
        let value = measure_f_a_pure(&state, 2, 2, 2).unwrap();
        assert!((value - 4.0 * p * (1.0 - p)).abs() < 1e-12, "p = {p}: {value}");
    }

    // Concavity and unitary invariance of the trace measures.
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for dim in 2..=4usize {
        for a in 2..=3u32 {
            for _ in 0..100 {
                let rho = random_rank_two(dim, 0.3 + 0.4 * rng.gen::<f64>(), &mut rng);
                let sigma = random_rank_two(dim, 0.3 + 0.4 * rng.gen::<f64>(), &mut rng);
                let t = rng.gen::<f64>();
                let mix = DensityMatrix::new(
                    rho.matrix() * Complex64::new(t, 0.0)
                        + sigma.matrix() * Complex64::new(1.0 - t, 0.0),
                )
                .unwrap();
                let lhs = measure_f_a(&mix, a).unwrap();
                let rhs = t * measure_f_a(&rho, a).unwrap()
                    + (1.0 - t) * measure_f_a(&sigma, a).unwrap();
                assert!(lhs >= rhs - 1e-9, "dim {dim} a {a}: concavity {lhs} < {rhs}");

                let u = random_unitary(dim, &mut rng);
                let rotated = DensityMatrix::new(&u * rho.matrix() * u.adjoint()).unwrap();
                let gap = (measure_f_a(&rotated, a).unwrap()
                    - measure_f_a(&rho, a).unwrap())
                .abs();
                assert!(gap < 1e-9, "dim {dim} a {a}: invariance gap {gap}");
            }
        }
    }
    println!(
        "PASS criterion 6: F_2 closed forms to 1e-12 and concavity/unitary invariance on \
         100 instances per (dim, order) pair"
    );
}

/// Concurrence-squared of a two-qubit state via the spin-flip spectrum.
fn concurrence_squared(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    let mut flip = DMatrix::zeros(4, 4);
    let one = Complex64::new(1.0, 0.0);
    flip[(0, 3)] = -one;
    flip[(1, 2)] = one;
    flip[(2, 1)] = one;
    flip[(3, 0)] = -one;
    let tilde = &flip * m.map(|z| z.conj()) * &flip;
    let eig = m.clone().symmetric_eigen();
    let sqrt_diag = DMatrix::from_diagonal(
        &eig.eigenvalues.map(|v| Complex64::new(v.max(0.0).sqrt(), 0.0)),
    );
    let root = &eig.eigenvectors * sqrt_diag * eig.eigenvectors.adjoint();
    let spectrum = (&root * tilde * &root).symmetric_eigen();
    let mut mu: Vec<f64> = spectrum.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    mu.sort_by(|a, b| b.total_cmp(a));
    (mu[0] - mu[1] - mu[2] - mu[3]).max(0.0).powi(2)
}

#[test]
fn criterion_7_eof_search_matches_concurrence_oracle() {
    let start = Instant::now();
    let states: Vec<(u64, DensityMatrix)> = (0..20)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + i);
            let p = 0.25 + 0.5 * rng.gen::<f64>();
            (1000 + i, random_rank_two(4, p, &mut rng))
        })
        .collect();

    let gaps: Vec<(f64, f64)> = states
        .par_iter()
        .map(|(seed, rho)| {
            let opts = EofOptions {
                a: 2,
                strategy: EofStrategy::UnitarySearch,
                seed: *seed,
                restarts: 256,
                s_max: None,
            };
            let result = entanglement_of_formation(rho, 2, 2, &opts).unwrap();
            let oracle = concurrence_squared(rho);
            let gap = (result.value - oracle).abs();

            // The optimum never beats any witnessed ensemble average.
            let mut slack: f64 = result.ensemble.average_measure(2, 2, 2).unwrap()
                - result.value;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(97));
            for s in 2..=4usize {
                for _ in 0..5 {
                    let u = random_right_unitary(s, 2, &mut rng).unwrap();
                    let ensemble = hjw_ensemble(rho, &u).unwrap();
                    slack = slack
                        .min(ensemble.average_measure(2, 2, 2).unwrap() - result.value);
                }
            }
            (gap, slack)
        })
        .collect();

    let worst_gap = gaps.iter().map(|g| g.0).fold(0.0f64, f64::max);
    let worst_slack = gaps.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
    assert!(worst_gap < 1e-3, "worst oracle gap {worst_gap}");
    assert!(worst_slack > -1e-8, "search undercut a witnessed ensemble by {worst_slack}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "PASS criterion 7: 20 rank-2 states, worst concurrence gap {worst_gap:.3e}, \
         witness slack {worst_slack:.3e}, in {elapsed:?}"
    );
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("roofbench-acc-{}-{name}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_roofbench")).args(args).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "roofbench {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn criterion_8_bundled_configs_are_deterministic() {
    // Each bundled config twice, with byte-identical artifacts.
    let jobs: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        (
            "run",
            vec!["run".into(), fixture("circle_x3.json").to_str().unwrap().into()],
            vec!["circle_x3_run.json", "circle_x3_grid.csv"],
        ),
        (
            "certify",
            vec!["certify".into(), fixture("circle_x3_certify.json").to_str().unwrap().into()],
            vec!["circle_x3_certs.json"],
        ),
        (
            "eof",
            vec![
                "quantum".into(),
                "eof".into(),
                fixture("bell_mixture.json").to_str().unwrap().into(),
                "--dim".into(),
                "2x2".into(),
                "--seed".into(),
                "1".into(),
                "--restarts".into(),
                "32".into(),
            ],
            vec!["eof.json"],
        ),
    ];
    for (name, args, files) in jobs {
        let first = scratch(&format!("det-{name}-a"));
        let second = scratch(&format!("det-{name}-b"));
        for dir in [&first, &second] {
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            let dir_arg = dir.to_str().unwrap();
            full.push("--out");
            full.push(dir_arg);
            run_ok(&full);
        }
        for file in files {
            let a = fs::read(first.join(file)).unwrap();
            let b = fs::read(second.join(file)).unwrap();
            assert_eq!(a, b, "{name}: {file} differs between runs");
        }
    }
    println!("PASS criterion 8: bundled run, certify, and eof outputs are byte-identical");
}
