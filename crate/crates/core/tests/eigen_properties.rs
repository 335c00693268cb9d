mod common;

use common::*;
use leia_core::linalg::{symmetric_eigendecomposition, EigenDecomposition};
use leia_core::DenseMatrix;
use num_complex::Complex64;
use rand::Rng;

fn check_decomposition(a: &DenseMatrix, dec: &EigenDecomposition) {
    let d = a.rows();
    let v = &dec.eigenvectors;
    let scale = 1.0 + a.frobenius_norm();

    let gram = v.transpose().matmul(v).unwrap();
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - target).abs() <= 1e-8, "d={d}: VᵀV[{i},{j}] = {}", gram[(i, j)]);
        }
    }
    for (j, &lambda) in dec.eigenvalues.iter().enumerate() {
        let col = v.column(j);
        let av = a.matvec(&col).unwrap();
        let residual = av.iter().zip(&col).map(|(x, c)| (x - lambda * c).powi(2)).sum::<f64>().sqrt();
        assert!(residual <= 1e-6 * scale, "d={d}: residual {residual} for pair {j}");
        let lead = col.iter().find(|x| x.abs() > 1e-12).unwrap();
        assert!(*lead > 0.0, "sign convention violated in column {j}");
    }
    assert!(dec.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    let sum: f64 = dec.eigenvalues.iter().sum();
    assert!((sum - a.trace()).abs() <= 1e-8 * (1.0 + a.trace().abs()));

    let lambda = DenseMatrix::from_fn(d, d, |i, j| if i == j { dec.eigenvalues[i] } else { 0.0 });
    let rebuilt = v.matmul(&lambda).unwrap().matmul(&v.transpose()).unwrap();
    let diff = DenseMatrix::from_fn(d, d, |i, j| rebuilt[(i, j)] - a[(i, j)]);
    assert!(diff.frobenius_norm() <= 1e-8 * scale, "d={d}: reconstruction error {}", diff.frobenius_norm());
}

#[test]
fn random_symmetric_matrices_decompose() {
    let mut rng = rng(11);
    for trial in 0..200 {
        let d = 1 + trial % 32;
        let a = random_symmetric(&mut rng, d);
        check_decomposition(&a, &symmetric_eigendecomposition(&a).unwrap());
    }
}

#[test]
fn random_psd_matrices_decompose() {
    let mut rng = rng(12);
    for d in 1..=32 {
        let a = random_psd(&mut rng, d);
        let dec = symmetric_eigendecomposition(&a).unwrap();
        check_decomposition(&a, &dec);
        assert!(dec.eigenvalues.iter().all(|&l| l >= -1e-8 * (1.0 + a.frobenius_norm())));
    }
}

/// Coefficients `c_0..c_d` of `det(λI − A) = Σ c_k λ^{d−k}` by Faddeev–LeVerrier.
fn characteristic_polynomial(a: &DenseMatrix) -> Vec<f64> {
    let d = a.rows();
    let mut coeffs = vec![1.0];
    let mut m = DenseMatrix::zeros(d, d);
    for k in 1..=d {
        // M_k = A M_{k-1} + c_{k-1} I
        let am = a.matmul(&m).unwrap();
        m = DenseMatrix::from_fn(d, d, |i, j| am[(i, j)] + if i == j { coeffs[k - 1] } else { 0.0 });
        let trace = a.matmul(&m).unwrap().trace();
        coeffs.push(-trace / k as f64);
    }
    coeffs
}

/// All roots of the monic polynomial by Durand–Kerner iteration.
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let degree = coeffs.len() - 1;
    let eval = |z: Complex64| coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c);
    let bound = 1.0 + coeffs[1..].iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..degree).map(|i| seed.powu(i as u32) * bound).collect();
    for _ in 0..2000 {
        let mut shift = 0.0_f64;
        for i in 0..degree {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..degree {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let delta = eval(roots[i]) / denom;
            roots[i] -= delta;
            shift = shift.max(delta.norm());
        }
        if shift < 1e-15 {
            break;
        }
    }
    roots
}

#[test]
fn eigenvalues_match_characteristic_polynomial_roots() {
    let mut rng = rng(13);
    for trial in 0..200 {
        let d = 1 + trial % 4;
        let a = random_symmetric(&mut rng, d);
        let dec = symmetric_eigendecomposition(&a).unwrap();
        let mut reference: Vec<f64> = polynomial_roots(&characteristic_polynomial(&a))
            .into_iter()
            .map(|r| {
                assert!(r.im.abs() < 1e-6, "symmetric matrix produced complex root {r}");
                r.re
            })
            .collect();
        reference.sort_by(|x, y| y.total_cmp(x));
        for (got, want) in dec.eigenvalues.iter().zip(&reference) {
            assert!((got - want).abs() <= 1e-8, "d={d}: eigenvalue {got} vs root {want}");
        }
    }
}

#[test]
fn top_eigenvectors_maximize_captured_variance() {
    let mut rng = rng(14);
    for instance in 0..16 {
        let d = 2 + instance % 15;
        let sigma = random_psd(&mut rng, d);
        let dec = symmetric_eigendecomposition(&sigma).unwrap();
        let k = rng.random_range(1..d);
        let vk = dec.eigenvectors.leading_columns(k);
        let best = vk.transpose().matmul(&sigma).unwrap().matmul(&vk).unwrap().trace();
        for _ in 0..100 {
            let v = random_orthonormal(&mut rng, d, k);
            let captured = v.transpose().matmul(&sigma).unwrap().matmul(&v).unwrap().trace();
            assert!(captured <= best + 1e-8, "d={d} k={k}: random subspace {captured} > top-k {best}");
        }
    }
}

#[test]
fn repeated_eigenvalues_span_the_right_subspace() {
    // diag(2, 2, 1) rotated: the top-2 projector is basis invariant
    let mut rng = rng(15);
    let q = random_orthonormal(&mut rng, 3, 3);
    let lambda = DenseMatrix::from_fn(3, 3, |i, j| if i == j { [2.0, 2.0, 1.0][i] } else { 0.0 });
    let a = q.matmul(&lambda).unwrap().matmul(&q.transpose()).unwrap();
    let a = DenseMatrix::from_fn(3, 3, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let dec = symmetric_eigendecomposition(&a).unwrap();
    let got = dec.eigenvectors.leading_columns(2);
    let want = q.leading_columns(2);
    let p1 = got.matmul(&got.transpose()).unwrap();
    let p2 = want.matmul(&want.transpose()).unwrap();
    let diff = DenseMatrix::from_fn(3, 3, |i, j| p1[(i, j)] - p2[(i, j)]);
    assert!(diff.frobenius_norm() < 1e-10);
}
