use gpgs_core::linalg::{Cholesky, Matrix};
use gpgs_core::Scalar;
use proptest::prelude::*;

/// `B Bᵀ + n·I`, comfortably positive definite.
fn spd<T: Scalar>(n: usize, entries: &[f64]) -> Matrix<T> {
    let b = |i: usize, j: usize| entries[(i * 97 + j * 31) % entries.len()];
    Matrix::from_fn(n, n, |i, j| {
        let s: f64 = (0..n).map(|k| b(i, k) * b(j, k)).sum();
        T::lit(s + if i == j { n as f64 } else { 0.0 })
    })
}

fn product<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

fn transpose<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    Matrix::from_fn(a.cols(), a.rows(), |i, j| a.get(j, i))
}

fn max_diff<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Sizes straddle the block and tile edges of the factorization.
    #[test]
    fn factor_reconstructs_and_inverts(n in 1usize..150, entries in prop::collection::vec(-1.0f64..1.0, 64)) {
        let a = spd::<f64>(n, &entries);
        let c = Cholesky::factor(&a).unwrap();
        let l = c.factor_matrix();
        let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_diff(&product(l, &transpose(l)), &a) <= 1e-12 * scale);
        for i in 0..n {
            for j in i + 1..n {
                prop_assert_eq!(l.get(i, j), 0.0);
            }
        }
        let ident = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
        prop_assert!(max_diff(&product(&c.inverse(), &a), &ident) <= 1e-10);
        prop_assert!(max_diff(&product(&c.inverse_factor(), l), &ident) <= 1e-10);

        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = c.solve(&b);
        let r = a.mul_vec(&x);
        prop_assert!(r.iter().zip(&b).all(|(r, b)| (r - b).abs() <= 1e-10 * scale));
    }

    #[test]
    fn single_precision_factor(n in 1usize..80, entries in prop::collection::vec(-1.0f64..1.0, 64)) {
        let a = spd::<f32>(n, &entries);
        let c = Cholesky::factor(&a).unwrap();
        let l = c.factor_matrix();
        let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
        prop_assert!(max_diff(&product(l, &transpose(l)), &a) <= 1e-5 * scale);
    }
}

#[test]
fn indefinite_matrices_do_not_factor() {
    let a = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
    assert!(Cholesky::factor(&a).is_none());
}
