//! Dense linear algebra over `f64` and `Complex64` with fixed reduction
//! order, a seeded random source, and matrix serialization.
//!
//! Reductions (dot products, matrix products, norms) always accumulate in
//! ascending index order starting from zero, so every operation is
//! bit-reproducible for identical inputs. `floatlab` varies that order on
//! purpose; nothing here does.

pub mod io;
mod matrix;
mod rng;
mod scalar;

pub use matrix::{inner, matmul, polarization_inner, Matrix, Vector};
pub(crate) use matrix::dot_seq;
pub use rng::Rng;
pub use scalar::{Field, Scalar};

use crate::error::{Error, Result};

const MAX_UNIT_DRAWS: usize = 16;

/// A single random direction on the unit sphere in `R^d` (normalized Gaussian).
pub fn random_unit_vector(rng: &mut Rng, d: usize) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::param("d", "must be at least 1"));
    }
    let mut v = vec![0.0; d];
    for _ in 0..MAX_UNIT_DRAWS {
        for x in v.iter_mut() {
            *x = rng.normal();
        }
        let mut ss = 0.0;
        for x in &v {
            ss += x * x;
        }
        let norm = ss.sqrt();
        if norm > 0.0 && norm.is_finite() {
            for x in v.iter_mut() {
                *x /= norm;
            }
            return Ok(v);
        }
    }
    Err(Error::Exhausted {
        attempts: MAX_UNIT_DRAWS,
        reason: "every Gaussian draw had zero norm".into(),
    })
}

/// `n` rows, each an independent uniformly random unit vector in `R^d`.
pub fn random_unit_vectors(rng: &mut Rng, n: usize, d: usize) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend(random_unit_vector(rng, d)?);
    }
    Matrix::new(n, d, data)
}

/// Matrix with i.i.d. Gaussian entries of the given standard deviation.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std_dev: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std_dev * rng.normal())
}

/// Matrix with i.i.d. entries uniform in `[lo, hi)`.
pub fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(lo, hi))
}

/// Modified Gram-Schmidt. Returns the orthonormalized vectors, or an error
/// when the inputs are linearly dependent (to within `1e-12`).
pub fn gram_schmidt<T: Scalar>(vectors: &[Vector<T>]) -> Result<Vec<Vector<T>>> {
    let mut out: Vec<Vector<T>> = Vec::with_capacity(vectors.len());
    for (idx, v) in vectors.iter().enumerate() {
        let mut w = v.clone();
        for q in &out {
            let c = inner(q, &w)?;
            w = w.sub(&q.scale(c))?;
        }
        let n = w.norm();
        if n < 1e-12 {
            return Err(Error::param(
                "vectors",
                format!("vector {idx} is linearly dependent on its predecessors"),
            ));
        }
        out.push(w.map(|x| x.scale(1.0 / n)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use super::Rng;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = vec![vec![0.0; b.cols()]; a.rows()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out[i][j] = s;
            }
        }
        Matrix::from_rows(&out).unwrap()
    }

    #[test]
    fn identity_times_m_is_m() {
        let mut rng = Rng::new(3);
        let m = gaussian_matrix(&mut rng, 3, 4, 1.0);
        assert_eq!(Matrix::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn times_zero_is_zero() {
        let mut rng = Rng::new(3);
        let m = gaussian_matrix(&mut rng, 3, 4, 1.0);
        assert_eq!(m.matmul(&Matrix::zeros(4, 2)).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let a = gaussian_matrix(&mut rng, 2, 2, 1.0);
            let b = gaussian_matrix(&mut rng, 2, 2, 1.0);
            assert_eq!(a.matmul(&b).unwrap(), naive_matmul(&a, &b));
        }
        let a = gaussian_matrix(&mut rng, 5, 7, 1.0);
        let b = gaussian_matrix(&mut rng, 7, 3, 1.0);
        assert_eq!(a.matmul(&b).unwrap(), naive_matmul(&a, &b));
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn matmul_is_associative_to_tolerance() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let a = gaussian_matrix(&mut rng, 8, 8, 1.0);
            let b = gaussian_matrix(&mut rng, 8, 8, 1.0);
            let c = gaussian_matrix(&mut rng, 8, 8, 1.0);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn inner_examples() {
        let e1 = Vector::<f64>::basis(3, 0);
        let e2 = Vector::<f64>::basis(3, 1);
        assert_eq!(inner(&e1, &e2).unwrap(), 0.0);
        let psi = Vector::new(vec![0.6, 0.8]);
        assert!((inner(&psi, &psi).unwrap() - 1.0).abs() < 1e-15);
        let u = Vector::new(vec![1.0, 2.0]);
        let v = Vector::new(vec![3.0, 4.0]);
        assert_eq!(inner(&u, &v).unwrap(), 11.0);
        assert!(inner(&u, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn complex_inner_conjugates_first_argument() {
        let i = Complex64::new(0.0, 1.0);
        let u = Vector::new(vec![i]);
        let v = Vector::new(vec![Complex64::new(1.0, 0.0)]);
        assert_eq!(inner(&u, &v).unwrap(), -i);
    }

    #[test]
    fn polarization_examples() {
        let u = Vector::new(vec![1.0, 0.0]);
        let v = Vector::new(vec![0.0, 1.0]);
        assert_eq!(polarization_inner(&u, &v).unwrap(), 0.0);
        assert_eq!(polarization_inner(&u, &u).unwrap(), 1.0);
    }

    #[test]
    fn polarization_agrees_with_inner_on_random_pairs() {
        let mut rng = Rng::new(99);
        for t in 0..1000 {
            let d = 1 + t % 64;
            let u = Vector::new((0..d).map(|_| rng.normal()).collect());
            let v = Vector::new((0..d).map(|_| rng.normal()).collect());
            let direct = inner(&u, &v).unwrap();
            let pol = polarization_inner(&u, &v).unwrap();
            assert!((direct - pol).abs() <= 1e-12, "d={d}: {direct} vs {pol}");
        }
    }

    #[test]
    fn unit_vectors_in_one_dimension_are_signs() {
        let mut rng = Rng::new(0);
        for _ in 0..20 {
            let m = random_unit_vectors(&mut rng, 1, 1).unwrap();
            assert!(m.get(0, 0) == 1.0 || m.get(0, 0) == -1.0);
        }
    }

    #[test]
    fn unit_vectors_have_unit_norm_and_rerun_identically() {
        let a = random_unit_vectors(&mut Rng::new(8), 5, 8).unwrap();
        let b = random_unit_vectors(&mut Rng::new(8), 5, 8).unwrap();
        assert_eq!(a, b);
        for i in 0..5 {
            assert!((a.row_vector(i).norm() - 1.0).abs() <= 1e-12);
        }
        assert!(random_unit_vectors(&mut Rng::new(8), 0, 8).is_err());
    }

    #[test]
    fn gram_schmidt_orthonormalizes() {
        let vs = vec![
            Vector::new(vec![1.0, 1.0, 0.0]),
            Vector::new(vec![1.0, 0.0, 1.0]),
            Vector::new(vec![0.0, 1.0, 1.0]),
        ];
        let q = gram_schmidt(&vs).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((inner(&q[i], &q[j]).unwrap() - want).abs() < 1e-12);
            }
        }
        let dependent = vec![Vector::new(vec![1.0, 0.0]), Vector::new(vec![2.0, 0.0])];
        assert!(gram_schmidt(&dependent).is_err());
    }

    fn cvec(d: usize) -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), d)
            .prop_map(|v| v.into_iter().map(|(r, i)| Complex64::new(r, i)).collect())
    }

    proptest! {
        #[test]
        fn inner_is_conjugate_symmetric_exactly(d in 1usize..16, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let u = Vector::new((0..d).map(|_| Complex64::new(rng.normal(), rng.normal())).collect());
            let v = Vector::new((0..d).map(|_| Complex64::new(rng.normal(), rng.normal())).collect());
            prop_assert_eq!(inner(&u, &v).unwrap(), inner(&v, &u).unwrap().conj());
        }

        #[test]
        fn inner_conjugate_symmetry_on_arbitrary_entries(u in cvec(6), v in cvec(6)) {
            let (u, v) = (Vector::new(u), Vector::new(v));
            prop_assert_eq!(inner(&u, &v).unwrap(), inner(&v, &u).unwrap().conj());
        }

        #[test]
        fn operations_are_bit_reproducible(seed in any::<u64>()) {
            let mut r1 = Rng::new(seed);
            let mut r2 = Rng::new(seed);
            let a1 = gaussian_matrix(&mut r1, 4, 4, 1.0);
            let a2 = gaussian_matrix(&mut r2, 4, 4, 1.0);
            let p1 = a1.matmul(&a1).unwrap();
            let p2 = a2.matmul(&a2).unwrap();
            prop_assert!(p1.data().iter().zip(p2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
