//! Small dense complex linear algebra: Hermitian eigensolver and helpers.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `(A + A^H) / 2`
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Largest entry of `|A - A^H|`.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Unit vector `e_index` of length `len`.
pub fn selector(len: usize, index: usize) -> CVector {
    let mut v = CVector::zeros(len);
    v[index] = ONE;
    v
}

/// Eigen-decomposition of one Hermitian matrix: eigenvalues descending,
/// eigenvector columns unit-norm with their largest-magnitude entry real and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let l = Complex64::new(self.values[j], 0.0);
            scaled.column_mut(j).iter_mut().for_each(|x| *x *= l);
        }
        scaled * self.vectors.adjoint()
    }

    /// `U f(Λ) U^H` for a real spectral function.
    pub fn apply_spectral(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let l = Complex64::new(f(self.values[j]), 0.0);
            scaled.column_mut(j).iter_mut().for_each(|x| *x *= l);
        }
        hermitian_part(&(scaled * self.vectors.adjoint()))
    }
}

const MAX_SWEEPS: usize = 64;

/// Cyclic Jacobi eigensolver for a complex Hermitian matrix.
///
/// Each rotation first removes the phase of `a_pq` with a diagonal unitary and then
/// applies the classical real Jacobi rotation, so the composite transform is unitary.
pub fn hermitian_eigen(a: &CMatrix) -> Result<HermitianEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape(format!("{}x{} is not square", a.nrows(), a.ncols())));
    }
    if a.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut m = hermitian_part(a);
    for i in 0..n {
        m[(i, i)].im = 0.0;
    }
    let mut v = CMatrix::identity(n, n);
    let scale = m.norm();

    if scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= 1e-17 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    let mag = apq.norm();
                    if mag <= 1e-300 || mag <= 1e-18 * scale {
                        m[(p, q)] = ZERO;
                        m[(q, p)] = ZERO;
                        continue;
                    }
                    let phase = apq / mag;
                    let app = m[(p, p)].re;
                    let aqq = m[(q, q)].re;
                    let tau = (aqq - app) / (2.0 * mag);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // U restricted to (p, q): [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
                    let pc = phase.conj();
                    let u_pp = Complex64::new(c, 0.0);
                    let u_pq = Complex64::new(s, 0.0);
                    let u_qp = pc * (-s);
                    let u_qq = pc * c;

                    // M <- M U
                    for i in 0..n {
                        let mip = m[(i, p)];
                        let miq = m[(i, q)];
                        m[(i, p)] = mip * u_pp + miq * u_qp;
                        m[(i, q)] = mip * u_pq + miq * u_qq;
                    }
                    // M <- U^H M
                    for j in 0..n {
                        let mpj = m[(p, j)];
                        let mqj = m[(q, j)];
                        m[(p, j)] = u_pp.conj() * mpj + u_qp.conj() * mqj;
                        m[(q, j)] = u_pq.conj() * mpj + u_qq.conj() * mqj;
                    }
                    // V <- V U
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = vip * u_pp + viq * u_qp;
                        v[(i, q)] = vip * u_pq + viq * u_qq;
                    }
                    m[(p, q)] = ZERO;
                    m[(q, p)] = ZERO;
                    m[(p, p)].im = 0.0;
                    m[(q, q)].im = 0.0;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, CVector)> = (0..n)
        .map(|j| (m[(j, j)].re, normalize_phase(v.column(j).into_owned())))
        .collect();
    let tie = 1e-13 * scale.max(f64::MIN_POSITIVE);
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() > tie {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal)
        } else {
            lexicographic(&a.1, &b.1)
        }
    });

    let mut vectors = CMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (j, (l, col)) in pairs.into_iter().enumerate() {
        values.push(l);
        vectors.set_column(j, &col);
    }
    Ok(HermitianEigen { values, vectors })
}

/// Scales to unit norm and rotates so the first largest-magnitude entry is real positive.
fn normalize_phase(mut v: CVector) -> CVector {
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let peak = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let pivot = v
        .iter()
        .position(|x| x.norm() >= peak * (1.0 - 1e-12))
        .unwrap_or(0);
    let rot = v[pivot].conj() / (v[pivot].norm() * norm);
    v.iter_mut().for_each(|x| *x *= rot);
    v[pivot].im = 0.0;
    v
}

fn lexicographic(a: &CVector, b: &CVector) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        for (p, q) in [(x.re, y.re), (x.im, y.im)] {
            if (p - q).abs() > 1e-12 {
                return p.partial_cmp(&q).unwrap_or(Ordering::Equal);
            }
        }
    }
    Ordering::Equal
}

/// Solves `G x = b` for Hermitian positive definite `G` by Cholesky factorisation.
pub(crate) fn cholesky_solve(g: &CMatrix, b: &CVector) -> Option<CVector> {
    let chol = nalgebra::Cholesky::new(g.clone())?;
    Some(chol.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        hermitian_part(&a)
    }

    /// Real roots of the characteristic polynomial, closed form, descending.
    fn characteristic_roots(a: &CMatrix) -> Vec<f64> {
        let n = a.nrows();
        let tr = a.trace().re;
        if n == 1 {
            return vec![a[(0, 0)].re];
        }
        if n == 2 {
            let det = (a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]).re;
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            return vec![(tr + disc) / 2.0, (tr - disc) / 2.0];
        }
        // l^3 - tr l^2 + c1 l - det, solved trigonometrically after depressing
        let minor = |i: usize, j: usize| (a[(i, i)] * a[(j, j)] - a[(i, j)] * a[(j, i)]).re;
        let c1 = minor(0, 1) + minor(0, 2) + minor(1, 2);
        let det = a.determinant().re;
        let p = c1 - tr * tr / 3.0;
        let q = -2.0 * tr.powi(3) / 27.0 + tr * c1 / 3.0 - det;
        let r = (-p / 3.0).max(0.0).sqrt();
        let arg = if r == 0.0 { 0.0 } else { (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0) };
        let phi = arg.acos() / 3.0;
        let mut roots: Vec<f64> = (0..3)
            .map(|k| tr / 3.0 + 2.0 * r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect();
        roots.sort_by(|x, y| y.total_cmp(x));
        roots
    }

    #[test]
    fn eigenvalues_match_characteristic_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 1..=3 {
            for _ in 0..200 {
                let a = random_hermitian(n, &mut rng);
                let e = hermitian_eigen(&a).unwrap();
                for (x, y) in e.values.iter().zip(characteristic_roots(&a)) {
                    assert!((x - y).abs() <= 1e-8, "n={n}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let e = hermitian_eigen(&CMatrix::identity(4, 4)).unwrap();
        assert!(e.values.iter().all(|&l| (l - 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_by_hand() {
        // [[1, i], [-i, 1]]: eigenvalues 2 and 0, dominant vector along [1, -i]/sqrt(2)
        let a = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        let e = hermitian_eigen(&a).unwrap();
        assert!((e.values[0] - 2.0).abs() < 1e-14);
        assert!(e.values[1].abs() < 1e-14);
        let v = e.vectors.column(0);
        let expected = [c(1.0, 0.0) / 2f64.sqrt(), c(0.0, -1.0) / 2f64.sqrt()];
        let overlap: Complex64 = v.iter().zip(expected.iter()).map(|(x, y)| x * y.conj()).sum();
        assert!((overlap.norm() - 1.0).abs() < 1e-14);
        // phase convention: first largest entry real positive
        assert!(v[0].im.abs() < 1e-15 && v[0].re > 0.0);
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &n in &[2usize, 4, 8] {
            for _ in 0..100 {
                let a = random_hermitian(n, &mut rng);
                let e = hermitian_eigen(&a).unwrap();
                let rec = e.reconstruct();
                assert!((rec - &a).norm() <= 1e-10 * a.norm());
                let gram = e.vectors.adjoint() * &e.vectors;
                assert!((gram - CMatrix::identity(n, n)).norm() <= 1e-10);
                assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = CMatrix::identity(2, 2);
        a[(0, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(hermitian_eigen(&a), Err(Error::NonFinite)));
    }

    #[test]
    fn diagonal_is_sorted_descending() {
        let a = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0, 0.0), c(3.0, 0.0), c(2.0, 0.0)]));
        let e = hermitian_eigen(&a).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.vectors[(1, 0)], ONE);
    }

    #[test]
    fn deterministic_for_repeated_eigenvalues() {
        let a = CMatrix::identity(3, 3).scale(2.0);
        let e1 = hermitian_eigen(&a).unwrap();
        let e2 = hermitian_eigen(&a).unwrap();
        assert_eq!(e1, e2);
    }
}
