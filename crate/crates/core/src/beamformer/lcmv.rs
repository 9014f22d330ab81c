use log::warn;

use super::{BeamWeights, ConstraintSet, Method};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, hermitian_eigen, hermitian_part, CMatrix, CVector};
use crate::stats::{floored_inverse, HermitianStack, DEFAULT_FLOOR_RATIO};

/// Constraint residual guaranteed on bins solved without the ridge fallback.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Gram condition number above which the constraint matrix is treated as rank deficient.
const MAX_GRAM_CONDITION: f64 = 1e14;
const RIDGE: f64 = 1e-8;
const REFINEMENT_STEPS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LcmvSolution {
    pub weights: BeamWeights,
    /// Bins whose Gram matrix needed the ridge fallback.
    pub fallback_bins: Vec<usize>,
}

/// `w = Phi^-1 C (C^H Phi^-1 C)^-1 g` per bin.
pub fn lcmv_weights(constraints: &ConstraintSet, noise_cov: &HermitianStack, sample_rate: u32, config: crate::stft::StftConfig) -> Result<BeamWeights> {
    Ok(lcmv_solve(constraints, noise_cov, sample_rate, config)?.weights)
}

pub fn lcmv_solve(
    constraints: &ConstraintSet,
    noise_cov: &HermitianStack,
    sample_rate: u32,
    config: crate::stft::StftConfig,
) -> Result<LcmvSolution> {
    if noise_cov.bins() != constraints.bins() || noise_cov.dim() != constraints.dim() {
        return Err(Error::Shape(format!(
            "noise covariance {} bins x {}, constraints {} bins x {}",
            noise_cov.bins(),
            noise_cov.dim(),
            constraints.bins(),
            constraints.dim()
        )));
    }
    if config.bins() != constraints.bins() {
        return Err(Error::Shape("STFT config and constraints differ in bin count".into()));
    }
    let inv = floored_inverse(noise_cov, DEFAULT_FLOOR_RATIO)?;
    let g = constraints.response();
    let mut fallback_bins = Vec::new();
    let w = (0..constraints.bins())
        .map(|k| {
            let c = constraints.matrix(k);
            let b = inv.get(k) * &c;
            let gram = hermitian_part(&(c.adjoint() * &b));
            let (x, fallback) = solve_gram(&gram, &g)?;
            if fallback {
                fallback_bins.push(k);
            }
            Ok(b * x)
        })
        .collect::<Result<Vec<CVector>>>()?;
    if !fallback_bins.is_empty() {
        warn!("LCMV ridge fallback at bins {fallback_bins:?}");
    }
    let weights = BeamWeights {
        w,
        config,
        sample_rate,
        method: Method::Lcmv,
    };
    if weights.max_norm() > super::MAX_WEIGHT_NORM {
        warn!("LCMV weight norm {:.3e} exceeds the sanity bound", weights.max_norm());
    }
    Ok(LcmvSolution {
        weights,
        fallback_bins,
    })
}

/// Cholesky solve with iterative refinement; ridge-regularised when ill-conditioned.
fn solve_gram(gram: &CMatrix, g: &CVector) -> Result<(CVector, bool)> {
    let e = hermitian_eigen(gram)?;
    let max = e.values.first().copied().unwrap_or(0.0);
    let min = e.values.last().copied().unwrap_or(0.0);
    let well_posed = max > 0.0 && min > 0.0 && max / min <= MAX_GRAM_CONDITION;
    if well_posed {
        if let Some(mut x) = cholesky_solve(gram, g) {
            for _ in 0..REFINEMENT_STEPS {
                let r = g - gram * &x;
                match cholesky_solve(gram, &r) {
                    Some(dx) => x += dx,
                    None => break,
                }
            }
            return Ok((x, false));
        }
    }
    let m = gram.nrows() as f64;
    let ridge = RIDGE * gram.trace().re.max(f64::MIN_POSITIVE) / m;
    let regular = gram + CMatrix::identity(gram.nrows(), gram.nrows()).scale(ridge);
    let x = cholesky_solve(&regular, g)
        .ok_or_else(|| Error::InvalidArgument("constraint Gram matrix is not positive".into()))?;
    Ok((x, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtf::{InterferenceSubspace, RtfVector};
    use crate::stft::StftConfig;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn tiny() -> StftConfig {
        StftConfig {
            fft_size: 4,
            hop_size: 2,
            window: crate::stft::WindowKind::Hann,
        }
    }

    fn identity(m: usize, k: usize) -> HermitianStack {
        HermitianStack::new(vec![CMatrix::identity(m, m); k], 1).unwrap()
    }

    fn single(a: Vec<Complex64>, k: usize) -> ConstraintSet {
        let m = a.len();
        ConstraintSet::new(
            RtfVector {
                values: vec![CVector::from_vec(a); k],
                reference_index: 0,
                invalid_bins: vec![],
            },
            InterferenceSubspace::empty(k, m, 0),
        )
        .unwrap()
    }

    fn random_constraints(m: usize, j: usize, k: usize, rng: &mut ChaCha8Rng) -> ConstraintSet {
        let mut rand_vec = || CVector::from_fn(m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let target = RtfVector::from_unnormalized((0..k).map(|_| rand_vec()).collect(), 0);
        let basis = (0..k)
            .map(|_| CMatrix::from_columns(&(1..j).map(|_| rand_vec()).collect::<Vec<_>>()))
            .collect();
        ConstraintSet::new(target, InterferenceSubspace::from_unnormalized(basis, 0)).unwrap()
    }

    fn random_psd(m: usize, k: usize, rng: &mut ChaCha8Rng) -> HermitianStack {
        HermitianStack::new(
            (0..k)
                .map(|_| {
                    let a = CMatrix::from_fn(m, 2 * m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                    &a * a.adjoint() + CMatrix::identity(m, m).scale(0.05)
                })
                .collect(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn matched_filter_by_hand() {
        let cs = single(vec![c(1.0, 0.0), c(1.0, 0.0)], 3);
        let w = lcmv_weights(&cs, &identity(2, 3), 16_000, tiny()).unwrap();
        for v in &w.w {
            assert!((v[0] - c(0.5, 0.0)).norm() < 1e-15 && (v[1] - c(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn mvdr_on_selector_is_selector() {
        let cs = single(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 3);
        let w = lcmv_weights(&cs, &identity(3, 3), 16_000, tiny()).unwrap();
        for v in &w.w {
            assert!((v - crate::linalg::selector(3, 0)).norm() < 1e-15);
        }
    }

    #[test]
    fn square_constraints_solve_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cs = random_constraints(3, 3, 3, &mut rng);
        let sol = lcmv_solve(&cs, &identity(3, 3), 16_000, tiny()).unwrap();
        assert!(sol.fallback_bins.is_empty());
        assert!(cs.residual(&sol.weights, &[]) <= 1e-10);
        for k in 0..3 {
            // w = C^{-H} g
            let expected = cs.matrix(k).adjoint().try_inverse().unwrap() * cs.response();
            assert!((&sol.weights.w[k] - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn constraint_residual_and_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (m, j) in [(4, 2), (8, 3), (8, 2)] {
            let cs = random_constraints(m, j, 3, &mut rng);
            let noise = random_psd(m, 3, &mut rng);
            let sol = lcmv_solve(&cs, &noise, 16_000, tiny()).unwrap();
            assert!(cs.residual(&sol.weights, &sol.fallback_bins) <= RESIDUAL_TOLERANCE);
            for k in 0..3 {
                let cm = cs.matrix(k);
                // projector onto the orthogonal complement of span(C)
                let q = cm.clone().qr().q();
                let p = CMatrix::identity(m, m) - &q * q.adjoint();
                let w0 = &sol.weights.w[k];
                let phi = noise.get(k);
                let base = (w0.adjoint() * phi * w0)[(0, 0)].re;
                for _ in 0..100 {
                    let z = CVector::from_fn(m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                    let w = w0 + &p * z;
                    let power = (w.adjoint() * phi * &w)[(0, 0)].re;
                    assert!(power >= base - 1e-10);
                }
            }
        }
    }

    #[test]
    fn collinear_constraints_use_ridge() {
        let a = CVector::from_vec(vec![c(1.0, 0.0), c(0.5, 0.2)]);
        let target = RtfVector {
            values: vec![a.clone(); 3],
            reference_index: 0,
            invalid_bins: vec![],
        };
        let sub = InterferenceSubspace {
            basis: vec![CMatrix::from_columns(&[a]); 3],
            reference_index: 0,
            invalid_columns: vec![],
        };
        let cs = ConstraintSet::new(target, sub).unwrap();
        let sol = lcmv_solve(&cs, &identity(2, 3), 16_000, tiny()).unwrap();
        assert_eq!(sol.fallback_bins, vec![0, 1, 2]);
        assert!(sol.weights.w.iter().all(|v| v.iter().all(|z| z.re.is_finite())));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cs = single(vec![c(1.0, 0.0), c(1.0, 0.0)], 3);
        assert!(lcmv_weights(&cs, &identity(3, 3), 16_000, tiny()).is_err());
    }
}
