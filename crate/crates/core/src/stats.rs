//! Per-bin spatial covariance estimation, eigendecomposition and whitening.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_part, CMatrix, CVector, HermitianEigen};
use crate::stft::Spectrogram;

/// Default eigenvalue floor, relative to the per-bin largest eigenvalue.
pub const DEFAULT_FLOOR_RATIO: f64 = 1e-6;

/// One Hermitian M x M matrix per frequency bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermitianStack {
    #[serde(with = "crate::complex_json::matrices")]
    matrices: Vec<CMatrix>,
    frame_count: usize,
}

impl HermitianStack {
    /// Symmetrises every matrix on construction.
    pub fn new(matrices: Vec<CMatrix>, frame_count: usize) -> Result<Self> {
        let m = matrices.first().map(|a| a.nrows()).unwrap_or(0);
        if matrices.iter().any(|a| a.nrows() != m || a.ncols() != m) {
            return Err(Error::Shape("stack matrices must share one square size".into()));
        }
        Ok(Self {
            matrices: matrices.iter().map(hermitian_part).collect(),
            frame_count,
        })
    }

    pub fn bins(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices.first().map(|a| a.nrows()).unwrap_or(0)
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    pub fn get(&self, k: usize) -> &CMatrix {
        &self.matrices[k]
    }

    fn check_compatible(&self, other: &HermitianStack) -> Result<()> {
        if self.bins() != other.bins() || self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "stacks {}x{}x{} and {}x{}x{} differ",
                self.bins(),
                self.dim(),
                self.dim(),
                other.bins(),
                other.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Eigenvalues (descending) and unit eigenvectors for every bin.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub per_bin: Vec<HermitianEigen>,
}

impl EigenDecomposition {
    pub fn eigenvalues(&self, k: usize) -> &[f64] {
        &self.per_bin[k].values
    }

    pub fn eigenvectors(&self, k: usize) -> &CMatrix {
        &self.per_bin[k].vectors
    }
}

/// Sample covariance `(1/|V|) sum_{l in V} y(l,k) y(l,k)^H` for every bin.
pub fn estimate_covariance(spec: &Spectrogram, frames: &[usize]) -> Result<HermitianStack> {
    if frames.is_empty() {
        return Err(Error::EmptyFrameSet("covariance estimation".into()));
    }
    if let Some(&bad) = frames.iter().find(|&&l| l >= spec.frames()) {
        return Err(Error::InvalidArgument(format!(
            "frame {bad} outside spectrogram of {} frames",
            spec.frames()
        )));
    }
    let m = spec.channels();
    let scale = 1.0 / frames.len() as f64;
    let matrices = (0..spec.num_bins())
        .map(|k| {
            let mut acc = CMatrix::zeros(m, m);
            for &l in frames {
                let y = CVector::from_iterator(m, spec.snapshot(l, k));
                acc += &y * y.adjoint();
            }
            acc.scale(scale)
        })
        .collect();
    HermitianStack::new(matrices, frames.len())
}

pub fn hermitian_evd(stack: &HermitianStack) -> Result<EigenDecomposition> {
    let per_bin = stack
        .matrices
        .iter()
        .map(hermitian_eigen)
        .collect::<Result<Vec<_>>>()?;
    Ok(EigenDecomposition { per_bin })
}

fn floored(e: &HermitianEigen, floor_ratio: f64, bin: usize) -> Result<Vec<f64>> {
    let top = e.values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::ZeroMatrix(bin));
    }
    let floor = floor_ratio * top;
    Ok(e.values.iter().map(|&l| l.max(floor)).collect())
}

fn spectral(e: &HermitianEigen, values: &[f64], f: impl Fn(f64) -> f64) -> CMatrix {
    let floored = HermitianEigen {
        values: values.to_vec(),
        vectors: e.vectors.clone(),
    };
    floored.apply_spectral(f)
}

/// `U diag(max(λ, floor_ratio λ_max))^{-1/2} U^H` per bin.
pub fn inv_sqrt(stack: &HermitianStack, floor_ratio: f64) -> Result<HermitianStack> {
    Ok(whitening_pair(stack, floor_ratio)?.0)
}

/// Inverse square root and the matching de-whitening factor `(Φ^{1/2})^H`, both from the
/// same floored eigendecomposition so that one exactly inverts the other.
pub fn whitening_pair(
    stack: &HermitianStack,
    floor_ratio: f64,
) -> Result<(HermitianStack, HermitianStack)> {
    let evd = hermitian_evd(stack)?;
    let mut inv = Vec::with_capacity(stack.bins());
    let mut sqrt_h = Vec::with_capacity(stack.bins());
    for (k, e) in evd.per_bin.iter().enumerate() {
        let values = floored(e, floor_ratio, k)?;
        inv.push(spectral(e, &values, |l| 1.0 / l.sqrt()));
        sqrt_h.push(spectral(e, &values, f64::sqrt).adjoint());
    }
    Ok((
        HermitianStack::new(inv, stack.frame_count)?,
        HermitianStack::new(sqrt_h, stack.frame_count)?,
    ))
}

/// `U diag(max(λ, floor_ratio λ_max))^{-1} U^H` per bin.
pub fn floored_inverse(stack: &HermitianStack, floor_ratio: f64) -> Result<HermitianStack> {
    let evd = hermitian_evd(stack)?;
    let inv = evd
        .per_bin
        .iter()
        .enumerate()
        .map(|(k, e)| Ok(spectral(e, &floored(e, floor_ratio, k)?, |l| 1.0 / l)))
        .collect::<Result<Vec<_>>>()?;
    HermitianStack::new(inv, stack.frame_count)
}

/// `W Φ W^H` per bin, with `W` a whitening matrix such as [`inv_sqrt`] returns.
pub fn whiten_covariance(
    noisy: &HermitianStack,
    noise_inv_sqrt: &HermitianStack,
) -> Result<HermitianStack> {
    noisy.check_compatible(noise_inv_sqrt)?;
    let matrices = noisy
        .matrices
        .iter()
        .zip(&noise_inv_sqrt.matrices)
        .map(|(phi, w)| w * phi * w.adjoint())
        .collect();
    HermitianStack::new(matrices, noisy.frame_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_defect;
    use ndarray::Array3;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spectrogram(frames: Vec<Vec<Complex64>>) -> Spectrogram {
        let m = frames[0].len();
        let l = frames.len();
        let bins = Array3::from_shape_fn((m, l, 1), |(ch, fr, _)| frames[fr][ch]);
        Spectrogram {
            bins,
            config: Default::default(),
            sample_rate: 16_000,
            signal_len: 0,
        }
    }

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, 2 * n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        &a * a.adjoint() + CMatrix::identity(n, n).scale(0.1)
    }

    #[test]
    fn identical_frames_give_rank_one() {
        let v = vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.0, -1.0)];
        let spec = spectrogram(vec![v.clone(); 4]);
        let cov = estimate_covariance(&spec, &[0, 1, 2, 3]).unwrap();
        let vv = CVector::from_vec(v);
        assert!((cov.get(0) - &vv * vv.adjoint()).norm() < 1e-14);
    }

    #[test]
    fn two_unit_frames_give_half_identity() {
        let spec = spectrogram(vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]]);
        let cov = estimate_covariance(&spec, &[0, 1]).unwrap();
        assert!((cov.get(0) - CMatrix::identity(2, 2).scale(0.5)).norm() < 1e-15);
    }

    #[test]
    fn empty_frame_set_rejected() {
        let spec = spectrogram(vec![vec![c(1.0, 0.0), c(0.0, 0.0)]]);
        assert!(matches!(estimate_covariance(&spec, &[]), Err(Error::EmptyFrameSet(_))));
        assert!(estimate_covariance(&spec, &[3]).is_err());
    }

    #[test]
    fn covariance_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<Vec<Complex64>> = (0..10)
            .map(|_| (0..3).map(|_| c(rng.random(), rng.random())).collect())
            .collect();
        let alpha = c(0.3, -2.0);
        let scaled: Vec<Vec<Complex64>> = frames.iter().map(|f| f.iter().map(|x| x * alpha).collect()).collect();
        let idx: Vec<usize> = (0..10).collect();
        let a = estimate_covariance(&spectrogram(frames), &idx).unwrap();
        let b = estimate_covariance(&spectrogram(scaled), &idx).unwrap();
        assert!((a.get(0).scale(alpha.norm_sqr()) - b.get(0)).norm() < 1e-12);
        assert!(hermitian_defect(b.get(0)) <= 1e-12);
    }

    #[test]
    fn inv_sqrt_of_scaled_identity() {
        let s = HermitianStack::new(vec![CMatrix::identity(3, 3).scale(4.0)], 1).unwrap();
        let w = inv_sqrt(&s, DEFAULT_FLOOR_RATIO).unwrap();
        assert!((w.get(0) - CMatrix::identity(3, 3).scale(0.5)).norm() < 1e-14);
    }

    #[test]
    fn inv_sqrt_of_diagonal() {
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![c(4.0, 0.0), c(1.0, 0.0)]));
        let w = inv_sqrt(&HermitianStack::new(vec![d], 1).unwrap(), DEFAULT_FLOOR_RATIO).unwrap();
        let expected = CMatrix::from_diagonal(&CVector::from_vec(vec![c(0.5, 0.0), c(1.0, 0.0)]));
        assert!((w.get(0) - expected).norm() < 1e-14);
    }

    #[test]
    fn inv_sqrt_whitens_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [2, 4, 8] {
            let phi = random_psd(n, &mut rng);
            let stack = HermitianStack::new(vec![phi.clone()], 1).unwrap();
            let w = inv_sqrt(&stack, 0.0).unwrap();
            let white = w.get(0) * &phi * w.get(0).adjoint();
            assert!((white - CMatrix::identity(n, n)).norm() < 1e-10);
            // (Φ^{-1/2})^{-2} ≈ Φ
            let back = w.get(0).clone().try_inverse().unwrap();
            assert!((&back * &back - &phi).norm() < 1e-8 * phi.norm());
        }
    }

    #[test]
    fn whitening_pair_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let phi = random_psd(4, &mut rng);
        let (w, sh) = whitening_pair(&HermitianStack::new(vec![phi], 1).unwrap(), 1e-6).unwrap();
        let prod = sh.get(0).adjoint() * w.get(0);
        assert!((prod - CMatrix::identity(4, 4)).norm() < 1e-10);
    }

    #[test]
    fn zero_matrix_rejected() {
        let s = HermitianStack::new(vec![CMatrix::zeros(2, 2)], 1).unwrap();
        assert!(matches!(inv_sqrt(&s, 1e-6), Err(Error::ZeroMatrix(0))));
    }

    #[test]
    fn whitening_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random_psd(3, &mut rng);
        let yy = HermitianStack::new(vec![phi.clone()], 1).unwrap();

        let ident = HermitianStack::new(vec![CMatrix::identity(3, 3)], 1).unwrap();
        let w = inv_sqrt(&ident, 1e-6).unwrap();
        assert!((whiten_covariance(&yy, &w).unwrap().get(0) - &phi).norm() < 1e-14);

        let sigma2 = 2.5;
        let noise = HermitianStack::new(vec![CMatrix::identity(3, 3).scale(sigma2)], 1).unwrap();
        let w = inv_sqrt(&noise, 1e-6).unwrap();
        assert!((whiten_covariance(&yy, &w).unwrap().get(0) - phi.scale(1.0 / sigma2)).norm() < 1e-13);

        let w = inv_sqrt(&yy, 0.0).unwrap();
        let white = whiten_covariance(&yy, &w).unwrap();
        assert!((white.get(0) - CMatrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = HermitianStack::new(vec![CMatrix::identity(3, 3)], 1).unwrap();
        let b = HermitianStack::new(vec![CMatrix::identity(2, 2)], 1).unwrap();
        assert!(matches!(whiten_covariance(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn operations_preserve_hermiticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let phi = random_psd(4, &mut rng);
        let s = HermitianStack::new(vec![phi.clone(), phi.scale(2.0)], 1).unwrap();
        let w = inv_sqrt(&s, 1e-6).unwrap();
        let white = whiten_covariance(&s, &w).unwrap();
        for stack in [&s, &w, &white] {
            for a in stack.matrices() {
                assert!(hermitian_defect(a) <= 1e-12);
            }
        }
    }
}
