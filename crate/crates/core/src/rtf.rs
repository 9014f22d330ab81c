//! Covariance-whitening estimation of the target RTF and the interference subspace.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, selector, CMatrix, CVector, ONE};
use crate::stats::{estimate_covariance, HermitianStack};
use crate::stft::Spectrogram;

/// Condition number of the per-bin basis above which a warning is logged.
pub const CONDITION_WARN: f64 = 1e8;

/// Reference-normalised target RTF, one M-vector per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfVector {
    #[serde(with = "crate::complex_json::vectors")]
    pub values: Vec<CVector>,
    pub reference_index: usize,
    /// Bins where the reference element vanished and `e_ref` was substituted.
    #[serde(default)]
    pub invalid_bins: Vec<usize>,
}

impl RtfVector {
    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map(|v| v.len()).unwrap_or(0)
    }

    /// Builds an RTF by normalising arbitrary per-bin vectors by their reference element.
    pub fn from_unnormalized(raw: Vec<CVector>, reference_index: usize) -> Self {
        let mut invalid_bins = Vec::new();
        let values = raw
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                normalize_to_reference(&v, reference_index).unwrap_or_else(|| {
                    invalid_bins.push(k);
                    selector(v.len(), reference_index)
                })
            })
            .collect();
        Self {
            values,
            reference_index,
            invalid_bins,
        }
    }
}

/// Reference-normalised interference basis, one M x r matrix per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceSubspace {
    #[serde(with = "crate::complex_json::matrices")]
    pub basis: Vec<CMatrix>,
    pub reference_index: usize,
    /// `(bin, column)` pairs that fell back to `e_ref`.
    #[serde(default)]
    pub invalid_columns: Vec<(usize, usize)>,
}

impl InterferenceSubspace {
    pub fn bins(&self) -> usize {
        self.basis.len()
    }

    pub fn rank(&self) -> usize {
        self.basis.first().map(|b| b.ncols()).unwrap_or(0)
    }

    pub fn empty(bins: usize, dim: usize, reference_index: usize) -> Self {
        Self {
            basis: vec![CMatrix::zeros(dim, 0); bins],
            reference_index,
            invalid_columns: Vec::new(),
        }
    }

    /// Stacks per-bin columns, normalising each by its reference element.
    pub fn from_unnormalized(raw: Vec<CMatrix>, reference_index: usize) -> Self {
        let mut invalid_columns = Vec::new();
        let basis = raw
            .into_iter()
            .enumerate()
            .map(|(k, b)| {
                let mut out = b.clone();
                for j in 0..b.ncols() {
                    let col = normalize_to_reference(&b.column(j).into_owned(), reference_index)
                        .unwrap_or_else(|| {
                            invalid_columns.push((k, j));
                            selector(b.nrows(), reference_index)
                        });
                    out.set_column(j, &col);
                }
                out
            })
            .collect();
        Self {
            basis,
            reference_index,
            invalid_columns,
        }
    }

    /// 2-norm condition number of the basis at bin `k`.
    pub fn condition(&self, k: usize) -> f64 {
        let b = &self.basis[k];
        if b.ncols() == 0 {
            return 1.0;
        }
        let sv = b.clone().svd(false, false).singular_values;
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

fn normalize_to_reference(v: &CVector, reference_index: usize) -> Option<CVector> {
    let r = v[reference_index];
    if !(r.norm() >= 1e-9 * v.norm()) || v.norm() == 0.0 {
        return None;
    }
    let mut out = v / r;
    out[reference_index] = ONE;
    Some(out)
}

/// Whitened covariance over `frames`, its top `rank` eigenvectors, de-whitened.
fn dominant_dewhitened(
    spec: &Spectrogram,
    frames: &[usize],
    noise_inv_sqrt: &HermitianStack,
    noise_sqrt_h: &HermitianStack,
    rank: usize,
) -> Result<Vec<CMatrix>> {
    let m = spec.channels();
    if rank == 0 {
        return Err(Error::InvalidArgument("subspace rank must be at least 1".into()));
    }
    if rank > m {
        return Err(Error::InvalidArgument(format!("rank {rank} exceeds {m} channels")));
    }
    if frames.is_empty() {
        return Err(Error::EmptyFrameSet("RTF estimation".into()));
    }
    let k = spec.num_bins();
    for stack in [noise_inv_sqrt, noise_sqrt_h] {
        if stack.bins() != k || stack.dim() != m {
            return Err(Error::Shape(format!(
                "noise statistics are {}x{} per {} bins, spectrogram has {m} channels and {k} bins",
                stack.dim(),
                stack.dim(),
                stack.bins()
            )));
        }
    }
    if frames.len() < rank * m {
        warn!(
            "{} frames for a rank-{rank} estimate with {m} channels; expect a noisy estimate",
            frames.len()
        );
    } else if frames.len() < 3 * m {
        warn!("only {} frames for {m} channels", frames.len());
    }

    let cov = estimate_covariance(spec, frames)?;
    (0..k)
        .map(|bin| {
            let w = noise_inv_sqrt.get(bin);
            let white = w * cov.get(bin) * w.adjoint();
            let e = hermitian_eigen(&white)?;
            let psi = e.vectors.columns(0, rank).into_owned();
            Ok(noise_sqrt_h.get(bin) * psi)
        })
        .collect()
}

/// Target RTF from the dominant whitened eigenvector over the target-only frames.
pub fn estimate_target_rtf(
    spec: &Spectrogram,
    target_frames: &[usize],
    noise_inv_sqrt: &HermitianStack,
    noise_sqrt_h: &HermitianStack,
    reference_index: usize,
) -> Result<RtfVector> {
    check_reference(spec, reference_index)?;
    let raw = dominant_dewhitened(spec, target_frames, noise_inv_sqrt, noise_sqrt_h, 1)?;
    let rtf = RtfVector::from_unnormalized(
        raw.into_iter().map(|b| b.column(0).into_owned()).collect(),
        reference_index,
    );
    if !rtf.invalid_bins.is_empty() {
        warn!("target RTF fell back to e_ref at bins {:?}", rtf.invalid_bins);
    }
    Ok(rtf)
}

/// Interference basis from the `rank` dominant whitened eigenvectors over the interference-only frames.
pub fn estimate_interference_subspace(
    spec: &Spectrogram,
    interference_frames: &[usize],
    noise_inv_sqrt: &HermitianStack,
    noise_sqrt_h: &HermitianStack,
    reference_index: usize,
    rank: usize,
) -> Result<InterferenceSubspace> {
    check_reference(spec, reference_index)?;
    let raw = dominant_dewhitened(spec, interference_frames, noise_inv_sqrt, noise_sqrt_h, rank)?;
    let sub = InterferenceSubspace::from_unnormalized(raw, reference_index);
    if !sub.invalid_columns.is_empty() {
        warn!("interference basis fell back to e_ref at {:?}", sub.invalid_columns);
    }
    for k in 0..sub.bins() {
        let cond = sub.condition(k);
        if cond > CONDITION_WARN {
            warn!("interference basis at bin {k} is ill-conditioned ({cond:.3e})");
        }
    }
    Ok(sub)
}

fn check_reference(spec: &Spectrogram, reference_index: usize) -> Result<()> {
    if reference_index >= spec.channels() {
        return Err(Error::InvalidArgument(format!(
            "reference index {reference_index} out of range for {} channels",
            spec.channels()
        )));
    }
    Ok(())
}

/// `arccos(|u^H v| / (|u| |v|))`, in `[0, pi/2]`.
pub fn hermitian_angle(u: &CVector, v: &CVector) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("lengths {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidArgument("zero vector has no direction".into()));
    }
    Ok((u.dotc(v).norm() / (nu * nv)).min(1.0).acos())
}
