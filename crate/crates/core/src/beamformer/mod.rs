//! Time-invariant beamformers: constraint sets, weights, the closed-form LCMV solution and
//! direct penalty-method optimisation.

mod lcmv;
mod penalty;

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{selector, CMatrix, CVector, ZERO};
use crate::rtf::{InterferenceSubspace, RtfVector};
use crate::stft::{Spectrogram, StftConfig};

pub use lcmv::{lcmv_solve, lcmv_weights, LcmvSolution, RESIDUAL_TOLERANCE};
pub use penalty::{
    initial_weights, loss_gradient, loss_terms, penalty_optimize, Init, LossTerms, OptimizationTrace, Optimizer,
    PenaltyProblem, PenaltySchedule, TraceRow,
};

/// Upper bound on any per-bin weight norm.
pub const MAX_WEIGHT_NORM: f64 = 1e3;

/// Target RTF, interference basis and desired responses `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub target: RtfVector,
    pub interference: InterferenceSubspace,
    pub g: Vec<f64>,
}

impl ConstraintSet {
    /// Unit response to the target and nulls towards every interference basis vector.
    pub fn new(target: RtfVector, interference: InterferenceSubspace) -> Result<Self> {
        if target.bins() != interference.bins() {
            return Err(Error::Shape(format!(
                "target has {} bins, interference basis {}",
                target.bins(),
                interference.bins()
            )));
        }
        let m = target.dim();
        if interference.basis.iter().any(|b| b.nrows() != m) {
            return Err(Error::Shape("interference basis and target differ in M".into()));
        }
        let j = 1 + interference.rank();
        if j > m {
            return Err(Error::TooManySpeakers { speakers: j, mics: m });
        }
        let mut g = vec![0.0; j];
        g[0] = 1.0;
        Ok(Self {
            target,
            interference,
            g,
        })
    }

    pub fn bins(&self) -> usize {
        self.target.bins()
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// `C(k) = [a_target(k) | A_interf(k)]`
    pub fn matrix(&self, k: usize) -> CMatrix {
        let a = &self.target.values[k];
        let b = &self.interference.basis[k];
        let mut c = CMatrix::zeros(a.len(), 1 + b.ncols());
        c.set_column(0, a);
        for j in 0..b.ncols() {
            c.set_column(j + 1, &b.column(j));
        }
        c
    }

    pub fn response(&self) -> CVector {
        CVector::from_iterator(self.g.len(), self.g.iter().map(|&x| Complex64::new(x, 0.0)))
    }

    /// `max_k |C^H(k) w(k) - g|_inf` over the bins not listed in `skip`.
    pub fn residual(&self, weights: &BeamWeights, skip: &[usize]) -> f64 {
        let g = self.response();
        (0..self.bins())
            .filter(|k| !skip.contains(k))
            .map(|k| {
                (self.matrix(k).adjoint() * &weights.w[k] - &g)
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Passthrough,
    Lcmv,
    Penalty,
    Averaged,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Passthrough => "passthrough",
            Method::Lcmv => "lcmv",
            Method::Penalty => "penalty",
            Method::Averaged => "averaged",
        };
        f.write_str(s)
    }
}

/// Per-bin weight vectors `w(k)` together with the framing they were computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamWeights {
    #[serde(with = "crate::complex_json::vectors")]
    pub w: Vec<CVector>,
    pub config: StftConfig,
    pub sample_rate: u32,
    pub method: Method,
}

impl BeamWeights {
    pub fn new(w: Vec<CVector>, config: StftConfig, sample_rate: u32, method: Method) -> Result<Self> {
        let out = Self {
            w,
            config,
            sample_rate,
            method,
        };
        out.validate()?;
        Ok(out)
    }

    /// `w(k) = e_ref` at every bin.
    pub fn selector(mics: usize, reference: usize, config: StftConfig, sample_rate: u32) -> Self {
        Self {
            w: vec![selector(mics, reference); config.bins()],
            config,
            sample_rate,
            method: Method::Passthrough,
        }
    }

    /// `w(k) = a(k) / |a(k)|^2`, distortionless towards `a`.
    pub fn matched_filter(target: &RtfVector, config: StftConfig, sample_rate: u32) -> Result<Self> {
        let w = target
            .values
            .iter()
            .map(|a| a / Complex64::new(a.norm_squared(), 0.0))
            .collect();
        Self::new(w, config, sample_rate, Method::Passthrough)
    }

    pub fn bins(&self) -> usize {
        self.w.len()
    }

    pub fn dim(&self) -> usize {
        self.w.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.w.iter_mut().for_each(|v| *v *= Complex64::new(factor, 0.0));
        out
    }

    pub fn max_norm(&self) -> f64 {
        self.w.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Finite entries, one vector per bin of the config, all of equal length, norms bounded.
    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.config.bins() {
            return Err(Error::InvalidWeights(format!(
                "{} weight vectors for {} bins",
                self.w.len(),
                self.config.bins()
            )));
        }
        let m = self.dim();
        if m == 0 || self.w.iter().any(|v| v.len() != m) {
            return Err(Error::InvalidWeights("weight vectors differ in length".into()));
        }
        if self
            .w
            .iter()
            .any(|v| v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()))
        {
            return Err(Error::InvalidWeights("non-finite weight".into()));
        }
        let n = self.max_norm();
        if n > MAX_WEIGHT_NORM {
            return Err(Error::InvalidWeights(format!(
                "weight norm {n:.3e} exceeds {MAX_WEIGHT_NORM:.0e}"
            )));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::scene::write_json(self, path)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let w: Self = crate::scene::read_json(path)?;
        w.validate()?;
        Ok(w)
    }
}

/// `s(l,k) = w^H(k) y(l,k)`, as a one-channel spectrogram.
pub fn apply_weights(weights: &BeamWeights, spec: &Spectrogram) -> Result<Spectrogram> {
    if weights.dim() != spec.channels() || weights.bins() != spec.num_bins() {
        return Err(Error::Shape(format!(
            "weights are {} bins x {} mics, spectrogram {} bins x {} channels",
            weights.bins(),
            weights.dim(),
            spec.num_bins(),
            spec.channels()
        )));
    }
    let mut out = Array3::zeros((1, spec.frames(), spec.num_bins()));
    for (k, w) in weights.w.iter().enumerate() {
        let y = spec.bins.index_axis(Axis(2), k);
        for l in 0..spec.frames() {
            let mut acc = ZERO;
            for m in 0..spec.channels() {
                acc += w[m].conj() * y[(m, l)];
            }
            out[(0, l, k)] = acc;
        }
    }
    Ok(Spectrogram {
        bins: out,
        config: spec.config,
        sample_rate: spec.sample_rate,
        signal_len: spec.signal_len,
    })
}

/// Mean over the frame axis of per-frame weights shaped bins x frames x mics.
pub fn average_time_varying(
    weights_per_frame: &Array3<Complex64>,
    config: StftConfig,
    sample_rate: u32,
) -> Result<BeamWeights> {
    let (k, l, m) = weights_per_frame.dim();
    if l == 0 {
        return Err(Error::InvalidArgument("no frames to average".into()));
    }
    let mean: Array2<Complex64> = weights_per_frame
        .mean_axis(Axis(1))
        .ok_or_else(|| Error::InvalidArgument("no frames to average".into()))?;
    let w = (0..k)
        .map(|b| CVector::from_iterator(m, mean.row(b).iter().copied()))
        .collect();
    BeamWeights::new(w, config, sample_rate, Method::Averaged)
}
