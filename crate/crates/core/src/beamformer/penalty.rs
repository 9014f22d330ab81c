//! Direct minimisation of
//! `-SI-SDR + lambda_pass mean_k |w^H a - 1|^2 + lambda_null mean_k 10 log10(|w^H A|^2 + eps)`
//! over per-bin complex weights.
//!
//! Gradients use the conjugate-coordinate convention `G = df/dRe w + j df/dIm w`.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{BeamWeights, ConstraintSet, Method};
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::eval::si_sdr_with_gradient;
use crate::linalg::{CVector, ZERO};
use crate::stft::{Spectrogram, StftEngine};

const DB: f64 = 10.0 / std::f64::consts::LN_10;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `w(k) = e_ref`
    #[default]
    Reference,
    /// `w(k) = a(k) / |a(k)|^2`
    MatchedFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySchedule {
    pub lambda_pass_max: f64,
    pub lambda_null_max: f64,
    pub warmup_iters: usize,
    pub ramp_iters: usize,
    pub epsilon: f64,
    pub total_iters: usize,
    pub step_size: f64,
    /// Step size reached at the last iteration by cosine decay once the ramp has finished.
    /// `None` keeps the step fixed.
    pub final_step_size: Option<f64>,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub init: Init,
    pub grad_clip: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            lambda_pass_max: 1000.0,
            lambda_null_max: 1.0,
            warmup_iters: 200,
            ramp_iters: 800,
            epsilon: 1e-8,
            total_iters: 2000,
            step_size: 3e-3,
            final_step_size: Some(1e-4),
            seed: 0,
            optimizer: Optimizer::Adam,
            init: Init::Reference,
            grad_clip: 1e3,
        }
    }
}

impl PenaltySchedule {
    /// Reconstruction-only objective.
    pub fn without_constraints(mut self) -> Self {
        self.lambda_pass_max = 0.0;
        self.lambda_null_max = 0.0;
        self
    }

    fn ramp(&self, t: usize) -> f64 {
        if t < self.warmup_iters {
            0.0
        } else if self.ramp_iters == 0 {
            1.0
        } else {
            ((t - self.warmup_iters) as f64 / self.ramp_iters as f64).clamp(0.0, 1.0)
        }
    }

    pub fn step(&self, t: usize) -> f64 {
        let Some(last) = self.final_step_size else {
            return self.step_size;
        };
        let start = self.warmup_iters + self.ramp_iters;
        if t <= start || self.total_iters <= start {
            return self.step_size;
        }
        let x = ((t - start) as f64 / (self.total_iters - start) as f64).min(1.0);
        last + 0.5 * (self.step_size - last) * (1.0 + (std::f64::consts::PI * x).cos())
    }

    pub fn lambda_pass(&self, t: usize) -> f64 {
        self.lambda_pass_max * self.ramp(t)
    }

    pub fn lambda_null(&self, t: usize) -> f64 {
        self.lambda_null_max * self.ramp(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_pass_max >= 0.0
            && self.lambda_null_max >= 0.0
            && self.epsilon > 0.0
            && self.step_size > 0.0
            && self.final_step_size.is_none_or(|s| s > 0.0 && s <= self.step_size)
            && self.grad_clip > 0.0
            && self.lambda_pass_max.is_finite()
            && self.lambda_null_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid penalty schedule {self:?}")))
        }
    }
}

/// The three addends of the loss; the constraint terms are absent without constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `-SI-SDR` in dB.
    pub si_sdr_term: f64,
    pub pass_term: Option<f64>,
    pub null_term: Option<f64>,
}

impl LossTerms {
    pub fn total(&self, lambda_pass: f64, lambda_null: f64) -> f64 {
        let mut t = self.si_sdr_term;
        if lambda_pass != 0.0 {
            t += lambda_pass * self.pass_term.unwrap_or(0.0);
        }
        if lambda_null != 0.0 {
            t += lambda_null * self.null_term.unwrap_or(0.0);
        }
        t
    }
}

/// Precomputed data for evaluating the loss and its gradient.
pub struct PenaltyProblem<'a> {
    engine: StftEngine,
    mixture: &'a Spectrogram,
    /// Mixture STFT per bin, frame-major with channels contiguous.
    by_bin: Vec<Vec<Complex64>>,
    target: Vec<f64>,
    start: usize,
    constraints: Option<&'a ConstraintSet>,
    epsilon: f64,
}

impl<'a> PenaltyProblem<'a> {
    /// SI-SDR is measured from the first fully overlapped sample to the end of `target_ref`.
    pub fn new(
        mixture: &'a Spectrogram,
        target_ref: &AudioClip,
        constraints: Option<&'a ConstraintSet>,
        epsilon: f64,
    ) -> Result<Self> {
        if target_ref.channels() != 1 {
            return Err(Error::Shape("target reference must be mono".into()));
        }
        if target_ref.len() != mixture.signal_len {
            return Err(Error::Shape(format!(
                "target reference has {} samples, mixture {}",
                target_ref.len(),
                mixture.signal_len
            )));
        }
        if let Some(c) = constraints {
            if c.bins() != mixture.num_bins() || c.dim() != mixture.channels() {
                return Err(Error::Shape("constraints do not match the mixture".into()));
            }
        }
        let start = mixture.config.interior_start();
        if start >= target_ref.len() {
            return Err(Error::InvalidArgument("empty estimation segment".into()));
        }
        let target = target_ref.channel(0).to_vec();
        if target[start..].iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroReference);
        }
        let (m, l, k) = mixture.bins.dim();
        let by_bin = (0..k)
            .map(|b| {
                let mut v = Vec::with_capacity(l * m);
                for f in 0..l {
                    v.extend((0..m).map(|ch| mixture.bins[(ch, f, b)]));
                }
                v
            })
            .collect();
        Ok(Self {
            engine: StftEngine::new(mixture.config)?,
            mixture,
            by_bin,
            target,
            start,
            constraints,
            epsilon,
        })
    }

    fn check(&self, w: &BeamWeights) -> Result<()> {
        if w.bins() != self.mixture.num_bins() || w.dim() != self.mixture.channels() {
            return Err(Error::Shape("weights do not match the mixture".into()));
        }
        Ok(())
    }

    fn output(&self, w: &[CVector]) -> Array2<Complex64> {
        let (m, l, k) = self.mixture.bins.dim();
        let mut out = Array2::zeros((l, k));
        for (b, y) in self.by_bin.iter().enumerate() {
            let wc: Vec<Complex64> = w[b].iter().map(|z| z.conj()).collect();
            for (f, frame) in y.chunks_exact(m).enumerate() {
                out[(f, b)] = frame.iter().zip(&wc).map(|(y, w)| w * y).sum();
            }
        }
        debug_assert_eq!(out.dim(), (l, k));
        out
    }

    /// `-SI-SDR` and, if requested, its gradient.
    fn si_sdr_part(&self, w: &[CVector], want_grad: bool) -> Result<(f64, Option<Vec<CVector>>)> {
        let spec = self.output(w);
        let est = self.engine.synthesize_channel(spec.view(), self.target.len());
        let (value, grad_t) = si_sdr_with_gradient(&est[self.start..], &self.target[self.start..])?;
        if !want_grad {
            return Ok((-value, None));
        }
        let mut g = vec![0.0; est.len()];
        g[self.start..]
            .iter_mut()
            .zip(&grad_t)
            .for_each(|(d, s)| *d = -s);
        let gs = self.engine.synthesize_adjoint(&g, spec.nrows());
        let m = self.mixture.channels();
        let grads = self
            .by_bin
            .iter()
            .enumerate()
            .map(|(b, y)| {
                let mut acc = vec![ZERO; m];
                for (f, frame) in y.chunks_exact(m).enumerate() {
                    let g = gs[(f, b)].conj();
                    for (a, v) in acc.iter_mut().zip(frame) {
                        *a += v * g;
                    }
                }
                CVector::from_vec(acc)
            })
            .collect();
        Ok((-value, Some(grads)))
    }

    fn pass_part(&self, c: &ConstraintSet, w: &[CVector], grad: Option<&mut [CVector]>, scale: f64) -> f64 {
        let k = w.len() as f64;
        let mut total = 0.0;
        let mut grad = grad;
        for (b, wb) in w.iter().enumerate() {
            let a = &c.target.values[b];
            let r = wb.dotc(a) - Complex64::new(1.0, 0.0);
            total += r.norm_sqr();
            if let Some(g) = grad.as_deref_mut() {
                let factor = r.conj() * (2.0 * scale / k);
                g[b] += a * factor;
            }
        }
        total / k
    }

    fn null_part(&self, c: &ConstraintSet, w: &[CVector], grad: Option<&mut [CVector]>, scale: f64) -> f64 {
        let k = w.len() as f64;
        let mut total = 0.0;
        let mut grad = grad;
        for (b, wb) in w.iter().enumerate() {
            let basis = &c.interference.basis[b];
            let d: Vec<Complex64> = (0..basis.ncols()).map(|j| wb.dotc(&basis.column(j))).collect();
            let s: f64 = d.iter().map(|z| z.norm_sqr()).sum();
            total += DB * (s + self.epsilon).ln();
            if let Some(g) = grad.as_deref_mut() {
                let factor = DB / (s + self.epsilon) * 2.0 * scale / k;
                for (j, dj) in d.iter().enumerate() {
                    g[b] += basis.column(j) * (dj.conj() * factor);
                }
            }
        }
        total / k
    }

    pub fn terms(&self, w: &BeamWeights) -> Result<LossTerms> {
        self.check(w)?;
        let (si, _) = self.si_sdr_part(&w.w, false)?;
        Ok(LossTerms {
            si_sdr_term: si,
            pass_term: self.constraints.map(|c| self.pass_part(c, &w.w, None, 0.0)),
            null_term: self.constraints.map(|c| self.null_part(c, &w.w, None, 0.0)),
        })
    }

    /// Terms and gradient of `si_sdr_term + lambda_pass pass_term + lambda_null null_term`.
    pub fn value_and_gradient(
        &self,
        w: &BeamWeights,
        lambda_pass: f64,
        lambda_null: f64,
    ) -> Result<(LossTerms, Vec<CVector>)> {
        self.check(w)?;
        let (si, grad) = self.si_sdr_part(&w.w, true)?;
        let mut grad = grad.expect("gradient requested");
        let (pass, null) = match self.constraints {
            Some(c) => (
                Some(self.pass_part(c, &w.w, (lambda_pass != 0.0).then_some(&mut grad[..]), lambda_pass)),
                Some(self.null_part(c, &w.w, (lambda_null != 0.0).then_some(&mut grad[..]), lambda_null)),
            ),
            None => (None, None),
        };
        Ok((
            LossTerms {
                si_sdr_term: si,
                pass_term: pass,
                null_term: null,
            },
            grad,
        ))
    }
}

/// The three loss terms for the given weights.
pub fn loss_terms(
    w: &BeamWeights,
    mixture_spec: &Spectrogram,
    target_ref: &AudioClip,
    constraints: Option<&ConstraintSet>,
    epsilon: f64,
) -> Result<LossTerms> {
    PenaltyProblem::new(mixture_spec, target_ref, constraints, epsilon)?.terms(w)
}

/// Gradient of `si_sdr_term + lambda_pass pass_term + lambda_null null_term`.
pub fn loss_gradient(
    w: &BeamWeights,
    mixture_spec: &Spectrogram,
    target_ref: &AudioClip,
    constraints: Option<&ConstraintSet>,
    epsilon: f64,
    lambda_pass: f64,
    lambda_null: f64,
) -> Result<Vec<CVector>> {
    let p = PenaltyProblem::new(mixture_spec, target_ref, constraints, epsilon)?;
    Ok(p.value_and_gradient(w, lambda_pass, lambda_null)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub si_sdr_term: f64,
    pub pass_term: f64,
    pub null_term: f64,
    pub lambda_pass: f64,
    pub lambda_null: f64,
}

impl TraceRow {
    pub fn total(&self) -> f64 {
        let term = |l: f64, v: f64| if l == 0.0 { 0.0 } else { l * v };
        self.si_sdr_term + term(self.lambda_pass, self.pass_term) + term(self.lambda_null, self.null_term)
    }
}

/// Loss terms per iteration; absent constraint terms are NaN.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizationTrace {
    pub rows: Vec<TraceRow>,
}

impl OptimizationTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,si_sdr_term,pass_term,null_term,lambda_pass,lambda_null\n");
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.si_sdr_term, r.pass_term, r.null_term, r.lambda_pass, r.lambda_null
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Adam {
    m: Vec<CVector>,
    v: Vec<CVector>,
    t: i32,
}

impl Adam {
    fn new(shape: &[CVector]) -> Self {
        let zeros: Vec<CVector> = shape.iter().map(|w| CVector::zeros(w.len())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Per real coordinate, so real and imaginary parts get separate second moments.
    fn step(&mut self, w: &mut [CVector], g: &[CVector], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for ((wb, gb), (mb, vb)) in w.iter_mut().zip(g).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..wb.len() {
                let gi = gb[i];
                mb[i] = mb[i] * ADAM_BETA1 + gi * (1.0 - ADAM_BETA1);
                vb[i] = vb[i] * ADAM_BETA2
                    + Complex64::new(gi.re * gi.re, gi.im * gi.im) * (1.0 - ADAM_BETA2);
                let upd = |m: f64, v: f64| lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
                wb[i] -= Complex64::new(upd(mb[i].re, vb[i].re), upd(mb[i].im, vb[i].im));
            }
        }
    }
}

/// Minimises the penalised loss from `init`. Returns the final weights and a trace with one
/// row per iterate, the last being the returned weights.
pub fn penalty_optimize(
    mixture_spec: &Spectrogram,
    target_ref: &AudioClip,
    constraints: Option<&ConstraintSet>,
    schedule: &PenaltySchedule,
    init: &BeamWeights,
) -> Result<(BeamWeights, OptimizationTrace)> {
    schedule.validate()?;
    let problem = PenaltyProblem::new(mixture_spec, target_ref, constraints, schedule.epsilon)?;
    let mut w = init.clone();
    w.method = Method::Penalty;
    problem.check(&w)?;
    let mut adam = Adam::new(&w.w);
    let mut trace = OptimizationTrace::default();
    let nan = f64::NAN;

    for t in 0..=schedule.total_iters {
        let (lp, ln) = match constraints {
            Some(_) => (schedule.lambda_pass(t), schedule.lambda_null(t)),
            None => (0.0, 0.0),
        };
        let (terms, mut grad) = problem.value_and_gradient(&w, lp, ln)?;
        let total = terms.total(lp, ln);
        if !total.is_finite() {
            return Err(Error::Diverged(t));
        }
        trace.rows.push(TraceRow {
            iter: t,
            si_sdr_term: terms.si_sdr_term,
            pass_term: terms.pass_term.unwrap_or(nan),
            null_term: terms.null_term.unwrap_or(nan),
            lambda_pass: lp,
            lambda_null: ln,
        });
        if t == schedule.total_iters {
            break;
        }
        let norm = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        if norm > schedule.grad_clip {
            let s = Complex64::new(schedule.grad_clip / norm, 0.0);
            grad.iter_mut().for_each(|g| *g *= s);
        }
        match schedule.optimizer {
            Optimizer::GradientDescent => {
                let s = Complex64::new(schedule.step(t), 0.0);
                w.w.iter_mut().zip(&grad).for_each(|(wb, gb)| *wb -= gb * s);
            }
            Optimizer::Adam => adam.step(&mut w.w, &grad, schedule.step(t)),
        }
        if w.w.iter().any(|v| v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::Diverged(t + 1));
        }
    }
    Ok((w, trace))
}

/// Starting weights selected by the schedule.
pub fn initial_weights(
    schedule: &PenaltySchedule,
    constraints: Option<&ConstraintSet>,
    mics: usize,
    reference: usize,
    config: crate::stft::StftConfig,
    sample_rate: u32,
) -> Result<BeamWeights> {
    match (schedule.init, constraints) {
        (Init::MatchedFilter, Some(c)) => BeamWeights::matched_filter(&c.target, config, sample_rate),
        _ => Ok(BeamWeights::selector(mics, reference, config, sample_rate)),
    }
}
