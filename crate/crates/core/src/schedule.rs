//! Cosine noise schedule shared by all three modalities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const BETA_MIN: f64 = 1e-5;
const BETA_MAX: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule<F = f64> {
    steps: usize,
    offset: F,
    /// `beta[t - 1]` is the per-step variance at step `t`.
    beta: Vec<F>,
    /// `alpha_bar[t]` for `t = 0..=T`, with `alpha_bar[0] = 1`.
    alpha_bar: Vec<F>,
}

impl<F: Real> NoiseSchedule<F> {
    /// Cosine schedule with offset `s`:
    /// `f(t) = cos^2(((t/T + s) / (1 + s)) pi/2)`, `beta_t = 1 - f(t)/f(t-1)`
    /// clipped to `[1e-5, 0.999]`; `alpha_bar` is the running product of
    /// `1 - beta`.
    pub fn cosine(steps: usize, s: F) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(s > F::zero()) || !s.is_finite() {
            return Err(Error::Config(format!(
                "schedule offset must be positive, got {s:?}"
            )));
        }
        let t_total = F::lit(steps as f64);
        let f = |t: usize| {
            let u = (F::lit(t as f64) / t_total + s) / (F::one() + s);
            let c = (u * F::FRAC_PI_2()).cos();
            c * c
        };
        let mut beta = Vec::with_capacity(steps);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(F::one());
        let mut prev_f = f(0);
        let mut acc = F::one();
        for t in 1..=steps {
            let cur_f = f(t);
            let raw = F::one() - cur_f / prev_f;
            let b = raw.max(F::lit(BETA_MIN)).min(F::lit(BETA_MAX));
            beta.push(b);
            acc = acc * (F::one() - b);
            alpha_bar.push(acc);
            prev_f = cur_f;
        }
        Ok(NoiseSchedule {
            steps,
            offset: s,
            beta,
            alpha_bar,
        })
    }

    /// Schedule from explicit per-step variances, each in `(0, 1)`.
    pub fn from_betas(beta: Vec<F>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(F::one());
        let mut acc = F::one();
        for &b in &beta {
            if !(b > F::zero() && b < F::one()) {
                return Err(Error::Config(format!("beta must lie in (0, 1), got {b:?}")));
            }
            acc = acc * (F::one() - b);
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule {
            steps: beta.len(),
            offset: F::zero(),
            beta,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn offset(&self) -> F {
        self.offset
    }

    /// `beta^t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> F {
        self.beta[t - 1]
    }

    /// `alpha^t = 1 - beta^t`.
    pub fn alpha(&self, t: usize) -> F {
        F::one() - self.beta(t)
    }

    /// `alpha_bar^t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> F {
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[F] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[F] {
        &self.alpha_bar
    }
}
