//! Log-domain categorical sampling for the attachment rule.
//!
//! A new vertex at `x` picks `v` with probability proportional to
//! `deg(v) * F(|x - X_v|)`. Weights are handled as logarithms throughout:
//! the maximum is subtracted before exponentiating, so nothing overflows, and
//! entries more than ~745 nats below the maximum underflow to zero. That
//! underflow is the only approximation made.

use crate::error::{Error, Result};
use crate::geometry::{Domain, RngStream};

use super::{Attractiveness, GraphState};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline(always)]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline(always)]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `log deg(v) + log F(|X_v - x|)` for every vertex `v` of `state`.
pub fn attachment_log_weights(
    state: &GraphState,
    f: &Attractiveness,
    x: &[f64],
    domain: &Domain,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(state.vertex_count());
    fill_log_weights(state, f, x, domain, &mut out)?;
    Ok(out)
}

pub(crate) fn fill_log_weights(
    state: &GraphState,
    f: &Attractiveness,
    x: &[f64],
    domain: &Domain,
    out: &mut Vec<f64>,
) -> Result<()> {
    out.clear();
    for (v, &deg) in state.degrees().iter().enumerate() {
        let r2 = domain.distance_sq(x, state.position(v));
        if r2 == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        out.push((deg as f64).ln() + f.log_value_sq(r2));
    }
    Ok(())
}

/// Draws an index with probability `exp(w_v - logsumexp(w))`, consuming one
/// uniform from `rng`.
pub fn sample_attachment(log_weights: &[f64], rng: &mut RngStream) -> Result<usize> {
    let u = 1.0 - rng.unit_open_closed();
    invert_log_categorical(log_weights, u)
}

/// Inverse-CDF draw for uniform `u` in `[0, 1)`.
///
/// The cumulative distribution is accumulated with compensated summation in
/// ascending index order, so the result is a pure function of `(log_weights, u)`.
pub fn invert_log_categorical(log_weights: &[f64], u: f64) -> Result<usize> {
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateWeights);
    }
    debug_assert!(max.is_finite(), "log weight overflowed: {max}");

    let mut total = CompensatedSum::default();
    for &w in log_weights {
        total.add((w - max).exp());
    }
    let total = total.value();
    debug_assert!(total.is_finite() && total >= 1.0);

    let target = u * total;
    let mut running = CompensatedSum::default();
    let mut last_positive = 0;
    for (i, &w) in log_weights.iter().enumerate() {
        let p = (w - max).exp();
        if p > 0.0 {
            running.add(p);
            last_positive = i;
            if running.value() > target {
                return Ok(i);
            }
        }
    }
    // rounding left target at or above the final partial sum
    Ok(last_positive)
}
