//! Deadline distributions over the intraday slots `1..=T`.
//!
//! A [`DeadlineDistribution`] is a pmf with a per-slot probability floor.
//! Sampling is inverse-CDF with one uniform per draw, which makes
//! [`coupled_sample`] the monotone coupling of two distributions.

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on the pmf normalization.
pub const SUM_TOL: f64 = 1e-12;

/// Tolerance used when comparing CDFs for dominance.
pub const DOMINANCE_TOL: f64 = 1e-12;

/// One EV parameter per entry, in EV-index order.
pub type ParamVector = Vec<DeadlineDistribution>;

/// Reported or realized deadlines, one slot (1-based) per EV.
pub type DeadlineProfile = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct DeadlineDistribution {
    pmf: Vec<f64>,
    floor: f64,
    cdf: Vec<f64>,
    /// `tail[t] = P(deadline > t)` for `t` in `0..=T`, summed from the right
    /// so that it is exactly zero past the last positive slot.
    tail: Vec<f64>,
}

/// Check membership of `pmf` in the floored simplex.
pub fn validate(pmf: &[f64], floor: f64) -> Result<()> {
    if pmf.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let horizon = pmf.len();
    for (i, &p) in pmf.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability { slot: i + 1, value: p });
        }
    }
    if !floor.is_finite() || floor < 0.0 || floor > 1.0 / horizon as f64 + f64::EPSILON {
        return Err(Error::InvalidFloor { floor, horizon });
    }
    if let Some((i, &p)) = pmf.iter().enumerate().find(|(_, &p)| p < floor) {
        return Err(Error::BelowFloor { slot: i + 1, value: p, floor });
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

impl DeadlineDistribution {
    pub fn new(pmf: Vec<f64>, floor: f64) -> Result<Self> {
        validate(&pmf, floor)?;
        Ok(Self::build(pmf, floor))
    }

    /// Rescale `pmf` to sum to one before validating. Used for published
    /// tables whose rows are rounded.
    pub fn normalized(pmf: Vec<f64>, floor: f64) -> Result<Self> {
        let sum: f64 = pmf.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::NotNormalized { sum });
        }
        Self::new(pmf.into_iter().map(|p| p / sum).collect(), floor)
    }

    /// All mass on `slot`; the floor is necessarily zero.
    pub fn point_mass(horizon: usize, slot: usize) -> Result<Self> {
        if slot == 0 || slot > horizon {
            return Err(Error::SlotOutOfRange { slot, horizon });
        }
        let mut pmf = vec![0.0; horizon];
        pmf[slot - 1] = 1.0;
        Ok(Self::build(pmf, 0.0))
    }

    pub fn uniform(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::EmptyDistribution);
        }
        Self::new(vec![1.0 / horizon as f64; horizon], 0.0)
    }

    fn build(pmf: Vec<f64>, floor: f64) -> Self {
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        let mut tail = vec![0.0; pmf.len() + 1];
        for t in (0..pmf.len()).rev() {
            tail[t] = tail[t + 1] + pmf[t];
        }
        Self { pmf, floor, cdf, tail }
    }

    pub fn horizon(&self) -> usize {
        self.pmf.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// `P(deadline = slot)`; zero outside `1..=T`.
    pub fn prob(&self, slot: usize) -> f64 {
        if slot == 0 || slot > self.pmf.len() {
            0.0
        } else {
            self.pmf[slot - 1]
        }
    }

    /// Running sum of the pmf, `F(1), ..., F(T)`.
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// `F(t)` with `F(0) = 0`.
    pub fn cdf_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.cdf[t.min(self.cdf.len()) - 1]
        }
    }

    /// Survival `P(deadline > t)` for `t` in `0..=T`.
    pub fn survival(&self, t: usize) -> f64 {
        self.tail[t.min(self.pmf.len())]
    }

    /// Conditional probability of departing at `t + 1` given presence after `t`.
    /// `None` when the conditioning event has probability zero.
    pub fn hazard(&self, t: usize) -> Option<f64> {
        let surv = self.survival(t);
        if surv <= 0.0 {
            None
        } else {
            Some((self.prob(t + 1) / surv).min(1.0))
        }
    }

    pub fn mean(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    /// Inverse CDF at `u` in `[0, 1)`: the smallest slot with `F(t) > u`.
    pub fn quantile(&self, u: f64) -> usize {
        match self.cdf.iter().position(|&c| c > u) {
            Some(i) => i + 1,
            // Rounding left F(T) at or below u; use the last slot with mass.
            None => self.pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0) + 1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.quantile(rng.gen::<f64>())
    }
}

fn same_horizon(a: &DeadlineDistribution, b: &DeadlineDistribution) -> Result<()> {
    if a.horizon() != b.horizon() {
        return Err(Error::DimensionMismatch {
            left: a.horizon(),
            right: b.horizon(),
        });
    }
    Ok(())
}

/// Signed supremum `max_t F_theta(t) - F_phi(t)`. Positive when the bid
/// `phi` puts less early mass than the truth at some slot.
pub fn alpha(theta: &DeadlineDistribution, phi: &DeadlineDistribution) -> Result<f64> {
    same_horizon(theta, phi)?;
    Ok(theta
        .cdf
        .iter()
        .zip(&phi.cdf)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff `F_phi(t) >= F_theta(t)` for every slot.
pub fn dominates(phi: &DeadlineDistribution, theta: &DeadlineDistribution) -> Result<bool> {
    Ok(alpha(theta, phi)? <= DOMINANCE_TOL)
}

/// Draw `(t, f)` from one uniform: `t ~ lambda`, `f ~ lambda_tilde`, and
/// `f <= t` on every path.
pub fn coupled_sample<R: Rng + ?Sized>(
    lambda: &DeadlineDistribution,
    lambda_tilde: &DeadlineDistribution,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if !dominates(lambda_tilde, lambda)? {
        return Err(Error::DominanceRequired);
    }
    let u = rng.gen::<f64>();
    Ok((lambda.quantile(u), lambda_tilde.quantile(u)))
}
