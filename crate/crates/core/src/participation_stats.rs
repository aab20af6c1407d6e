//! Minimum-participation thresholds and the participation-bias estimator.

use crate::population_model::CorruptionStatus;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default floor on the mean participation propensity.
pub const DEFAULT_PROPENSITY_FLOOR: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("infeasible: corruption bound {corruption} is not below threshold {k}")]
    Infeasible { corruption: f64, k: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("status and propensity sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty profile")]
    Empty,
    #[error("mean propensity is zero")]
    ZeroMeanPropensity,
}

/// An open or closed lower bound. `strict` means the value itself is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub strict: bool,
}

impl Bound {
    pub fn admits(&self, x: f64) -> bool {
        if self.strict {
            x > self.value
        } else {
            x >= self.value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInputs {
    pub y_max: f64,
    pub n_max: u64,
    pub k: f64,
}

impl ThresholdInputs {
    pub fn new(y_max: f64, n_max: u64, k: f64) -> Result<Self, StatsError> {
        let t = ThresholdInputs { y_max, n_max, k };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if !(0.0..1.0).contains(&self.y_max) {
            return Err(StatsError::InvalidInput(format!("y_max {} outside [0,1)", self.y_max)));
        }
        if self.n_max < 1 {
            return Err(StatsError::InvalidInput("n_max must be at least 1".into()));
        }
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(StatsError::InvalidInput(format!("k {} outside (0,1]", self.k)));
        }
        Ok(())
    }
}

/// Smallest integer strictly above `x`, treating values within a relative
/// 1e-12 of an integer as that integer so decimal inputs like 0.1 behave.
pub fn count_strictly_above(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r as u64 + 1
    } else {
        x.floor() as u64 + 1
    }
}

/// Smallest integer at or above `x`, with the same snapping as
/// [`count_strictly_above`].
pub fn count_at_least(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

pub fn min_participation_fraction_deterministic(y_max: f64, k: f64) -> Result<Bound, StatsError> {
    ThresholdInputs::new(y_max, 1, k)?;
    if y_max >= k {
        return Err(StatsError::Infeasible { corruption: y_max, k });
    }
    Ok(Bound {
        value: y_max / k,
        strict: true,
    })
}

pub fn min_participants_deterministic(inputs: &ThresholdInputs) -> Result<u64, StatsError> {
    inputs.validate()?;
    let phi = min_participation_fraction_deterministic(inputs.y_max, inputs.k)?;
    Ok(count_strictly_above(phi.value * inputs.n_max as f64))
}

/// The bias can only be checked against the threshold; the size comes from
/// the propensity floor.
pub fn min_participants_probabilistic(
    inputs: &ThresholdInputs,
    bias: f64,
    propensity_floor: f64,
) -> Result<u64, StatsError> {
    inputs.validate()?;
    if !(0.0..=1.0).contains(&propensity_floor) {
        return Err(StatsError::InvalidInput(format!("floor {propensity_floor} outside [0,1]")));
    }
    if !bias.is_finite() {
        return Err(StatsError::InvalidInput("bias must be finite".into()));
    }
    let expected = inputs.y_max + bias;
    if expected >= inputs.k {
        return Err(StatsError::Infeasible { corruption: expected, k: inputs.k });
    }
    Ok(count_at_least(propensity_floor * inputs.n_max as f64).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityProfile {
    pub rho: Vec<f64>,
    pub rho_bar: f64,
}

impl PropensityProfile {
    pub fn new(rho: Vec<f64>) -> Result<Self, StatsError> {
        if rho.is_empty() {
            return Err(StatsError::Empty);
        }
        if let Some(bad) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(StatsError::InvalidRange(format!("propensity {bad} outside [0,1]")));
        }
        let rho_bar = mean(&rho);
        Ok(PropensityProfile { rho, rho_bar })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub covariance: f64,
    pub rho_bar: f64,
    pub y_bar: f64,
    /// Raw `C/ρ̄`, possibly negative.
    pub bias: f64,
    pub bias_clamped: f64,
    pub bias_max: f64,
    pub s_rho: f64,
    pub s_y: f64,
    /// `None` when either standard deviation is zero.
    pub correlation: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64], m: f64) -> f64 {
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn bias_estimate(
    statuses: &[CorruptionStatus],
    propensities: &[f64],
) -> Result<BiasReport, StatsError> {
    if statuses.len() != propensities.len() {
        return Err(StatsError::LengthMismatch(statuses.len(), propensities.len()));
    }
    let profile = PropensityProfile::new(propensities.to_vec())?;
    let rho_bar = profile.rho_bar;
    if rho_bar == 0.0 {
        return Err(StatsError::ZeroMeanPropensity);
    }
    let y: Vec<f64> = statuses.iter().map(|s| s.indicator() as f64).collect();
    let y_bar = mean(&y);
    let n = y.len() as f64;
    let covariance = propensities
        .iter()
        .zip(&y)
        .map(|(r, yv)| (r - rho_bar) * (yv - y_bar))
        .sum::<f64>()
        / n;
    let s_rho = std_dev(propensities, rho_bar);
    let s_y = std_dev(&y, y_bar);
    let correlation = (s_rho > 0.0 && s_y > 0.0).then(|| covariance / (s_rho * s_y));
    let bias = covariance / rho_bar;
    Ok(BiasReport {
        covariance,
        rho_bar,
        y_bar,
        bias,
        bias_clamped: bias.max(0.0),
        bias_max: bias_max(s_y, rho_bar)?,
        s_rho,
        s_y,
        correlation,
    })
}

pub fn bias_reduction_ratio(rho_old: f64, rho_new: f64) -> Result<f64, StatsError> {
    if !(rho_old > 0.0 && rho_old <= rho_new && rho_new <= 1.0) {
        return Err(StatsError::InvalidRange(format!(
            "need 0 < old <= new <= 1, got {rho_old} -> {rho_new}"
        )));
    }
    Ok(1.0 - rho_old / rho_new)
}

pub fn bias_max(s_y: f64, rho_bar: f64) -> Result<f64, StatsError> {
    if !(rho_bar > 0.0 && rho_bar <= 1.0) || !(s_y >= 0.0) {
        return Err(StatsError::InvalidRange(format!("s_y={s_y}, rho_bar={rho_bar}")));
    }
    Ok(s_y * (1.0 / rho_bar - 1.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMean {
    pub mean: f64,
    pub std_error: f64,
    /// Trials in which nobody participated; excluded from the mean.
    pub empty_trials: u64,
}

/// Draws `N_S` by independent Bernoulli(ρ_n) trials and averages the
/// faulty fraction of the sample.
pub fn sample_participant_corruption<R: Rng + ?Sized>(
    statuses: &[CorruptionStatus],
    propensities: &[f64],
    trials: u64,
    rng: &mut R,
) -> Result<SampleMean, StatsError> {
    if statuses.len() != propensities.len() {
        return Err(StatsError::LengthMismatch(statuses.len(), propensities.len()));
    }
    PropensityProfile::new(propensities.to_vec())?;
    if trials == 0 {
        return Err(StatsError::InvalidInput("trials must be positive".into()));
    }
    let (mut sum, mut sum_sq, mut used, mut empty) = (0.0, 0.0, 0u64, 0u64);
    for _ in 0..trials {
        let (mut n, mut f) = (0u64, 0u64);
        for (s, &r) in statuses.iter().zip(propensities) {
            if rng.random::<f64>() < r {
                n += 1;
                f += s.indicator() as u64;
            }
        }
        if n == 0 {
            empty += 1;
            continue;
        }
        let y = f as f64 / n as f64;
        sum += y;
        sum_sq += y * y;
        used += 1;
    }
    if used == 0 {
        return Err(StatsError::InvalidInput("no trial produced a participant".into()));
    }
    let m = sum / used as f64;
    let var = (sum_sq / used as f64 - m * m).max(0.0) * used as f64 / (used.max(2) - 1) as f64;
    Ok(SampleMean {
        mean: m,
        std_error: (var / used as f64).sqrt(),
        empty_trials: empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use CorruptionStatus::{Correct, Faulty};

    #[test]
    fn deterministic_fraction_examples() {
        for (y, k, phi) in [(0.10, 0.5, 0.20), (0.01, 0.5, 0.02), (0.20, 0.5, 0.40)] {
            let b = min_participation_fraction_deterministic(y, k).unwrap();
            assert_relative_eq!(b.value, phi, max_relative = 1e-15);
            assert!(b.strict);
            assert!(!b.admits(phi));
        }
        assert!(matches!(
            min_participation_fraction_deterministic(0.5, 0.5),
            Err(StatsError::Infeasible { .. })
        ));
    }

    #[test]
    fn deterministic_count_examples() {
        let n = 4_000_000_000;
        let count = |y| min_participants_deterministic(&ThresholdInputs::new(y, n, 0.5).unwrap()).unwrap();
        assert_eq!(count(0.01), 80_000_001);
        assert_eq!(count(0.10), 800_000_001);
        assert_eq!(count(0.20), 1_600_000_001);
    }

    #[test]
    fn snapping_only_near_integers() {
        assert_eq!(count_strictly_above(2.5), 3);
        assert_eq!(count_strictly_above(2.0), 3);
        assert_eq!(count_strictly_above(1.999_999_999_999_999_9), 3);
        assert_eq!(count_strictly_above(0.0), 1);
        assert_eq!(count_at_least(2.0000001), 3);
        assert_eq!(count_at_least(800_000_000.000_000_1), 800_000_000);
    }

    #[test]
    fn bias_examples() {
        let r = bias_estimate(&[Faulty, Correct, Faulty], &[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(r.covariance, 0.0);
        assert_eq!(r.bias, 0.0);

        let r = bias_estimate(&[Faulty, Correct], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(r.covariance, 0.25);
        assert_relative_eq!(r.rho_bar, 0.5);
        assert_relative_eq!(r.bias, 0.5);
        assert_relative_eq!(r.correlation.unwrap(), 1.0);

        let r = bias_estimate(&[Faulty, Correct], &[0.0, 1.0]).unwrap();
        assert_relative_eq!(r.covariance, -0.25);
        assert_relative_eq!(r.bias, -0.5);
        assert_eq!(r.bias_clamped, 0.0);

        assert_eq!(bias_estimate(&[Faulty], &[0.0]), Err(StatsError::ZeroMeanPropensity));
        assert_eq!(bias_estimate(&[Faulty], &[0.1, 0.2]), Err(StatsError::LengthMismatch(1, 2)));
        assert_eq!(bias_estimate(&[], &[]), Err(StatsError::Empty));
    }

    #[test]
    fn reduction_examples() {
        assert_relative_eq!(bias_reduction_ratio(0.1, 0.2).unwrap(), 0.5);
        assert_relative_eq!(bias_reduction_ratio(0.5, 0.6).unwrap(), 1.0 / 6.0, max_relative = 1e-12);
        assert_eq!(bias_reduction_ratio(0.4, 0.4).unwrap(), 0.0);
        assert!(bias_reduction_ratio(0.6, 0.5).is_err());
        assert!(bias_reduction_ratio(0.0, 0.5).is_err());
    }

    #[test]
    fn bias_max_examples() {
        assert_eq!(bias_max(0.7, 1.0).unwrap(), 0.0);
        assert_relative_eq!(bias_max(0.3, 0.2).unwrap(), 0.6, max_relative = 1e-12);
        assert_relative_eq!(bias_max(0.5, 0.5).unwrap(), 0.5);
        assert!(bias_max(0.5, 0.0).is_err());
    }

    #[test]
    fn probabilistic_examples() {
        let i = ThresholdInputs::new(0.0, 4_000_000_000, 0.5).unwrap();
        assert_eq!(min_participants_probabilistic(&i, 0.0, 0.2).unwrap(), 800_000_000);
        let i = ThresholdInputs::new(0.3, 4_000_000_000, 0.5).unwrap();
        assert!(matches!(
            min_participants_probabilistic(&i, 0.25, 0.2),
            Err(StatsError::Infeasible { .. })
        ));
        let i = ThresholdInputs::new(0.0, 3, 0.5).unwrap();
        assert_eq!(min_participants_probabilistic(&i, 0.0, 0.0).unwrap(), 1);
    }
}
