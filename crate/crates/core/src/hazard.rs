//! Probabilistic world model for unknown hazards.
//!
//! Unknown hazards are spatially correlated with the known ones through a
//! Gaussian kernel on top of a baseline rate. The agent's sensor detects a
//! hazard with a probability that decays with squared distance and raises
//! false alarms at a constant rate. Given a set of sampling locations at which
//! nothing was detected, [`HazardField::posterior`] returns the probability
//! that a hazard is still present at a point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, RectDomain};
use crate::scalar::Scalar;

/// Above this many samples the likelihood products are accumulated as log sums.
pub const LOG_SPACE_THRESHOLD: usize = 50;

const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    deny_unknown_fields,
    bound(deserialize = "T: Deserialize<'de>, HazardParams<T>: Default")
)]
pub struct HazardParams<T = f64> {
    /// Spatial decay of the known-to-unknown correlation, 1/m^2.
    pub lambda_corr: T,
    /// Baseline prior probability of a hazard anywhere.
    pub p_h: T,
    /// Sensor steepness, 1/m^2.
    pub beta_sense: T,
    /// False alarm probability per sample.
    pub p_fa: T,
    /// Sampling period, seconds.
    pub delta_s: T,
}

impl Default for HazardParams<f64> {
    fn default() -> Self {
        Self {
            lambda_corr: 0.00015,
            p_h: 0.3,
            beta_sense: 0.002,
            p_fa: 0.0,
            delta_s: 0.1,
        }
    }
}

impl<T: Scalar> HazardParams<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !unit(self.p_h) || !unit(self.p_fa) {
            return Err(Error::param("p_h and p_fa must lie in [0, 1]"));
        }
        if !(self.lambda_corr > T::zero() && self.beta_sense > T::zero()) {
            return Err(Error::param("lambda_corr and beta_sense must be positive"));
        }
        if !(self.delta_s > T::zero()) {
            return Err(Error::param("delta_s must be positive"));
        }
        Ok(())
    }

    /// Distance at which a single measurement detects with probability `p`.
    pub fn detection_radius(&self, p: T) -> T {
        (-p.ln() / self.beta_sense).sqrt()
    }
}

/// Correlation of an unknown hazard at `xu` with a single known hazard at `xk`.
pub fn pair_prior<T: Scalar>(xu: Point<T>, xk: Point<T>, lambda_corr: T) -> T {
    (-lambda_corr * xu.dist_sq(xk)).exp()
}

/// Prior hazard probability at `xu` given all known hazards.
///
/// `1 - prod_i (1 - pair_prior_i) * (1 - p_h)`, with the baseline factor applied once.
pub fn combined_prior<T: Scalar>(xu: Point<T>, known: &[Point<T>], params: &HazardParams<T>) -> T {
    let miss = known.iter().fold(T::one(), |acc, &k| {
        acc * (T::one() - pair_prior(xu, k, params.lambda_corr))
    });
    T::one() - miss * (T::one() - params.p_h)
}

/// `ln(1 - combined_prior)`, accurate when the prior is close to 0 or 1.
pub fn ln_clear_prior<T: Scalar>(xu: Point<T>, known: &[Point<T>], params: &HazardParams<T>) -> T {
    known
        .iter()
        .map(|&k| ln_one_minus_exp_neg(params.lambda_corr * xu.dist_sq(k)))
        .fold((-params.p_h).ln_1p(), |a, b| a + b)
}

/// Probability that a measurement taken at `xs` detects a hazard at `xu`.
pub fn detect_prob<T: Scalar>(xs: Point<T>, xu: Point<T>, beta_sense: T) -> T {
    (-beta_sense * xs.dist_sq(xu)).exp()
}

/// Probability that a measurement at `xs` misses a hazard at `xu`, `1 - detect_prob`,
/// without cancellation when the two are close.
pub fn miss_prob<T: Scalar>(xs: Point<T>, xu: Point<T>, beta_sense: T) -> T {
    -(-beta_sense * xs.dist_sq(xu)).exp_m1()
}

/// `ln(1 - e^{-r})` for `r >= 0`, accurate for small and large `r`.
pub fn ln_one_minus_exp_neg<T: Scalar>(r: T) -> T {
    if r <= T::LN_2() {
        (-(-r).exp_m1()).ln()
    } else {
        (-(-r).exp()).ln_1p()
    }
}

/// Known hazards plus the no-detection samples gathered so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>, HazardParams<T>: Default"))]
pub struct HazardField<T = f64> {
    known: Vec<Point<T>>,
    samples: Vec<Point<T>>,
    params: HazardParams<T>,
}

impl<T: Scalar> HazardField<T> {
    pub fn new(known: Vec<Point<T>>, params: HazardParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            known,
            samples: Vec::new(),
            params,
        })
    }

    pub fn known(&self) -> &[Point<T>] {
        &self.known
    }

    pub fn samples(&self) -> &[Point<T>] {
        &self.samples
    }

    pub fn params(&self) -> &HazardParams<T> {
        &self.params
    }

    /// A new field with `extra` appended to the sample history.
    pub fn with_samples(&self, extra: &[Point<T>]) -> Self {
        let mut f = self.clone();
        f.samples.extend_from_slice(extra);
        f
    }

    pub fn push_samples(&mut self, extra: &[Point<T>]) {
        self.samples.extend_from_slice(extra);
    }

    pub fn prior(&self, xu: Point<T>) -> T {
        combined_prior(xu, &self.known, &self.params)
    }

    /// `ln(1 - prior(xu))` without cancellation.
    pub fn ln_clear_prior(&self, xu: Point<T>) -> T {
        ln_clear_prior(xu, &self.known, &self.params)
    }

    /// Log-likelihood of no detection at any sample given a hazard at `xu`.
    pub fn log_miss_likelihood(&self, xu: Point<T>) -> T {
        let beta = self.params.beta_sense;
        self.samples
            .iter()
            .map(|&s| ln_one_minus_exp_neg(beta * s.dist_sq(xu)))
            .fold(T::zero(), |a, b| a + b)
    }

    /// Posterior probability of a hazard at `xu` after no detections at every sample.
    pub fn posterior(&self, xu: Point<T>) -> Result<T> {
        if self.samples.is_empty() {
            return Ok(self.prior(xu));
        }
        posterior_from_parts(self.ln_clear_prior(xu), &self.samples, xu, &self.params)
    }
}

/// Posterior for a given `ln(1 - prior)` and sample set; exposed for callers that cache priors.
pub fn posterior_from_parts<T: Scalar>(
    ln_clear_prior: T,
    samples: &[Point<T>],
    xu: Point<T>,
    params: &HazardParams<T>,
) -> Result<T> {
    let one = T::one();
    let beta = params.beta_sense;
    let q = one - params.p_fa;
    let n = samples.len();
    let prior = -ln_clear_prior.exp_m1();
    if n == 0 {
        return Ok(prior);
    }
    if n <= LOG_SPACE_THRESHOLD {
        let miss = samples.iter().fold(one, |acc, &s| acc * miss_prob(s, xu, beta));
        let num = miss * prior;
        let evidence = num + q.powi(n as i32) * ln_clear_prior.exp();
        if evidence <= T::zero() {
            return Err(Error::ZeroEvidence);
        }
        Ok(num / evidence)
    } else {
        let log_miss = samples
            .iter()
            .map(|&s| ln_one_minus_exp_neg(beta * s.dist_sq(xu)))
            .fold(T::zero(), |a, b| a + b);
        let n_t = T::from_usize(n).unwrap();
        let log_clear = n_t * q.ln();
        posterior_from_logs(ln_clear_prior, log_miss, log_clear)
    }
}

/// `prior * e^lm / (prior * e^lm + (1 - prior) * e^lc)` evaluated without underflow,
/// with the prior given as `ln(1 - prior)`.
pub fn posterior_from_logs<T: Scalar>(ln_clear_prior: T, log_miss: T, log_clear: T) -> Result<T> {
    let one = T::one();
    let a = log_miss + ln_one_minus_exp_neg(-ln_clear_prior);
    let b = log_clear + ln_clear_prior;
    if a == T::neg_infinity() && b == T::neg_infinity() {
        return Err(Error::ZeroEvidence);
    }
    if a == T::neg_infinity() {
        return Ok(T::zero());
    }
    if b == T::neg_infinity() {
        return Ok(one);
    }
    // logistic of a - b
    Ok(one / (one + (b - a).exp()))
}

/// Draws `n_unknown` hazard locations by rejection against the combined prior.
pub fn sample_unknown_hazards<T: Scalar>(
    known: &[Point<T>],
    params: &HazardParams<T>,
    domain: &RectDomain<T>,
    n_unknown: usize,
    seed: u64,
) -> Result<Vec<Point<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_unknown_hazards_with(known, params, domain, n_unknown, &mut rng)
}

pub fn sample_unknown_hazards_with<T: Scalar, R: Rng + ?Sized>(
    known: &[Point<T>],
    params: &HazardParams<T>,
    domain: &RectDomain<T>,
    n_unknown: usize,
    rng: &mut R,
) -> Result<Vec<Point<T>>> {
    params.validate()?;
    let mut out = Vec::with_capacity(n_unknown);
    let mut rejections = 0usize;
    while out.len() < n_unknown {
        let u = T::lit(rng.random::<f64>());
        let v = T::lit(rng.random::<f64>());
        let cand = domain.from_unit(u, v);
        let accept = T::lit(rng.random::<f64>()) < combined_prior(cand, known, params);
        if accept {
            out.push(cand);
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::SamplerStalled(rejections));
            }
        }
    }
    Ok(out)
}
