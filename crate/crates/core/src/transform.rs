//! Value-space normalizations: standard scaling and the Box-Cox power
//! transform, plus the Gaussian back-projection used to score forecasts made
//! in Box-Cox space in the original kWh space.
//!
//! Box-Cox transform of a (shifted) value x:
//!
//! ```text
//! f(x) = ((x + shift)^lambda - 1) / lambda   if lambda != 0
//!        ln(x + shift)                       if lambda == 0
//! ```
//!
//! The shift keeps every training value strictly positive. Lambda is fitted
//! by maximizing the profile log-likelihood of the transformed sample under a
//! normal model, using golden-section search on [-2, 2].

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("need at least two distinct sample values to fit, got {0}")]
    DegenerateSample(usize),
    #[error("value {0} is outside the transform domain (value + shift must be > 0)")]
    ForwardDomain(f64),
    #[error("scaled value {0} is outside the inverse domain (y*lambda + 1 must be > 0)")]
    InverseDomain(f64),
    #[error("standard scaler requires positive std, sample std is 0")]
    ZeroStd,
    #[error("malformed parameter text: {0}")]
    Parse(String),
}

/// Shift applied before fitting when the sample minimum is not positive.
pub const BOXCOX_SHIFT_EPSILON: f64 = 1e-3;
const LAMBDA_LO: f64 = -2.0;
const LAMBDA_HI: f64 = 2.0;
const GOLDEN_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCoxParams {
    pub lambda: f64,
    /// Added to raw values before the power transform, kWh.
    pub shift: f64,
}

/// Back-projected Gaussian parameters in kWh space.
///
/// `clamped` is set when `mu - sigma` fell outside the inverse domain and the
/// lower deviation had to be measured against the domain boundary instead;
/// such forecasts are reported as low-confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackprojectedGaussian {
    pub mean: f64,
    pub std: f64,
    pub clamped: bool,
}

impl BoxCoxParams {
    pub fn new(lambda: f64, shift: f64) -> Self {
        Self { lambda, shift }
    }

    /// Fits `shift` and `lambda` to a sample of load values.
    ///
    /// `shift = max(0, 1e-3 - min(samples))`; lambda maximizes the Box-Cox
    /// profile log-likelihood over [-2, 2] to a tolerance of 1e-4.
    pub fn fit(samples: &[f64]) -> Result<Self, TransformError> {
        let distinct = count_distinct(samples);
        if distinct < 2 {
            return Err(TransformError::DegenerateSample(distinct));
        }
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let shift = (BOXCOX_SHIFT_EPSILON - min).max(0.0);
        let shifted: Vec<f64> = samples.iter().map(|&x| x + shift).collect();
        let lambda = golden_section_max(LAMBDA_LO, LAMBDA_HI, GOLDEN_TOL, |l| {
            boxcox_log_likelihood(&shifted, l)
        });
        Ok(Self { lambda, shift })
    }

    pub fn forward(&self, x: f64) -> Result<f64, TransformError> {
        let arg = x + self.shift;
        if arg <= 0.0 {
            return Err(TransformError::ForwardDomain(x));
        }
        Ok(if self.lambda == 0.0 {
            arg.ln()
        } else {
            (arg.powf(self.lambda) - 1.0) / self.lambda
        })
    }

    pub fn inverse(&self, y: f64) -> Result<f64, TransformError> {
        let raw = if self.lambda == 0.0 {
            y.exp()
        } else {
            let base = y * self.lambda + 1.0;
            if base <= 0.0 {
                return Err(TransformError::InverseDomain(y));
            }
            base.powf(1.0 / self.lambda)
        };
        Ok(raw - self.shift)
    }

    /// Scaled value just inside the open domain boundary of the inverse.
    /// Only meaningful for lambda != 0 (the log case is total on the reals).
    fn nudged_domain_edge(&self) -> f64 {
        let edge = -1.0 / self.lambda;
        let eps = f64::EPSILON * edge.abs().max(1.0);
        if self.lambda > 0.0 {
            edge + eps
        } else {
            edge - eps
        }
    }

    /// Approximates the kWh-space Gaussian for a Gaussian forecast made in
    /// Box-Cox space: the mean maps through the inverse, and the standard
    /// deviation is the average of the upper and lower one-sigma deviations
    /// of the inverse-mapped interval.
    ///
    /// When `mu - sigma` (or `mu + sigma` for negative lambda) falls outside
    /// the inverse's domain, that deviation is measured against the domain
    /// boundary and the result is flagged via `clamped` instead of aborting.
    pub fn backproject_gaussian(
        &self,
        mu: f64,
        sigma: f64,
    ) -> Result<BackprojectedGaussian, TransformError> {
        let mean = self.inverse(mu)?;
        let mut clamped = false;
        let mut map_or_clamp = |y: f64| -> Result<f64, TransformError> {
            match self.inverse(y) {
                Ok(v) => Ok(v),
                Err(_) => {
                    clamped = true;
                    self.inverse(self.nudged_domain_edge())
                }
            }
        };
        let upper = map_or_clamp(mu + sigma)?;
        let lower = map_or_clamp(mu - sigma)?;
        let sigma_plus = upper - mean;
        let sigma_minus = mean - lower;
        Ok(BackprojectedGaussian {
            mean,
            std: (sigma_plus + sigma_minus) / 2.0,
            clamped,
        })
    }

    /// Key-value text for reuse across runs.
    pub fn to_kv(&self) -> String {
        format!("lambda = {}\nshift = {}\n", self.lambda, self.shift)
    }

    pub fn from_kv(text: &str) -> Result<Self, TransformError> {
        let kv = parse_kv(text)?;
        Ok(Self {
            lambda: take_f64(&kv, "lambda")?,
            shift: take_f64(&kv, "shift")?,
        })
    }
}

/// Profile log-likelihood of a Box-Cox parameter on an already-shifted,
/// strictly positive sample under a normal model.
pub fn boxcox_log_likelihood(shifted: &[f64], lambda: f64) -> f64 {
    let n = shifted.len() as f64;
    let transformed: Vec<f64> = shifted
        .iter()
        .map(|&x| {
            if lambda == 0.0 {
                x.ln()
            } else {
                (x.powf(lambda) - 1.0) / lambda
            }
        })
        .collect();
    let mean = transformed.iter().sum::<f64>() / n;
    let var = transformed.iter().map(|&t| (t - mean).powi(2)).sum::<f64>() / n;
    let log_jacobian = (lambda - 1.0) * shifted.iter().map(|&x| x.ln()).sum::<f64>();
    -0.5 * n * var.max(f64::MIN_POSITIVE).ln() + log_jacobian
}

fn golden_section_max(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

fn count_distinct(samples: &[f64]) -> usize {
    let mut sorted: Vec<f64> = samples.iter().cloned().filter(|v| v.is_finite()).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    sorted.len()
}

/// Affine scaling `(x - mean) / std` with population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardScalerParams {
    pub mean: f64,
    pub std: f64,
}

impl StandardScalerParams {
    pub fn fit(samples: &[f64]) -> Result<Self, TransformError> {
        if count_distinct(samples) < 2 {
            return Err(TransformError::DegenerateSample(count_distinct(samples)));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 0.0 {
            return Err(TransformError::ZeroStd);
        }
        Ok(Self { mean, std })
    }

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }

    pub fn to_kv(&self) -> String {
        format!("mean = {}\nstd = {}\n", self.mean, self.std)
    }

    pub fn from_kv(text: &str) -> Result<Self, TransformError> {
        let kv = parse_kv(text)?;
        Ok(Self {
            mean: take_f64(&kv, "mean")?,
            std: take_f64(&kv, "std")?,
        })
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, TransformError> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| TransformError::Parse(format!("expected `key = value`, got `{line}`")))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn take_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64, TransformError> {
    map.get(key)
        .ok_or_else(|| TransformError::Parse(format!("missing key `{key}`")))?
        .parse()
        .map_err(|_| TransformError::Parse(format!("key `{key}` is not a number")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    /// Independent oracle: two-stage grid scan of the profile likelihood,
    /// coarse over [-2, 2] then fine (step 1e-3) around the coarse best.
    fn grid_scan_lambda(samples: &[f64], shift: f64) -> f64 {
        let shifted: Vec<f64> = samples.iter().map(|&x| x + shift).collect();
        let scan = |lo: f64, hi: f64, step: f64| {
            let mut best = (f64::NEG_INFINITY, lo);
            let mut l = lo;
            while l <= hi {
                let ll = boxcox_log_likelihood(&shifted, l);
                if ll > best.0 {
                    best = (ll, l);
                }
                l += step;
            }
            best.1
        };
        let coarse = scan(-2.0, 2.0, 0.02);
        scan(coarse - 0.03, coarse + 0.03, 0.001)
    }

    #[test]
    fn forward_is_affine_when_lambda_one() {
        let p = BoxCoxParams::new(1.0, 0.0);
        assert_eq!(p.forward(3.5).unwrap(), 2.5);
    }

    #[test]
    fn forward_is_log_when_lambda_zero() {
        let p = BoxCoxParams::new(0.0, 0.0);
        assert!((p.forward(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_at_zero() {
        assert!((BoxCoxParams::new(0.0, 0.2).inverse(0.0).unwrap() - 0.8).abs() < 1e-15);
        assert!((BoxCoxParams::new(1.0, 0.2).inverse(0.0).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_nonpositive_argument() {
        let p = BoxCoxParams::new(0.5, 0.0);
        assert!(p.forward(0.0).is_err());
        assert!(p.forward(-1.0).is_err());
    }

    #[test]
    fn fit_uses_shift_rule_at_zero_minimum() {
        let samples = vec![0.0, 1.0, 2.0, 3.0];
        let p = BoxCoxParams::fit(&samples).unwrap();
        assert_eq!(p.shift, 1e-3);
    }

    #[test]
    fn fit_rejects_constant_sample() {
        assert!(BoxCoxParams::fit(&[2.0; 10]).is_err());
    }

    #[test]
    fn fit_recovers_lambda_zero_on_lognormal() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let samples: Vec<f64> = (0..8000)
            .map(|_| f64::exp(normal.sample(&mut rng)))
            .collect();
        let p = BoxCoxParams::fit(&samples).unwrap();
        assert_eq!(p.shift, 0.0);
        assert!(p.lambda.abs() < 0.05, "lambda = {}", p.lambda);
        let oracle = grid_scan_lambda(&samples, p.shift);
        assert!((p.lambda - oracle).abs() < 2e-3, "fit {} vs grid {}", p.lambda, oracle);
    }

    #[test]
    fn fit_recovers_lambda_one_on_normal() {
        // The generating model must have enough spread relative to its mean
        // for lambda to be identifiable; N(5, 1) keeps samples positive.
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let normal = Normal::new(5.0, 1.0).unwrap();
        let samples: Vec<f64> = (0..40_000).map(|_| normal.sample(&mut rng)).collect();
        assert!(samples.iter().all(|&x| x > 0.0));
        let p = BoxCoxParams::fit(&samples).unwrap();
        assert!((p.lambda - 1.0).abs() < 0.05, "lambda = {}", p.lambda);
        let oracle = grid_scan_lambda(&samples, p.shift);
        assert!((p.lambda - oracle).abs() < 2e-3, "fit {} vs grid {}", p.lambda, oracle);
    }

    #[test]
    fn backproject_is_identity_scale_at_lambda_one() {
        let p = BoxCoxParams::new(1.0, 0.0);
        let g = p.backproject_gaussian(4.0, 0.7).unwrap();
        assert!((g.std - 0.7).abs() < 1e-12);
        assert!((g.mean - 5.0).abs() < 1e-12);
        assert!(!g.clamped);
    }

    #[test]
    fn backproject_matches_sinh_at_lambda_zero() {
        // (e^0.1 - e^-0.1)/2 = sinh(0.1)
        let p = BoxCoxParams::new(0.0, 0.0);
        let g = p.backproject_gaussian(0.0, 0.1).unwrap();
        assert!((g.std - 0.1_f64.sinh()).abs() < 1e-12);
    }

    #[test]
    fn backproject_zero_sigma_is_zero() {
        let p = BoxCoxParams::new(0.3, 0.0);
        let g = p.backproject_gaussian(1.0, 0.0).unwrap();
        assert_eq!(g.std, 0.0);
    }

    #[test]
    fn backproject_flags_clamped_lower_tail() {
        // lambda = 0.5: inverse domain needs y > -2; mu - sigma = -3 is out.
        let p = BoxCoxParams::new(0.5, 0.0);
        let g = p.backproject_gaussian(-1.0, 2.0).unwrap();
        assert!(g.clamped);
        assert!(g.std.is_finite() && g.std > 0.0);
    }

    #[test]
    fn standard_scaler_hand_fit() {
        // Population convention: fit on {0, 2} gives mean 1, std 1.
        let s = StandardScalerParams::fit(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(s.forward(1.0), 0.0);
    }

    #[test]
    fn standard_scaler_rejects_constant() {
        assert!(StandardScalerParams::fit(&[3.0, 3.0, 3.0]).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let p = BoxCoxParams::new(0.123456789, 0.001);
        let q = BoxCoxParams::from_kv(&p.to_kv()).unwrap();
        assert_eq!(p, q);
        let s = StandardScalerParams { mean: 4.25, std: 1.75 };
        assert_eq!(StandardScalerParams::from_kv(&s.to_kv()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn forward_inverse_round_trip(x in 1e-3f64..1e3, lambda in -2.0f64..2.0, shift in 0.0f64..1.0) {
            let p = BoxCoxParams::new(lambda, shift);
            let y = p.forward(x).unwrap();
            let back = p.inverse(y).unwrap();
            prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0), "x={x} back={back}");
        }

        #[test]
        fn forward_is_strictly_increasing(
            a in 1e-3f64..1e3,
            gap in 1e-6f64..1e3,
            lambda in -2.0f64..2.0,
        ) {
            let p = BoxCoxParams::new(lambda, 0.0);
            prop_assert!(p.forward(a + gap).unwrap() > p.forward(a).unwrap());
        }

        #[test]
        fn standard_round_trip(x in -1e6f64..1e6, mean in -100.0f64..100.0, std in 0.01f64..100.0) {
            let s = StandardScalerParams { mean, std };
            let back = s.inverse(s.forward(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn gaussian_backprojection_tracks_monte_carlo_for_small_sigma() {
        // Kolmogorov-Smirnov distance between N(mean, std^2) and the
        // empirical distribution of inverse-mapped Gaussian samples: small
        // for small sigma, documented breakdown for large sigma.
        let p = BoxCoxParams::new(0.1, 0.0);
        let mu = p.forward(5.0).unwrap();
        let small = ks_distance_vs_backprojection(&p, mu, 0.1, 100_000, 77);
        let large = ks_distance_vs_backprojection(&p, mu, 1.0, 100_000, 78);
        assert!(small < 0.05, "small-sigma KS = {small}");
        assert!(large >= 0.05, "large-sigma KS = {large}");
    }

    fn ks_distance_vs_backprojection(
        p: &BoxCoxParams,
        mu: f64,
        sigma: f64,
        n: usize,
        seed: u64,
    ) -> f64 {
        let g = p.backproject_gaussian(mu, sigma).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let edge = -1.0 / p.lambda;
        let mut inverted: Vec<f64> = (0..n)
            .map(|_| {
                let y: f64 = mu + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
                let y = if p.lambda != 0.0 && y <= edge { edge + 1e-12 } else { y };
                p.inverse(y).unwrap()
            })
            .collect();
        inverted.sort_by(|a, b| a.total_cmp(b));
        let normal_cdf = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf((x - g.mean) / (g.std * 2f64.sqrt())));
        let n_f = n as f64;
        inverted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = normal_cdf(x);
                let lo = i as f64 / n_f;
                let hi = (i + 1) as f64 / n_f;
                (cdf - lo).abs().max((hi - cdf).abs())
            })
            .fold(0.0, f64::max)
    }
}
