//! Interval estimates and tests used by the Monte Carlo checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use arw_core::{Error, Result};

/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.5758293035489004;

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// A binomial proportion with its 99% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (lo, hi) = wilson(successes, trials, Z99);
        Proportion {
            successes,
            trials,
            estimate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            lo,
            hi,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }

    /// Binomial standard error at the point estimate.
    pub fn se(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        (self.estimate * (1.0 - self.estimate) / self.trials as f64).sqrt()
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

pub fn mean_se(samples: &[f64]) -> MeanSe {
    let n = samples.len();
    if n == 0 {
        return MeanSe { mean: 0.0, se: 0.0, n: 0 };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanSe { mean, se, n: n as u64 }
}

/// Half-width of the DKW uniform band for an empirical distribution
/// function of `n` samples at level `delta`.
pub fn dkw_epsilon(delta: f64, n: u64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceVerdict {
    /// `max_x (F_A(x) - F_B(x))`, never below 0.
    pub one_sided_stat: f64,
    pub threshold: f64,
    /// A is consistent with stochastically dominating B.
    pub pass: bool,
    pub n_a: u64,
    pub n_b: u64,
    pub delta: f64,
}

/// One-sided test of the claim "A stochastically dominates B", i.e.
/// `F_A <= F_B` everywhere, with DKW bands on both samples.
pub fn dominance_test(a: &[u64], b: &[u64], delta: f64) -> Result<DominanceVerdict> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut stat = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    // sweep the merged support; the ECDFs are right-continuous steps
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        stat = stat.max(i as f64 / na - j as f64 / nb);
    }
    let threshold = dkw_epsilon(delta, a.len() as u64) + dkw_epsilon(delta, b.len() as u64);
    Ok(DominanceVerdict {
        one_sided_stat: stat,
        threshold,
        pass: stat <= threshold,
        n_a: a.len() as u64,
        n_b: b.len() as u64,
        delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: u64,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `observed` counts against cell
/// probabilities `probs` (cells with zero probability must be empty).
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquareResult> {
    if observed.len() != probs.len() || observed.len() < 2 {
        return Err(Error::InvalidParams("chi-square needs matching cells, at least two".into()));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut stat = 0.0;
    let mut cells = 0u64;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * n as f64;
        if e == 0.0 {
            if o > 0 {
                return Ok(ChiSquareResult {
                    statistic: f64::INFINITY,
                    df: 1,
                    p_value: 0.0,
                });
            }
            continue;
        }
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    let df = cells.saturating_sub(1).max(1);
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::InvalidParams(e.to_string()))?;
    Ok(ChiSquareResult {
        statistic: stat,
        df,
        p_value: 1.0 - dist.cdf(stat),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoProportionTest {
    pub p1: f64,
    pub p2: f64,
    pub z: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Pooled two-sample z-test for equality of two proportions.
pub fn two_proportion_test(x1: u64, n1: u64, x2: u64, n2: u64) -> Result<TwoProportionTest> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptySample);
    }
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = if se == 0.0 { 0.0 } else { (p1 - p2) / se };
    let normal = Normal::standard();
    Ok(TwoProportionTest {
        p1,
        p2,
        z,
        p_value: 2.0 * (1.0 - normal.cdf(z.abs())),
    })
}
