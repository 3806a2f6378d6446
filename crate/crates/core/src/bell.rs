//! CHSH evaluation for singlet correlations and estimation from E91 samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::planar_direction;

#[derive(Debug, Error, PartialEq)]
pub enum BellError {
    #[error("setting pair {pair} has {count} samples, need at least {min}")]
    InsufficientSamples { pair: &'static str, count: u64, min: u64 },
    #[error("setting vector {0} is not unit length")]
    NotUnit(&'static str),
}

/// Names of the four correlation terms, in the order they enter the sum.
pub const PAIR_NAMES: [&str; 4] = ["(n1,n2)", "(n1',n2)", "(n1,n2')", "(n1',n2')"];

/// Measurement directions on the great circle, as angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub n1: f64,
    pub n1p: f64,
    pub n2: f64,
    pub n2p: f64,
}

impl ChshSettings {
    /// Alice 90°/0°, Bob 45°/135°: three pairs at 45°, the primed pair at 135°.
    pub fn maximal_violation() -> Self {
        Self {
            n1: 90.0,
            n1p: 0.0,
            n2: 45.0,
            n2p: 135.0,
        }
    }

    /// `(alice angle, bob angle)` for each term.
    pub fn pairs(&self) -> [(f64, f64); 4] {
        [(self.n1, self.n2), (self.n1p, self.n2), (self.n1, self.n2p), (self.n1p, self.n2p)]
    }
}

/// Singlet correlation `C(n, m) = −n·m`.
pub fn singlet_correlation(n: &[f64; 3], m: &[f64; 3]) -> f64 {
    -(n[0] * m[0] + n[1] * m[1] + n[2] * m[2])
}

fn chsh_combination(c: [f64; 4]) -> f64 {
    (c[0] + c[1] + c[2] - c[3]).abs()
}

/// `|C(n1,n2) + C(n1',n2) + C(n1,n2') − C(n1',n2')|` for arbitrary unit vectors.
pub fn chsh_analytic_vectors(n1: &[f64; 3], n1p: &[f64; 3], n2: &[f64; 3], n2p: &[f64; 3]) -> Result<f64, BellError> {
    for (v, name) in [(n1, "n1"), (n1p, "n1'"), (n2, "n2"), (n2p, "n2'")] {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(BellError::NotUnit(name));
        }
    }
    Ok(chsh_combination([
        singlet_correlation(n1, n2),
        singlet_correlation(n1p, n2),
        singlet_correlation(n1, n2p),
        singlet_correlation(n1p, n2p),
    ]))
}

pub fn chsh_analytic(s: &ChshSettings) -> f64 {
    chsh_analytic_vectors(
        &planar_direction(s.n1),
        &planar_direction(s.n1p),
        &planar_direction(s.n2),
        &planar_direction(s.n2p),
    )
    .expect("planar directions are unit vectors")
}

/// Outcome counts per setting pair, indexed `[pair][outcome]` with outcome
/// order `(+,+), (+,−), (−,+), (−,−)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshSamples {
    pub settings: ChshSettings,
    pub counts: [[u64; 4]; 4],
}

impl ChshSamples {
    pub fn new(settings: ChshSettings) -> Self {
        Self {
            settings,
            counts: [[0; 4]; 4],
        }
    }

    pub fn record(&mut self, pair: usize, a: i8, b: i8) {
        let idx = match (a > 0, b > 0) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        self.counts[pair][idx] += 1;
    }

    pub fn merge(&mut self, other: &ChshSamples) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self, pair: usize) -> u64 {
        self.counts[pair].iter().sum()
    }

    /// Empirical `⟨a b⟩` for one setting pair.
    pub fn correlation(&self, pair: usize) -> Option<f64> {
        let n = self.total(pair);
        if n == 0 {
            return None;
        }
        let c = &self.counts[pair];
        Some((c[0] + c[3]) as f64 / n as f64 - (c[1] + c[2]) as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshEstimate {
    pub s_hat: f64,
    pub stderr: f64,
    pub correlations: [f64; 4],
}

/// Plug-in CHSH estimate. Each correlation is a mean of ±1 products, so its
/// variance is `(1 − C²)/N`; the four terms are independent.
pub fn chsh_estimate(samples: &ChshSamples, min_count: u64) -> Result<ChshEstimate, BellError> {
    let mut corr = [0.0; 4];
    let mut var = 0.0;
    for (k, name) in PAIR_NAMES.iter().enumerate() {
        let n = samples.total(k);
        if n < min_count.max(1) {
            return Err(BellError::InsufficientSamples {
                pair: name,
                count: n,
                min: min_count.max(1),
            });
        }
        let c = samples.correlation(k).unwrap_or(0.0);
        corr[k] = c;
        var += (1.0 - c * c).max(0.0) / n as f64;
    }
    Ok(ChshEstimate {
        s_hat: chsh_combination(corr),
        stderr: var.sqrt(),
        correlations: corr,
    })
}
