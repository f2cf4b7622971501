//! The cosine change of variables between `[0, π]` and `[0, K]`.
//!
//! `forward(u) = (K/2)(1 − cos u)` carries a uniform density on `[0, π]` to the
//! arcsine density on `[0, K]`. A unimodal map conjugated by it becomes a map
//! on `[0, π]` whose slope magnitude at `inverse(x)` equals `h₁(x)h₂(x)`.

use std::f64::consts::PI;

use crate::certify::{h1_unchecked, h2_unchecked};
use crate::error::{Error, Result};
use crate::maps::{Branch, IntervalMap, MapSpec, Monotonicity};
use crate::transfer::GridDensity;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugacyPair {
    k: f64,
}

impl ConjugacyPair {
    pub fn new(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "conjugacy needs K > 0, got {k}"
            )));
        }
        Ok(ConjugacyPair { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `(K/2)(1 − cos u)`, written as `K sin²(u/2)` to keep precision near 0.
    pub fn forward(&self, u: f64) -> f64 {
        let s = (0.5 * u).sin();
        self.k * s * s
    }

    /// Inverse of `forward` on `[0, K]`, arguments clamped into the interval.
    /// Uses `2 asin √(x/K)` below `K/2` and its reflection above, which avoids
    /// the loss of digits of `acos(1 − 2x/K)` at both ends.
    pub fn inverse(&self, x: f64) -> f64 {
        let r = (x / self.k).clamp(0.0, 1.0);
        if r <= 0.5 {
            2.0 * r.sqrt().asin()
        } else {
            PI - 2.0 * (1.0 - r).sqrt().asin()
        }
    }

    /// `inverse` with the distance `K − x` supplied directly.
    pub fn inverse_from_top(&self, gap: f64) -> f64 {
        let r = (gap / self.k).clamp(0.0, 1.0);
        if r <= 0.5 {
            PI - 2.0 * r.sqrt().asin()
        } else {
            2.0 * (1.0 - r).sqrt().asin()
        }
    }

    /// Derivative of `inverse`: `1 / √(x (K − x))`.
    pub fn inverse_derivative(&self, x: f64) -> f64 {
        1.0 / (x * (self.k - x)).sqrt()
    }

    /// The unit-interval parameterization `s ↦ forward(π s)`.
    pub fn unit_forward(&self, s: f64) -> f64 {
        self.forward(PI * s)
    }

    pub fn unit_inverse(&self, x: f64) -> f64 {
        self.inverse(x) / PI
    }
}

/// `inverse ∘ S ∘ forward`, on `[0, π]` or, rescaled, on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ConjugatedMap {
    map: MapSpec,
    pair: ConjugacyPair,
    len: f64,
    kink: f64,
    branches: Vec<Branch>,
}

impl ConjugatedMap {
    /// Conjugate acting on `[0, π]`.
    pub fn new(map: MapSpec) -> Self {
        Self::with_length(map, PI)
    }

    /// Conjugate acting on `[0, 1]` (for the logistic map this is the tent map).
    pub fn on_unit_interval(map: MapSpec) -> Self {
        Self::with_length(map, 1.0)
    }

    fn with_length(map: MapSpec, len: f64) -> Self {
        let pair = ConjugacyPair::new(map.domain_len()).expect("calibrated maps have K > 0");
        let kink = pair.inverse(map.peak()) * len / PI;
        let branches = vec![
            Branch {
                start: 0.0,
                end: kink,
                direction: Monotonicity::Increasing,
            },
            Branch {
                start: kink,
                end: len,
                direction: Monotonicity::Decreasing,
            },
        ];
        ConjugatedMap {
            map,
            pair,
            len,
            kink,
            branches,
        }
    }

    pub fn pair(&self) -> &ConjugacyPair {
        &self.pair
    }

    pub fn original(&self) -> &MapSpec {
        &self.map
    }

    /// Image of the critical point: the peak of the conjugated map.
    pub fn kink(&self) -> f64 {
        self.kink
    }

    fn to_angle(&self, u: f64) -> f64 {
        u * PI / self.len
    }

    fn angle_to_domain(&self, a: f64) -> f64 {
        a * self.len / PI
    }
}

impl IntervalMap for ConjugatedMap {
    fn domain_len(&self) -> f64 {
        self.len
    }

    fn apply(&self, u: f64) -> f64 {
        let x = self.pair.forward(self.to_angle(u));
        let k = self.pair.k();
        let y = self.map.apply(x);
        let angle = if y > 0.5 * k {
            self.pair.inverse_from_top(self.map.peak_gap(x).max(0.0))
        } else {
            self.pair.inverse(y)
        };
        self.angle_to_domain(angle).clamp(0.0, self.len)
    }

    fn branches(&self) -> &[Branch] {
        &self.branches
    }

    fn branch_image(&self, _branch: usize) -> (f64, f64) {
        (0.0, self.len)
    }

    fn branch_preimage(&self, branch: usize, y: f64) -> f64 {
        let target = self.pair.forward(self.to_angle(y.clamp(0.0, self.len)));
        let x = self.map.branch_preimage(branch, target);
        self.angle_to_domain(self.pair.inverse(x))
    }

    fn inverse_slope(&self, _branch: usize, u: f64) -> f64 {
        let x = self.pair.forward(self.to_angle(u));
        1.0 / (h1_unchecked(&self.map, x) * h2_unchecked(&self.map, x))
    }
}

/// Carries a density on `[0, π]` to `[0, K]`: the mass of each output bin is
/// the input mass of its image under `inverse`, so total mass is preserved.
pub fn pushforward_density(density: &GridDensity, pair: &ConjugacyPair) -> Result<GridDensity> {
    if (density.domain_len() - PI).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "pushforward expects a density on [0, pi], got length {}",
            density.domain_len()
        )));
    }
    let n = density.bins();
    let k = pair.k();
    let cut: Vec<f64> = (0..=n)
        .map(|j| {
            if j == n {
                1.0
            } else {
                density.cdf(pair.inverse(k * j as f64 / n as f64))
            }
        })
        .collect();
    let weights = cut.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    GridDensity::from_weights(k, weights)
}
