//! Catalog of one-dimensional population maps.
//!
//! Every unimodal catalog map lives on `[0, L]`, vanishes at both endpoints and
//! reaches `L` at its critical point. The constants that make this hold are
//! computed from closed forms at construction time and then checked.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|S(x~) - L|` accepted by the calibration check.
pub const CALIBRATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Tent,
    Logistic,
    Cubic,
    BevertonHolt,
    Ricker,
    Custom,
}

impl MapKind {
    pub fn name(self) -> &'static str {
        match self {
            MapKind::Tent => "tent",
            MapKind::Logistic => "logistic",
            MapKind::Cubic => "cubic",
            MapKind::BevertonHolt => "beverton-holt",
            MapKind::Ricker => "ricker",
            MapKind::Custom => "custom",
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tent" => Ok(MapKind::Tent),
            "logistic" => Ok(MapKind::Logistic),
            "cubic" => Ok(MapKind::Cubic),
            "beverton-holt" | "bh" => Ok(MapKind::BevertonHolt),
            "ricker" => Ok(MapKind::Ricker),
            "custom" => Ok(MapKind::Custom),
            other => Err(Error::InvalidParameter(format!(
                "unknown map kind `{other}`"
            ))),
        }
    }
}

/// Calibrated constants of a catalog map. Only the fields used by the kind are set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

/// Open subinterval on which the map is strictly monotone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub start: f64,
    pub end: f64,
    pub direction: Monotonicity,
}

impl Branch {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.start && x <= self.end
    }
}

/// One solution of `S(x) = y` on a monotone branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preimage {
    pub branch: usize,
    pub x: f64,
    /// `1 / |S'(x)|`; infinite at a tangency (critical value).
    pub inverse_slope: f64,
}

impl Preimage {
    pub fn is_tangency(&self) -> bool {
        self.inverse_slope.is_infinite()
    }
}

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied unimodal map with analytic derivatives.
#[derive(Clone)]
pub struct CustomMap {
    pub domain_len: f64,
    pub critical_point: f64,
    pub eval: RealFn,
    pub d1: RealFn,
    pub d2: RealFn,
    pub d3: RealFn,
    /// Whether the map is at least C³ on the closed interval.
    pub smooth: bool,
}

/// Interface shared by catalog maps and derived maps (conjugates) so that the
/// transfer-operator code can discretize either.
pub trait IntervalMap: Send + Sync {
    fn domain_len(&self) -> f64;

    /// Map value, clamped into `[0, L]`. Callers guarantee `x` is in the domain.
    fn apply(&self, x: f64) -> f64;

    fn branches(&self) -> &[Branch];

    /// The solution of `S(x) = y` on `branch`, with `y` clamped into the
    /// branch image first.
    fn branch_preimage(&self, branch: usize, y: f64) -> f64;

    /// `1 / |S'(x)|` evaluated with the one-sided derivative of `branch`.
    fn inverse_slope(&self, branch: usize, x: f64) -> f64;

    fn branch_image(&self, branch: usize) -> (f64, f64) {
        let br = self.branches()[branch];
        let (u, v) = (self.apply(br.start), self.apply(br.end));
        (u.min(v), u.max(v))
    }

    /// All branch solutions of `S(x) = y`. A tangency at the critical value is
    /// reported once, flagged with an infinite inverse slope.
    fn preimages(&self, y: f64) -> Vec<Preimage> {
        let mut out: Vec<Preimage> = Vec::with_capacity(self.branches().len());
        for b in 0..self.branches().len() {
            let (lo, hi) = self.branch_image(b);
            if y < lo || y > hi {
                continue;
            }
            let x = self.branch_preimage(b, y);
            let inverse_slope = self.inverse_slope(b, x);
            if inverse_slope.is_infinite() && out.iter().any(|p| p.x == x && p.is_tangency()) {
                continue;
            }
            out.push(Preimage {
                branch: b,
                x,
                inverse_slope,
            });
        }
        out
    }
}

#[derive(Clone)]
pub struct MapSpec {
    kind: MapKind,
    domain_len: f64,
    params: MapParams,
    critical_point: Option<f64>,
    peak: f64,
    branches: Vec<Branch>,
    custom: Option<CustomMap>,
}

impl fmt::Debug for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapSpec")
            .field("kind", &self.kind)
            .field("domain_len", &self.domain_len)
            .field("params", &self.params)
            .field("critical_point", &self.critical_point)
            .field("branches", &self.branches)
            .finish()
    }
}

/// Raw parameters as they arrive from the command line (`name=value`).
pub type RawParams = BTreeMap<String, f64>;

/// Builds a calibrated catalog map from raw parameters.
pub fn make_catalog_map(kind: MapKind, raw: &RawParams) -> Result<MapSpec> {
    let allowed: &[&str] = match kind {
        MapKind::Tent | MapKind::Logistic | MapKind::Cubic => &[],
        MapKind::BevertonHolt => &["K", "k"],
        MapKind::Ricker => &["lambda"],
        MapKind::Custom => {
            return Err(Error::InvalidParameter(
                "custom maps need evaluator functions; use MapSpec::custom".into(),
            ))
        }
    };
    if let Some(bad) = raw.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::InvalidParameter(format!(
            "parameter `{bad}` is not accepted by the {kind} map"
        )));
    }
    let get = |names: &[&str]| names.iter().find_map(|n| raw.get(*n).copied());
    match kind {
        MapKind::Tent => Ok(MapSpec::tent()),
        MapKind::Logistic => Ok(MapSpec::logistic()),
        MapKind::Cubic => MapSpec::cubic(),
        MapKind::BevertonHolt => {
            let k = get(&["K", "k"])
                .ok_or_else(|| Error::InvalidParameter("beverton-holt requires K".into()))?;
            MapSpec::beverton_holt(k)
        }
        MapKind::Ricker => {
            let lambda = get(&["lambda"])
                .ok_or_else(|| Error::InvalidParameter("ricker requires lambda".into()))?;
            MapSpec::ricker(lambda)
        }
        MapKind::Custom => unreachable!(),
    }
}

fn unimodal_branches(peak: f64, len: f64) -> Vec<Branch> {
    vec![
        Branch {
            start: 0.0,
            end: peak,
            direction: Monotonicity::Increasing,
        },
        Branch {
            start: peak,
            end: len,
            direction: Monotonicity::Decreasing,
        },
    ]
}

impl MapSpec {
    fn unimodal(
        kind: MapKind,
        len: f64,
        params: MapParams,
        critical: Option<f64>,
        peak: f64,
        custom: Option<CustomMap>,
    ) -> Result<Self> {
        let map = MapSpec {
            kind,
            domain_len: len,
            params,
            critical_point: critical,
            peak,
            branches: unimodal_branches(peak, len),
            custom,
        };
        let top = map.raw_eval(peak);
        if !top.is_finite() || (top - len).abs() > CALIBRATION_TOL * len.max(1.0) {
            return Err(Error::CalibrationViolation {
                expected: len,
                got: top,
            });
        }
        Ok(map)
    }

    pub fn tent() -> Self {
        MapSpec {
            kind: MapKind::Tent,
            domain_len: 1.0,
            params: MapParams::default(),
            critical_point: None,
            peak: 0.5,
            branches: unimodal_branches(0.5, 1.0),
            custom: None,
        }
    }

    pub fn logistic() -> Self {
        MapSpec::unimodal(
            MapKind::Logistic,
            1.0,
            MapParams {
                c: Some(4.0),
                ..Default::default()
            },
            Some(0.5),
            0.5,
            None,
        )
        .expect("logistic map is calibrated")
    }

    /// `S(x) = c x (1 - x²)` on `[0, 1]` with `c = 3√3/2`, peak at `√3/3`.
    pub fn cubic() -> Result<Self> {
        let c = 1.5 * 3f64.sqrt();
        let peak = 3f64.sqrt() / 3.0;
        MapSpec::unimodal(
            MapKind::Cubic,
            1.0,
            MapParams {
                c: Some(c),
                ..Default::default()
            },
            Some(peak),
            peak,
            None,
        )
    }

    /// `S(x) = -a x + b x / (1 + x)` on `[0, K]`.
    pub fn beverton_holt(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beverton-holt needs K > 0, got {k}"
            )));
        }
        let root = (k + 1.0).sqrt();
        let denom = (root - 1.0).powi(2);
        let a = k / denom;
        let b = k * (k + 1.0) / denom;
        let peak = root - 1.0;
        MapSpec::unimodal(
            MapKind::BevertonHolt,
            k,
            MapParams {
                a: Some(a),
                b: Some(b),
                k: Some(k),
                ..Default::default()
            },
            Some(peak),
            peak,
            None,
        )
    }

    /// `S(x) = -a x + a x e^{λ(K - x)}` on `[0, K]`, normalized so the peak is at 1.
    pub fn ricker(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ricker needs 0 < lambda < 1, got {lambda}"
            )));
        }
        let k = 1.0 - (-lambda).ln_1p() / lambda;
        let a = (1.0 - lambda) * k / lambda;
        MapSpec::unimodal(
            MapKind::Ricker,
            k,
            MapParams {
                a: Some(a),
                lambda: Some(lambda),
                k: Some(k),
                ..Default::default()
            },
            Some(1.0),
            1.0,
            None,
        )
    }

    pub fn custom(custom: CustomMap) -> Result<Self> {
        let len = custom.domain_len;
        let peak = custom.critical_point;
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "custom map needs a positive domain length, got {len}"
            )));
        }
        if !(peak > 0.0 && peak < len) {
            return Err(Error::InvalidParameter(format!(
                "custom critical point {peak} must lie inside (0, {len})"
            )));
        }
        MapSpec::unimodal(
            MapKind::Custom,
            len,
            MapParams {
                k: Some(len),
                ..Default::default()
            },
            Some(peak),
            peak,
            Some(custom),
        )
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    /// `x~`; `None` for the tent map, whose peak is a kink.
    pub fn critical_point(&self) -> Option<f64> {
        self.critical_point
    }

    /// Split point between the increasing and decreasing branch.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// True when the map is C³ on the closed interval.
    pub fn is_smooth(&self) -> bool {
        match self.kind {
            MapKind::Tent => false,
            MapKind::Custom => self.custom.as_ref().is_some_and(|c| c.smooth),
            _ => true,
        }
    }

    fn p(v: Option<f64>) -> f64 {
        v.expect("calibrated parameter present")
    }

    fn raw_eval(&self, x: f64) -> f64 {
        match self.kind {
            MapKind::Tent => {
                if x <= 0.5 {
                    2.0 * x
                } else {
                    2.0 - 2.0 * x
                }
            }
            MapKind::Logistic => 4.0 * x * (1.0 - x),
            MapKind::Cubic => Self::p(self.params.c) * x * (1.0 - x) * (1.0 + x),
            MapKind::BevertonHolt => {
                // -a x + b x/(1+x) with b = a(K+1), factored to avoid cancellation near K
                let a = Self::p(self.params.a);
                let k = self.domain_len;
                a * x * (k - x) / (1.0 + x)
            }
            MapKind::Ricker => {
                let a = Self::p(self.params.a);
                let l = Self::p(self.params.lambda);
                a * x * (l * (self.domain_len - x)).exp_m1()
            }
            MapKind::Custom => (self.custom.as_ref().expect("custom evaluators").eval)(x),
        }
    }

    fn raw_derivative(&self, x: f64, order: u8) -> f64 {
        match self.kind {
            MapKind::Tent => match order {
                1 => {
                    if x < 0.5 {
                        2.0
                    } else {
                        -2.0
                    }
                }
                _ => 0.0,
            },
            MapKind::Logistic => match order {
                1 => 4.0 - 8.0 * x,
                2 => -8.0,
                _ => 0.0,
            },
            MapKind::Cubic => {
                let c = Self::p(self.params.c);
                match order {
                    1 => c * (1.0 - 3.0 * x * x),
                    2 => -6.0 * c * x,
                    _ => -6.0 * c,
                }
            }
            MapKind::BevertonHolt => {
                let a = Self::p(self.params.a);
                let b = Self::p(self.params.b);
                let q = 1.0 + x;
                match order {
                    1 => -a + b / (q * q),
                    2 => -2.0 * b / (q * q * q),
                    _ => 6.0 * b / (q * q * q * q),
                }
            }
            MapKind::Ricker => {
                let a = Self::p(self.params.a);
                let l = Self::p(self.params.lambda);
                let e = (l * (self.domain_len - x)).exp();
                match order {
                    1 => a * (e * (1.0 - l * x) - 1.0),
                    2 => l * a * (l * x - 2.0) * e,
                    _ => l * l * a * (3.0 - l * x) * e,
                }
            }
            MapKind::Custom => {
                let c = self.custom.as_ref().expect("custom evaluators");
                match order {
                    1 => (c.d1)(x),
                    2 => (c.d2)(x),
                    _ => (c.d3)(x),
                }
            }
        }
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if x.is_nan() || x < 0.0 || x > self.domain_len {
            return Err(Error::OutOfDomain {
                x,
                len: self.domain_len,
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.apply(x))
    }

    pub fn eval_derivative(&self, x: f64, order: u8) -> Result<f64> {
        self.check_domain(x)?;
        if !(1..=3).contains(&order) {
            return Err(Error::UnsupportedDerivative(order));
        }
        if self.kind == MapKind::Tent && x == 0.5 {
            return Err(Error::DerivativeAtKink { x });
        }
        Ok(self.raw_derivative(x, order))
    }

    /// First derivative without domain checks (tent: right derivative at the kink).
    pub fn slope(&self, x: f64) -> f64 {
        self.raw_derivative(x, 1)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.raw_derivative(x, 2)
    }

    pub fn third_derivative(&self, x: f64) -> f64 {
        self.raw_derivative(x, 3)
    }

    /// `L - S(x)`, computed without cancellation near the peak by integrating
    /// `S'` from the peak with Gauss-Legendre quadrature.
    pub fn peak_gap(&self, x: f64) -> f64 {
        let len = self.domain_len;
        match self.kind {
            MapKind::Cubic => {
                let c = Self::p(self.params.c);
                let r = self.peak;
                c * (x - r) * (x - r) * (x + 2.0 * r)
            }
            MapKind::BevertonHolt => {
                let a = Self::p(self.params.a);
                let d = x - self.peak;
                a * d * d / (1.0 + x)
            }
            MapKind::Logistic => {
                let d = 2.0 * x - 1.0;
                d * d
            }
            _ if (x - self.peak).abs() <= 0.05 * len && self.kind != MapKind::Tent => {
                -crate::quad::gauss_legendre(|t| self.slope(t), self.peak, x)
            }
            _ => len - self.apply(x),
        }
    }

    /// Newton-polished bisection on a monotone branch.
    fn solve_on_branch(&self, br: &Branch, y: f64) -> f64 {
        let increasing = br.direction == Monotonicity::Increasing;
        let (mut lo, mut hi) = (br.start, br.end);
        let f = |x: f64| {
            let v = self.raw_eval(x) - y;
            if increasing {
                v
            } else {
                -v
            }
        };
        if f(lo) >= 0.0 {
            return lo;
        }
        if f(hi) <= 0.0 {
            return hi;
        }
        let tol = 1e-15 * self.domain_len.max(1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= tol {
                break;
            }
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..2 {
            let d = self.raw_derivative(x, 1);
            if d == 0.0 {
                break;
            }
            let next = x - (self.raw_eval(x) - y) / d;
            if next >= lo && next <= hi {
                x = next;
            }
        }
        x
    }

    /// Solutions of `S(x) = y`, one per branch whose image contains `y`.
    pub fn branch_inverses(&self, y: f64) -> Vec<Preimage> {
        self.preimages(y)
    }

    /// Checks the shape conditions on a uniform grid of `samples` interior points.
    pub fn unimodality(&self, samples: usize) -> Unimodality {
        let len = self.domain_len;
        let peak = self.peak;
        let mut rising = true;
        let mut falling = true;
        for i in 0..=samples {
            let x = len * i as f64 / samples as f64;
            if x == peak {
                continue;
            }
            let d = self.slope(x);
            if x < peak && d <= 0.0 {
                rising = false;
            }
            if x > peak && d >= 0.0 {
                falling = false;
            }
        }
        let curvature = if self.is_smooth() {
            self.second_derivative(peak)
        } else {
            f64::NAN
        };
        Unimodality {
            increasing_before_peak: rising,
            decreasing_after_peak: falling,
            curvature_at_peak: curvature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Unimodality {
    pub increasing_before_peak: bool,
    pub decreasing_after_peak: bool,
    pub curvature_at_peak: f64,
}

impl Unimodality {
    pub fn holds(&self) -> bool {
        self.increasing_before_peak && self.decreasing_after_peak
    }
}

impl IntervalMap for MapSpec {
    fn domain_len(&self) -> f64 {
        self.domain_len
    }

    fn apply(&self, x: f64) -> f64 {
        self.raw_eval(x).clamp(0.0, self.domain_len)
    }

    fn branches(&self) -> &[Branch] {
        &self.branches
    }

    fn branch_image(&self, _branch: usize) -> (f64, f64) {
        (0.0, self.domain_len)
    }

    fn branch_preimage(&self, branch: usize, y: f64) -> f64 {
        let y = y.clamp(0.0, self.domain_len);
        match self.kind {
            MapKind::Tent => {
                if branch == 0 {
                    0.5 * y
                } else {
                    1.0 - 0.5 * y
                }
            }
            MapKind::Logistic => {
                let r = (1.0 - y).sqrt();
                if branch == 0 {
                    0.5 * y / (1.0 + r)
                } else {
                    0.5 * (1.0 + r)
                }
            }
            _ => self.solve_on_branch(&self.branches[branch], y),
        }
    }

    fn inverse_slope(&self, branch: usize, x: f64) -> f64 {
        if self.kind == MapKind::Tent {
            return 0.5;
        }
        let _ = branch;
        let d = self.slope(x).abs();
        if d == 0.0 {
            f64::INFINITY
        } else {
            1.0 / d
        }
    }
}
