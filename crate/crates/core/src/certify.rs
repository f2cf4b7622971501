//! Exactness certificates for smooth unimodal maps.
//!
//! A map is certified when the product `h₁h₂` of
//!
//! ```text
//! h₁(x) = √(x (K − x) / S(x)),    h₂(x) = |S'(x)| / √(K − S(x))
//! ```
//!
//! is bounded below by a number larger than one. The bound comes from a grid
//! minimum minus a Lipschitz margin, so it is an empirical bound rather than a
//! proof; the report always carries the margin. The three removable
//! singularities (`0`, `K` and the critical point) are evaluated through their
//! limits.

use rayon::prelude::*;
use serde::Serialize;

use crate::conjugacy::ConjugatedMap;
use crate::error::{Error, Result};
use crate::maps::{IntervalMap, MapKind, MapParams, MapSpec};

pub const MIN_GRID: usize = 1000;
const SHAPE_SAMPLES: usize = 10_000;
const CAUCHY_SAMPLES: usize = 10_000;
const EXPANSION_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Certified,
    Inconclusive,
    PreconditionFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DirectGrid,
    CauchyFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preconditions {
    pub smooth: bool,
    pub unimodal: bool,
    pub negative_curvature_at_peak: bool,
    pub endpoint_slopes_nonzero: bool,
}

impl Preconditions {
    pub fn all(&self) -> bool {
        self.smooth
            && self.unimodal
            && self.negative_curvature_at_peak
            && self.endpoint_slopes_nonzero
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HProduct {
    pub raw_infimum: f64,
    pub argmin: f64,
    pub safety_margin: f64,
    /// Doubled largest difference quotient of `h₁h₂` on the grid.
    pub lipschitz: f64,
    pub min_h1: f64,
    pub min_h2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CauchyBound {
    /// `√(2 min|S''|)`, or 0 when degenerate.
    pub bound: f64,
    pub min_abs_curvature: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RickerCriterion {
    pub certified: bool,
    pub c0: f64,
    /// `λ − ln(1 − λ)`, compared against `c0`.
    pub lhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConjugateChecks {
    /// Both branches of the conjugated map cover `[0, π]`.
    pub branch_images_full: bool,
    /// Smallest finite-difference slope magnitude of the conjugated map.
    pub min_expansion: f64,
    pub expanding: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub map: MapKind,
    pub params: MapParams,
    pub status: Status,
    pub method: Option<Method>,
    pub inf_bound: Option<f64>,
    pub raw_infimum: Option<f64>,
    pub argmin: Option<f64>,
    pub safety_margin: Option<f64>,
    pub grid_size: usize,
    pub preconditions: Preconditions,
    pub cauchy: Option<CauchyBound>,
    pub ricker_criterion: Option<RickerCriterion>,
    pub conjugate: Option<ConjugateChecks>,
    pub notes: Vec<String>,
}

pub fn preconditions(map: &MapSpec) -> Preconditions {
    let smooth = map.is_smooth();
    if !smooth {
        return Preconditions {
            smooth,
            unimodal: map.unimodality(SHAPE_SAMPLES).holds(),
            negative_curvature_at_peak: false,
            endpoint_slopes_nonzero: false,
        };
    }
    let k = map.domain_len();
    Preconditions {
        smooth,
        unimodal: map.unimodality(SHAPE_SAMPLES).holds(),
        negative_curvature_at_peak: map.second_derivative(map.peak()) < 0.0,
        endpoint_slopes_nonzero: map.slope(0.0) > 0.0 && map.slope(k) < 0.0,
    }
}

fn check_pointwise(map: &MapSpec, x: f64) -> Result<()> {
    let k = map.domain_len();
    if x.is_nan() || !(0.0..=k).contains(&x) {
        return Err(Error::OutOfDomain { x, len: k });
    }
    if !map.is_smooth() {
        return Err(Error::PreconditionFailed(format!(
            "the {} map is not three times differentiable",
            map.kind()
        )));
    }
    if map.slope(0.0) <= 0.0 {
        return Err(Error::PreconditionFailed("S'(0) must be positive".into()));
    }
    if map.slope(k) >= 0.0 {
        return Err(Error::PreconditionFailed("S'(K) must be negative".into()));
    }
    if map.second_derivative(map.peak()) >= 0.0 {
        return Err(Error::PreconditionFailed(
            "S'' must be negative at the critical point".into(),
        ));
    }
    Ok(())
}

pub(crate) fn h1_unchecked(map: &MapSpec, x: f64) -> f64 {
    let k = map.domain_len();
    let s1 = if x <= 0.0 {
        map.slope(0.0) / k
    } else if x >= k {
        -map.slope(k) / k
    } else {
        map.apply(x) / (x * (k - x))
    };
    1.0 / s1.sqrt()
}

pub(crate) fn h2_unchecked(map: &MapSpec, x: f64) -> f64 {
    let peak = map.peak();
    let d = x - peak;
    if d.abs() <= 1e-6 * map.domain_len() {
        // second-order expansion about the quadratic maximum
        let s2 = map.second_derivative(peak);
        let s3 = map.third_derivative(peak);
        return (2.0 * s2.abs()).sqrt() * (1.0 + s3 * d / (3.0 * s2));
    }
    map.slope(x).abs() / map.peak_gap(x).sqrt()
}

pub fn eval_h1(map: &MapSpec, x: f64) -> Result<f64> {
    check_pointwise(map, x)?;
    Ok(h1_unchecked(map, x))
}

pub fn eval_h2(map: &MapSpec, x: f64) -> Result<f64> {
    check_pointwise(map, x)?;
    Ok(h2_unchecked(map, x))
}

/// Grid infimum of `h₁h₂` over `grid_size + 1` uniform points plus the
/// critical point, with a margin `Λ K / grid_size` where `Λ` is twice the
/// largest adjacent difference quotient.
pub fn inf_h_product(map: &MapSpec, grid_size: usize) -> Result<HProduct> {
    if grid_size < MIN_GRID {
        return Err(Error::InvalidGrid(format!(
            "certification grid needs at least {MIN_GRID} intervals, got {grid_size}"
        )));
    }
    check_pointwise(map, 0.0)?;
    let k = map.domain_len();
    let peak = map.peak();
    let mut xs: Vec<f64> = (0..=grid_size)
        .map(|i| {
            if i == grid_size {
                k
            } else {
                k * i as f64 / grid_size as f64
            }
        })
        .collect();
    let at = xs.partition_point(|&x| x < peak);
    if xs.get(at) != Some(&peak) {
        xs.insert(at, peak);
    }
    let hs: Vec<(f64, f64)> = xs
        .par_iter()
        .map(|&x| (h1_unchecked(map, x), h2_unchecked(map, x)))
        .collect();
    let products: Vec<f64> = hs.iter().map(|(a, b)| a * b).collect();

    let (mut raw_infimum, mut argmin) = (f64::INFINITY, 0.0);
    for (x, p) in xs.iter().zip(&products) {
        if *p < raw_infimum {
            raw_infimum = *p;
            argmin = *x;
        }
    }
    let mut quotient: f64 = 0.0;
    for i in 0..xs.len() - 1 {
        let dx = xs[i + 1] - xs[i];
        if dx > 0.0 {
            quotient = quotient.max((products[i + 1] - products[i]).abs() / dx);
        }
    }
    let lipschitz = 2.0 * quotient;
    Ok(HProduct {
        raw_infimum,
        argmin,
        safety_margin: lipschitz * k / grid_size as f64,
        lipschitz,
        min_h1: hs.iter().map(|h| h.0).fold(f64::INFINITY, f64::min),
        min_h2: hs.iter().map(|h| h.1).fold(f64::INFINITY, f64::min),
    })
}

/// Lower bound `h₂ ≥ √(2 min|S''|)` from the Cauchy mean value theorem.
pub fn cauchy_h2_bound(map: &MapSpec) -> Result<CauchyBound> {
    check_pointwise(map, 0.0)?;
    let k = map.domain_len();
    if map.kind() == MapKind::Ricker {
        let lambda = map.params().lambda.unwrap_or(0.0);
        if lambda * k >= 2.0 {
            return Err(Error::PreconditionFailed(format!(
                "the curvature bound needs lambda*K < 2, got {}",
                lambda * k
            )));
        }
    }
    let min_abs = (0..=CAUCHY_SAMPLES)
        .map(|i| {
            map.second_derivative(k * i as f64 / CAUCHY_SAMPLES as f64)
                .abs()
        })
        .fold(f64::INFINITY, f64::min);
    let scale = map.second_derivative(map.peak()).abs();
    if min_abs <= 1e-12 * scale.max(1.0) {
        return Ok(CauchyBound {
            bound: 0.0,
            min_abs_curvature: min_abs,
            degenerate: true,
        });
    }
    Ok(CauchyBound {
        bound: (2.0 * min_abs).sqrt(),
        min_abs_curvature: min_abs,
        degenerate: false,
    })
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol {
            break;
        }
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Positive root of `2c(2 − c) = e^c − 1`.
pub fn ricker_c0() -> f64 {
    bisect(|c| 2.0 * c * (2.0 - c) - c.exp_m1(), 0.5, 2.0, 1e-12)
}

/// The `λ` in `(0, 1)` at which `λ − ln(1 − λ)` reaches `c0`.
pub fn ricker_lambda_threshold(c0: f64) -> f64 {
    bisect(|l| l - (-l).ln_1p() - c0, 1e-12, 1.0 - 1e-12, 1e-12)
}

/// Closed-form sufficient condition for Ricker maps: `λ − ln(1 − λ) < c0`.
pub fn ricker_closed_form_criterion(lambda: f64) -> Result<RickerCriterion> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "ricker needs 0 < lambda < 1, got {lambda}"
        )));
    }
    let c0 = ricker_c0();
    let lhs = lambda - (-lambda).ln_1p();
    Ok(RickerCriterion {
        certified: lhs < c0,
        c0,
        lhs,
    })
}

/// Probes the conjugated map on `[0, π]`: both branches must reach `π` and
/// the slope magnitude must exceed one.
pub fn conjugate_checks(map: &MapSpec) -> ConjugateChecks {
    let conj = ConjugatedMap::new(map.clone());
    let len = conj.domain_len();
    let kink = conj.kink();
    let tol = 1e-9;
    let branch_images_full =
        conj.apply(0.0) <= tol && conj.apply(len) <= tol && (conj.apply(kink) - len).abs() <= tol;
    let h = 1e-6 * len;
    let min_expansion = (1..EXPANSION_SAMPLES)
        .into_par_iter()
        .filter_map(|i| {
            let u = len * i as f64 / EXPANSION_SAMPLES as f64;
            if (u - kink).abs() <= 4.0 * h {
                return None;
            }
            Some(((conj.apply(u + h) - conj.apply(u - h)) / (2.0 * h)).abs())
        })
        .reduce(|| f64::INFINITY, f64::min);
    ConjugateChecks {
        branch_images_full,
        min_expansion,
        expanding: min_expansion > 1.0,
    }
}

pub fn certify_exactness(map: &MapSpec, grid_size: usize) -> Result<CertificateReport> {
    let pre = preconditions(map);
    let mut report = CertificateReport {
        map: map.kind(),
        params: map.params().clone(),
        status: Status::PreconditionFailed,
        method: None,
        inf_bound: None,
        raw_infimum: None,
        argmin: None,
        safety_margin: None,
        grid_size,
        preconditions: pre,
        cauchy: None,
        ricker_criterion: None,
        conjugate: None,
        notes: Vec::new(),
    };
    if !pre.all() {
        if !pre.smooth {
            report.notes.push(format!(
                "the {} map is not three times differentiable",
                map.kind()
            ));
        }
        if !pre.unimodal {
            report
                .notes
                .push("map is not unimodal on the sampled grid".into());
        }
        if pre.smooth && !pre.negative_curvature_at_peak {
            report
                .notes
                .push("S'' is not negative at the critical point".into());
        }
        if pre.smooth && !pre.endpoint_slopes_nonzero {
            report
                .notes
                .push("endpoint slopes must satisfy S'(0) > 0 > S'(K)".into());
        }
        return Ok(report);
    }

    let hp = inf_h_product(map, grid_size)?;
    let direct = hp.raw_infimum - hp.safety_margin;
    report.raw_infimum = Some(hp.raw_infimum);
    report.argmin = Some(hp.argmin);
    report.safety_margin = Some(hp.safety_margin);

    match cauchy_h2_bound(map) {
        Ok(c) => report.cauchy = Some(c),
        Err(e) => report
            .notes
            .push(format!("curvature bound unavailable: {e}")),
    }
    if map.kind() == MapKind::Ricker {
        let crit = ricker_closed_form_criterion(map.params().lambda.unwrap_or(f64::NAN))?;
        report.notes.push(if crit.certified {
            format!(
                "closed-form Ricker criterion holds: {:.6} < c0 = {:.6}",
                crit.lhs, crit.c0
            )
        } else {
            format!(
                "closed-form Ricker criterion not applicable: {:.6} >= c0 = {:.6}",
                crit.lhs, crit.c0
            )
        });
        report.ricker_criterion = Some(crit);
    }
    let conj = conjugate_checks(map);
    report.conjugate = Some(conj);

    // h₁ is bounded below by its own grid minimum less the same kind of margin
    let fallback = report
        .cauchy
        .filter(|c| !c.degenerate)
        .map(|c| (hp.min_h1 - hp.safety_margin).max(0.0) * c.bound);

    let (bound, method) = match fallback {
        Some(fb) if fb > direct && fb > 1.0 => (fb, Method::CauchyFallback),
        _ => (direct, Method::DirectGrid),
    };
    report.inf_bound = Some(bound);
    report.method = Some(method);
    if bound > 1.0 {
        report.status = Status::Certified;
        report
            .notes
            .push("inf h1*h2 bound exceeds 1: consistent with exactness".into());
        if !(conj.branch_images_full && conj.expanding) {
            report
                .notes
                .push("warning: conjugated-map probe disagrees with the bound".into());
        }
    } else {
        report.status = Status::Inconclusive;
        report
            .notes
            .push("inf h1*h2 bound does not exceed 1: the sufficient condition is silent".into());
    }
    Ok(report)
}
