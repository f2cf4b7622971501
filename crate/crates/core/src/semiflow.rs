//! Semiflows on functions over `[0, 1]` and the chaos diagnostics built on them.
//!
//! The linear semiflow `Sᵗv(x) = e^{λt} v(e^{−t}x)` and the normalized density
//! flow are evaluated in closed form with monotone cubic interpolation between
//! grid nodes. The size-structured population model is the only one that needs
//! time stepping.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interp::Pchip;
use crate::quad::simpson;
use crate::sampling::{sample_invariant_state, sample_rng, Estimate, Moments};

/// Values on the uniform grid `x_i = i / (n − 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    values: Vec<f64>,
    /// Member of the space of functions vanishing at 0.
    pinned: bool,
}

impl GridFunction {
    pub fn new(values: Vec<f64>, pinned: bool) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid functions need at least 2 nodes, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "grid function has non-finite values".into(),
            ));
        }
        if pinned && values[0] != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "pinned grid function must vanish at 0, got {}",
                values[0]
            )));
        }
        Ok(GridFunction { values, pinned })
    }

    pub fn from_fn(n: usize, pinned: bool, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes, got {n}"
            )));
        }
        let values = (0..n).map(|i| f(node(i, n))).collect();
        Self::new(values, pinned)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.len() - 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.len();
        (0..n).map(move |i| node(i, n))
    }

    pub fn integral(&self) -> f64 {
        simpson(&self.values, self.spacing())
    }

    /// `v / ∫v`.
    pub fn normalized(&self) -> Result<Self> {
        let total = self.integral();
        if !(total.is_finite() && total != 0.0) {
            return Err(Error::InvalidParameter(
                "cannot normalize a zero-integral function".into(),
            ));
        }
        Ok(GridFunction {
            values: self.values.iter().map(|v| v / total).collect(),
            pinned: self.pinned,
        })
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.len(), other.len(), "grid functions on different grids");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn interpolant(&self) -> Pchip {
        Pchip::new(&self.values)
    }
}

fn node(i: usize, n: usize) -> f64 {
    if i + 1 == n {
        1.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Invariant-state draw `ζ` on `n` uniform nodes.
pub fn sample_state(
    lambda: f64,
    n: usize,
    seed: u64,
    index: u64,
    nonneg: bool,
) -> Result<GridFunction> {
    let xs: Vec<f64> = (0..n).map(|i| node(i, n)).collect();
    GridFunction::new(
        sample_invariant_state(lambda, &xs, seed, index, nonneg)?,
        true,
    )
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// `Sᵗv(x) = e^{λt} v(e^{−t}x)` on the grid of `v`.
pub fn linear_semiflow(lambda: f64, v: &GridFunction, t: f64) -> Result<GridFunction> {
    check_lambda(lambda)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time must be nonnegative, got {t}"
        )));
    }
    if !v.pinned {
        return Err(Error::InvalidParameter(
            "the linear semiflow acts on functions with v(0) = 0".into(),
        ));
    }
    let p = v.interpolant();
    let (growth, shrink) = ((lambda * t).exp(), (-t).exp());
    let values = v.nodes().map(|x| growth * p.eval(shrink * x)).collect();
    Ok(GridFunction {
        values,
        pinned: true,
    })
}

/// `(Qv)(t) = e^{λt} v(e^{−t})` at the given times.
pub fn boundary_trace(lambda: f64, v: &GridFunction, times: &[f64]) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let p = v.interpolant();
    Ok(times
        .iter()
        .map(|t| (lambda * t).exp() * p.eval((-t).exp()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaturityReduction {
    pub lambda: f64,
    pub chaotic: bool,
}

/// Exponent of the linear model equivalent to the maturity model with rate `c`.
pub fn maturity_model_reduction(c: f64) -> MaturityReduction {
    MaturityReduction {
        lambda: c - 1.0,
        chaotic: c > 1.0,
    }
}

/// `p(t, x) = p₀(e^{−t}x) / ∫₀¹ p₀(e^{−t}y) dy`.
pub fn nonlinear_density_flow(p0: &GridFunction, t: f64) -> Result<GridFunction> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time must be nonnegative, got {t}"
        )));
    }
    if p0.values.iter().any(|v| *v < 0.0) {
        return Err(Error::PreconditionFailed(
            "initial density has negative values".into(),
        ));
    }
    let total = p0.integral();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::PreconditionFailed(format!(
            "initial density integrates to {total}, not 1"
        )));
    }
    let near_zero = (p0.len() / 100).max(2);
    if p0.values[..near_zero].iter().all(|v| *v == 0.0) {
        return Err(Error::Extinction { t: 0.0 });
    }
    let p = p0.interpolant();
    let shrink = (-t).exp();
    let raw: Vec<f64> = p0.nodes().map(|x| p.eval(shrink * x)).collect();
    let norm = simpson(&raw, p0.spacing());
    if !(norm > f64::MIN_POSITIVE) {
        return Err(Error::Extinction { t });
    }
    Ok(GridFunction {
        values: raw.iter().map(|v| v / norm).collect(),
        pinned: p0.pinned,
    })
}

/// Rates of the size-structured population model: growth `g`, death `m`,
/// division `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeModel {
    pub g: f64,
    pub m: f64,
    pub d: f64,
}

impl SizeModel {
    pub fn new(g: f64, m: f64, d: f64) -> Result<Self> {
        if !(g > 0.0 && m >= 0.0 && d >= 0.0) || !(g.is_finite() && m.is_finite() && d.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "size model needs g > 0 and m, d >= 0, got g={g}, m={m}, d={d}"
            )));
        }
        Ok(SizeModel { g, m, d })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeOutcome {
    pub u: GridFunction,
    /// Negative values clipped to zero, summed over all steps.
    pub clipped_nodes: usize,
    pub most_negative: f64,
}

const INSTABILITY_LIMIT: f64 = 1e12;

/// Advances `u_t + (g x u)_x = −(m + d) u + 4 d u(t, 2x)` by semi-Lagrangian
/// steps along `x ↦ x e^{−g dt}`. The decay is integrated exactly, the
/// division term explicitly, and `u(t, 2x)` is zero where `2x > 1`.
pub fn size_structured_step(
    model: SizeModel,
    u: &GridFunction,
    dt: f64,
    steps: usize,
) -> Result<SizeOutcome> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if model.g * dt > 1.0 {
        return Err(Error::PreconditionFailed(format!(
            "g*dt = {} exceeds 1",
            model.g * dt
        )));
    }
    if u.values.iter().any(|v| *v < -1e-12) {
        return Err(Error::PreconditionFailed(
            "initial state has negative values".into(),
        ));
    }
    let shift = (-model.g * dt).exp();
    let decay = (-(model.g + model.m + model.d) * dt).exp();
    let source = 4.0 * model.d * dt;
    let n = u.len();
    let mut cur = u.values.clone();
    let mut clipped_nodes = 0;
    let mut most_negative: f64 = 0.0;
    for step in 1..=steps {
        let p = Pchip::new(&cur);
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let foot = node(i, n) * shift;
                let split = 2.0 * foot;
                let division = if split <= 1.0 { p.eval(split) } else { 0.0 };
                decay * (p.eval(foot) + source * division)
            })
            .collect();
        for (i, v) in next.iter().enumerate() {
            if !v.is_finite() || v.abs() > INSTABILITY_LIMIT {
                return Err(Error::Instability {
                    step,
                    value: v.abs(),
                    x: node(i, n),
                });
            }
        }
        cur = next;
        for v in cur.iter_mut() {
            if *v < 0.0 {
                most_negative = most_negative.min(*v);
                clipped_nodes += 1;
                *v = 0.0;
            }
        }
    }
    Ok(SizeOutcome {
        u: GridFunction {
            values: cur,
            pinned: false,
        },
        clipped_nodes,
        most_negative,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeComparison {
    pub x: f64,
    pub pushed_mean: f64,
    pub fresh_mean: f64,
    pub pushed_variance: f64,
    pub fresh_variance: f64,
    pub z_mean: f64,
    pub z_variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub lambda: f64,
    pub push_lambda: f64,
    pub t: f64,
    pub samples: usize,
    pub grid: usize,
    pub probes: Vec<ProbeComparison>,
    pub max_abs_z: f64,
    pub passed: bool,
}

pub const STATIONARITY_PROBES: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

fn z_between(a: Estimate, b: Estimate) -> f64 {
    let se = (a.std_error * a.std_error + b.std_error * b.std_error).sqrt();
    if se == 0.0 {
        0.0
    } else {
        (a.value - b.value) / se
    }
}

/// Compares the ensemble `Sᵗζ` (states drawn with exponent `lambda`, pushed
/// with `push_lambda`) against a fresh ensemble of `ζ` at five probe points.
/// Pushed samples use indices `0..n`, fresh ones `n..2n`.
pub fn stationarity_test(
    lambda: f64,
    push_lambda: f64,
    t: f64,
    samples: usize,
    grid: usize,
    seed: u64,
) -> Result<StationarityReport> {
    check_lambda(lambda)?;
    check_lambda(push_lambda)?;
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    if !(grid - 1).is_multiple_of(5) {
        return Err(Error::InvalidGrid(format!(
            "grid size {grid} must be 1 mod 5 so the probe points are nodes"
        )));
    }
    let probe_idx: Vec<usize> = STATIONARITY_PROBES
        .iter()
        .map(|x| (x * (grid - 1) as f64).round() as usize)
        .collect();
    let n = samples as u64;
    let pushed: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let v = sample_state(lambda, grid, seed, i, false)?;
            let w = linear_semiflow(push_lambda, &v, t)?;
            Ok(probe_idx.iter().map(|&k| w.values[k]).collect())
        })
        .collect::<Result<_>>()?;
    let fresh: Vec<Vec<f64>> = (n..2 * n)
        .into_par_iter()
        .map(|i| {
            let v = sample_state(lambda, grid, seed, i, false)?;
            Ok(probe_idx.iter().map(|&k| v.values[k]).collect())
        })
        .collect::<Result<_>>()?;

    let mut probes = Vec::with_capacity(probe_idx.len());
    for (p, &x) in STATIONARITY_PROBES.iter().enumerate() {
        let a: Vec<f64> = pushed.iter().map(|r| r[p]).collect();
        let b: Vec<f64> = fresh.iter().map(|r| r[p]).collect();
        let (ma, mb) = (Moments::of(&a)?, Moments::of(&b)?);
        probes.push(ProbeComparison {
            x,
            pushed_mean: ma.mean,
            fresh_mean: mb.mean,
            pushed_variance: ma.variance,
            fresh_variance: mb.variance,
            z_mean: z_between(ma.mean_estimate(), mb.mean_estimate()),
            z_variance: z_between(ma.variance_estimate(), mb.variance_estimate()),
        });
    }
    let max_abs_z = probes
        .iter()
        .map(|p| p.z_mean.abs().max(p.z_variance.abs()))
        .fold(0.0, f64::max);
    Ok(StationarityReport {
        lambda,
        push_lambda,
        t,
        samples,
        grid,
        probes,
        max_abs_z,
        passed: max_abs_z <= 3.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergence {
    /// Exponent fraction: the perturbation is `ε x^{αλ}`.
    pub alpha: f64,
    pub time: f64,
    pub divergence: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub epsilon: f64,
    pub eta: f64,
    pub found: Option<Divergence>,
    /// Divergence reached at `t_max` for every tried exponent.
    pub at_horizon: Vec<(f64, f64)>,
}

pub const DEFAULT_ALPHAS: [f64; 3] = [0.25, 0.5, 0.75];

/// Searches perturbations `w = ε x^{αλ}` (in the order given) for the first
/// time the semiflow images of `v` and `v + w` are more than `η` apart in the
/// sup norm. The distance is computed from the semiflow on the grid of `v`.
pub fn sensitive_dependence_probe(
    lambda: f64,
    v: &GridFunction,
    epsilon: f64,
    eta: f64,
    t_max: f64,
    alphas: &[f64],
) -> Result<SensitivityReport> {
    check_lambda(lambda)?;
    if !(epsilon >= 0.0 && eta > 0.0 && t_max > 0.0) {
        return Err(Error::InvalidParameter(
            "sensitivity probe needs epsilon >= 0, eta > 0 and t_max > 0".into(),
        ));
    }
    let n = v.len();
    let mut at_horizon = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let w = GridFunction::from_fn(n, true, |x| epsilon * x.powf(alpha * lambda))?;
        let perturbed = GridFunction::new(
            v.values.iter().zip(&w.values).map(|(a, b)| a + b).collect(),
            true,
        )?;
        let distance = |t: f64| -> Result<f64> {
            Ok(linear_semiflow(lambda, &perturbed, t)?
                .sup_distance(&linear_semiflow(lambda, v, t)?))
        };
        let end = distance(t_max)?;
        at_horizon.push((alpha, end));

        let scan = 1000;
        let mut prev = 0.0;
        for s in 0..=scan {
            let t = t_max * s as f64 / scan as f64;
            if distance(t)? > eta {
                let (mut lo, mut hi) = (prev, t);
                for _ in 0..100 {
                    if hi - lo <= 1e-12 * t_max {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if distance(mid)? > eta {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok(SensitivityReport {
                    epsilon,
                    eta,
                    found: Some(Divergence {
                        alpha,
                        time: hi,
                        divergence: distance(hi)?,
                    }),
                    at_horizon,
                });
            }
            prev = t;
        }
    }
    Ok(SensitivityReport {
        epsilon,
        eta,
        found: None,
        at_horizon,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TurbulenceReport {
    pub lambda: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Time average of the boundary trace.
    pub mean_trace: f64,
    pub lags: Vec<f64>,
    pub gamma: Vec<f64>,
    pub noise_floor: f64,
    pub gamma0_nonzero: bool,
    pub tail_decay: bool,
}

fn check_lags(lags: &[f64], horizon: f64, dt: f64) -> Result<Vec<usize>> {
    if lags.is_empty() || lags[0] != 0.0 || lags.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid("lag grid must increase from 0".into()));
    }
    let max = *lags.last().unwrap();
    if max > horizon / 10.0 {
        return Err(Error::PreconditionFailed(format!(
            "largest lag {max} exceeds a tenth of the horizon {horizon}"
        )));
    }
    lags.iter()
        .map(|l| {
            let k = (l / dt).round();
            if (k * dt - l).abs() > 1e-9 * l.max(1.0) {
                Err(Error::InvalidGrid(format!(
                    "lag {l} is not a multiple of dt = {dt}"
                )))
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

fn autocorrelation_report(
    lambda: f64,
    trace: &[f64],
    dt: f64,
    lags: &[f64],
    shifts: &[usize],
) -> TurbulenceReport {
    let n = trace.len();
    let horizon = (n - 1) as f64 * dt;
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let gamma: Vec<f64> = shifts
        .par_iter()
        .map(|&m| {
            let len = n - m;
            let mut acc = 0.0;
            for k in 0..len {
                acc += centred[k] * centred[k + m];
            }
            acc / len as f64
        })
        .collect();
    let noise_floor = 3.0 / horizon.sqrt();
    let g0 = gamma[0];
    TurbulenceReport {
        lambda,
        horizon,
        dt,
        mean_trace: mean,
        lags: lags.to_vec(),
        gamma0_nonzero: g0 > noise_floor,
        tail_decay: gamma.last().unwrap().abs() < g0 / 5.0,
        gamma,
        noise_floor,
    }
}

/// Time-averaged autocorrelation of the boundary trace of a state drawn from
/// the invariant measure. The trace of such a state is the stationary process
/// `e^{λt} w(e^{−2λt})`, generated exactly on the time grid, so horizons far
/// beyond the range of `e^{−t}` stay accessible.
pub fn turbulence_report(
    lambda: f64,
    seed: u64,
    horizon: f64,
    dt: f64,
    lags: &[f64],
) -> Result<TurbulenceReport> {
    check_lambda(lambda)?;
    if !(dt > 0.0 && horizon > dt) {
        return Err(Error::InvalidParameter(
            "turbulence needs 0 < dt < horizon".into(),
        ));
    }
    let shifts = check_lags(lags, horizon, dt)?;
    let steps = (horizon / dt).round() as usize;
    let mut rng = sample_rng(seed, 0);
    let decay = (-lambda * dt).exp();
    let kick = (-(-2.0 * lambda * dt).exp_m1()).sqrt();
    let mut trace = Vec::with_capacity(steps + 1);
    let mut xi: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
    trace.push(xi);
    for _ in 0..steps {
        let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
        xi = decay * xi + kick * z;
        trace.push(xi);
    }
    Ok(autocorrelation_report(lambda, &trace, dt, lags, &shifts))
}

/// Largest horizon for which a user-supplied state can be traced (`e^{−t}`
/// must stay representable on the grid).
pub const FUNCTION_TRACE_MAX_HORIZON: f64 = 700.0;

/// As `turbulence_report`, for a given state `v` whose trace is evaluated with
/// the semiflow formula.
pub fn turbulence_report_for(
    lambda: f64,
    v: &GridFunction,
    horizon: f64,
    dt: f64,
    lags: &[f64],
) -> Result<TurbulenceReport> {
    check_lambda(lambda)?;
    if !(dt > 0.0 && horizon > dt && horizon <= FUNCTION_TRACE_MAX_HORIZON) {
        return Err(Error::InvalidParameter(format!(
            "function traces need 0 < dt < horizon <= {FUNCTION_TRACE_MAX_HORIZON}"
        )));
    }
    let shifts = check_lags(lags, horizon, dt)?;
    let steps = (horizon / dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let trace = boundary_trace(lambda, v, &times)?;
    Ok(autocorrelation_report(lambda, &trace, dt, lags, &shifts))
}

#[derive(Debug, Clone, Serialize)]
pub struct PointwiseGamma {
    pub x: f64,
    pub gamma: Vec<f64>,
}

/// Autocorrelation of `(Sᵗv)(x)` at fixed points `x`, the pointwise
/// alternative to the boundary-trace reduction. Diagnostic output only.
pub fn pointwise_autocorrelation(
    lambda: f64,
    v: &GridFunction,
    xs: &[f64],
    horizon: f64,
    dt: f64,
    lags: &[f64],
) -> Result<Vec<PointwiseGamma>> {
    check_lambda(lambda)?;
    if !(dt > 0.0 && horizon > dt && horizon <= FUNCTION_TRACE_MAX_HORIZON) {
        return Err(Error::InvalidParameter(format!(
            "function traces need 0 < dt < horizon <= {FUNCTION_TRACE_MAX_HORIZON}"
        )));
    }
    if let Some(x) = xs.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
        return Err(Error::InvalidGrid(format!(
            "probe point {x} outside (0, 1]"
        )));
    }
    let shifts = check_lags(lags, horizon, dt)?;
    let steps = (horizon / dt).round() as usize;
    let p = v.interpolant();
    Ok(xs
        .iter()
        .map(|&x| {
            let trace: Vec<f64> = (0..=steps)
                .map(|k| {
                    let t = k as f64 * dt;
                    (lambda * t).exp() * p.eval((-t).exp() * x)
                })
                .collect();
            PointwiseGamma {
                x,
                gamma: autocorrelation_report(lambda, &trace, dt, lags, &shifts).gamma,
            }
        })
        .collect())
}

/// Rows `t,x,value` for the states at `times`, keeping every `stride`-th node.
pub fn write_trajectory_csv(
    times: &[f64],
    states: &[GridFunction],
    stride: usize,
    mut w: impl Write,
) -> Result<()> {
    let stride = stride.max(1);
    writeln!(w, "t,x,value")?;
    for (t, s) in times.iter().zip(states) {
        let n = s.len();
        for i in (0..n).step_by(stride) {
            writeln!(w, "{t},{},{}", node(i, n), s.values[i])?;
        }
    }
    Ok(())
}
