//! Seeded Gaussian samplers: Wiener paths, the stationary trace process,
//! invariant states of the linear semiflow, and the Lévy Brownian field.
//!
//! Sample `index` of an ensemble always draws from its own ChaCha stream keyed
//! by `(seed, index)`, so ensembles come out the same under any thread count.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

pub const LEVY_FIELD_MAX_POINTS: usize = 2000;
/// Depth of the dyadic midpoint construction of keyed Brownian paths.
const DYADIC_DEPTH: u32 = 20;
const EIGEN_CLIP: f64 = -1e-12;

/// Stream for sample `index` of the ensemble seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

fn check_time_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::EmptyData);
    }
    if times[0] != 0.0 {
        return Err(Error::InvalidGrid("time grid must start at 0".into()));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid(format!(
            "time grid must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Wiener path from 0 with independent increments on the grid.
pub fn sample_wiener(times: &[f64], seed: u64, index: u64) -> Result<PathSample> {
    check_time_grid(times)?;
    let mut rng = sample_rng(seed, index);
    let mut values = Vec::with_capacity(times.len());
    let mut w = 0.0;
    values.push(0.0);
    for pair in times.windows(2) {
        let z: f64 = rng.sample(StandardNormal);
        w += (pair[1] - pair[0]).sqrt() * z;
        values.push(w);
    }
    Ok(PathSample {
        times: times.to_vec(),
        values,
        seed,
        index,
    })
}

/// Brownian path on `[0, 1]` built by dyadic midpoint refinement with one
/// keyed normal per dyadic node. The value at a time depends only on the key
/// and the time, so any two grids give identical values at shared times.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    seed: u64,
    index: u64,
}

impl BrownianPath {
    pub fn new(seed: u64, index: u64) -> Self {
        BrownianPath { seed, index }
    }

    fn node_normal(&self, rng: &mut ChaCha8Rng, node: u64) -> f64 {
        // each node owns two 64-bit words of the stream
        rng.set_word_pos(u128::from(node) * 4);
        let a = rng.next_u64();
        let b = rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Values at sorted times in `[0, 1]`.
    pub fn eval_sorted(&self, times: &[f64]) -> Result<Vec<f64>> {
        if let Some(t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidGrid(format!(
                "keyed Brownian path lives on [0, 1], got time {t}"
            )));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidGrid("times must be sorted".into()));
        }
        let mut rng = sample_rng(self.seed, self.index);
        let top = self.node_normal(&mut rng, 0);
        let mut out = vec![0.0; times.len()];
        self.refine(&mut rng, 0, 0, 0.0, top, times, &mut out);
        Ok(out)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        Ok(self.eval_sorted(&[t])?[0])
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        rng: &mut ChaCha8Rng,
        level: u32,
        k: u64,
        left: f64,
        right: f64,
        times: &[f64],
        out: &mut [f64],
    ) {
        if times.is_empty() {
            return;
        }
        let width = 1.0 / (1u64 << level) as f64;
        let a = k as f64 * width;
        if level == DYADIC_DEPTH {
            for (t, o) in times.iter().zip(out.iter_mut()) {
                let s = ((t - a) / width).clamp(0.0, 1.0);
                *o = left + s * (right - left);
            }
            return;
        }
        let node = (1u64 << (level + 1)) + k;
        let z = self.node_normal(rng, node);
        let mid = 0.5 * (left + right) + (0.25 * width).sqrt() * z;
        let m = a + 0.5 * width;
        let split = times.partition_point(|&t| t < m);
        let (tl, tr) = times.split_at(split);
        let (ol, or) = out.split_at_mut(split);
        self.refine(rng, level + 1, 2 * k, left, mid, tl, ol);
        self.refine(rng, level + 1, 2 * k + 1, mid, right, tr, or);
    }
}

/// Invariant-state sample `ζ_x = w(x^{2λ})` (or its absolute value) on an
/// increasing grid in `[0, 1]`.
pub fn sample_invariant_state(
    lambda: f64,
    xs: &[f64],
    seed: u64,
    index: u64,
    nonneg: bool,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid(
            "x grid must be strictly increasing".into(),
        ));
    }
    let times: Vec<f64> = xs.iter().map(|x| x.powf(2.0 * lambda)).collect();
    let mut v = BrownianPath::new(seed, index).eval_sorted(&times)?;
    if nonneg {
        v.iter_mut().for_each(|x| *x = x.abs());
    }
    Ok(v)
}

/// Stationary trace `ξ_t = e^{λt} w(e^{−2λt})`.
///
/// The underlying Wiener path is generated backwards from `w(1)` by Brownian
/// bridge conditioning, which gives `ξ_{k+1} = e^{−λΔ} ξ_k + √(1 − e^{−2λΔ}) Z`
/// and never forms the underflowing times `e^{−2λt}`.
pub fn sample_ou(lambda: f64, times: &[f64], seed: u64, index: u64) -> Result<PathSample> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    check_time_grid(times)?;
    let mut rng = sample_rng(seed, index);
    let mut values = Vec::with_capacity(times.len());
    let mut xi: f64 = rng.sample(StandardNormal);
    values.push(xi);
    for pair in times.windows(2) {
        let decay = (-lambda * (pair[1] - pair[0])).exp();
        let z: f64 = rng.sample(StandardNormal);
        xi = decay * xi + (-(-2.0 * lambda * (pair[1] - pair[0])).exp_m1()).sqrt() * z;
        values.push(xi);
    }
    Ok(PathSample {
        times: times.to_vec(),
        values,
        seed,
        index,
    })
}

/// Estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn z_score(&self, expected: f64) -> f64 {
        (self.value - expected) / self.std_error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Fourth central moment, for the standard error of the variance.
    pub m4: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::EmptyData);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for x in xs {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        Ok(Moments {
            n: xs.len(),
            mean,
            variance: m2 * n / (n - 1.0),
            skewness: m3 / m2.powf(1.5),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
            m4,
        })
    }

    pub fn mean_estimate(&self) -> Estimate {
        Estimate {
            value: self.mean,
            std_error: (self.variance / self.n as f64).sqrt(),
        }
    }

    pub fn variance_estimate(&self) -> Estimate {
        let v = self.variance;
        Estimate {
            value: v,
            std_error: ((self.m4 - v * v).max(0.0) / self.n as f64).sqrt(),
        }
    }
}

fn time_index(path: &PathSample, t: f64) -> Result<usize> {
    path.times
        .iter()
        .position(|s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
        .ok_or_else(|| Error::InvalidGrid(format!("time {t} is not on the sample grid")))
}

/// Ensemble covariance of the values at times `t` and `t + lag`.
pub fn empirical_autocov(ensemble: &[PathSample], t: f64, lag: f64) -> Result<Estimate> {
    if ensemble.len() < 2 {
        return Err(Error::EmptyData);
    }
    let i = time_index(&ensemble[0], t)?;
    let j = time_index(&ensemble[0], t + lag)?;
    let a: Vec<f64> = ensemble.iter().map(|p| p.values[i]).collect();
    let b: Vec<f64> = ensemble.iter().map(|p| p.values[j]).collect();
    covariance(&a, &b)
}

/// Sample covariance with the standard error of the mean of centred products.
pub fn covariance(a: &[f64], b: &[f64]) -> Result<Estimate> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::EmptyData);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let m = Moments::of(&prods)?;
    Ok(Estimate {
        value: m.mean * n / (n - 1.0),
        std_error: m.mean_estimate().std_error,
    })
}

/// Gaussian field with covariance `(‖x‖ + ‖y‖ − ‖x − y‖) / 2`, realized by a
/// symmetric eigen-factorization of the covariance matrix.
#[derive(Debug, Clone)]
pub struct LevyField {
    factor: DMatrix<f64>,
    origin: Vec<bool>,
}

impl LevyField {
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        if n > LEVY_FIELD_MAX_POINTS {
            return Err(Error::TooLarge {
                n,
                max: LEVY_FIELD_MAX_POINTS,
            });
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidParameter(
                "points have mixed dimensions".into(),
            ));
        }
        let norm = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dist = |p: &[f64], q: &[f64]| {
            p.iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let norms: Vec<f64> = points.iter().map(|p| norm(p)).collect();
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let d = dist(&points[i], &points[j]);
                if i != j && d == 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "points {j} and {i} coincide"
                    )));
                }
                let c = 0.5 * (norms[i] + norms[j] - d);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut roots = DVector::zeros(n);
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev < EIGEN_CLIP * scale {
                return Err(Error::Factorization(format!(
                    "covariance eigenvalue {ev:e} below the clipping tolerance"
                )));
            }
            roots[i] = ev.max(0.0).sqrt();
        }
        let factor = eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(LevyField {
            factor,
            origin: norms.iter().map(|r| *r == 0.0).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn sample(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = sample_rng(seed, index);
        let n = self.len();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let v = &self.factor * z;
        v.iter()
            .zip(&self.origin)
            .map(|(x, o)| if *o { 0.0 } else { *x })
            .collect()
    }
}

pub fn sample_levy_field(points: &[Vec<f64>], seed: u64, index: u64) -> Result<Vec<f64>> {
    Ok(LevyField::new(points)?.sample(seed, index))
}

/// Ensemble rows as `sample_id,t,value`.
pub fn write_samples_csv(samples: &[PathSample], mut w: impl Write) -> Result<()> {
    writeln!(w, "sample_id,t,value")?;
    for s in samples {
        for (t, v) in s.times.iter().zip(&s.values) {
            writeln!(w, "{},{t},{v}", s.index)?;
        }
    }
    Ok(())
}
