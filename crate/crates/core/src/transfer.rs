//! Frobenius-Perron operators of interval maps.
//!
//! Densities are piecewise constant on a uniform partition of `[0, L]` and are
//! stored as bin masses. The operator acts on them through the defining
//! relation `∫_A P f = ∫_{S⁻¹(A)} f`, evaluated exactly on every bin with the
//! branch inverses of the map. Function-valued inputs go through the pointwise
//! formula `P f(x) = Σ f(ψ_i(x)) |ψ_i'(x)|`.

use std::collections::HashSet;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::{IntervalMap, MapKind, MapSpec, Monotonicity};

/// Tolerance on the total mass of a density.
pub const MASS_TOL: f64 = 1e-12;
/// Largest matrix written as dense CSV.
pub const DENSE_CSV_MAX: usize = 4096;
pub const DEFAULT_POWER_TOL: f64 = 1e-12;
pub const DEFAULT_POWER_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDensity {
    domain_len: f64,
    masses: Vec<f64>,
}

impl GridDensity {
    /// Normalizes nonnegative weights into a density.
    pub fn from_weights(domain_len: f64, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyData);
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "density weights must be finite and nonnegative, got {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter(
                "density has zero total mass".into(),
            ));
        }
        Ok(GridDensity {
            domain_len,
            masses: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Wraps masses that already form a density.
    pub fn from_masses(domain_len: f64, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL * masses.len().max(1) as f64 {
            return Err(Error::InvalidParameter(format!(
                "bin masses sum to {total}, not 1"
            )));
        }
        Self::from_weights(domain_len, masses)
    }

    pub fn uniform(domain_len: f64, bins: usize) -> Self {
        GridDensity {
            domain_len,
            masses: vec![1.0 / bins as f64; bins],
        }
    }

    /// Exact bin masses of a density given through its distribution function.
    pub fn from_cdf(domain_len: f64, bins: usize, cdf: impl Fn(f64) -> f64) -> Result<Self> {
        let h = domain_len / bins as f64;
        let weights = (0..bins)
            .map(|i| (cdf((i + 1) as f64 * h) - cdf(i as f64 * h)).max(0.0))
            .collect();
        Self::from_weights(domain_len, weights)
    }

    /// Midpoint masses `f(c_i) h`, renormalized.
    pub fn from_density_fn(domain_len: f64, bins: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = domain_len / bins as f64;
        let weights = (0..bins).map(|i| f((i as f64 + 0.5) * h) * h).collect();
        Self::from_weights(domain_len, weights)
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn domain_len(&self) -> f64 {
        self.domain_len
    }

    pub fn bin_width(&self) -> f64 {
        self.domain_len / self.masses.len() as f64
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let h = self.bin_width();
        let right = if i + 1 == self.bins() {
            self.domain_len
        } else {
            (i + 1) as f64 * h
        };
        (i as f64 * h, right)
    }

    /// Density values `mass / width`.
    pub fn values(&self) -> Vec<f64> {
        let h = self.bin_width();
        self.masses.iter().map(|m| m / h).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        assert_eq!(self.bins(), other.bins(), "densities on different grids");
        self.masses
            .iter()
            .zip(&other.masses)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Largest density-value difference quotient between bins `lag` apart.
    pub fn lipschitz_estimate(&self, lag: usize) -> f64 {
        let v = self.values();
        let span = lag as f64 * self.bin_width();
        (0..v.len().saturating_sub(lag))
            .map(|i| (v[i + lag] - v[i]).abs() / span)
            .fold(0.0, f64::max)
    }

    /// `∫_0^x f` for the piecewise-constant density.
    pub fn cdf(&self, x: f64) -> f64 {
        let h = self.bin_width();
        let pos = (x / h).clamp(0.0, self.bins() as f64);
        let k = (pos.floor() as usize).min(self.bins() - 1);
        let below: f64 = self.masses[..k].iter().sum();
        below + self.masses[k] * (pos - k as f64)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "bin_left,bin_right,mass")?;
        for (i, m) in self.masses.iter().enumerate() {
            let (a, b) = self.bin_edges(i);
            writeln!(w, "{a},{b},{m}")?;
        }
        Ok(())
    }
}

/// Cumulative masses at bin edges, used for exact sub-interval integrals.
struct Cumulative<'a> {
    density: &'a GridDensity,
    prefix: Vec<f64>,
}

impl<'a> Cumulative<'a> {
    fn new(density: &'a GridDensity) -> Self {
        let mut prefix = Vec::with_capacity(density.bins() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for m in &density.masses {
            acc += m;
            prefix.push(acc);
        }
        Cumulative { density, prefix }
    }

    fn at(&self, x: f64) -> f64 {
        let n = self.density.bins();
        let pos = (x / self.density.bin_width()).clamp(0.0, n as f64);
        let k = (pos.floor() as usize).min(n - 1);
        self.prefix[k] + self.density.masses[k] * (pos - k as f64)
    }

    fn between(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        (self.at(hi) - self.at(lo)).max(0.0)
    }
}

/// Row-stochastic Ulam discretization in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    n: usize,
    domain_len: f64,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TransferMatrix {
    /// Builds a matrix from dense rows. Rows must be stochastic.
    pub fn from_dense(domain_len: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for row in rows {
            if row.len() != n {
                return Err(Error::InvalidParameter("matrix is not square".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > MASS_TOL || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter(format!(
                    "row is not stochastic (sum {sum})"
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(TransferMatrix {
            n,
            domain_len,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn domain_len(&self) -> f64 {
        self.domain_len
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// `v M`, accumulated in row order.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (j, m) in self.row(i) {
                out[j] += vi * m;
            }
        }
        out
    }

    pub fn write_dense_csv(&self, mut w: impl Write) -> Result<()> {
        if self.n > DENSE_CSV_MAX {
            return Err(Error::TooLarge {
                n: self.n,
                max: DENSE_CSV_MAX,
            });
        }
        let mut line = String::new();
        for i in 0..self.n {
            let mut dense = vec![0.0; self.n];
            for (j, v) in self.row(i) {
                dense[j] = v;
            }
            line.clear();
            for (j, v) in dense.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Preimage intervals of the target bins under one monotone branch, as an
/// ascending list of breakpoints together with the target bin of each piece.
struct BranchPartition {
    breaks: Vec<f64>,
    targets: Vec<usize>,
}

fn branch_partitions<M: IntervalMap + ?Sized>(map: &M, n: usize) -> Vec<BranchPartition> {
    let len = map.domain_len();
    let edges: Vec<f64> = (0..=n)
        .map(|j| {
            if j == n {
                len
            } else {
                len * j as f64 / n as f64
            }
        })
        .collect();
    map.branches()
        .iter()
        .enumerate()
        .map(|(b, br)| {
            let pre: Vec<f64> = edges.iter().map(|&y| map.branch_preimage(b, y)).collect();
            match br.direction {
                Monotonicity::Increasing => BranchPartition {
                    breaks: pre,
                    targets: (0..n).collect(),
                },
                Monotonicity::Decreasing => BranchPartition {
                    breaks: pre.into_iter().rev().collect(),
                    targets: (0..n).rev().collect(),
                },
            }
        })
        .collect()
}

/// Ulam matrix `M[i][j] = |Δ_i ∩ S⁻¹(Δ_j)| / |Δ_i|`.
pub fn ulam_matrix<M: IntervalMap + ?Sized>(map: &M, n: usize) -> Result<TransferMatrix> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "Ulam matrix needs at least 2 bins, got {n}"
        )));
    }
    let len = map.domain_len();
    let h = len / n as f64;
    let parts = branch_partitions(map, n);

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let lo = i as f64 * h;
            let hi = if i + 1 == n { len } else { (i + 1) as f64 * h };
            let width = hi - lo;
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for part in &parts {
                let br = &part.breaks;
                // first piece whose right end lies past lo
                let start = br[1..].partition_point(|&x| x <= lo);
                for k in start..part.targets.len() {
                    let (a, b) = (br[k], br[k + 1]);
                    if a >= hi {
                        break;
                    }
                    let overlap = b.min(hi) - a.max(lo);
                    if overlap > 0.0 {
                        entries.push((part.targets[k], overlap / width));
                    }
                }
            }
            entries.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (j, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            merged
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let (mut cols, mut vals) = (Vec::new(), Vec::new());
    for row in rows {
        for (j, v) in row {
            cols.push(j);
            vals.push(v.min(1.0));
        }
        row_ptr.push(cols.len());
    }
    Ok(TransferMatrix {
        n,
        domain_len: len,
        row_ptr,
        cols,
        vals,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantDensity {
    pub density: GridDensity,
    pub iterations: usize,
    pub residual: f64,
}

/// Left fixed vector of a row-stochastic matrix by power iteration from the
/// uniform vector; stops once the L1 change of one step is at most `tol`.
pub fn invariant_density(
    matrix: &TransferMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<InvariantDensity> {
    let n = matrix.size();
    let mut v = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let mut next = matrix.left_mul(&v);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if residual <= tol {
            return Ok(InvariantDensity {
                density: GridDensity::from_weights(matrix.domain_len(), v)?,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Result of one operator application to a grid density.
#[derive(Debug, Clone, Serialize)]
pub struct FpOutcome {
    pub density: GridDensity,
    /// `1 - Σ output masses` before the result was wrapped; rounding only.
    pub mass_defect: f64,
}

/// `P f` on the same grid: the mass of every target bin is the input mass of
/// its preimage, summed over branches.
pub fn apply_fp<M: IntervalMap + ?Sized>(map: &M, f: &GridDensity) -> Result<FpOutcome> {
    let n = f.bins();
    if (map.domain_len() - f.domain_len()).abs() > 1e-12 * map.domain_len() {
        return Err(Error::InvalidParameter(
            "density and map live on different intervals".into(),
        ));
    }
    let cum = Cumulative::new(f);
    let parts = branch_partitions(map, n);
    let mut out = vec![0.0; n];
    for part in &parts {
        for (k, &j) in part.targets.iter().enumerate() {
            out[j] += cum.between(part.breaks[k], part.breaks[k + 1]);
        }
    }
    let total: f64 = out.iter().sum();
    Ok(FpOutcome {
        mass_defect: 1.0 - total,
        density: GridDensity {
            domain_len: f.domain_len(),
            masses: out,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpPoint {
    pub value: f64,
    /// A tangency preimage was present and skipped.
    pub tangency: bool,
}

/// Pointwise `P f(x) = Σ_{i ∈ I_x} f(ψ_i(x)) |ψ_i'(x)|`.
pub fn apply_fp_at<M: IntervalMap + ?Sized>(map: &M, f: impl Fn(f64) -> f64, x: f64) -> FpPoint {
    let mut value = 0.0;
    let mut tangency = false;
    for p in map.preimages(x) {
        if p.is_tangency() {
            tangency = true;
            continue;
        }
        value += f(p.x) * p.inverse_slope;
    }
    FpPoint { value, tangency }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampledFp {
    /// Output values at the bin centers.
    pub values: Vec<f64>,
    /// Nodes whose tangency preimage was skipped.
    pub skipped_nodes: Vec<usize>,
    /// `1 - h Σ values`: quadrature mass that a renormalization would restore.
    pub renormalization: f64,
}

impl SampledFp {
    /// Output masses `h · value`, renormalized to a density.
    pub fn to_density(&self, domain_len: f64) -> Result<GridDensity> {
        let h = domain_len / self.values.len() as f64;
        GridDensity::from_weights(domain_len, self.values.iter().map(|v| v * h).collect())
    }
}

/// Pointwise formula at the `bins` bin centers (midpoint rule).
pub fn apply_fp_sampled<M: IntervalMap + ?Sized>(
    map: &M,
    f: impl Fn(f64) -> f64 + Sync,
    bins: usize,
) -> SampledFp {
    let h = map.domain_len() / bins as f64;
    let points: Vec<FpPoint> = (0..bins)
        .into_par_iter()
        .map(|i| apply_fp_at(map, &f, (i as f64 + 0.5) * h))
        .collect();
    let skipped_nodes = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.tangency)
        .map(|(i, _)| i)
        .collect();
    let values: Vec<f64> = points.iter().map(|p| p.value).collect();
    let renormalization = 1.0 - h * values.iter().sum::<f64>();
    SampledFp {
        values,
        skipped_nodes,
        renormalization,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityTrace {
    pub density: GridDensity,
    /// L1 distance to the reference after each step.
    pub distances: Vec<f64>,
}

/// Applies the operator `steps` times, recording the L1 distance to
/// `reference` (the Ulam invariant density when `None`).
pub fn iterate_density<M: IntervalMap + ?Sized>(
    map: &M,
    f0: &GridDensity,
    steps: usize,
    reference: Option<&GridDensity>,
) -> Result<DensityTrace> {
    let owned;
    let reference = match reference {
        Some(r) => r,
        None => {
            let m = ulam_matrix(map, f0.bins())?;
            owned = invariant_density(&m, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITERS)?.density;
            &owned
        }
    };
    let mut f = f0.clone();
    let mut distances = Vec::with_capacity(steps);
    for _ in 0..steps {
        f = apply_fp(map, &f)?.density;
        distances.push(f.l1_distance(reference));
    }
    Ok(DensityTrace {
        density: f,
        distances,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BirkhoffAverage {
    pub mean: f64,
    pub steps: usize,
    /// First step at which the orbit landed exactly on a fixed point.
    pub collapsed_at: Option<usize>,
}

const PERIODICITY_PROBE: usize = 1000;

/// `(1/N) Σ_{t<N} g(S^t x0)`.
///
/// Tent orbits collapse to 0 in floating point, so for the tent map `x0` only
/// provides the leading binary digits of the starting point. Later digits come
/// from a stream seeded by `x0`, and the orbit is read off the shifted digit
/// sequence.
pub fn birkhoff_average(
    map: &MapSpec,
    x0: f64,
    observable: impl Fn(f64) -> f64,
    n: usize,
) -> Result<BirkhoffAverage> {
    let len = map.domain_len();
    if !(x0 > 0.0 && x0 < len) {
        return Err(Error::OutOfDomain { x: x0, len });
    }
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one iterate".into()));
    }
    if map.kind() == MapKind::Tent {
        return Ok(tent_symbolic_average(x0, observable, n));
    }

    let mut seen = HashSet::with_capacity(PERIODICITY_PROBE);
    let mut x = x0;
    for t in 0..PERIODICITY_PROBE {
        if !seen.insert(x.to_bits()) {
            return Err(Error::EventuallyPeriodic { x0, steps: t });
        }
        x = map.apply(x);
    }

    let mut x = x0;
    let mut acc = 0.0;
    let mut collapsed_at = None;
    for t in 0..n {
        acc += observable(x);
        let next = map.apply(x);
        if next == x && collapsed_at.is_none() {
            collapsed_at = Some(t);
        }
        x = next;
    }
    Ok(BirkhoffAverage {
        mean: acc / n as f64,
        steps: n,
        collapsed_at,
    })
}

fn tent_symbolic_average(x0: f64, observable: impl Fn(f64) -> f64, n: usize) -> BirkhoffAverage {
    const MANTISSA: u32 = 53;
    let scale = (1u64 << MANTISSA) as f64;
    let mask = (1u64 << MANTISSA) - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(x0.to_bits());
    // window holds digits b_{t+1} .. b_{t+64}, most significant first
    let mut window = (x0 * scale) as u64 & mask;
    window = (window << (64 - MANTISSA)) | (rng.next_u64() >> MANTISSA);
    let mut fresh = rng.next_u64();
    let mut fresh_left = 64;
    let mut prev_digit = 0u64;
    let mut acc = 0.0;
    for _ in 0..n {
        let mut digits = window >> (64 - MANTISSA);
        if prev_digit == 1 {
            digits ^= mask;
        }
        acc += observable(digits as f64 / scale);
        prev_digit = window >> 63;
        if fresh_left == 0 {
            fresh = rng.next_u64();
            fresh_left = 64;
        }
        window = (window << 1) | (fresh >> 63);
        fresh <<= 1;
        fresh_left -= 1;
    }
    BirkhoffAverage {
        mean: acc / n as f64,
        steps: n,
        collapsed_at: None,
    }
}
