//! Monotone piecewise-cubic Hermite interpolation on a uniform grid over `[0, 1]`.
//!
//! Slopes are centered three-point differences, limited so that every cubic
//! piece is monotone between its nodes (Hyman's filter). The interpolant
//! therefore stays inside the range of the node values, so nonnegative data
//! give nonnegative interpolants, and quadratics are reproduced exactly.

#[derive(Debug, Clone)]
pub struct Pchip {
    values: Vec<f64>,
    slopes: Vec<f64>,
    h: f64,
}

impl Pchip {
    /// `values[k]` sits at `k / (n - 1)`. Needs at least two nodes.
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n >= 2, "pchip needs at least two nodes");
        let h = 1.0 / (n - 1) as f64;
        let delta: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                let (d0, d1) = (delta[k - 1], delta[k]);
                if d0 * d1 > 0.0 {
                    let m = 0.5 * (d0 + d1);
                    let cap = 3.0 * d0.abs().min(d1.abs());
                    slopes[k] = m.signum() * m.abs().min(cap);
                }
            }
            slopes[0] = end_slope(delta[0], delta[1]);
            slopes[n - 1] = -end_slope(-delta[n - 2], -delta[n - 3]);
        }
        Pchip {
            values: values.to_vec(),
            slopes,
            h,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let x = x.clamp(0.0, 1.0);
        let pos = x / self.h;
        let k = (pos.floor() as usize).min(n - 2);
        let s = pos - k as f64;
        if s == 0.0 {
            return self.values[k];
        }
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.h, self.slopes[k + 1] * self.h);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1
    }
}

/// One-sided three-point slope at the left end, limited like interior slopes.
fn end_slope(d0: f64, d1: f64) -> f64 {
    let m = 0.5 * (3.0 * d0 - d1);
    if m * d0 <= 0.0 {
        0.0
    } else if m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}
