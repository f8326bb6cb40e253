//! Gauss-Legendre rules and log-domain product quadrature.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::Interval;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Precondition("quadrature needs at least one node".into()));
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n(z) and P_{n-1}(z)
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// `log` of the tensor-product Gauss-Legendre approximation of
/// `int exp(log_f(theta)) d theta` over `window`, accumulated by log-sum-exp.
/// Points where `log_f` fails contribute zero.
pub fn log_integral<F>(log_f: F, window: &[Interval], nodes: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let (x, w) = gauss_legendre(nodes)?;
    let p = window.len();
    let total = nodes.pow(p as u32);
    let mut terms = Vec::with_capacity(total);
    let mut idx = vec![0usize; p];
    let mut theta = vec![0.0; p];
    let log_jac: f64 = window.iter().map(|b| (0.5 * b.width()).ln()).sum();
    for _ in 0..total {
        let mut log_w = log_jac;
        for k in 0..p {
            let b = window[k];
            theta[k] = 0.5 * (b.lo + b.hi) + 0.5 * b.width() * x[idx[k]];
            log_w += w[idx[k]].ln();
        }
        let v = match log_f(&theta) {
            Ok(v) if !v.is_nan() => v + log_w,
            _ => f64::NEG_INFINITY,
        };
        terms.push(v);
        for k in 0..p {
            idx[k] += 1;
            if idx[k] < nodes {
                break;
            }
            idx[k] = 0;
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::QuadratureUnderflow(format!("no finite integrand value at {total} nodes")));
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok(max + sum.ln())
}
