//! Share of variance carried by the leading principal component.
//!
//! Rows are centered and the largest covariance eigenvalue is found by power
//! iteration on the Gram accumulator (the `d x d` covariance matrix is never
//! formed, so wide logit rows stay cheap). The dense eigendecomposition in the
//! oracle module provides the independent cross-check.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::invalid_arg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaRatio {
    pub ratio: f64,
    /// Set when the rows carry no variance at all; the ratio is then 1 by
    /// convention.
    pub degenerate: bool,
}

/// Fraction of total variance explained by the first principal component of
/// `rows`. Requires at least two rows of equal dimension.
pub fn pca_first_component_ratio(rows: &[Vec<f64>]) -> Result<PcaRatio> {
    if rows.len() < 2 {
        return Err(invalid_arg!("need at least 2 rows, got {}", rows.len()));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(invalid_arg!("rows must share one nonzero dimension"));
    }
    let n = rows.len();

    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let denom = (n - 1) as f64;
    let total: f64 = centered
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / denom;
    if total <= 0.0 {
        return Ok(PcaRatio { ratio: 1.0, degenerate: true });
    }

    // power iteration: v <- C v, with C v = sum_i x_i (x_i . v) / (n-1)
    let mut v: Vec<f64> = centered
        .iter()
        .find(|row| row.iter().any(|x| *x != 0.0))
        .expect("total variance is positive")
        .clone();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    let mut lambda = 0.0f64;
    for _ in 0..500_000 {
        let mut w = vec![0.0; d];
        for row in &centered {
            let dot: f64 = row.iter().zip(&v).map(|(x, y)| x * y).sum();
            for (wi, xi) in w.iter_mut().zip(row) {
                *wi += dot * xi;
            }
        }
        for wi in &mut w {
            *wi /= denom;
        }
        let new_lambda: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if w_norm == 0.0 {
            // v fell into the null space; variance must live elsewhere, restart
            lambda = 0.0;
            break;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / w_norm;
        }
        if (new_lambda - lambda).abs() <= 1e-15 * new_lambda.abs().max(1e-300) {
            lambda = new_lambda;
            break;
        }
        lambda = new_lambda;
    }

    Ok(PcaRatio { ratio: (lambda / total).clamp(0.0, 1.0), degenerate: false })
}
