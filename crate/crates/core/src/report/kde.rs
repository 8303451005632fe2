use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gaussian kernel density estimate on a fixed grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub feature: String,
    /// Series tag, e.g. `original class 1 (n=696)`.
    pub source: String,
    pub n: usize,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum()
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Width used for a sample without spread: a narrow spike at the value.
pub fn spike_bandwidth(value: f64) -> f64 {
    1e-3 * value.abs().max(1.0)
}

/// Silverman's rule `1.06 · σ̂ · n^(−1/5)`, or the spike width when the
/// sample has no spread.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("KDE of an empty sample"));
    }
    let (mean, sd) = mean_sd(values);
    if sd <= 0.0 {
        return Ok(spike_bandwidth(mean));
    }
    Ok(1.06 * sd * (values.len() as f64).powf(-0.2))
}

/// Evenly spaced grid covering `[min − 4h, max + 4h]` of all samples, where
/// `h` is the largest bandwidth among them.
pub fn kde_grid(samples: &[&[f64]], points: usize) -> Result<Vec<f64>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut h: f64 = 0.0;
    for s in samples {
        for &v in s.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        h = h.max(silverman_bandwidth(s)?);
    }
    if !lo.is_finite() || points < 2 {
        return Err(Error::contract("KDE grid needs samples and at least two points"));
    }
    let (a, b) = (lo - 4.0 * h, hi + 4.0 * h);
    Ok((0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64).collect())
}

/// Density of `values` at each grid point with a Gaussian kernel.
pub fn kde(feature: &str, source: &str, values: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<KdeCurve> {
    if values.is_empty() {
        return Err(Error::contract("KDE of an empty sample"));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::contract(format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(values)?,
    };
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve {
        feature: feature.to_string(),
        source: source.to_string(),
        n: values.len(),
        bandwidth: h,
        grid: grid.to_vec(),
        density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_is_a_spike() {
        let v = [2.5; 10];
        let grid = kde_grid(&[&v], 2001).unwrap();
        let k = kde("x", "s", &v, &grid, None).unwrap();
        let peak = grid[crate::models::argmax(&k.density)];
        assert!((peak - 2.5).abs() < 1e-4);
        assert!((k.integral() - 1.0).abs() < 0.02);
    }

    #[test]
    fn empty_sample_is_rejected() {
        assert!(kde("x", "s", &[], &[0.0, 1.0], None).is_err());
    }
}
