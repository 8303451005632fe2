//! SMOTE oversampling followed by edited-nearest-neighbour cleaning.
//!
//! Both stages run in the dense encoded space (one-hot categoricals next to
//! z-scored reals) with brute-force Euclidean neighbours.

mod knn;

pub use knn::{k_nearest, squared_distance};

use crate::data::{class_counts, EncodedMatrix, N_CLASSES};
use crate::error::{Error, Result};
use crate::seed::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleConfig {
    pub smote_k: usize,
    pub enn_k: usize,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            smote_k: 5,
            enn_k: 3,
            seed: 42,
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smote_k == 0 {
            return Err(Error::config("smote_k must be at least 1"));
        }
        if self.enn_k == 0 || self.enn_k.is_multiple_of(2) {
            return Err(Error::config("enn_k must be odd"));
        }
        Ok(())
    }
}

/// Class counts through the two resampling stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleAudit {
    pub before: [usize; N_CLASSES],
    pub after_smote: [usize; N_CLASSES],
    pub after_enn: [usize; N_CLASSES],
    pub synthetic_rows: usize,
    pub removed_rows: usize,
    pub seed: u64,
    pub smote_k: usize,
    pub enn_k: usize,
}

/// Raises every minority class to the majority count with interpolated
/// rows `x + λ(x_nn − x)`, `λ ~ U(0,1)`, where `x_nn` is one of the
/// `smote_k` nearest same-class rows of `x`. Original rows are kept as they
/// are, synthetic rows are appended class by class and flagged.
pub fn smote(m: &EncodedMatrix, cfg: &ResampleConfig) -> Result<(EncodedMatrix, ResampleAudit)> {
    cfg.validate()?;
    let before = class_counts(&m.labels);
    let target = *before.iter().max().unwrap_or(&0);
    let needed = cfg.smote_k + 1;
    if let Some((class, &count)) = before
        .iter()
        .enumerate()
        .filter(|(_, &n)| n < target && n < needed)
        .min_by_key(|(_, &n)| n)
    {
        return Err(Error::InsufficientClass { class, count, needed });
    }
    let w = m.width();
    let mut out = m.clone();
    let mut r = rng(cfg.seed);
    for (class, &count) in before.iter().enumerate() {
        if count >= target {
            continue;
        }
        let members: Vec<usize> = (0..m.n_rows()).filter(|&i| m.labels[i] == class).collect();
        let neighbours: Vec<Vec<usize>> = members
            .iter()
            .map(|&i| k_nearest(&m.data, w, i, &members, cfg.smote_k))
            .collect();
        for _ in 0..target - count {
            let pick = r.gen_range(0..members.len());
            let nn = neighbours[pick][r.gen_range(0..cfg.smote_k)];
            let lambda: f64 = r.gen();
            let (x, y) = (m.row(members[pick]), m.row(nn));
            out.data.extend(x.iter().zip(y).map(|(a, b)| a + lambda * (b - a)));
            out.labels.push(class);
            out.synthetic.push(true);
        }
    }
    let after = class_counts(&out.labels);
    let audit = ResampleAudit {
        before,
        after_smote: after,
        after_enn: after,
        synthetic_rows: out.n_rows() - m.n_rows(),
        removed_rows: 0,
        seed: cfg.seed,
        smote_k: cfg.smote_k,
        enn_k: cfg.enn_k,
    };
    Ok((out, audit))
}

/// Rows of `m` whose `enn_k` nearest neighbours (self excluded) hold a strict
/// majority label different from their own. Without a strict majority the
/// row stays.
pub fn enn_removals(m: &EncodedMatrix, enn_k: usize) -> Result<Vec<usize>> {
    let n = m.n_rows();
    if n <= enn_k {
        return Err(Error::InsufficientData(format!("ENN needs more than {enn_k} rows, got {n}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let w = m.width();
    let mut removed = Vec::new();
    for i in 0..n {
        let mut votes = [0usize; N_CLASSES];
        for j in k_nearest(&m.data, w, i, &all, enn_k) {
            votes[m.labels[j]] += 1;
        }
        if let Some(major) = votes.iter().position(|&v| 2 * v > enn_k) {
            if major != m.labels[i] {
                removed.push(i);
            }
        }
    }
    Ok(removed)
}

/// Edited nearest neighbours: the removal set is computed on the input as a
/// whole, then applied at once.
pub fn enn(m: &EncodedMatrix, cfg: &ResampleConfig) -> Result<(EncodedMatrix, Vec<usize>)> {
    cfg.validate()?;
    let removed = enn_removals(m, cfg.enn_k)?;
    let mut drop = vec![false; m.n_rows()];
    for &i in &removed {
        drop[i] = true;
    }
    let keep: Vec<usize> = (0..m.n_rows()).filter(|&i| !drop[i]).collect();
    Ok((m.subset(&keep), removed))
}

/// `enn(smote(m))` with a populated audit.
pub fn smoteenn(m: &EncodedMatrix, cfg: &ResampleConfig) -> Result<(EncodedMatrix, ResampleAudit)> {
    let (over, mut audit) = smote(m, cfg)?;
    let (clean, removed) = enn(&over, cfg)?;
    audit.after_enn = class_counts(&clean.labels);
    audit.removed_rows = removed.len();
    Ok((clean, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Block, FeatureLayout};

    fn matrix(width: usize, data: Vec<f64>, labels: Vec<usize>) -> EncodedMatrix {
        let blocks = (0..width)
            .map(|j| Block::Continuous {
                column: format!("x{j}"),
            })
            .collect();
        EncodedMatrix::new(FeatureLayout { blocks }, data, labels).unwrap()
    }

    #[test]
    fn synthetic_points_lie_on_the_segment() {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..6 {
            data.extend([10.0 + i as f64, 0.0]);
            labels.push(0);
        }
        data.extend([0.0, 0.0, 1.0, 1.0]);
        labels.extend([1, 1]);
        for i in 0..6 {
            data.extend([-10.0 - i as f64, 5.0]);
            labels.push(2);
        }
        let m = matrix(2, data, labels);
        let cfg = ResampleConfig { smote_k: 1, ..Default::default() };
        let (out, audit) = smote(&m, &cfg).unwrap();
        assert_eq!(audit.after_smote, [6, 6, 6]);
        for r in m.n_rows()..out.n_rows() {
            let p = out.row(r);
            assert_eq!(p[0], p[1]);
            assert!((0.0..=1.0).contains(&p[0]));
            assert!(out.synthetic[r]);
        }
        assert_eq!(&out.data[..m.data.len()], &m.data[..]);
    }

    #[test]
    fn small_class_is_rejected() {
        let labels: Vec<usize> = [vec![0; 10], vec![1; 4], vec![2; 2]].concat();
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let m = matrix(1, data, labels);
        match smote(&m, &ResampleConfig::default()) {
            Err(Error::InsufficientClass { class, count, needed }) => {
                assert_eq!((class, count, needed), (2, 2, 6));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn equalizes_to_majority() {
        let labels: Vec<usize> = [vec![0; 100], vec![1; 40], vec![2; 20]].concat();
        let data: Vec<f64> = (0..160).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = matrix(1, data, labels);
        let (_, audit) = smote(&m, &ResampleConfig::default()).unwrap();
        assert_eq!(audit.after_smote, [100, 100, 100]);
        assert_eq!(audit.synthetic_rows, 140);
    }

    #[test]
    fn enn_removes_an_isolated_point() {
        // one class-1 point surrounded by three class-0 points
        let data = vec![0.0, 1.0, -1.0, 0.5, 100.0, 101.0, 102.0, 103.0];
        let labels = vec![1, 0, 0, 0, 2, 2, 2, 2];
        let m = matrix(1, data, labels);
        let (out, removed) = enn(&m, &ResampleConfig::default()).unwrap();
        assert_eq!(removed, vec![0]);
        assert_eq!(out.n_rows(), 7);
    }

    #[test]
    fn enn_keeps_separated_and_duplicated_data() {
        let data = vec![0.0, 0.1, 0.2, 0.3, 10.0, 10.1, 10.2, 10.3];
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
        assert!(enn_removals(&matrix(1, data, labels), 3).unwrap().is_empty());
        let dup = matrix(1, vec![2.0; 6], vec![1; 6]);
        assert!(enn_removals(&dup, 3).unwrap().is_empty());
    }

    #[test]
    fn enn_without_strict_majority_keeps_the_row() {
        // neighbours of row 0 are one of each class
        let data = vec![0.0, 1.0, -1.1, 1.2, 50.0, 51.0, 52.0];
        let labels = vec![0, 1, 2, 0, 1, 1, 1];
        let removed = enn_removals(&matrix(1, data, labels), 3).unwrap();
        assert!(!removed.contains(&0));
    }

    #[test]
    fn balanced_separated_input_is_unchanged() {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for i in 0..8 {
                data.push(100.0 * c as f64 + i as f64);
                labels.push(c);
            }
        }
        let m = matrix(1, data, labels);
        let (out, audit) = smoteenn(&m, &ResampleConfig::default()).unwrap();
        assert_eq!(out, m);
        assert_eq!(audit.before, audit.after_enn);
    }

    #[test]
    fn config_validation() {
        let even = ResampleConfig { enn_k: 2, ..Default::default() };
        assert!(matches!(even.validate(), Err(Error::Config(_))));
        let zero = ResampleConfig { smote_k: 0, ..Default::default() };
        assert!(zero.validate().is_err());
    }
}
