use super::schema::N_CLASSES;
use crate::error::{Error, Result};
use crate::seed::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Smallest class size the splitter accepts.
pub const MIN_CLASS_ROWS: usize = 5;

/// Disjoint train/validation/test row indices, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Per-class proportional split. Within each class the train and validation
/// counts are the rounded exact proportions and the test split takes the
/// remainder, so every split is within one row of its exact share.
pub fn stratified_split(labels: &[usize], ratios: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, &y) in labels.iter().enumerate() {
        if y >= N_CLASSES {
            return Err(Error::contract(format!("label {y} out of range")));
        }
        by_class[y].push(i);
    }
    for (c, rows) in by_class.iter().enumerate() {
        if !rows.is_empty() && rows.len() < MIN_CLASS_ROWS {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} rows, the split needs at least {MIN_CLASS_ROWS}",
                rows.len()
            )));
        }
    }
    let mut r = rng(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for mut rows in by_class {
        rows.shuffle(&mut r);
        let n = rows.len() as f64;
        let n_train = (n * tr).round() as usize;
        let n_val = ((n * va).round() as usize).min(rows.len() - n_train);
        out.train.extend_from_slice(&rows[..n_train]);
        out.validation.extend_from_slice(&rows[n_train..n_train + n_val]);
        out.test.extend_from_slice(&rows[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::class_counts;

    fn labels(counts: [usize; 3]) -> Vec<usize> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect()
    }

    #[test]
    fn proportional_counts() {
        let y = labels([50, 30, 20]);
        let s = stratified_split(&y, (0.6, 0.2, 0.2), 1).unwrap();
        let pick = |idx: &[usize]| class_counts(&idx.iter().map(|&i| y[i]).collect::<Vec<_>>());
        assert_eq!(s.train.len(), 60);
        assert_eq!(pick(&s.train), [30, 18, 12]);
        assert_eq!(pick(&s.validation), [10, 6, 4]);
        assert_eq!(pick(&s.test), [10, 6, 4]);
    }

    #[test]
    fn deterministic_and_covering() {
        let y = labels([17, 9, 6]);
        let a = stratified_split(&y, (0.6, 0.2, 0.2), 9).unwrap();
        let b = stratified_split(&y, (0.6, 0.2, 0.2), 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
    }

    #[test]
    fn contract_and_insufficient_errors() {
        let y = labels([10, 10, 10]);
        assert!(matches!(stratified_split(&y, (0.6, 0.2, 0.3), 0), Err(Error::Contract(_))));
        let y = labels([10, 10, 4]);
        assert!(matches!(stratified_split(&y, (0.6, 0.2, 0.2), 0), Err(Error::InsufficientData(_))));
    }
}
