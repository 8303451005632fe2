//! Brute-force nearest neighbours. Distances are squared Euclidean, summed
//! coordinate by coordinate; ties are broken by the lower row index.

use std::cmp::Ordering;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

fn closer(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` rows of `candidates` closest to row `query` (itself excluded),
/// nearest first. `data` is row-major with `width` columns.
pub fn k_nearest(data: &[f64], width: usize, query: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let q = &data[query * width..(query + 1) * width];
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for &c in candidates {
        if c == query {
            continue;
        }
        let d = squared_distance(q, &data[c * width..(c + 1) * width]);
        let item = (d, c);
        if best.len() == k {
            if closer(item, best[k - 1]) != Ordering::Less {
                continue;
            }
            best.pop();
        }
        let at = best.partition_point(|&b| closer(b, item) == Ordering::Less);
        best.insert(at, item);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lower_index() {
        // query at 0; rows 1..=3 all at distance 1
        let data = [0.0, 1.0, -1.0, 1.0, 5.0];
        let all: Vec<usize> = (0..5).collect();
        assert_eq!(k_nearest(&data, 1, 0, &all, 2), vec![1, 2]);
        assert_eq!(k_nearest(&data, 1, 0, &all, 4), vec![1, 2, 3, 4]);
        assert_eq!(k_nearest(&data, 1, 4, &all, 1), vec![1]);
    }
}
