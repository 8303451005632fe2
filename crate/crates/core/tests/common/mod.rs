//! Helpers shared by the integration tests: finite differences, fixtures and
//! brute-force oracles written independently of the library code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabsae::data::{Block, EncodedMatrix, FeatureLayout, ModelInput, N_CLASSES};
use tabsae::models::{Classifier, ParamStore};
use tabsae::tensor::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

/// `|a − n| / max(|a|, |n|, floor)`. The floor keeps gradients that are zero
/// up to rounding from dividing by nothing.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-6;

/// Worst relative error between backprop and central differences for a
/// scalar graph function of several inputs.
pub fn check_graph_fn(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> tabsae::Result<Var>) -> f64 {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    g.backward(out).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    let mut worst: f64 = 0.0;
    let mut vals = inputs.to_vec();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].len() {
            let x0 = inputs[i].data()[k];
            vals[i].data_mut()[k] = x0 + FD_STEP;
            let up = eval(&vals);
            vals[i].data_mut()[k] = x0 - FD_STEP;
            let down = eval(&vals);
            vals[i].data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[i][k], numeric, FD_FLOOR));
        }
    }
    worst
}

/// Reduces any output to a scalar with fixed random weights so that every
/// output element contributes to the gradient.
pub fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> tabsae::Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = random_tensor(&mut rng(seed), &shape, 1.0);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

/// Moves every parameter off its initial value so that no gradient is
/// trivially zero (zero-initialized heads, unit gains).
pub fn perturb_params(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for i in 0..store.len() {
        for v in store.get_mut(i).data_mut() {
            *v += r.gen_range(-scale..scale);
        }
    }
}

/// Worst relative error of a classifier's parameter gradients on a batch,
/// with dropout active under a fixed graph seed.
pub fn check_classifier(model: &mut dyn Classifier, input: &ModelInput, rows: &[usize], graph_seed: u64) -> f64 {
    let labels: Vec<usize> = rows.iter().map(|&r| input.labels[r]).collect();
    let loss_of = |m: &dyn Classifier| -> f64 {
        let mut g = Graph::training(graph_seed);
        let vars = m.params().bind(&mut g);
        let z = m.logits(&mut g, &vars, input, rows).unwrap();
        let l = g.softmax_cross_entropy(z, &labels).unwrap();
        g.value(l).item().unwrap()
    };
    let mut g = Graph::training(graph_seed);
    let vars = model.params().bind(&mut g);
    let z = model.logits(&mut g, &vars, input, rows).unwrap();
    let l = g.softmax_cross_entropy(z, &labels).unwrap();
    g.backward(l).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| g.grad(v).map_or_else(|| vec![0.0; model.params().get(i).len()], <[f64]>::to_vec))
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..grads.len() {
        for k in 0..grads[i].len() {
            let x0 = model.params().get(i).data()[k];
            model.params_mut().get_mut(i).data_mut()[k] = x0 + FD_STEP;
            let up = loss_of(model);
            model.params_mut().get_mut(i).data_mut()[k] = x0 - FD_STEP;
            let down = loss_of(model);
            model.params_mut().get_mut(i).data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[i][k], numeric, FD_FLOOR));
        }
    }
    worst
}

/// Random index-form input with every class present.
pub fn toy_input(seed: u64, n_rows: usize, vocab_sizes: &[usize], n_continuous: usize) -> ModelInput {
    let mut r = rng(seed);
    let categorical = (0..n_rows)
        .flat_map(|_| vocab_sizes.iter().map(|&v| r.gen_range(0..v)).collect::<Vec<_>>())
        .collect();
    let continuous = (0..n_rows * n_continuous).map(|_| r.gen_range(-2.0..2.0)).collect();
    let labels = (0..n_rows).map(|i| i % N_CLASSES).collect();
    ModelInput {
        n_rows,
        categorical,
        vocab_sizes: vocab_sizes.to_vec(),
        continuous,
        n_continuous,
        labels,
    }
}

pub fn continuous_matrix(width: usize, data: Vec<f64>, labels: Vec<usize>) -> EncodedMatrix {
    let blocks = (0..width)
        .map(|j| Block::Continuous {
            column: format!("x{j}"),
        })
        .collect();
    EncodedMatrix::new(FeatureLayout { blocks }, data, labels).unwrap()
}

/// Class-clustered Gaussian rows; a share of rows is duplicated and values
/// are rounded to a coarse grid so that distance ties occur.
pub fn resample_fixture(seed: u64, counts: [usize; N_CLASSES], width: usize) -> EncodedMatrix {
    let mut r = rng(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            if i > 0 && r.gen_bool(0.1) {
                let start = data.len() - width;
                let prev: Vec<f64> = data[start..].to_vec();
                data.extend(prev);
            } else {
                for _ in 0..width {
                    let v: f64 = c as f64 * 0.8 + r.gen_range(-1.5..1.5);
                    data.push((v * 4.0).round() / 4.0);
                }
            }
            labels.push(c);
        }
    }
    continuous_matrix(width, data, labels)
}

// ---------------------------------------------------------------------------
// SMOTE + ENN oracle: full sorts instead of bounded insertion, removal by
// rebuilding the row list.

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

fn sorted_neighbours(rows: &[Vec<f64>], q: usize, pool: &[usize], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&j| j != q)
        .map(|&j| (dist2(&rows[q], &rows[j]), j))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}

pub struct OracleOutput {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub synthetic: Vec<bool>,
    /// For every synthetic row before cleaning: the two parents.
    pub parents: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

/// Random stream: for each minority class in index order and each new row,
/// `gen_range(0..members)`, `gen_range(0..k)`, then `λ = gen::<f64>()`.
pub fn smoteenn_oracle(m: &EncodedMatrix, smote_k: usize, enn_k: usize, seed: u64) -> OracleOutput {
    let w = m.width();
    let mut rows: Vec<Vec<f64>> = m.data.chunks(w).map(<[f64]>::to_vec).collect();
    let mut labels = m.labels.clone();
    let mut synthetic = vec![false; rows.len()];
    let mut parents = Vec::new();
    let mut counts = [0usize; N_CLASSES];
    for &y in &m.labels {
        counts[y] += 1;
    }
    let target = *counts.iter().max().unwrap();
    let mut r = rng(seed);
    let original = rows.clone();
    for c in 0..N_CLASSES {
        if counts[c] >= target {
            continue;
        }
        let members: Vec<usize> = (0..original.len()).filter(|&i| m.labels[i] == c).collect();
        for _ in 0..target - counts[c] {
            let pick = r.gen_range(0..members.len());
            let nn_list = sorted_neighbours(&original, members[pick], &members, smote_k);
            let nn = nn_list[r.gen_range(0..smote_k)];
            let lambda: f64 = r.gen();
            let (x, y) = (&original[members[pick]], &original[nn]);
            let s: Vec<f64> = (0..w).map(|j| x[j] + lambda * (y[j] - x[j])).collect();
            parents.push((s.clone(), x.clone(), y.clone()));
            rows.push(s);
            labels.push(c);
            synthetic.push(true);
        }
    }
    let all: Vec<usize> = (0..rows.len()).collect();
    let mut keep = Vec::new();
    for i in 0..rows.len() {
        let mut votes = [0usize; N_CLASSES];
        for j in sorted_neighbours(&rows, i, &all, enn_k) {
            votes[labels[j]] += 1;
        }
        let (best, &top) = votes.iter().enumerate().max_by_key(|(_, &v)| v).unwrap();
        let remove = 2 * top > enn_k && best != labels[i];
        if !remove {
            keep.push(i);
        }
    }
    OracleOutput {
        rows: keep.iter().map(|&i| rows[i].clone()).collect(),
        labels: keep.iter().map(|&i| labels[i]).collect(),
        synthetic: keep.iter().map(|&i| synthetic[i]).collect(),
        parents,
    }
}

// ---------------------------------------------------------------------------
// Metric oracles.

/// AUC as the Mann–Whitney statistic over all positive/negative pairs.
pub fn mann_whitney(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        if !positive[i] {
            continue;
        }
        for j in 0..scores.len() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// `(precision, recall, f1)` of class `c` straight from a confusion matrix,
/// zero where undefined.
pub fn prf_oracle(cm: &[Vec<usize>], c: usize) -> (f64, f64, f64) {
    let tp = cm[c][c] as f64;
    let predicted: f64 = cm.iter().map(|row| row[c] as f64).sum();
    let actual: f64 = cm[c].iter().map(|&v| v as f64).sum();
    let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let r = if actual > 0.0 { tp / actual } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
