use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::tensor::{Graph, Var};

/// Adam with decoupled weight decay: `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. A `None` gradient counts as zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<&[f64]>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::dim(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.len() != store.get(i).len() {
                    return Err(Error::dim(format!("gradient shape mismatch for {}", store.name(i))));
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient for {}", store.name(i))));
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                p[j] -= lr * (self.weight_decay * p[j] + update);
            }
        }
        Ok(())
    }
}

/// Gradients of the bound parameters after `backward`.
pub fn collect_grads<'a>(g: &'a Graph, vars: &[Var]) -> Vec<Option<&'a [f64]>> {
    vars.iter().map(|&v| g.grad(v)).collect()
}

/// Step decay: `lr · gamma^⌊epoch / step_size⌋`.
pub fn step_lr(lr: f64, gamma: f64, step_size: usize, epoch: usize) -> f64 {
    lr * gamma.powi((epoch / step_size) as i32)
}
