use std::collections::HashMap;

use crate::backbone::{Gradients, Param, ParamId, Scalar};

/// Adam without weight decay or warmup.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    t: i32,
    state: HashMap<ParamId, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, betas: (f64, f64)) -> Self {
        Self {
            lr,
            betas,
            eps: 1e-8,
            t: 0,
            state: HashMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update of every parameter that has a gradient in `grads`.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>, grads: &Gradients<T>) {
        self.t += 1;
        let (b1, b2) = (T::lit(self.betas.0), T::lit(self.betas.1));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let c1 = T::lit(1.0 - self.betas.0.powi(self.t));
        let c2 = T::lit(1.0 - self.betas.1.powi(self.t));
        let lr = T::lit(self.lr);
        for p in params {
            let Some(g) = grads.get(p.id) else { continue };
            let n = p.value.len();
            let (m, v) = self.state.entry(p.id).or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            for i in 0..n {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.value.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
