use vancl::backbone::{build_flow, init_params, Dropout, Flow, Graph, ModelConfig, ModelParams, Scalar};
use vancl::vancl::{dropout_seed, TrainConfig};

/// Single-flow training written out from scratch: standard flow, cross entropy, Adam.
pub struct ReferenceTrainer<T: Scalar> {
    cfg: ModelConfig,
    pub params: ModelParams<T>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
    seed: u64,
    lr: f64,
    betas: (f64, f64),
}

impl<T: Scalar> ReferenceTrainer<T> {
    pub fn new(cfg: ModelConfig, tc: &TrainConfig) -> Self {
        let (params, _) = init_params::<T>(&cfg, tc.seed);
        let zeros: Vec<Vec<T>> = params.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            params,
            t: 0,
            seed: tc.seed,
            lr: tc.lr,
            betas: tc.adam_betas,
        }
    }

    pub fn step(&mut self, batch: &vancl::backbone::TokenBatch) -> f64 {
        let mut drop = Dropout::new(dropout_seed(self.seed, self.t as u64, 0), self.cfg.dropout_p);
        let mut g = Graph::new();
        let f = build_flow(&mut g, &self.cfg, &self.params, None, batch, Flow::Sl, Some(&mut drop)).unwrap();
        let loss = g.cross_entropy(f.logits, f.gold);
        let grads = g.backward(loss);
        self.t += 1;
        let (b1, b2) = (T::lit(self.betas.0), T::lit(self.betas.1));
        let c1 = T::lit(1.0 - self.betas.0.powi(self.t));
        let c2 = T::lit(1.0 - self.betas.1.powi(self.t));
        let (lr, eps, one) = (T::lit(self.lr), T::lit(1e-8), T::one());
        for (k, p) in self.params.params_mut().into_iter().enumerate() {
            let Some(gr) = grads.get(p.id) else { continue };
            for i in 0..gr.len() {
                self.m[k][i] = b1 * self.m[k][i] + (one - b1) * gr[i];
                self.v[k][i] = b2 * self.v[k][i] + (one - b2) * gr[i] * gr[i];
                p.value.data[i] -= lr * (self.m[k][i] / c1) / ((self.v[k][i] / c2).sqrt() + eps);
            }
        }
        g.scalar(loss).to_f64_lossless()
    }
}
