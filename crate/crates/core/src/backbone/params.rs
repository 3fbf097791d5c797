//! Named, id-tagged parameter tensors and their seeded initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{CnnSpec, ModelConfig};
use super::tensor::{Scalar, Tensor};

/// Stable identity of a trainable tensor. Two flows sharing a tensor share its id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub u32);

pub const BACKBONE_ID_BASE: u32 = 0;
pub const OUTER_ID_BASE: u32 = 1 << 20;
pub const VE_BACKBONE_ID_BASE: u32 = 2 << 20;
pub const PEER_ID_BASE: u32 = 3 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor<T>,
}

struct ParamFactory {
    rng: ChaCha8Rng,
    next_id: u32,
    prefix: String,
}

impl ParamFactory {
    fn new(seed: u64, id_base: u32, prefix: &str) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: id_base,
            prefix: prefix.to_string(),
        }
    }

    fn make<T: Scalar>(&mut self, name: &str, value: Tensor<T>) -> Param<T> {
        let id = ParamId(self.next_id);
        self.next_id += 1;
        Param {
            id,
            name: format!("{}.{name}", self.prefix),
            value,
        }
    }

    /// Standard normal scaled by `1/sqrt(fan_in)`.
    fn scaled<T: Scalar>(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Param<T> {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::lit(z * scale)
            })
            .collect();
        self.make(name, Tensor::from_vec(shape, data))
    }

    fn zeros<T: Scalar>(&mut self, name: &str, shape: &[usize]) -> Param<T> {
        self.make(name, Tensor::zeros(shape))
    }

    fn ones<T: Scalar>(&mut self, name: &str, shape: &[usize]) -> Param<T> {
        let n = shape.iter().product();
        self.make(name, Tensor::from_vec(shape, vec![T::one(); n]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams<T> {
    /// `(weight [9*c_in, c_out], bias [c_out])` per conv layer.
    pub convs: Vec<(Param<T>, Param<T>)>,
    pub proj_w: Param<T>,
    pub proj_b: Param<T>,
}

impl<T: Scalar> CnnParams<T> {
    fn init(f: &mut ParamFactory, spec: &CnnSpec, cfg: &ModelConfig, prefix: &str) -> Self {
        let mut c_in = 3;
        let mut convs = Vec::with_capacity(spec.depth);
        for l in 0..spec.depth {
            let w = f.scaled(&format!("{prefix}conv{l}.w"), &[9 * c_in, spec.channels], 9 * c_in);
            let b = f.zeros(&format!("{prefix}conv{l}.b"), &[spec.channels]);
            convs.push((w, b));
            c_in = spec.channels;
        }
        let feat = cfg.encoder_features(spec);
        Self {
            convs,
            proj_w: f.scaled(&format!("{prefix}proj.w"), &[feat, cfg.d_model], feat),
            proj_b: f.zeros(&format!("{prefix}proj.b"), &[cfg.d_model]),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.convs.iter().flat_map(|(w, b)| [w, b]).collect();
        out.extend([&self.proj_w, &self.proj_b]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.convs.iter_mut().flat_map(|(w, b)| [w, b]).collect();
        out.extend([&mut self.proj_w, &mut self.proj_b]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub wq: Param<T>,
    pub bq: Param<T>,
    pub wk: Param<T>,
    pub bk: Param<T>,
    pub wv: Param<T>,
    pub bv: Param<T>,
    pub wo: Param<T>,
    pub bo: Param<T>,
    pub ln1_g: Param<T>,
    pub ln1_b: Param<T>,
    pub w1: Param<T>,
    pub b1: Param<T>,
    pub w2: Param<T>,
    pub b2: Param<T>,
    pub ln2_g: Param<T>,
    pub ln2_b: Param<T>,
    /// Per-head attention bias, `[REL_ROWS, n_heads]`.
    pub rel_bias: Param<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn init(f: &mut ParamFactory, cfg: &ModelConfig, l: usize) -> Self {
        let (d, h) = (cfg.d_model, cfg.ffn_dim);
        let p = |s: &str| format!("layers.{l}.{s}");
        Self {
            wq: f.scaled(&p("attn.wq"), &[d, d], d),
            bq: f.zeros(&p("attn.bq"), &[d]),
            wk: f.scaled(&p("attn.wk"), &[d, d], d),
            bk: f.zeros(&p("attn.bk"), &[d]),
            wv: f.scaled(&p("attn.wv"), &[d, d], d),
            bv: f.zeros(&p("attn.bv"), &[d]),
            wo: f.scaled(&p("attn.wo"), &[d, d], d),
            bo: f.zeros(&p("attn.bo"), &[d]),
            ln1_g: f.ones(&p("ln1.g"), &[d]),
            ln1_b: f.zeros(&p("ln1.b"), &[d]),
            w1: f.scaled(&p("ffn.w1"), &[d, h], d),
            b1: f.zeros(&p("ffn.b1"), &[h]),
            w2: f.scaled(&p("ffn.w2"), &[h, d], h),
            b2: f.zeros(&p("ffn.b2"), &[d]),
            ln2_g: f.ones(&p("ln2.g"), &[d]),
            ln2_b: f.zeros(&p("ln2.b"), &[d]),
            rel_bias: f.zeros(&p("attn.rel_bias"), &[REL_ROWS, cfg.n_heads]),
        }
    }

    fn params(&self) -> [&Param<T>; 17] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.ln1_g, &self.ln1_b,
            &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_g, &self.ln2_b, &self.rel_bias,
        ]
    }

    fn params_mut(&mut self) -> [&mut Param<T>; 17] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.rel_bias,
        ]
    }
}

/// Largest relative offset with its own bias row; larger offsets are clipped.
pub const REL_MAX: usize = 8;
/// Bias rows: token offset, then x1 and y1 bucket offsets, `2 * REL_MAX + 1` each.
pub const REL_ROWS: usize = 3 * (2 * REL_MAX + 1);

/// Index into [`ModelParams::layout_emb`].
pub const LAYOUT_FEATURES: [&str; 6] = ["x1", "y1", "x2", "y2", "w", "h"];

/// Backbone weights shared by both flows, including the inner visual encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub tok_emb: Param<T>,
    pub pos_emb: Param<T>,
    pub layout_emb: Vec<Param<T>>,
    pub emb_ln_g: Param<T>,
    pub emb_ln_b: Param<T>,
    pub layers: Vec<LayerParams<T>>,
    pub inner: CnnParams<T>,
    pub cls_w: Param<T>,
    pub cls_b: Param<T>,
}

impl<T: Scalar> ModelParams<T> {
    fn init(f: &mut ParamFactory, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            tok_emb: f.scaled("tok_emb", &[cfg.vocab_size, d], d),
            pos_emb: f.scaled("pos_emb", &[cfg.max_seq_len, d], d),
            layout_emb: LAYOUT_FEATURES
                .iter()
                .map(|n| f.scaled(&format!("layout_emb.{n}"), &[cfg.layout_buckets, d], d))
                .collect(),
            emb_ln_g: f.ones("emb_ln.g", &[d]),
            emb_ln_b: f.zeros("emb_ln.b", &[d]),
            layers: (0..cfg.n_layers).map(|l| LayerParams::init(f, cfg, l)).collect(),
            inner: CnnParams::init(f, &cfg.inner_encoder, cfg, "inner."),
            cls_w: f.scaled("cls.w", &[d, cfg.n_tags], d),
            cls_b: f.zeros("cls.b", &[cfg.n_tags]),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        out.extend(self.layout_emb.iter());
        out.extend([&self.emb_ln_g, &self.emb_ln_b]);
        for l in &self.layers {
            out.extend(l.params());
        }
        out.extend(self.inner.params());
        out.extend([&self.cls_w, &self.cls_b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        out.extend(self.layout_emb.iter_mut());
        out.extend([&mut self.emb_ln_g, &mut self.emb_ln_b]);
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out.extend(self.inner.params_mut());
        out.extend([&mut self.cls_w, &mut self.cls_b]);
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.all_finite())
    }

    /// A copy with fresh ids starting at `id_base` and names under `prefix`.
    pub fn relabeled(&self, id_base: u32, prefix: &str) -> Self {
        let mut out = self.clone();
        for (i, p) in out.params_mut().into_iter().enumerate() {
            p.id = ParamId(id_base + i as u32);
            let local = p.name.split_once('.').map(|(_, rest)| rest.to_string()).unwrap_or_default();
            p.name = format!("{prefix}.{local}");
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out: ModelParams<U> = ModelParams {
            tok_emb: cast_param(&self.tok_emb),
            pos_emb: cast_param(&self.pos_emb),
            layout_emb: self.layout_emb.iter().map(cast_param).collect(),
            emb_ln_g: cast_param(&self.emb_ln_g),
            emb_ln_b: cast_param(&self.emb_ln_b),
            layers: Vec::new(),
            inner: cast_cnn(&self.inner),
            cls_w: cast_param(&self.cls_w),
            cls_b: cast_param(&self.cls_b),
        };
        out.layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                wq: cast_param(&l.wq),
                bq: cast_param(&l.bq),
                wk: cast_param(&l.wk),
                bk: cast_param(&l.bk),
                wv: cast_param(&l.wv),
                bv: cast_param(&l.bv),
                wo: cast_param(&l.wo),
                bo: cast_param(&l.bo),
                ln1_g: cast_param(&l.ln1_g),
                ln1_b: cast_param(&l.ln1_b),
                w1: cast_param(&l.w1),
                b1: cast_param(&l.b1),
                w2: cast_param(&l.w2),
                b2: cast_param(&l.b2),
                ln2_g: cast_param(&l.ln2_g),
                ln2_b: cast_param(&l.ln2_b),
                rel_bias: cast_param(&l.rel_bias),
            })
            .collect();
        out
    }
}

fn cast_param<T: Scalar, U: Scalar>(p: &Param<T>) -> Param<U> {
    Param {
        id: p.id,
        name: p.name.clone(),
        value: p.value.cast(),
    }
}

fn cast_cnn<T: Scalar, U: Scalar>(c: &CnnParams<T>) -> CnnParams<U> {
    CnnParams {
        convs: c.convs.iter().map(|(w, b)| (cast_param(w), cast_param(b))).collect(),
        proj_w: cast_param(&c.proj_w),
        proj_b: cast_param(&c.proj_b),
    }
}

/// Weights that only the vision-enhanced flow uses; dropped at deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterEncoderParams<T> {
    pub cnn: Option<CnnParams<T>>,
}

impl<T: Scalar> OuterEncoderParams<T> {
    pub fn params(&self) -> Vec<&Param<T>> {
        self.cnn.as_ref().map(|c| c.params()).unwrap_or_default()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.cnn.as_mut().map(|c| c.params_mut()).unwrap_or_default()
    }

    pub fn n_scalars(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> OuterEncoderParams<U> {
        OuterEncoderParams {
            cnn: self.cnn.as_ref().map(cast_cnn),
        }
    }
}

const OUTER_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seeded initialization; the backbone and the outer encoder draw from separate streams,
/// so the backbone does not depend on the outer encoder's configuration.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> (ModelParams<T>, OuterEncoderParams<T>) {
    let mut f = ParamFactory::new(seed, BACKBONE_ID_BASE, "backbone");
    let params = ModelParams::init(&mut f, cfg);
    let mut fo = ParamFactory::new(seed ^ OUTER_SEED_SALT, OUTER_ID_BASE, "outer");
    let outer = OuterEncoderParams {
        cnn: cfg.outer_encoder.as_ref().map(|s| CnnParams::init(&mut fo, s, cfg, "")),
    };
    (params, outer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            n_tags: 7,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let (a, ao) = init_params::<f32>(&cfg(), 0);
        let (b, bo) = init_params::<f32>(&cfg(), 0);
        assert_eq!(a, b);
        assert_eq!(ao, bo);
        let (c, _) = init_params::<f32>(&cfg(), 1);
        assert_ne!(a, c);
        assert!(a.all_finite());
    }

    #[test]
    fn biases_zero_and_ids_unique() {
        let (p, o) = init_params::<f64>(&cfg(), 3);
        assert!(p.cls_b.value.data.iter().all(|&x| x == 0.0));
        let mut ids: Vec<_> = p.params().iter().chain(o.params().iter()).map(|q| q.id).collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert!(o.params().iter().all(|q| q.name.starts_with("outer.")));
        assert!(p.params().iter().all(|q| q.name.starts_with("backbone.")));
    }

    #[test]
    fn backbone_independent_of_outer_config() {
        let (a, _) = init_params::<f32>(&cfg(), 5);
        let other = ModelConfig {
            outer_encoder: None,
            ..cfg()
        };
        let (b, o) = init_params::<f32>(&other, 5);
        assert_eq!(a, b);
        assert!(o.params().is_empty());
    }

    #[test]
    fn relabel_gives_fresh_ids() {
        let (a, _) = init_params::<f32>(&cfg(), 5);
        let b = a.relabeled(VE_BACKBONE_ID_BASE, "ve_backbone");
        assert_eq!(a.params().len(), b.params().len());
        assert!(b.params().iter().all(|p| p.id.0 >= VE_BACKBONE_ID_BASE && p.name.starts_with("ve_backbone.")));
        assert_eq!(a.tok_emb.value, b.tok_emb.value);
    }
}
