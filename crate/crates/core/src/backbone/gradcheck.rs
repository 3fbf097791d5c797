//! Finite-difference check of the backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::batch::TokenBatch;
use super::config::ModelConfig;
use super::forward::{build_flow, Flow};
use super::graph::Graph;
use super::params::{ModelParams, OuterEncoderParams};
use super::tensor::Scalar;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_err: f64,
    /// Parameter and element index of the worst probe.
    pub worst: (String, usize),
}

/// Mean cross entropy of one flow without dropout.
pub fn flow_loss<T: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    outer: Option<&OuterEncoderParams<T>>,
    batch: &TokenBatch,
    flow: Flow,
) -> Result<(Graph<T>, super::graph::NodeId)> {
    let mut g = Graph::new();
    let nodes = build_flow(&mut g, cfg, params, outer, batch, flow, None)?;
    let loss = g.cross_entropy(nodes.logits, nodes.gold);
    Ok((g, loss))
}

/// Compares analytic gradients in `A` with central differences of step `h` evaluated in `F`
/// at `n_probes` random parameter entries. The error of a probe is
/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients<A: Scalar, F: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<A>,
    outer: Option<&OuterEncoderParams<A>>,
    batch: &TokenBatch,
    flow: Flow,
    n_probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck> {
    let (g, loss) = flow_loss(cfg, params, outer, batch, flow)?;
    let grads = g.backward(loss);

    let mut fp: ModelParams<F> = params.cast();
    let mut fo: Option<OuterEncoderParams<F>> = outer.map(|o| o.cast());
    let analytic: Vec<(String, Vec<f64>)> = params
        .params()
        .into_iter()
        .chain(outer.map(|o| o.params()).unwrap_or_default())
        .map(|p| {
            let g = grads
                .get(p.id)
                .map(|g| g.iter().map(|v| v.to_f64_lossless()).collect())
                .unwrap_or_else(|| vec![0.0; p.value.len()]);
            (p.name.clone(), g)
        })
        .collect();
    let n_backbone = params.params().len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck {
        probes: 0,
        max_rel_err: 0.0,
        worst: (String::new(), 0),
    };
    for _ in 0..n_probes {
        let k = rng.gen_range(0..analytic.len());
        let i = rng.gen_range(0..analytic[k].1.len());
        let orig = get(&mut fp, &mut fo, n_backbone, k, i);
        let mut eval = |delta: f64| -> Result<f64> {
            set(&mut fp, &mut fo, n_backbone, k, i, orig + F::lit(delta));
            let r = flow_loss(cfg, &fp, fo.as_ref(), batch, flow).map(|(g, l)| g.scalar(l).to_f64_lossless());
            set(&mut fp, &mut fo, n_backbone, k, i, orig);
            r
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        let a = analytic[k].1[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        out.probes += 1;
        if err > out.max_rel_err {
            out.max_rel_err = err;
            out.worst = (analytic[k].0.clone(), i);
        }
    }
    Ok(out)
}

fn get<F: Scalar>(fp: &mut ModelParams<F>, fo: &mut Option<OuterEncoderParams<F>>, nb: usize, k: usize, i: usize) -> F {
    let mut v = F::zero();
    set_with(fp, fo, nb, k, i, |x| v = *x);
    v
}

fn set<F: Scalar>(fp: &mut ModelParams<F>, fo: &mut Option<OuterEncoderParams<F>>, nb: usize, k: usize, i: usize, value: F) {
    set_with(fp, fo, nb, k, i, |x| *x = value);
}

fn set_with<F: Scalar>(
    fp: &mut ModelParams<F>,
    fo: &mut Option<OuterEncoderParams<F>>,
    nb: usize,
    k: usize,
    i: usize,
    f: impl FnOnce(&mut F),
) {
    if k < nb {
        f(&mut fp.params_mut()[k].value.data[i]);
    } else {
        let o = fo.as_mut().expect("outer probes need outer params");
        f(&mut o.params_mut()[k - nb].value.data[i]);
    }
}
