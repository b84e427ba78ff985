//! Forward/backward passes and the deterministic training demo.
//!
//! Gradients are derived by hand; the layer stack is small enough that
//! an explicit cache of every intermediate keeps the backward pass
//! readable. Only adapter factors, the token embedding table and the
//! output head receive updates. Base projection matrices, the position
//! table and the visual connector are frozen.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapters::LoraLinear;
use crate::error::{AmrgError, Result};
use crate::linalg::Mat;

use super::{
    causal_mask, log_sum_exp, teacher_prefix, Arch, DecoderState, Sequence, TrainConfig,
    TinyVocab, VisualFeatures,
};

pub(crate) const SITES: [&str; 6] = [
    "self_attn.query",
    "self_attn.key",
    "self_attn.value",
    "cross_attn.query",
    "cross_attn.key",
    "cross_attn.value",
];

fn site_layer<'a>(state: &'a DecoderState, site: &str) -> &'a LoraLinear {
    match site {
        "self_attn.query" => &state.self_q,
        "self_attn.key" => &state.self_k,
        "self_attn.value" => &state.self_v,
        "cross_attn.query" => &state.cross_q,
        "cross_attn.key" => &state.cross_k,
        "cross_attn.value" => &state.cross_v,
        other => panic!("unknown site {other}"),
    }
}

fn site_layer_mut<'a>(state: &'a mut DecoderState, site: &str) -> &'a mut LoraLinear {
    match site {
        "self_attn.query" => &mut state.self_q,
        "self_attn.key" => &mut state.self_k,
        "self_attn.value" => &mut state.self_v,
        "cross_attn.query" => &mut state.cross_q,
        "cross_attn.key" => &mut state.cross_k,
        "cross_attn.value" => &mut state.cross_v,
        other => panic!("unknown site {other}"),
    }
}

/// Sites the forward pass of an architecture actually exercises.
fn used_sites(arch: Arch) -> &'static [&'static str] {
    match arch {
        Arch::Instruct => &SITES[..3],
        Arch::CrossAttn => &SITES,
    }
}

/// Per-site inverted-dropout masks on adapter inputs.
#[derive(Debug, Clone, Default)]
pub(crate) struct SiteMasks {
    map: BTreeMap<&'static str, Mat>,
}

impl SiteMasks {
    fn get(&self, site: &str) -> Option<&Mat> {
        self.map.get(site)
    }
}

/// Samples dropout masks for every adapter site used by `arch`, in a
/// fixed order so training stays seed-deterministic. Returns `None` when
/// dropout is off everywhere.
fn sample_masks(
    state: &DecoderState,
    arch: Arch,
    seq_rows: usize,
    vis_rows: usize,
    rng: &mut ChaCha8Rng,
) -> Option<SiteMasks> {
    let mut map = BTreeMap::new();
    let mut any = false;
    for &site in used_sites(arch) {
        let layer = site_layer(state, site);
        let p = layer.dropout_p();
        let rows = if site.starts_with("cross_attn.key") || site.starts_with("cross_attn.value") {
            vis_rows
        } else {
            seq_rows
        };
        let cols = layer.in_dim();
        if p > 0.0 {
            any = true;
            let keep = 1.0 / (1.0 - p);
            map.insert(
                site,
                Mat::from_fn(rows, cols, |_, _| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                }),
            );
        }
    }
    if any {
        Some(SiteMasks { map })
    } else {
        None
    }
}

/// Adapter row-batch forward with an optional dropout mask on the
/// adapter input path: `y = x W^T + s (x o mask) B^T A^T`.
fn lora_apply(layer: &LoraLinear, x: &Mat, mask: Option<&Mat>) -> Mat {
    match mask {
        None => layer.apply_rows(x),
        Some(m) => {
            let mut out = x.matmul(&layer.w().transpose());
            let masked = hadamard(x, m);
            let low = masked.matmul(&layer.b().transpose());
            out.add_scaled(&low.matmul(&layer.a().transpose()), layer.scaling());
            out
        }
    }
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let mut out = a.clone();
    for (o, &m) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o *= m;
    }
    out
}

/// Gradients of the adapter application. Returns (dA, dB, dX).
fn lora_backward(
    layer: &LoraLinear,
    x: &Mat,
    mask: Option<&Mat>,
    d_out: &Mat,
) -> (Mat, Mat, Mat) {
    let s = layer.scaling();
    let xm = match mask {
        None => x.clone(),
        Some(m) => hadamard(x, m),
    };
    let low = xm.matmul(&layer.b().transpose()); // T x r
    let mut da = d_out.transpose().matmul(&low); // d x r
    da.scale(s);
    let mut db = layer
        .a()
        .transpose()
        .matmul(&d_out.transpose())
        .matmul(&xm); // r x k
    db.scale(s);

    let mut dx = d_out.matmul(layer.w()); // T x k
    let mut adapter_dx = d_out.matmul(layer.a()).matmul(layer.b()); // T x k
    adapter_dx.scale(s);
    if let Some(m) = mask {
        adapter_dx = hadamard(&adapter_dx, m);
    }
    dx.add_scaled(&adapter_dx, 1.0);
    (da, db, dx)
}

/// Row-softmax backward: `dS_ij = P_ij (dP_ij - sum_k dP_ik P_ik)`.
fn softmax_backward(p: &Mat, dp: &Mat) -> Mat {
    let mut ds = Mat::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let dot: f64 = p.row(r).iter().zip(dp.row(r)).map(|(&a, &b)| a * b).sum();
        for c in 0..p.cols() {
            ds.set(r, c, p.get(r, c) * (dp.get(r, c) - dot));
        }
    }
    ds
}

/// Everything the backward pass needs from a forward run.
pub(crate) struct ForwardCache {
    x0: Mat,
    token_rows: Vec<Option<usize>>,
    qs: Mat,
    ks: Mat,
    vs: Mat,
    ps: Mat,
    h1: Mat,
    cross: Option<CrossCache>,
    h_final: Mat,
    out_start: usize,
    pub(crate) logits: Mat,
}

struct CrossCache {
    vis: Mat,
    qc: Mat,
    kc: Mat,
    vc: Mat,
    pc: Mat,
}

/// Runs a teacher-forcing forward pass over `prefix`, returning one
/// next-token logit row per prefix position (instruct mode returns only
/// the report region). `masks` enables adapter dropout during training.
pub(crate) fn forward_pass(
    state: &DecoderState,
    arch: Arch,
    vis: &VisualFeatures,
    inst: &[usize],
    prefix: &[usize],
    masks: Option<&SiteMasks>,
) -> Result<(Mat, ForwardCache)> {
    if vis.dim() != state.d_v {
        return Err(AmrgError::Dimension(format!(
            "visual width {} does not match d_v = {}",
            vis.dim(),
            state.d_v
        )));
    }

    // Assemble input rows.
    let vis_rows = match arch {
        Arch::Instruct => vis.tokens(),
        Arch::CrossAttn => 0,
    };
    let total = vis_rows + inst.len() + prefix.len();
    if total > state.max_len {
        return Err(AmrgError::Overlong {
            len: total,
            max: state.max_len,
        });
    }
    let mut token_rows: Vec<Option<usize>> = vec![None; vis_rows];
    token_rows.extend(inst.iter().chain(prefix).map(|&id| Some(id)));
    for id in token_rows.iter().flatten() {
        if *id >= state.vocab_size {
            return Err(AmrgError::InvalidInput(format!(
                "token id {id} outside vocabulary of {}",
                state.vocab_size
            )));
        }
    }

    let projected_vis = match arch {
        Arch::Instruct => Some(vis.mat().matmul(&state.vis_proj)),
        Arch::CrossAttn => None,
    };
    let x0 = Mat::from_fn(total, state.d_model, |r, c| {
        let base = match token_rows[r] {
            Some(id) => state.embed.get(id, c),
            None => projected_vis.as_ref().expect("visual rows only in instruct").get(r, c),
        };
        base + state.pos.get(r, c)
    });

    // Masked self-attention.
    let qs = lora_apply(&state.self_q, &x0, masks.and_then(|m| m.get("self_attn.query")));
    let ks = lora_apply(&state.self_k, &x0, masks.and_then(|m| m.get("self_attn.key")));
    let vs = lora_apply(&state.self_v, &x0, masks.and_then(|m| m.get("self_attn.value")));
    let (ps, h1) = super::attention_weights(&qs, &ks, &vs, Some(&causal_mask(total)))?;

    // Cross-attention over visual tokens.
    let (h_final, cross) = match arch {
        Arch::Instruct => (h1.clone(), None),
        Arch::CrossAttn => {
            let qc = lora_apply(&state.cross_q, &h1, masks.and_then(|m| m.get("cross_attn.query")));
            let kc = lora_apply(
                &state.cross_k,
                vis.mat(),
                masks.and_then(|m| m.get("cross_attn.key")),
            );
            let vc = lora_apply(
                &state.cross_v,
                vis.mat(),
                masks.and_then(|m| m.get("cross_attn.value")),
            );
            let (pc, h2) = super::attention_weights(&qc, &kc, &vc, None)?;
            (
                h2,
                Some(CrossCache {
                    vis: vis.mat().clone(),
                    qc,
                    kc,
                    vc,
                    pc,
                }),
            )
        }
    };

    // Output head over the report region.
    let out_start = vis_rows + inst.len();
    let out_rows = total - out_start;
    let logits = Mat::from_fn(out_rows, state.vocab_size, |r, c| {
        state
            .head_w
            .as_slice()
            .chunks(state.vocab_size)
            .enumerate()
            .map(|(d, row)| h_final.get(out_start + r, d) * row[c])
            .sum::<f64>()
            + state.head_b.get(0, c)
    });

    Ok((
        logits.clone(),
        ForwardCache {
            x0,
            token_rows,
            qs,
            ks,
            vs,
            ps,
            h1,
            cross,
            h_final,
            out_start,
            logits,
        },
    ))
}

/// Gradients for every trainable tensor.
#[derive(Debug, Clone)]
pub(crate) struct GradSet {
    pub embed: Mat,
    pub head_w: Mat,
    pub head_b: Mat,
    pub lora: BTreeMap<&'static str, (Mat, Mat)>,
}

impl GradSet {
    pub(crate) fn zeros(state: &DecoderState) -> Self {
        let lora = SITES
            .iter()
            .map(|&site| {
                let layer = site_layer(state, site);
                (
                    site,
                    (
                        Mat::zeros(layer.a().rows(), layer.a().cols()),
                        Mat::zeros(layer.b().rows(), layer.b().cols()),
                    ),
                )
            })
            .collect();
        GradSet {
            embed: Mat::zeros(state.embed.rows(), state.embed.cols()),
            head_w: Mat::zeros(state.head_w.rows(), state.head_w.cols()),
            head_b: Mat::zeros(1, state.head_b.cols()),
            lora,
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        self.embed.scale(s);
        self.head_w.scale(s);
        self.head_b.scale(s);
        for (da, db) in self.lora.values_mut() {
            da.scale(s);
            db.scale(s);
        }
    }
}

/// Backward pass for one sequence. Accumulates gradients of the SUM of
/// per-position negative log-likelihoods into `grads` and returns
/// (nll sum, position count).
pub(crate) fn backward(
    state: &DecoderState,
    arch: Arch,
    cache: &ForwardCache,
    targets: &[usize],
    masks: Option<&SiteMasks>,
    grads: &mut GradSet,
) -> Result<(f64, usize)> {
    let out_rows = cache.logits.rows();
    if targets.len() != out_rows {
        return Err(AmrgError::Dimension(format!(
            "{out_rows} logit rows for {} targets",
            targets.len()
        )));
    }

    // Loss and dLogits = softmax - onehot, per position.
    let mut nll_sum = 0.0;
    let mut d_logits = Mat::zeros(out_rows, state.vocab_size);
    for (t, &target) in targets.iter().enumerate() {
        let row = cache.logits.row(t);
        let lse = log_sum_exp(row);
        nll_sum += lse - row[target];
        for c in 0..state.vocab_size {
            d_logits.set(t, c, (row[c] - lse).exp());
        }
        d_logits.set(t, target, d_logits.get(t, target) - 1.0);
    }

    // Head: logits = H_out * head_w + head_b.
    let total = cache.h_final.rows();
    let h_out = Mat::from_fn(out_rows, state.d_model, |r, c| {
        cache.h_final.get(cache.out_start + r, c)
    });
    grads.head_w.add_scaled(&h_out.transpose().matmul(&d_logits), 1.0);
    for c in 0..state.vocab_size {
        let col_sum: f64 = (0..out_rows).map(|r| d_logits.get(r, c)).sum();
        grads.head_b.set(0, c, grads.head_b.get(0, c) + col_sum);
    }
    let d_h_out = d_logits.matmul(&state.head_w.transpose());
    let mut d_h_final = Mat::zeros(total, state.d_model);
    for r in 0..out_rows {
        for c in 0..state.d_model {
            d_h_final.set(cache.out_start + r, c, d_h_out.get(r, c));
        }
    }

    // Cross-attention backward (crossattn arch only).
    let d_h1 = match (&cache.cross, arch) {
        (Some(cross), Arch::CrossAttn) => {
            let scale = 1.0 / (state.d_model as f64).sqrt();
            let dpc = d_h_final.matmul(&cross.vc.transpose());
            let dvc = cross.pc.transpose().matmul(&d_h_final);
            let mut dsc = softmax_backward(&cross.pc, &dpc);
            dsc.scale(scale);
            let dqc = dsc.matmul(&cross.kc);
            let dkc = dsc.transpose().matmul(&cross.qc);

            let (da, db, d_h1) = lora_backward(
                &state.cross_q,
                &cache.h1,
                masks.and_then(|m| m.get("cross_attn.query")),
                &dqc,
            );
            accumulate(grads, "cross_attn.query", da, db);
            let (da, db, _) = lora_backward(
                &state.cross_k,
                &cross.vis,
                masks.and_then(|m| m.get("cross_attn.key")),
                &dkc,
            );
            accumulate(grads, "cross_attn.key", da, db);
            let (da, db, _) = lora_backward(
                &state.cross_v,
                &cross.vis,
                masks.and_then(|m| m.get("cross_attn.value")),
                &dvc,
            );
            accumulate(grads, "cross_attn.value", da, db);
            d_h1
        }
        _ => d_h_final,
    };

    // Self-attention backward.
    let scale = 1.0 / (state.d_model as f64).sqrt();
    let dps = d_h1.matmul(&cache.vs.transpose());
    let dvs = cache.ps.transpose().matmul(&d_h1);
    let mut dss = softmax_backward(&cache.ps, &dps);
    dss.scale(scale);
    let dqs = dss.matmul(&cache.ks);
    let dks = dss.transpose().matmul(&cache.qs);

    let mut d_x0 = Mat::zeros(total, state.d_model);
    for (site, d_site) in [
        ("self_attn.query", dqs),
        ("self_attn.key", dks),
        ("self_attn.value", dvs),
    ] {
        let (da, db, dx) = lora_backward(
            site_layer(state, site),
            &cache.x0,
            masks.and_then(|m| m.get(site)),
            &d_site,
        );
        accumulate(grads, site, da, db);
        d_x0.add_scaled(&dx, 1.0);
    }

    // Scatter into the embedding table; visual rows and the frozen
    // position table receive nothing.
    for (r, token) in cache.token_rows.iter().enumerate() {
        if let Some(id) = token {
            for c in 0..state.d_model {
                grads.embed.set(*id, c, grads.embed.get(*id, c) + d_x0.get(r, c));
            }
        }
    }

    Ok((nll_sum, out_rows))
}

fn accumulate(grads: &mut GradSet, site: &'static str, da: Mat, db: Mat) {
    let entry = grads.lora.get_mut(site).expect("all sites preallocated");
    entry.0.add_scaled(&da, 1.0);
    entry.1.add_scaled(&db, 1.0);
}

/// Mean loss and gradients of the mean over a batch, eval-mode (no
/// dropout). Used by gradient checking.
#[cfg(test)]
pub(crate) fn loss_and_grads(
    state: &DecoderState,
    arch: Arch,
    batch: &[Sequence],
) -> Result<(f64, GradSet)> {
    let mut grads = GradSet::zeros(state);
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in batch {
        let prefix = teacher_prefix(&seq.target);
        let inst: &[usize] = match arch {
            Arch::Instruct => &seq.inst,
            Arch::CrossAttn => &[],
        };
        let (_, cache) = forward_pass(state, arch, &seq.vis, inst, &prefix, None)?;
        let (nll, n) = backward(state, arch, &cache, &seq.target, None, &mut grads)?;
        total += nll;
        count += n;
    }
    grads.scale(1.0 / count as f64);
    Ok((total / count as f64, grads))
}

/// Decoupled-weight-decay Adam.
struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    moments: BTreeMap<String, (Mat, Mat)>,
}

impl AdamW {
    fn new(lr: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Update to add to `param` given its gradient.
    fn delta(&mut self, name: &str, param: &Mat, grad: &Mat) -> Mat {
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Mat::zeros(grad.rows(), grad.cols()), Mat::zeros(grad.rows(), grad.cols())));
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut delta = Mat::zeros(grad.rows(), grad.cols());
        for i in 0..grad.as_slice().len() {
            let g = grad.as_slice()[i];
            let mi = self.beta1 * m.as_slice()[i] + (1.0 - self.beta1) * g;
            let vi = self.beta2 * v.as_slice()[i] + (1.0 - self.beta2) * g * g;
            m.as_mut_slice()[i] = mi;
            v.as_mut_slice()[i] = vi;
            let step = (mi / bc1) / ((vi / bc2).sqrt() + self.eps)
                + self.weight_decay * param.as_slice()[i];
            delta.as_mut_slice()[i] = -self.lr * step;
        }
        delta
    }

    fn step(&mut self, state: &mut DecoderState, grads: &GradSet, arch: Arch) {
        self.t += 1;
        let d = self.delta("embed", &state.embed, &grads.embed);
        state.embed.add_scaled(&d, 1.0);
        let d = self.delta("head_w", &state.head_w, &grads.head_w);
        state.head_w.add_scaled(&d, 1.0);
        let d = self.delta("head_b", &state.head_b, &grads.head_b);
        state.head_b.add_scaled(&d, 1.0);
        for &site in used_sites(arch) {
            if !state.placement.contains(site) {
                continue;
            }
            let (ga, gb) = grads.lora.get(site).expect("all sites preallocated").clone();
            let layer = site_layer(state, site);
            let da = self.delta(&format!("{site}.a"), layer.a(), &ga);
            let db = self.delta(&format!("{site}.b"), layer.b(), &gb);
            let layer = site_layer_mut(state, site);
            layer.update_a(&da, 1.0);
            layer.update_b(&db, 1.0);
        }
    }
}

/// Loss curve and final parameters of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Mean loss per optimizer step.
    pub losses: Vec<f64>,
    pub state: DecoderState,
}

/// Trains the decoder on `corpus` for `steps` optimizer steps, each
/// accumulating gradients over `cfg.grad_accum` micro-batches of
/// `cfg.batch_size` sequences taken round-robin from the corpus.
///
/// Adapter dropout is driven by a generator seeded with `cfg.seed`, so
/// identical configurations produce bit-identical loss curves. Only
/// adapter factors at placement sites, the token embedding table and the
/// output head move; base weights stay bit-frozen.
pub fn train_demo(
    corpus: &[Sequence],
    cfg: &TrainConfig,
    arch: Arch,
    steps: usize,
    mut state: DecoderState,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(AmrgError::InvalidInput("training corpus is empty".into()));
    }
    for seq in corpus {
        if seq.target.is_empty() {
            return Err(AmrgError::InvalidInput("empty target sequence".into()));
        }
        if seq.target.contains(&TinyVocab::PAD) {
            return Err(AmrgError::InvalidInput("targets must not contain PAD".into()));
        }
    }

    let mut optimizer = AdamW::new(cfg.learning_rate);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(steps);

    for _ in 0..steps {
        let mut grads = GradSet::zeros(&state);
        let mut nll_total = 0.0;
        let mut count_total = 0usize;
        // Every step accumulates over the same corpus traversal, so the
        // recorded losses are comparable step to step.
        let mut cursor = 0usize;
        for _ in 0..cfg.grad_accum {
            for _ in 0..cfg.batch_size {
                let seq = &corpus[cursor % corpus.len()];
                cursor += 1;
                let prefix = teacher_prefix(&seq.target);
                let inst: &[usize] = match arch {
                    Arch::Instruct => &seq.inst,
                    Arch::CrossAttn => &[],
                };
                let vis_rows = match arch {
                    Arch::Instruct => seq.vis.tokens(),
                    Arch::CrossAttn => 0,
                };
                let seq_rows = vis_rows + inst.len() + prefix.len();
                let masks = sample_masks(&state, arch, seq_rows, seq.vis.tokens(), &mut dropout_rng);
                let (_, cache) =
                    forward_pass(&state, arch, &seq.vis, inst, &prefix, masks.as_ref())?;
                let (nll, n) = backward(&state, arch, &cache, &seq.target, masks.as_ref(), &mut grads)?;
                nll_total += nll;
                count_total += n;
            }
        }
        grads.scale(1.0 / count_total as f64);
        optimizer.step(&mut state, &grads, arch);
        losses.push(nll_total / count_total as f64);
    }

    Ok(TrainOutcome { losses, state })
}

#[cfg(test)]
mod tests {
    use super::super::toy;
    use super::*;
    use crate::adapters::PlacementManifest;

    fn tiny_state(seed: u64) -> DecoderState {
        DecoderState::new(11, 8, 3, 24, 2, 4.0, seed, PlacementManifest::default()).unwrap()
    }

    fn tiny_batch() -> Vec<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let vis = |rng: &mut ChaCha8Rng| {
            VisualFeatures::new(Mat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap()
        };
        vec![
            Sequence {
                vis: vis(&mut rng),
                inst: vec![4, 5],
                target: vec![6, 7, 8, 9, 2],
            },
            Sequence {
                vis: vis(&mut rng),
                inst: vec![5, 4],
                target: vec![9, 8, 10, 2],
            },
        ]
    }

    /// Central finite differences against the analytic gradient for every
    /// trainable scalar.
    fn check_gradients(arch: Arch) {
        let state = tiny_state(13);
        let batch = tiny_batch();
        let (_, grads) = loss_and_grads(&state, arch, &batch).unwrap();
        let h = 1e-5;
        let loss_of = |s: &DecoderState| super::super::batch_loss(s, arch, &batch).unwrap();

        let mut checked = 0usize;
        let mut check = |analytic: f64, plus: &DecoderState, minus: &DecoderState| {
            let numeric = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom <= 1e-3,
                "analytic {analytic} vs numeric {numeric}"
            );
            checked += 1;
        };

        fn dense_param<'a>(s: &'a mut DecoderState, name: &str) -> &'a mut Mat {
            match name {
                "embed" => &mut s.embed,
                "head_w" => &mut s.head_w,
                _ => &mut s.head_b,
            }
        }

        // Embedding, head weights, head bias.
        for (name, grad) in [
            ("embed", &grads.embed),
            ("head_w", &grads.head_w),
            ("head_b", &grads.head_b),
        ] {
            for r in 0..grad.rows() {
                for c in 0..grad.cols() {
                    let mut plus = state.clone();
                    let mut minus = state.clone();
                    let base = dense_param(&mut plus, name).get(r, c);
                    dense_param(&mut plus, name).set(r, c, base + h);
                    dense_param(&mut minus, name).set(r, c, base - h);
                    check(grad.get(r, c), &plus, &minus);
                }
            }
        }

        // Adapter factors at every site the architecture uses.
        for &site in used_sites(arch) {
            let (ga, gb) = &grads.lora[site];
            for (which, grad) in [("a", ga), ("b", gb)] {
                for r in 0..grad.rows() {
                    for c in 0..grad.cols() {
                        let mut bump = Mat::zeros(grad.rows(), grad.cols());
                        bump.set(r, c, h);
                        let mut plus = state.clone();
                        let mut minus = state.clone();
                        let apply = |s: &mut DecoderState, sign: f64| {
                            let layer = site_layer_mut(s, site);
                            if which == "a" {
                                layer.update_a(&bump, sign);
                            } else {
                                layer.update_b(&bump, sign);
                            }
                        };
                        apply(&mut plus, 1.0);
                        apply(&mut minus, -1.0);
                        check(grad.get(r, c), &plus, &minus);
                    }
                }
            }
        }
        assert!(checked > 100, "checked only {checked} parameters");
    }

    #[test]
    fn gradients_match_finite_differences_crossattn() {
        check_gradients(Arch::CrossAttn);
    }

    #[test]
    fn gradients_match_finite_differences_instruct() {
        check_gradients(Arch::Instruct);
    }

    #[test]
    fn zero_learning_rate_freezes_loss() {
        let corpus = toy::toy_corpus();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            grad_accum: 2,
            ..TrainConfig::default()
        };
        let out = train_demo(&corpus, &cfg, Arch::CrossAttn, 5, toy::demo_state(32, 16.0, 1)).unwrap();
        for w in out.losses.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn same_seed_gives_identical_curves() {
        let corpus = toy::toy_corpus();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            grad_accum: 2,
            ..TrainConfig::default()
        };
        let a = train_demo(&corpus, &cfg, Arch::CrossAttn, 10, toy::demo_state(8, 8.0, 3)).unwrap();
        let b = train_demo(&corpus, &cfg, Arch::CrossAttn, 10, toy::demo_state(8, 8.0, 3)).unwrap();
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn base_weights_stay_bit_frozen() {
        let corpus = toy::toy_corpus();
        let before = toy::demo_state(8, 8.0, 7);
        let frozen_bits: Vec<Vec<u64>> = SITES
            .iter()
            .map(|&s| site_layer(&before, s).w().as_slice().iter().map(|v| v.to_bits()).collect())
            .collect();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            grad_accum: 2,
            ..TrainConfig::default()
        };
        let out = train_demo(&corpus, &cfg, Arch::CrossAttn, 20, before).unwrap();
        for (&site, bits) in SITES.iter().zip(&frozen_bits) {
            let after: Vec<u64> = site_layer(&out.state, site)
                .w()
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(&after, bits, "base weights moved at {site}");
        }
    }

    #[test]
    fn loss_decreases_on_toy_corpus() {
        let corpus = toy::toy_corpus();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            grad_accum: 4,
            ..TrainConfig::default()
        };
        let out = train_demo(&corpus, &cfg, Arch::CrossAttn, 60, toy::demo_state(16, 8.0, 42)).unwrap();
        assert!(out.losses.last().unwrap() < &(out.losses[0] * 0.5));
    }
}
