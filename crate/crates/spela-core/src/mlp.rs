//! Single-forward-pass local training for dense networks: every layer owns a
//! fixed set of class embeddings and updates its weights from a loss computed
//! on its own output alone. No backward pass, no cross-layer gradient flow.
//! Inference can exit at any layer by cosine-matching that layer's activation
//! against its embeddings.

use crate::data::LabeledDataset;
use crate::embeddings::EmbeddingSet;
use crate::error::{Result, SpelaError};
use crate::linalg::{self, Matrix};
use crate::metrics::{EpochRecord, RunMetrics};
use crate::profiler;
use crate::rng::Rng;

pub const LR_MIN: f64 = 0.01;
const COS_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn slope(&self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(s) => *s,
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        linalg::leaky_relu(z, self.slope())
    }

    pub fn grad(&self, z: &[f64]) -> Vec<f64> {
        linalg::leaky_relu_grad(z, self.slope())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// log(2 - cos)
    CosineLog,
    /// log(2 - (1 - arccos(cos)/pi))
    AngularLog,
    /// ||h - v||
    Euclidean,
    /// ||h/||h|| - v||
    NormalizedEuclidean,
    /// softmax cross-entropy over the frozen cosine head
    CrossEntropyHead,
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// Weights used by the forward pass. In binarized mode this holds
    /// sign(latent_w) and `latent_w` holds the real-valued weights the
    /// gradients are applied to (straight-through).
    pub w: Matrix,
    pub b: Vec<f64>,
    pub use_bias: bool,
    pub activation: Activation,
    pub embeddings: EmbeddingSet,
    pub latent_w: Option<Matrix>,
    pub dropout_rate: f64,
    version: u64,
}

/// Retained only between a layer's forward and its immediately following
/// local update.
pub struct LayerCache {
    pub h_prev_normalized: Vec<f64>,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    /// Inverted-dropout mask including the 1/(1-p) scale; None when not training.
    pub dropout_mask: Option<Vec<f64>>,
    layer_version: u64,
    scalars: u64,
    released: bool,
}

impl LayerCache {
    fn release(&mut self) {
        if !self.released {
            profiler::activation_release(self.scalars);
            self.released = true;
        }
    }
}

impl Drop for LayerCache {
    fn drop(&mut self) {
        self.release();
    }
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        embeddings: EmbeddingSet,
        use_bias: bool,
        dropout_rate: f64,
        binarize: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if embeddings.dim != out_dim {
            return Err(SpelaError::DimMismatch(format!(
                "embedding dim {} != layer output dim {}",
                embeddings.dim, out_dim
            )));
        }
        let real = linalg::he_uniform_init(out_dim, in_dim, rng);
        let (w, latent_w) = if binarize {
            (real.binarize_view(), Some(real))
        } else {
            (real, None)
        };
        Ok(DenseLayer {
            w,
            b: vec![0.0; out_dim],
            use_bias,
            activation,
            embeddings,
            latent_w,
            dropout_rate,
            version: 0,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows
    }

    pub fn n_classes(&self) -> usize {
        self.embeddings.n_vectors
    }
}

/// Normalize the incoming activation, apply affine + activation, and (in
/// training) inverted dropout. The cache feeds the layer's local update.
pub fn layer_forward(
    layer: &DenseLayer,
    h_prev: &[f64],
    training: bool,
    rng: &mut Rng,
) -> Result<(Vec<f64>, LayerCache)> {
    if h_prev.len() != layer.in_dim() {
        return Err(SpelaError::DimMismatch(format!(
            "layer_forward: input {} != layer input dim {}",
            h_prev.len(),
            layer.in_dim()
        )));
    }
    let h_prev_n = linalg::normalize(h_prev);
    let mut z = linalg::matvec(&layer.w, &h_prev_n)?;
    if layer.use_bias {
        for (zi, bi) in z.iter_mut().zip(layer.b.iter()) {
            *zi += bi;
        }
    }
    let mut h = layer.activation.apply(&z);
    let mask = if training && layer.dropout_rate > 0.0 {
        let p = layer.dropout_rate;
        let scale = 1.0 / (1.0 - p);
        let m: Vec<f64> = (0..h.len())
            .map(|_| if rng.uniform(0.0, 1.0) < p { 0.0 } else { scale })
            .collect();
        for (hi, mi) in h.iter_mut().zip(m.iter()) {
            *hi *= mi;
        }
        Some(m)
    } else {
        None
    };
    let scalars = if training {
        let s = (h_prev_n.len() + z.len()) as u64;
        profiler::activation_alloc(s);
        s
    } else {
        0
    };
    let cache = LayerCache {
        h_prev_normalized: h_prev_n,
        z,
        h: h.clone(),
        dropout_mask: mask,
        layer_version: layer.version,
        scalars,
        released: false,
    };
    Ok((h, cache))
}

/// Frozen classifier head: logits_i = cos(h, embedding_i).
pub fn head_logits(h: &[f64], e: &EmbeddingSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(e.n_vectors);
    for i in 0..e.n_vectors {
        out.push(linalg::cos_sim(h, e.row(i))?);
    }
    Ok(out)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

/// Local loss of an activation against the embedding of the true class.
pub fn local_loss(h: &[f64], e: &EmbeddingSet, label: usize, kind: LossKind) -> Result<f64> {
    if label >= e.n_vectors {
        return Err(SpelaError::LabelOutOfRange {
            label,
            n_classes: e.n_vectors,
        });
    }
    let v = e.row(label);
    match kind {
        LossKind::CosineLog => {
            let c = linalg::cos_sim(h, v)?;
            Ok((2.0 - c).ln())
        }
        LossKind::AngularLog => {
            let c = linalg::cos_sim(h, v)?.clamp(-COS_CLAMP, COS_CLAMP);
            let ang = 1.0 - c.acos() / std::f64::consts::PI;
            Ok((2.0 - ang).ln())
        }
        LossKind::Euclidean => {
            let d: f64 = h
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            Ok(d)
        }
        LossKind::NormalizedEuclidean => {
            let o = linalg::normalize(h);
            let d: f64 = o
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            Ok(d)
        }
        LossKind::CrossEntropyHead => {
            let logits = head_logits(h, e)?;
            let p = softmax(&logits);
            Ok(-(p[label].max(1e-300)).ln())
        }
    }
}

/// dL/dh for the selected local loss. `h` is the (possibly dropped-out)
/// layer output the loss was evaluated on.
pub(crate) fn loss_grad_h(h: &[f64], e: &EmbeddingSet, label: usize, kind: LossKind) -> Result<Vec<f64>> {
    let v = e.row(label);
    let hn = linalg::norm(h);
    match kind {
        LossKind::CosineLog | LossKind::AngularLog | LossKind::NormalizedEuclidean => {
            if hn <= linalg::ZERO_NORM_EPS {
                return Err(SpelaError::ZeroNorm);
            }
            let o: Vec<f64> = h.iter().map(|x| x / hn).collect();
            let c = linalg::dot(&o, v).clamp(-1.0, 1.0);
            // dc/dh = (v - c*o)/||h||
            let dl_dc = match kind {
                LossKind::CosineLog => -1.0 / (2.0 - c),
                LossKind::AngularLog => {
                    let cc = c.clamp(-COS_CLAMP, COS_CLAMP);
                    let ang = 1.0 - cc.acos() / std::f64::consts::PI;
                    let ds_dc = 1.0 / (std::f64::consts::PI * (1.0 - cc * cc).sqrt());
                    -ds_dc / (2.0 - ang)
                }
                LossKind::NormalizedEuclidean => {
                    // L = sqrt(2 - 2c) for unit v
                    let l = (2.0 - 2.0 * c).max(0.0).sqrt();
                    if l < 1e-9 {
                        0.0
                    } else {
                        -1.0 / l
                    }
                }
                _ => unreachable!(),
            };
            Ok((0..h.len())
                .map(|i| dl_dc * (v[i] - c * o[i]) / hn)
                .collect())
        }
        LossKind::Euclidean => {
            let mut diff: Vec<f64> = h.iter().zip(v.iter()).map(|(a, b)| a - b).collect();
            let d = linalg::norm(&diff);
            if d < 1e-12 {
                return Ok(vec![0.0; h.len()]);
            }
            for x in diff.iter_mut() {
                *x /= d;
            }
            Ok(diff)
        }
        LossKind::CrossEntropyHead => {
            if hn <= linalg::ZERO_NORM_EPS {
                return Err(SpelaError::ZeroNorm);
            }
            let o: Vec<f64> = h.iter().map(|x| x / hn).collect();
            let logits = head_logits(h, e)?;
            let p = softmax(&logits);
            let mut g = vec![0.0; h.len()];
            for i in 0..e.n_vectors {
                let coef = p[i] - if i == label { 1.0 } else { 0.0 };
                let vi = e.row(i);
                let ci = logits[i];
                for j in 0..h.len() {
                    g[j] += coef * (vi[j] - ci * o[j]) / hn;
                }
            }
            Ok(g)
        }
    }
}

/// dL/dz through the activation (and dropout mask when present).
fn local_grad_z(
    layer: &DenseLayer,
    cache: &LayerCache,
    label: usize,
    kind: LossKind,
) -> Result<Vec<f64>> {
    let mut g = loss_grad_h(&cache.h, &layer.embeddings, label, kind)?;
    if let Some(mask) = &cache.dropout_mask {
        for (gi, mi) in g.iter_mut().zip(mask.iter()) {
            *gi *= mi;
        }
    }
    let sg = layer.activation.grad(&cache.z);
    for (gi, si) in g.iter_mut().zip(sg.iter()) {
        *gi *= si;
    }
    Ok(g)
}

fn apply_grads(layer: &mut DenseLayer, g_w: &Matrix, g_b: &[f64], lr: f64, scale: f64) {
    let a = -lr * scale;
    match &mut layer.latent_w {
        Some(latent) => {
            for (wi, gi) in latent.data.iter_mut().zip(g_w.data.iter()) {
                *wi += a * gi;
            }
            layer.w = latent.binarize_view();
        }
        None => {
            for (wi, gi) in layer.w.data.iter_mut().zip(g_w.data.iter()) {
                *wi += a * gi;
            }
        }
    }
    if layer.use_bias {
        for (bi, gi) in layer.b.iter_mut().zip(g_b.iter()) {
            *bi += a * gi;
        }
    }
    layer.version += 1;
}

/// One SPELA step on a single sample: W <- W - lr * g_z h_prevT, b <- b - lr * g_z.
pub fn local_update(
    layer: &mut DenseLayer,
    cache: &mut LayerCache,
    label: usize,
    lr: f64,
    kind: LossKind,
) -> Result<()> {
    if cache.layer_version != layer.version {
        return Err(SpelaError::StaleCache);
    }
    let g_z = local_grad_z(layer, cache, label, kind)?;
    let mut g_w = Matrix::zeros(layer.out_dim(), layer.in_dim());
    linalg::rank1_update(&mut g_w, 1.0, &g_z, &cache.h_prev_normalized);
    apply_grads(layer, &g_w, &g_z, lr, 1.0);
    cache.release();
    if !layer.w.is_finite() {
        return Err(SpelaError::NonFinite("layer weights after update".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecaySchedule {
    None,
    /// lr_e = max(lr0 - amount * floor(e/every), lr_min)
    Subtractive { amount: f64, every: usize },
    /// lr_e = max(lr0 * factor^floor(e/every), lr_min)
    Multiplicative { factor: f64, every: usize },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: DecaySchedule,
    pub lr_min: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub binarize_weights: bool,
    pub loss_kind: LossKind,
    /// Update after every sample instead of averaging over the batch.
    pub per_sample_updates: bool,
    /// Evaluate train/test accuracy every this many epochs; 0 = never.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2.5,
            decay: DecaySchedule::Subtractive { amount: 0.1, every: 10 },
            lr_min: LR_MIN,
            batch_size: 50,
            epochs: 200,
            dropout: 0.0,
            seed: 0,
            binarize_weights: false,
            loss_kind: LossKind::CosineLog,
            per_sample_updates: false,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let lr = match self.decay {
            DecaySchedule::None => self.lr0,
            DecaySchedule::Subtractive { amount, every } => {
                self.lr0 - amount * (epoch / every.max(1)) as f64
            }
            DecaySchedule::Multiplicative { factor, every } => {
                self.lr0 * factor.powi((epoch / every.max(1)) as i32)
            }
        };
        lr.max(self.lr_min)
    }
}

#[derive(Debug, Clone)]
pub struct SpelaNetwork {
    pub layers: Vec<DenseLayer>,
    pub loss_kind: LossKind,
    pub input_dim: usize,
}

impl SpelaNetwork {
    /// Build from layer sizes, one embedding set per layer (dims must match
    /// in order), He-uniform init.
    pub fn new(
        input_dim: usize,
        layer_sizes: &[usize],
        embeddings: Vec<EmbeddingSet>,
        activation: Activation,
        use_bias: bool,
        dropout: f64,
        binarize: bool,
        loss_kind: LossKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        if layer_sizes.len() != embeddings.len() {
            return Err(SpelaError::Config(format!(
                "{} layer sizes but {} embedding sets",
                layer_sizes.len(),
                embeddings.len()
            )));
        }
        let mut layers = Vec::with_capacity(layer_sizes.len());
        let mut in_dim = input_dim;
        for (k, (&out, emb)) in layer_sizes.iter().zip(embeddings.into_iter()).enumerate() {
            // dropout on hidden layers only
            let p = if k + 1 < layer_sizes.len() { dropout } else { 0.0 };
            layers.push(DenseLayer::new(
                in_dim, out, activation, emb, use_bias, p, binarize, rng,
            )?);
            in_dim = out;
        }
        Ok(SpelaNetwork {
            layers,
            loss_kind,
            input_dim,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.layers[0].n_classes()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

impl profiler::ParamCount for SpelaNetwork {
    fn param_scalars(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                let w = (l.out_dim() * l.in_dim()) as u64;
                let b = if l.use_bias { l.out_dim() as u64 } else { 0 };
                let e = (l.embeddings.n_vectors * l.embeddings.dim) as u64;
                w + b + e
            })
            .sum()
    }
}

/// Forward to `exit_layer` (1-based) and cosine-match against that layer's
/// embeddings. Ties break to the lowest class index.
pub fn predict(net: &SpelaNetwork, x: &[f64], exit_layer: usize) -> Result<(usize, Vec<f64>)> {
    if exit_layer == 0 || exit_layer > net.depth() {
        return Err(SpelaError::Config(format!(
            "exit layer {} out of range 1..={}",
            exit_layer,
            net.depth()
        )));
    }
    let mut rng = Rng::new(0); // unused: no dropout at inference
    let mut h = x.to_vec();
    for layer in net.layers.iter().take(exit_layer) {
        let (next, _cache) = layer_forward(layer, &h, false, &mut rng)?;
        h = next;
    }
    let scores = head_logits_safe(&h, &net.layers[exit_layer - 1].embeddings)?;
    Ok((argmax(&scores), scores))
}

// cos head that maps an all-zero activation to all-zero scores instead of
// erroring; dead ReLUs at inference should yield an (arbitrary) class 0.
fn head_logits_safe(h: &[f64], e: &EmbeddingSet) -> Result<Vec<f64>> {
    if linalg::norm(h) <= linalg::ZERO_NORM_EPS {
        return Ok(vec![0.0; e.n_vectors]);
    }
    head_logits(h, e)
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Per-layer accuracy over a dataset (one forward pass, scoring every exit).
pub fn evaluate(net: &SpelaNetwork, data: &LabeledDataset) -> Result<Vec<f64>> {
    let mut correct = vec![0usize; net.depth()];
    let mut rng = Rng::new(0);
    for s in 0..data.len() {
        let mut h = data.sample(s).to_vec();
        for (k, layer) in net.layers.iter().enumerate() {
            let (next, _cache) = layer_forward(layer, &h, false, &mut rng)?;
            h = next;
            let scores = head_logits_safe(&h, &layer.embeddings)?;
            if argmax(&scores) == data.labels[s] {
                correct[k] += 1;
            }
        }
    }
    Ok(correct
        .into_iter()
        .map(|c| c as f64 / data.len() as f64)
        .collect())
}

/// Single-sweep training: one forward pass per sample, each layer updated
/// from its own cache as the data passes through. Batch mode averages the
/// per-sample gradients and applies one update per layer per batch.
pub fn train(
    net: &mut SpelaNetwork,
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<RunMetrics> {
    if data.dim() != net.input_dim {
        return Err(SpelaError::DimMismatch(format!(
            "dataset dim {} != network input dim {}",
            data.dim(),
            net.input_dim
        )));
    }
    let n_classes = net.n_classes();
    for &l in &data.labels {
        if l >= n_classes {
            return Err(SpelaError::LabelOutOfRange { label: l, n_classes });
        }
    }
    if cfg.batch_size == 0 {
        return Err(SpelaError::Config("batch_size must be >= 1".into()));
    }
    profiler::mark_run_active(true);
    let result = train_inner(net, data, test, cfg);
    profiler::mark_run_active(false);
    result
}

fn train_inner(
    net: &mut SpelaNetwork,
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<RunMetrics> {
    let mut metrics = RunMetrics::new(net.depth());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = Rng::new(cfg.seed).split(1);
    let mut dropout_rng = Rng::new(cfg.seed).split(2);
    let depth = net.depth();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        shuffle_rng.shuffle(&mut order);
        let mut loss_sums = vec![0.0; depth];
        let mut loss_count = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            if cfg.per_sample_updates {
                for &s in batch {
                    let label = data.labels[s];
                    let mut h = data.sample(s).to_vec();
                    for k in 0..depth {
                        let (next, mut cache) =
                            layer_forward(&net.layers[k], &h, true, &mut dropout_rng)?;
                        loss_sums[k] +=
                            local_loss(&cache.h, &net.layers[k].embeddings, label, cfg.loss_kind)?;
                        local_update(&mut net.layers[k], &mut cache, label, lr, cfg.loss_kind)?;
                        h = next;
                    }
                    loss_count += 1;
                }
            } else {
                // batch-averaged: gradients accumulate per sample, one update
                // per layer per batch; forward outputs use pre-update weights
                let mut g_w: Vec<Matrix> = net
                    .layers
                    .iter()
                    .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                    .collect();
                let mut g_b: Vec<Vec<f64>> =
                    net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect();
                for &s in batch {
                    let label = data.labels[s];
                    let mut h = data.sample(s).to_vec();
                    for k in 0..depth {
                        let (next, mut cache) =
                            layer_forward(&net.layers[k], &h, true, &mut dropout_rng)?;
                        loss_sums[k] +=
                            local_loss(&cache.h, &net.layers[k].embeddings, label, cfg.loss_kind)?;
                        let g_z = local_grad_z(&net.layers[k], &cache, label, cfg.loss_kind)?;
                        linalg::rank1_update(&mut g_w[k], 1.0, &g_z, &cache.h_prev_normalized);
                        linalg::axpy(&mut g_b[k], 1.0, &g_z);
                        cache.release();
                        h = next;
                    }
                    loss_count += 1;
                }
                let scale = 1.0 / batch.len() as f64;
                for k in 0..depth {
                    apply_grads(&mut net.layers[k], &g_w[k], &g_b[k], lr, scale);
                }
            }
        }

        for (k, layer) in net.layers.iter().enumerate() {
            if !layer.w.is_finite() {
                return Err(SpelaError::NonFinite(format!(
                    "layer {k} weights at epoch {epoch}"
                )));
            }
        }

        let mean_losses: Vec<f64> = loss_sums
            .iter()
            .map(|s| s / loss_count.max(1) as f64)
            .collect();
        let eval_now = cfg.eval_every > 0
            && (epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let (train_acc, test_acc) = if eval_now {
            let tr = evaluate(net, data)?;
            let te = match test {
                Some(t) => Some(evaluate(net, t)?),
                None => None,
            };
            (Some(tr), te)
        } else {
            (None, None)
        };
        profiler::epoch_snapshot(epoch);
        metrics.push(EpochRecord {
            epoch,
            lr,
            train_loss: mean_losses,
            train_acc,
            test_acc,
        });
    }
    Ok(metrics)
}

// ---- checkpoint io ----

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;

const CKPT_MAGIC: &[u8; 4] = b"SPNW";

fn write_loss_tag<W: Write>(w: &mut W, kind: LossKind) -> Result<()> {
    let tag = match kind {
        LossKind::CosineLog => 0u8,
        LossKind::AngularLog => 1,
        LossKind::Euclidean => 2,
        LossKind::NormalizedEuclidean => 3,
        LossKind::CrossEntropyHead => 4,
    };
    w.write_u8(tag)?;
    Ok(())
}

fn read_loss_tag<R: Read>(r: &mut R) -> Result<LossKind> {
    Ok(match r.read_u8()? {
        0 => LossKind::CosineLog,
        1 => LossKind::AngularLog,
        2 => LossKind::Euclidean,
        3 => LossKind::NormalizedEuclidean,
        4 => LossKind::CrossEntropyHead,
        t => return Err(SpelaError::Format(format!("unknown loss tag {t}"))),
    })
}

pub(crate) fn write_layer<W: Write>(w: &mut W, layer: &DenseLayer) -> Result<()> {
    w.write_u32::<LittleEndian>(layer.in_dim() as u32)?;
    w.write_u32::<LittleEndian>(layer.out_dim() as u32)?;
    match layer.activation {
        Activation::Relu => w.write_u8(0)?,
        Activation::LeakyRelu(_) => w.write_u8(1)?,
    }
    w.write_f64::<LittleEndian>(layer.activation.slope())?;
    w.write_u8(layer.use_bias as u8)?;
    w.write_f64::<LittleEndian>(layer.dropout_rate)?;
    for v in &layer.w.data {
        w.write_f64::<LittleEndian>(*v)?;
    }
    for v in &layer.b {
        w.write_f64::<LittleEndian>(*v)?;
    }
    match &layer.latent_w {
        Some(m) => {
            w.write_u8(1)?;
            for v in &m.data {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        None => w.write_u8(0)?,
    }
    w.write_u32::<LittleEndian>(layer.embeddings.n_vectors as u32)?;
    for v in &layer.embeddings.vectors.data {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub(crate) fn read_layer<R: Read>(r: &mut R) -> Result<DenseLayer> {
    let in_dim = r.read_u32::<LittleEndian>()? as usize;
    let out_dim = r.read_u32::<LittleEndian>()? as usize;
    let act_tag = r.read_u8()?;
    let slope = r.read_f64::<LittleEndian>()?;
    let activation = match act_tag {
        0 => Activation::Relu,
        1 => Activation::LeakyRelu(slope),
        t => return Err(SpelaError::Format(format!("unknown activation tag {t}"))),
    };
    let use_bias = r.read_u8()? != 0;
    let dropout_rate = r.read_f64::<LittleEndian>()?;
    let mut w_data = vec![0.0; out_dim * in_dim];
    for v in w_data.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    let mut b = vec![0.0; out_dim];
    for v in b.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    let latent_w = if r.read_u8()? != 0 {
        let mut data = vec![0.0; out_dim * in_dim];
        for v in data.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        Some(Matrix {
            rows: out_dim,
            cols: in_dim,
            data,
        })
    } else {
        None
    };
    let n_vec = r.read_u32::<LittleEndian>()? as usize;
    let mut e_data = vec![0.0; n_vec * out_dim];
    for v in e_data.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    let embeddings = EmbeddingSet {
        n_vectors: n_vec,
        dim: out_dim,
        vectors: Matrix {
            rows: n_vec,
            cols: out_dim,
            data: e_data,
        },
        provenance: crate::embeddings::Provenance::Symmetric,
    };
    Ok(DenseLayer {
        w: Matrix {
            rows: out_dim,
            cols: in_dim,
            data: w_data,
        },
        b,
        use_bias,
        activation,
        embeddings,
        latent_w,
        dropout_rate,
        version: 0,
    })
}

pub fn save_checkpoint(net: &SpelaNetwork, config_echo: &str, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CKPT_MAGIC)?;
    f.write_u32::<LittleEndian>(net.input_dim as u32)?;
    f.write_u32::<LittleEndian>(net.depth() as u32)?;
    for layer in &net.layers {
        write_layer(&mut f, layer)?;
    }
    write_loss_tag(&mut f, net.loss_kind)?;
    let echo = config_echo.as_bytes();
    f.write_u32::<LittleEndian>(echo.len() as u32)?;
    f.write_all(echo)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SpelaNetwork, String)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(SpelaError::Format(format!(
            "bad checkpoint magic {magic:?} (expected SPNW)"
        )));
    }
    let input_dim = f.read_u32::<LittleEndian>()? as usize;
    let n_layers = f.read_u32::<LittleEndian>()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(read_layer(&mut f)?);
    }
    let loss_kind = read_loss_tag(&mut f)?;
    let len = f.read_u32::<LittleEndian>()? as usize;
    let mut echo = vec![0u8; len];
    f.read_exact(&mut echo)?;
    let echo = String::from_utf8(echo)
        .map_err(|_| SpelaError::Format("config echo is not UTF-8".into()))?;
    Ok((
        SpelaNetwork {
            layers,
            loss_kind,
            input_dim,
        },
        echo,
    ))
}
