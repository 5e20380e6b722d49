//! Local training for small convolutional stacks. Every kernel owns a random
//! partition of the classes into a handful of groups and a tiny dense head
//! whose output is matched against fixed group embeddings. Kernels learn from
//! their own head's loss only; no gradient crosses layer boundaries. At
//! inference each kernel votes for a group and every class in that group gets
//! one tally point.

use crate::data::LabeledDataset;
use crate::embeddings::{generate_symmetric, EmbeddingSet, SimulationConfig};
use crate::error::{Result, SpelaError};
use crate::linalg::{self, Matrix};
use crate::metrics::{EpochRecord, RunMetrics};
use crate::mlp::{self, LossKind};
use crate::profiler;
use crate::rng::Rng;

fn rand_core_next(rng: &mut Rng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}

pub const HEAD_DIM: usize = 32;
pub const MAX_GROUPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    pub n_groups: usize,
    /// class index -> group index
    pub class_to_group: Vec<usize>,
}

impl GroupAssignment {
    pub fn classes_in(&self, group: usize) -> Vec<usize> {
        self.class_to_group
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == group)
            .map(|(c, _)| c)
            .collect()
    }
}

/// One random class partition per kernel: group count drawn uniformly from
/// 2..=min(n_classes, MAX_GROUPS), classes shuffled then dealt round-robin so
/// group sizes differ by at most one.
pub fn make_group_assignments(
    n_classes: usize,
    n_kernels: usize,
    rng: &mut Rng,
) -> Result<Vec<GroupAssignment>> {
    if n_classes < 2 {
        return Err(SpelaError::Config("need at least two classes".into()));
    }
    let hi = n_classes.min(MAX_GROUPS);
    let mut out = Vec::with_capacity(n_kernels);
    for _ in 0..n_kernels {
        let m = 2 + rng.below(hi - 1);
        let mut order: Vec<usize> = (0..n_classes).collect();
        rng.shuffle(&mut order);
        let mut class_to_group = vec![0usize; n_classes];
        for (i, c) in order.iter().enumerate() {
            class_to_group[*c] = i % m;
        }
        out.push(GroupAssignment {
            n_groups: m,
            class_to_group,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Channel-major feature map: data[c * h * w + y * w + x].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        FeatureMap {
            channels,
            h,
            w,
            data: vec![0.0; channels * h * w],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.h * self.w + y * self.w + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Patch matrix: one column per output position, rows run over
/// (in_channel, ky, kx). Out-of-image taps read zero.
pub fn im2col(input: &FeatureMap, spec: &ConvSpec) -> Matrix {
    let (oh, ow) = spec.out_hw(input.h, input.w);
    let pl = spec.patch_len();
    let mut m = Matrix::zeros(pl, oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let col = oy * ow + ox;
            let mut row = 0;
            for c in 0..spec.in_channels {
                for ky in 0..spec.kernel {
                    for kx in 0..spec.kernel {
                        let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < input.h && (ix as usize) < input.w
                        {
                            m.set(row, col, input.get(c, iy as usize, ix as usize));
                        }
                        row += 1;
                    }
                }
            }
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct KernelHead {
    /// HEAD_DIM x map_len dense map from the kernel's activation map.
    pub w: Matrix,
    pub b: Vec<f64>,
    /// One embedding per group, in HEAD_DIM dims.
    pub embeddings: EmbeddingSet,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    /// out_channels x patch_len kernel weights.
    pub w: Matrix,
    pub b: Vec<f64>,
    /// Learnable negative-side slope, one per output channel.
    pub prelu: Vec<f64>,
    pub heads: Vec<KernelHead>,
    pub groups: Vec<GroupAssignment>,
}

impl ConvLayer {
    pub fn new(
        spec: ConvSpec,
        groups: Vec<GroupAssignment>,
        map_len: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if groups.len() != spec.out_channels {
            return Err(SpelaError::Config(format!(
                "{} group assignments for {} kernels",
                groups.len(),
                spec.out_channels
            )));
        }
        let w = linalg::he_uniform_init(spec.out_channels, spec.patch_len(), rng);
        let mut heads = Vec::with_capacity(spec.out_channels);
        for g in &groups {
            let ecfg = SimulationConfig {
                rng_seed: rand_core_next(rng),
                ..SimulationConfig::default()
            };
            let (emb, _stats) = generate_symmetric(g.n_groups, HEAD_DIM, &ecfg)?;
            heads.push(KernelHead {
                w: linalg::he_uniform_init(HEAD_DIM, map_len, rng),
                b: vec![0.0; HEAD_DIM],
                embeddings: emb,
            });
        }
        Ok(ConvLayer {
            spec,
            w,
            b: vec![0.0; spec.out_channels],
            prelu: vec![0.25; spec.out_channels],
            heads,
            groups,
        })
    }
}

/// Pre-activations z and activations a = prelu(z) for every output channel.
pub fn conv_forward(layer: &ConvLayer, input: &FeatureMap) -> Result<(FeatureMap, FeatureMap)> {
    if input.channels != layer.spec.in_channels {
        return Err(SpelaError::DimMismatch(format!(
            "input channels {} != layer channels {}",
            input.channels, layer.spec.in_channels
        )));
    }
    let (oh, ow) = layer.spec.out_hw(input.h, input.w);
    let cols = im2col(input, &layer.spec);
    let mut z = FeatureMap::zeros(layer.spec.out_channels, oh, ow);
    let mut a = FeatureMap::zeros(layer.spec.out_channels, oh, ow);
    let n = oh * ow;
    for ch in 0..layer.spec.out_channels {
        let wrow = layer.w.row(ch);
        let slope = layer.prelu[ch];
        for p in 0..n {
            let mut acc = layer.b[ch];
            for r in 0..cols.rows {
                acc += wrow[r] * cols.get(r, p);
            }
            z.data[ch * n + p] = acc;
            a.data[ch * n + p] = if acc > 0.0 { acc } else { slope * acc };
        }
    }
    profiler::add_forward_maccs((layer.spec.out_channels * cols.rows * n) as u64);
    Ok((z, a))
}

/// 2x2 max pooling with stride 2; odd trailing rows and columns are dropped.
pub fn max_pool2(input: &FeatureMap) -> FeatureMap {
    let oh = input.h / 2;
    let ow = input.w / 2;
    let mut out = FeatureMap::zeros(input.channels, oh, ow);
    for c in 0..input.channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(input.get(c, 2 * y + dy, 2 * x + dx));
                    }
                }
                out.data[c * oh * ow + y * ow + x] = m;
            }
        }
    }
    out
}

/// Head output for one kernel's activation map.
pub fn head_forward(head: &KernelHead, map: &[f64]) -> Result<Vec<f64>> {
    let mut h = linalg::matvec(&head.w, map)?;
    for (hi, bi) in h.iter_mut().zip(head.b.iter()) {
        *hi += bi;
    }
    Ok(h)
}

/// The group each kernel votes for, by cosine match of its head output.
pub fn kernel_vote(head: &KernelHead, map: &[f64]) -> Result<usize> {
    let h = head_forward(head, map)?;
    let hn = linalg::norm(&h);
    let mut best = 0;
    let mut best_s = f64::NEG_INFINITY;
    for g in 0..head.embeddings.n_vectors {
        let s = if hn <= linalg::ZERO_NORM_EPS {
            0.0
        } else {
            linalg::dot(&h, head.embeddings.row(g)) / hn
        };
        if s > best_s {
            best_s = s;
            best = g;
        }
    }
    Ok(best)
}

/// One tally point per kernel to every class in the group it voted for.
pub fn tally_scores(layer: &ConvLayer, a: &FeatureMap) -> Result<Vec<u32>> {
    let n_classes = layer.groups[0].class_to_group.len();
    let mut tally = vec![0u32; n_classes];
    for k in 0..layer.spec.out_channels {
        let vote = kernel_vote(&layer.heads[k], a.channel(k))?;
        for (c, g) in layer.groups[k].class_to_group.iter().enumerate() {
            if *g == vote {
                tally[c] += 1;
            }
        }
    }
    Ok(tally)
}

fn argmax_u32(scores: &[u32]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

// ---- Adam ----

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_B1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_B1 * self.m[i] + (1.0 - ADAM_B1) * grads[i];
            self.v[i] = ADAM_B2 * self.v[i] + (1.0 - ADAM_B2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

// ---- gradients ----

/// Per-kernel gradients for one sample: head weights and bias, kernel row,
/// kernel bias, prelu slope. All flow from the head's local loss; nothing
/// reaches the layer's input.
struct KernelGrads {
    head_w: Matrix,
    head_b: Vec<f64>,
    kernel_w: Vec<f64>,
    kernel_b: f64,
    prelu: f64,
    loss: f64,
}

fn kernel_grads(
    layer: &ConvLayer,
    k: usize,
    cols: &Matrix,
    z: &[f64],
    a: &[f64],
    group_label: usize,
    loss_kind: LossKind,
) -> Result<KernelGrads> {
    let head = &layer.heads[k];
    let h = head_forward(head, a)?;
    let loss = mlp::local_loss(&h, &head.embeddings, group_label, loss_kind)?;
    let g_h = mlp::loss_grad_h(&h, &head.embeddings, group_label, loss_kind)?;

    let mut head_w = Matrix::zeros(head.w.rows, head.w.cols);
    linalg::rank1_update(&mut head_w, 1.0, &g_h, a);
    let head_b = g_h.clone();

    // into the activation map, then through the prelu
    let g_a = linalg::matvec_t(&head.w, &g_h)?;
    profiler::add_update_maccs((head.w.rows * head.w.cols) as u64);
    let slope = layer.prelu[k];
    let mut g_z = vec![0.0; z.len()];
    let mut g_slope = 0.0;
    for p in 0..z.len() {
        if z[p] > 0.0 {
            g_z[p] = g_a[p];
        } else {
            g_z[p] = g_a[p] * slope;
            g_slope += g_a[p] * z[p];
        }
    }

    // kernel row: correlate the pre-activation gradient with the patches
    let mut kernel_w = vec![0.0; cols.rows];
    let mut kernel_b = 0.0;
    for p in 0..g_z.len() {
        let g = g_z[p];
        if g == 0.0 {
            continue;
        }
        for r in 0..cols.rows {
            kernel_w[r] += g * cols.get(r, p);
        }
        kernel_b += g;
    }
    profiler::add_update_maccs((cols.rows * g_z.len()) as u64);

    Ok(KernelGrads {
        head_w,
        head_b,
        kernel_w,
        kernel_b,
        prelu: g_slope,
        loss,
    })
}

/// Single plain-SGD update of one kernel and its head from one input map.
/// Returns the local loss before the update.
pub fn kernel_step(
    layer: &mut ConvLayer,
    k: usize,
    input: &FeatureMap,
    group_label: usize,
    loss_kind: LossKind,
    lr: f64,
) -> Result<f64> {
    let cols = im2col(input, &layer.spec);
    let (z, a) = conv_forward(layer, input)?;
    let n = z.h * z.w;
    let g = kernel_grads(
        layer,
        k,
        &cols,
        &z.data[k * n..(k + 1) * n],
        &a.data[k * n..(k + 1) * n],
        group_label,
        loss_kind,
    )?;
    for (wi, gi) in layer.heads[k].w.data.iter_mut().zip(g.head_w.data.iter()) {
        *wi -= lr * gi;
    }
    for (bi, gi) in layer.heads[k].b.iter_mut().zip(g.head_b.iter()) {
        *bi -= lr * gi;
    }
    let pl = layer.spec.patch_len();
    for r in 0..pl {
        let v = layer.w.get(k, r) - lr * g.kernel_w[r];
        layer.w.set(k, r, v);
    }
    layer.b[k] -= lr * g.kernel_b;
    layer.prelu[k] -= lr * g.prelu;
    Ok(g.loss)
}

// ---- network ----

#[derive(Debug, Clone)]
pub struct CnnNetwork {
    pub layers: Vec<ConvLayer>,
    pub in_shape: (usize, usize, usize),
    pub n_classes: usize,
    pub loss_kind: LossKind,
}

impl CnnNetwork {
    /// A stack of identical conv blocks. Every layer reuses the same group
    /// assignments so a kernel index means the same partition at any depth.
    pub fn new(
        in_shape: (usize, usize, usize),
        n_layers: usize,
        channels: usize,
        kernel: usize,
        n_classes: usize,
        loss_kind: LossKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        let groups = make_group_assignments(n_classes, channels, rng)?;
        let (c0, mut h, mut w) = in_shape;
        let mut layers = Vec::with_capacity(n_layers);
        let mut in_ch = c0;
        for l in 0..n_layers {
            if l > 0 {
                h /= 2;
                w /= 2;
                if h == 0 || w == 0 {
                    return Err(SpelaError::Config("image too small for this depth".into()));
                }
            }
            let spec = ConvSpec {
                in_channels: in_ch,
                out_channels: channels,
                kernel,
                stride: 1,
                pad: kernel / 2,
            };
            let (oh, ow) = spec.out_hw(h, w);
            layers.push(ConvLayer::new(spec, groups.clone(), oh * ow, rng)?);
            in_ch = channels;
            h = oh;
            w = ow;
        }
        Ok(CnnNetwork {
            layers,
            in_shape,
            n_classes,
            loss_kind,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

impl profiler::ParamCount for CnnNetwork {
    fn param_scalars(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                let conv = l.w.rows * l.w.cols + l.b.len() + l.prelu.len();
                let heads: usize = l
                    .heads
                    .iter()
                    .map(|h| h.w.rows * h.w.cols + h.b.len() + h.embeddings.n_vectors * h.embeddings.dim)
                    .sum();
                (conv + heads) as u64
            })
            .sum()
    }
}

fn sample_map(data: &LabeledDataset, s: usize) -> Result<FeatureMap> {
    let (c, h, w) = data
        .image_shape
        .ok_or_else(|| SpelaError::Config("dataset has no image shape".into()))?;
    Ok(FeatureMap {
        channels: c,
        h,
        w,
        data: data.sample(s).to_vec(),
    })
}

/// Tally-vote prediction from the given layer (1-based, as with dense exits).
pub fn cnn_predict(net: &CnnNetwork, input: &FeatureMap, exit_layer: usize) -> Result<(usize, Vec<u32>)> {
    if exit_layer == 0 || exit_layer > net.depth() {
        return Err(SpelaError::Config(format!(
            "exit layer {} out of range 1..={}",
            exit_layer,
            net.depth()
        )));
    }
    let mut x = input.clone();
    for (l, layer) in net.layers.iter().take(exit_layer).enumerate() {
        if l > 0 {
            x = max_pool2(&x);
        }
        let (_z, a) = conv_forward(layer, &x)?;
        if l + 1 == exit_layer {
            let tally = tally_scores(layer, &a)?;
            return Ok((argmax_u32(&tally), tally));
        }
        x = a;
    }
    unreachable!()
}

pub fn cnn_evaluate(net: &CnnNetwork, data: &LabeledDataset, exit_layer: usize) -> Result<f64> {
    let mut hits = 0usize;
    for s in 0..data.len() {
        let map = sample_map(data, s)?;
        if cnn_predict(net, &map, exit_layer)?.0 == data.labels[s] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct CnnTrainConfig {
    pub lr: f64,
    /// Epochs spent on each layer, in order; earlier layers are frozen while
    /// a later one trains.
    pub epochs_per_layer: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        CnnTrainConfig {
            lr: 0.1,
            epochs_per_layer: vec![15, 10],
            batch_size: 50,
            seed: 0,
            eval_every: 5,
        }
    }
}

struct LayerOpt {
    head_w: Vec<Adam>,
    head_b: Vec<Adam>,
    kernel: Adam,
    bias: Adam,
    prelu: Adam,
}

impl LayerOpt {
    fn new(layer: &ConvLayer) -> Self {
        LayerOpt {
            head_w: layer
                .heads
                .iter()
                .map(|h| Adam::new(h.w.data.len()))
                .collect(),
            head_b: layer.heads.iter().map(|h| Adam::new(h.b.len())).collect(),
            kernel: Adam::new(layer.w.data.len()),
            bias: Adam::new(layer.b.len()),
            prelu: Adam::new(layer.prelu.len()),
        }
    }
}

/// Layer-by-layer training: each layer gets its scheduled epochs while all
/// earlier layers stay frozen and only provide features.
pub fn cnn_train(
    net: &mut CnnNetwork,
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &CnnTrainConfig,
) -> Result<RunMetrics> {
    data.validate()?;
    if cfg.epochs_per_layer.len() != net.depth() {
        return Err(SpelaError::Config(format!(
            "{} epoch counts for {} layers",
            cfg.epochs_per_layer.len(),
            net.depth()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(SpelaError::Config("batch_size must be positive".into()));
    }
    if data.n_classes != net.n_classes {
        return Err(SpelaError::Config(format!(
            "dataset classes {} != network classes {}",
            data.n_classes, net.n_classes
        )));
    }
    profiler::mark_run_active(true);

    let mut metrics = RunMetrics::new(net.depth());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = Rng::new(cfg.seed).split(1);
    let mut global_epoch = 0usize;

    for l in 0..net.depth() {
        let mut opt = LayerOpt::new(&net.layers[l]);
        for _ in 0..cfg.epochs_per_layer[l] {
            shuffle_rng.shuffle(&mut order);
            let mut loss_sum = 0.0;
            let mut loss_count = 0usize;

            for batch in order.chunks(cfg.batch_size) {
                let n_k = net.layers[l].spec.out_channels;
                let mut acc: Vec<KernelGrads> = (0..n_k)
                    .map(|k| KernelGrads {
                        head_w: Matrix::zeros(
                            net.layers[l].heads[k].w.rows,
                            net.layers[l].heads[k].w.cols,
                        ),
                        head_b: vec![0.0; HEAD_DIM],
                        kernel_w: vec![0.0; net.layers[l].spec.patch_len()],
                        kernel_b: 0.0,
                        prelu: 0.0,
                        loss: 0.0,
                    })
                    .collect();

                for &s in batch {
                    let mut x = sample_map(data, s)?;
                    for (j, frozen) in net.layers.iter().take(l).enumerate() {
                        if j > 0 {
                            x = max_pool2(&x);
                        }
                        let (_z, a) = conv_forward(frozen, &x)?;
                        x = a;
                    }
                    if l > 0 {
                        x = max_pool2(&x);
                    }
                    let cols = im2col(&x, &net.layers[l].spec);
                    let (z, a) = conv_forward(&net.layers[l], &x)?;
                    let n = z.h * z.w;
                    for k in 0..n_k {
                        let group_label = net.layers[l].groups[k].class_to_group[data.labels[s]];
                        let g = kernel_grads(
                            &net.layers[l],
                            k,
                            &cols,
                            &z.data[k * n..(k + 1) * n],
                            &a.data[k * n..(k + 1) * n],
                            group_label,
                            net.loss_kind,
                        )?;
                        for (ai, gi) in acc[k].head_w.data.iter_mut().zip(g.head_w.data.iter()) {
                            *ai += gi;
                        }
                        linalg::axpy(&mut acc[k].head_b, 1.0, &g.head_b);
                        linalg::axpy(&mut acc[k].kernel_w, 1.0, &g.kernel_w);
                        acc[k].kernel_b += g.kernel_b;
                        acc[k].prelu += g.prelu;
                        acc[k].loss += g.loss;
                    }
                    loss_count += 1;
                }

                let scale = 1.0 / batch.len() as f64;
                let layer = &mut net.layers[l];
                let mut g_kernel = vec![0.0; layer.w.data.len()];
                let mut g_bias = vec![0.0; layer.b.len()];
                let mut g_prelu = vec![0.0; layer.prelu.len()];
                for k in 0..n_k {
                    for (gi, v) in acc[k].head_w.data.iter_mut().zip(std::iter::repeat(scale)) {
                        *gi *= v;
                    }
                    for gi in acc[k].head_b.iter_mut() {
                        *gi *= scale;
                    }
                    opt.head_w[k].step(&mut layer.heads[k].w.data, &acc[k].head_w.data, cfg.lr);
                    opt.head_b[k].step(&mut layer.heads[k].b, &acc[k].head_b, cfg.lr);
                    let pl = layer.spec.patch_len();
                    for r in 0..pl {
                        g_kernel[k * pl + r] = acc[k].kernel_w[r] * scale;
                    }
                    g_bias[k] = acc[k].kernel_b * scale;
                    g_prelu[k] = acc[k].prelu * scale;
                    loss_sum += acc[k].loss;
                }
                opt.kernel.step(&mut layer.w.data, &g_kernel, cfg.lr);
                opt.bias.step(&mut layer.b, &g_bias, cfg.lr);
                opt.prelu.step(&mut layer.prelu, &g_prelu, cfg.lr);
            }

            if !net.layers[l].w.is_finite() {
                return Err(SpelaError::NonFinite(format!(
                    "conv layer {l} weights at epoch {global_epoch}"
                )));
            }

            let denom = (loss_count * net.layers[l].spec.out_channels).max(1) as f64;
            // zero for layers not being trained this epoch
            let mut loss_row = vec![0.0; net.depth()];
            loss_row[l] = loss_sum / denom;
            let eval_now = cfg.eval_every > 0
                && (global_epoch % cfg.eval_every == 0
                    || global_epoch + 1
                        == cfg.epochs_per_layer.iter().sum::<usize>());
            let (train_acc, test_acc) = if eval_now {
                let mut tr = Vec::with_capacity(net.depth());
                for e in 1..=net.depth() {
                    tr.push(cnn_evaluate(net, data, e)?);
                }
                let te = match test {
                    Some(t) => {
                        let mut v = Vec::with_capacity(net.depth());
                        for e in 1..=net.depth() {
                            v.push(cnn_evaluate(net, t, e)?);
                        }
                        Some(v)
                    }
                    None => None,
                };
                (Some(tr), te)
            } else {
                (None, None)
            };
            profiler::epoch_snapshot(global_epoch);
            metrics.push(EpochRecord {
                epoch: global_epoch,
                lr: cfg.lr,
                train_loss: loss_row,
                train_acc,
                test_acc,
            });
            global_epoch += 1;
        }
    }
    Ok(metrics)
}

// ---- checkpoint io ----

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;

const CKPT_MAGIC: &[u8; 4] = b"SPCN";

pub fn save_checkpoint(net: &CnnNetwork, config_echo: &str, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(net.layers.len() as u32)?;
    w.write_u32::<LittleEndian>(net.in_shape.0 as u32)?;
    w.write_u32::<LittleEndian>(net.in_shape.1 as u32)?;
    w.write_u32::<LittleEndian>(net.in_shape.2 as u32)?;
    w.write_u32::<LittleEndian>(net.n_classes as u32)?;
    w.write_u8(match net.loss_kind {
        LossKind::CosineLog => 0,
        LossKind::AngularLog => 1,
        LossKind::Euclidean => 2,
        LossKind::NormalizedEuclidean => 3,
        LossKind::CrossEntropyHead => 4,
    })?;
    for layer in &net.layers {
        w.write_u32::<LittleEndian>(layer.spec.in_channels as u32)?;
        w.write_u32::<LittleEndian>(layer.spec.out_channels as u32)?;
        w.write_u32::<LittleEndian>(layer.spec.kernel as u32)?;
        w.write_u32::<LittleEndian>(layer.spec.stride as u32)?;
        w.write_u32::<LittleEndian>(layer.spec.pad as u32)?;
        for v in &layer.w.data {
            w.write_f64::<LittleEndian>(*v)?;
        }
        for v in &layer.b {
            w.write_f64::<LittleEndian>(*v)?;
        }
        for v in &layer.prelu {
            w.write_f64::<LittleEndian>(*v)?;
        }
        for g in &layer.groups {
            w.write_u32::<LittleEndian>(g.n_groups as u32)?;
            w.write_u32::<LittleEndian>(g.class_to_group.len() as u32)?;
            for c in &g.class_to_group {
                w.write_u32::<LittleEndian>(*c as u32)?;
            }
        }
        for h in &layer.heads {
            w.write_u32::<LittleEndian>(h.w.cols as u32)?;
            for v in &h.w.data {
                w.write_f64::<LittleEndian>(*v)?;
            }
            for v in &h.b {
                w.write_f64::<LittleEndian>(*v)?;
            }
            w.write_u32::<LittleEndian>(h.embeddings.n_vectors as u32)?;
            for v in &h.embeddings.vectors.data {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
    }
    let echo = config_echo.as_bytes();
    w.write_u32::<LittleEndian>(echo.len() as u32)?;
    w.write_all(echo)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CnnNetwork, String)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(SpelaError::Format("bad checkpoint magic".into()));
    }
    let n_layers = r.read_u32::<LittleEndian>()? as usize;
    let in_shape = (
        r.read_u32::<LittleEndian>()? as usize,
        r.read_u32::<LittleEndian>()? as usize,
        r.read_u32::<LittleEndian>()? as usize,
    );
    let n_classes = r.read_u32::<LittleEndian>()? as usize;
    let loss_kind = match r.read_u8()? {
        0 => LossKind::CosineLog,
        1 => LossKind::AngularLog,
        2 => LossKind::Euclidean,
        3 => LossKind::NormalizedEuclidean,
        4 => LossKind::CrossEntropyHead,
        t => return Err(SpelaError::Format(format!("unknown loss tag {t}"))),
    };
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let spec = ConvSpec {
            in_channels: r.read_u32::<LittleEndian>()? as usize,
            out_channels: r.read_u32::<LittleEndian>()? as usize,
            kernel: r.read_u32::<LittleEndian>()? as usize,
            stride: r.read_u32::<LittleEndian>()? as usize,
            pad: r.read_u32::<LittleEndian>()? as usize,
        };
        let mut w_data = vec![0.0; spec.out_channels * spec.patch_len()];
        for v in w_data.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let mut b = vec![0.0; spec.out_channels];
        for v in b.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let mut prelu = vec![0.0; spec.out_channels];
        for v in prelu.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let mut groups = Vec::with_capacity(spec.out_channels);
        for _ in 0..spec.out_channels {
            let n_groups = r.read_u32::<LittleEndian>()? as usize;
            let nc = r.read_u32::<LittleEndian>()? as usize;
            let mut class_to_group = vec![0usize; nc];
            for c in class_to_group.iter_mut() {
                *c = r.read_u32::<LittleEndian>()? as usize;
            }
            groups.push(GroupAssignment {
                n_groups,
                class_to_group,
            });
        }
        let mut heads = Vec::with_capacity(spec.out_channels);
        for g in &groups {
            let map_len = r.read_u32::<LittleEndian>()? as usize;
            let mut hw = vec![0.0; HEAD_DIM * map_len];
            for v in hw.iter_mut() {
                *v = r.read_f64::<LittleEndian>()?;
            }
            let mut hb = vec![0.0; HEAD_DIM];
            for v in hb.iter_mut() {
                *v = r.read_f64::<LittleEndian>()?;
            }
            let n_vec = r.read_u32::<LittleEndian>()? as usize;
            if n_vec != g.n_groups {
                return Err(SpelaError::Format("group/embedding count mismatch".into()));
            }
            let mut ed = vec![0.0; n_vec * HEAD_DIM];
            for v in ed.iter_mut() {
                *v = r.read_f64::<LittleEndian>()?;
            }
            heads.push(KernelHead {
                w: Matrix {
                    rows: HEAD_DIM,
                    cols: map_len,
                    data: hw,
                },
                b: hb,
                embeddings: EmbeddingSet {
                    n_vectors: n_vec,
                    dim: HEAD_DIM,
                    vectors: Matrix {
                        rows: n_vec,
                        cols: HEAD_DIM,
                        data: ed,
                    },
                    provenance: crate::embeddings::Provenance::Symmetric,
                },
            });
        }
        layers.push(ConvLayer {
            spec,
            w: Matrix {
                rows: spec.out_channels,
                cols: spec.patch_len(),
                data: w_data,
            },
            b,
            prelu,
            heads,
            groups,
        });
    }
    let echo_len = r.read_u32::<LittleEndian>()? as usize;
    let mut echo = vec![0u8; echo_len];
    r.read_exact(&mut echo)?;
    let echo = String::from_utf8(echo).map_err(|_| SpelaError::Format("bad config echo".into()))?;
    Ok((
        CnnNetwork {
            layers,
            in_shape,
            n_classes,
            loss_kind,
        },
        echo,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn group_assignments_partition_classes() {
        let mut rng = Rng::new(5);
        let groups = make_group_assignments(10, 64, &mut rng).unwrap();
        assert_eq!(groups.len(), 64);
        let mut seen_sizes = std::collections::HashSet::new();
        for g in &groups {
            assert!((2..=5).contains(&g.n_groups));
            seen_sizes.insert(g.n_groups);
            assert_eq!(g.class_to_group.len(), 10);
            // every group non-empty, sizes within one of each other
            let mut counts = vec![0usize; g.n_groups];
            for gg in &g.class_to_group {
                assert!(*gg < g.n_groups);
                counts[*gg] += 1;
            }
            let mn = *counts.iter().min().unwrap();
            let mx = *counts.iter().max().unwrap();
            assert!(mn >= 1 && mx - mn <= 1, "counts {counts:?}");
            // classes_in is the inverse map
            let mut total = 0;
            for grp in 0..g.n_groups {
                total += g.classes_in(grp).len();
            }
            assert_eq!(total, 10);
        }
        // group counts vary across kernels
        assert!(seen_sizes.len() > 1);
        // deterministic
        let mut rng2 = Rng::new(5);
        assert_eq!(groups, make_group_assignments(10, 64, &mut rng2).unwrap());
    }

    #[test]
    fn two_class_data_always_two_groups() {
        let mut rng = Rng::new(7);
        for g in make_group_assignments(2, 16, &mut rng).unwrap() {
            assert_eq!(g.n_groups, 2);
        }
    }

    fn random_map(c: usize, h: usize, w: usize, rng: &mut Rng) -> FeatureMap {
        FeatureMap {
            channels: c,
            h,
            w,
            data: (0..c * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        }
    }

    // straight six-loop convolution, no im2col
    fn conv_naive(layer: &ConvLayer, input: &FeatureMap) -> FeatureMap {
        let spec = &layer.spec;
        let (oh, ow) = spec.out_hw(input.h, input.w);
        let mut z = FeatureMap::zeros(spec.out_channels, oh, ow);
        for ch in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = layer.b[ch];
                    for ic in 0..spec.in_channels {
                        for ky in 0..spec.kernel {
                            for kx in 0..spec.kernel {
                                let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < input.h
                                    && (ix as usize) < input.w
                                {
                                    let wi = ic * spec.kernel * spec.kernel + ky * spec.kernel + kx;
                                    acc += layer.w.get(ch, wi)
                                        * input.get(ic, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    z.data[ch * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
        z
    }

    #[test]
    fn conv_forward_matches_naive_loops() {
        let mut rng = Rng::new(11);
        for trial in 0..20 {
            let in_ch = 1 + rng.below(3);
            let out_ch = 1 + rng.below(4);
            let k = [1, 3, 5][rng.below(3)];
            let h = k + rng.below(6);
            let w = k + rng.below(6);
            let spec = ConvSpec {
                in_channels: in_ch,
                out_channels: out_ch,
                kernel: k,
                stride: 1,
                pad: k / 2,
            };
            let groups = make_group_assignments(4, out_ch, &mut rng).unwrap();
            let (oh, ow) = spec.out_hw(h, w);
            let layer = ConvLayer::new(spec, groups, oh * ow, &mut rng).unwrap();
            let input = random_map(in_ch, h, w, &mut rng);
            let (z, a) = conv_forward(&layer, &input).unwrap();
            let z_ref = conv_naive(&layer, &input);
            for (i, (x, y)) in z.data.iter().zip(z_ref.data.iter()).enumerate() {
                assert_relative_eq!(x, y, epsilon = 1e-10, max_relative = 1e-10);
                let _ = i;
            }
            // prelu applied per channel
            let n = z.h * z.w;
            for ch in 0..out_ch {
                for p in 0..n {
                    let zz = z.data[ch * n + p];
                    let expect = if zz > 0.0 { zz } else { layer.prelu[ch] * zz };
                    assert_relative_eq!(a.data[ch * n + p], expect, epsilon = 1e-12);
                }
            }
            let _ = trial;
        }
    }

    #[test]
    fn same_padding_preserves_spatial_size() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 32,
            kernel: 5,
            stride: 1,
            pad: 2,
        };
        assert_eq!(spec.out_hw(28, 28), (28, 28));
        assert_eq!(spec.out_hw(14, 14), (14, 14));
    }

    #[test]
    fn max_pool_oracle() {
        let input = FeatureMap {
            channels: 1,
            h: 4,
            w: 4,
            data: vec![
                1.0, 2.0, 3.0, 4.0, //
                5.0, 6.0, 7.0, 8.0, //
                -1.0, -2.0, -3.0, -4.0, //
                -5.0, -6.0, -7.0, -8.0,
            ],
        };
        let out = max_pool2(&input);
        assert_eq!(out.h, 2);
        assert_eq!(out.w, 2);
        assert_eq!(out.data, vec![6.0, 8.0, -1.0, -3.0]);
        // odd trailing column dropped
        let odd = random_map(2, 5, 7, &mut Rng::new(3));
        let p = max_pool2(&odd);
        assert_eq!((p.h, p.w), (2, 3));
    }

    #[test]
    fn tally_matches_brute_force() {
        let mut rng = Rng::new(19);
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 6,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let groups = make_group_assignments(5, 6, &mut rng).unwrap();
        let layer = ConvLayer::new(spec, groups, 16, &mut rng).unwrap();
        let input = random_map(1, 4, 4, &mut rng);
        let (_z, a) = conv_forward(&layer, &input).unwrap();
        let tally = tally_scores(&layer, &a).unwrap();
        // brute force: recompute each vote by scanning all group cosines
        let mut expect = vec![0u32; 5];
        for k in 0..6 {
            let h = head_forward(&layer.heads[k], a.channel(k)).unwrap();
            let mut best = 0;
            for g in 1..layer.heads[k].embeddings.n_vectors {
                let a_s = linalg::cos_sim(&h, layer.heads[k].embeddings.row(g)).unwrap();
                let b_s = linalg::cos_sim(&h, layer.heads[k].embeddings.row(best)).unwrap();
                if a_s > b_s {
                    best = g;
                }
            }
            for c in 0..5 {
                if layer.groups[k].class_to_group[c] == best {
                    expect[c] += 1;
                }
            }
        }
        assert_eq!(tally, expect);
        // total tally mass is the kernel count
        let per_kernel: u32 = 6;
        assert!(tally.iter().sum::<u32>() >= per_kernel); // every vote adds >=1 class
    }

    #[test]
    fn adam_single_step_oracle() {
        let mut opt = Adam::new(1);
        let mut p = vec![1.0];
        let g = vec![0.5];
        opt.step(&mut p, &g, 0.1);
        // first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let expect = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert_relative_eq!(p[0], expect, epsilon = 1e-10);
        // direction follows the sign of the gradient regardless of magnitude
        let mut opt2 = Adam::new(1);
        let mut q = vec![1.0];
        opt2.step(&mut q, &[-1e-6], 0.1);
        assert!(q[0] > 1.0);
    }

    #[test]
    fn kernel_gradients_match_finite_differences() {
        let mut rng = Rng::new(23);
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let groups = make_group_assignments(4, 1, &mut rng).unwrap();
        let mut layer = ConvLayer::new(spec, groups, 16, &mut rng).unwrap();
        let input = random_map(1, 4, 4, &mut rng);
        let group_label = 1 % layer.groups[0].n_groups;
        let eps = 1e-6;

        let loss_of = |layer: &ConvLayer| -> f64 {
            let (_z, a) = conv_forward(layer, &input).unwrap();
            let h = head_forward(&layer.heads[0], a.channel(0)).unwrap();
            mlp::local_loss(&h, &layer.heads[0].embeddings, group_label, LossKind::CosineLog)
                .unwrap()
        };

        let cols = im2col(&input, &layer.spec);
        let (z, a) = conv_forward(&layer, &input).unwrap();
        if z.data.iter().any(|v| v.abs() < 1e-4) {
            panic!("bad test instance: pre-activation at the kink");
        }
        let g = kernel_grads(
            &layer,
            0,
            &cols,
            z.channel(0),
            a.channel(0),
            group_label,
            LossKind::CosineLog,
        )
        .unwrap();

        let check = |analytic: f64, fd: f64, what: &str| {
            let denom = analytic.abs().max(fd.abs()).max(1e-7);
            let err = (analytic - fd).abs();
            assert!(
                err / denom < 1e-4 || err < 1e-8,
                "{what}: analytic={analytic} fd={fd}"
            );
        };

        // kernel weights
        for r in 0..layer.w.cols {
            let orig = layer.w.get(0, r);
            layer.w.set(0, r, orig + eps);
            let lp = loss_of(&layer);
            layer.w.set(0, r, orig - eps);
            let lm = loss_of(&layer);
            layer.w.set(0, r, orig);
            check(g.kernel_w[r], (lp - lm) / (2.0 * eps), &format!("kw[{r}]"));
        }
        // kernel bias
        {
            let orig = layer.b[0];
            layer.b[0] = orig + eps;
            let lp = loss_of(&layer);
            layer.b[0] = orig - eps;
            let lm = loss_of(&layer);
            layer.b[0] = orig;
            check(g.kernel_b, (lp - lm) / (2.0 * eps), "kb");
        }
        // prelu slope
        {
            let orig = layer.prelu[0];
            layer.prelu[0] = orig + eps;
            let lp = loss_of(&layer);
            layer.prelu[0] = orig - eps;
            let lm = loss_of(&layer);
            layer.prelu[0] = orig;
            check(g.prelu, (lp - lm) / (2.0 * eps), "slope");
        }
        // a few head weights and biases
        for idx in [0usize, 7, 31] {
            let orig = layer.heads[0].w.data[idx * layer.heads[0].w.cols % layer.heads[0].w.data.len()];
            let flat = idx * layer.heads[0].w.cols % layer.heads[0].w.data.len();
            layer.heads[0].w.data[flat] = orig + eps;
            let lp = loss_of(&layer);
            layer.heads[0].w.data[flat] = orig - eps;
            let lm = loss_of(&layer);
            layer.heads[0].w.data[flat] = orig;
            check(g.head_w.data[flat], (lp - lm) / (2.0 * eps), &format!("hw[{flat}]"));
        }
        for i in [0usize, 15, 31] {
            let orig = layer.heads[0].b[i];
            layer.heads[0].b[i] = orig + eps;
            let lp = loss_of(&layer);
            layer.heads[0].b[i] = orig - eps;
            let lm = loss_of(&layer);
            layer.heads[0].b[i] = orig;
            check(g.head_b[i], (lp - lm) / (2.0 * eps), &format!("hb[{i}]"));
        }
    }

    // tiny image set: class 0 is a bright horizontal band, class 1 vertical
    fn bars(n_per_class: usize, side: usize, noise: f64, rng: &mut Rng) -> LabeledDataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2usize {
            for _ in 0..n_per_class {
                let pos = rng.below(side);
                let mut img = vec![0.0; side * side];
                for t in 0..side {
                    let (y, x) = if c == 0 { (pos, t) } else { (t, pos) };
                    img[y * side + x] = 1.0;
                }
                for v in img.iter_mut() {
                    *v += noise * rng.normal();
                }
                rows.push(img);
                labels.push(c);
            }
        }
        LabeledDataset {
            samples: Matrix::from_rows(rows),
            labels,
            n_classes: 2,
            normalization: crate::data::Normalization::None,
            image_shape: Some((1, side, side)),
        }
    }

    #[test]
    fn learns_bar_orientation_and_is_deterministic() {
        let mut rng = Rng::new(31);
        let data = bars(30, 8, 0.05, &mut rng);
        let test = bars(10, 8, 0.05, &mut rng);
        let build = || {
            let mut nrng = Rng::new(6);
            CnnNetwork::new((1, 8, 8), 2, 8, 3, 2, LossKind::CosineLog, &mut nrng).unwrap()
        };
        let cfg = CnnTrainConfig {
            lr: 0.05,
            epochs_per_layer: vec![12, 6],
            batch_size: 10,
            seed: 4,
            eval_every: 0,
        };
        let mut net = build();
        let m1 = cnn_train(&mut net, &data, Some(&test), &cfg).unwrap();
        let acc1 = cnn_evaluate(&net, &test, 1).unwrap();
        let acc2 = cnn_evaluate(&net, &test, 2).unwrap();
        assert!(acc1 > 0.9, "layer-1 acc {acc1}");
        assert!(acc2 > 0.9, "layer-2 acc {acc2}");
        let mut net_b = build();
        let m2 = cnn_train(&mut net_b, &data, Some(&test), &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(net.layers[0].w, net_b.layers[0].w);
        assert_eq!(net.layers[1].w, net_b.layers[1].w);
    }

    #[test]
    fn earlier_layers_frozen_while_later_trains() {
        let mut rng = Rng::new(41);
        let data = bars(10, 8, 0.05, &mut rng);
        let mut nrng = Rng::new(8);
        let mut net = CnnNetwork::new((1, 8, 8), 2, 4, 3, 2, LossKind::CosineLog, &mut nrng).unwrap();
        let cfg = CnnTrainConfig {
            lr: 0.05,
            epochs_per_layer: vec![0, 2],
            batch_size: 5,
            seed: 1,
            eval_every: 0,
        };
        let w0_before = net.layers[0].w.clone();
        let heads0_before: Vec<Matrix> = net.layers[0].heads.iter().map(|h| h.w.clone()).collect();
        let w1_before = net.layers[1].w.clone();
        cnn_train(&mut net, &data, None, &cfg).unwrap();
        assert_eq!(net.layers[0].w, w0_before);
        for (h, before) in net.layers[0].heads.iter().zip(heads0_before.iter()) {
            assert_eq!(&h.w, before);
        }
        assert_ne!(net.layers[1].w, w1_before);
    }

    #[test]
    fn group_assignments_shared_across_layers() {
        let mut rng = Rng::new(51);
        let net = CnnNetwork::new((1, 8, 8), 3, 6, 3, 4, LossKind::CosineLog, &mut rng).unwrap();
        for l in 1..net.depth() {
            assert_eq!(net.layers[0].groups, net.layers[l].groups);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(61);
        let data = bars(6, 8, 0.05, &mut rng);
        let mut nrng = Rng::new(9);
        let mut net = CnnNetwork::new((1, 8, 8), 2, 4, 3, 2, LossKind::CosineLog, &mut nrng).unwrap();
        let cfg = CnnTrainConfig {
            lr: 0.05,
            epochs_per_layer: vec![1, 1],
            batch_size: 4,
            seed: 2,
            eval_every: 0,
        };
        cnn_train(&mut net, &data, None, &cfg).unwrap();
        let p = dir.path().join("net.spcn");
        save_checkpoint(&net, "lr=0.05\n", &p).unwrap();
        let (back, echo) = load_checkpoint(&p).unwrap();
        assert_eq!(echo, "lr=0.05\n");
        assert_eq!(back.in_shape, net.in_shape);
        assert_eq!(back.loss_kind, net.loss_kind);
        for (a, b) in net.layers.iter().zip(back.layers.iter()) {
            assert_eq!(a.spec, b.spec);
            assert_eq!(a.w, b.w);
            assert_eq!(a.prelu, b.prelu);
            assert_eq!(a.groups, b.groups);
            for (ha, hb) in a.heads.iter().zip(b.heads.iter()) {
                assert_eq!(ha.w, hb.w);
                assert_eq!(ha.embeddings.vectors, hb.embeddings.vectors);
            }
        }
        let map = sample_map(&data, 0).unwrap();
        assert_eq!(
            cnn_predict(&net, &map, 2).unwrap(),
            cnn_predict(&back, &map, 2).unwrap()
        );
    }
}
