//! End-to-end backprop baseline. Same dense stack as the local-learning
//! network, but the final layer feeds a softmax cross-entropy head and
//! gradients flow backwards through every layer. Instrumented with the same
//! profiler counters so the two training schemes can be costed side by side.

use crate::data::LabeledDataset;
use crate::error::{Result, SpelaError};
use crate::linalg::{self, Matrix};
use crate::metrics::{EpochRecord, RunMetrics};
use crate::mlp::{Activation, DecaySchedule};
use crate::profiler;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct BpLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub use_bias: bool,
    /// None on the output layer: its pre-activations are the logits.
    pub activation: Option<Activation>,
    pub latent_w: Option<Matrix>,
    pub dropout_rate: f64,
}

impl BpLayer {
    pub fn in_dim(&self) -> usize {
        self.w.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows
    }
}

#[derive(Debug, Clone)]
pub struct BpNetwork {
    pub layers: Vec<BpLayer>,
    pub input_dim: usize,
    pub n_classes: usize,
}

impl BpNetwork {
    /// hidden_dims lists the hidden widths; the softmax output layer of width
    /// n_classes is appended automatically.
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        n_classes: usize,
        activation: Activation,
        use_bias: bool,
        dropout: f64,
        binarize: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(SpelaError::Config("need at least two classes".into()));
        }
        let mut layers = Vec::with_capacity(hidden_dims.len() + 1);
        let mut prev = input_dim;
        for &width in hidden_dims {
            layers.push(make_layer(prev, width, Some(activation), use_bias, dropout, binarize, rng));
            prev = width;
        }
        layers.push(make_layer(prev, n_classes, None, use_bias, 0.0, binarize, rng));
        Ok(BpNetwork {
            layers,
            input_dim,
            n_classes,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

fn make_layer(
    in_dim: usize,
    out_dim: usize,
    activation: Option<Activation>,
    use_bias: bool,
    dropout: f64,
    binarize: bool,
    rng: &mut Rng,
) -> BpLayer {
    let real = linalg::he_uniform_init(out_dim, in_dim, rng);
    let (w, latent_w) = if binarize {
        (real.binarize_view(), Some(real))
    } else {
        (real, None)
    };
    BpLayer {
        w,
        b: vec![0.0; out_dim],
        use_bias,
        activation,
        latent_w,
        dropout_rate: dropout,
    }
}

impl profiler::ParamCount for BpNetwork {
    fn param_scalars(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                let w = (l.out_dim() * l.in_dim()) as u64;
                let b = if l.use_bias { l.out_dim() as u64 } else { 0 };
                w + b
            })
            .sum()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|v| v / s).collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -(probs[label].max(1e-300)).ln()
}

struct SampleTrace {
    /// input to each layer (layer k reads inputs[k]); inputs[0] is the sample
    inputs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    probs: Vec<f64>,
    scalars: u64,
}

impl SampleTrace {
    fn release(&mut self) {
        profiler::activation_release(self.scalars);
        self.scalars = 0;
    }
}

fn forward_trace(
    net: &BpNetwork,
    x: &[f64],
    training: bool,
    rng: &mut Rng,
) -> Result<SampleTrace> {
    if x.len() != net.input_dim {
        return Err(SpelaError::DimMismatch(format!(
            "input dim {} != network input {}",
            x.len(),
            net.input_dim
        )));
    }
    let mut inputs = Vec::with_capacity(net.depth());
    let mut zs = Vec::with_capacity(net.depth());
    let mut masks = Vec::with_capacity(net.depth());
    let mut scalars = 0u64;
    let mut h = x.to_vec();
    for layer in &net.layers {
        let mut z = linalg::matvec(&layer.w, &h)?;
        if layer.use_bias {
            for (zi, bi) in z.iter_mut().zip(layer.b.iter()) {
                *zi += bi;
            }
        }
        let mut out = match layer.activation {
            Some(a) => a.apply(&z),
            None => z.clone(),
        };
        let mask = if training && layer.dropout_rate > 0.0 {
            let keep = 1.0 - layer.dropout_rate;
            let m: Vec<f64> = (0..out.len())
                .map(|_| if rng.uniform(0.0, 1.0) < keep { 1.0 / keep } else { 0.0 })
                .collect();
            for (oi, mi) in out.iter_mut().zip(m.iter()) {
                *oi *= mi;
            }
            Some(m)
        } else {
            None
        };
        if training {
            // backprop keeps every layer's input and pre-activation until the
            // backward pass for this sample completes
            scalars += (h.len() + z.len()) as u64;
        }
        inputs.push(h);
        zs.push(z);
        masks.push(mask);
        h = out;
    }
    if training {
        profiler::activation_alloc(scalars);
    }
    let probs = softmax(&h);
    Ok(SampleTrace {
        inputs,
        z: zs,
        masks,
        probs,
        scalars,
    })
}

/// Class probabilities for one sample (inference mode, no dropout).
pub fn bp_predict_probs(net: &BpNetwork, x: &[f64]) -> Result<Vec<f64>> {
    let mut rng = Rng::new(0);
    let trace = forward_trace(net, x, false, &mut rng)?;
    Ok(trace.probs)
}

pub fn bp_predict(net: &BpNetwork, x: &[f64]) -> Result<usize> {
    let probs = bp_predict_probs(net, x)?;
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn bp_evaluate(net: &BpNetwork, data: &LabeledDataset) -> Result<f64> {
    let mut hits = 0usize;
    for s in 0..data.len() {
        if bp_predict(net, data.sample(s))? == data.labels[s] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

/// Per-layer gradients for one sample, plus its loss. The backward transport
/// (W^T delta) for every non-output layer is charged to the update counter,
/// as is the rank-1 weight gradient of every layer.
fn backward(
    net: &BpNetwork,
    trace: &SampleTrace,
    label: usize,
    g_w: &mut [Matrix],
    g_b: &mut [Vec<f64>],
) -> Result<f64> {
    let loss = cross_entropy(&trace.probs, label);
    // softmax + cross entropy: dL/dlogit_i = p_i - [i == label]
    let mut delta: Vec<f64> = trace.probs.clone();
    delta[label] -= 1.0;
    for k in (0..net.depth()).rev() {
        let layer = &net.layers[k];
        // delta currently holds dL/dz for layer k
        linalg::rank1_update(&mut g_w[k], 1.0, &delta, &trace.inputs[k]);
        if layer.use_bias {
            linalg::axpy(&mut g_b[k], 1.0, &delta);
        }
        if k == 0 {
            break;
        }
        // transport to the previous layer's output space
        let mut g_h = linalg::matvec_t(&layer.w, &delta)?;
        profiler::add_update_maccs((layer.out_dim() * layer.in_dim()) as u64);
        let below = &net.layers[k - 1];
        if let Some(mask) = &trace.masks[k - 1] {
            for (gi, mi) in g_h.iter_mut().zip(mask.iter()) {
                *gi *= mi;
            }
        }
        if let Some(a) = below.activation {
            let sg = a.grad(&trace.z[k - 1]);
            for (gi, si) in g_h.iter_mut().zip(sg.iter()) {
                *gi *= si;
            }
        }
        delta = g_h;
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct BpTrainConfig {
    pub lr0: f64,
    pub decay: DecaySchedule,
    pub lr_min: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for BpTrainConfig {
    fn default() -> Self {
        BpTrainConfig {
            lr0: 0.1,
            decay: DecaySchedule::Multiplicative { factor: 0.1, every: 60 },
            lr_min: 0.0,
            batch_size: 50,
            epochs: 100,
            momentum: 0.9,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl BpTrainConfig {
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

pub fn bp_train(
    net: &mut BpNetwork,
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &BpTrainConfig,
) -> Result<RunMetrics> {
    data.validate()?;
    if data.dim() != net.input_dim {
        return Err(SpelaError::DimMismatch(format!(
            "dataset dim {} != network input {}",
            data.dim(),
            net.input_dim
        )));
    }
    if data.n_classes != net.n_classes {
        return Err(SpelaError::Config(format!(
            "dataset classes {} != network classes {}",
            data.n_classes, net.n_classes
        )));
    }
    if cfg.batch_size == 0 {
        return Err(SpelaError::Config("batch_size must be positive".into()));
    }
    profiler::mark_run_active(true);

    let mut metrics = RunMetrics::new(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = Rng::new(cfg.seed).split(1);
    let mut dropout_rng = Rng::new(cfg.seed).split(2);
    let depth = net.depth();

    let mut vel_w: Vec<Matrix> = net
        .layers
        .iter()
        .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
        .collect();
    let mut vel_b: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            let mut g_w: Vec<Matrix> = net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect();
            let mut g_b: Vec<Vec<f64>> =
                net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect();
            for &s in batch {
                let mut trace = forward_trace(net, data.sample(s), true, &mut dropout_rng)?;
                loss_sum += backward(net, &trace, data.labels[s], &mut g_w, &mut g_b)?;
                trace.release();
                loss_count += 1;
            }
            let scale = 1.0 / batch.len() as f64;
            for k in 0..depth {
                let layer = &mut net.layers[k];
                for (vi, gi) in vel_w[k].data.iter_mut().zip(g_w[k].data.iter()) {
                    *vi = cfg.momentum * *vi + gi * scale;
                }
                for (vi, gi) in vel_b[k].iter_mut().zip(g_b[k].iter()) {
                    *vi = cfg.momentum * *vi + gi * scale;
                }
                match &mut layer.latent_w {
                    Some(latent) => {
                        for (wi, vi) in latent.data.iter_mut().zip(vel_w[k].data.iter()) {
                            *wi -= lr * vi;
                        }
                        layer.w = latent.binarize_view();
                    }
                    None => {
                        for (wi, vi) in layer.w.data.iter_mut().zip(vel_w[k].data.iter()) {
                            *wi -= lr * vi;
                        }
                    }
                }
                if layer.use_bias {
                    for (bi, vi) in layer.b.iter_mut().zip(vel_b[k].iter()) {
                        *bi -= lr * vi;
                    }
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

        let eval_now = cfg.eval_every > 0
            && (epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let (train_acc, test_acc) = if eval_now {
            let tr = bp_evaluate(net, data)?;
            let te = match test {
                Some(t) => Some(vec![bp_evaluate(net, t)?]),
                None => None,
            };
            (Some(vec![tr]), te)
        } else {
            (None, None)
        };
        profiler::epoch_snapshot(epoch);
        metrics.push(EpochRecord {
            epoch,
            lr,
            train_loss: vec![loss_sum / loss_count.max(1) as f64],
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

const CKPT_MAGIC: &[u8; 4] = b"BPNW";

pub fn save_checkpoint(net: &BpNetwork, config_echo: &str, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(net.layers.len() as u32)?;
    w.write_u32::<LittleEndian>(net.input_dim as u32)?;
    w.write_u32::<LittleEndian>(net.n_classes as u32)?;
    for layer in &net.layers {
        w.write_u32::<LittleEndian>(layer.in_dim() as u32)?;
        w.write_u32::<LittleEndian>(layer.out_dim() as u32)?;
        match layer.activation {
            None => w.write_u8(0)?,
            Some(Activation::Relu) => w.write_u8(1)?,
            Some(Activation::LeakyRelu(_)) => w.write_u8(2)?,
        }
        w.write_f64::<LittleEndian>(layer.activation.map_or(0.0, |a| a.slope()))?;
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
    }
    let echo = config_echo.as_bytes();
    w.write_u32::<LittleEndian>(echo.len() as u32)?;
    w.write_all(echo)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(BpNetwork, String)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(SpelaError::Format("bad checkpoint magic".into()));
    }
    let n_layers = r.read_u32::<LittleEndian>()? as usize;
    let input_dim = r.read_u32::<LittleEndian>()? as usize;
    let n_classes = r.read_u32::<LittleEndian>()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = r.read_u32::<LittleEndian>()? as usize;
        let out_dim = r.read_u32::<LittleEndian>()? as usize;
        let act_tag = r.read_u8()?;
        let slope = r.read_f64::<LittleEndian>()?;
        let activation = match act_tag {
            0 => None,
            1 => Some(Activation::Relu),
            2 => Some(Activation::LeakyRelu(slope)),
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
        layers.push(BpLayer {
            w: Matrix {
                rows: out_dim,
                cols: in_dim,
                data: w_data,
            },
            b,
            use_bias,
            activation,
            latent_w,
            dropout_rate,
        });
    }
    let echo_len = r.read_u32::<LittleEndian>()? as usize;
    let mut echo = vec![0u8; echo_len];
    r.read_exact(&mut echo)?;
    let echo = String::from_utf8(echo).map_err(|_| SpelaError::Format("bad config echo".into()))?;
    Ok((
        BpNetwork {
            layers,
            input_dim,
            n_classes,
        },
        echo,
    ))
}
