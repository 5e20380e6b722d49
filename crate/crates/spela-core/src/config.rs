//! Experiment configuration: a flat key=value file with [section] headers and
//! # comments. Keys are addressed as "section.key". The same struct drives the
//! command line tool and the sweep runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::bp::{BpNetwork, BpTrainConfig};
use crate::cnn::{CnnNetwork, CnnTrainConfig};
use crate::data::{self, CifarVariant, LabeledDataset, Normalization};
use crate::embeddings::{load_or_generate, SimulationConfig};
use crate::error::{Result, SpelaError};
use crate::metrics::RunMetrics;
use crate::mlp::{self, Activation, DecaySchedule, LossKind, SpelaNetwork, TrainConfig};
use crate::rng::Rng;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(SpelaError::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            values.insert(key, v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        ConfigFile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| SpelaError::Config(format!("{key}: bad number {v:?}"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| SpelaError::Config(format!("{key}: bad integer {v:?}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| SpelaError::Config(format!("{key}: bad integer {v:?}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(SpelaError::Config(format!("{key}: bad bool {v:?}"))),
        }
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| SpelaError::Config(format!("{key}: bad list entry {p:?}")))
                })
                .collect(),
        }
    }

    /// The file re-rendered in canonical form, for run manifests.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut last_section = String::new();
        for (k, v) in &self.values {
            let (section, key) = match k.rsplit_once('.') {
                Some((s, key)) => (s.to_string(), key),
                None => (String::new(), k.as_str()),
            };
            if section != last_section {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                last_section = section;
            }
            out.push_str(&format!("{key} = {v}\n"));
        }
        out
    }
}

pub fn parse_loss(name: &str) -> Result<LossKind> {
    match name {
        "cosine_log" => Ok(LossKind::CosineLog),
        "angular_log" => Ok(LossKind::AngularLog),
        "euclidean" => Ok(LossKind::Euclidean),
        "normalized_euclidean" => Ok(LossKind::NormalizedEuclidean),
        "cross_entropy_head" => Ok(LossKind::CrossEntropyHead),
        _ => Err(SpelaError::Config(format!("unknown loss {name:?}"))),
    }
}

pub fn parse_decay(cfg: &ConfigFile) -> Result<DecaySchedule> {
    match cfg.str_or("train.decay", "none") {
        "none" => Ok(DecaySchedule::None),
        "subtractive" => Ok(DecaySchedule::Subtractive {
            amount: cfg.f64_or("train.decay_amount", 0.1)?,
            every: cfg.usize_or("train.decay_every", 10)?,
        }),
        "multiplicative" => Ok(DecaySchedule::Multiplicative {
            factor: cfg.f64_or("train.decay_factor", 0.1)?,
            every: cfg.usize_or("train.decay_every", 60)?,
        }),
        d => Err(SpelaError::Config(format!("unknown decay {d:?}"))),
    }
}

fn parse_activation(cfg: &ConfigFile) -> Result<Activation> {
    match cfg.str_or("model.activation", "leaky_relu") {
        "relu" => Ok(Activation::Relu),
        "leaky_relu" => Ok(Activation::LeakyRelu(cfg.f64_or("model.slope", 0.001)?)),
        a => Err(SpelaError::Config(format!("unknown activation {a:?}"))),
    }
}

pub fn data_dir(cfg: &ConfigFile) -> PathBuf {
    if let Some(d) = cfg.get("data.dir") {
        return PathBuf::from(d);
    }
    match std::env::var("SPELA_DATA_DIR") {
        Ok(d) => PathBuf::from(d),
        Err(_) => PathBuf::from("./data"),
    }
}

/// Train and test splits plus the checksums of the files they came from.
pub struct LoadedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub checksums: Vec<(String, u64)>,
}

pub fn load_dataset(cfg: &ConfigFile) -> Result<LoadedData> {
    let dir = data_dir(cfg);
    let name = cfg.str_or("data.dataset", "synthetic");
    let mut checksums = Vec::new();
    let mut checksum = |p: &Path| -> Result<()> {
        checksums.push((p.display().to_string(), data::file_checksum(p)?));
        Ok(())
    };
    let (mut train, mut test) = match name {
        "mnist" | "fashion_mnist" => {
            let sub = dir.join(name);
            let ti = sub.join("train-images-idx3-ubyte");
            let tl = sub.join("train-labels-idx1-ubyte");
            let si = sub.join("t10k-images-idx3-ubyte");
            let sl = sub.join("t10k-labels-idx1-ubyte");
            for p in [&ti, &tl, &si, &sl] {
                checksum(p)?;
            }
            (data::load_idx(&ti, &tl)?, data::load_idx(&si, &sl)?)
        }
        "cifar10" | "cifar100" => {
            let variant = if name == "cifar10" {
                CifarVariant::C10
            } else {
                CifarVariant::C100
            };
            let sub = dir.join(name);
            let train = data::load_cifar(&sub, variant, true)?;
            let test = data::load_cifar(&sub, variant, false)?;
            (train, test)
        }
        "features" => {
            let tr = PathBuf::from(cfg.get("data.train_file").ok_or_else(|| {
                SpelaError::Config("data.train_file required for features".into())
            })?);
            let te = PathBuf::from(cfg.get("data.test_file").ok_or_else(|| {
                SpelaError::Config("data.test_file required for features".into())
            })?);
            checksum(&tr)?;
            checksum(&te)?;
            (data::load_features(&tr)?, data::load_features(&te)?)
        }
        "synthetic" => {
            let n_classes = cfg.usize_or("data.classes", 4)?;
            let dim = cfg.usize_or("data.input_dim", 16)?;
            let n_train = cfg.usize_or("data.train_per_class", 100)?;
            let n_test = cfg.usize_or("data.test_per_class", 30)?;
            let spread = cfg.f64_or("data.spread", 0.15)?;
            // one generation so train and test share class centers
            let mut rng = Rng::new(cfg.u64_or("data.seed", 1)?);
            let all =
                data::synthetic_blobs(n_train + n_test, dim, n_classes, spread, &mut rng);
            let split = |lo: usize, hi: usize| -> LabeledDataset {
                let mut rows = Vec::new();
                let mut labels = Vec::new();
                for c in 0..n_classes {
                    for i in lo..hi {
                        let s = c * (n_train + n_test) + i;
                        rows.push(all.sample(s).to_vec());
                        labels.push(all.labels[s]);
                    }
                }
                LabeledDataset {
                    samples: crate::linalg::Matrix::from_rows(rows),
                    labels,
                    n_classes,
                    normalization: Normalization::None,
                    image_shape: None,
                }
            };
            (split(0, n_train), split(n_train, n_train + n_test))
        }
        other => {
            return Err(SpelaError::Config(format!("unknown dataset {other:?}")))
        }
    };

    let fraction = cfg.f64_or("data.fraction", 1.0)?;
    if fraction < 1.0 {
        let mut rng = Rng::new(cfg.u64_or("data.fraction_seed", 0)?);
        train = data::subsample(&train, fraction, &mut rng)?;
    }

    match cfg.str_or("data.normalization", "scale01") {
        "none" => {}
        "scale01" => {
            // idx/cifar loaders already scale to [0,1]; recorded for manifests
            train.normalization = Normalization::Scale01;
            test.normalization = Normalization::Scale01;
        }
        "l2" => {
            for ds in [&mut train, &mut test] {
                for s in 0..ds.len() {
                    let row = crate::linalg::normalize(ds.sample(s));
                    let dim = ds.dim();
                    ds.samples.data[s * dim..(s + 1) * dim].copy_from_slice(&row);
                }
                ds.normalization = Normalization::PerSampleL2;
            }
        }
        n => return Err(SpelaError::Config(format!("unknown normalization {n:?}"))),
    }

    Ok(LoadedData {
        train,
        test,
        checksums,
    })
}

pub enum BuiltModel {
    Local(SpelaNetwork),
    Backprop(BpNetwork),
    Conv(CnnNetwork),
}

pub fn embedding_cache_dir(cfg: &ConfigFile) -> PathBuf {
    PathBuf::from(cfg.str_or("model.embedding_cache", "./embeddings"))
}

pub fn build_model(cfg: &ConfigFile, data: &LabeledDataset) -> Result<BuiltModel> {
    let seed = cfg.u64_or("train.seed", 0)?;
    let mut rng = Rng::new(seed).split(10);
    let n_classes = data.n_classes;
    match cfg.str_or("model.arch", "mlp") {
        "mlp" => {
            let hidden = cfg.usize_list_or("model.hidden", &[1000])?;
            let cache = embedding_cache_dir(cfg);
            std::fs::create_dir_all(&cache)?;
            let emb_seed = cfg.u64_or("model.embedding_seed", 0)?;
            let mut embeddings = Vec::with_capacity(hidden.len());
            for &width in &hidden {
                let ecfg = SimulationConfig {
                    rng_seed: emb_seed,
                    ..SimulationConfig::default()
                };
                embeddings.push(load_or_generate(&cache, n_classes, width, &ecfg)?);
            }
            let net = SpelaNetwork::new(
                data.dim(),
                &hidden,
                embeddings,
                parse_activation(cfg)?,
                cfg.bool_or("model.bias", true)?,
                cfg.f64_or("model.dropout", 0.0)?,
                cfg.bool_or("model.binarize", false)?,
                parse_loss(cfg.str_or("model.loss", "cosine_log"))?,
                &mut rng,
            )?;
            Ok(BuiltModel::Local(net))
        }
        "bp" => {
            let hidden = cfg.usize_list_or("model.hidden", &[1000])?;
            let net = BpNetwork::new(
                data.dim(),
                &hidden,
                n_classes,
                parse_activation(cfg)?,
                cfg.bool_or("model.bias", true)?,
                cfg.f64_or("model.dropout", 0.0)?,
                cfg.bool_or("model.binarize", false)?,
                &mut rng,
            )?;
            Ok(BuiltModel::Backprop(net))
        }
        "cnn" => {
            let shape = data.image_shape.ok_or_else(|| {
                SpelaError::Config("cnn needs an image dataset".into())
            })?;
            let net = CnnNetwork::new(
                shape,
                cfg.usize_or("model.layers", 2)?,
                cfg.usize_or("model.channels", 32)?,
                cfg.usize_or("model.kernel", 5)?,
                n_classes,
                parse_loss(cfg.str_or("model.loss", "cosine_log"))?,
                &mut rng,
            )?;
            Ok(BuiltModel::Conv(net))
        }
        a => Err(SpelaError::Config(format!("unknown arch {a:?}"))),
    }
}

pub fn train_config(cfg: &ConfigFile) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        lr0: cfg.f64_or("train.lr0", d.lr0)?,
        decay: parse_decay(cfg)?,
        lr_min: cfg.f64_or("train.lr_min", d.lr_min)?,
        batch_size: cfg.usize_or("train.batch_size", d.batch_size)?,
        epochs: cfg.usize_or("train.epochs", d.epochs)?,
        dropout: cfg.f64_or("model.dropout", 0.0)?,
        seed: cfg.u64_or("train.seed", 0)?,
        binarize_weights: cfg.bool_or("model.binarize", false)?,
        loss_kind: parse_loss(cfg.str_or("model.loss", "cosine_log"))?,
        per_sample_updates: cfg.bool_or("train.per_sample_updates", false)?,
        eval_every: cfg.usize_or("train.eval_every", 1)?,
    })
}

pub fn bp_train_config(cfg: &ConfigFile) -> Result<BpTrainConfig> {
    let d = BpTrainConfig::default();
    Ok(BpTrainConfig {
        lr0: cfg.f64_or("train.lr0", d.lr0)?,
        decay: parse_decay(cfg)?,
        lr_min: cfg.f64_or("train.lr_min", 0.0)?,
        batch_size: cfg.usize_or("train.batch_size", d.batch_size)?,
        epochs: cfg.usize_or("train.epochs", d.epochs)?,
        momentum: cfg.f64_or("train.momentum", d.momentum)?,
        seed: cfg.u64_or("train.seed", 0)?,
        eval_every: cfg.usize_or("train.eval_every", 1)?,
    })
}

pub fn cnn_train_config(cfg: &ConfigFile) -> Result<CnnTrainConfig> {
    let d = CnnTrainConfig::default();
    Ok(CnnTrainConfig {
        lr: cfg.f64_or("train.lr0", d.lr)?,
        epochs_per_layer: cfg.usize_list_or("train.epochs_per_layer", &d.epochs_per_layer)?,
        batch_size: cfg.usize_or("train.batch_size", d.batch_size)?,
        seed: cfg.u64_or("train.seed", 0)?,
        eval_every: cfg.usize_or("train.eval_every", d.eval_every)?,
    })
}

/// Train whatever the config describes; returns the trained model and its
/// metric history.
pub fn run_training(
    cfg: &ConfigFile,
    data: &LoadedData,
) -> Result<(BuiltModel, RunMetrics)> {
    let mut model = build_model(cfg, &data.train)?;
    let metrics = match &mut model {
        BuiltModel::Local(net) => mlp::train(net, &data.train, Some(&data.test), &train_config(cfg)?)?,
        BuiltModel::Backprop(net) => {
            crate::bp::bp_train(net, &data.train, Some(&data.test), &bp_train_config(cfg)?)?
        }
        BuiltModel::Conv(net) => {
            crate::cnn::cnn_train(net, &data.train, Some(&data.test), &cnn_train_config(cfg)?)?
        }
    };
    Ok((model, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_values() {
        let text = "\
# experiment
[model]
arch = mlp
hidden = 100, 50
dropout = 0.1  # ten percent

[train]
lr0 = 2.5
bias = true
";
        let cfg = ConfigFile::parse(text).unwrap();
        assert_eq!(cfg.get("model.arch"), Some("mlp"));
        assert_eq!(cfg.usize_list_or("model.hidden", &[]).unwrap(), vec![100, 50]);
        assert_eq!(cfg.f64_or("model.dropout", 0.0).unwrap(), 0.1);
        assert_eq!(cfg.f64_or("train.lr0", 0.0).unwrap(), 2.5);
        assert_eq!(cfg.f64_or("train.missing", 9.0).unwrap(), 9.0);
        assert!(cfg.get("bias").is_none()); // lives under [train]
        assert!(ConfigFile::parse("novalue\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let text = "[a]\nx = 1\n\n[b]\ny = two\n";
        let cfg = ConfigFile::parse(text).unwrap();
        let again = ConfigFile::parse(&cfg.render()).unwrap();
        assert_eq!(cfg.get("a.x"), again.get("a.x"));
        assert_eq!(cfg.get("b.y"), again.get("b.y"));
    }

    #[test]
    fn decay_parsing() {
        let cfg = ConfigFile::parse("[train]\ndecay = subtractive\ndecay_amount = 0.1\ndecay_every = 10\n").unwrap();
        assert_eq!(
            parse_decay(&cfg).unwrap(),
            DecaySchedule::Subtractive { amount: 0.1, every: 10 }
        );
        let cfg = ConfigFile::parse("[train]\ndecay = bogus\n").unwrap();
        assert!(parse_decay(&cfg).is_err());
    }

    #[test]
    fn synthetic_end_to_end_from_config() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "\
[model]
arch = mlp
hidden = 16, 16
loss = cosine_log
embedding_cache = {}

[train]
lr0 = 0.1
decay = none
epochs = 15
batch_size = 10
eval_every = 5

[data]
dataset = synthetic
classes = 4
input_dim = 8
train_per_class = 40
test_per_class = 15
spread = 0.15
",
            dir.path().join("emb").display()
        );
        let cfg = ConfigFile::parse(&text).unwrap();
        let data = load_dataset(&cfg).unwrap();
        assert_eq!(data.train.len(), 160);
        assert_eq!(data.test.len(), 60);
        let (model, metrics) = run_training(&cfg, &data).unwrap();
        assert!(matches!(model, BuiltModel::Local(_)));
        let acc = metrics.final_output_test_acc().unwrap();
        assert!(acc > 0.9, "test acc {acc}");
    }

    #[test]
    fn bp_from_config() {
        let text = "\
[model]
arch = bp
hidden = 12

[train]
lr0 = 0.2
decay = none
momentum = 0.9
epochs = 10
batch_size = 10
eval_every = 5

[data]
dataset = synthetic
classes = 3
input_dim = 6
train_per_class = 40
test_per_class = 10
";
        let cfg = ConfigFile::parse(text).unwrap();
        let data = load_dataset(&cfg).unwrap();
        let (_model, metrics) = run_training(&cfg, &data).unwrap();
        assert!(metrics.final_output_test_acc().unwrap() > 0.85);
    }
}
