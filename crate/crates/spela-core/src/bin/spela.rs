use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use spela_core::config::{self, BuiltModel, ConfigFile};
use spela_core::embeddings::{generate_symmetric, write_cache, SimulationConfig};
use spela_core::error::{Result, SpelaError};
use spela_core::metrics::RunMetrics;
use spela_core::profiler::{self, ParamCount};
use spela_core::{bp, cnn, data, mlp};

#[derive(Parser)]
#[command(name = "spela", about = "local layer-wise training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a config file
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override train.seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics, checkpoint and manifest
        #[arg(long, default_value = "./run")]
        out: PathBuf,
        /// Record compute and memory costs alongside the run
        #[arg(long)]
        profile: bool,
    },
    /// Evaluate a saved checkpoint on the dataset from a config file
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Read the prediction from this layer instead of the last one
        #[arg(long)]
        exit_layer: Option<usize>,
    },
    /// Run a parameter grid, aggregating over several seeds
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: depth, lr, width, fraction
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "./sweep")]
        out: PathBuf,
    },
    /// Train with the cost profiler attached and print the ledger
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a set of symmetric class embeddings and cache them
    Embed {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            profile,
        } => cmd_train(&config, seed, &out, profile),
        Command::Eval {
            checkpoint,
            config,
            exit_layer,
        } => cmd_eval(&checkpoint, &config, exit_layer),
        Command::Sweep {
            config,
            grid,
            seeds,
            out,
        } => cmd_sweep(&config, &grid, seeds, &out),
        Command::Profile { config, out } => cmd_profile(&config, out.as_deref()),
        Command::Embed {
            classes,
            dim,
            seed,
            out,
        } => cmd_embed(classes, dim, seed, &out),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ConfigFile> {
    let mut cfg = ConfigFile::load(path)?;
    if let Some(s) = seed {
        cfg.set("train.seed", &s.to_string());
    }
    Ok(cfg)
}

fn final_acc_lines(metrics: &RunMetrics) -> String {
    let mut s = String::new();
    if let Some(accs) = metrics.final_test_acc() {
        for (i, a) in accs.iter().enumerate() {
            s.push_str(&format!("final_test_acc_layer_{} = {a:.4}\n", i + 1));
        }
    }
    s
}

fn write_manifest(
    out: &Path,
    cfg: &ConfigFile,
    data: &config::LoadedData,
    metrics: &RunMetrics,
    checkpoint: &str,
) -> Result<()> {
    let mut m = String::new();
    m.push_str("# run manifest\n");
    m.push_str(&format!("checkpoint = {checkpoint}\n"));
    m.push_str(&format!("train_samples = {}\n", data.train.len()));
    m.push_str(&format!("test_samples = {}\n", data.test.len()));
    for (path, sum) in &data.checksums {
        m.push_str(&format!("checksum {path} = {sum:016x}\n"));
    }
    m.push_str(&final_acc_lines(metrics));
    m.push_str("\n# configuration\n");
    m.push_str(&cfg.render());
    std::fs::write(out.join("manifest.txt"), m)?;
    Ok(())
}

fn cmd_train(config: &Path, seed: Option<u64>, out: &Path, profile: bool) -> Result<()> {
    let cfg = load_config(config, seed)?;
    std::fs::create_dir_all(out)?;
    let data = config::load_dataset(&cfg)?;

    let guard = if profile {
        Some(profiler::attach()?)
    } else {
        None
    };
    let (model, metrics) = config::run_training(&cfg, &data)?;

    let ckpt_name = match &model {
        BuiltModel::Local(net) => {
            let p = out.join("model.spnw");
            mlp::save_checkpoint(net, &cfg.render(), &p)?;
            "model.spnw"
        }
        BuiltModel::Backprop(net) => {
            let p = out.join("model.bpnw");
            bp::save_checkpoint(net, &cfg.render(), &p)?;
            "model.bpnw"
        }
        BuiltModel::Conv(net) => {
            let p = out.join("model.spcn");
            cnn::save_checkpoint(net, &cfg.render(), &p)?;
            "model.spcn"
        }
    };
    std::fs::write(out.join("metrics.csv"), metrics.to_csv())?;
    write_manifest(out, &cfg, &data, &metrics, ckpt_name)?;

    if let Some(mut g) = guard {
        let params = match &model {
            BuiltModel::Local(net) => net.param_scalars(),
            BuiltModel::Backprop(net) => net.param_scalars(),
            BuiltModel::Conv(net) => net.param_scalars(),
        };
        g.set_model_param_scalars(params);
        let ledger = g.ledger();
        std::fs::write(out.join("profile.csv"), ledger.report_csv())?;
        println!("{}", ledger.report_table());
    }

    print!("{}", final_acc_lines(&metrics));
    println!("wrote {}", out.display());
    Ok(())
}

fn checkpoint_magic(path: &Path) -> Result<[u8; 4]> {
    let mut f = std::fs::File::open(path)?;
    let mut m = [0u8; 4];
    f.read_exact(&mut m)?;
    Ok(m)
}

fn cmd_eval(checkpoint: &Path, config: &Path, exit_layer: Option<usize>) -> Result<()> {
    let cfg = load_config(config, None)?;
    let data = config::load_dataset(&cfg)?;
    match &checkpoint_magic(checkpoint)? {
        b"SPNW" => {
            let (net, _echo) = mlp::load_checkpoint(checkpoint)?;
            match exit_layer {
                Some(k) => {
                    let mut hits = 0usize;
                    for s in 0..data.test.len() {
                        let (pred, _) = mlp::predict(&net, data.test.sample(s), k)?;
                        if pred == data.test.labels[s] {
                            hits += 1;
                        }
                    }
                    println!(
                        "layer {k} test accuracy: {:.4}",
                        hits as f64 / data.test.len().max(1) as f64
                    );
                }
                None => {
                    let accs = mlp::evaluate(&net, &data.test)?;
                    for (i, a) in accs.iter().enumerate() {
                        println!("layer {} test accuracy: {a:.4}", i + 1);
                    }
                }
            }
        }
        b"BPNW" => {
            let (net, _echo) = bp::load_checkpoint(checkpoint)?;
            println!("test accuracy: {:.4}", bp::bp_evaluate(&net, &data.test)?);
        }
        b"SPCN" => {
            let (net, _echo) = cnn::load_checkpoint(checkpoint)?;
            let k = exit_layer.unwrap_or(net.depth());
            println!(
                "layer {k} test accuracy: {:.4}",
                cnn::cnn_evaluate(&net, &data.test, k)?
            );
        }
        m => {
            return Err(SpelaError::Format(format!(
                "unrecognized checkpoint magic {m:?}"
            )))
        }
    }
    Ok(())
}

struct SweepPoint {
    label: String,
    apply: Box<dyn Fn(&mut ConfigFile)>,
}

fn sweep_points(cfg: &ConfigFile, grid: &str) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    match grid {
        "depth" => {
            let width = cfg.usize_list_or("model.hidden", &[1000])?[0];
            for depth in 1..=9usize {
                let hidden = vec![width.to_string(); depth].join(",");
                points.push(SweepPoint {
                    label: format!("depth={depth}"),
                    apply: Box::new(move |c: &mut ConfigFile| c.set("model.hidden", &hidden)),
                });
            }
        }
        "lr" => {
            for lr in [0.01, 0.05, 0.1, 0.5, 1.0, 2.5] {
                points.push(SweepPoint {
                    label: format!("lr={lr}"),
                    apply: Box::new(move |c: &mut ConfigFile| {
                        c.set("train.lr0", &lr.to_string())
                    }),
                });
            }
        }
        "width" => {
            for width in [128usize, 256, 512, 1034, 2048] {
                points.push(SweepPoint {
                    label: format!("width={width}"),
                    apply: Box::new(move |c: &mut ConfigFile| {
                        c.set("model.hidden", &width.to_string())
                    }),
                });
            }
        }
        "fraction" => {
            for f in [0.1, 0.25, 0.5, 0.75, 1.0] {
                points.push(SweepPoint {
                    label: format!("fraction={f}"),
                    apply: Box::new(move |c: &mut ConfigFile| {
                        c.set("data.fraction", &f.to_string())
                    }),
                });
            }
        }
        g => {
            return Err(SpelaError::Config(format!(
                "unknown grid {g:?}; expected depth, lr, width or fraction"
            )))
        }
    }
    Ok(points)
}

fn cmd_sweep(config: &Path, grid: &str, seeds: u64, out: &Path) -> Result<()> {
    let base = load_config(config, None)?;
    std::fs::create_dir_all(out)?;
    let points = sweep_points(&base, grid)?;
    let mut csv = String::from("point,seed,final_test_acc\n");
    let mut summary = String::from("point,mean,std,n_seeds\n");
    for point in &points {
        let mut accs = Vec::new();
        for seed in 0..seeds {
            let mut cfg = base.clone();
            (point.apply)(&mut cfg);
            cfg.set("train.seed", &seed.to_string());
            let data = config::load_dataset(&cfg)?;
            let (_model, metrics) = config::run_training(&cfg, &data)?;
            let acc = metrics.final_output_test_acc().ok_or_else(|| {
                SpelaError::Config("sweep needs train.eval_every > 0".into())
            })?;
            csv.push_str(&format!("{},{seed},{acc:.6}\n", point.label));
            accs.push(acc);
        }
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        summary.push_str(&format!(
            "{},{mean:.6},{:.6},{}\n",
            point.label,
            var.sqrt(),
            accs.len()
        ));
        println!("{}: {mean:.4} +/- {:.4}", point.label, var.sqrt());
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    std::fs::write(out.join("summary.csv"), summary)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_profile(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, None)?;
    let data = config::load_dataset(&cfg)?;
    let mut guard = profiler::attach()?;
    let (model, _metrics) = config::run_training(&cfg, &data)?;
    let params = match &model {
        BuiltModel::Local(net) => net.param_scalars(),
        BuiltModel::Backprop(net) => net.param_scalars(),
        BuiltModel::Conv(net) => net.param_scalars(),
    };
    guard.set_model_param_scalars(params);
    let ledger = guard.ledger();
    println!("{}", ledger.report_table());
    if let Some(p) = out {
        if let Some(parent) = p.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(p, ledger.report_csv())?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_embed(classes: usize, dim: usize, seed: u64, out: &Path) -> Result<()> {
    let cfg = SimulationConfig {
        rng_seed: seed,
        ..SimulationConfig::default()
    };
    let (set, stats) = generate_symmetric(classes, dim, &cfg)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_cache(&set, seed, out)?;
    let energy = spela_core::embeddings::energy(&set)?;
    println!(
        "{classes} vectors in {dim} dims: energy {energy:.6}, {} iterations, converged: {}",
        stats.iterations, stats.converged
    );
    // worth knowing at a glance how spread out the directions ended up
    let mut max_cos = f64::NEG_INFINITY;
    for i in 0..classes {
        for j in (i + 1)..classes {
            let c = spela_core::linalg::cos_sim(set.row(i), set.row(j))?;
            max_cos = max_cos.max(c);
        }
    }
    println!("largest pairwise cosine: {max_cos:.6}");
    println!("wrote {}", out.display());
    let _ = data::file_checksum(out)?;
    Ok(())
}
