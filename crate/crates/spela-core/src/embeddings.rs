//! Fixed class-embedding vectors: N unit vectors spread over the surface of
//! an l-dimensional sphere by simulated electron repulsion, plus the random
//! ablation variants. Sets are immutable once generated and can be cached
//! to disk so every layer and run reuses identical vectors.

use crate::error::{Result, SpelaError};
use crate::linalg::{self, Matrix};
use crate::rng::Rng;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Symmetric,
    RandNormal,
    RandUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub n_vectors: usize,
    pub dim: usize,
    pub vectors: Matrix,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub step_size: f64,
    pub energy_rel_tolerance: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            step_size: 0.05,
            energy_rel_tolerance: 1e-9,
            max_iterations: 100_000,
            rng_seed: 0,
        }
    }
}

/// Per-run diagnostics from the repulsion simulation.
#[derive(Debug, Clone)]
pub struct SimStats {
    pub iterations: usize,
    pub converged: bool,
    /// Energy after each accepted step, starting with the initial configuration.
    pub energy_trace: Vec<f64>,
}

impl EmbeddingSet {
    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vectors < 2 || self.dim < 2 {
            return Err(SpelaError::Config(format!(
                "embedding set needs n >= 2 and dim >= 2, got n={} dim={}",
                self.n_vectors, self.dim
            )));
        }
        for i in 0..self.n_vectors {
            let n = linalg::norm(self.row(i));
            if (n - 1.0).abs() > 1e-9 {
                return Err(SpelaError::Config(format!(
                    "embedding row {i} has norm {n}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Sum over ordered pairs u != v of 1/||u - v||.
pub fn energy(e: &EmbeddingSet) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..e.n_vectors {
        for j in 0..e.n_vectors {
            if i == j {
                continue;
            }
            let d: f64 = e
                .row(i)
                .iter()
                .zip(e.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d <= linalg::ZERO_NORM_EPS {
                return Err(SpelaError::CoincidentVectors);
            }
            total += 1.0 / d;
        }
    }
    Ok(total)
}

fn random_unit_rows(n: usize, dim: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(n, dim);
    for i in 0..n {
        loop {
            for j in 0..dim {
                m.set(i, j, rng.normal());
            }
            let nn = linalg::norm(m.row(i));
            if nn > 1e-6 {
                let row = m.row_mut(i);
                for v in row.iter_mut() {
                    *v /= nn;
                }
                break;
            }
        }
    }
    m
}

/// Net inverse-square repulsive force on each point from all others.
fn forces(points: &Matrix) -> Matrix {
    let n = points.rows;
    let dim = points.cols;
    let mut f = Matrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut d2 = 0.0;
            for k in 0..dim {
                let diff = points.get(i, k) - points.get(j, k);
                d2 += diff * diff;
            }
            let d = d2.sqrt().max(1e-9);
            let inv_d3 = 1.0 / (d * d * d);
            for k in 0..dim {
                let diff = points.get(i, k) - points.get(j, k);
                f.data[i * dim + k] += diff * inv_d3;
            }
        }
    }
    f
}

fn project_rows_to_sphere(m: &mut Matrix) {
    for i in 0..m.rows {
        let n = linalg::norm(m.row(i));
        if n > linalg::ZERO_NORM_EPS {
            for v in m.row_mut(i) {
                *v /= n;
            }
        }
    }
}

/// Electron-repulsion simulation on the unit sphere. Each iteration moves
/// every point along the net repulsive force, re-projects onto the sphere,
/// and accepts the step only if the total 1/r energy does not increase
/// (halving the step up to 20 times otherwise).
pub fn generate_symmetric(
    n: usize,
    dim: usize,
    cfg: &SimulationConfig,
) -> Result<(EmbeddingSet, SimStats)> {
    if n < 2 || dim < 2 {
        return Err(SpelaError::Config(format!(
            "generate_symmetric needs n >= 2 and dim >= 2, got n={n} dim={dim}"
        )));
    }
    let mut rng = Rng::new(cfg.rng_seed);
    let mut points = random_unit_rows(n, dim, &mut rng);
    let mut set = EmbeddingSet {
        n_vectors: n,
        dim,
        vectors: points.clone(),
        provenance: Provenance::Symmetric,
    };
    let mut e_cur = energy(&set)?;
    let mut trace = vec![e_cur];
    let mut step = cfg.step_size;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for it in 0..cfg.max_iterations {
        iterations = it + 1;
        let f = forces(&points);
        let mut halvings = 0;
        loop {
            let mut proposal = points.clone();
            for idx in 0..proposal.data.len() {
                proposal.data[idx] += step * f.data[idx];
            }
            project_rows_to_sphere(&mut proposal);
            set.vectors = proposal.clone();
            let e_new = energy(&set)?;
            if e_new <= e_cur {
                let rel = (e_cur - e_new) / e_cur.abs().max(1e-300);
                points = proposal;
                e_cur = e_new;
                trace.push(e_cur);
                // cautious step recovery after an accepted move
                step = (step * 1.2).min(cfg.step_size);
                if rel < cfg.energy_rel_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            halvings += 1;
            if halvings > 20 {
                // no descent direction at any usable step size: stable
                converged = true;
                break 'outer;
            }
            step *= 0.5;
        }
    }

    set.vectors = points;
    project_rows_to_sphere(&mut set.vectors);
    set.validate()?;
    Ok((
        set,
        SimStats {
            iterations,
            converged,
            energy_trace: trace,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomKind {
    RandNormal,
    RandUniform,
}

pub fn generate_random(n: usize, dim: usize, kind: RandomKind, rng: &mut Rng) -> Result<EmbeddingSet> {
    if n < 2 || dim < 2 {
        return Err(SpelaError::Config(format!(
            "generate_random needs n >= 2 and dim >= 2, got n={n} dim={dim}"
        )));
    }
    let mut m = Matrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            let v = match kind {
                RandomKind::RandNormal => rng.normal(),
                RandomKind::RandUniform => rng.uniform(-1.0, 1.0),
            };
            m.set(i, j, v);
        }
    }
    project_rows_to_sphere(&mut m);
    let set = EmbeddingSet {
        n_vectors: n,
        dim,
        vectors: m,
        provenance: match kind {
            RandomKind::RandNormal => Provenance::RandNormal,
            RandomKind::RandUniform => Provenance::RandUniform,
        },
    };
    set.validate()?;
    Ok(set)
}

const CACHE_MAGIC: &[u8; 4] = b"SPEV";

pub fn write_cache(set: &EmbeddingSet, seed: u64, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CACHE_MAGIC)?;
    f.write_u32::<LittleEndian>(set.n_vectors as u32)?;
    f.write_u32::<LittleEndian>(set.dim as u32)?;
    f.write_u64::<LittleEndian>(seed)?;
    for v in &set.vectors.data {
        f.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<(EmbeddingSet, u64)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(SpelaError::Format(format!(
            "bad embedding cache magic {magic:?} in {}",
            path.display()
        )));
    }
    let n = f.read_u32::<LittleEndian>()? as usize;
    let dim = f.read_u32::<LittleEndian>()? as usize;
    let seed = f.read_u64::<LittleEndian>()?;
    let mut data = vec![0.0; n * dim];
    for v in data.iter_mut() {
        *v = f.read_f64::<LittleEndian>()?;
    }
    let set = EmbeddingSet {
        n_vectors: n,
        dim,
        vectors: Matrix { rows: n, cols: dim, data },
        provenance: Provenance::Symmetric,
    };
    set.validate()?;
    Ok((set, seed))
}

pub fn cache_file_name(n: usize, dim: usize, seed: u64, tolerance: f64) -> String {
    format!("sym_n{n}_d{dim}_s{seed}_t{tolerance:e}.spev")
}

/// Reuse a cached symmetric set when one exists for (n, dim, seed, tolerance),
/// generating and caching otherwise.
pub fn load_or_generate(cache_dir: &Path, n: usize, dim: usize, cfg: &SimulationConfig) -> Result<EmbeddingSet> {
    let path: PathBuf = cache_dir.join(cache_file_name(n, dim, cfg.rng_seed, cfg.energy_rel_tolerance));
    if path.exists() {
        let (set, _) = read_cache(&path)?;
        if set.n_vectors == n && set.dim == dim {
            return Ok(set);
        }
    }
    let (set, _) = generate_symmetric(n, dim, cfg)?;
    std::fs::create_dir_all(cache_dir)?;
    write_cache(&set, cfg.rng_seed, &path)?;
    Ok(set)
}
