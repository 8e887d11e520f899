//! Vertically partitioned datasets: synthetic generation, CSV ingestion and
//! the shared-seed batch plan both parties use to stay aligned.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

/// Row `k` of `x_a`, row `k` of `x_b` and `y[k]` describe the same instance.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedDataset {
    pub x_a: Matrix<f64>,
    pub x_b: Matrix<f64>,
    pub y: Vec<f64>,
}

impl AlignedDataset {
    pub fn new(x_a: Matrix<f64>, x_b: Matrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x_a.rows() != x_b.rows() || x_a.rows() != y.len() {
            return Err(Error::Data(format!(
                "misaligned parts: {} rows for party A, {} for party B, {} labels",
                x_a.rows(),
                x_b.rows(),
                y.len()
            )));
        }
        if let Some(k) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("label {} in row {k} is not 0 or 1", y[k])));
        }
        Ok(AlignedDataset { x_a, x_b, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d_a(&self) -> usize {
        self.x_a.cols()
    }

    pub fn d_b(&self) -> usize {
        self.x_b.cols()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n().max(1) as f64
    }

    /// Splits off the last `count` rows, returning `(head, tail)`.
    pub fn split_tail(&self, count: usize) -> Result<(Self, Self)> {
        if count > self.n() {
            return Err(Error::Range {
                what: "tail length",
                index: count,
                limit: self.n(),
            });
        }
        let cut = self.n() - count;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.n()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(AlignedDataset {
            x_a: self.x_a.select_rows(indices)?,
            x_b: self.x_b.select_rows(indices)?,
            y: indices.iter().map(|&i| self.y[i]).collect(),
        })
    }
}

/// Seeded synthetic binary task in which both parties' features matter.
///
/// Features are standard normal. The label is 1 iff
/// `⟨v, x⟩ + 0.5·sin(⟨u, x⟩) + ε > 0` over the concatenated features, with
/// `v`, `u` drawn once per seed and `ε ~ N(0, 0.1²)`. Rows are drawn in
/// order, so a longer dataset extends a shorter one with the same seed.
pub fn generate_synthetic(n: usize, d_a: usize, d_b: usize, seed: u64) -> Result<AlignedDataset> {
    if n == 0 || d_a == 0 || d_b == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs positive sizes, got n={n}, d_a={d_a}, d_b={d_b}"
        )));
    }
    let d = d_a + d_b;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let scale = (d as f64).sqrt();
    let v: Vec<f64> = (0..d).map(|_| normal() / scale).collect();
    let u: Vec<f64> = (0..d).map(|_| 2.0 * normal() / scale).collect();

    let mut a = Vec::with_capacity(n * d_a);
    let mut b = Vec::with_capacity(n * d_b);
    let mut y = Vec::with_capacity(n);
    let mut x = vec![0.0; d];
    for _ in 0..n {
        x.iter_mut().for_each(|xi| *xi = normal());
        let noise = 0.1 * normal();
        let score = numerics::dot(&v, &x) + 0.5 * numerics::dot(&u, &x).sin() + noise;
        y.push(if score > 0.0 { 1.0 } else { 0.0 });
        a.extend_from_slice(&x[..d_a]);
        b.extend_from_slice(&x[d_a..]);
    }
    AlignedDataset::new(
        Matrix::from_vec(n, d_a, a)?,
        Matrix::from_vec(n, d_b, b)?,
        y,
    )
}

/// Reads a headered, comma-separated file of plain decimal numbers (no
/// quoting). Rows keep their file order.
pub fn load_csv(
    path: &Path,
    label_col: &str,
    party_a_cols: &[&str],
    party_b_cols: &[&str],
) -> Result<AlignedDataset> {
    let parse_err = |detail: String| Error::Parse {
        path: path.to_path_buf(),
        detail,
    };
    let mut seen = std::collections::HashSet::new();
    for col in party_a_cols.iter().chain(party_b_cols).chain([&label_col]) {
        if !seen.insert(*col) {
            return Err(Error::Config(format!("column {col} assigned more than once")));
        }
    }
    if party_a_cols.is_empty() || party_b_cols.is_empty() {
        return Err(Error::Config("each party needs at least one column".into()));
    }

    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err("empty file".into()))?;
    let positions: HashMap<&str, usize> = header
        .split(',')
        .map(str::trim)
        .enumerate()
        .map(|(i, name)| (name, i))
        .collect();
    let locate = |name: &str| {
        positions
            .get(name)
            .copied()
            .ok_or_else(|| parse_err(format!("missing column {name}")))
    };
    let a_idx = party_a_cols.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let b_idx = party_b_cols.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let y_idx = locate(label_col)?;

    let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != positions.len() {
            return Err(parse_err(format!(
                "line {}: expected {} cells, found {}",
                line_no + 1,
                positions.len(),
                cells.len()
            )));
        }
        let cell = |i: usize| -> Result<f64> {
            cells[i].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                parse_err(format!(
                    "line {}, column {}: {:?} is not a number",
                    line_no + 1,
                    i + 1,
                    cells[i]
                ))
            })
        };
        for &i in &a_idx {
            a.push(cell(i)?);
        }
        for &i in &b_idx {
            b.push(cell(i)?);
        }
        y.push(cell(y_idx)?);
    }
    let n = y.len();
    AlignedDataset::new(
        Matrix::from_vec(n, a_idx.len(), a)?,
        Matrix::from_vec(n, b_idx.len(), b)?,
        y,
    )
}

/// Epoch-wise shuffled mini-batch schedule. Two plans built from the same
/// `(n, batch_size, seed)` yield the same index sequence, which is what keeps
/// the parties' batches aligned without exchanging indices.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    seed: u64,
    batch_size: usize,
    n: usize,
    epochs: usize,
    epoch: usize,
    order: Vec<usize>,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, epochs: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::Config(format!(
                "batch size {batch_size} must be in 1..={n}"
            )));
        }
        Ok(BatchPlan {
            seed,
            batch_size,
            n,
            epochs,
            epoch: 0,
            order: epoch_order(n, seed, 0),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The trailing `n mod B` instances of each epoch are dropped.
    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    pub fn total_steps(&self) -> usize {
        self.batches_per_epoch() * self.epochs
    }

    pub fn batch_indices(&mut self, step: usize) -> Result<Vec<usize>> {
        if step >= self.total_steps() {
            return Err(Error::Range {
                what: "batch step",
                index: step,
                limit: self.total_steps(),
            });
        }
        let per_epoch = self.batches_per_epoch();
        let epoch = step / per_epoch;
        if epoch != self.epoch {
            self.epoch = epoch;
            self.order = epoch_order(self.n, self.seed, epoch);
        }
        let s = step % per_epoch;
        Ok(self.order[s * self.batch_size..(s + 1) * self.batch_size].to_vec())
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}
