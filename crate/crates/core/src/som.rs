//! Online self-organizing map on a rectangular lattice, and the two ways its
//! prototypes become features: replacing each vector by its best matching
//! unit's prototype, or appending that prototype to the original vector.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureDataset;
use crate::kmeans::squared_distance;
use crate::textmodel;

/// Iterations per map unit when `iterations` is not set.
pub const DEFAULT_ITERATIONS_PER_UNIT: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SomConfig {
    pub rows: usize,
    pub cols: usize,
    /// Total single-sample updates; `None` means 500 per unit.
    pub iterations: Option<usize>,
    pub alpha0: f64,
    /// Initial radius in grid units; `None` means `max(rows, cols) / 2`.
    pub sigma0: Option<f64>,
    pub sigma_final: f64,
    pub seed: u64,
}

impl Default for SomConfig {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            iterations: None,
            alpha0: 0.5,
            sigma0: None,
            sigma_final: 0.5,
            seed: 0,
        }
    }
}

impl SomConfig {
    pub fn with_size(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..Default::default()
        }
    }

    pub fn units(&self) -> usize {
        self.rows * self.cols
    }

    pub fn total_iterations(&self) -> usize {
        self.iterations
            .unwrap_or(DEFAULT_ITERATIONS_PER_UNIT * self.units())
    }

    pub fn initial_sigma(&self) -> f64 {
        self.sigma0
            .unwrap_or(self.rows.max(self.cols) as f64 / 2.0)
            .max(self.sigma_final)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("map needs at least one row and column".into()));
        }
        if self.total_iterations() == 0 {
            return Err(Error::Config("iteration count must be positive".into()));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(Error::Config(format!("alpha0 {} outside (0, 1]", self.alpha0)));
        }
        let s0 = self.sigma0.unwrap_or(self.initial_sigma());
        if !(self.sigma_final > 0.0 && s0 >= self.sigma_final) {
            return Err(Error::Config(format!(
                "need sigma0 ({s0}) >= sigma_final ({}) > 0",
                self.sigma_final
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

/// Learning rate and radius as functions of the iteration counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSchedule {
    pub alpha0: f64,
    pub sigma0: f64,
    pub sigma_final: f64,
    pub total: usize,
}

impl TrainingSchedule {
    pub fn from_config(cfg: &SomConfig) -> Self {
        Self {
            alpha0: cfg.alpha0,
            sigma0: cfg.initial_sigma(),
            sigma_final: cfg.sigma_final,
            total: cfg.total_iterations(),
        }
    }

    /// Linear decay to zero.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha0 * (1.0 - t as f64 / self.total as f64)
    }

    /// Geometric decay from `sigma0` toward `sigma_final`.
    pub fn sigma(&self, t: usize) -> f64 {
        let frac = t as f64 / self.total as f64;
        self.sigma0 * (self.sigma_final / self.sigma0).powf(frac)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SomMap {
    rows: usize,
    cols: usize,
    prototypes: Vec<Vec<f64>>,
}

impl SomMap {
    pub fn from_prototypes(rows: usize, cols: usize, prototypes: Vec<Vec<f64>>) -> Result<Self> {
        if prototypes.len() != rows * cols || prototypes.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: prototypes.len(),
            });
        }
        let dim = prototypes[0].len();
        if let Some(p) = prototypes.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            prototypes,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn units(&self) -> usize {
        self.prototypes.len()
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    /// Lattice coordinates (row, col) of unit `i` in row-major order.
    pub fn position(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    pub fn to_text(&self, comment: Option<&str>) -> String {
        let mut buf = Vec::new();
        if let Some(c) = comment {
            for line in c.lines() {
                buf.extend_from_slice(format!("# {line}\n").as_bytes());
            }
        }
        buf.extend_from_slice(format!("som {} {} {}\n", self.rows, self.cols, self.dim()).as_bytes());
        for p in &self.prototypes {
            textmodel::write_row(&mut buf, "unit", p.iter().copied()).expect("in-memory write");
        }
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = textmodel::Reader::new(text);
        let d = r.dims("som", 3)?;
        let protos = (0..d[0] * d[1])
            .map(|_| r.row_of("unit", d[2]))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::from_prototypes(d[0], d[1], protos)
    }
}

fn check_rows<R: AsRef<[f64]>>(data: &[R]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| Error::Empty("SOM needs at least one sample".into()))?;
    let dim = first.as_ref().len();
    if let Some(r) = data.iter().find(|r| r.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: r.as_ref().len(),
        });
    }
    Ok(dim)
}

/// Prototype components drawn uniformly from each component's data range.
pub fn init_som<R: AsRef<[f64]>>(cfg: &SomConfig, data: &[R]) -> Result<SomMap> {
    cfg.validate()?;
    let dim = check_rows(data)?;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for r in data {
        for (j, &v) in r.as_ref().iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = (0..cfg.units())
        .map(|_| {
            (0..dim)
                .map(|j| {
                    if hi[j] > lo[j] {
                        rng.gen_range(lo[j]..=hi[j])
                    } else {
                        lo[j]
                    }
                })
                .collect()
        })
        .collect();
    SomMap::from_prototypes(cfg.rows, cfg.cols, prototypes)
}

/// Best matching unit and its Euclidean distance; ties go to the lowest
/// row-major index.
pub fn find_bmu(map: &SomMap, x: &[f64]) -> Result<(usize, f64)> {
    if x.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            actual: x.len(),
        });
    }
    let mut best = (0, f64::INFINITY);
    for (i, p) in map.prototypes.iter().enumerate() {
        let d = squared_distance(p, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok((best.0, best.1.sqrt()))
}

/// Gaussian kernel on lattice distance.
pub fn neighborhood(map: &SomMap, winner: usize, unit: usize, sigma: f64) -> f64 {
    let (wr, wc) = map.position(winner);
    let (ur, uc) = map.position(unit);
    let dr = wr as f64 - ur as f64;
    let dc = wc as f64 - uc as f64;
    (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
}

/// One presentation of `x`: every unit moves toward it by `alpha·h`.
/// Returns the winner.
pub fn update_step(map: &mut SomMap, x: &[f64], alpha: f64, sigma: f64) -> Result<usize> {
    let (winner, _) = find_bmu(map, x)?;
    let (wr, wc) = map.position(winner);
    let cols = map.cols;
    let two_s2 = 2.0 * sigma * sigma;
    // the kernel separates into a row factor and a column factor
    let factor = |d: f64| (-(d * d) / two_s2).exp();
    let row_h: Vec<f64> = (0..map.rows).map(|r| factor(wr as f64 - r as f64)).collect();
    let col_h: Vec<f64> = (0..cols).map(|c| factor(wc as f64 - c as f64)).collect();
    for (i, p) in map.prototypes.iter_mut().enumerate() {
        let rate = alpha * row_h[i / cols] * col_h[i % cols];
        if rate == 0.0 {
            continue;
        }
        for (w, &v) in p.iter_mut().zip(x) {
            *w += rate * (v - *w);
        }
    }
    Ok(winner)
}

/// Sequential training. Samples are visited in a seeded permutation that is
/// reshuffled every pass over the data.
pub fn train<R: AsRef<[f64]>>(map: &SomMap, data: &[R], cfg: &SomConfig) -> Result<SomMap> {
    cfg.validate()?;
    let dim = check_rows(data)?;
    if dim != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            actual: dim,
        });
    }
    let schedule = TrainingSchedule::from_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut out = map.clone();
    for t in 0..schedule.total {
        let k = t % data.len();
        if k == 0 {
            order.shuffle(&mut rng);
        }
        update_step(&mut out, data[order[k]].as_ref(), schedule.alpha(t), schedule.sigma(t))?;
    }
    Ok(out)
}

/// `init_som` then `train`.
pub fn fit_som<R: AsRef<[f64]>>(cfg: &SomConfig, data: &[R]) -> Result<SomMap> {
    let init = init_som(cfg, data)?;
    train(&init, data, cfg)
}

pub fn mean_quantization_error<R: AsRef<[f64]>>(map: &SomMap, data: &[R]) -> Result<f64> {
    check_rows(data)?;
    let mut total = 0.0;
    for r in data {
        total += find_bmu(map, r.as_ref())?.1;
    }
    Ok(total / data.len() as f64)
}

/// Each vector replaced by its BMU's prototype.
pub fn quantize_vectors<R: AsRef<[f64]> + Sync>(map: &SomMap, data: &[R]) -> Result<Vec<Vec<f64>>> {
    crate::par::map(data, |r| {
        find_bmu(map, r.as_ref()).map(|(i, _)| map.prototypes[i].clone())
    })
    .into_iter()
    .collect()
}

pub fn quantize_replace(map: &SomMap, data: &FeatureDataset) -> Result<FeatureDataset> {
    let values = quantize_vectors(map, &data.vectors())?;
    data.with_values(data.feature_names.clone(), values)
}

/// Row-wise concatenation `original ‖ som_based`.
pub fn augment(original: &FeatureDataset, som_based: &FeatureDataset) -> Result<FeatureDataset> {
    if original.len() != som_based.len() {
        return Err(Error::DimensionMismatch {
            expected: original.len(),
            actual: som_based.len(),
        }
        .context("augment row count"));
    }
    if let Some((a, b)) = original
        .rows
        .iter()
        .zip(&som_based.rows)
        .find(|(a, b)| a.id != b.id || a.label != b.label)
    {
        return Err(Error::InvalidArgument(format!(
            "row mismatch: `{}` vs `{}`",
            a.id, b.id
        )));
    }
    let mut names = original.feature_names.clone();
    names.extend(som_based.feature_names.iter().map(|n| format!("{n}_som")));
    let values = original
        .rows
        .iter()
        .zip(&som_based.rows)
        .map(|(a, b)| {
            let mut v = a.values.clone();
            v.extend_from_slice(&b.values);
            v
        })
        .collect();
    original.with_values(names, values)
}
