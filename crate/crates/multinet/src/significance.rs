//! Null ensembles for assist matrices and empirical link validation.
//!
//! For each ensemble draw, both layers are resampled from their fitted null
//! models, contracted with the sampled degrees, and compared link by link
//! against the observed assist values. p-values use the add-one estimator
//! `(1 + exceedances) / (1 + samples)` with ties counted as exceedances, so
//! p is never zero and never optimistic. A draw in which a source activity
//! has zero sampled ubiquity leaves that row undefined and counts as a
//! non-exceedance for its links.

use rayon::prelude::*;
use serde::Serialize;

use crate::assist::{assist_values, AssistMatrix};
use crate::bicm::NullModel;
use crate::error::{Error, Result};
use crate::layers::{ActivityCode, LayerId};
use crate::matrix::{Pooling, TimeWindow};
use crate::rng::{derive_seed, domain};

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub size: usize,
    pub seed: u64,
    /// Keep every sampled value per link (diagnostics, percentiles). The
    /// default streams exceedance counts only.
    pub store_samples: bool,
    /// Thresholds the caller intends to test; sizes too small for any of
    /// them produce a warning here and a hard error at validation time.
    pub requested_thresholds: Vec<f64>,
}

impl EnsembleOptions {
    pub fn new(size: usize, seed: u64) -> EnsembleOptions {
        EnsembleOptions {
            size,
            seed,
            store_samples: false,
            requested_thresholds: Vec::new(),
        }
    }
}

/// Smallest ensemble able to resolve `threshold`: the attainable p-value
/// floor is 1/(size+1), so testing at 99% needs at least 99 samples and
/// 99.9% needs at least 999.
pub fn required_ensemble_size(threshold: f64) -> usize {
    (1.0 / (1.0 - threshold) - 1.0 - 1e-9).ceil().max(1.0) as usize
}

/// Error when `size` cannot resolve `threshold`.
pub fn check_resolution(size: usize, threshold: f64) -> Result<()> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "significance threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let required = required_ensemble_size(threshold);
    if size < required {
        return Err(Error::EnsembleTooSmall {
            size,
            threshold,
            required,
        });
    }
    Ok(())
}

/// Per-link exceedance counts of sampled null assist values against the
/// observed ones, over the observed grid (defined source rows x all target
/// columns).
#[derive(Debug, Clone)]
pub struct NullEnsemble {
    pub size: usize,
    pub seed: u64,
    rows: Vec<ActivityCode>,
    cols: Vec<ActivityCode>,
    observed: Vec<f64>,
    exceed: Vec<u32>,
    /// Sampled values per draw (row-major grids), only in store mode;
    /// undefined rows hold zeros there and are excluded from exceedances.
    samples: Option<Vec<Vec<f64>>>,
    pub warnings: Vec<String>,
}

impl NullEnsemble {
    pub fn rows(&self) -> &[ActivityCode] {
        &self.rows
    }

    pub fn cols(&self) -> &[ActivityCode] {
        &self.cols
    }

    pub fn exceedances(&self, row: usize, col: usize) -> u32 {
        self.exceed[row * self.cols.len() + col]
    }

    pub fn samples(&self) -> Option<&[Vec<f64>]> {
        self.samples.as_deref()
    }

    /// The smallest sampled value with at least `q` of the distribution at
    /// or below it (only in store mode).
    pub fn percentile(&self, row: usize, col: usize, q: f64) -> Option<f64> {
        let samples = self.samples.as_ref()?;
        let mut values: Vec<f64> = samples
            .iter()
            .map(|grid| grid[row * self.cols.len() + col])
            .collect();
        values.sort_unstable_by(f64::total_cmp);
        let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
        Some(values[rank - 1])
    }
}

fn check_same_country_universe(model1: &NullModel, model2: &NullModel) -> Result<()> {
    if model1.full_rows().len() != model2.full_rows().len() {
        return Err(Error::InvalidInput(format!(
            "null models were fitted over different country sets: {} vs {}",
            model1.full_rows().len(),
            model2.full_rows().len()
        )));
    }
    let stacked = |m: &NullModel| m.window().pooling == Pooling::Stack && m.window().span > 1;
    if !stacked(model1) && !stacked(model2) && model1.full_rows() != model2.full_rows() {
        return Err(Error::InvalidInput(
            "null models were fitted over different country sets".into(),
        ));
    }
    Ok(())
}

/// Draw `size` sampled matrix pairs, contract each into a null assist
/// matrix, and accumulate exceedance counts against the observed values.
/// Draws run in parallel by sample index; each draw depends only on
/// (seed, side, index).
pub fn null_assist_ensemble(
    model1: &NullModel,
    model2: &NullModel,
    observed: &AssistMatrix,
    opts: &EnsembleOptions,
) -> Result<NullEnsemble> {
    if opts.size == 0 {
        return Err(Error::InvalidInput(
            "ensemble size must be at least 1".into(),
        ));
    }
    check_same_country_universe(model1, model2)?;
    let mut warnings = Vec::new();
    for &threshold in &opts.requested_thresholds {
        let required = required_ensemble_size(threshold);
        if opts.size < required {
            warnings.push(format!(
                "ensemble of {} samples cannot resolve threshold {threshold}: at least \
                 {required} realizations are required",
                opts.size
            ));
        }
    }

    // map observed grid onto the models' full activity sets
    let row_map: Vec<usize> = observed
        .rows()
        .iter()
        .map(|code| {
            model1
                .full_cols()
                .iter()
                .position(|c| c == code)
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "observed row `{}` is not an activity of the source model",
                        code.code
                    ))
                })
        })
        .collect::<Result<_>>()?;
    let col_map: Vec<usize> = observed
        .cols()
        .iter()
        .map(|code| {
            model2
                .full_cols()
                .iter()
                .position(|c| c == code)
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "observed column `{}` is not an activity of the target model",
                        code.code
                    ))
                })
        })
        .collect::<Result<_>>()?;

    let n_rows = observed.n_rows();
    let n_cols = observed.n_cols();
    let seed1 = derive_seed(opts.seed, &[domain::SAMPLE_SOURCE]);
    let seed2 = derive_seed(opts.seed, &[domain::SAMPLE_TARGET]);

    // one draw: the sampled grid restricted to the observed links, plus
    // per-row definedness under the sampled ubiquities
    let draw = |index: u64| -> (Vec<f64>, Vec<bool>) {
        let m1 = model1.sample(seed1, index);
        let m2 = model2.sample(seed2, index);
        let dense = assist_values(&m1, &m2);
        let mut grid = vec![0.0f64; n_rows * n_cols];
        let mut defined = vec![false; n_rows];
        for (r, &full_r) in row_map.iter().enumerate() {
            if !dense.defined_rows[full_r] {
                continue;
            }
            defined[r] = true;
            for (c, &full_c) in col_map.iter().enumerate() {
                grid[r * n_cols + c] = dense.get(full_r, full_c);
            }
        }
        (grid, defined)
    };

    let observed_values = observed.values().to_vec();
    let accumulate = |exceed: &mut Vec<u32>, grid: &[f64], defined: &[bool]| {
        for (r, _) in defined.iter().enumerate().filter(|(_, &d)| d) {
            for c in 0..n_cols {
                let idx = r * n_cols + c;
                if grid[idx] >= observed_values[idx] {
                    exceed[idx] += 1;
                }
            }
        }
    };

    let (exceed, samples) = if opts.store_samples {
        let grids: Vec<(Vec<f64>, Vec<bool>)> =
            (0..opts.size as u64).into_par_iter().map(draw).collect();
        let mut exceed = vec![0u32; n_rows * n_cols];
        for (grid, defined) in &grids {
            accumulate(&mut exceed, grid, defined);
        }
        (exceed, Some(grids.into_iter().map(|(g, _)| g).collect()))
    } else {
        let exceed = (0..opts.size as u64)
            .into_par_iter()
            .fold(
                || vec![0u32; n_rows * n_cols],
                |mut acc, index| {
                    let (grid, defined) = draw(index);
                    accumulate(&mut acc, &grid, &defined);
                    acc
                },
            )
            .reduce(
                || vec![0u32; n_rows * n_cols],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        (exceed, None)
    };

    Ok(NullEnsemble {
        size: opts.size,
        seed: opts.seed,
        rows: observed.rows().to_vec(),
        cols: observed.cols().to_vec(),
        observed: observed_values,
        exceed,
        samples,
        warnings,
    })
}

/// Observed values with their empirical p-values over one layer pair.
#[derive(Debug, Clone)]
pub struct SignificanceResult {
    pub source_layer: LayerId,
    pub source_window: TimeWindow,
    pub target_layer: LayerId,
    pub target_window: TimeWindow,
    pub ensemble_size: usize,
    rows: Vec<ActivityCode>,
    cols: Vec<ActivityCode>,
    b: Vec<f64>,
    p: Vec<f64>,
    /// Per target column: positive ubiquity on the shared country set.
    testable_cols: Vec<bool>,
}

impl SignificanceResult {
    pub fn rows(&self) -> &[ActivityCode] {
        &self.rows
    }

    pub fn cols(&self) -> &[ActivityCode] {
        &self.cols
    }

    pub fn b(&self, row: usize, col: usize) -> f64 {
        self.b[row * self.cols.len() + col]
    }

    pub fn p(&self, row: usize, col: usize) -> f64 {
        self.p[row * self.cols.len() + col]
    }

    pub fn testable(&self, _row: usize, col: usize) -> bool {
        self.testable_cols[col]
    }

    pub fn significant(&self, row: usize, col: usize, threshold: f64) -> bool {
        self.p(row, col) <= 1.0 - threshold
    }

    /// (significant testable links, testable links) at `threshold`.
    pub fn fraction_significant(&self, threshold: f64) -> (usize, usize) {
        let mut significant = 0;
        let mut testable = 0;
        for row in 0..self.rows.len() {
            for col in 0..self.cols.len() {
                if !self.testable(row, col) {
                    continue;
                }
                testable += 1;
                if self.significant(row, col, threshold) {
                    significant += 1;
                }
            }
        }
        (significant, testable)
    }
}

/// Empirical p-values: `(1 + #{samples >= observed}) / (1 + size)`.
pub fn p_values(observed: &AssistMatrix, ensemble: &NullEnsemble) -> Result<SignificanceResult> {
    if observed.rows() != ensemble.rows()
        || observed.cols() != ensemble.cols()
        || observed.values() != ensemble.observed
    {
        return Err(Error::InvalidInput(
            "observed matrix and ensemble grids are not aligned".into(),
        ));
    }
    let denom = (ensemble.size + 1) as f64;
    let p: Vec<f64> = ensemble
        .exceed
        .iter()
        .map(|&x| (1.0 + f64::from(x)) / denom)
        .collect();
    Ok(SignificanceResult {
        source_layer: observed.source_layer.clone(),
        source_window: observed.source_window,
        target_layer: observed.target_layer.clone(),
        target_window: observed.target_window,
        ensemble_size: ensemble.size,
        rows: observed.rows().to_vec(),
        cols: observed.cols().to_vec(),
        b: observed.values().to_vec(),
        p,
        testable_cols: observed.col_ubiquity().iter().map(|&u| u > 0).collect(),
    })
}

/// One validated link of the multilayer network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedEdge {
    pub source_layer: LayerId,
    pub source_code: String,
    pub target_layer: LayerId,
    pub target_code: String,
    pub b: f64,
    pub p: f64,
}

/// All ordered links with `p <= 1 - threshold` across the given results.
/// Fails when any contributing ensemble is too small to resolve the
/// threshold.
pub fn validated_network(
    results: &[SignificanceResult],
    threshold: f64,
) -> Result<Vec<ValidatedEdge>> {
    for result in results {
        check_resolution(result.ensemble_size, threshold)?;
    }
    let mut edges = Vec::new();
    for result in results {
        for row in 0..result.rows().len() {
            for col in 0..result.cols().len() {
                if result.significant(row, col, threshold) {
                    edges.push(ValidatedEdge {
                        source_layer: result.source_layer.clone(),
                        source_code: result.rows()[row].code.clone(),
                        target_layer: result.target_layer.clone(),
                        target_code: result.cols()[col].code.clone(),
                        b: result.b(row, col),
                        p: result.p(row, col),
                    });
                }
            }
        }
    }
    Ok(edges)
}
