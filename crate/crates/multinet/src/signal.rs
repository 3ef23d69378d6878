//! Lagged signal-to-noise curves between layer pairs.
//!
//! For a layer pair and a lag, every available start year contributes the
//! fraction of testable links validated at the threshold; the curve reports
//! the mean and one-standard-deviation spread of those fractions per lag.
//! Under a pure null this fraction sits at 1 - threshold, so anything above
//! that band is signal.

use std::fmt::Write as _;

use crate::assist::{assist_lagged, MatrixSpec};
use crate::bicm::{FitOptions, NullModel};
use crate::error::Result;
use crate::layers::{Hierarchy, LayerId};
use crate::matrix::{Pooling, TimeWindow};
use crate::rng::{derive_seed, domain};
use crate::significance::{null_assist_ensemble, p_values, EnsembleOptions};
use crate::store::MatrixStore;

#[derive(Debug, Clone)]
pub struct SignalConfig {
    pub level_source: u32,
    pub level_target: u32,
    /// Years pooled into each window.
    pub span: u32,
    pub pooling: Pooling,
    pub threshold: f64,
    pub ensemble: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl SignalConfig {
    pub fn new(threshold: f64, ensemble: usize, seed: u64) -> SignalConfig {
        SignalConfig {
            level_source: 0,
            level_target: 0,
            span: 3,
            pooling: Pooling::Sum,
            threshold,
            ensemble,
            seed,
            fit: FitOptions::default(),
        }
    }
}

/// Mean fraction of significant links at one lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagPoint {
    pub lag: i32,
    pub mean: f64,
    /// Sample standard deviation over contributing year pairs (0 for one).
    pub sigma: f64,
    pub pairs: u32,
    pub mean_links: f64,
}

#[derive(Debug, Clone)]
pub struct SignalCurve {
    pub source_layer: LayerId,
    pub target_layer: LayerId,
    pub level_source: u32,
    pub level_target: u32,
    pub threshold: f64,
    pub ensemble: usize,
    pub span: u32,
    pub points: Vec<LagPoint>,
}

impl SignalCurve {
    /// The lag with the highest mean fraction, if any lag contributed.
    pub fn peak(&self) -> Option<LagPoint> {
        self.points
            .iter()
            .copied()
            .max_by(|a, b| a.mean.total_cmp(&b.mean))
    }

    /// `dy,phi_mean,phi_sigma,n_pairs,n_links_mean` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dy,phi_mean,phi_sigma,n_pairs,n_links_mean\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.lag, p.mean, p.sigma, p.pairs, p.mean_links
            );
        }
        out
    }
}

fn window_available(store: &MatrixStore, layer: &LayerId, window: TimeWindow) -> bool {
    window.years().all(|y| store.has_year(layer, y))
}

/// The fraction of testable links significant at the threshold for one lag,
/// averaged over the start years whose windows exist on both sides.
/// Returns `None` when no year pair is available. Each (year, lag) job
/// re-fits and re-samples its own ensemble from a derived seed.
#[allow(clippy::too_many_arguments)]
pub fn phi(
    store: &MatrixStore,
    source_layer: &LayerId,
    target_layer: &LayerId,
    hierarchy_source: &Hierarchy,
    hierarchy_target: &Hierarchy,
    lag: i32,
    years: &[i32],
    cfg: &SignalConfig,
) -> Result<Option<LagPoint>> {
    let mut fractions = Vec::new();
    let mut links = Vec::new();
    for &year in years {
        let w1 = TimeWindow {
            start_year: year,
            span: cfg.span,
            pooling: cfg.pooling,
        };
        let w2 = TimeWindow {
            start_year: year + lag,
            span: cfg.span,
            pooling: cfg.pooling,
        };
        if !window_available(store, source_layer, w1) || !window_available(store, target_layer, w2)
        {
            continue;
        }
        let pair = assist_lagged(
            store,
            &MatrixSpec {
                layer: source_layer.clone(),
                window: w1,
                level: cfg.level_source,
            },
            &MatrixSpec {
                layer: target_layer.clone(),
                window: w2,
                level: cfg.level_target,
            },
            hierarchy_source,
            hierarchy_target,
        )?;
        let model1 = NullModel::fit(&pair.source, &cfg.fit)?;
        let model2 = NullModel::fit(&pair.target, &cfg.fit)?;
        let seed = derive_seed(
            cfg.seed,
            &[domain::SIGNAL, lag as i64 as u64, year as i64 as u64],
        );
        let mut opts = EnsembleOptions::new(cfg.ensemble, seed);
        opts.requested_thresholds = vec![cfg.threshold];
        let ensemble = null_assist_ensemble(&model1, &model2, &pair.observed, &opts)?;
        let result = p_values(&pair.observed, &ensemble)?;
        let (significant, testable) = result.fraction_significant(cfg.threshold);
        if testable == 0 {
            continue;
        }
        fractions.push(significant as f64 / testable as f64);
        links.push(testable as f64);
    }
    if fractions.is_empty() {
        return Ok(None);
    }
    let n = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let sigma = if fractions.len() > 1 {
        (fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Some(LagPoint {
        lag,
        mean,
        sigma,
        pairs: fractions.len() as u32,
        mean_links: links.iter().sum::<f64>() / n,
    }))
}

/// The signal curve over an inclusive lag range. Lags without any valid
/// year pair are omitted.
pub fn phi_curve(
    store: &MatrixStore,
    source_layer: &LayerId,
    target_layer: &LayerId,
    hierarchy_source: &Hierarchy,
    hierarchy_target: &Hierarchy,
    lags: std::ops::RangeInclusive<i32>,
    cfg: &SignalConfig,
) -> Result<SignalCurve> {
    let years = store.years(source_layer)?;
    let mut points = Vec::new();
    for lag in lags {
        if let Some(point) = phi(
            store,
            source_layer,
            target_layer,
            hierarchy_source,
            hierarchy_target,
            lag,
            &years,
            cfg,
        )? {
            points.push(point);
        }
    }
    Ok(SignalCurve {
        source_layer: source_layer.clone(),
        target_layer: target_layer.clone(),
        level_source: cfg.level_source,
        level_target: cfg.level_target,
        threshold: cfg.threshold,
        ensemble: cfg.ensemble,
        span: cfg.span,
        points,
    })
}
