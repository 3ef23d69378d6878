//! Per-target significance profiles: for one target activity, the observed
//! assist value from every source activity, the null distribution's
//! percentile at the requested confidence, and a significance flag. One
//! source branch can be drilled down to a finer level.

use std::fmt::Write as _;

use crate::assist::{assist_lagged, LaggedPair, MatrixSpec};
use crate::bicm::{FitOptions, NullModel};
use crate::error::{Error, Result};
use crate::layers::{Hierarchy, LayerId};
use crate::rng::{derive_seed, domain};
use crate::significance::{null_assist_ensemble, p_values, EnsembleOptions};
use crate::store::MatrixStore;

#[derive(Debug, Clone)]
pub struct ProfileRequest {
    pub source: MatrixSpec,
    pub target: MatrixSpec,
    /// Code of the single target activity, at the target spec's level.
    pub target_code: String,
    /// Optional drill-down: (source branch code, finer level).
    pub expand: Option<(String, u32)>,
    /// Confidence level of the reported null percentile (default 0.95).
    pub percentile: f64,
    pub ensemble: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub source_code: String,
    pub level: u32,
    pub b: f64,
    pub null_percentile: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone)]
pub enum ProfileOutcome {
    /// The target exists but has no revealed advantage on the shared
    /// country set, so no link into it can be tested.
    Untestable {
        reason: String,
    },
    Rows(Vec<ProfileRow>),
}

#[derive(Debug, Clone)]
pub struct ProfileTable {
    pub target_layer: LayerId,
    pub target_code: String,
    pub source_layer: LayerId,
    pub percentile: f64,
    pub outcome: ProfileOutcome,
}

impl ProfileTable {
    pub const HEADER: &'static str =
        "source_layer,source_code,level,B,null_percentile,p,significant";

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# target {}:{}",
            self.target_layer.name(),
            self.target_code
        );
        let _ = writeln!(out, "# percentile {}", self.percentile);
        match &self.outcome {
            ProfileOutcome::Untestable { reason } => {
                let _ = writeln!(out, "# status untestable: {reason}");
                let _ = writeln!(out, "{}", Self::HEADER);
            }
            ProfileOutcome::Rows(rows) => {
                let _ = writeln!(out, "# status ok");
                let _ = writeln!(out, "{}", Self::HEADER);
                for row in rows {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        self.source_layer.name(),
                        row.source_code,
                        row.level,
                        row.b,
                        row.null_percentile,
                        row.p,
                        row.significant
                    );
                }
            }
        }
        out
    }
}

/// Source codes of the raw target-layer matrix, ranked by shared prefix
/// length with `code`, for "did you mean" reporting.
fn suggestions(known: &[String], code: &str) -> Vec<String> {
    let common = |a: &str, b: &str| a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count();
    let mut ranked: Vec<(usize, &String)> = known.iter().map(|k| (common(k, code), k)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    ranked.into_iter().take(3).map(|(_, k)| k.clone()).collect()
}

fn profile_rows(
    pair: &LaggedPair,
    target_col: usize,
    percentile: f64,
    ensemble: usize,
    seed: u64,
    fit: &FitOptions,
    keep: Option<&dyn Fn(&str) -> bool>,
) -> Result<Vec<ProfileRow>> {
    let model1 = NullModel::fit(&pair.source, fit)?;
    let model2 = NullModel::fit(&pair.target, fit)?;
    let mut opts = EnsembleOptions::new(ensemble, seed);
    opts.store_samples = true;
    opts.requested_thresholds = vec![percentile];
    let null = null_assist_ensemble(&model1, &model2, &pair.observed, &opts)?;
    let result = p_values(&pair.observed, &null)?;
    let mut rows = Vec::new();
    for (r, code) in pair.observed.rows().iter().enumerate() {
        if let Some(keep) = keep {
            if !keep(&code.code) {
                continue;
            }
        }
        rows.push(ProfileRow {
            source_code: code.code.clone(),
            level: code.level,
            b: pair.observed.get(r, target_col),
            null_percentile: null
                .percentile(r, target_col, percentile)
                .expect("store mode"),
            p: result.p(r, target_col),
            significant: result.significant(r, target_col, percentile),
        });
    }
    rows.sort_by(|a, b| b.b.total_cmp(&a.b).then(a.source_code.cmp(&b.source_code)));
    Ok(rows)
}

/// Build the ranked significance table of one target activity against all
/// source activities, optionally expanding one source branch to a finer
/// level. Unknown target codes fail with nearest-code suggestions.
pub fn profile_target(
    store: &MatrixStore,
    request: &ProfileRequest,
    hierarchy_source: &Hierarchy,
    hierarchy_target: &Hierarchy,
) -> Result<ProfileTable> {
    let pair = assist_lagged(
        store,
        &request.source,
        &request.target,
        hierarchy_source,
        hierarchy_target,
    )?;
    let observed = &pair.observed;
    let target_col = match observed
        .cols()
        .iter()
        .position(|c| c.code == request.target_code)
    {
        Some(col) => col,
        None => {
            // distinguish a code missing from the data from one that lost
            // every advantage
            let raw = store.load_window(
                &request.target.layer,
                request.target.window,
                hierarchy_target,
                request.target.level,
            )?;
            let known: Vec<String> = raw.cols().iter().map(|c| c.code.clone()).collect();
            if known.contains(&request.target_code) {
                return Ok(ProfileTable {
                    target_layer: request.target.layer.clone(),
                    target_code: request.target_code.clone(),
                    source_layer: request.source.layer.clone(),
                    percentile: request.percentile,
                    outcome: ProfileOutcome::Untestable {
                        reason: "no revealed advantage in this window".into(),
                    },
                });
            }
            return Err(Error::UnknownTarget {
                code: request.target_code.clone(),
                suggestions: suggestions(&known, &request.target_code),
            });
        }
    };
    if observed.col_ubiquity()[target_col] == 0 {
        return Ok(ProfileTable {
            target_layer: request.target.layer.clone(),
            target_code: request.target_code.clone(),
            source_layer: request.source.layer.clone(),
            percentile: request.percentile,
            outcome: ProfileOutcome::Untestable {
                reason: "zero ubiquity on the shared country set".into(),
            },
        });
    }

    let mut rows = profile_rows(
        &pair,
        target_col,
        request.percentile,
        request.ensemble,
        derive_seed(request.seed, &[domain::PROFILE, 0]),
        &request.fit,
        None,
    )?;

    if let Some((branch, fine_level)) = &request.expand {
        let fine_spec = MatrixSpec {
            layer: request.source.layer.clone(),
            window: request.source.window,
            level: *fine_level,
        };
        let fine_pair = assist_lagged(
            store,
            &fine_spec,
            &request.target,
            hierarchy_source,
            hierarchy_target,
        )?;
        let fine_col = fine_pair
            .observed
            .cols()
            .iter()
            .position(|c| c.code == request.target_code);
        if let Some(fine_col) = fine_col {
            let coarse_level = request.source.level;
            let branch = branch.clone();
            let hierarchy = hierarchy_source.clone();
            let keep = move |code: &str| {
                hierarchy
                    .truncate(code, coarse_level)
                    .map(|t| t == branch)
                    .unwrap_or(false)
            };
            let expansion = profile_rows(
                &fine_pair,
                fine_col,
                request.percentile,
                request.ensemble,
                derive_seed(request.seed, &[domain::PROFILE, 1]),
                &request.fit,
                Some(&keep),
            )?;
            rows.extend(expansion);
        }
    }

    Ok(ProfileTable {
        target_layer: request.target.layer.clone(),
        target_code: request.target_code.clone(),
        source_layer: request.source.layer.clone(),
        percentile: request.percentile,
        outcome: ProfileOutcome::Rows(rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suggestions_rank_by_shared_prefix() {
        let known = vec![
            "847149".to_string(),
            "847150".to_string(),
            "010212".to_string(),
        ];
        let s = suggestions(&known, "847199");
        assert_eq!(s[0], "847149");
        assert_eq!(s[1], "847150");
    }
}
