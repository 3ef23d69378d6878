//! Synthetic multilayer worlds with planted ground truth.
//!
//! Countries hold hidden capability sets; activities require capability
//! sets; a country performs an activity in a year when its endowment covers
//! the requirements. Planted cross-layer pairs share their full requirement
//! set while all other requirement sets are pairwise disjoint, so the
//! planted pairs are the only genuinely linked activities. The target layer
//! of the planted pairs reads endowments with a configurable lag, which
//! moves the cross-layer signal to that time difference. Endowments are
//! redrawn independently every year: at the planted lag both sides see the
//! same draw, at any other lag they see independent ones.
//!
//! Country richness ramps from poor to rich, reproducing on purpose the
//! degree confound of real data (diversified countries co-occur in
//! everything); the null model is expected to absorb it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{ActivityCode, Hierarchy, LayerId};
use crate::matrix::{RawMatrix, TimeWindow};
use crate::rng::{derive_seed, domain, stream_rng};
use crate::store::MatrixStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoverageRule {
    /// A country performs an activity only when it holds every required
    /// capability.
    All,
    /// It suffices to hold at least this fraction of the requirements.
    Fraction(f64),
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub layer: LayerId,
    pub activities: usize,
}

#[derive(Debug, Clone)]
pub struct CapabilityWorld {
    pub countries: usize,
    /// Size of the capability universe; 0 derives the minimum that keeps
    /// non-planted requirement sets disjoint.
    pub capabilities: usize,
    pub layers: Vec<LayerSpec>,
    pub requirement_size: usize,
    /// Number of planted source/target activity pairs sharing requirements.
    pub planted: usize,
    /// Index into `layers` of the planted source layer.
    pub planted_source: usize,
    /// Index into `layers` of the planted target layer; it reads endowments
    /// `lag` years late.
    pub planted_target: usize,
    pub lag: u32,
    /// Probability that each generated cell is flipped.
    pub noise: f64,
    /// Inclusive year range of the emitted store.
    pub years: (i32, i32),
    /// Per-country capability probability ramps linearly over this range.
    pub richness: (f64, f64),
    pub coverage: CoverageRule,
}

impl CapabilityWorld {
    /// The three-layer default: science, technology, products.
    pub fn standard(countries: usize, activities: [usize; 3]) -> CapabilityWorld {
        CapabilityWorld {
            countries,
            capabilities: 0,
            layers: vec![
                LayerSpec {
                    layer: LayerId::Science,
                    activities: activities[0],
                },
                LayerSpec {
                    layer: LayerId::Technology,
                    activities: activities[1],
                },
                LayerSpec {
                    layer: LayerId::Products,
                    activities: activities[2],
                },
            ],
            requirement_size: 3,
            planted: 0,
            planted_source: 0,
            planted_target: 1,
            lag: 0,
            noise: 0.0,
            years: (2000, 2009),
            richness: (0.35, 0.85),
            coverage: CoverageRule::All,
        }
    }

    fn distinct_sets(&self) -> usize {
        let total: usize = self.layers.iter().map(|l| l.activities).sum();
        total - self.planted
    }

    /// Capabilities actually used (auto-derived when `capabilities` is 0).
    pub fn capability_universe(&self) -> usize {
        if self.capabilities == 0 {
            self.distinct_sets() * self.requirement_size
        } else {
            self.capabilities
        }
    }

    fn validate(&self) -> Result<()> {
        if self.countries == 0 || self.layers.is_empty() || self.requirement_size == 0 {
            return Err(Error::InvalidConfig(
                "world needs countries, layers and a positive requirement size".into(),
            ));
        }
        if self.planted_source >= self.layers.len() || self.planted_target >= self.layers.len() {
            return Err(Error::InvalidConfig(
                "planted layer index out of range".into(),
            ));
        }
        if self.planted_source == self.planted_target && self.planted > 0 {
            return Err(Error::InvalidConfig(
                "planted pairs must span two different layers".into(),
            ));
        }
        let max_planted = self
            .layers
            .get(self.planted_source)
            .map(|l| l.activities)
            .unwrap_or(0)
            .min(
                self.layers
                    .get(self.planted_target)
                    .map(|l| l.activities)
                    .unwrap_or(0),
            );
        if self.planted > max_planted {
            return Err(Error::InvalidConfig(format!(
                "cannot plant {} pairs with layer sizes allowing at most {max_planted}",
                self.planted
            )));
        }
        let needed = self.distinct_sets() * self.requirement_size;
        if self.capability_universe() < needed {
            return Err(Error::InvalidConfig(format!(
                "capability universe of {} is too small: disjoint requirements need {needed}",
                self.capability_universe()
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidConfig("noise must lie in [0, 1]".into()));
        }
        if self.years.1 < self.years.0 {
            return Err(Error::InvalidConfig("year range is empty".into()));
        }
        Ok(())
    }
}

/// A planted cross-layer association (the ground truth).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedPair {
    pub source_layer: LayerId,
    pub source_code: ActivityCode,
    pub target_layer: LayerId,
    pub target_code: ActivityCode,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// One matrix per (layer, year), grouped by layer then year.
    pub matrices: Vec<RawMatrix>,
    pub planted: Vec<PlantedPair>,
}

/// Codes are `<prefix><index>` with a one-letter layer prefix, e.g. `T07`.
pub fn hierarchy() -> Hierarchy {
    Hierarchy::prefix(vec![1, 3]).expect("static lengths")
}

fn layer_prefix(layer: &LayerId, index: usize) -> String {
    let first = layer
        .name()
        .chars()
        .next()
        .map(|c| c.to_ascii_uppercase())
        .unwrap_or('L');
    format!("{first}{index:02}")
}

/// Generate the store deterministically from `(world, seed)`.
pub fn generate(world: &CapabilityWorld, seed: u64) -> Result<SynthOutput> {
    world.validate()?;
    let n_countries = world.countries;
    let k = world.capability_universe();
    let r = world.requirement_size;

    // requirement blocks: sequential disjoint slices, planted targets reuse
    // their source block
    let mut requirements: Vec<Vec<Vec<usize>>> = Vec::with_capacity(world.layers.len());
    let mut next_block = 0usize;
    for (li, spec) in world.layers.iter().enumerate() {
        let mut layer_reqs = Vec::with_capacity(spec.activities);
        for ai in 0..spec.activities {
            if li == world.planted_target && ai < world.planted {
                layer_reqs.push(Vec::new()); // filled below from the source
            } else {
                layer_reqs.push((next_block * r..(next_block + 1) * r).collect());
                next_block += 1;
            }
        }
        requirements.push(layer_reqs);
    }
    let shared = requirements[world.planted_source][..world.planted].to_vec();
    requirements[world.planted_target][..world.planted].clone_from_slice(&shared);

    // planted pairs must overlap strictly more than any other cross pair
    for (li, layer_reqs) in requirements.iter().enumerate() {
        for (lj, other_reqs) in requirements.iter().enumerate() {
            for (ai, req_a) in layer_reqs.iter().enumerate() {
                for (aj, req_b) in other_reqs.iter().enumerate() {
                    if li == lj && ai == aj {
                        continue;
                    }
                    let overlap = req_a.iter().filter(|c| req_b.contains(c)).count();
                    let is_planted = li == world.planted_source
                        && lj == world.planted_target
                        && ai == aj
                        && ai < world.planted;
                    let is_planted_rev = lj == world.planted_source
                        && li == world.planted_target
                        && ai == aj
                        && ai < world.planted;
                    if is_planted || is_planted_rev {
                        assert_eq!(overlap, r, "planted pair must share its full set");
                    } else {
                        assert_eq!(overlap, 0, "non-planted sets must stay disjoint");
                    }
                }
            }
        }
    }

    let richness: Vec<f64> = (0..n_countries)
        .map(|c| {
            if n_countries == 1 {
                world.richness.0
            } else {
                world.richness.0
                    + (world.richness.1 - world.richness.0) * c as f64 / (n_countries - 1) as f64
            }
        })
        .collect();

    // endowments per year, redrawn independently; the planted target layer
    // needs `lag` extra years of history
    let first_year = world.years.0 - world.lag as i32;
    let last_year = world.years.1;
    let endow_seed = derive_seed(seed, &[domain::SYNTH_ENDOWMENT]);
    let mut endowments: Vec<Vec<bool>> = Vec::new(); // [year-offset][country*k + cap]
    for offset in 0..=(last_year - first_year) as u64 {
        let mut rng = stream_rng(endow_seed, offset);
        let mut year_endow = vec![false; n_countries * k];
        for c in 0..n_countries {
            for cap in 0..k {
                year_endow[c * k + cap] = rng.random::<f64>() < richness[c];
            }
        }
        endowments.push(year_endow);
    }
    let endowment = |year: i32, country: usize, cap: usize| -> bool {
        endowments[(year - first_year) as usize][country * k + cap]
    };

    let covered = |year: i32, country: usize, req: &[usize]| -> bool {
        let held = req
            .iter()
            .filter(|&&cap| endowment(year, country, cap))
            .count();
        match world.coverage {
            CoverageRule::All => held == req.len(),
            CoverageRule::Fraction(f) => (held as f64) >= f * req.len() as f64,
        }
    };

    let noise_seed = derive_seed(seed, &[domain::SYNTH_NOISE]);
    let mut matrices = Vec::new();
    for (li, spec) in world.layers.iter().enumerate() {
        let layer_lag = if li == world.planted_target {
            world.lag as i32
        } else {
            0
        };
        for year in world.years.0..=world.years.1 {
            let mut rng = stream_rng(noise_seed, derive_seed(li as u64, &[year as i64 as u64]));
            let mut cells = Vec::new();
            for country in 0..n_countries {
                for (ai, req) in requirements[li].iter().enumerate() {
                    let mut active = covered(year - layer_lag, country, req);
                    if rng.random::<f64>() < world.noise {
                        active = !active;
                    }
                    if active {
                        cells.push((
                            format!("c{country:02}"),
                            ActivityCode::new(layer_prefix(&spec.layer, ai), 1),
                            1.0,
                        ));
                    }
                }
            }
            matrices.push(RawMatrix::from_cells(
                spec.layer.clone(),
                TimeWindow::year(year),
                cells,
            )?);
        }
    }

    let planted = (0..world.planted)
        .map(|ai| PlantedPair {
            source_layer: world.layers[world.planted_source].layer.clone(),
            source_code: ActivityCode::new(
                layer_prefix(&world.layers[world.planted_source].layer, ai),
                1,
            ),
            target_layer: world.layers[world.planted_target].layer.clone(),
            target_code: ActivityCode::new(
                layer_prefix(&world.layers[world.planted_target].layer, ai),
                1,
            ),
        })
        .collect();

    Ok(SynthOutput { matrices, planted })
}

pub const PLANTED_HEADER: &str = "source_layer,source_code,target_layer,target_code";

/// Write the matrices into a store rooted at `dir` plus the ground-truth
/// file `planted_pairs.csv`.
pub fn write_output(dir: &Path, output: &SynthOutput) -> Result<()> {
    let store = MatrixStore::open(dir);
    store.write_all(&output.matrices)?;
    let mut text = String::from(PLANTED_HEADER);
    text.push('\n');
    for pair in &output.planted {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            pair.source_layer.name(),
            pair.source_code.code,
            pair.target_layer.name(),
            pair.target_code.code
        );
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("planted_pairs.csv"), text)?;
    Ok(())
}

/// Read a `planted_pairs.csv` ground-truth file.
pub fn read_planted(path: &Path) -> Result<Vec<PlantedPair>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim() != PLANTED_HEADER {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("expected header `{PLANTED_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let h = hierarchy();
        out.push(PlantedPair {
            source_layer: LayerId::parse(fields[0]),
            source_code: h.activity(fields[1])?,
            target_layer: LayerId::parse(fields[2]),
            target_code: h.activity(fields[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(noise: f64, lag: u32, planted: usize) -> CapabilityWorld {
        let mut w = CapabilityWorld::standard(12, [6, 6, 6]);
        w.noise = noise;
        w.lag = lag;
        w.planted = planted;
        w.years = (2000, 2004);
        w
    }

    fn matrix_for<'a>(out: &'a SynthOutput, layer: &LayerId, year: i32) -> &'a RawMatrix {
        out.matrices
            .iter()
            .find(|m| m.layer() == layer && m.window().start_year == year)
            .unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let w = world(0.1, 2, 3);
        let a = generate(&w, 99).unwrap();
        let b = generate(&w, 99).unwrap();
        assert_eq!(a.matrices, b.matrices);
        assert_eq!(a.planted, b.planted);
        let c = generate(&w, 100).unwrap();
        assert_ne!(a.matrices, c.matrices);
    }

    #[test]
    fn no_noise_no_lag_planted_pairs_co_occur_perfectly() {
        let w = world(0.0, 0, 4);
        let out = generate(&w, 7).unwrap();
        for year in 2000..=2004 {
            let src = matrix_for(&out, &LayerId::Science, year);
            let tgt = matrix_for(&out, &LayerId::Technology, year);
            for pair in &out.planted {
                let advantaged = |m: &RawMatrix, code: &ActivityCode| -> Vec<String> {
                    let Some(col) = m.cols().iter().position(|c| c == code) else {
                        return Vec::new();
                    };
                    m.entries()
                        .iter()
                        .filter(|&&(_, c, _)| c as usize == col)
                        .map(|&(r, _, _)| m.rows()[r as usize].clone())
                        .collect()
                };
                assert_eq!(
                    advantaged(src, &pair.source_code),
                    advantaged(tgt, &pair.target_code),
                    "pair {pair:?} year {year}"
                );
            }
        }
    }

    #[test]
    fn pure_noise_decouples_planted_pairs() {
        let mut w = world(0.5, 0, 4);
        w.countries = 40;
        let out = generate(&w, 11).unwrap();
        // agreement rate between planted columns should sit near 1/2
        let mut agree = 0usize;
        let mut total = 0usize;
        for year in 2000..=2004 {
            let src = matrix_for(&out, &LayerId::Science, year);
            let tgt = matrix_for(&out, &LayerId::Technology, year);
            for pair in &out.planted {
                for country in 0..w.countries {
                    let id = format!("c{country:02}");
                    let has = |m: &RawMatrix, code: &ActivityCode| -> bool {
                        let row = m.rows().iter().position(|r| *r == id);
                        let col = m.cols().iter().position(|c| c == code);
                        match (row, col) {
                            (Some(r), Some(c)) => m.get(r as u32, c as u32) > 0.0,
                            _ => false,
                        }
                    };
                    total += 1;
                    if has(src, &pair.source_code) == has(tgt, &pair.target_code) {
                        agree += 1;
                    }
                }
            }
        }
        let rate = agree as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.1, "agreement {rate}");
    }

    #[test]
    fn capability_budget_is_enforced() {
        let mut w = world(0.0, 0, 2);
        w.capabilities = 10; // far too small for 16 disjoint sets of 3
        assert!(matches!(generate(&w, 1), Err(Error::InvalidConfig(_))));
        w.capabilities = 0;
        assert_eq!(w.capability_universe(), (18 - 2) * 3);
        assert!(generate(&w, 1).is_ok());
    }

    #[test]
    fn planted_pairs_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let w = world(0.05, 1, 3);
        let out = generate(&w, 5).unwrap();
        write_output(dir.path(), &out).unwrap();
        let planted = read_planted(&dir.path().join("planted_pairs.csv")).unwrap();
        assert_eq!(planted, out.planted);
        let store = MatrixStore::open(dir.path());
        let years = store.years(&LayerId::Science).unwrap();
        assert_eq!(years, vec![2000, 2001, 2002, 2003, 2004]);
        let back = store
            .read_year(&LayerId::Science, 2001, &hierarchy())
            .unwrap();
        assert_eq!(&back, matrix_for(&out, &LayerId::Science, 2001));
    }
}
