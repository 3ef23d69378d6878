//! Pipeline configuration, the task engine shared with the CLI, and the
//! provenance manifest.
//!
//! A run executes the configured tasks in order against one matrix store
//! and writes every artifact below the output directory, then a
//! `manifest.json` listing each output with its content hash, the seed and
//! the literal configuration. Outputs are deterministic given (inputs,
//! config, seed), so reruns produce byte-identical manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assist::{assist_lagged, MatrixSpec};
use crate::bicm::{FitOptions, NullModel};
use crate::error::{Error, Result};
use crate::export::{edge_table, export_graph, read_edge_table, GraphFormat};
use crate::ingest::{fractional_count, load_attribution_table, load_table, IngestReport};
use crate::layers::{Hierarchy, LayerId};
use crate::matrix::{BinaryMatrix, Pooling, TimeWindow};
use crate::profile::{profile_target, ProfileRequest};
use crate::rng::{derive_seed, domain};
use crate::signal::{phi_curve, SignalConfig};
use crate::significance::{
    check_resolution, null_assist_ensemble, p_values, validated_network, EnsembleOptions,
    SignificanceResult, ValidatedEdge,
};
use crate::store::MatrixStore;
use crate::synth::{self, CapabilityWorld};

/// Environment variable holding the default output directory (the only
/// ambient configuration the pipeline reads).
pub const OUTPUT_DIR_ENV: &str = "MULTINET_OUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HierarchyConfig {
    Prefix { prefix_lengths: Vec<usize> },
    ParentMap { parent_map: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerConfig {
    pub name: String,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub attribution: Option<PathBuf>,
    #[serde(default)]
    pub hierarchy: Option<HierarchyConfig>,
    #[serde(default)]
    pub default_level: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Ingest {
        layer: String,
    },
    Binarize {
        layer: String,
        year: i32,
        #[serde(default)]
        pool: Option<u32>,
        #[serde(default)]
        pooling: Option<String>,
        #[serde(default)]
        level: Option<u32>,
        out: String,
    },
    Assist {
        from: String,
        to: String,
        #[serde(default)]
        pool: Option<u32>,
        #[serde(default)]
        pooling: Option<String>,
        out: String,
    },
    Validate {
        from: String,
        to: String,
        ensemble: usize,
        threshold: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        pool: Option<u32>,
        #[serde(default)]
        pooling: Option<String>,
        out: String,
    },
    Signal {
        from: String,
        to: String,
        lags: String,
        threshold: f64,
        ensemble: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        pool: Option<u32>,
        #[serde(default)]
        pooling: Option<String>,
        out: String,
    },
    Synth {
        countries: usize,
        activities: String,
        #[serde(default)]
        capabilities: Option<usize>,
        #[serde(default)]
        planted: Option<usize>,
        #[serde(default)]
        lag: Option<u32>,
        #[serde(default)]
        noise: Option<f64>,
        #[serde(default)]
        years: Option<String>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Export {
        input: String,
        format: String,
        out: String,
    },
    Profile {
        target: String,
        source: String,
        #[serde(default)]
        expand: Option<String>,
        #[serde(default)]
        percentile: Option<f64>,
        ensemble: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        pool: Option<u32>,
        #[serde(default)]
        pooling: Option<String>,
        out: String,
    },
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::Ingest { .. } => "ingest",
            Task::Binarize { .. } => "binarize",
            Task::Assist { .. } => "assist",
            Task::Validate { .. } => "validate",
            Task::Signal { .. } => "signal",
            Task::Synth { .. } => "synth",
            Task::Export { .. } => "export",
            Task::Profile { .. } => "profile",
        }
    }

    /// Output paths this task writes, relative to the output directory.
    fn declared_outputs(&self) -> Vec<String> {
        match self {
            Task::Binarize { out, .. }
            | Task::Assist { out, .. }
            | Task::Validate { out, .. }
            | Task::Signal { out, .. }
            | Task::Export { out, .. }
            | Task::Profile { out, .. } => vec![out.clone()],
            Task::Ingest { .. } | Task::Synth { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub store: PathBuf,
    #[serde(default)]
    pub layers: Vec<LayerConfig>,
    #[serde(default)]
    pub tasks: Vec<Task>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Check paths, thresholds and ensemble-size resolution before running.
    pub fn validate(&self, base: &Path) -> Result<()> {
        for layer in &self.layers {
            for path in [&layer.input, &layer.attribution].into_iter().flatten() {
                if !base.join(path).is_file() {
                    return Err(Error::InvalidConfig(format!(
                        "layer `{}` references missing file {}",
                        layer.name,
                        path.display()
                    )));
                }
            }
            if let Some(HierarchyConfig::ParentMap { parent_map }) = &layer.hierarchy {
                if !base.join(parent_map).is_file() {
                    return Err(Error::InvalidConfig(format!(
                        "layer `{}` references missing hierarchy file {}",
                        layer.name,
                        parent_map.display()
                    )));
                }
            }
        }
        for task in &self.tasks {
            match task {
                Task::Validate {
                    threshold,
                    ensemble,
                    ..
                }
                | Task::Signal {
                    threshold,
                    ensemble,
                    ..
                } => {
                    if !(0.0 < *threshold && *threshold < 1.0) {
                        return Err(Error::InvalidConfig(format!(
                            "threshold {threshold} outside (0, 1)"
                        )));
                    }
                    check_resolution(*ensemble, *threshold)?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Resolved per-layer settings plus the store handle; the engine the CLI
/// and the pipeline share.
pub struct Engine {
    pub store: MatrixStore,
    hierarchies: BTreeMap<String, Hierarchy>,
    default_levels: BTreeMap<String, u32>,
    pub fit: FitOptions,
}

impl Engine {
    pub fn new(store: MatrixStore) -> Engine {
        Engine {
            store,
            hierarchies: BTreeMap::new(),
            default_levels: BTreeMap::new(),
            fit: FitOptions::default(),
        }
    }

    pub fn from_config(config: &PipelineConfig, base: &Path) -> Result<Engine> {
        let mut engine = Engine::new(MatrixStore::open(base.join(&config.store)));
        for layer in &config.layers {
            let hierarchy = match &layer.hierarchy {
                None => Hierarchy::Flat,
                Some(HierarchyConfig::Prefix { prefix_lengths }) => {
                    Hierarchy::prefix(prefix_lengths.clone())?
                }
                Some(HierarchyConfig::ParentMap { parent_map }) => {
                    load_parent_map_file(&base.join(parent_map))?
                }
            };
            engine.hierarchies.insert(layer.name.clone(), hierarchy);
            if let Some(level) = layer.default_level {
                engine.default_levels.insert(layer.name.clone(), level);
            }
        }
        Ok(engine)
    }

    pub fn set_hierarchy(&mut self, layer: &LayerId, hierarchy: Hierarchy) {
        self.hierarchies.insert(layer.name().to_string(), hierarchy);
    }

    pub fn hierarchy(&self, layer: &LayerId) -> Hierarchy {
        self.hierarchies
            .get(layer.name())
            .cloned()
            .unwrap_or_default()
    }

    pub fn default_level(&self, layer: &LayerId) -> u32 {
        self.default_levels.get(layer.name()).copied().unwrap_or(0)
    }
}

/// Parse a `child_code,parent_code,level` override file.
pub fn load_parent_map_file(path: &Path) -> Result<Hierarchy> {
    let text = fs::read_to_string(path)?;
    let mut relations = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 && line.trim() == "child_code,parent_code,level" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let level: u32 = fields[2].trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("non-numeric level `{}`", fields[2]),
        })?;
        relations.push((
            fields[0].trim().to_string(),
            fields[1].trim().to_string(),
            level,
        ));
    }
    Hierarchy::parent_map(&relations)
}

/// Parse `layer:year:level` (level optional) into a matrix spec, applying
/// pooling flags.
pub fn parse_side_spec(
    s: &str,
    pool: Option<u32>,
    pooling: Option<&str>,
    engine: &Engine,
) -> Result<MatrixSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(Error::InvalidInput(format!(
            "expected layer:year[:level], got `{s}`"
        )));
    }
    let layer = LayerId::parse(parts[0]);
    let year: i32 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("non-numeric year in `{s}`")))?;
    let level = match parts.get(2) {
        Some(level) => level
            .parse()
            .map_err(|_| Error::InvalidInput(format!("non-numeric level in `{s}`")))?,
        None => engine.default_level(&layer),
    };
    let span = pool.unwrap_or(1);
    let pooling = match pooling {
        Some(p) => Pooling::parse(p)?,
        None => Pooling::Sum,
    };
    Ok(MatrixSpec {
        layer,
        window: TimeWindow::new(year, span, pooling)?,
        level,
    })
}

/// Parse `layer:level` (level optional).
pub fn parse_layer_level(s: &str, engine: &Engine) -> Result<(LayerId, u32)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.is_empty() || parts.len() > 2 {
        return Err(Error::InvalidInput(format!(
            "expected layer[:level], got `{s}`"
        )));
    }
    let layer = LayerId::parse(parts[0]);
    let level = match parts.get(1) {
        Some(level) => level
            .parse()
            .map_err(|_| Error::InvalidInput(format!("non-numeric level in `{s}`")))?,
        None => engine.default_level(&layer),
    };
    Ok((layer, level))
}

/// Parse an inclusive `min..max` lag range.
pub fn parse_lag_range(s: &str) -> Result<std::ops::RangeInclusive<i32>> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| Error::InvalidInput(format!("expected min..max, got `{s}`")))?;
    let lo: i32 = lo
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("non-numeric lag in `{s}`")))?;
    let hi: i32 = hi
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|_| Error::InvalidInput(format!("non-numeric lag in `{s}`")))?;
    if hi < lo {
        return Err(Error::InvalidInput(format!("empty lag range `{s}`")));
    }
    Ok(lo..=hi)
}

/// Parse `first..last` inclusive years.
pub fn parse_year_range(s: &str) -> Result<(i32, i32)> {
    let range = parse_lag_range(s)?;
    Ok((*range.start(), *range.end()))
}

/// Parse `a,b,c` activity counts.
pub fn parse_activity_counts(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "expected three comma-separated activity counts, got `{s}`"
        )));
    }
    let mut counts = [0usize; 3];
    for (slot, part) in counts.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("non-numeric count in `{s}`")))?;
    }
    Ok(counts)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Serialize a binary matrix in the standard table format (value 1 rows).
pub fn binary_matrix_table(m: &BinaryMatrix) -> String {
    let mut out = String::from(crate::ingest::TABLE_HEADER);
    out.push('\n');
    let year = m.window().start_year;
    for &(r, c) in m.entries() {
        let _ = writeln!(
            out,
            "{},{},{year},1",
            m.rows()[r as usize],
            m.cols()[c as usize].code
        );
    }
    out
}

// --- task implementations shared by the CLI and `run` ---

pub fn run_ingest(
    engine: &Engine,
    layer: &LayerId,
    input: Option<&Path>,
    attribution: Option<&Path>,
) -> Result<(Vec<PathBuf>, IngestReport)> {
    let hierarchy = engine.hierarchy(layer);
    let mut report = IngestReport::default();
    let mut matrices = Vec::new();
    if let Some(input) = input {
        let (ms, r) = load_table(input, layer, &hierarchy)?;
        matrices.extend(ms);
        report.merge(r);
    }
    if let Some(path) = attribution {
        let records = load_attribution_table(path)?;
        let (ms, r) = fractional_count(records, layer, &hierarchy)?;
        matrices.extend(ms);
        report.merge(r);
    }
    if matrices.is_empty() {
        return Err(Error::InvalidInput(
            "ingest needs --input and/or --attribution".into(),
        ));
    }
    // merge matrices that landed on the same year (table + attribution)
    let mut by_year: BTreeMap<i32, Vec<crate::matrix::RawMatrix>> = BTreeMap::new();
    for m in matrices {
        by_year.entry(m.window().start_year).or_default().push(m);
    }
    let mut paths = Vec::new();
    for (year, group) in by_year {
        let merged = if group.len() == 1 {
            group.into_iter().next().unwrap()
        } else {
            let layer = group[0].layer().clone();
            let cells = group.iter().flat_map(|m| {
                m.entries()
                    .iter()
                    .map(|&(r, c, v)| {
                        (
                            m.rows()[r as usize].clone(),
                            m.cols()[c as usize].clone(),
                            v,
                        )
                    })
                    .collect::<Vec<_>>()
            });
            crate::matrix::RawMatrix::from_cells(layer, TimeWindow::year(year), cells)?
        };
        paths.push(engine.store.write_matrix(&merged)?);
    }
    Ok((paths, report))
}

pub fn run_binarize(engine: &Engine, spec: &MatrixSpec) -> Result<(BinaryMatrix, Vec<String>)> {
    let hierarchy = engine.hierarchy(&spec.layer);
    let raw = engine
        .store
        .load_window(&spec.layer, spec.window, &hierarchy, spec.level)?;
    let outcome = crate::rca::binarize(&raw)?;
    let mut notes = Vec::new();
    if !outcome.dropped_countries.is_empty() {
        notes.push(format!(
            "dropped {} countries without any advantage",
            outcome.dropped_countries.len()
        ));
    }
    if !outcome.dropped_activities.is_empty() {
        notes.push(format!(
            "dropped {} activities without any advantage",
            outcome.dropped_activities.len()
        ));
    }
    Ok((outcome.matrix, notes))
}

pub fn run_assist(engine: &Engine, from: &MatrixSpec, to: &MatrixSpec) -> Result<String> {
    let pair = assist_lagged(
        &engine.store,
        from,
        to,
        &engine.hierarchy(&from.layer),
        &engine.hierarchy(&to.layer),
    )?;
    let observed = &pair.observed;
    let mut out = String::from("source_code,target_code,value\n");
    for (r, row) in observed.rows().iter().enumerate() {
        for (c, col) in observed.cols().iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", row.code, col.code, observed.get(r, c));
        }
    }
    Ok(out)
}

pub struct ValidateOutcome {
    pub table: String,
    pub result: SignificanceResult,
    pub edges: Vec<ValidatedEdge>,
    pub warnings: Vec<String>,
}

pub fn run_validate(
    engine: &Engine,
    from: &MatrixSpec,
    to: &MatrixSpec,
    ensemble: usize,
    threshold: f64,
    seed: u64,
) -> Result<ValidateOutcome> {
    check_resolution(ensemble, threshold)?;
    let pair = assist_lagged(
        &engine.store,
        from,
        to,
        &engine.hierarchy(&from.layer),
        &engine.hierarchy(&to.layer),
    )?;
    let model1 = NullModel::fit(&pair.source, &engine.fit)?;
    let model2 = NullModel::fit(&pair.target, &engine.fit)?;
    let mut opts = EnsembleOptions::new(ensemble, seed);
    opts.requested_thresholds = vec![threshold];
    let null = null_assist_ensemble(&model1, &model2, &pair.observed, &opts)?;
    let result = p_values(&pair.observed, &null)?;
    let edges = validated_network(std::slice::from_ref(&result), threshold)?;
    Ok(ValidateOutcome {
        table: edge_table(std::slice::from_ref(&result), threshold),
        result,
        edges,
        warnings: null.warnings,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn run_signal(
    engine: &Engine,
    from: (LayerId, u32),
    to: (LayerId, u32),
    lags: std::ops::RangeInclusive<i32>,
    span: u32,
    pooling: Pooling,
    threshold: f64,
    ensemble: usize,
    seed: u64,
) -> Result<String> {
    check_resolution(ensemble, threshold)?;
    let cfg = SignalConfig {
        level_source: from.1,
        level_target: to.1,
        span,
        pooling,
        threshold,
        ensemble,
        seed,
        fit: engine.fit,
    };
    let curve = phi_curve(
        &engine.store,
        &from.0,
        &to.0,
        &engine.hierarchy(&from.0),
        &engine.hierarchy(&to.0),
        lags,
        &cfg,
    )?;
    Ok(curve.to_csv())
}

/// One entry of the provenance manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub stage: String,
    pub sha256: String,
    pub stale: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: String,
    pub outputs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Execute every configured task in order. `base` anchors relative paths in
/// the config; `config_text` is echoed verbatim into the manifest. On a
/// stage failure the manifest is still written, with any files the failed
/// stage had declared marked stale.
pub fn run_pipeline(config: &PipelineConfig, config_text: &str, base: &Path) -> Result<Manifest> {
    config.validate(base)?;
    let engine = Engine::from_config(config, base)?;
    let output_dir = match (&config.output_dir, std::env::var_os(OUTPUT_DIR_ENV)) {
        (Some(dir), _) => base.join(dir),
        (None, Some(env_dir)) => PathBuf::from(env_dir),
        (None, None) => base.to_path_buf(),
    };
    fs::create_dir_all(&output_dir)?;

    let mut manifest = Manifest {
        seed: config.seed,
        config: config_text.to_string(),
        outputs: Vec::new(),
    };
    let store_root = base.join(&config.store);

    let record = |manifest: &mut Manifest, stage: &str, label: String, path: &Path| -> Result<()> {
        manifest.outputs.push(ManifestEntry {
            path: label,
            stage: stage.to_string(),
            sha256: sha256_file(path)?,
            stale: false,
        });
        Ok(())
    };

    for (index, task) in config.tasks.iter().enumerate() {
        let stage = format!("{}#{index}", task.kind());
        let attempt = (|| -> Result<()> {
            match task {
                Task::Ingest { layer } => {
                    let layer_id = LayerId::parse(layer);
                    let cfg = config
                        .layers
                        .iter()
                        .find(|l| l.name == *layer)
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!("task references unknown layer `{layer}`"))
                        })?;
                    let input = cfg.input.as_ref().map(|p| base.join(p));
                    let attribution = cfg.attribution.as_ref().map(|p| base.join(p));
                    let (paths, _report) =
                        run_ingest(&engine, &layer_id, input.as_deref(), attribution.as_deref())?;
                    for path in paths {
                        let label = format!(
                            "store/{}",
                            path.strip_prefix(&store_root).unwrap_or(&path).display()
                        );
                        record(&mut manifest, &stage, label, &path)?;
                    }
                    Ok(())
                }
                Task::Binarize {
                    layer,
                    year,
                    pool,
                    pooling,
                    level,
                    out,
                } => {
                    let layer_id = LayerId::parse(layer);
                    let spec = MatrixSpec {
                        layer: layer_id.clone(),
                        window: TimeWindow::new(
                            *year,
                            pool.unwrap_or(1),
                            match pooling.as_deref() {
                                Some(p) => Pooling::parse(p)?,
                                None => Pooling::Sum,
                            },
                        )?,
                        level: level.unwrap_or_else(|| engine.default_level(&layer_id)),
                    };
                    let (matrix, _notes) = run_binarize(&engine, &spec)?;
                    let path = output_dir.join(out);
                    write_text(&path, &binary_matrix_table(&matrix))?;
                    record(&mut manifest, &stage, out.clone(), &path)
                }
                Task::Assist {
                    from,
                    to,
                    pool,
                    pooling,
                    out,
                } => {
                    let from = parse_side_spec(from, *pool, pooling.as_deref(), &engine)?;
                    let to = parse_side_spec(to, *pool, pooling.as_deref(), &engine)?;
                    let text = run_assist(&engine, &from, &to)?;
                    let path = output_dir.join(out);
                    write_text(&path, &text)?;
                    record(&mut manifest, &stage, out.clone(), &path)
                }
                Task::Validate {
                    from,
                    to,
                    ensemble,
                    threshold,
                    seed,
                    pool,
                    pooling,
                    out,
                } => {
                    let from = parse_side_spec(from, *pool, pooling.as_deref(), &engine)?;
                    let to = parse_side_spec(to, *pool, pooling.as_deref(), &engine)?;
                    let seed = seed.unwrap_or_else(|| {
                        derive_seed(config.seed, &[domain::VALIDATE, index as u64])
                    });
                    let outcome = run_validate(&engine, &from, &to, *ensemble, *threshold, seed)?;
                    let path = output_dir.join(out);
                    write_text(&path, &outcome.table)?;
                    record(&mut manifest, &stage, out.clone(), &path)
                }
                Task::Signal {
                    from,
                    to,
                    lags,
                    threshold,
                    ensemble,
                    seed,
                    pool,
                    pooling,
                    out,
                } => {
                    let from = parse_layer_level(from, &engine)?;
                    let to = parse_layer_level(to, &engine)?;
                    let lags = parse_lag_range(lags)?;
                    let seed = seed.unwrap_or_else(|| {
                        derive_seed(config.seed, &[domain::SIGNAL, index as u64])
                    });
                    let text = run_signal(
                        &engine,
                        from,
                        to,
                        lags,
                        pool.unwrap_or(3),
                        match pooling.as_deref() {
                            Some(p) => Pooling::parse(p)?,
                            None => Pooling::Sum,
                        },
                        *threshold,
                        *ensemble,
                        seed,
                    )?;
                    let path = output_dir.join(out);
                    write_text(&path, &text)?;
                    record(&mut manifest, &stage, out.clone(), &path)
                }
                Task::Synth {
                    countries,
                    activities,
                    capabilities,
                    planted,
                    lag,
                    noise,
                    years,
                    seed,
                } => {
                    let mut world =
                        CapabilityWorld::standard(*countries, parse_activity_counts(activities)?);
                    world.capabilities = capabilities.unwrap_or(0);
                    world.planted = planted.unwrap_or(0);
                    world.lag = lag.unwrap_or(0);
                    world.noise = noise.unwrap_or(0.0);
                    if let Some(years) = years {
                        world.years = parse_year_range(years)?;
                    }
                    let seed = seed.unwrap_or(config.seed);
                    let output = synth::generate(&world, seed)?;
                    synth::write_output(engine.store.root(), &output)?;
                    for m in &output.matrices {
                        let rel =
                            format!("store/{}/{}.csv", m.layer().name(), m.window().start_year);
                        let path = store_root
                            .join(m.layer().name())
                            .join(format!("{}.csv", m.window().start_year));
                        record(&mut manifest, &stage, rel, &path)?;
                    }
                    record(
                        &mut manifest,
                        &stage,
                        "store/planted_pairs.csv".to_string(),
                        &store_root.join("planted_pairs.csv"),
                    )
                }
                Task::Export { input, format, out } => {
                    let records = read_edge_table(&output_dir.join(input))?;
                    let edges: Vec<ValidatedEdge> = records
                        .into_iter()
                        .filter(|r| r.significant)
                        .map(|r| ValidatedEdge {
                            source_layer: r.source_layer,
                            source_code: r.source_code,
                            target_layer: r.target_layer,
                            target_code: r.target_code,
                            b: r.b,
                            p: r.p,
                        })
                        .collect();
                    let format: GraphFormat = format.parse()?;
                    let path = output_dir.join(out);
                    write_text(&path, &export_graph(&edges, format))?;
                    record(&mut manifest, &stage, out.clone(), &path)
                }
                Task::Profile {
                    target,
                    source,
                    expand,
                    percentile,
                    ensemble,
                    seed,
                    pool,
                    pooling,
                    out,
                } => {
                    // target is layer:code:year[:level]
                    let parts: Vec<&str> = target.split(':').collect();
                    if parts.len() < 3 || parts.len() > 4 {
                        return Err(Error::InvalidInput(format!(
                            "expected layer:code:year[:level], got `{target}`"
                        )));
                    }
                    let target_layer = LayerId::parse(parts[0]);
                    let target_code = parts[1].to_string();
                    let year: i32 = parts[2].parse().map_err(|_| {
                        Error::InvalidInput(format!("non-numeric year in `{target}`"))
                    })?;
                    let target_level = match parts.get(3) {
                        Some(level) => level.parse().map_err(|_| {
                            Error::InvalidInput(format!("non-numeric level in `{target}`"))
                        })?,
                        None => engine.default_level(&target_layer),
                    };
                    let source_spec = parse_side_spec(source, *pool, pooling.as_deref(), &engine)?;
                    let span = pool.unwrap_or(1);
                    let pooling = match pooling.as_deref() {
                        Some(p) => Pooling::parse(p)?,
                        None => Pooling::Sum,
                    };
                    let expand = expand
                        .as_ref()
                        .map(|e| -> Result<(String, u32)> {
                            let (code, level) = e.split_once(':').ok_or_else(|| {
                                Error::InvalidInput(format!("expected code:level, got `{e}`"))
                            })?;
                            Ok((
                                code.to_string(),
                                level.parse().map_err(|_| {
                                    Error::InvalidInput(format!("non-numeric level in `{e}`"))
                                })?,
                            ))
                        })
                        .transpose()?;
                    let request = ProfileRequest {
                        source: source_spec.clone(),
                        target: MatrixSpec {
                            layer: target_layer.clone(),
                            window: TimeWindow::new(year, span, pooling)?,
                            level: target_level,
                        },
                        target_code,
                        expand,
                        percentile: percentile.unwrap_or(0.95),
                        ensemble: *ensemble,
                        seed: seed.unwrap_or_else(|| {
                            derive_seed(config.seed, &[domain::PROFILE, index as u64])
                        }),
                        fit: engine.fit,
                    };
                    let table = profile_target(
                        &engine.store,
                        &request,
                        &engine.hierarchy(&source_spec.layer),
                        &engine.hierarchy(&target_layer),
                    )?;
                    let path = output_dir.join(out);
                    write_text(&path, &table.to_csv())?;
                    record(&mut manifest, &stage, out.clone(), &path)
                }
            }
        })();
        if let Err(err) = attempt {
            for declared in task.declared_outputs() {
                let path = output_dir.join(&declared);
                if path.is_file() {
                    manifest.outputs.push(ManifestEntry {
                        path: declared,
                        stage: stage.clone(),
                        sha256: sha256_file(&path)?,
                        stale: true,
                    });
                }
            }
            write_text(&output_dir.join("manifest.json"), &manifest.to_json())?;
            return Err(err.in_stage(&stage));
        }
    }
    write_text(&output_dir.join("manifest.json"), &manifest.to_json())?;
    Ok(manifest)
}
