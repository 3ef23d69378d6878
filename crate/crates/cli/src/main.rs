//! Command-line front end: ingest raw tables, binarize by revealed
//! advantage, build assist matrices, validate links against the bipartite
//! null model, compute lagged signal curves, generate synthetic worlds,
//! export graphs and profile single targets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multinet::export::{export_graph, read_edge_table, GraphFormat};
use multinet::layers::{Hierarchy, LayerId};
use multinet::matrix::Pooling;
use multinet::pipeline::{
    self, binary_matrix_table, load_parent_map_file, parse_activity_counts, parse_lag_range,
    parse_layer_level, parse_side_spec, parse_year_range, run_assist, run_binarize, run_ingest,
    run_signal, run_validate, Engine, PipelineConfig, OUTPUT_DIR_ENV,
};
use multinet::profile::{profile_target, ProfileRequest};
use multinet::significance::ValidatedEdge;
use multinet::store::MatrixStore;
use multinet::synth::{self, CapabilityWorld};
use multinet::{Error, TimeWindow};

#[derive(Parser)]
#[command(
    name = "multinet",
    version,
    about = "Multilayer country-activity network reconstruction and validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StoreArgs {
    /// Matrix store directory.
    #[arg(long)]
    store: PathBuf,
    /// Layer hierarchy, repeatable: `LAYER=prefix:2,4,6`,
    /// `LAYER=parents:FILE`, or a bare spec applying to all layers.
    #[arg(long = "hierarchy")]
    hierarchies: Vec<String>,
}

#[derive(Args, Clone)]
struct PoolArgs {
    /// Pool this many consecutive years into each window.
    #[arg(long)]
    pool: Option<u32>,
    /// How pooled years combine: sum | stack.
    #[arg(long)]
    pooling: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load raw records for one layer into the matrix store.
    Ingest {
        #[arg(long)]
        layer: String,
        /// `country,code,year,value` table.
        #[arg(long)]
        input: Option<PathBuf>,
        /// `unit,countries,codes,year` multi-attribution records
        /// (fractionally counted).
        #[arg(long)]
        attribution: Option<PathBuf>,
        /// Matrix store directory to write into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "hierarchy")]
        hierarchies: Vec<String>,
    },
    /// Binarize one layer window by revealed comparative advantage.
    Binarize {
        #[arg(long)]
        layer: String,
        #[arg(long)]
        year: i32,
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        level: Option<u32>,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contract two binary matrices into a cross-layer assist table.
    Assist {
        /// Source side as layer:year[:level].
        #[arg(long)]
        from: String,
        /// Target side as layer:year[:level].
        #[arg(long)]
        to: String,
        #[command(flatten)]
        pool: PoolArgs,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test every link of an assist matrix against the bipartite null model.
    Validate {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Null samples to draw.
        #[arg(long)]
        ensemble: usize,
        /// Confidence level in (0,1), e.g. 0.99.
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        pool: PoolArgs,
        #[command(flatten)]
        store: StoreArgs,
        /// Edge table `source_layer,source_code,target_layer,target_code,B,p,significant`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fraction of significant links per time lag between two layers.
    Signal {
        /// Source layer as layer[:level].
        #[arg(long)]
        from: String,
        /// Target layer as layer[:level].
        #[arg(long)]
        to: String,
        /// Inclusive lag range min..max.
        #[arg(long)]
        lags: String,
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        ensemble: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        store: StoreArgs,
        /// Curve table `dy,phi_mean,phi_sigma,n_pairs,n_links_mean`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic capability world with planted ground truth.
    Synth {
        #[arg(long)]
        countries: usize,
        /// Capability universe size (0 = derive the minimum).
        #[arg(long, default_value_t = 0)]
        capabilities: usize,
        /// Activities per layer, e.g. 20,20,20.
        #[arg(long)]
        activities: String,
        /// Planted source->target pairs.
        #[arg(long, default_value_t = 0)]
        planted: usize,
        /// Years by which the target layer trails the source layer.
        #[arg(long, default_value_t = 0)]
        lag: u32,
        /// Per-cell flip probability.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        /// Inclusive year range, e.g. 2000..2009.
        #[arg(long, default_value = "2000..2009")]
        years: String,
        /// Store directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a validated edge table to a graph file.
    Export {
        /// Edge table produced by `validate`.
        #[arg(long)]
        input: PathBuf,
        /// csv | graphml | dot.
        #[arg(long)]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank source activities by their assist value into one target.
    Profile {
        /// Target as layer:code:year[:level].
        #[arg(long)]
        target: String,
        /// Source side as layer:year[:level].
        #[arg(long)]
        source: String,
        /// Drill one source branch down: code:level.
        #[arg(long)]
        expand: Option<String>,
        /// Confidence of the reported null percentile.
        #[arg(long, default_value_t = 0.95)]
        percentile: f64,
        #[arg(long)]
        ensemble: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        pool: PoolArgs,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a pipeline configuration and write a provenance manifest.
    Run {
        /// TOML pipeline configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Relative output paths land under MULTINET_OUT_DIR when it is set.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

fn write_out(path: &Path, text: &str) -> Result<(), Error> {
    let path = resolve_out(path);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&path, text)?;
    Ok(())
}

fn parse_hierarchy_spec(spec: &str) -> Result<Hierarchy, Error> {
    if spec == "flat" {
        return Ok(Hierarchy::Flat);
    }
    if let Some(lengths) = spec.strip_prefix("prefix:") {
        let lengths: Result<Vec<usize>, _> = lengths.split(',').map(|l| l.trim().parse()).collect();
        return Hierarchy::prefix(
            lengths.map_err(|_| Error::InvalidInput(format!("bad prefix lengths in `{spec}`")))?,
        );
    }
    if let Some(path) = spec.strip_prefix("parents:") {
        return load_parent_map_file(Path::new(path));
    }
    Err(Error::InvalidInput(format!(
        "unknown hierarchy spec `{spec}` (expected flat, prefix:L1,L2,... or parents:FILE)"
    )))
}

/// Apply `LAYER=SPEC` (or bare `SPEC` for every layer mentioned later)
/// hierarchy flags to the engine.
fn apply_hierarchies(
    engine: &mut Engine,
    flags: &[String],
    layers: &[LayerId],
) -> Result<(), Error> {
    for flag in flags {
        match flag.split_once('=') {
            Some((layer, spec)) => {
                engine.set_hierarchy(&LayerId::parse(layer), parse_hierarchy_spec(spec)?);
            }
            None => {
                let hierarchy = parse_hierarchy_spec(flag)?;
                for layer in layers {
                    engine.set_hierarchy(layer, hierarchy.clone());
                }
            }
        }
    }
    Ok(())
}

fn engine_for(store: &StoreArgs, layers: &[LayerId]) -> Result<Engine, Error> {
    let mut engine = Engine::new(MatrixStore::open(&store.store));
    apply_hierarchies(&mut engine, &store.hierarchies, layers)?;
    Ok(engine)
}

fn pooling_of(pool: &PoolArgs) -> Result<(Option<u32>, Option<String>), Error> {
    if let Some(p) = &pool.pooling {
        Pooling::parse(p)?;
    }
    Ok((pool.pool, pool.pooling.clone()))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest {
            layer,
            input,
            attribution,
            out,
            hierarchies,
        } => {
            let layer = LayerId::parse(&layer);
            let mut engine = Engine::new(MatrixStore::open(resolve_out(&out)));
            apply_hierarchies(&mut engine, &hierarchies, std::slice::from_ref(&layer))?;
            let (paths, report) =
                run_ingest(&engine, &layer, input.as_deref(), attribution.as_deref())?;
            eprintln!(
                "ingested {} entries into {} files ({} skipped)",
                report.accepted,
                paths.len(),
                report.skipped.values().sum::<u64>()
            );
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            Ok(())
        }
        Command::Binarize {
            layer,
            year,
            pool,
            level,
            store,
            out,
        } => {
            let layer = LayerId::parse(&layer);
            let engine = engine_for(&store, std::slice::from_ref(&layer))?;
            let (pool_n, pooling) = pooling_of(&pool)?;
            let spec = parse_side_spec(
                &format!(
                    "{}:{}:{}",
                    layer.name(),
                    year,
                    level.unwrap_or_else(|| engine.default_level(&layer))
                ),
                pool_n,
                pooling.as_deref(),
                &engine,
            )?;
            let (matrix, notes) = run_binarize(&engine, &spec)?;
            for note in notes {
                eprintln!("note: {note}");
            }
            write_out(&out, &binary_matrix_table(&matrix))
        }
        Command::Assist {
            from,
            to,
            pool,
            store,
            out,
        } => {
            let engine = engine_for(
                &store,
                &[
                    LayerId::parse(from.split(':').next().unwrap_or_default()),
                    LayerId::parse(to.split(':').next().unwrap_or_default()),
                ],
            )?;
            let (pool_n, pooling) = pooling_of(&pool)?;
            let from = parse_side_spec(&from, pool_n, pooling.as_deref(), &engine)?;
            let to = parse_side_spec(&to, pool_n, pooling.as_deref(), &engine)?;
            write_out(&out, &run_assist(&engine, &from, &to)?)
        }
        Command::Validate {
            from,
            to,
            ensemble,
            threshold,
            seed,
            pool,
            store,
            out,
        } => {
            let engine = engine_for(
                &store,
                &[
                    LayerId::parse(from.split(':').next().unwrap_or_default()),
                    LayerId::parse(to.split(':').next().unwrap_or_default()),
                ],
            )?;
            let (pool_n, pooling) = pooling_of(&pool)?;
            let from = parse_side_spec(&from, pool_n, pooling.as_deref(), &engine)?;
            let to = parse_side_spec(&to, pool_n, pooling.as_deref(), &engine)?;
            let outcome = run_validate(&engine, &from, &to, ensemble, threshold, seed)?;
            for warning in &outcome.warnings {
                eprintln!("warning: {warning}");
            }
            eprintln!(
                "validated {} of {} tested links at {threshold}",
                outcome.edges.len(),
                outcome.result.rows().len() * outcome.result.cols().len()
            );
            write_out(&out, &outcome.table)
        }
        Command::Signal {
            from,
            to,
            lags,
            pool,
            threshold,
            ensemble,
            seed,
            store,
            out,
        } => {
            let engine = engine_for(
                &store,
                &[
                    LayerId::parse(from.split(':').next().unwrap_or_default()),
                    LayerId::parse(to.split(':').next().unwrap_or_default()),
                ],
            )?;
            let from = parse_layer_level(&from, &engine)?;
            let to = parse_layer_level(&to, &engine)?;
            let lags = parse_lag_range(&lags)?;
            let (pool_n, pooling) = pooling_of(&pool)?;
            let text = run_signal(
                &engine,
                from,
                to,
                lags,
                pool_n.unwrap_or(3),
                match pooling.as_deref() {
                    Some(p) => Pooling::parse(p)?,
                    None => Pooling::Sum,
                },
                threshold,
                ensemble,
                seed,
            )?;
            write_out(&out, &text)
        }
        Command::Synth {
            countries,
            capabilities,
            activities,
            planted,
            lag,
            noise,
            seed,
            years,
            out,
        } => {
            let mut world =
                CapabilityWorld::standard(countries, parse_activity_counts(&activities)?);
            world.capabilities = capabilities;
            world.planted = planted;
            world.lag = lag;
            world.noise = noise;
            world.years = parse_year_range(&years)?;
            let output = synth::generate(&world, seed)?;
            synth::write_output(&resolve_out(&out), &output)?;
            eprintln!(
                "wrote {} matrices and {} planted pairs",
                output.matrices.len(),
                output.planted.len()
            );
            Ok(())
        }
        Command::Export { input, format, out } => {
            let format: GraphFormat = format.parse()?;
            let records = read_edge_table(&input)?;
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
            write_out(&out, &export_graph(&edges, format))
        }
        Command::Profile {
            target,
            source,
            expand,
            percentile,
            ensemble,
            seed,
            pool,
            store,
            out,
        } => {
            let parts: Vec<&str> = target.split(':').collect();
            if parts.len() < 3 || parts.len() > 4 {
                return Err(Error::InvalidInput(format!(
                    "expected layer:code:year[:level], got `{target}`"
                )));
            }
            let target_layer = LayerId::parse(parts[0]);
            let target_code = parts[1].to_string();
            let year: i32 = parts[2]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("non-numeric year in `{target}`")))?;
            let engine = engine_for(
                &store,
                &[
                    LayerId::parse(source.split(':').next().unwrap_or_default()),
                    target_layer.clone(),
                ],
            )?;
            let target_level = match parts.get(3) {
                Some(level) => level
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("non-numeric level in `{target}`")))?,
                None => engine.default_level(&target_layer),
            };
            let (pool_n, pooling) = pooling_of(&pool)?;
            let source_spec = parse_side_spec(&source, pool_n, pooling.as_deref(), &engine)?;
            let expand = expand
                .map(|e| -> Result<(String, u32), Error> {
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
                target: multinet::assist::MatrixSpec {
                    layer: target_layer.clone(),
                    window: TimeWindow::new(
                        year,
                        pool_n.unwrap_or(1),
                        match pooling.as_deref() {
                            Some(p) => Pooling::parse(p)?,
                            None => Pooling::Sum,
                        },
                    )?,
                    level: target_level,
                },
                target_code,
                expand,
                percentile,
                ensemble,
                seed,
                fit: engine.fit,
            };
            let table = profile_target(
                &engine.store,
                &request,
                &engine.hierarchy(&source_spec.layer),
                &engine.hierarchy(&target_layer),
            )?;
            write_out(&out, &table.to_csv())
        }
        Command::Run { config, out } => {
            let text = fs::read_to_string(&config)?;
            let mut parsed = PipelineConfig::from_toml(&text)?;
            if let Some(out) = out {
                parsed.output_dir = Some(out);
            }
            let base = config
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            let manifest = pipeline::run_pipeline(&parsed, &text, base)?;
            eprintln!("wrote manifest with {} outputs", manifest.outputs.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": err.to_string(),
                "kind": err.kind(),
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
