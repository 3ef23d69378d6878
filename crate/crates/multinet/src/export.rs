//! Graph and table export: edge-list CSV, GraphML and DOT.
//!
//! Nodes are `layer:code` pairs carrying a layer attribute and their degree
//! (incident validated edges, both directions); edges carry the observed
//! assist value and its p-value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::LayerId;
use crate::significance::{SignificanceResult, ValidatedEdge};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    EdgeList,
    GraphMl,
    Dot,
}

pub const SUPPORTED_FORMATS: &str = "csv|graphml|dot";

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<GraphFormat> {
        match s.to_ascii_lowercase().as_str() {
            "csv" | "edgelist" | "edge-list" => Ok(GraphFormat::EdgeList),
            "graphml" => Ok(GraphFormat::GraphMl),
            "dot" => Ok(GraphFormat::Dot),
            other => Err(Error::UnknownFormat {
                format: other.to_string(),
                supported: SUPPORTED_FORMATS.to_string(),
            }),
        }
    }
}

pub const EDGE_TABLE_HEADER: &str =
    "source_layer,source_code,target_layer,target_code,B,p,significant";

/// One row of the tested-links table written by validation.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub source_layer: LayerId,
    pub source_code: String,
    pub target_layer: LayerId,
    pub target_code: String,
    pub b: f64,
    pub p: f64,
    pub significant: bool,
}

/// Serialize every tested link of `results` with its significance flag at
/// `threshold`.
pub fn edge_table(results: &[SignificanceResult], threshold: f64) -> String {
    let mut out = String::from(EDGE_TABLE_HEADER);
    out.push('\n');
    for result in results {
        for row in 0..result.rows().len() {
            for col in 0..result.cols().len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    result.source_layer.name(),
                    result.rows()[row].code,
                    result.target_layer.name(),
                    result.cols()[col].code,
                    result.b(row, col),
                    result.p(row, col),
                    result.significant(row, col, threshold)
                );
            }
        }
    }
    out
}

/// Read an edge table produced by [`edge_table`].
pub fn read_edge_table(path: &Path) -> Result<Vec<EdgeRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim() != EDGE_TABLE_HEADER {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("expected header `{EDGE_TABLE_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("non-numeric {what}"),
        };
        records.push(EdgeRecord {
            source_layer: LayerId::parse(fields[0]),
            source_code: fields[1].to_string(),
            target_layer: LayerId::parse(fields[2]),
            target_code: fields[3].to_string(),
            b: fields[4].parse().map_err(|_| bad("B"))?,
            p: fields[5].parse().map_err(|_| bad("p"))?,
            significant: fields[6].trim() == "true",
        });
    }
    Ok(records)
}

fn node_id(layer: &LayerId, code: &str) -> String {
    format!("{}:{}", layer.name(), code)
}

/// Degree per node over the given edges (incident count, both directions).
pub fn node_degrees(edges: &[ValidatedEdge]) -> BTreeMap<(LayerId, String), usize> {
    let mut degrees = BTreeMap::new();
    for edge in edges {
        *degrees
            .entry((edge.source_layer.clone(), edge.source_code.clone()))
            .or_insert(0) += 1;
        *degrees
            .entry((edge.target_layer.clone(), edge.target_code.clone()))
            .or_insert(0) += 1;
    }
    degrees
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Render the validated edges in the requested format.
pub fn export_graph(edges: &[ValidatedEdge], format: GraphFormat) -> String {
    match format {
        GraphFormat::EdgeList => {
            let mut out = String::from(EDGE_TABLE_HEADER);
            out.push('\n');
            for e in edges {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},true",
                    e.source_layer.name(),
                    e.source_code,
                    e.target_layer.name(),
                    e.target_code,
                    e.b,
                    e.p
                );
            }
            out
        }
        GraphFormat::GraphMl => {
            let degrees = node_degrees(edges);
            let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
            out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
            out.push_str(
                "  <key id=\"layer\" for=\"node\" attr.name=\"layer\" attr.type=\"string\"/>\n",
            );
            out.push_str(
                "  <key id=\"degree\" for=\"node\" attr.name=\"degree\" attr.type=\"int\"/>\n",
            );
            out.push_str("  <key id=\"b\" for=\"edge\" attr.name=\"b\" attr.type=\"double\"/>\n");
            out.push_str("  <key id=\"p\" for=\"edge\" attr.name=\"p\" attr.type=\"double\"/>\n");
            out.push_str("  <graph id=\"validated\" edgedefault=\"directed\">\n");
            for ((layer, code), degree) in &degrees {
                let _ = writeln!(
                    out,
                    "    <node id=\"{id}\"><data key=\"layer\">{layer}</data><data key=\"degree\">{degree}</data></node>",
                    id = xml_escape(&node_id(layer, code)),
                    layer = xml_escape(layer.name()),
                );
            }
            for e in edges {
                let _ = writeln!(
                    out,
                    "    <edge source=\"{s}\" target=\"{t}\"><data key=\"b\">{b}</data><data key=\"p\">{p}</data></edge>",
                    s = xml_escape(&node_id(&e.source_layer, &e.source_code)),
                    t = xml_escape(&node_id(&e.target_layer, &e.target_code)),
                    b = e.b,
                    p = e.p,
                );
            }
            out.push_str("  </graph>\n</graphml>\n");
            out
        }
        GraphFormat::Dot => {
            let degrees = node_degrees(edges);
            let mut out = String::from("digraph validated {\n");
            for ((layer, code), degree) in &degrees {
                let _ = writeln!(
                    out,
                    "  \"{id}\" [layer=\"{layer}\", degree={degree}];",
                    id = dot_escape(&node_id(layer, code)),
                    layer = dot_escape(layer.name()),
                );
            }
            for e in edges {
                let _ = writeln!(
                    out,
                    "  \"{s}\" -> \"{t}\" [b=\"{b}\", p=\"{p}\"];",
                    s = dot_escape(&node_id(&e.source_layer, &e.source_code)),
                    t = dot_escape(&node_id(&e.target_layer, &e.target_code)),
                    b = e.b,
                    p = e.p,
                );
            }
            out.push_str("}\n");
            out
        }
    }
}
