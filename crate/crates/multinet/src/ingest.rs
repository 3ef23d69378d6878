//! Reading raw activity records and building yearly matrices.
//!
//! Two input shapes are supported: a plain weight table
//! (`country,code,year,value`) and multi-attribution records where one unit
//! (a patent family, a paper) maps to several countries and codes at once.
//! Attribution records are fractionally counted: each record spreads one
//! unit of weight evenly over all (country, code) cells it maps to.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{Hierarchy, LayerId};
use crate::matrix::{RawMatrix, TimeWindow};

/// One attributable unit: a thing produced in `year`, attributed to a set of
/// countries and a set of activity codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributionRecord {
    pub unit: String,
    pub countries: Vec<String>,
    pub codes: Vec<String>,
    pub year: i32,
}

/// Machine-readable account of what ingestion accepted and why records or
/// lines were skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub accepted: u64,
    /// Rejected/skipped counts keyed by reason.
    pub skipped: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

impl IngestReport {
    fn skip(&mut self, reason: &str) {
        *self.skipped.entry(reason.to_string()).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: IngestReport) {
        self.accepted += other.accepted;
        for (reason, n) in other.skipped {
            *self.skipped.entry(reason).or_insert(0) += n;
        }
        self.warnings.extend(other.warnings);
    }
}

/// Split one unit of weight per record evenly over all (country, code) cells
/// it maps to: each cell receives 1/(|countries| * |codes|). Returns one
/// matrix per distinct year, sorted by year. Records with an empty country
/// or code set are counted and skipped, never fatal.
pub fn fractional_count<I>(
    records: I,
    layer: &LayerId,
    hierarchy: &Hierarchy,
) -> Result<(Vec<RawMatrix>, IngestReport)>
where
    I: IntoIterator<Item = AttributionRecord>,
{
    let mut report = IngestReport::default();
    let mut by_year: BTreeMap<i32, Vec<(String, String, f64)>> = BTreeMap::new();
    for record in records {
        if record.countries.is_empty() {
            report.skip("empty_country_set");
            continue;
        }
        if record.codes.is_empty() {
            report.skip("empty_code_set");
            continue;
        }
        let share = 1.0 / (record.countries.len() as f64 * record.codes.len() as f64);
        let cells = by_year.entry(record.year).or_default();
        for country in &record.countries {
            for code in &record.codes {
                cells.push((country.clone(), code.clone(), share));
            }
        }
        report.accepted += 1;
    }
    let mut matrices = Vec::with_capacity(by_year.len());
    for (year, cells) in by_year {
        let matrix = RawMatrix::from_cells(
            layer.clone(),
            TimeWindow::year(year),
            cells
                .into_iter()
                .map(|(country, code, v)| Ok((country, hierarchy.activity(&code)?, v)))
                .collect::<Result<Vec<_>>>()?,
        )?;
        matrices.push(matrix);
    }
    Ok((matrices, report))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub const TABLE_HEADER: &str = "country,code,year,value";

/// Load a `country,code,year,value` table into one matrix per distinct year,
/// sorted by year. Structural problems (missing header, wrong field count,
/// non-numeric or negative values) are fatal and carry the line number;
/// zero-valued lines are skipped with a counted warning.
pub fn load_table(
    path: &Path,
    layer: &LayerId,
    hierarchy: &Hierarchy,
) -> Result<(Vec<RawMatrix>, IngestReport)> {
    let file = File::open(path)?;
    load_table_from(BufReader::new(file), path, layer, hierarchy)
}

pub fn load_table_from<R: Read>(
    reader: BufReader<R>,
    path: &Path,
    layer: &LayerId,
    hierarchy: &Hierarchy,
) -> Result<(Vec<RawMatrix>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            report.warnings.push(format!(
                "{}: empty file, no matrices loaded",
                path.display()
            ));
            return Ok((Vec::new(), report));
        }
    };
    if header.trim() != TABLE_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("missing or malformed header (expected `{TABLE_HEADER}`)"),
        ));
    }
    let mut by_year: BTreeMap<i32, Vec<(String, String, f64)>> = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let country = fields[0].trim();
        let code = fields[1].trim();
        if country.is_empty() || code.is_empty() {
            return Err(parse_err(path, line_no, "empty country or code"));
        }
        let year: i32 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("non-numeric year `{}`", fields[2])))?;
        let value: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("non-numeric value `{}`", fields[3])))?;
        if !value.is_finite() || value < 0.0 {
            return Err(parse_err(
                path,
                line_no,
                format!("negative or non-finite value `{value}`"),
            ));
        }
        if value == 0.0 {
            report.skip("zero_value");
            continue;
        }
        report.accepted += 1;
        by_year
            .entry(year)
            .or_default()
            .push((country.to_string(), code.to_string(), value));
    }
    if by_year.is_empty() {
        report
            .warnings
            .push(format!("{}: no positive entries found", path.display()));
    }
    let mut matrices = Vec::with_capacity(by_year.len());
    for (year, cells) in by_year {
        let matrix = RawMatrix::from_cells(
            layer.clone(),
            TimeWindow::year(year),
            cells
                .into_iter()
                .map(|(country, code, v)| Ok((country, hierarchy.activity(&code)?, v)))
                .collect::<Result<Vec<_>>>()?,
        )?;
        matrices.push(matrix);
    }
    Ok((matrices, report))
}

pub const ATTRIBUTION_HEADER: &str = "unit,countries,codes,year";

/// Load attribution records from a `unit,countries,codes,year` table where
/// the country and code fields hold `;`-separated sets.
pub fn load_attribution_table(path: &Path) -> Result<Vec<AttributionRecord>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Ok(records),
    };
    if header.trim() != ATTRIBUTION_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("missing or malformed header (expected `{ATTRIBUTION_HEADER}`)"),
        ));
    }
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let split_set = |s: &str| -> Vec<String> {
            s.split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        };
        let year: i32 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("non-numeric year `{}`", fields[3])))?;
        records.push(AttributionRecord {
            unit: fields[0].trim().to_string(),
            countries: split_set(fields[1]),
            codes: split_set(fields[2]),
            year,
        });
    }
    Ok(records)
}
