//! Sparse country-activity matrices and time windows.
//!
//! `RawMatrix` holds strictly positive weights; `BinaryMatrix` holds the set
//! of revealed advantages with cached degrees. Both intern countries and
//! codes to dense indices and keep rows, columns and entries in a canonical
//! sorted order, so every downstream computation is reproducible
//! bit-for-bit regardless of input order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ActivityCode, Hierarchy, LayerId};

/// How consecutive years are combined into one observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Element-wise sum of the yearly matrices.
    Sum,
    /// Each (country, year) pair becomes a distinct row.
    Stack,
}

impl Pooling {
    pub fn parse(s: &str) -> Result<Pooling> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Pooling::Sum),
            "stack" => Ok(Pooling::Stack),
            other => Err(Error::InvalidInput(format!(
                "unknown pooling mode `{other}` (expected sum|stack)"
            ))),
        }
    }
}

/// A window of one or more pooled years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_year: i32,
    pub span: u32,
    pub pooling: Pooling,
}

impl TimeWindow {
    pub fn year(year: i32) -> TimeWindow {
        TimeWindow {
            start_year: year,
            span: 1,
            pooling: Pooling::Sum,
        }
    }

    pub fn new(start_year: i32, span: u32, pooling: Pooling) -> Result<TimeWindow> {
        if span == 0 {
            return Err(Error::InvalidInput("window span must be at least 1".into()));
        }
        Ok(TimeWindow {
            start_year,
            span,
            pooling,
        })
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.start_year..self.start_year + self.span as i32
    }

    pub fn end_year(&self) -> i32 {
        self.start_year + self.span as i32 - 1
    }

    pub fn label(&self) -> String {
        if self.span == 1 {
            format!("{}", self.start_year)
        } else {
            let mode = match self.pooling {
                Pooling::Sum => "sum",
                Pooling::Stack => "stack",
            };
            format!("{}-{}({})", self.start_year, self.end_year(), mode)
        }
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Separator between country id and sub-year in stacked row identifiers.
pub const STACK_SEPARATOR: char = '@';

/// Sparse non-negative weights for one layer and window. Zeros are absent;
/// stored values are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    layer: LayerId,
    window: TimeWindow,
    rows: Vec<String>,
    cols: Vec<ActivityCode>,
    /// Sorted by (row, col); values > 0.
    entries: Vec<(u32, u32, f64)>,
}

impl RawMatrix {
    /// Build from (country, code, weight) cells. Duplicate cells accumulate;
    /// non-positive weights are rejected. Rows and columns come out sorted.
    pub fn from_cells<I>(layer: LayerId, window: TimeWindow, cells: I) -> Result<RawMatrix>
    where
        I: IntoIterator<Item = (String, ActivityCode, f64)>,
    {
        let mut acc: BTreeMap<(String, ActivityCode), f64> = BTreeMap::new();
        for (country, code, value) in cells {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "weight for ({country}, {code}) must be a non-negative finite number, got {value}"
                )));
            }
            if value == 0.0 {
                continue;
            }
            *acc.entry((country, code)).or_insert(0.0) += value;
        }
        let rows: Vec<String> = acc
            .keys()
            .map(|(c, _)| c.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let cols: Vec<ActivityCode> = acc
            .keys()
            .map(|(_, a)| a.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let row_index: BTreeMap<&String, u32> = rows.iter().zip(0u32..).collect();
        let col_index: BTreeMap<&ActivityCode, u32> = cols.iter().zip(0u32..).collect();
        let mut entries: Vec<(u32, u32, f64)> = acc
            .iter()
            .map(|((c, a), &v)| (row_index[c], col_index[a], v))
            .collect();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        Ok(RawMatrix {
            layer,
            window,
            rows,
            cols,
            entries,
        })
    }

    pub fn layer(&self) -> &LayerId {
        &self.layer
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[ActivityCode] {
        &self.cols
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn get(&self, row: u32, col: u32) -> f64 {
        self.entries
            .binary_search_by_key(&(row, col), |&(r, c, _)| (r, c))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, _, v)| v).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.rows.len()];
        for &(r, _, v) in &self.entries {
            sums[r as usize] += v;
        }
        sums
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols.len()];
        for &(_, c, v) in &self.entries {
            sums[c as usize] += v;
        }
        sums
    }

    /// Coarsen all columns to `target_level`, merging columns that share a
    /// truncated code and summing their weights. Total mass is conserved.
    pub fn aggregate(&self, hierarchy: &Hierarchy, target_level: u32) -> Result<RawMatrix> {
        let mut truncated: Vec<ActivityCode> = Vec::with_capacity(self.cols.len());
        for code in &self.cols {
            if code.level < target_level {
                return Err(Error::UnknownCode {
                    code: code.code.clone(),
                    level: target_level,
                });
            }
            truncated.push(ActivityCode::new(
                hierarchy.truncate(&code.code, target_level)?,
                target_level,
            ));
        }
        let cells = self.entries.iter().map(|&(r, c, v)| {
            (
                self.rows[r as usize].clone(),
                truncated[c as usize].clone(),
                v,
            )
        });
        // every row keeps at least one positive entry, so the row set survives
        RawMatrix::from_cells(self.layer.clone(), self.window, cells)
    }
}

/// Pool consecutive single-year matrices into one window.
pub fn pool(inputs: &[RawMatrix], pooling: Pooling) -> Result<RawMatrix> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("pool needs at least one matrix".into()));
    }
    let layer = inputs[0].layer().clone();
    for m in inputs {
        if *m.layer() != layer {
            return Err(Error::LayerMismatch {
                expected: layer.name().to_string(),
                found: m.layer().name().to_string(),
            });
        }
        if m.window().span != 1 {
            return Err(Error::InvalidInput(
                "pool inputs must be single-year matrices".into(),
            ));
        }
    }
    let years: Vec<i32> = inputs.iter().map(|m| m.window().start_year).collect();
    if years.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::NonConsecutiveYears { years });
    }
    let window = TimeWindow {
        start_year: years[0],
        span: inputs.len() as u32,
        pooling,
    };
    let cells = inputs.iter().flat_map(|m| {
        let year = m.window().start_year;
        m.entries().iter().map(move |&(r, c, v)| {
            let country = &m.rows()[r as usize];
            let row_id = match pooling {
                Pooling::Sum => country.clone(),
                Pooling::Stack => format!("{country}{STACK_SEPARATOR}{year}"),
            };
            (row_id, m.cols()[c as usize].clone(), v)
        })
    });
    RawMatrix::from_cells(layer, window, cells)
}

/// Revealed-advantage entries for one layer and window, with cached degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMatrix {
    layer: LayerId,
    window: TimeWindow,
    rows: Vec<String>,
    cols: Vec<ActivityCode>,
    /// Sorted row-major.
    entries: Vec<(u32, u32)>,
    /// CSR offsets: row r's entries live in entries[row_start[r]..row_start[r+1]].
    row_start: Vec<usize>,
    row_degrees: Vec<u32>,
    col_degrees: Vec<u32>,
}

impl BinaryMatrix {
    pub fn from_entries(
        layer: LayerId,
        window: TimeWindow,
        rows: Vec<String>,
        cols: Vec<ActivityCode>,
        mut entries: Vec<(u32, u32)>,
    ) -> Result<BinaryMatrix> {
        entries.sort_unstable();
        entries.dedup();
        if let Some(&(r, c)) = entries
            .iter()
            .find(|&&(r, c)| r as usize >= rows.len() || c as usize >= cols.len())
        {
            return Err(Error::InvalidInput(format!(
                "entry ({r}, {c}) out of range for {}x{} matrix",
                rows.len(),
                cols.len()
            )));
        }
        let mut row_degrees = vec![0u32; rows.len()];
        let mut col_degrees = vec![0u32; cols.len()];
        for &(r, c) in &entries {
            row_degrees[r as usize] += 1;
            col_degrees[c as usize] += 1;
        }
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        row_start.push(0);
        let mut offset = 0usize;
        for &d in &row_degrees {
            offset += d as usize;
            row_start.push(offset);
        }
        Ok(BinaryMatrix {
            layer,
            window,
            rows,
            cols,
            entries,
            row_start,
            row_degrees,
            col_degrees,
        })
    }

    pub fn layer(&self) -> &LayerId {
        &self.layer
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[ActivityCode] {
        &self.cols
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn n_edges(&self) -> usize {
        self.entries.len()
    }

    /// Diversification of country `r`: entries in its row.
    pub fn row_degree(&self, r: u32) -> u32 {
        self.row_degrees[r as usize]
    }

    /// Ubiquity of activity `c`: entries in its column.
    pub fn col_degree(&self, c: u32) -> u32 {
        self.col_degrees[c as usize]
    }

    pub fn row_degrees(&self) -> &[u32] {
        &self.row_degrees
    }

    pub fn col_degrees(&self) -> &[u32] {
        &self.col_degrees
    }

    /// Column indices present in row `r`, ascending.
    pub fn row_cols(&self, r: u32) -> impl Iterator<Item = u32> + '_ {
        self.entries[self.row_start[r as usize]..self.row_start[r as usize + 1]]
            .iter()
            .map(|&(_, c)| c)
    }

    pub fn contains(&self, r: u32, c: u32) -> bool {
        self.entries.binary_search(&(r, c)).is_ok()
    }

    /// Keep only the rows listed in `keep` (by index), in the given order.
    /// Column set is unchanged; degrees are recomputed.
    pub fn restrict_rows(&self, keep: &[u32]) -> Result<BinaryMatrix> {
        let rows: Vec<String> = keep
            .iter()
            .map(|&r| self.rows[r as usize].clone())
            .collect();
        let mut entries = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            for c in self.row_cols(old_r) {
                entries.push((new_r as u32, c));
            }
        }
        BinaryMatrix::from_entries(
            self.layer.clone(),
            self.window,
            rows,
            self.cols.clone(),
            entries,
        )
    }

    /// Cached degrees must equal recomputed degrees; total degree on each
    /// side equals the entry count.
    pub fn degrees_consistent(&self) -> bool {
        let mut rd = vec![0u32; self.rows.len()];
        let mut cd = vec![0u32; self.cols.len()];
        for &(r, c) in &self.entries {
            rd[r as usize] += 1;
            cd[c as usize] += 1;
        }
        let total: u32 = rd.iter().sum();
        rd == self.row_degrees
            && cd == self.col_degrees
            && total as usize == self.entries.len()
            && self.col_degrees.iter().sum::<u32>() as usize == self.entries.len()
    }
}
