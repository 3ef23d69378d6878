//! Revealed comparative advantage and binarization.
//!
//! A country reveals an advantage in an activity when the activity's share
//! of the country's basket is at least the activity's share of the world
//! total. Entries with RCA >= 1 (inclusive) become the links of the binary
//! matrix.

use crate::error::{Error, Result};
use crate::layers::ActivityCode;
use crate::matrix::{BinaryMatrix, RawMatrix};

/// Sparse RCA values aligned to the raw matrix indices; cells where the raw
/// weight is zero are zero and absent.
#[derive(Debug, Clone)]
pub struct RcaMatrix {
    entries: Vec<(u32, u32, f64)>,
}

impl RcaMatrix {
    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn get(&self, row: u32, col: u32) -> f64 {
        self.entries
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(row, col)))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }
}

/// RCA of cell (c, a): the weight's share of country c's row divided by
/// activity a's share of the grand total.
pub fn rca_values(raw: &RawMatrix) -> Result<RcaMatrix> {
    let total = raw.total();
    if total <= 0.0 {
        return Err(Error::ZeroTotal);
    }
    let row_sums = raw.row_sums();
    let col_sums = raw.col_sums();
    let entries = raw
        .entries()
        .iter()
        .map(|&(r, c, w)| {
            let country_share = w / row_sums[r as usize];
            let world_share = col_sums[c as usize] / total;
            (r, c, country_share / world_share)
        })
        .collect();
    Ok(RcaMatrix { entries })
}

/// Binarization output along with the rows/columns dropped because they held
/// no revealed advantage (zero-degree nodes degenerate the null model).
#[derive(Debug, Clone)]
pub struct Binarized {
    pub matrix: BinaryMatrix,
    pub dropped_countries: Vec<String>,
    pub dropped_activities: Vec<ActivityCode>,
}

/// Keep cells with RCA >= 1 (the threshold is inclusive) and drop countries
/// and activities that end up with no entry at all.
pub fn binarize(raw: &RawMatrix) -> Result<Binarized> {
    let rca = rca_values(raw)?;
    let mut keep_rows = vec![false; raw.n_rows()];
    let mut keep_cols = vec![false; raw.n_cols()];
    let mut advantaged: Vec<(u32, u32)> = Vec::new();
    for &(r, c, value) in rca.entries() {
        if value >= 1.0 {
            advantaged.push((r, c));
            keep_rows[r as usize] = true;
            keep_cols[c as usize] = true;
        }
    }
    let row_map: Vec<Option<u32>> = renumber(&keep_rows);
    let col_map: Vec<Option<u32>> = renumber(&keep_cols);
    let rows: Vec<String> = raw
        .rows()
        .iter()
        .zip(&keep_rows)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    let cols: Vec<ActivityCode> = raw
        .cols()
        .iter()
        .zip(&keep_cols)
        .filter(|(_, &k)| k)
        .map(|(c, _)| c.clone())
        .collect();
    let entries: Vec<(u32, u32)> = advantaged
        .into_iter()
        .map(|(r, c)| {
            (
                row_map[r as usize].expect("kept row"),
                col_map[c as usize].expect("kept col"),
            )
        })
        .collect();
    let dropped_countries = raw
        .rows()
        .iter()
        .zip(&keep_rows)
        .filter(|(_, &k)| !k)
        .map(|(r, _)| r.clone())
        .collect();
    let dropped_activities = raw
        .cols()
        .iter()
        .zip(&keep_cols)
        .filter(|(_, &k)| !k)
        .map(|(c, _)| c.clone())
        .collect();
    let matrix =
        BinaryMatrix::from_entries(raw.layer().clone(), raw.window(), rows, cols, entries)?;
    Ok(Binarized {
        matrix,
        dropped_countries,
        dropped_activities,
    })
}

fn renumber(keep: &[bool]) -> Vec<Option<u32>> {
    let mut next = 0u32;
    keep.iter()
        .map(|&k| {
            if k {
                let i = next;
                next += 1;
                Some(i)
            } else {
                None
            }
        })
        .collect()
}
