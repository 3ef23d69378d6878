//! Cross-layer assist matrices.
//!
//! `B[a1][a2]` is the probability that a bit of information sitting on
//! activity `a1` of the source layer reaches activity `a2` of the target
//! layer through a two-step jump: first to one of the countries advantaged
//! in `a1` (uniformly, 1/u of the ubiquity), then from that country to one
//! of its advantaged target activities (uniformly, 1/d of its target-layer
//! diversification). Countries with no target-layer advantage contribute
//! nothing and leave their rows sub-stochastic.

use crate::error::{Error, Result};
use crate::layers::{ActivityCode, Hierarchy, LayerId};
use crate::matrix::{BinaryMatrix, Pooling, TimeWindow, STACK_SEPARATOR};
use crate::store::MatrixStore;

/// Dense assist values over the full source x target activity grid.
///
/// `defined_rows[a1]` is false when `a1` has zero ubiquity on the shared
/// country set, leaving its row undefined (all zeros here).
#[derive(Debug, Clone)]
pub struct AssistValues {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
    pub defined_rows: Vec<bool>,
    /// Rows touched by a country with zero target-layer diversification sum
    /// to less than one.
    pub sub_stochastic_rows: Vec<bool>,
}

impl AssistValues {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }
}

/// Contract two binary matrices over their (already aligned) country rows.
///
/// The accumulation order matches the defining sum: for each (a1, a2) the
/// per-country terms 1/d are added in ascending country order, then the row
/// is divided by its ubiquity.
pub fn assist_values(m1: &BinaryMatrix, m2: &BinaryMatrix) -> AssistValues {
    assert_eq!(
        m1.n_rows(),
        m2.n_rows(),
        "assist_values requires aligned country rows"
    );
    let n1 = m1.n_cols();
    let n2 = m2.n_cols();
    let mut values = vec![0.0f64; n1 * n2];
    let mut sub_stochastic = vec![false; n1];
    for country in 0..m1.n_rows() as u32 {
        let d2 = m2.row_degree(country);
        if d2 == 0 {
            for a1 in m1.row_cols(country) {
                sub_stochastic[a1 as usize] = true;
            }
            continue;
        }
        let share = 1.0 / f64::from(d2);
        for a1 in m1.row_cols(country) {
            let base = a1 as usize * n2;
            for a2 in m2.row_cols(country) {
                values[base + a2 as usize] += share;
            }
        }
    }
    let mut defined_rows = vec![false; n1];
    for a1 in 0..n1 {
        let u1 = m1.col_degree(a1 as u32);
        if u1 == 0 {
            continue;
        }
        defined_rows[a1] = true;
        let inv_u = f64::from(u1);
        for v in &mut values[a1 * n2..(a1 + 1) * n2] {
            *v /= inv_u;
        }
    }
    AssistValues {
        n_rows: n1,
        n_cols: n2,
        values,
        defined_rows,
        sub_stochastic_rows: sub_stochastic,
    }
}

/// An assist matrix between two layers and windows. Rows are the source
/// activities with positive ubiquity on the shared country set; columns are
/// all target activities.
#[derive(Debug, Clone)]
pub struct AssistMatrix {
    pub source_layer: LayerId,
    pub source_window: TimeWindow,
    pub target_layer: LayerId,
    pub target_window: TimeWindow,
    rows: Vec<ActivityCode>,
    cols: Vec<ActivityCode>,
    values: Vec<f64>,
    /// Ubiquity of each source row on the shared country set.
    row_ubiquity: Vec<u32>,
    /// Ubiquity of each target column on the shared country set; zero means
    /// the link column is untestable.
    col_ubiquity: Vec<u32>,
    omitted_rows: Vec<ActivityCode>,
    sub_stochastic_rows: Vec<ActivityCode>,
    dropped_countries: Vec<String>,
}

impl AssistMatrix {
    pub fn rows(&self) -> &[ActivityCode] {
        &self.rows
    }

    pub fn cols(&self) -> &[ActivityCode] {
        &self.cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols.len() + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_ubiquity(&self) -> &[u32] {
        &self.row_ubiquity
    }

    pub fn col_ubiquity(&self) -> &[u32] {
        &self.col_ubiquity
    }

    /// Source rows with zero ubiquity on the shared country set, omitted
    /// from the value grid.
    pub fn omitted_rows(&self) -> &[ActivityCode] {
        &self.omitted_rows
    }

    pub fn sub_stochastic_rows(&self) -> &[ActivityCode] {
        &self.sub_stochastic_rows
    }

    pub fn dropped_countries(&self) -> &[String] {
        &self.dropped_countries
    }

    /// Lag in years between the two window starts.
    pub fn lag(&self) -> i32 {
        self.target_window.start_year - self.source_window.start_year
    }

    /// A link is testable when both its source row and target column have
    /// positive ubiquity on the shared country set.
    pub fn testable(&self, _row: usize, col: usize) -> bool {
        self.col_ubiquity[col] > 0
    }
}

/// Contract two binary matrices with identical aligned country rows into an
/// assist matrix. Rows with zero ubiquity are omitted and reported.
pub fn assist(m1: &BinaryMatrix, m2: &BinaryMatrix) -> Result<AssistMatrix> {
    check_aligned(m1, m2)?;
    let dense = assist_values(m1, m2);
    let mut rows = Vec::new();
    let mut row_ubiquity = Vec::new();
    let mut values = Vec::with_capacity(dense.values.len());
    let mut omitted = Vec::new();
    let mut sub_stochastic = Vec::new();
    for (a1, code) in m1.cols().iter().enumerate() {
        if dense.defined_rows[a1] {
            rows.push(code.clone());
            row_ubiquity.push(m1.col_degree(a1 as u32));
            values.extend_from_slice(&dense.values[a1 * dense.n_cols..(a1 + 1) * dense.n_cols]);
            if dense.sub_stochastic_rows[a1] {
                sub_stochastic.push(code.clone());
            }
        } else {
            omitted.push(code.clone());
        }
    }
    Ok(AssistMatrix {
        source_layer: m1.layer().clone(),
        source_window: m1.window(),
        target_layer: m2.layer().clone(),
        target_window: m2.window(),
        rows,
        cols: m2.cols().to_vec(),
        values,
        row_ubiquity,
        col_ubiquity: m2.col_degrees().to_vec(),
        omitted_rows: omitted,
        sub_stochastic_rows: sub_stochastic,
        dropped_countries: Vec::new(),
    })
}

fn check_aligned(m1: &BinaryMatrix, m2: &BinaryMatrix) -> Result<()> {
    if m1.n_rows() == 0 {
        return Err(Error::EmptyCountryIntersection);
    }
    if m1.n_rows() != m2.n_rows() {
        return Err(Error::InvalidInput(format!(
            "country rows are not aligned: {} vs {}",
            m1.n_rows(),
            m2.n_rows()
        )));
    }
    let stacked = m1.window().pooling == Pooling::Stack && m1.window().span > 1;
    if !stacked && m1.rows() != m2.rows() {
        return Err(Error::InvalidInput(
            "country rows are not aligned: identifiers differ".into(),
        ));
    }
    Ok(())
}

/// Restrict both matrices to their shared countries, in the (sorted) order
/// they appear in `m1`. Stacked windows of equal span align by
/// (country, relative year offset); plain windows align by identifier.
/// Returns the aligned matrices and the dropped identifiers of both sides.
pub fn align_countries(
    m1: &BinaryMatrix,
    m2: &BinaryMatrix,
) -> Result<(BinaryMatrix, BinaryMatrix, Vec<String>)> {
    let stacked1 = m1.window().pooling == Pooling::Stack && m1.window().span > 1;
    let stacked2 = m2.window().pooling == Pooling::Stack && m2.window().span > 1;
    if stacked1 != stacked2 {
        return Err(Error::InvalidInput(
            "cannot align a stacked window with an unstacked one".into(),
        ));
    }
    if stacked1 && m1.window().span != m2.window().span {
        return Err(Error::InvalidInput(
            "stacked windows must have identical spans to align".into(),
        ));
    }
    // map m1 row id -> m2 row id
    let counterpart = |id: &str| -> Option<String> {
        if !stacked1 {
            return Some(id.to_string());
        }
        let (country, year) = id.rsplit_once(STACK_SEPARATOR)?;
        let year: i32 = year.parse().ok()?;
        let offset = year - m1.window().start_year;
        Some(format!(
            "{country}{STACK_SEPARATOR}{}",
            m2.window().start_year + offset
        ))
    };
    let mut keep1 = Vec::new();
    let mut keep2 = Vec::new();
    let mut matched2 = vec![false; m2.n_rows()];
    for (i, id) in m1.rows().iter().enumerate() {
        let Some(other) = counterpart(id) else {
            continue;
        };
        if let Ok(j) = m2.rows().binary_search(&other) {
            keep1.push(i as u32);
            keep2.push(j as u32);
            matched2[j] = true;
        }
    }
    if keep1.is_empty() {
        return Err(Error::EmptyCountryIntersection);
    }
    let mut dropped: Vec<String> = m1
        .rows()
        .iter()
        .enumerate()
        .filter(|(i, _)| !keep1.contains(&(*i as u32)))
        .map(|(_, id)| id.clone())
        .collect();
    dropped.extend(
        m2.rows()
            .iter()
            .zip(&matched2)
            .filter(|(_, &m)| !m)
            .map(|(id, _)| id.clone()),
    );
    dropped.sort_unstable();
    dropped.dedup();
    Ok((
        m1.restrict_rows(&keep1)?,
        m2.restrict_rows(&keep2)?,
        dropped,
    ))
}

/// What a lagged layer-pair analysis works on: the aligned binary matrices
/// and the observed assist matrix between them.
#[derive(Debug, Clone)]
pub struct LaggedPair {
    pub source: BinaryMatrix,
    pub target: BinaryMatrix,
    pub observed: AssistMatrix,
}

/// One side of a lagged analysis: which layer, window and aggregation level
/// to load from the store.
#[derive(Debug, Clone)]
pub struct MatrixSpec {
    pub layer: LayerId,
    pub window: TimeWindow,
    pub level: u32,
}

impl MatrixSpec {
    pub fn label(&self) -> String {
        format!(
            "{}:{}:{}",
            self.layer.name(),
            self.window.label(),
            self.level
        )
    }
}

/// Load both sides from the store, binarize, align countries by
/// intersection, and contract. The assist metadata records the dropped
/// countries and the lag `y2 - y1`.
pub fn assist_lagged(
    store: &MatrixStore,
    source: &MatrixSpec,
    target: &MatrixSpec,
    hierarchy1: &Hierarchy,
    hierarchy2: &Hierarchy,
) -> Result<LaggedPair> {
    let raw1 = store.load_window(&source.layer, source.window, hierarchy1, source.level)?;
    let raw2 = store.load_window(&target.layer, target.window, hierarchy2, target.level)?;
    let b1 = crate::rca::binarize(&raw1)?;
    let b2 = crate::rca::binarize(&raw2)?;
    let (m1, m2, dropped) = align_countries(&b1.matrix, &b2.matrix)?;
    let mut observed = assist(&m1, &m2)?;
    observed.dropped_countries = dropped;
    Ok(LaggedPair {
        source: m1,
        target: m2,
        observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerId;
    use crate::rng::stream_rng;
    use rand::Rng;

    pub(crate) fn binary(
        layer: LayerId,
        year: i32,
        rows: &[&str],
        n_cols: usize,
        cells: &[(u32, u32)],
    ) -> BinaryMatrix {
        BinaryMatrix::from_entries(
            layer,
            TimeWindow::year(year),
            rows.iter().map(|s| s.to_string()).collect(),
            (0..n_cols)
                .map(|c| ActivityCode::new(format!("a{c:02}"), 0))
                .collect(),
            cells.to_vec(),
        )
        .unwrap()
    }

    /// Literal evaluation of the defining sum, kept independent of the
    /// implementation path.
    pub(crate) fn triple_loop(m1: &BinaryMatrix, m2: &BinaryMatrix) -> Vec<Vec<f64>> {
        let n1 = m1.n_cols();
        let n2 = m2.n_cols();
        let mut b = vec![vec![0.0; n2]; n1];
        for a1 in 0..n1 as u32 {
            let u1 = m1.col_degree(a1);
            if u1 == 0 {
                continue;
            }
            for a2 in 0..n2 as u32 {
                let mut s = 0.0f64;
                for c in 0..m1.n_rows() as u32 {
                    if m1.contains(c, a1) && m2.contains(c, a2) {
                        s += 1.0 / f64::from(m2.row_degree(c));
                    }
                }
                b[a1 as usize][a2 as usize] = s / f64::from(u1);
            }
        }
        b
    }

    #[test]
    fn identity_matrices_give_identity_assist() {
        let m = binary(LayerId::Science, 2000, &["x", "y"], 2, &[(0, 0), (1, 1)]);
        let b = assist(&m, &m).unwrap();
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(0, 1), 0.0);
        assert_eq!(b.get(1, 0), 0.0);
        assert_eq!(b.get(1, 1), 1.0);
    }

    #[test]
    fn complete_matrices_spread_uniformly() {
        let m1 = binary(
            LayerId::Science,
            2000,
            &["x", "y"],
            2,
            &[(0, 0), (0, 1), (1, 0), (1, 1)],
        );
        let m2 = binary(
            LayerId::Technology,
            2000,
            &["x", "y"],
            3,
            &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)],
        );
        let b = assist(&m1, &m2).unwrap();
        for row in 0..2 {
            for col in 0..3 {
                assert!((b.get(row, col) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    fn random_binary(
        seed: u64,
        layer: LayerId,
        rows: &[&str],
        n_cols: usize,
        p: f64,
    ) -> BinaryMatrix {
        let mut rng = stream_rng(seed, 0);
        let mut cells = Vec::new();
        for r in 0..rows.len() as u32 {
            for c in 0..n_cols as u32 {
                if rng.random::<f64>() < p {
                    cells.push((r, c));
                }
            }
        }
        binary(layer, 2000, rows, n_cols, &cells)
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn matches_triple_loop_oracle_exactly() {
        let rows: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let row_refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        for seed in 0..20u64 {
            let m1 = random_binary(seed * 2 + 1, LayerId::Science, &row_refs, 15, 0.35);
            let m2 = random_binary(seed * 2 + 2, LayerId::Products, &row_refs, 12, 0.3);
            let got = assist_values(&m1, &m2);
            let want = triple_loop(&m1, &m2);
            for a1 in 0..15 {
                for a2 in 0..12 {
                    let diff = (got.get(a1, a2) - want[a1][a2]).abs();
                    assert!(diff <= 1e-15, "seed {seed} ({a1},{a2}): diff {diff}");
                }
            }
        }
    }

    #[test]
    fn rows_are_stochastic_when_all_supporters_diversified() {
        let rows: Vec<String> = (0..12).map(|i| format!("c{i}")).collect();
        let row_refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        for seed in 100..110u64 {
            let m1 = random_binary(seed, LayerId::Science, &row_refs, 9, 0.4);
            // dense target side so every country has d2 > 0
            let m2 = random_binary(seed + 1000, LayerId::Products, &row_refs, 7, 0.9);
            if m2.row_degrees().contains(&0) {
                continue;
            }
            let b = assist(&m1, &m2).unwrap();
            assert!(b.sub_stochastic_rows().is_empty());
            for row in 0..b.n_rows() {
                let sum: f64 = (0..b.n_cols()).map(|col| b.get(row, col)).sum();
                assert!((sum - 1.0).abs() <= 1e-12, "row {row} sums to {sum}");
            }
        }
    }

    #[test]
    fn countries_without_target_diversification_contribute_zero() {
        // c1 holds a1 but has no target-layer advantage at all
        let m1 = binary(LayerId::Science, 2000, &["c0", "c1"], 1, &[(0, 0), (1, 0)]);
        let m2 = binary(LayerId::Products, 2000, &["c0", "c1"], 2, &[(0, 0), (0, 1)]);
        let b = assist(&m1, &m2).unwrap();
        // u(a1)=2 but only c0 contributes: row sums to 1/2 * (1/2 + 1/2) ... = 1/2
        let sum: f64 = (0..2).map(|col| b.get(0, col)).sum();
        assert!((sum - 0.5).abs() < 1e-15);
        assert_eq!(b.sub_stochastic_rows().len(), 1);
    }

    #[test]
    fn permutation_equivariance() {
        let rows = ["c0", "c1", "c2", "c3"];
        let cells1 = [(0, 0), (0, 2), (1, 1), (2, 0), (3, 2)];
        let cells2 = [(0, 1), (1, 0), (2, 2), (3, 1), (3, 0)];
        let m1 = binary(LayerId::Science, 2000, &rows, 3, &cells1);
        let m2 = binary(LayerId::Products, 2000, &rows, 3, &cells2);
        let b = assist(&m1, &m2).unwrap();

        // permute countries the same way on both sides: B unchanged
        let perm = [2u32, 0, 3, 1];
        let perm_rows: Vec<&str> = perm.iter().map(|&i| rows[i as usize]).collect();
        let remap = |cells: &[(u32, u32)]| -> Vec<(u32, u32)> {
            cells
                .iter()
                .map(|&(r, c)| (perm.iter().position(|&p| p == r).unwrap() as u32, c))
                .collect()
        };
        let m1p = binary(LayerId::Science, 2000, &perm_rows, 3, &remap(&cells1));
        let m2p = binary(LayerId::Products, 2000, &perm_rows, 3, &remap(&cells2));
        let bp = assist_values(&m1p, &m2p);
        for a1 in 0..3 {
            for a2 in 0..3 {
                assert!((b.get(a1, a2) - bp.get(a1, a2)).abs() < 1e-15);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn composition_of_transition_factors_matches() {
        // independent route: build the two transition-probability factors and
        // compose them by matrix multiplication
        let rows: Vec<String> = (0..9).map(|i| format!("c{i}")).collect();
        let row_refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let m1 = random_binary(31, LayerId::Science, &row_refs, 6, 0.45);
        let m2 = random_binary(32, LayerId::Products, &row_refs, 5, 0.5);
        let n_c = rows.len();
        let mut from_activity = vec![vec![0.0f64; n_c]; 6]; // a1 -> country
        for a1 in 0..6u32 {
            let u = m1.col_degree(a1);
            if u == 0 {
                continue;
            }
            for c in 0..n_c as u32 {
                if m1.contains(c, a1) {
                    from_activity[a1 as usize][c as usize] = 1.0 / f64::from(u);
                }
            }
        }
        let mut to_activity = vec![vec![0.0f64; 5]; n_c]; // country -> a2
        for c in 0..n_c as u32 {
            let d = m2.row_degree(c);
            if d == 0 {
                continue;
            }
            for a2 in 0..5u32 {
                if m2.contains(c, a2) {
                    to_activity[c as usize][a2 as usize] = 1.0 / f64::from(d);
                }
            }
        }
        let got = assist_values(&m1, &m2);
        for a1 in 0..6 {
            for a2 in 0..5 {
                let composed: f64 = (0..n_c)
                    .map(|c| from_activity[a1][c] * to_activity[c][a2])
                    .sum();
                assert!((got.get(a1, a2) - composed).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alignment_intersects_and_reports_dropped() {
        let m1 = binary(
            LayerId::Science,
            2000,
            &["a", "b", "c"],
            2,
            &[(0, 0), (1, 1), (2, 0)],
        );
        let m2 = binary(
            LayerId::Products,
            2002,
            &["b", "c", "d"],
            2,
            &[(0, 0), (1, 1), (2, 0)],
        );
        let (a1, a2, dropped) = align_countries(&m1, &m2).unwrap();
        assert_eq!(a1.rows(), &["b".to_string(), "c".to_string()]);
        assert_eq!(a2.rows(), &["b".to_string(), "c".to_string()]);
        assert_eq!(dropped, vec!["a".to_string(), "d".to_string()]);
        // ubiquities recomputed on the shared set
        assert_eq!(a1.col_degree(0), 1);
    }

    #[test]
    fn disjoint_country_sets_error() {
        let m1 = binary(LayerId::Science, 2000, &["a"], 1, &[(0, 0)]);
        let m2 = binary(LayerId::Products, 2000, &["z"], 1, &[(0, 0)]);
        assert!(matches!(
            align_countries(&m1, &m2),
            Err(Error::EmptyCountryIntersection)
        ));
    }

    #[test]
    fn stacked_windows_align_by_relative_offset() {
        let w1 = TimeWindow::new(2000, 2, Pooling::Stack).unwrap();
        let w2 = TimeWindow::new(2003, 2, Pooling::Stack).unwrap();
        let code = |c: usize| ActivityCode::new(format!("a{c}"), 0);
        let m1 = BinaryMatrix::from_entries(
            LayerId::Science,
            w1,
            vec!["ita@2000".into(), "ita@2001".into(), "usa@2000".into()],
            vec![code(0), code(1)],
            vec![(0, 0), (1, 1), (2, 0)],
        )
        .unwrap();
        let m2 = BinaryMatrix::from_entries(
            LayerId::Products,
            w2,
            vec!["ita@2003".into(), "usa@2004".into()],
            vec![code(0), code(1)],
            vec![(0, 1), (1, 0)],
        )
        .unwrap();
        let (a1, a2, _) = align_countries(&m1, &m2).unwrap();
        // ita@2000 <-> ita@2003 matches; ita@2001 <-> ita@2004 missing;
        // usa@2000 <-> usa@2003 missing
        assert_eq!(a1.rows(), &["ita@2000".to_string()]);
        assert_eq!(a2.rows(), &["ita@2003".to_string()]);
    }
}
