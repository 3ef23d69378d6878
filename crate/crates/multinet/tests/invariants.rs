//! Property tests for the structural invariants of the core types.

use proptest::prelude::*;

use multinet::layers::{ActivityCode, Hierarchy, LayerId};
use multinet::matrix::{pool, Pooling, RawMatrix, TimeWindow};
use multinet::rca::{binarize, rca_values};

fn cells_strategy() -> impl Strategy<Value = Vec<(u8, u8, f64)>> {
    proptest::collection::vec((0u8..10, 0u8..12, 0.01f64..100.0), 1..60)
}

fn build(cells: &[(u8, u8, f64)], year: i32) -> RawMatrix {
    RawMatrix::from_cells(
        LayerId::Products,
        TimeWindow::year(year),
        cells.iter().map(|&(r, c, v)| {
            (
                format!("c{r:02}"),
                // three-character codes over a [1, 2, 3] prefix hierarchy
                ActivityCode::new(format!("{}{}{}", c % 4, c % 3, c % 10), 2),
                v,
            )
        }),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn aggregation_conserves_mass_and_rows(cells in cells_strategy(), level in 0u32..3) {
        let h = Hierarchy::prefix(vec![1, 2, 3]).unwrap();
        let m = build(&cells, 2000);
        let agg = m.aggregate(&h, level).unwrap();
        prop_assert!((m.total() - agg.total()).abs() < 1e-9);
        prop_assert_eq!(m.rows(), agg.rows());
    }

    #[test]
    fn truncation_is_monotone_through_intermediate_levels(cells in cells_strategy()) {
        let h = Hierarchy::prefix(vec![1, 2, 3]).unwrap();
        let m = build(&cells, 2000);
        let direct = m.aggregate(&h, 0).unwrap();
        let via = m.aggregate(&h, 1).unwrap().aggregate(&h, 0).unwrap();
        prop_assert_eq!(direct.cols(), via.cols());
        for (a, b) in direct.entries().iter().zip(via.entries()) {
            prop_assert_eq!(a.0, b.0);
            prop_assert_eq!(a.1, b.1);
            prop_assert!((a.2 - b.2).abs() < 1e-9);
        }
    }

    #[test]
    fn sum_pooling_conserves_mass(cells1 in cells_strategy(), cells2 in cells_strategy()) {
        let m1 = build(&cells1, 2000);
        let m2 = build(&cells2, 2001);
        let pooled = pool(&[m1.clone(), m2.clone()], Pooling::Sum).unwrap();
        prop_assert!((pooled.total() - m1.total() - m2.total()).abs() < 1e-9);
        let stacked = pool(&[m1.clone(), m2.clone()], Pooling::Stack).unwrap();
        prop_assert_eq!(stacked.n_rows(), m1.n_rows() + m2.n_rows());
    }

    #[test]
    fn binarized_degrees_are_consistent(cells in cells_strategy()) {
        let m = build(&cells, 2000);
        let b = binarize(&m).unwrap();
        prop_assert!(b.matrix.degrees_consistent());
        let d: u32 = b.matrix.row_degrees().iter().sum();
        let u: u32 = b.matrix.col_degrees().iter().sum();
        prop_assert_eq!(d, u);
        prop_assert_eq!(d as usize, b.matrix.n_edges());
    }

    #[test]
    fn rca_is_invariant_under_global_scaling(cells in cells_strategy(), scale in 0.001f64..1000.0) {
        let m = build(&cells, 2000);
        let scaled = RawMatrix::from_cells(
            m.layer().clone(),
            m.window(),
            m.entries().iter().map(|&(r, c, v)| {
                (
                    m.rows()[r as usize].clone(),
                    m.cols()[c as usize].clone(),
                    v * scale,
                )
            }),
        ).unwrap();
        let a = rca_values(&m).unwrap();
        let b = rca_values(&scaled).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            prop_assert!((x.2 - y.2).abs() <= 1e-9 * x.2.max(1.0));
        }
    }
}
