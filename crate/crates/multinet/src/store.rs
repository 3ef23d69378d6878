//! File-backed matrix store: one `country,code,year,value` file per
//! (layer, year) under `<root>/<layer>/<year>.csv`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::{load_table, TABLE_HEADER};
use crate::layers::{Hierarchy, LayerId};
use crate::matrix::{pool, RawMatrix, TimeWindow};

#[derive(Debug, Clone)]
pub struct MatrixStore {
    root: PathBuf,
}

impl MatrixStore {
    pub fn open(root: impl Into<PathBuf>) -> MatrixStore {
        MatrixStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file(&self, layer: &LayerId, year: i32) -> PathBuf {
        self.root.join(layer.name()).join(format!("{year}.csv"))
    }

    /// Persist a single-year matrix. Entries are written in canonical sorted
    /// order with shortest round-trip float formatting, so write/read is a
    /// fixed point and output bytes are reproducible.
    pub fn write_matrix(&self, matrix: &RawMatrix) -> Result<PathBuf> {
        if matrix.window().span != 1 {
            return Err(Error::InvalidInput(
                "the matrix store holds single-year matrices only".into(),
            ));
        }
        let path = self.file(matrix.layer(), matrix.window().start_year);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = String::new();
        out.push_str(TABLE_HEADER);
        out.push('\n');
        let year = matrix.window().start_year;
        for &(r, c, v) in matrix.entries() {
            let country = &matrix.rows()[r as usize];
            let code = &matrix.cols()[c as usize].code;
            out.push_str(&format!("{country},{code},{year},{v}\n"));
        }
        let mut file = fs::File::create(&path)?;
        file.write_all(out.as_bytes())?;
        Ok(path)
    }

    pub fn write_all(&self, matrices: &[RawMatrix]) -> Result<Vec<PathBuf>> {
        matrices.iter().map(|m| self.write_matrix(m)).collect()
    }

    pub fn has_year(&self, layer: &LayerId, year: i32) -> bool {
        self.file(layer, year).is_file()
    }

    /// Years available for a layer, ascending.
    pub fn years(&self, layer: &LayerId) -> Result<Vec<i32>> {
        let dir = self.root.join(layer.name());
        let mut years = Vec::new();
        if !dir.is_dir() {
            return Ok(years);
        }
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".csv") {
                if let Ok(year) = stem.parse::<i32>() {
                    years.push(year);
                }
            }
        }
        years.sort_unstable();
        Ok(years)
    }

    pub fn read_year(
        &self,
        layer: &LayerId,
        year: i32,
        hierarchy: &Hierarchy,
    ) -> Result<RawMatrix> {
        let path = self.file(layer, year);
        if !path.is_file() {
            return Err(Error::MissingWindows(vec![format!(
                "{}/{}",
                layer.name(),
                year
            )]));
        }
        let (matrices, _) = load_table(&path, layer, hierarchy)?;
        matrices
            .into_iter()
            .find(|m| m.window().start_year == year)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{} holds no entries for year {year}",
                    path.display()
                ))
            })
    }

    /// Load a pooled, level-aggregated window. Lists every missing year in
    /// one error so callers can report gaps at once.
    pub fn load_window(
        &self,
        layer: &LayerId,
        window: TimeWindow,
        hierarchy: &Hierarchy,
        level: u32,
    ) -> Result<RawMatrix> {
        let missing: Vec<String> = window
            .years()
            .filter(|&y| !self.has_year(layer, y))
            .map(|y| format!("{}/{}", layer.name(), y))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingWindows(missing));
        }
        let yearly: Vec<RawMatrix> = window
            .years()
            .map(|y| {
                self.read_year(layer, y, hierarchy)
                    .and_then(|m| m.aggregate(hierarchy, level))
            })
            .collect::<Result<_>>()?;
        if yearly.len() == 1 {
            return Ok(yearly.into_iter().next().unwrap());
        }
        pool(&yearly, window.pooling)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ActivityCode;
    use crate::matrix::Pooling;

    fn sample_matrix(year: i32) -> RawMatrix {
        RawMatrix::from_cells(
            LayerId::Science,
            TimeWindow::year(year),
            vec![
                ("usa".to_string(), ActivityCode::new("phys", 0), 1.25),
                ("ita".to_string(), ActivityCode::new("chem", 0), 3.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn write_then_read_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let store = MatrixStore::open(dir.path());
        let m = sample_matrix(2001);
        store.write_matrix(&m).unwrap();
        let back = store
            .read_year(&LayerId::Science, 2001, &Hierarchy::Flat)
            .unwrap();
        assert_eq!(back, m);
        // and writing the re-read matrix produces identical bytes
        let p1 = store.write_matrix(&back).unwrap();
        let bytes1 = fs::read(&p1).unwrap();
        store.write_matrix(&m).unwrap();
        let bytes2 = fs::read(&p1).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn window_loading_reports_all_missing_years() {
        let dir = tempfile::tempdir().unwrap();
        let store = MatrixStore::open(dir.path());
        store.write_matrix(&sample_matrix(2001)).unwrap();
        let window = TimeWindow::new(2000, 3, Pooling::Sum).unwrap();
        match store.load_window(&LayerId::Science, window, &Hierarchy::Flat, 0) {
            Err(Error::MissingWindows(missing)) => {
                assert_eq!(missing, vec!["science/2000", "science/2002"]);
            }
            other => panic!("expected MissingWindows, got {other:?}"),
        }
    }

    #[test]
    fn years_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let store = MatrixStore::open(dir.path());
        for y in [2003, 2001, 2002] {
            store.write_matrix(&sample_matrix(y)).unwrap();
        }
        assert_eq!(
            store.years(&LayerId::Science).unwrap(),
            vec![2001, 2002, 2003]
        );
        assert!(store.years(&LayerId::Products).unwrap().is_empty());
    }
}
