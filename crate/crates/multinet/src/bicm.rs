//! Bipartite configuration model: the maximum-entropy ensemble of bipartite
//! graphs whose expected degrees match an observed binary matrix.
//!
//! Link (c, a) is present independently with probability
//! `pi = eta_c * theta_a / (1 + eta_c * theta_a)`. The multipliers are found
//! by maximizing the graph log-likelihood, which is equivalent to solving
//! one degree equation per country and per activity. Nodes with zero or
//! full degree have no finite multiplier and must be split off first
//! ([`reduce`]); their cells are deterministic (never/always present) and
//! are reinserted at sampling time.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{ActivityCode, LayerId};
use crate::matrix::{BinaryMatrix, TimeWindow};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Convergence bound on the largest |expected degree - observed degree|.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub tolerance: f64,
    pub max_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

/// Fitted multipliers over a reduced (non-degenerate) node set.
#[derive(Debug, Clone)]
pub struct BicmModel {
    rows: Vec<String>,
    cols: Vec<ActivityCode>,
    eta: Vec<f64>,
    theta: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl BicmModel {
    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[ActivityCode] {
        &self.cols
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Connection probability for the (reduced) pair (c, a).
    pub fn pi(&self, c: usize, a: usize) -> f64 {
        let x = self.eta[c] * self.theta[a];
        x / (1.0 + x)
    }

    pub fn expected_row_degree(&self, c: usize) -> f64 {
        (0..self.theta.len()).map(|a| self.pi(c, a)).sum()
    }

    pub fn expected_col_degree(&self, a: usize) -> f64 {
        (0..self.eta.len()).map(|c| self.pi(c, a)).sum()
    }

    /// Persist as a diagnostics header plus two delimited sections.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# bicm model\n");
        let _ = writeln!(out, "# tolerance {}", self.diagnostics.tolerance);
        let _ = writeln!(out, "# max_residual {}", self.diagnostics.max_residual);
        let _ = writeln!(out, "# iterations {}", self.diagnostics.iterations);
        let _ = writeln!(out, "# converged {}", self.diagnostics.converged);
        out.push_str(
            "# samples depend only on (seed, index); worker count and emission order never \
             affect their content\n",
        );
        out.push_str("country,eta\n");
        for (row, eta) in self.rows.iter().zip(&self.eta) {
            let _ = writeln!(out, "{row},{eta}");
        }
        out.push_str("activity,level,theta\n");
        for (col, theta) in self.cols.iter().zip(&self.theta) {
            let _ = writeln!(out, "{},{},{theta}", col.code, col.level);
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BicmModel> {
        let text = fs::read_to_string(path)?;
        let mut diagnostics = FitDiagnostics {
            tolerance: f64::NAN,
            max_residual: f64::NAN,
            iterations: 0,
            converged: false,
            log_likelihood: f64::NAN,
        };
        let mut rows = Vec::new();
        let mut eta = Vec::new();
        let mut cols = Vec::new();
        let mut theta = Vec::new();
        let mut section = 0u8;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let bad = |message: &str| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: message.to_string(),
            };
            if let Some(rest) = line.strip_prefix('#') {
                let mut words = rest.split_whitespace();
                match words.next() {
                    Some("tolerance") => {
                        diagnostics.tolerance = words
                            .next()
                            .and_then(|w| w.parse().ok())
                            .unwrap_or(f64::NAN)
                    }
                    Some("max_residual") => {
                        diagnostics.max_residual = words
                            .next()
                            .and_then(|w| w.parse().ok())
                            .unwrap_or(f64::NAN)
                    }
                    Some("iterations") => {
                        diagnostics.iterations =
                            words.next().and_then(|w| w.parse().ok()).unwrap_or(0)
                    }
                    Some("converged") => {
                        diagnostics.converged = words.next().map(|w| w == "true").unwrap_or(false)
                    }
                    _ => {}
                }
                continue;
            }
            match line.trim() {
                "country,eta" => {
                    section = 1;
                    continue;
                }
                "activity,level,theta" => {
                    section = 2;
                    continue;
                }
                "" => continue,
                _ => {}
            }
            let fields: Vec<&str> = line.split(',').collect();
            match section {
                1 => {
                    if fields.len() != 2 {
                        return Err(bad("expected `country,eta` row"));
                    }
                    rows.push(fields[0].to_string());
                    eta.push(fields[1].parse().map_err(|_| bad("non-numeric eta"))?);
                }
                2 => {
                    if fields.len() != 3 {
                        return Err(bad("expected `activity,level,theta` row"));
                    }
                    let level: u32 = fields[1].parse().map_err(|_| bad("non-numeric level"))?;
                    cols.push(ActivityCode::new(fields[0], level));
                    theta.push(fields[2].parse().map_err(|_| bad("non-numeric theta"))?);
                }
                _ => return Err(bad("data before any section header")),
            }
        }
        Ok(BicmModel {
            rows,
            cols,
            eta,
            theta,
            diagnostics,
        })
    }
}

fn log_likelihood(row_degrees: &[u32], col_degrees: &[u32], eta: &[f64], theta: &[f64]) -> f64 {
    let mut l = 0.0;
    for (c, &d) in row_degrees.iter().enumerate() {
        l += f64::from(d) * eta[c].ln();
    }
    for (a, &u) in col_degrees.iter().enumerate() {
        l += f64::from(u) * theta[a].ln();
    }
    for &e in eta {
        for &t in theta {
            l -= (e * t).ln_1p();
        }
    }
    l
}

fn max_residual(row_degrees: &[u32], col_degrees: &[u32], eta: &[f64], theta: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (c, &d) in row_degrees.iter().enumerate() {
        let expected: f64 = theta
            .iter()
            .map(|&t| {
                let x = eta[c] * t;
                x / (1.0 + x)
            })
            .sum();
        worst = worst.max((expected - f64::from(d)).abs());
    }
    for (a, &u) in col_degrees.iter().enumerate() {
        let expected: f64 = eta
            .iter()
            .map(|&e| {
                let x = e * theta[a];
                x / (1.0 + x)
            })
            .sum();
        worst = worst.max((expected - f64::from(u)).abs());
    }
    worst
}

/// One damped fixed-point sweep: etas from current thetas, then thetas from
/// the new etas. `alpha = 1` is the plain update; smaller values blend in
/// log space.
fn fixed_point_step(
    row_degrees: &[u32],
    col_degrees: &[u32],
    eta: &[f64],
    theta: &[f64],
    alpha: f64,
) -> (Vec<f64>, Vec<f64>) {
    let blend = |old: f64, cand: f64| -> f64 {
        if alpha >= 1.0 {
            cand
        } else {
            (old.ln() * (1.0 - alpha) + cand.ln() * alpha).exp()
        }
    };
    let mut new_eta = vec![0.0; eta.len()];
    for (c, &d) in row_degrees.iter().enumerate() {
        let denom: f64 = theta.iter().map(|&t| t / (1.0 + eta[c] * t)).sum();
        new_eta[c] = blend(eta[c], f64::from(d) / denom);
    }
    let mut new_theta = vec![0.0; theta.len()];
    for (a, &u) in col_degrees.iter().enumerate() {
        let denom: f64 = new_eta.iter().map(|&e| e / (1.0 + e * theta[a])).sum();
        new_theta[a] = blend(theta[a], f64::from(u) / denom);
    }
    (new_eta, new_theta)
}

/// Diagonal Newton step on the log-multipliers, backtracked until the
/// likelihood does not decrease. Used when the fixed point stalls.
fn quasi_newton_step(
    row_degrees: &[u32],
    col_degrees: &[u32],
    eta: &mut Vec<f64>,
    theta: &mut Vec<f64>,
    current_likelihood: &mut f64,
) {
    let n = eta.len();
    let m = theta.len();
    let mut grad_eta = vec![0.0; n];
    let mut curv_eta = vec![0.0; n];
    let mut grad_theta = vec![0.0; m];
    let mut curv_theta = vec![0.0; m];
    for c in 0..n {
        for a in 0..m {
            let x = eta[c] * theta[a];
            let pi = x / (1.0 + x);
            let w = pi * (1.0 - pi);
            grad_eta[c] -= pi;
            grad_theta[a] -= pi;
            curv_eta[c] += w;
            curv_theta[a] += w;
        }
    }
    for (c, &d) in row_degrees.iter().enumerate() {
        grad_eta[c] += f64::from(d);
    }
    for (a, &u) in col_degrees.iter().enumerate() {
        grad_theta[a] += f64::from(u);
    }
    let mut scale = 1.0;
    for _ in 0..40 {
        let cand_eta: Vec<f64> = eta
            .iter()
            .zip(grad_eta.iter().zip(&curv_eta))
            .map(|(&e, (&g, &h))| (e.ln() + scale * g / h.max(1e-12)).exp())
            .collect();
        let cand_theta: Vec<f64> = theta
            .iter()
            .zip(grad_theta.iter().zip(&curv_theta))
            .map(|(&t, (&g, &h))| (t.ln() + scale * g / h.max(1e-12)).exp())
            .collect();
        let l = log_likelihood(row_degrees, col_degrees, &cand_eta, &cand_theta);
        if l >= *current_likelihood - 1e-12 * (1.0 + current_likelihood.abs()) {
            *eta = cand_eta;
            *theta = cand_theta;
            *current_likelihood = l.max(*current_likelihood);
            return;
        }
        scale *= 0.5;
    }
}

/// Fit multipliers to a matrix with no zero-degree and no full-degree nodes.
///
/// Damped fixed-point iteration on the degree equations, initialized at
/// `eta = d/sqrt(E)`, `theta = u/sqrt(E)`; steps that would lower the
/// log-likelihood are re-damped, and a stalled residual falls back to a
/// quasi-Newton step. An empty matrix fits trivially.
pub fn fit(m: &BinaryMatrix, opts: &FitOptions) -> Result<BicmModel> {
    for (c, &d) in m.row_degrees().iter().enumerate() {
        if d == 0 || d as usize == m.n_cols() {
            return Err(Error::DegenerateInput(format!(
                "country `{}` has degree {d} of {}",
                m.rows()[c],
                m.n_cols()
            )));
        }
    }
    for (a, &u) in m.col_degrees().iter().enumerate() {
        if u == 0 || u as usize == m.n_rows() {
            return Err(Error::DegenerateInput(format!(
                "activity `{}` has degree {u} of {}",
                m.cols()[a].code,
                m.n_rows()
            )));
        }
    }
    let row_degrees = m.row_degrees().to_vec();
    let col_degrees = m.col_degrees().to_vec();
    if m.n_rows() == 0 || m.n_cols() == 0 {
        return Ok(BicmModel {
            rows: m.rows().to_vec(),
            cols: m.cols().to_vec(),
            eta: Vec::new(),
            theta: Vec::new(),
            diagnostics: FitDiagnostics {
                tolerance: opts.tolerance,
                max_residual: 0.0,
                iterations: 0,
                converged: true,
                log_likelihood: 0.0,
            },
        });
    }

    let sqrt_e = (m.n_edges() as f64).sqrt();
    let mut eta: Vec<f64> = row_degrees.iter().map(|&d| f64::from(d) / sqrt_e).collect();
    let mut theta: Vec<f64> = col_degrees.iter().map(|&u| f64::from(u) / sqrt_e).collect();
    let mut likelihood = log_likelihood(&row_degrees, &col_degrees, &eta, &theta);
    let mut alpha = 1.0f64;
    let mut best_residual = f64::INFINITY;
    let mut stall = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let mut accepted = false;
        for _ in 0..12 {
            let (cand_eta, cand_theta) =
                fixed_point_step(&row_degrees, &col_degrees, &eta, &theta, alpha);
            let l = log_likelihood(&row_degrees, &col_degrees, &cand_eta, &cand_theta);
            if l >= likelihood - 1e-12 * (1.0 + likelihood.abs()) {
                eta = cand_eta;
                theta = cand_theta;
                likelihood = l.max(likelihood);
                alpha = (alpha * 1.5).min(1.0);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            quasi_newton_step(
                &row_degrees,
                &col_degrees,
                &mut eta,
                &mut theta,
                &mut likelihood,
            );
            alpha = 1.0;
        }
        let residual = max_residual(&row_degrees, &col_degrees, &eta, &theta);
        if residual <= opts.tolerance {
            best_residual = residual;
            converged = true;
            break;
        }
        if residual < best_residual * 0.9999 {
            best_residual = residual;
            stall = 0;
        } else {
            stall += 1;
            if stall >= 50 {
                quasi_newton_step(
                    &row_degrees,
                    &col_degrees,
                    &mut eta,
                    &mut theta,
                    &mut likelihood,
                );
                stall = 0;
            }
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            residual: best_residual,
            tolerance: opts.tolerance,
        });
    }
    Ok(BicmModel {
        rows: m.rows().to_vec(),
        cols: m.cols().to_vec(),
        eta,
        theta,
        diagnostics: FitDiagnostics {
            tolerance: opts.tolerance,
            max_residual: best_residual,
            iterations,
            converged,
            log_likelihood: likelihood,
        },
    })
}

/// The outcome of stripping deterministic nodes from a matrix: the reduced
/// kernel plus the cells fixed to one (forced) or zero (forbidden).
#[derive(Debug, Clone)]
pub struct Reduction {
    pub reduced: BinaryMatrix,
    pub forced: Vec<(String, ActivityCode)>,
    pub forbidden: Vec<(String, ActivityCode)>,
}

struct ReductionIndices {
    keep_rows: Vec<u32>,
    keep_cols: Vec<u32>,
    forced: Vec<(u32, u32)>,
    forbidden: Vec<(u32, u32)>,
}

fn reduce_indices(m: &BinaryMatrix) -> ReductionIndices {
    let n = m.n_rows();
    let k = m.n_cols();
    let mut row_active = vec![true; n];
    let mut col_active = vec![true; k];
    let mut row_deg: Vec<i64> = m.row_degrees().iter().map(|&d| i64::from(d)).collect();
    let mut col_deg: Vec<i64> = m.col_degrees().iter().map(|&u| i64::from(u)).collect();
    let mut n_rows_active = n as i64;
    let mut n_cols_active = k as i64;
    let mut forced = Vec::new();
    let mut forbidden = Vec::new();

    // one removal per event, scanning rows before columns, lowest index first
    loop {
        let mut removed = false;
        for r in 0..n {
            if !row_active[r] {
                continue;
            }
            if row_deg[r] == 0 || row_deg[r] == n_cols_active {
                let full = row_deg[r] == n_cols_active && n_cols_active > 0;
                for c in 0..k {
                    if col_active[c] {
                        if full {
                            forced.push((r as u32, c as u32));
                            col_deg[c] -= 1;
                        } else {
                            forbidden.push((r as u32, c as u32));
                        }
                    }
                }
                row_active[r] = false;
                n_rows_active -= 1;
                removed = true;
                break;
            }
        }
        if removed {
            continue;
        }
        for c in 0..k {
            if !col_active[c] {
                continue;
            }
            if col_deg[c] == 0 || col_deg[c] == n_rows_active {
                let full = col_deg[c] == n_rows_active && n_rows_active > 0;
                for r in 0..n {
                    if row_active[r] {
                        if full {
                            forced.push((r as u32, c as u32));
                            row_deg[r] -= 1;
                        } else {
                            forbidden.push((r as u32, c as u32));
                        }
                    }
                }
                col_active[c] = false;
                n_cols_active -= 1;
                removed = true;
                break;
            }
        }
        if !removed {
            break;
        }
    }
    let keep_rows: Vec<u32> = (0..n as u32).filter(|&r| row_active[r as usize]).collect();
    let keep_cols: Vec<u32> = (0..k as u32).filter(|&c| col_active[c as usize]).collect();
    forced.sort_unstable();
    forbidden.sort_unstable();
    ReductionIndices {
        keep_rows,
        keep_cols,
        forced,
        forbidden,
    }
}

fn submatrix(m: &BinaryMatrix, keep_rows: &[u32], keep_cols: &[u32]) -> Result<BinaryMatrix> {
    let col_map: Vec<Option<u32>> = {
        let mut map = vec![None; m.n_cols()];
        for (new, &old) in keep_cols.iter().enumerate() {
            map[old as usize] = Some(new as u32);
        }
        map
    };
    let rows: Vec<String> = keep_rows
        .iter()
        .map(|&r| m.rows()[r as usize].clone())
        .collect();
    let cols: Vec<ActivityCode> = keep_cols
        .iter()
        .map(|&c| m.cols()[c as usize].clone())
        .collect();
    let mut entries = Vec::new();
    for (new_r, &old_r) in keep_rows.iter().enumerate() {
        for old_c in m.row_cols(old_r) {
            if let Some(new_c) = col_map[old_c as usize] {
                entries.push((new_r as u32, new_c));
            }
        }
    }
    BinaryMatrix::from_entries(m.layer().clone(), m.window(), rows, cols, entries)
}

/// Iteratively strip zero-degree nodes (their cells are forbidden) and
/// full-degree nodes (their cells against the surviving complement are
/// forced) until none remain.
pub fn reduce(m: &BinaryMatrix) -> Reduction {
    let idx = reduce_indices(m);
    let cell = |&(r, c): &(u32, u32)| (m.rows()[r as usize].clone(), m.cols()[c as usize].clone());
    Reduction {
        reduced: submatrix(m, &idx.keep_rows, &idx.keep_cols).expect("submatrix of valid matrix"),
        forced: idx.forced.iter().map(cell).collect(),
        forbidden: idx.forbidden.iter().map(cell).collect(),
    }
}

/// A fitted null model over the full node universe: reduced multipliers plus
/// the deterministic cells stripped by reduction. This is the sampling
/// interface.
#[derive(Debug, Clone)]
pub struct NullModel {
    layer: LayerId,
    window: TimeWindow,
    full_rows: Vec<String>,
    full_cols: Vec<ActivityCode>,
    model: BicmModel,
    reduced_rows: Vec<u32>,
    reduced_cols: Vec<u32>,
    forced: Vec<(u32, u32)>,
    /// Connection probabilities of the reduced kernel, row-major.
    pi: Vec<f64>,
}

impl NullModel {
    /// Reduce, fit the kernel and precompute its connection probabilities.
    pub fn fit(m: &BinaryMatrix, opts: &FitOptions) -> Result<NullModel> {
        let idx = reduce_indices(m);
        let reduced = submatrix(m, &idx.keep_rows, &idx.keep_cols)?;
        let model = fit(&reduced, opts)?;
        let n = idx.keep_rows.len();
        let k = idx.keep_cols.len();
        let mut pi = vec![0.0; n * k];
        for c in 0..n {
            for a in 0..k {
                pi[c * k + a] = model.pi(c, a);
            }
        }
        Ok(NullModel {
            layer: m.layer().clone(),
            window: m.window(),
            full_rows: m.rows().to_vec(),
            full_cols: m.cols().to_vec(),
            model,
            reduced_rows: idx.keep_rows,
            reduced_cols: idx.keep_cols,
            forced: idx.forced,
            pi,
        })
    }

    pub fn model(&self) -> &BicmModel {
        &self.model
    }

    pub fn layer(&self) -> &LayerId {
        &self.layer
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn full_rows(&self) -> &[String] {
        &self.full_rows
    }

    pub fn full_cols(&self) -> &[ActivityCode] {
        &self.full_cols
    }

    /// Connection probability on the full grid: 0/1 for deterministic cells.
    pub fn pi_full(&self, r: u32, c: u32) -> f64 {
        if self.forced.binary_search(&(r, c)).is_ok() {
            return 1.0;
        }
        let ri = self.reduced_rows.binary_search(&r);
        let ci = self.reduced_cols.binary_search(&c);
        match (ri, ci) {
            (Ok(i), Ok(j)) => self.pi[i * self.reduced_cols.len() + j],
            _ => 0.0,
        }
    }

    /// Draw sample `index` of the stream rooted at `seed`. Every cell of the
    /// reduced kernel is an independent coin; deterministic cells are
    /// reinserted. Content depends only on `(seed, index)`.
    pub fn sample(&self, seed: u64, index: u64) -> BinaryMatrix {
        let mut rng = stream_rng(seed, index);
        let k = self.reduced_cols.len();
        let mut entries: Vec<(u32, u32)> = Vec::with_capacity(self.forced.len());
        for (i, &full_r) in self.reduced_rows.iter().enumerate() {
            for (j, &full_c) in self.reduced_cols.iter().enumerate() {
                if rng.random::<f64>() < self.pi[i * k + j] {
                    entries.push((full_r, full_c));
                }
            }
        }
        entries.extend_from_slice(&self.forced);
        BinaryMatrix::from_entries(
            self.layer.clone(),
            self.window,
            self.full_rows.clone(),
            self.full_cols.clone(),
            entries,
        )
        .expect("sampled entries are in range")
    }

    /// The first `count` samples of the stream rooted at `seed`.
    pub fn samples(&self, seed: u64, count: usize) -> impl Iterator<Item = BinaryMatrix> + '_ {
        (0..count as u64).map(move |index| self.sample(seed, index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerId;
    use crate::matrix::TimeWindow;

    fn binary(rows: usize, cols: usize, cells: &[(u32, u32)]) -> BinaryMatrix {
        BinaryMatrix::from_entries(
            LayerId::Science,
            TimeWindow::year(2000),
            (0..rows).map(|r| format!("c{r:02}")).collect(),
            (0..cols)
                .map(|c| ActivityCode::new(format!("a{c:02}"), 0))
                .collect(),
            cells.to_vec(),
        )
        .unwrap()
    }

    fn random_cells(seed: u64, rows: usize, cols: usize, p: f64) -> Vec<(u32, u32)> {
        let mut rng = stream_rng(seed, 0);
        let mut cells = Vec::new();
        for r in 0..rows as u32 {
            for c in 0..cols as u32 {
                if rng.random::<f64>() < p {
                    cells.push((r, c));
                }
            }
        }
        cells
    }

    #[test]
    fn uniform_degree_matrix_fits_constant_pi() {
        // circulant 4x4 with all degrees 2: the symmetric solution has pi = 1/2
        let cells: Vec<(u32, u32)> = (0..4u32).flat_map(|r| [(r, r), (r, (r + 1) % 4)]).collect();
        let m = binary(4, 4, &cells);
        let model = fit(&m, &FitOptions::default()).unwrap();
        for c in 0..4 {
            for a in 0..4 {
                assert!(
                    (model.pi(c, a) - 0.5).abs() < 1e-7,
                    "pi({c},{a}) = {}",
                    model.pi(c, a)
                );
            }
        }
        assert!(model.diagnostics.converged);
    }

    #[test]
    fn degenerate_input_is_rejected() {
        // single full cell
        let m = binary(1, 1, &[(0, 0)]);
        assert!(matches!(
            fit(&m, &FitOptions::default()),
            Err(Error::DegenerateInput(_))
        ));
        // a zero-degree column
        let m = binary(2, 2, &[(0, 0), (1, 0)]);
        assert!(matches!(
            fit(&m, &FitOptions::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn residuals_meet_tolerance_on_random_matrices() {
        for seed in 0..5u64 {
            let m = binary(30, 40, &random_cells(seed + 11, 30, 40, 0.25));
            let reduction = reduce(&m);
            let model = fit(&reduction.reduced, &FitOptions::default()).unwrap();
            assert!(model.diagnostics.converged);
            assert!(model.diagnostics.max_residual <= 1e-8);
            for c in 0..reduction.reduced.n_rows() {
                let d = f64::from(reduction.reduced.row_degree(c as u32));
                assert!((model.expected_row_degree(c) - d).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn likelihood_gradient_vanishes_at_fit() {
        // central finite differences on the log-multipliers
        let m = binary(20, 25, &random_cells(77, 20, 25, 0.3));
        let reduction = reduce(&m);
        let r = &reduction.reduced;
        let model = fit(r, &FitOptions::default()).unwrap();
        let h = 1e-5;
        let mut eta = model.eta().to_vec();
        let theta = model.theta().to_vec();
        for c in 0..eta.len().min(6) {
            let orig = eta[c];
            eta[c] = (orig.ln() + h).exp();
            let up = log_likelihood(r.row_degrees(), r.col_degrees(), &eta, &theta);
            eta[c] = (orig.ln() - h).exp();
            let down = log_likelihood(r.row_degrees(), r.col_degrees(), &eta, &theta);
            eta[c] = orig;
            let grad = (up - down) / (2.0 * h);
            assert!(grad.abs() <= 1e-6, "grad eta[{c}] = {grad:e}");
        }
    }

    #[test]
    fn reduce_forces_full_rows() {
        let m = binary(3, 2, &[(0, 0), (0, 1), (1, 0), (2, 1)]);
        let r = reduce(&m);
        assert_eq!(r.forced.len(), 2);
        assert!(r.forced.iter().all(|(row, _)| row == "c00"));
    }

    #[test]
    fn reduce_is_identity_without_degenerate_nodes() {
        let m = binary(3, 3, &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 2)]);
        let r = reduce(&m);
        assert!(r.forced.is_empty());
        assert!(r.forbidden.is_empty());
        assert_eq!(r.reduced, m);
    }

    #[test]
    fn nested_matrix_cascades_to_empty() {
        // rows i connect to cols 0..=i; degrees fully determine the matrix
        let n = 5u32;
        let cells: Vec<(u32, u32)> = (0..n).flat_map(|r| (0..=r).map(move |c| (r, c))).collect();
        let m = binary(n as usize, n as usize, &cells);
        let r = reduce(&m);
        assert_eq!(r.reduced.n_rows(), 0);
        assert_eq!(r.reduced.n_cols(), 0);
        assert_eq!(r.forced.len(), cells.len());
        assert_eq!(r.forbidden.len(), (n * n) as usize - cells.len());

        // independent fixpoint oracle: repeatedly classify cells on set copies
        let mut rows_left: Vec<u32> = (0..n).collect();
        let mut cols_left: Vec<u32> = (0..n).collect();
        let mut oracle_forced = 0usize;
        loop {
            let mut changed = false;
            let degree = |r: u32, cols: &[u32]| cols.iter().filter(|&&c| c <= r).count();
            if let Some(pos) = rows_left
                .iter()
                .position(|&r| degree(r, &cols_left) == cols_left.len())
            {
                oracle_forced += cols_left.len();
                rows_left.remove(pos);
                changed = true;
            } else if let Some(pos) = rows_left.iter().position(|&r| degree(r, &cols_left) == 0) {
                rows_left.remove(pos);
                changed = true;
            } else if let Some(pos) = cols_left
                .iter()
                .position(|&c| rows_left.iter().filter(|&&r| c <= r).count() == rows_left.len())
            {
                oracle_forced += rows_left.len();
                cols_left.remove(pos);
                changed = true;
            } else if let Some(pos) = cols_left
                .iter()
                .position(|&c| rows_left.iter().filter(|&&r| c <= r).count() == 0)
            {
                cols_left.remove(pos);
                changed = true;
            }
            if !changed {
                break;
            }
        }
        assert!(rows_left.is_empty() && cols_left.is_empty());
        assert_eq!(oracle_forced, r.forced.len());
    }

    #[test]
    fn sampling_respects_deterministic_limits() {
        // all-ones matrix: everything forced, every sample complete
        let cells: Vec<(u32, u32)> = (0..3u32)
            .flat_map(|r| (0..3u32).map(move |c| (r, c)))
            .collect();
        let m = binary(3, 3, &cells);
        let null = NullModel::fit(&m, &FitOptions::default()).unwrap();
        for i in 0..5 {
            let s = null.sample(9, i);
            assert_eq!(s.n_edges(), 9);
        }
        // empty matrix: everything forbidden, every sample empty
        let m = binary(3, 3, &[]);
        let null = NullModel::fit(&m, &FitOptions::default()).unwrap();
        for i in 0..5 {
            assert_eq!(null.sample(9, i).n_edges(), 0);
        }
    }

    #[test]
    fn samples_are_deterministic_per_index() {
        let m = binary(12, 9, &random_cells(5, 12, 9, 0.4));
        let null = NullModel::fit(&m, &FitOptions::default()).unwrap();
        let a = null.sample(1234, 7);
        let b = null.sample(1234, 7);
        assert_eq!(a, b);
        assert_ne!(a, null.sample(1234, 8));
        assert_ne!(a, null.sample(1235, 7));
        // the stream yields exactly the per-index samples
        let streamed: Vec<_> = null.samples(1234, 9).collect();
        assert_eq!(streamed[7], a);
        assert_eq!(streamed.len(), 9);
    }

    #[test]
    fn pi_full_matches_degree_structure() {
        let m = binary(4, 3, &[(0, 0), (0, 1), (0, 2), (1, 0), (2, 1)]);
        // row 0 is full(3): forced; row 3 has degree 0: forbidden
        let null = NullModel::fit(&m, &FitOptions::default()).unwrap();
        assert_eq!(null.pi_full(0, 0), 1.0);
        assert_eq!(null.pi_full(3, 0), 0.0);
        let p = null.pi_full(1, 0);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn model_round_trips_through_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let m = binary(10, 8, &random_cells(3, 10, 8, 0.35));
        let reduction = reduce(&m);
        let model = fit(&reduction.reduced, &FitOptions::default()).unwrap();
        let path = dir.path().join("model.csv");
        model.save(&path).unwrap();
        let back = BicmModel::load(&path).unwrap();
        assert_eq!(back.rows(), model.rows());
        assert_eq!(back.cols(), model.cols());
        assert_eq!(back.eta(), model.eta());
        assert_eq!(back.theta(), model.theta());
        assert_eq!(back.diagnostics.iterations, model.diagnostics.iterations);
        assert!(back.diagnostics.converged);
    }
}
