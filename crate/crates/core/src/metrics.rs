//! Attribution quality against ground-truth masks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::Method;
use crate::datagen::{Background, Scenario};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::Architecture;
use crate::whitening::WhiteningMethod;

/// Fraction of ground-truth pixels among the `k` largest `|attr|`
/// (`k = |mask|` when `None`). Ties go to the lower pixel index.
pub fn precision_at_k(attr: &[f64], mask: &[bool], k: Option<usize>) -> Result<f64> {
    if attr.len() != mask.len() {
        return Err(crate::error::shape_err(mask.len(), attr.len()));
    }
    let n_true = mask.iter().filter(|&&m| m).count();
    if n_true == 0 {
        return Err(Error::EmptyMask);
    }
    let k = k.unwrap_or(n_true).min(attr.len());
    let mut order: Vec<usize> = (0..attr.len()).collect();
    order.sort_by(|&a, &b| attr[b].abs().total_cmp(&attr[a].abs()));
    let hits = order[..k].iter().filter(|&&i| mask[i]).count();
    Ok(hits as f64 / n_true as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    /// `plan[(i, j)]` is the mass moved from supply `i` to demand `j`.
    pub plan: Matrix,
    pub cost: f64,
}

/// Exact minimum-cost transport between `supply` and `demand` masses by the
/// transportation simplex (north-west corner start, potentials for pricing).
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &Matrix) -> Result<TransportSolution> {
    let (m, n) = (supply.len(), demand.len());
    if cost.rows() != m || cost.cols() != n {
        return Err(crate::error::shape_err(format!("{m}×{n}"), format!("{}×{}", cost.rows(), cost.cols())));
    }
    if supply.iter().chain(demand).any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("transport masses must be finite and nonnegative".into()));
    }
    if !cost.is_finite() {
        return Err(Error::InvalidInput("transport costs must be finite".into()));
    }
    let (ps, qs): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ps - qs).abs() > 1e-12 * ps.max(qs).max(1.0) {
        return Err(Error::MassMismatch {
            supply: ps,
            demand: qs,
        });
    }
    let rows: Vec<usize> = (0..m).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| demand[j] > 0.0).collect();
    let mut plan = Matrix::zeros(m, n);
    if rows.is_empty() || cols.is_empty() {
        return Ok(TransportSolution { plan, cost: 0.0 });
    }
    let sub_supply: Vec<f64> = rows.iter().map(|&i| supply[i]).collect();
    let sub_demand: Vec<f64> = cols.iter().map(|&j| demand[j]).collect();
    let sub_cost = cost.select(&rows, &cols);
    let flows = TransportSimplex::new(&sub_supply, &sub_demand, &sub_cost).solve()?;
    let mut total = 0.0;
    for ((a, b), x) in flows {
        plan[(rows[a], cols[b])] = x;
        total += x * sub_cost[(a, b)];
    }
    Ok(TransportSolution { plan, cost: total })
}

struct TransportSimplex<'a> {
    m: usize,
    n: usize,
    cost: &'a Matrix,
    /// Basic cells and their flows; always `m + n − 1` entries forming a spanning tree.
    basis: Vec<((usize, usize), f64)>,
}

impl<'a> TransportSimplex<'a> {
    fn new(supply: &[f64], demand: &[f64], cost: &'a Matrix) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]).max(0.0);
            basis.push(((i, j), x));
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, cost, basis }
    }

    /// Tree adjacency: node `i < m` is supply row `i`, node `m + j` is demand column `j`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &((i, j), _)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.m];
        let mut v = vec![f64::NAN; self.n];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &(other, k) in &adj[node] {
                let ((i, j), _) = self.basis[k];
                let c = self.cost[(i, j)];
                if node < self.m {
                    if v[j].is_nan() {
                        v[j] = c - u[i];
                        stack.push(other);
                    }
                } else if u[i].is_nan() {
                    u[i] = c - v[j];
                    stack.push(other);
                }
            }
        }
        (u, v)
    }

    /// Basis indices on the tree path from row `i0` to column `j0`, in order.
    fn path(&self, adj: &[Vec<(usize, usize)>], i0: usize, j0: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut via: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        seen[i0] = true;
        let mut queue = std::collections::VecDeque::from([i0]);
        let goal = self.m + j0;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &(other, k) in &adj[node] {
                if !seen[other] {
                    seen[other] = true;
                    via[other] = Some((node, k));
                    queue.push_back(other);
                }
            }
        }
        let mut edges = Vec::new();
        let mut node = goal;
        while let Some((prev, k)) = via[node] {
            edges.push(k);
            node = prev;
        }
        // edges now run from column j0 back to row i0
        edges
    }

    fn solve(mut self) -> Result<Vec<((usize, usize), f64)>> {
        let scale = self.cost.max_abs().max(1.0);
        let tol = 1e-12 * scale;
        let max_iter = 50 * (self.m + 1) * (self.n + 1) + 1000;
        let mut degenerate_run = 0;
        for _ in 0..max_iter {
            let adj = self.adjacency();
            let (u, v) = self.potentials(&adj);
            let in_basis = {
                let mut b = vec![false; self.m * self.n];
                for &((i, j), _) in &self.basis {
                    b[i * self.n + j] = true;
                }
                b
            };
            // Dantzig pricing; Bland's first-index rule after a run of degenerate pivots.
            let bland = degenerate_run > self.m + self.n;
            let mut entering: Option<((usize, usize), f64)> = None;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    if in_basis[i * self.n + j] {
                        continue;
                    }
                    let r = self.cost[(i, j)] - u[i] - v[j];
                    if r < -tol && entering.is_none_or(|(_, best)| r < best) {
                        entering = Some(((i, j), r));
                        if bland {
                            break 'scan;
                        }
                    }
                }
            }
            let Some(((i0, j0), _)) = entering else {
                return Ok(self.basis);
            };
            let path = self.path(&adj, i0, j0);
            // signs along the path alternate starting with − at column j0
            let mut leave = path[0];
            let mut theta = f64::INFINITY;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 && self.basis[k].1 < theta {
                    theta = self.basis[k].1;
                    leave = k;
                }
            }
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.basis[k].1 = (self.basis[k].1 - theta).max(0.0);
                } else {
                    self.basis[k].1 += theta;
                }
            }
            self.basis[leave] = ((i0, j0), theta);
            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        }
        Err(Error::InvalidInput("transport simplex did not converge".into()))
    }
}

/// Euclidean distance between pixel centres of `a` and `b` on a `width`-wide grid.
fn pixel_distance(a: usize, b: usize, width: usize) -> f64 {
    let (ra, ca) = ((a / width) as f64, (a % width) as f64);
    let (rb, cb) = ((b / width) as f64, (b % width) as f64);
    (ra - rb).hypot(ca - cb)
}

/// Earth mover's distance between two mass maps on the same grid.
pub fn emd(p: &[f64], q: &[f64], height: usize, width: usize) -> Result<f64> {
    if p.len() != height * width || q.len() != height * width {
        return Err(crate::error::shape_err(height * width, format!("{} and {}", p.len(), q.len())));
    }
    let rows: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let cols: Vec<usize> = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
    let cost = Matrix::from_fn(rows.len(), cols.len(), |a, b| pixel_distance(rows[a], cols[b], width));
    let ps: Vec<f64> = rows.iter().map(|&i| p[i]).collect();
    let qs: Vec<f64> = cols.iter().map(|&j| q[j]).collect();
    Ok(solve_transport(&ps, &qs, &cost)?.cost)
}

/// `1 − EMD(|attr| / Σ|attr|, uniform on mask) / d_max`, with `d_max` the grid diagonal.
///
/// An all-zero attribution is scored as the uniform distribution over all pixels.
pub fn emd_score(attr: &[f64], mask: &[bool], height: usize, width: usize) -> Result<f64> {
    if attr.len() != height * width || mask.len() != height * width {
        return Err(crate::error::shape_err(height * width, format!("{} and {}", attr.len(), mask.len())));
    }
    if attr.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("attribution has non-finite values".into()));
    }
    let n_true = mask.iter().filter(|&&m| m).count();
    if n_true == 0 {
        return Err(Error::EmptyMask);
    }
    let total: f64 = attr.iter().map(|v| v.abs()).sum();
    let p: Vec<f64> = if total > 0.0 {
        attr.iter().map(|v| v.abs() / total).collect()
    } else {
        log::warn!("all-zero attribution scored against a uniform distribution");
        vec![1.0 / attr.len() as f64; attr.len()]
    };
    let q: Vec<f64> = mask.iter().map(|&m| if m { 1.0 / n_true as f64 } else { 0.0 }).collect();
    let d_max = pixel_distance(0, height * width - 1, width);
    if d_max == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - emd(&p, &q, height, width)? / d_max).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: Scenario,
    pub background: Background,
    pub whitening: WhiteningMethod,
    pub model: Architecture,
    pub method: Method,
    pub sample_id: usize,
    pub precision: f64,
    pub emd_score: f64,
}

pub const METRICS_CSV_HEADER: &str = "scenario,background,whitening,model,method,sample_id,precision,emd_score";

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.scenario, r.background, r.whitening, r.model, r.method, r.sample_id, r.precision, r.emd_score
        )
        .expect("write to String");
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_CSV_HEADER => {}
        other => return Err(Error::Format(format!("unexpected metrics header {other:?}"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| Error::Format(format!("metrics line {}: bad {what} in {line:?}", n + 2));
            if f.len() != 8 {
                return Err(bad("field count"));
            }
            Ok(MetricsRecord {
                scenario: f[0].parse().map_err(|_| bad("scenario"))?,
                background: f[1].parse().map_err(|_| bad("background"))?,
                whitening: f[2].parse().map_err(|_| bad("whitening"))?,
                model: f[3].parse().map_err(|_| bad("model"))?,
                method: f[4].parse().map_err(|_| bad("method"))?,
                sample_id: f[5].parse().map_err(|_| bad("sample_id"))?,
                precision: f[6].parse().map_err(|_| bad("precision"))?,
                emd_score: f[7].parse().map_err(|_| bad("emd_score"))?,
            })
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    Ok(fs::write(path, metrics_csv(records))?)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    parse_metrics_csv(&fs::read_to_string(path)?)
}

/// Box-plot statistics; quartiles use linear interpolation between order
/// statistics at position `p·(n − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Summary {
        n: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Minimum cost over all basic feasible solutions: every set of
    /// `m + n − 1` cells forming a spanning tree has a unique flow; keep the
    /// feasible ones.
    fn brute_force_transport(p: &[f64], q: &[f64], cost: &Matrix) -> f64 {
        let (m, n) = (p.len(), q.len());
        let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let k = m + n - 1;
        let mut best = f64::INFINITY;
        let mut choice: Vec<usize> = (0..k).collect();
        loop {
            if let Some(c) = tree_flow_cost(&choice.iter().map(|&c| cells[c]).collect::<Vec<_>>(), p, q, cost) {
                best = best.min(c);
            }
            // next k-combination of cells
            let mut i = k;
            while i > 0 && choice[i - 1] == cells.len() - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            choice[i - 1] += 1;
            for t in i..k {
                choice[t] = choice[t - 1] + 1;
            }
        }
        best
    }

    fn tree_flow_cost(basis: &[(usize, usize)], p: &[f64], q: &[f64], cost: &Matrix) -> Option<f64> {
        let mut s = p.to_vec();
        let mut d = q.to_vec();
        let mut open: Vec<bool> = vec![true; basis.len()];
        let mut total = 0.0;
        for _ in 0..basis.len() {
            // a row or column with exactly one open cell fixes that cell's flow
            let mut fixed = None;
            for (k, &(i, j)) in basis.iter().enumerate() {
                if !open[k] {
                    continue;
                }
                let row_deg = basis.iter().zip(&open).filter(|(c, &o)| o && c.0 == i).count();
                let col_deg = basis.iter().zip(&open).filter(|(c, &o)| o && c.1 == j).count();
                if row_deg == 1 {
                    fixed = Some((k, s[i]));
                    break;
                }
                if col_deg == 1 {
                    fixed = Some((k, d[j]));
                    break;
                }
            }
            let (k, x) = fixed?;
            if x < -1e-12 {
                return None;
            }
            let (i, j) = basis[k];
            s[i] -= x;
            d[j] -= x;
            total += x * cost[(i, j)];
            open[k] = false;
        }
        if s.iter().chain(&d).any(|r| r.abs() > 1e-9) {
            return None;
        }
        Some(total)
    }

    fn random_masses(n: usize, rng: &mut crate::rng::StreamRng) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    fn check_marginals(sol: &TransportSolution, p: &[f64], q: &[f64]) {
        for (i, pi) in p.iter().enumerate() {
            assert!((sol.plan.row(i).iter().sum::<f64>() - pi).abs() < 1e-9);
        }
        for (j, qj) in q.iter().enumerate() {
            assert!((sol.plan.column(j).iter().sum::<f64>() - qj).abs() < 1e-9);
        }
        assert!(sol.plan.as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn transport_matches_vertex_enumeration() {
        let mut rng = stream(0, "transport-test", 0);
        for (m, n) in [(2, 3), (3, 3), (4, 3), (4, 4), (5, 5), (5, 5), (5, 5)] {
            let p = random_masses(m, &mut rng);
            let q = random_masses(n, &mut rng);
            let cost = Matrix::from_fn(m, n, |_, _| rng.random_range(0.0..10.0));
            let sol = solve_transport(&p, &q, &cost).unwrap();
            check_marginals(&sol, &p, &q);
            let oracle = brute_force_transport(&p, &q, &cost);
            assert!((sol.cost - oracle).abs() < 1e-9, "{m}×{n}: {} vs {oracle}", sol.cost);
        }
    }

    #[test]
    fn transport_degenerate_equal_masses() {
        // integral equal masses produce degenerate bases
        let p = [0.25; 4];
        let q = [0.25; 4];
        let mut rng = stream(1, "transport-test", 0);
        for _ in 0..20 {
            let cost = Matrix::from_fn(4, 4, |_, _| rng.random_range(0..5) as f64);
            let sol = solve_transport(&p, &q, &cost).unwrap();
            check_marginals(&sol, &p, &q);
            assert!((sol.cost - brute_force_transport(&p, &q, &cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn transport_trivial_cases() {
        let p = [0.2, 0.3, 0.5];
        let cost = Matrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).abs());
        let sol = solve_transport(&p, &p, &cost).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert_eq!(sol.plan, Matrix::from_diag(&p));

        let one = solve_transport(&[2.5], &[2.5], &Matrix::from_rows(&[[3.0]]).unwrap()).unwrap();
        assert_eq!(one.plan[(0, 0)], 2.5);
        assert_eq!(one.cost, 7.5);

        assert!(matches!(
            solve_transport(&[1.0], &[0.5], &Matrix::from_rows(&[[1.0]]).unwrap()),
            Err(Error::MassMismatch { .. })
        ));
        assert!(solve_transport(&[-1.0, 2.0], &[1.0], &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn emd_hand_cases() {
        // 2×2 grid, pixel order (0,0),(0,1),(1,0),(1,1)
        let d = emd(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        assert!((d - 2.0_f64.sqrt()).abs() < 1e-12);
        let d = emd(&[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 0.5, 0.5], 2, 2).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn emd_score_extremes() {
        let mut mask = vec![false; 64];
        for i in [9, 10, 11, 18] {
            mask[i] = true;
        }
        let attr: Vec<f64> = mask.iter().map(|&m| if m { -3.0 } else { 0.0 }).collect();
        assert_eq!(emd_score(&attr, &mask, 8, 8).unwrap(), 1.0);
        assert_eq!(precision_at_k(&attr, &mask, None).unwrap(), 1.0);

        let mut corner = vec![0.0; 64];
        corner[0] = 1.0;
        let mut far = vec![false; 64];
        far[63] = true;
        let s = emd_score(&corner, &far, 8, 8).unwrap();
        assert_eq!(s, 0.0);
        let d = emd(&corner, &far.iter().map(|&m| f64::from(u8::from(m))).collect::<Vec<_>>(), 8, 8).unwrap();
        assert!((d - 7.0 * 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn emd_score_zero_attribution_is_uniform() {
        let mut mask = vec![false; 16];
        mask[5] = true;
        let uniform = vec![1.0; 16];
        assert_eq!(
            emd_score(&[0.0; 16], &mask, 4, 4).unwrap(),
            emd_score(&uniform, &mask, 4, 4).unwrap()
        );
        assert!(matches!(emd_score(&uniform, &[false; 16], 4, 4), Err(Error::EmptyMask)));
    }

    #[test]
    fn precision_cases() {
        let mut mask = vec![false; 64];
        for i in 0..8 {
            mask[i * 8] = true;
        }
        let disjoint: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
        assert_eq!(precision_at_k(&disjoint, &mask, None).unwrap(), 0.0);

        let mut half = vec![0.0; 64];
        for i in 0..4 {
            half[i * 8] = 1.0; // true pixels
            half[i * 8 + 1] = 1.0; // false pixels
        }
        assert_eq!(precision_at_k(&half, &mask, Some(8)).unwrap(), 0.5);
        assert!(matches!(precision_at_k(&half, &[false; 64], None), Err(Error::EmptyMask)));
    }

    #[test]
    fn precision_ties_prefer_lower_index() {
        let mask = [false, true, false, false];
        // all tied: top-1 is pixel 0, a miss
        assert_eq!(precision_at_k(&[1.0; 4], &mask, None).unwrap(), 0.0);
        let mask = [true, false, false, false];
        assert_eq!(precision_at_k(&[1.0; 4], &mask, None).unwrap(), 1.0);
    }

    #[test]
    fn summary_matches_linear_interpolation_quantiles() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn metrics_csv_round_trip() {
        let records = vec![MetricsRecord {
            scenario: Scenario::Xor,
            background: Background::Corr,
            whitening: WhiteningMethod::PartialRegression,
            model: Architecture::Cnn,
            method: Method::IntegratedGradients,
            sample_id: 17,
            precision: 0.625,
            emd_score: 0.9123456789012345,
        }];
        let text = metrics_csv(&records);
        assert_eq!(parse_metrics_csv(&text).unwrap(), records);
    }

    fn grid_distribution() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 16).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn emd_is_symmetric(p in grid_distribution(), q in grid_distribution()) {
            let a = emd(&p, &q, 4, 4).unwrap();
            let b = emd(&q, &p, 4, 4).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn emd_triangle_inequality(p in grid_distribution(), q in grid_distribution(), r in grid_distribution()) {
            let pq = emd(&p, &q, 4, 4).unwrap();
            let qr = emd(&q, &r, 4, 4).unwrap();
            let pr = emd(&p, &r, 4, 4).unwrap();
            prop_assert!(pr <= pq + qr + 1e-9);
        }

        #[test]
        fn emd_score_in_unit_interval(
            attr in prop::collection::vec(-1.0f64..1.0, 16),
            bits in prop::collection::vec(any::<bool>(), 16),
        ) {
            prop_assume!(bits.iter().any(|&b| b));
            let s = emd_score(&attr, &bits, 4, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn precision_invariant_to_scale_and_sign(
            attr in prop::collection::vec(-1.0f64..1.0, 16),
            bits in prop::collection::vec(any::<bool>(), 16),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(bits.iter().any(|&b| b));
            let base = precision_at_k(&attr, &bits, None).unwrap();
            let scaled: Vec<f64> = attr.iter().map(|v| v * scale).collect();
            let flipped: Vec<f64> = attr.iter().map(|v| -v).collect();
            prop_assert_eq!(precision_at_k(&scaled, &bits, None).unwrap(), base);
            prop_assert_eq!(precision_at_k(&flipped, &bits, None).unwrap(), base);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
