//! L1-regularized least squares along a log-spaced lambda grid.
//!
//! The solver minimizes `(1/2n)‖y - Xb‖² + λ‖b‖₁` by cyclic coordinate descent
//! with warm starts, working on the precomputed Gram matrix. Each column's
//! *entry score* is the largest grid value at which its coefficient is
//! nonzero.

mod scores;

pub use scores::{entry_scores, FeatureMap, ScoreTable, ScoringPlan};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Convergence threshold on the largest coefficient change in a sweep.
pub const CONVERGENCE_TOL: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 100_000;

/// Active-set sweeps between attempts at an exact step.
const EXACT_STEP_EVERY: usize = 2;

pub const DEFAULT_GRID_RATIO: f64 = 1e-3;
pub const DEFAULT_NLAMBDA_MULTIPLIER: usize = 5;

/// Number of grid points, `multiplier * (1 + d_max) * p`.
pub fn grid_count(multiplier: usize, d_max: usize, p: usize) -> usize {
    multiplier * (1 + d_max) * p
}

/// Grid size and depth; the top of the grid is fixed by the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub count: usize,
    pub ratio: f64,
}

impl GridSpec {
    pub fn new(count: usize, ratio: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::Parameter(format!("lambda grid needs >= 2 points, got {count}")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Parameter(format!("grid ratio must lie in (0, 1), got {ratio}")));
        }
        Ok(GridSpec { count, ratio })
    }
}

/// Strictly decreasing, log-linearly spaced lambdas from `lambda_max` down to
/// `lambda_max * ratio`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(lambda_max: f64, spec: GridSpec) -> Result<Self> {
        if !(lambda_max > 0.0 && lambda_max.is_finite()) {
            return Err(Error::DegenerateGrid);
        }
        let GridSpec { count, ratio } = GridSpec::new(spec.count, spec.ratio)?;
        let step = ratio.ln() / (count - 1) as f64;
        let values = (0..count).map(|k| lambda_max * (step * k as f64).exp()).collect();
        Ok(LambdaGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lambda_max(&self) -> f64 {
        self.values[0]
    }
}

/// `max_i |x_iᵀ y| / n` over every column of every matrix.
pub fn lambda_max(matrices: &[&DMatrix<f64>], y: &DVector<f64>, n: usize) -> f64 {
    matrices
        .iter()
        .map(|m| m.tr_mul(y).amax())
        .fold(0.0, f64::max)
        / n as f64
}

/// Shared grid for a set of augmented design matrices.
pub fn make_grid(
    matrices: &[&DMatrix<f64>],
    y: &DVector<f64>,
    n: usize,
    count: usize,
    grid_ratio: f64,
) -> Result<LambdaGrid> {
    if let Some(m) = matrices.iter().find(|m| m.nrows() != y.len()) {
        return Err(Error::Dimension(format!("matrix has {} rows, response {}", m.nrows(), y.len())));
    }
    let spec = GridSpec::new(count, grid_ratio)?;
    LambdaGrid::new(lambda_max(matrices, y, n), spec)
}

/// Design matrix together with its Gram matrix, reusable across responses.
#[derive(Debug, Clone)]
pub struct LassoDesign {
    x: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl LassoDesign {
    pub fn new(x: DMatrix<f64>) -> Self {
        let gram = x.tr_mul(&x);
        LassoDesign { x, gram }
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }
}

/// Sparse coefficient vectors, one per grid point.
#[derive(Debug, Clone)]
pub struct LassoPath {
    grid: LambdaGrid,
    ncols: usize,
    coefs: Vec<Vec<(usize, f64)>>,
    permutation: Vec<usize>,
}

impl LassoPath {
    pub fn grid(&self) -> &LambdaGrid {
        &self.grid
    }

    /// Column visiting order used by the solver.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn coefficients(&self, k: usize) -> DVector<f64> {
        let mut b = DVector::zeros(self.ncols);
        for &(j, v) in &self.coefs[k] {
            b[j] = v;
        }
        b
    }

    /// Largest grid lambda at which each column is nonzero; 0 if never.
    pub fn entry_lambdas(&self) -> Vec<f64> {
        let mut entry = vec![0.0; self.ncols];
        for (k, nz) in self.coefs.iter().enumerate().rev() {
            for &(j, _) in nz {
                entry[j] = self.grid.values[k];
            }
        }
        entry
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cholesky factor of a Gram sub-block, grown one column at a time.
///
/// Columns keep the order in which they were added so that a support which
/// only gains columns costs a single forward substitution per new column.
#[derive(Default)]
struct GrowingCholesky {
    cols: Vec<usize>,
    /// Row `i` of the lower factor, `i + 1` entries.
    rows: Vec<Vec<f64>>,
}

impl GrowingCholesky {
    fn truncate(&mut self, len: usize) {
        self.cols.truncate(len);
        self.rows.truncate(len);
    }

    fn push(&mut self, gram: &DMatrix<f64>, j: usize) -> bool {
        let k = self.cols.len();
        let mut row = Vec::with_capacity(k + 1);
        for a in 0..k {
            let dot: f64 = row.iter().zip(&self.rows[a]).map(|(x, y)| x * y).sum();
            row.push((gram[(j, self.cols[a])] - dot) / self.rows[a][a]);
        }
        let rest = gram[(j, j)] - row.iter().map(|v| v * v).sum::<f64>();
        if !(rest > 1e-14 * gram[(j, j)]) {
            return false;
        }
        row.push(rest.sqrt());
        self.cols.push(j);
        self.rows.push(row);
        true
    }

    /// Drop column `pos`, restoring triangularity with Givens rotations.
    fn remove(&mut self, pos: usize) {
        self.cols.remove(pos);
        self.rows.remove(pos);
        for r in pos..self.rows.len() {
            let (a, b) = (self.rows[r][r], self.rows[r][r + 1]);
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for row in &mut self.rows[r..] {
                let (x, y) = (row[r], row[r + 1]);
                row[r] = c * x + s * y;
                row[r + 1] = c * y - s * x;
            }
            self.rows[r].truncate(r + 1);
        }
    }

    /// Refactor for `support`; `member` flags its columns.
    fn set_support(&mut self, gram: &DMatrix<f64>, support: &[usize], member: &[bool]) -> bool {
        for pos in (0..self.cols.len()).rev() {
            if !member[self.cols[pos]] {
                self.remove(pos);
            }
        }
        if self.rows.iter().enumerate().any(|(i, r)| !(r[i] > 0.0)) {
            self.truncate(0);
        }
        let mut present = vec![false; member.len()];
        for &j in &self.cols {
            present[j] = true;
        }
        for &j in support {
            if !present[j] && !self.push(gram, j) {
                self.truncate(0);
                return false;
            }
        }
        true
    }

    fn solve(&self, rhs: &mut [f64]) {
        let k = self.cols.len();
        for a in 0..k {
            let dot: f64 = self.rows[a][..a].iter().zip(&rhs[..a]).map(|(x, y)| x * y).sum();
            rhs[a] = (rhs[a] - dot) / self.rows[a][a];
        }
        for a in (0..k).rev() {
            let mut v = rhs[a];
            for b in a + 1..k {
                v -= self.rows[b][a] * rhs[b];
            }
            rhs[a] = v / self.rows[a][a];
        }
    }
}

struct Solver<'a> {
    design: &'a LassoDesign,
    xty: DVector<f64>,
    beta: Vec<f64>,
    /// `x_jᵀ r`; exact for active columns, refreshed for the rest before each
    /// full sweep.
    grad: Vec<f64>,
    order: &'a [usize],
    /// Sorted positions (into `order`) of columns that have ever been nonzero.
    active: Vec<usize>,
    is_active: Vec<bool>,
    /// Factorization of the Gram block of the last support tried.
    factor: GrowingCholesky,
    in_support: Vec<bool>,
}

impl<'a> Solver<'a> {
    fn new(design: &'a LassoDesign, y: &DVector<f64>, order: &'a [usize]) -> Self {
        let xty = design.x.tr_mul(y);
        let m = design.ncols();
        Solver {
            design,
            grad: xty.iter().copied().collect(),
            xty,
            beta: vec![0.0; m],
            order,
            active: Vec::new(),
            is_active: vec![false; m],
            factor: GrowingCholesky::default(),
            in_support: vec![false; m],
        }
    }

    fn update(&mut self, j: usize, thresh: f64) -> f64 {
        let gjj = self.design.gram[(j, j)];
        if gjj <= 0.0 {
            return 0.0;
        }
        let old = self.beta[j];
        let new = soft_threshold(self.grad[j] + gjj * old, thresh) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
        }
        delta
    }

    fn full_sweep(&mut self, thresh: f64) -> f64 {
        let mut max_delta: f64 = 0.0;
        for pos in 0..self.order.len() {
            let j = self.order[pos];
            let delta = self.update(j, thresh);
            if delta != 0.0 {
                let col = self.design.gram.column(j);
                for (g, c) in self.grad.iter_mut().zip(col.as_slice()) {
                    *g -= c * delta;
                }
                if !self.is_active[j] {
                    self.is_active[j] = true;
                    let at = self.active.partition_point(|&q| q < pos);
                    self.active.insert(at, pos);
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    fn active_sweep(&mut self, thresh: f64) -> f64 {
        let mut max_delta: f64 = 0.0;
        for a in 0..self.active.len() {
            let j = self.order[self.active[a]];
            let delta = self.update(j, thresh);
            if delta != 0.0 {
                let col = self.design.gram.column(j);
                for &pos in &self.active {
                    let k = self.order[pos];
                    self.grad[k] -= col[k] * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    fn refresh_inactive(&mut self) {
        let gram = &self.design.gram;
        for k in 0..self.beta.len() {
            if self.is_active[k] {
                continue;
            }
            let mut g = self.xty[k];
            for &pos in &self.active {
                let j = self.order[pos];
                g -= gram[(k, j)] * self.beta[j];
            }
            self.grad[k] = g;
        }
    }

    /// Move towards the minimizer of the objective restricted to the current
    /// nonzero set and signs, stopping where a coefficient reaches zero; that
    /// coefficient is dropped and the step repeated. Every move lowers the
    /// objective. Returns whether any coefficient changed, in which case the
    /// active gradients are recomputed (inactive ones are left stale).
    fn exact_step(&mut self, thresh: f64) -> bool {
        let mut moved = false;
        for _ in 0..=self.active.len() {
            let support: Vec<usize> = self
                .active
                .iter()
                .map(|&pos| self.order[pos])
                .filter(|&j| self.beta[j] != 0.0)
                .collect();
            if support.is_empty() {
                break;
            }
            for &j in &support {
                self.in_support[j] = true;
            }
            let ok = self.factor.set_support(&self.design.gram, &support, &self.in_support);
            for &j in &support {
                self.in_support[j] = false;
            }
            if !ok {
                break;
            }
            let support = &self.factor.cols;
            let mut sol: Vec<f64> = support.iter().map(|&j| self.xty[j] - thresh * self.beta[j].signum()).collect();
            self.factor.solve(&mut sol);
            if !sol.iter().all(|v| v.is_finite()) {
                break;
            }
            // Largest step along the segment that keeps every sign.
            let crossing = |b: f64, v: f64| v == 0.0 || v.signum() != b.signum();
            let mut t: f64 = 1.0;
            for (&j, &v) in support.iter().zip(&sol) {
                let b = self.beta[j];
                if crossing(b, v) {
                    t = t.min(b / (b - v));
                }
            }
            let mut dropped = false;
            for (&j, &v) in support.iter().zip(&sol) {
                let b = self.beta[j];
                let next = if t == 1.0 { v } else { b + t * (v - b) };
                if (crossing(b, v) && b / (b - v) <= t) || crossing(b, next) {
                    self.beta[j] = 0.0;
                    dropped = true;
                } else {
                    self.beta[j] = next;
                }
            }
            moved = true;
            if !dropped {
                break;
            }
        }
        if moved {
            for &pos in &self.active {
                let k = self.order[pos];
                self.grad[k] = self.xty[k];
            }
            for &q in &self.active {
                let j = self.order[q];
                let b = self.beta[j];
                if b != 0.0 {
                    let col = self.design.gram.column(j);
                    let col = col.as_slice();
                    for &pos in &self.active {
                        let k = self.order[pos];
                        self.grad[k] -= col[k] * b;
                    }
                }
            }
        }
        moved
    }

    fn solve(&mut self, lambda: f64, lambda_index: usize) -> Result<()> {
        let thresh = lambda * self.design.n() as f64;
        let mut sweeps = 0;
        // Along the path the support rarely changes between grid points, so
        // the exact step from the previous support usually lands on the
        // answer.
        if self.exact_step(thresh) {
            self.refresh_inactive();
        }
        loop {
            sweeps += 1;
            if self.full_sweep(thresh) <= CONVERGENCE_TOL {
                return Ok(());
            }
            let mut inner = 0;
            loop {
                sweeps += 1;
                inner += 1;
                if sweeps > MAX_SWEEPS {
                    return Err(Error::NonConvergence { lambda_index, sweeps });
                }
                if self.active_sweep(thresh) <= CONVERGENCE_TOL {
                    break;
                }
                // Slow progress usually means a nearly collinear active set;
                // the exact step jumps to (or towards) the point the sweeps
                // creep towards, and later sweeps confirm it.
                if inner % EXACT_STEP_EVERY == 0 {
                    self.exact_step(thresh);
                }
            }
            self.refresh_inactive();
        }
    }
}

fn random_order<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    order
}

fn check_shapes(design: &LassoDesign, y: &DVector<f64>) -> Result<()> {
    if design.n() != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, response has {}",
            design.n(),
            y.len()
        )));
    }
    Ok(())
}

/// Full coefficient path with a uniformly random column visiting order.
pub fn lasso_path<R: Rng + ?Sized>(
    design: &LassoDesign,
    y: &DVector<f64>,
    grid: &LambdaGrid,
    rng: &mut R,
) -> Result<LassoPath> {
    check_shapes(design, y)?;
    let order = random_order(design.ncols(), rng);
    let mut solver = Solver::new(design, y, &order);
    let mut coefs = Vec::with_capacity(grid.len());
    for (k, &lambda) in grid.values().iter().enumerate() {
        solver.solve(lambda, k)?;
        coefs.push(
            solver
                .beta
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect(),
        );
    }
    Ok(LassoPath { grid: grid.clone(), ncols: design.ncols(), coefs, permutation: order })
}

/// Entry lambdas for the columns in `watch` (all columns if `None`), using a
/// caller-supplied visiting order. The path stops once every watched column
/// has entered; unwatched entries are then not meaningful.
pub(crate) fn entry_lambdas_with_order(
    design: &LassoDesign,
    y: &DVector<f64>,
    grid: &LambdaGrid,
    order: &[usize],
    watch: Option<&[usize]>,
) -> Result<Vec<f64>> {
    check_shapes(design, y)?;
    let m = design.ncols();
    let mut solver = Solver::new(design, y, order);
    let mut entry = vec![0.0; m];
    let mut entered = vec![false; m];
    let watched: Vec<usize> = watch.map(<[usize]>::to_vec).unwrap_or_else(|| (0..m).collect());
    let mut waiting = watched.len();
    for (k, &lambda) in grid.values().iter().enumerate() {
        if waiting == 0 {
            break;
        }
        solver.solve(lambda, k)?;
        for &pos in &solver.active {
            let j = order[pos];
            if !entered[j] && solver.beta[j] != 0.0 {
                entered[j] = true;
                entry[j] = lambda;
            }
        }
        waiting = watched.iter().filter(|&&j| !entered[j]).count();
    }
    Ok(entry)
}

/// Entry lambdas for all columns with a random visiting order.
pub fn entry_lambdas<R: Rng + ?Sized>(
    design: &LassoDesign,
    y: &DVector<f64>,
    grid: &LambdaGrid,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let order = random_order(design.ncols(), rng);
    entry_lambdas_with_order(design, y, grid, &order, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, m: usize, seed: u64) -> (LassoDesign, DVector<f64>) {
        let mut rng = rng_from(seed);
        let mut x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut c in x.column_iter_mut() {
            let norm = c.norm();
            c /= norm;
        }
        let beta = DVector::from_fn(m, |j, _| if j < 3 { 2.0 } else { 0.0 });
        let y = &x * beta + DVector::from_fn(n, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
        (LassoDesign::new(x), y)
    }

    #[test]
    fn growing_cholesky_tracks_support_changes() {
        let (design, _) = random_problem(40, 12, 31);
        let gram = &design.gram;
        let mut f = GrowingCholesky::default();
        let supports: [&[usize]; 4] = [&[0, 3, 5, 7], &[0, 3, 5, 7, 9, 11], &[3, 7, 9, 11, 2], &[11, 1]];
        for support in supports {
            let mut member = vec![false; 12];
            for &j in support {
                member[j] = true;
            }
            assert!(f.set_support(gram, support, &member));
            let mut cols = f.cols.clone();
            cols.sort_unstable();
            let mut want = support.to_vec();
            want.sort_unstable();
            assert_eq!(cols, want);

            let rhs: Vec<f64> = (0..f.cols.len()).map(|a| 1.0 + a as f64).collect();
            let mut sol = rhs.clone();
            f.solve(&mut sol);
            let k = f.cols.len();
            let sub = DMatrix::from_fn(k, k, |a, b| gram[(f.cols[a], f.cols[b])]);
            let direct = sub.lu().solve(&DVector::from_vec(rhs)).unwrap();
            for a in 0..k {
                assert!((sol[a] - direct[a]).abs() < 1e-10 * (1.0 + direct[a].abs()));
            }
        }
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = LambdaGrid::new(2.0, GridSpec::new(5, 1e-4).unwrap()).unwrap();
        let v = g.values();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0], 2.0);
        assert!((v[4] - 2e-4).abs() < 1e-15);
        for w in v.windows(2) {
            assert!((w[1] / w[0] - 0.1).abs() < 1e-12);
        }
        assert_eq!(grid_count(5, 3, 50), 1000);
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(LambdaGrid::new(0.0, GridSpec { count: 5, ratio: 0.1 }), Err(Error::DegenerateGrid)));
        assert!(GridSpec::new(1, 0.1).is_err());
        assert!(GridSpec::new(5, 1.0).is_err());
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let y = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(make_grid(&[&x], &y, 2, 10, 1e-3), Err(Error::DegenerateGrid)));
    }

    #[test]
    fn lambda_max_single_and_negated_column() {
        let y = DVector::from_vec(vec![3.0, 4.0]);
        let x = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let g = make_grid(&[&x], &y, 2, 3, 0.5).unwrap();
        assert!((g.lambda_max() - 5.0 / 2.0).abs() < 1e-12);
        let both = DMatrix::from_column_slice(2, 2, &[0.6, 0.8, -0.6, -0.8]);
        let g2 = make_grid(&[&both], &y, 2, 3, 0.5).unwrap();
        assert_eq!(g.lambda_max(), g2.lambda_max());
    }

    #[test]
    fn zero_solution_just_above_lambda_max() {
        let (design, y) = random_problem(50, 10, 1);
        let lmax = lambda_max(&[design.x()], &y, 50);
        let grid = LambdaGrid::new(lmax * (1.0 + 1e-9), GridSpec::new(2, 0.5).unwrap()).unwrap();
        let path = lasso_path(&design, &y, &grid, &mut rng_from(0)).unwrap();
        assert!(path.coefficients(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_design_is_soft_thresholding() {
        let n = 8;
        let mut x = DMatrix::zeros(n, 4);
        for j in 0..4 {
            x[(2 * j, j)] = 0.6;
            x[(2 * j + 1, j)] = 0.8;
        }
        let y = DVector::from_vec(vec![1.0, 2.0, -0.5, 0.1, 3.0, -3.0, 0.2, 0.2]);
        let design = LassoDesign::new(x.clone());
        let grid = make_grid(&[&x], &y, n, 40, 1e-3).unwrap();
        let path = lasso_path(&design, &y, &grid, &mut rng_from(4)).unwrap();
        let xty = x.tr_mul(&y) / n as f64;
        for (k, &lambda) in grid.values().iter().enumerate() {
            let b = path.coefficients(k);
            for j in 0..4 {
                assert!((b[j] - n as f64 * soft_threshold(xty[j], lambda)).abs() < 1e-6);
            }
        }
        let entry = path.entry_lambdas();
        for j in 0..4 {
            let expect = grid.values().iter().copied().find(|&l| l < xty[j].abs()).unwrap_or(0.0);
            assert_eq!(entry[j], expect);
        }
    }

    #[test]
    fn zero_response_gives_zero_path() {
        let (design, _) = random_problem(20, 5, 2);
        let y = DVector::zeros(20);
        let grid = LambdaGrid::new(1.0, GridSpec::new(10, 1e-3).unwrap()).unwrap();
        let path = lasso_path(&design, &y, &grid, &mut rng_from(0)).unwrap();
        assert!((0..10).all(|k| path.coefficients(k).iter().all(|&v| v == 0.0)));
        assert!(path.entry_lambdas().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn scalar_problem_enters_below_closed_form() {
        // x = e1 scaled to unit norm, y = 3x: nonzero exactly when λ < 3/n
        let n = 4;
        let mut x = DMatrix::zeros(n, 1);
        x[(0, 0)] = 1.0;
        let y = &x.column(0) * 3.0;
        let design = LassoDesign::new(x.clone());
        let grid = LambdaGrid::new(1.5, GridSpec::new(30, 1e-2).unwrap()).unwrap();
        let path = lasso_path(&design, &y, &grid, &mut rng_from(0)).unwrap();
        for (k, &lambda) in grid.values().iter().enumerate() {
            let b = path.coefficients(k)[0];
            assert_eq!(b != 0.0, lambda < 3.0 / n as f64, "λ = {lambda}");
            if b != 0.0 {
                assert!((b - (3.0 - n as f64 * lambda)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn early_stopping_agrees_with_full_path() {
        let (design, y) = random_problem(60, 20, 3);
        let grid = make_grid(&[design.x()], &y, 60, 200, 1e-3).unwrap();
        let path = lasso_path(&design, &y, &grid, &mut rng_from(9)).unwrap();
        let order = path.permutation().to_vec();
        let fast = entry_lambdas_with_order(&design, &y, &grid, &order, Some(&[0, 5, 7])).unwrap();
        let full = path.entry_lambdas();
        for j in [0, 5, 7] {
            assert_eq!(fast[j], full[j]);
        }
        assert_eq!(entry_lambdas(&design, &y, &grid, &mut rng_from(9)).unwrap(), full);
    }

    pub(crate) fn kkt_residual(design: &LassoDesign, y: &DVector<f64>, path: &LassoPath) -> f64 {
        let n = design.n() as f64;
        let mut worst: f64 = 0.0;
        for (k, &lambda) in path.grid().values().iter().enumerate() {
            let b = path.coefficients(k);
            let corr = design.x().tr_mul(&(y - design.x() * &b)) / n;
            for j in 0..b.len() {
                let v = if b[j] == 0.0 {
                    (corr[j].abs() - lambda).max(0.0)
                } else {
                    (corr[j] - lambda * b[j].signum()).abs()
                };
                worst = worst.max(v);
            }
        }
        worst
    }

    #[test]
    fn kkt_holds_on_random_problems() {
        for seed in 0..10 {
            let (design, y) = random_problem(80, 30, seed);
            let grid = make_grid(&[design.x()], &y, 80, 100, 1e-3).unwrap();
            let path = lasso_path(&design, &y, &grid, &mut rng_from(seed)).unwrap();
            assert!(kkt_residual(&design, &y, &path) <= 1e-5);
        }
    }

    #[test]
    fn entry_scores_do_not_depend_on_visiting_order() {
        let (design, y) = random_problem(40, 8, 5);
        let grid = make_grid(&[design.x()], &y, 40, 60, 1e-2).unwrap();
        let a = entry_lambdas(&design, &y, &grid, &mut rng_from(1)).unwrap();
        let b = entry_lambdas(&design, &y, &grid, &mut rng_from(2)).unwrap();
        assert_eq!(a, b);
    }
}
