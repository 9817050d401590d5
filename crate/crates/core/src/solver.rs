//! Discretization onto uniform grids and minimization of the discrete
//! entropic functional
//! `J_eps(p) = sum c_ij p_ij + eps sum p_ij ln(p_ij / (a_i b_j))`
//! over plans with marginals `a`, `b`.
//!
//! The minimizer has the form `p_ij = a_i b_j exp((alpha_i + beta_j - c_ij) / eps)`.
//! Sinkhorn runs in log space. Because the grid is uniform and the cost is
//! `h |i - j|`, each soft-min over a row or column is a two-sided
//! exponentially decaying sum, computed by two linear recursions instead of
//! a dense `n x n` pass.

use std::fmt::Write as _;

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;
use crate::measures::{Interval, Measure1D};
use crate::numeric::log_add_exp;
use crate::structure::{Sign, SignDecomposition};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const ORACLE_MAX_N: usize = 6;

/// Uniform grid over the common hull with the cell masses of both measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    edges: Vec<f64>,
    h: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Grid {
    pub fn new(mu: &Measure1D, nu: &Measure1D, n: usize) -> Result<Self, SolverError> {
        make_grid(mu, nu, n)
    }

    /// Grid over `[lo, hi]` with given cell masses.
    pub fn from_masses(lo: f64, hi: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self, SolverError> {
        let n = a.len();
        if b.len() != n {
            return Err(SolverError::DimensionMismatch {
                left: n,
                right: b.len(),
            });
        }
        if n == 0 {
            return Err(SolverError::GridTooSmall { min: 1, got: 0 });
        }
        let valid = |v: &[f64]| {
            v.iter().all(|&x| x >= 0.0 && x.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        };
        if !(hi > lo) || !valid(&a) || !valid(&b) {
            return Err(SolverError::InvalidMarginals);
        }
        Ok(Self {
            edges: uniform_edges(lo, hi, n),
            h: (hi - lo) / n as f64,
            a,
            b,
        })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn hull(&self) -> Interval {
        Interval {
            lo: self.edges[0],
            hi: self.edges[self.n()],
        }
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn cell(&self, i: usize) -> Interval {
        Interval {
            lo: self.edges[i],
            hi: self.edges[i + 1],
        }
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Midpoint distance `h |i - j|`.
    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.h * i.abs_diff(j) as f64
    }

    /// First and last cell with positive-length overlap with `iv`.
    pub fn cells_meeting(&self, iv: &Interval) -> (usize, usize) {
        let n = self.n();
        let first = self.edges[1..].partition_point(|&e| e <= iv.lo).min(n - 1);
        let last = self.edges[..n].partition_point(|&e| e < iv.hi).saturating_sub(1).max(first);
        (first, last.min(n - 1))
    }

    /// Discrete `W1` between the midpoint-supported marginals.
    pub fn w1_discrete(&self) -> f64 {
        let (mut ca, mut cb, mut total) = (0.0, 0.0, 0.0);
        for i in 0..self.n() - 1 {
            ca += self.a[i];
            cb += self.b[i];
            total += (ca - cb).abs();
        }
        total * self.h
    }
}

fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    let mut e: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    e[n] = hi;
    e
}

/// Uniform `n`-cell grid over the hull of both supports; masses from the CDFs.
pub fn make_grid(mu: &Measure1D, nu: &Measure1D, n: usize) -> Result<Grid, SolverError> {
    if n == 0 {
        return Err(SolverError::GridTooSmall { min: 1, got: n });
    }
    let (hm, hn) = (mu.hull(), nu.hull());
    let (lo, hi) = (hm.lo.min(hn.lo), hm.hi.max(hn.hi));
    let edges = uniform_edges(lo, hi, n);
    let masses = |m: &Measure1D| -> Vec<f64> {
        let cdf: Vec<f64> = edges.iter().map(|&e| m.cdf(e)).collect();
        cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
    };
    Ok(Grid {
        h: (hi - lo) / n as f64,
        a: masses(mu),
        b: masses(nu),
        edges,
    })
}

/// Dense row-major `n x n` plan.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlan {
    n: usize,
    data: Vec<f64>,
}

impl DiscretePlan {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self, SolverError> {
        if data.len() != n * n {
            return Err(SolverError::DimensionMismatch {
                left: n * n,
                right: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    /// `a (x) b`.
    pub fn product(a: &[f64], b: &[f64]) -> Self {
        let n = a.len();
        let mut p = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                p.data[i * n + j] = a[i] * b[j];
            }
        }
        p
    }

    /// Diagonal plan with the given masses.
    pub fn diagonal(m: &[f64]) -> Self {
        let mut p = Self::zeros(m.len());
        for (i, &v) in m.iter().enumerate() {
            p.data[i * m.len() + i] = v;
        }
        p
    }

    /// North-west corner rule: the discrete monotone (comonotone) plan.
    pub fn monotone(grid: &Grid) -> Self {
        let n = grid.n();
        let mut p = Self::zeros(n);
        let (mut ra, mut rb) = (grid.a[0], grid.b[0]);
        let (mut i, mut j) = (0, 0);
        while i < n && j < n {
            let m = ra.min(rb);
            p.data[i * n + j] += m;
            ra -= m;
            rb -= m;
            if ra <= rb {
                i += 1;
                if i < n {
                    ra = grid.a[i];
                }
            } else {
                j += 1;
                if j < n {
                    rb = grid.b[j];
                }
            }
        }
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        for row in self.data.chunks(self.n) {
            for (acc, v) in c.iter_mut().zip(row) {
                *acc += v;
            }
        }
        c
    }

    /// Larger of the L1 row and column deviations from the grid marginals.
    pub fn marginal_deviation(&self, grid: &Grid) -> f64 {
        let l1 = |s: Vec<f64>, t: &[f64]| s.iter().zip(t).map(|(x, y)| (x - y).abs()).sum::<f64>();
        l1(self.row_sums(), &grid.a).max(l1(self.col_sums(), &grid.b))
    }

    /// Alternating row/column rescaling on the current support.
    pub fn rescale_to_marginals(&mut self, grid: &Grid, tol: f64, max_sweeps: usize) {
        let n = self.n;
        for _ in 0..max_sweeps {
            let rows = self.row_sums();
            for (i, &r) in rows.iter().enumerate() {
                let f = if r > 0.0 { grid.a[i] / r } else { 0.0 };
                self.data[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= f);
            }
            let cols = self.col_sums();
            let f: Vec<f64> = cols
                .iter()
                .zip(&grid.b)
                .map(|(&c, &b)| if c > 0.0 { b / c } else { 0.0 })
                .collect();
            for row in self.data.chunks_mut(n) {
                row.iter_mut().zip(&f).for_each(|(v, s)| *v *= s);
            }
            if self.marginal_deviation(grid) <= tol {
                break;
            }
        }
    }

    /// Row-major CSV with a one-line `# n=<n> hull=<lo>,<hi>` header.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let hull = grid.hull();
        let mut s = format!("# n={} hull={:.16e},{:.16e}\n", self.n, hull.lo, hull.hi);
        for row in self.data.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

/// `sum c p + eps sum p ln(p / (a b))`; `+inf` if `p` charges a cell where
/// `a_i b_j = 0`.
pub fn j_eps(p: &DiscretePlan, g: &Grid, eps: f64) -> f64 {
    let (cost, ent) = cost_and_entropy(p, g);
    cost + eps * ent
}

/// Transport cost and discrete relative entropy against `a (x) b`.
pub fn cost_and_entropy(p: &DiscretePlan, g: &Grid) -> (f64, f64) {
    let n = g.n();
    let mut cost = 0.0;
    let mut ent = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = p.get(i, j);
            if v <= 0.0 {
                continue;
            }
            let r = g.a[i] * g.b[j];
            if r <= 0.0 {
                return (cost, f64::INFINITY);
            }
            cost += g.cost(i, j) * v;
            ent += v * (v / r).ln();
        }
    }
    (cost, ent)
}

/// `(cost - w1) / eps + Ent - |ln 2 eps| massA`.
pub fn f_eps(p: &DiscretePlan, g: &Grid, eps: f64, w1: f64, mass_a: f64) -> f64 {
    let (cost, ent) = cost_and_entropy(p, g);
    (cost - w1) / eps + ent - (2.0 * eps).ln().abs() * mass_a
}

/// Total variation `(1/2) sum |p - q|`.
pub fn plan_tv(p: &DiscretePlan, q: &DiscretePlan) -> Result<f64, SolverError> {
    if p.n != q.n {
        return Err(SolverError::DimensionMismatch {
            left: p.n,
            right: q.n,
        });
    }
    Ok(0.5 * p.data.iter().zip(&q.data).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub plan: DiscretePlan,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
    pub j_eps: f64,
    pub iterations: usize,
    pub marginal_residual: f64,
    pub converged: bool,
    /// Marginal residual every 10 iterations of the final stage.
    pub residual_trace: Vec<f64>,
}

/// `out_i = lse_j (w_j - kappa |i - j|)`.
fn laplace_lse(w: &[f64], kappa: f64, left: &mut [f64], out: &mut [f64]) {
    let n = w.len();
    let mut acc = f64::NEG_INFINITY;
    for i in 0..n {
        acc = log_add_exp(acc - kappa, w[i]);
        left[i] = acc;
    }
    let mut right = f64::NEG_INFINITY;
    out[n - 1] = left[n - 1];
    for i in (0..n - 1).rev() {
        right = log_add_exp(right, w[i + 1]) - kappa;
        out[i] = log_add_exp(left[i], right);
    }
}

fn validate(grid: &Grid, eps: f64) -> Result<(), SolverError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SolverError::NonpositiveEps(eps));
    }
    if grid.n() == 0 {
        return Err(SolverError::GridTooSmall { min: 1, got: 0 });
    }
    Ok(())
}

/// Log-domain Sinkhorn with eps-scaling from the hull length down to `eps`.
pub fn sinkhorn(grid: &Grid, eps: f64, tol: f64, max_iter: usize) -> Result<SinkhornResult, SolverError> {
    validate(grid, eps)?;
    let mut stages = vec![eps];
    let top = grid.hull().length();
    while *stages.last().unwrap() < top {
        let e = stages.last().unwrap() * 2.0;
        stages.push(e);
    }
    stages.reverse();
    let n = grid.n();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut used = 0;
    for &e in &stages[..stages.len() - 1] {
        let r = run_sinkhorn(grid, e, tol.max(1e-4), max_iter - used, &mut alpha, &mut beta);
        used += r.0;
    }
    finish(grid, eps, tol, max_iter.saturating_sub(used), alpha, beta, used)
}

/// Sinkhorn at `eps` starting from given log scalings.
pub fn sinkhorn_from(
    grid: &Grid,
    eps: f64,
    tol: f64,
    max_iter: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
) -> Result<SinkhornResult, SolverError> {
    validate(grid, eps)?;
    let n = grid.n();
    if alpha.len() != n || beta.len() != n {
        return Err(SolverError::DimensionMismatch {
            left: n,
            right: alpha.len().min(beta.len()),
        });
    }
    finish(grid, eps, tol, max_iter, alpha, beta, 0)
}

fn finish(
    grid: &Grid,
    eps: f64,
    tol: f64,
    max_iter: usize,
    mut alpha: Vec<f64>,
    mut beta: Vec<f64>,
    prior: usize,
) -> Result<SinkhornResult, SolverError> {
    let (iters, trace) = run_sinkhorn(grid, eps, tol, max_iter, &mut alpha, &mut beta);
    let plan = materialize(grid, eps, &alpha, &beta);
    let marginal_residual = plan.marginal_deviation(grid);
    let converged = marginal_residual <= tol;
    if !converged {
        debug!("sinkhorn eps={eps} stopped at residual {marginal_residual:e} after {iters} iterations");
    }
    Ok(SinkhornResult {
        j_eps: j_eps(&plan, grid, eps),
        plan,
        alpha,
        beta,
        eps,
        iterations: prior + iters,
        marginal_residual,
        converged,
        residual_trace: trace,
    })
}

/// Alternating updates; returns iterations used and the residual trace.
fn run_sinkhorn(
    grid: &Grid,
    eps: f64,
    tol: f64,
    max_iter: usize,
    alpha: &mut [f64],
    beta: &mut [f64],
) -> (usize, Vec<f64>) {
    let n = grid.n();
    let kappa = grid.h / eps;
    let la: Vec<f64> = grid.a.iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = grid.b.iter().map(|x| x.ln()).collect();
    let mut w = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut trace = Vec::new();

    let row_update = |alpha: &mut [f64], beta: &[f64], w: &mut [f64], s: &mut [f64], scratch: &mut [f64]| {
        for j in 0..n {
            w[j] = lb[j] + beta[j] / eps;
        }
        laplace_lse(w, kappa, scratch, s);
        for i in 0..n {
            alpha[i] = if grid.a[i] > 0.0 { -eps * s[i] } else { 0.0 };
        }
    };
    row_update(alpha, beta, &mut w, &mut s, &mut scratch);

    let mut it = 0;
    while it < max_iter {
        it += 1;
        for i in 0..n {
            w[i] = la[i] + alpha[i] / eps;
        }
        laplace_lse(&w, kappa, &mut scratch, &mut s);
        // Column residual of the current (row-feasible) plan.
        let mut res = 0.0;
        for j in 0..n {
            if grid.b[j] > 0.0 {
                res += grid.b[j] * ((beta[j] / eps + s[j]).exp() - 1.0).abs();
                beta[j] = -eps * s[j];
            } else {
                beta[j] = 0.0;
            }
        }
        row_update(alpha, beta, &mut w, &mut s, &mut scratch);
        if it % 10 == 0 {
            trace.push(res);
        }
        if res <= tol * 0.5 || !res.is_finite() {
            break;
        }
    }
    (it, trace)
}

fn materialize(grid: &Grid, eps: f64, alpha: &[f64], beta: &[f64]) -> DiscretePlan {
    let n = grid.n();
    let mut p = DiscretePlan::zeros(n);
    for i in 0..n {
        if grid.a[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if grid.b[j] == 0.0 {
                continue;
            }
            let e = (alpha[i] + beta[j] - grid.cost(i, j)) / eps;
            p.data[i * n + j] = grid.a[i] * grid.b[j] * e.exp();
        }
    }
    p
}

/// Support constraint as a row-major boolean matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    n: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(n: usize, allowed: Vec<bool>) -> Result<Self, SolverError> {
        if allowed.len() != n * n {
            return Err(SolverError::DimensionMismatch {
                left: n * n,
                right: allowed.len(),
            });
        }
        Ok(Self { n, allowed })
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            allowed: vec![true; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self { n, allowed }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    /// Per-line `[first, last]` ranges if every row (or column) is contiguous.
    fn ranges(&self, by_row: bool) -> Option<Vec<Option<(usize, usize)>>> {
        let n = self.n;
        let at = |line: usize, k: usize| if by_row { self.get(line, k) } else { self.get(k, line) };
        let mut out = Vec::with_capacity(n);
        for line in 0..n {
            let first = (0..n).find(|&k| at(line, k));
            match first {
                None => out.push(None),
                Some(f) => {
                    let last = (f..n).rev().find(|&k| at(line, k)).unwrap();
                    if (f..=last).any(|k| !at(line, k)) {
                        return None;
                    }
                    out.push(Some((f, last)));
                }
            }
        }
        Some(out)
    }
}

/// Bottom-up segment tree over `w` (leaves at `n..2n`).
fn fill_sum_tree(w: &[f64], tree: &mut [f64]) {
    let n = w.len();
    tree[n..].copy_from_slice(w);
    for k in (1..n).rev() {
        tree[k] = tree[2 * k] + tree[2 * k + 1];
    }
}

/// Sum of leaves `first..=last`; only nonnegative terms are added.
fn range_sum(tree: &[f64], first: usize, last: usize) -> f64 {
    let n = tree.len() / 2;
    let (mut l, mut r) = (first + n, last + n + 1);
    let mut acc = 0.0;
    while l < r {
        if l & 1 == 1 {
            acc += tree[l];
            l += 1;
        }
        if r & 1 == 1 {
            r -= 1;
            acc += tree[r];
        }
        l >>= 1;
        r >>= 1;
    }
    acc
}

/// Support of the limit plan on a grid: the diagonal on Zero regions, the
/// upper triangle (diagonal included) on Plus regions, the lower on Minus.
pub fn limit_mask(grid: &Grid, dec: &SignDecomposition) -> Mask {
    let n = grid.n();
    let mut m = vec![false; n * n];
    for r in &dec.regions {
        let (lo, hi) = grid.cells_meeting(&r.interval);
        for i in lo..=hi {
            match r.sign {
                Sign::Zero => m[i * n + i] = true,
                Sign::Plus => (i..=hi).for_each(|j| m[i * n + j] = true),
                Sign::Minus => (lo..=i).for_each(|j| m[i * n + j] = true),
            }
        }
    }
    Mask { n, allowed: m }
}

/// Entropy projection of `a (x) b` onto plans with marginals `a`, `b`
/// supported in `mask`, by iterative proportional fitting.
pub fn ipf_masked(grid: &Grid, mask: &Mask, tol: f64, max_iter: usize) -> Result<DiscretePlan, SolverError> {
    let n = grid.n();
    if mask.n != n {
        return Err(SolverError::DimensionMismatch { left: n, right: mask.n });
    }
    let (a, b) = (&grid.a, &grid.b);
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    let fast = mask.ranges(true).zip(mask.ranges(false));

    // Weighted sums over allowed partners. Range sums come from a tree of
    // partial sums: prefix differences cancel badly when weights vary widely.
    let mut tree = vec![0.0; 2 * n];
    let row_sum = |v: &[f64], out: &mut [f64], tree: &mut [f64]| match &fast {
        Some((rows, _)) => {
            let w: Vec<f64> = (0..n).map(|j| v[j] * b[j]).collect();
            fill_sum_tree(&w, tree);
            for i in 0..n {
                out[i] = rows[i].map_or(0.0, |(f, l)| range_sum(tree, f, l));
            }
        }
        None => {
            for i in 0..n {
                out[i] = (0..n).filter(|&j| mask.get(i, j)).map(|j| v[j] * b[j]).sum();
            }
        }
    };
    let col_sum = |u: &[f64], out: &mut [f64], tree: &mut [f64]| match &fast {
        Some((_, cols)) => {
            let w: Vec<f64> = (0..n).map(|i| u[i] * a[i]).collect();
            fill_sum_tree(&w, tree);
            for j in 0..n {
                out[j] = cols[j].map_or(0.0, |(f, l)| range_sum(tree, f, l));
            }
        }
        None => {
            for j in 0..n {
                out[j] = (0..n).filter(|&i| mask.get(i, j)).map(|i| u[i] * a[i]).sum();
            }
        }
    };

    let mut s = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut last_check = f64::INFINITY;
    for it in 1..=max_iter {
        row_sum(&v, &mut s, &mut tree);
        for i in 0..n {
            u[i] = if a[i] > 0.0 && s[i] > 0.0 { 1.0 / s[i] } else { 0.0 };
        }
        col_sum(&u, &mut s, &mut tree);
        let mut res = 0.0;
        for j in 0..n {
            if b[j] > 0.0 {
                let nv = if s[j] > 0.0 { 1.0 / s[j] } else { 0.0 };
                res += b[j] * (v[j] * s[j] - 1.0).abs();
                v[j] = nv;
            } else {
                v[j] = 0.0;
            }
        }
        best = best.min(res);
        if res <= tol * 0.5 {
            break;
        }
        if it % 5000 == 0 {
            if best > 0.999 * last_check {
                return Err(SolverError::Infeasible { residual: best });
            }
            last_check = best;
        }
        if it == max_iter {
            return Err(SolverError::Infeasible { residual: best });
        }
    }
    // Final row scaling so row sums are exact.
    row_sum(&v, &mut s, &mut tree);
    for i in 0..n {
        u[i] = if a[i] > 0.0 && s[i] > 0.0 { 1.0 / s[i] } else { 0.0 };
    }
    let mut p = DiscretePlan::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if mask.get(i, j) {
                p.data[i * n + j] = u[i] * v[j] * a[i] * b[j];
            }
        }
    }
    Ok(p)
}

/// Independent oracle for tiny grids: damped Newton ascent on the
/// (strictly concave after gauge fixing) dual of the discrete problem,
/// with dense LU solves.
pub fn brute_min(grid: &Grid, eps: f64) -> Result<DiscretePlan, SolverError> {
    let n = grid.n();
    if n > ORACLE_MAX_N {
        return Err(SolverError::OracleTooLarge {
            max: ORACLE_MAX_N,
            got: n,
        });
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SolverError::NonpositiveEps(eps));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| grid.a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| grid.b[j] > 0.0).collect();
    let (nr, nc) = (rows.len(), cols.len());
    let mids: Vec<f64> = (0..n).map(|i| grid.midpoint(i)).collect();
    let cost = |r: usize, c: usize| (mids[cols[c]] - mids[rows[r]]).abs();
    // Unknowns: alpha for every row, beta for all but the last column.
    let dim = nr + nc - 1;

    let kernel = |x: &DVector<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(nr, nc, |r, c| {
            let beta = if c + 1 < nc { x[nr + c] } else { 0.0 };
            grid.a[rows[r]] * grid.b[cols[c]] * ((x[r] + beta - cost(r, c)) / eps).exp()
        })
    };
    let dual = |x: &DVector<f64>, p: &DMatrix<f64>| -> f64 {
        let lin: f64 = (0..nr).map(|r| grid.a[rows[r]] * x[r]).sum::<f64>()
            + (0..nc - 1).map(|c| grid.b[cols[c]] * x[nr + c]).sum::<f64>();
        lin - eps * p.sum()
    };

    let gradient = |p: &DMatrix<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(dim);
        for r in 0..nr {
            g[r] = grid.a[rows[r]] - p.row(r).sum();
        }
        for c in 0..nc - 1 {
            g[nr + c] = grid.b[cols[c]] - p.column(c).sum();
        }
        g
    };

    let mut x = DVector::zeros(dim);
    let mut p = kernel(&x);
    let mut value = dual(&x, &p);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..2000 {
        let rs: Vec<f64> = (0..nr).map(|r| p.row(r).sum()).collect();
        let cs: Vec<f64> = (0..nc).map(|c| p.column(c).sum()).collect();
        let g = gradient(&p);
        grad_norm = g.abs().sum();
        if grad_norm <= 1e-15 {
            break;
        }
        let mut h = DMatrix::zeros(dim, dim);
        for r in 0..nr {
            h[(r, r)] = rs[r];
            for c in 0..nc - 1 {
                h[(r, nr + c)] = p[(r, c)];
                h[(nr + c, r)] = p[(r, c)];
            }
        }
        for c in 0..nc - 1 {
            h[(nr + c, nr + c)] = cs[c];
        }
        let Some(step) = h.lu().solve(&(g.clone() * eps)) else {
            return Err(SolverError::OracleDiverged(grad_norm));
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &x + &step * t;
            let pc = kernel(&cand);
            let vc = dual(&cand, &pc);
            // Near the optimum the dual is flat to rounding; a halved
            // gradient is then the only visible progress.
            let shrinks = gradient(&pc).abs().sum() <= 0.5 * grad_norm;
            if vc >= value + 1e-4 * t * slope || shrinks {
                x = cand;
                p = pc;
                value = vc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if grad_norm > 1e-11 {
        return Err(SolverError::OracleDiverged(grad_norm));
    }
    let mut plan = DiscretePlan::zeros(n);
    for r in 0..nr {
        for c in 0..nc {
            plan.set(rows[r], cols[c], p[(r, c)]);
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_tree_matches_direct_sums() {
        let w: Vec<f64> = (0..7).map(|k| 1.5f64.powi(k)).collect();
        let mut tree = vec![0.0; 14];
        fill_sum_tree(&w, &mut tree);
        for f in 0..7 {
            for l in f..7 {
                let direct: f64 = w[f..=l].iter().sum();
                assert!((range_sum(&tree, f, l) - direct).abs() < 1e-13 * direct);
            }
        }
    }
    use crate::instances;
    use crate::structure::{sign_decompose, DEFAULT_TAU_SIGN};

    fn sym2() -> Grid {
        Grid::from_masses(0.0, 1.0, vec![0.5, 0.5], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn make_grid_examples() {
        let u = instances::uniform(0.0, 1.0);
        let g = make_grid(&u, &u, 4).unwrap();
        assert_eq!(g.a(), &[0.25; 4]);
        assert_eq!(g.b(), &[0.25; 4]);
        let (mu, nu) = instances::e2();
        let g = make_grid(&mu, &nu, 4).unwrap();
        assert_eq!(g.a(), &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(g.b(), &[0.0, 0.0, 0.5, 0.5]);
        let (mu, nu) = instances::e4();
        let g = make_grid(&mu, &nu, 8).unwrap();
        assert_eq!(g.a(), &[0.125; 8]);
        let expected = [0.125, 0.125, 0.125, 0.125, 0.0, 0.0, 0.25, 0.25];
        for (x, y) in g.b().iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cells_meeting_uses_positive_overlap() {
        let u = instances::uniform(0.0, 1.0);
        let g = make_grid(&u, &u, 4).unwrap();
        assert_eq!(g.cells_meeting(&Interval { lo: 0.25, hi: 0.5 }), (1, 1));
        assert_eq!(g.cells_meeting(&Interval { lo: 0.3, hi: 0.6 }), (1, 2));
        assert_eq!(g.cells_meeting(&Interval { lo: 0.0, hi: 1.0 }), (0, 3));
    }

    #[test]
    fn huge_eps_gives_product() {
        let (mu, nu) = instances::e4();
        let g = make_grid(&mu, &nu, 16).unwrap();
        let prod = DiscretePlan::product(g.a(), g.b());
        // The deviation from the product is first order in 1/eps.
        let tv3 = plan_tv(&sinkhorn(&g, 1e3, 1e-13, DEFAULT_MAX_ITER).unwrap().plan, &prod).unwrap();
        let tv4 = plan_tv(&sinkhorn(&g, 1e4, 1e-13, DEFAULT_MAX_ITER).unwrap().plan, &prod).unwrap();
        assert!(tv3 <= 1e-3);
        assert!((tv3 / tv4 - 10.0).abs() < 0.01);
    }

    #[test]
    fn symmetric_two_cell_instance() {
        let g = sym2();
        let r = sinkhorn(&g, 0.1, 1e-12, DEFAULT_MAX_ITER).unwrap();
        assert!(r.converged);
        assert!((r.plan.get(0, 1) - r.plan.get(1, 0)).abs() < 1e-15);
        assert!(r.marginal_residual <= 1e-12);
        let o = brute_min(&g, 0.1).unwrap();
        for (x, y) in o.as_slice().iter().zip(r.plan.as_slice()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn product_form_is_exact() {
        let (mu, nu) = instances::e3();
        let g = make_grid(&mu, &nu, 64).unwrap();
        let r = sinkhorn(&g, 0.05, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let v = r.plan.get(i, j);
                if v > 0.0 {
                    let rec = g.a()[i] * g.b()[j] * ((r.alpha[i] + r.beta[j] - g.cost(i, j)) / 0.05).exp();
                    assert!((rec - v).abs() <= 1e-12 * v);
                }
            }
        }
    }

    #[test]
    fn residual_trace_is_nonincreasing() {
        let (mu, nu) = instances::e4();
        let g = make_grid(&mu, &nu, 128).unwrap();
        let r = sinkhorn(&g, 0.02, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(r.converged);
        for w in r.residual_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{w:?}");
        }
    }

    #[test]
    fn oracle_single_cell_and_size_limit() {
        let g = Grid::from_masses(0.0, 1.0, vec![1.0], vec![1.0]).unwrap();
        assert_eq!(brute_min(&g, 0.1).unwrap().get(0, 0), 1.0);
        let u = instances::uniform(0.0, 1.0);
        let big = make_grid(&u, &u, 7).unwrap();
        assert!(matches!(brute_min(&big, 0.1), Err(SolverError::OracleTooLarge { .. })));
    }

    #[test]
    fn nonpositive_eps_rejected() {
        assert!(matches!(sinkhorn(&sym2(), 0.0, 1e-9, 10), Err(SolverError::NonpositiveEps(_))));
    }

    #[test]
    fn objective_examples() {
        let u = instances::uniform(0.0, 1.0);
        let g = make_grid(&u, &u, 64).unwrap();
        let prod = DiscretePlan::product(g.a(), g.b());
        let expected: f64 = (0..64)
            .flat_map(|i| (0..64).map(move |j| (i, j)))
            .map(|(i, j)| g.cost(i, j) / 4096.0)
            .sum();
        assert!((j_eps(&prod, &g, 0.3) - expected).abs() < 1e-14);
        let diag = DiscretePlan::diagonal(g.a());
        let f = f_eps(&diag, &g, 0.01, 0.0, 1.0);
        assert!((f - (64f64.ln() - 0.02f64.ln().abs())).abs() < 1e-12);

        let (mu, nu) = instances::e2();
        let g = make_grid(&mu, &nu, 4).unwrap();
        let mut bad = DiscretePlan::zeros(4);
        bad.set(3, 3, 1.0);
        assert_eq!(j_eps(&bad, &g, 0.1), f64::INFINITY);
    }

    #[test]
    fn tv_examples() {
        let g = sym2();
        let prod = DiscretePlan::product(g.a(), g.b());
        let diag = DiscretePlan::diagonal(g.a());
        assert_eq!(plan_tv(&prod, &prod).unwrap(), 0.0);
        assert!((plan_tv(&prod, &diag).unwrap() - 0.5).abs() < 1e-15);
        let mut other = DiscretePlan::zeros(2);
        other.set(0, 1, 1.0);
        assert_eq!(plan_tv(&diag, &other).unwrap(), 1.0);
        assert!(matches!(
            plan_tv(&prod, &DiscretePlan::zeros(3)),
            Err(SolverError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ipf_examples() {
        let (mu, nu) = instances::e4();
        let g = make_grid(&mu, &nu, 16).unwrap();
        let p = ipf_masked(&g, &Mask::full(16), 1e-12, 1000).unwrap();
        assert!(plan_tv(&p, &DiscretePlan::product(g.a(), g.b())).unwrap() < 1e-12);

        let (mu, nu) = instances::e2();
        let g = make_grid(&mu, &nu, 16).unwrap();
        let p = ipf_masked(&g, &Mask::from_fn(16, |i, j| j > i), 1e-12, 1000).unwrap();
        assert!(plan_tv(&p, &DiscretePlan::product(g.a(), g.b())).unwrap() < 1e-12);
    }

    #[test]
    fn ipf_detects_infeasible_mask() {
        let (mu, nu) = instances::e3();
        let g = make_grid(&mu, &nu, 8).unwrap();
        let lower = Mask::from_fn(8, |i, j| j < i);
        assert!(matches!(
            ipf_masked(&g, &lower, 1e-9, 100_000),
            Err(SolverError::Infeasible { .. })
        ));
    }

    #[test]
    fn ipf_fixed_point_is_stable() {
        let (mu, nu) = instances::e3();
        let g = make_grid(&mu, &nu, 32).unwrap();
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        let mask = limit_mask(&g, &dec);
        let p = ipf_masked(&g, &mask, 1e-13, DEFAULT_MAX_ITER).unwrap();
        let mut q = p.clone();
        q.rescale_to_marginals(&g, 0.0, 1);
        for (x, y) in p.as_slice().iter().zip(q.as_slice()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn monotone_plan_has_grid_marginals() {
        let (mu, nu) = instances::e4();
        let g = make_grid(&mu, &nu, 32).unwrap();
        let p = DiscretePlan::monotone(&g);
        assert!(p.marginal_deviation(&g) < 1e-14);
        assert!((p.total() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn csv_header() {
        let g = sym2();
        let csv = DiscretePlan::diagonal(g.a()).to_csv(&g);
        assert!(csv.starts_with("# n=2 hull="));
        assert_eq!(csv.lines().count(), 3);
    }
}
