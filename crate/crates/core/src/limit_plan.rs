//! The entropy-minimal optimal plan selected by entropic regularization.
//!
//! On a maximal interval `I = (a, b)` where `D = F_mu - F_nu > 0`, let `S` be
//! a primitive of `mu / D`, `F = exp(S)` and `G = D / F`. Then
//! `rho1 = mu / G`, `rho2 = nu / F` satisfy `rho1 = F'`, `rho2 = -G'`, and
//! `rho1(x) rho2(y) 1{y > x}` is a transport plan between `mu|I` and `nu|I`
//! whose density against `mu (x) nu` is `1 / (G(x) F(y))`. Its relative
//! entropy is `-integral_I ln D d mu - mu(I)`.
//!
//! Negative intervals are handled by reflecting both measures through the
//! origin, building the positive-interval factor, and mapping back.
//!
//! All the piecewise integrals have elementary closed forms because `mu`, `nu`
//! are piecewise constant and `D` is piecewise linear. `S` is anchored at the
//! interval midpoint and kept in log space: `S -> -inf` at the entry end and
//! possibly `+inf` at the exit end.

use serde::Serialize;

use crate::error::LimitPlanError;
use crate::measures::{Interval, Measure1D, PiecewiseDensity};
use crate::numeric::{composite_tanh_sinh, knots_within, log_diff_exp, mean_log_linear, mean_reciprocal_linear};
use crate::solver::{DiscretePlan, Grid};
use crate::structure::{Region, Sign, SignDecomposition};

/// One linear piece of `D` inside a positive interval, in working coordinates.
#[derive(Debug, Clone)]
struct Piece {
    lo: f64,
    hi: f64,
    d_lo: f64,
    d_hi: f64,
    mu: f64,
    nu: f64,
    /// `S` at `lo` and `hi`.
    s_lo: f64,
    s_hi: f64,
    /// Piece lies left of the anchor, so `S` is integrated from `hi`.
    left_of_anchor: bool,
}

impl Piece {
    fn slope(&self) -> f64 {
        self.mu - self.nu
    }

    fn diff(&self, x: f64) -> f64 {
        let v = if x - self.lo <= self.hi - x {
            self.d_lo + self.slope() * (x - self.lo)
        } else {
            self.d_hi - self.slope() * (self.hi - x)
        };
        v.max(0.0)
    }

    fn primitive(&self, x: f64) -> f64 {
        if self.mu == 0.0 {
            return if self.left_of_anchor { self.s_hi } else { self.s_lo };
        }
        let d = self.diff(x);
        if self.left_of_anchor {
            self.s_hi - self.mu * (self.hi - x) * mean_reciprocal_linear(d, self.d_hi)
        } else {
            self.s_lo + self.mu * (x - self.lo) * mean_reciprocal_linear(self.d_lo, d)
        }
    }
}

/// Factor on a positive interval, in working coordinates.
#[derive(Debug, Clone)]
struct PositiveFactor {
    a: f64,
    b: f64,
    pieces: Vec<Piece>,
}

impl PositiveFactor {
    fn build(mu: &Measure1D, nu: &Measure1D, a: f64, b: f64) -> Result<Self, LimitPlanError> {
        let anchor = 0.5 * (a + b);
        let knots = knots_within(
            mu.breakpoints()
                .iter()
                .chain(nu.breakpoints())
                .copied()
                .chain(std::iter::once(anchor)),
            a,
            b,
        );
        let m = knots.len() - 1;
        let dens: Vec<(f64, f64)> = knots
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (mu.density_at(mid), nu.density_at(mid))
            })
            .collect();
        let anchor_idx = knots.iter().position(|&k| k == anchor).unwrap_or(m / 2);

        // D accumulated from whichever end is nearer, so it is exactly zero at
        // both ends and keeps full relative precision close to them.
        let mut d_at = vec![0.0; m + 1];
        for i in 0..anchor_idx {
            let (dm, dn) = dens[i];
            d_at[i + 1] = d_at[i] + (dm - dn) * (knots[i + 1] - knots[i]);
        }
        let mut d_back = vec![0.0; m + 1];
        for i in (anchor_idx..m).rev() {
            let (dm, dn) = dens[i];
            d_back[i] = d_back[i + 1] - (dm - dn) * (knots[i + 1] - knots[i]);
        }
        for (i, &k) in knots.iter().enumerate().take(m).skip(1) {
            let v = if i < anchor_idx {
                d_at[i]
            } else if i > anchor_idx {
                d_back[i]
            } else {
                0.5 * (d_at[i] + d_back[i])
            };
            if v < 0.0 {
                return Err(LimitPlanError::RegionNotSignDefinite { lo: a, hi: b });
            }
            if v == 0.0 {
                return Err(LimitPlanError::SingularIntegral { at: k });
            }
        }

        let mut pieces: Vec<Piece> = (0..m)
            .map(|i| {
                let left = i < anchor_idx;
                let pick = |j: usize| {
                    if j == 0 || j == m {
                        0.0
                    } else if left {
                        d_at[j]
                    } else {
                        d_back[j]
                    }
                };
                Piece {
                    lo: knots[i],
                    hi: knots[i + 1],
                    d_lo: pick(i),
                    d_hi: pick(i + 1),
                    mu: dens[i].0,
                    nu: dens[i].1,
                    s_lo: 0.0,
                    s_hi: 0.0,
                    left_of_anchor: left,
                }
            })
            .collect();

        let increment = |p: &Piece| {
            if p.mu == 0.0 {
                0.0
            } else {
                p.mu * (p.hi - p.lo) * mean_reciprocal_linear(p.d_lo, p.d_hi)
            }
        };
        let mut s = 0.0;
        for p in pieces[..anchor_idx].iter_mut().rev() {
            p.s_hi = s;
            s -= increment(p);
            p.s_lo = s;
        }
        let mut s = 0.0;
        for p in pieces[anchor_idx..].iter_mut() {
            p.s_lo = s;
            s += increment(p);
            p.s_hi = s;
        }
        Ok(Self { a, b, pieces })
    }

    fn piece(&self, x: f64) -> &Piece {
        let idx = self.pieces.partition_point(|p| p.hi < x);
        &self.pieces[idx.min(self.pieces.len() - 1)]
    }

    fn diff(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return 0.0;
        }
        self.piece(x).diff(x)
    }

    /// `ln F = S`.
    fn log_f(&self, x: f64) -> f64 {
        if x <= self.a {
            return f64::NEG_INFINITY;
        }
        if x >= self.b {
            let last = &self.pieces[self.pieces.len() - 1];
            return if last.mu > 0.0 { f64::INFINITY } else { last.s_lo };
        }
        self.piece(x).primitive(x)
    }

    /// `ln G = ln D - S`.
    fn log_g(&self, x: f64) -> f64 {
        if x >= self.b {
            return f64::NEG_INFINITY;
        }
        if x <= self.a {
            let first = &self.pieces[0];
            return if first.nu > 0.0 {
                f64::INFINITY
            } else {
                first.d_hi.ln() - first.s_hi
            };
        }
        let p = self.piece(x);
        p.diff(x).ln() - p.primitive(x)
    }

    fn rho1(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return 0.0;
        }
        let p = self.piece(x);
        if p.mu == 0.0 {
            0.0
        } else {
            p.mu * (-self.log_g(x)).exp()
        }
    }

    fn rho2(&self, y: f64) -> f64 {
        if y <= self.a || y >= self.b {
            return 0.0;
        }
        let p = self.piece(y);
        if p.nu == 0.0 {
            0.0
        } else {
            p.nu * (-self.log_f(y)).exp()
        }
    }

    /// `ln rho1([lo, hi]) = ln(F(hi) - F(lo))`.
    fn log_rho1_mass(&self, lo: f64, hi: f64) -> f64 {
        log_diff_exp(self.log_f(hi), self.log_f(lo))
    }

    /// `ln rho2([lo, hi]) = ln(G(lo) - G(hi))`.
    fn log_rho2_mass(&self, lo: f64, hi: f64) -> f64 {
        log_diff_exp(self.log_g(lo), self.log_g(hi))
    }

    fn nu_mass(&self, lo: f64, hi: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.nu * (p.hi.min(hi) - p.lo.max(lo)).max(0.0))
            .sum()
    }

    /// Mass of `rho1 (x) rho2` on `{lo < x < y < hi}`, which equals
    /// `nu([lo, hi]) - D(lo) + F(lo) G(hi)`.
    fn diagonal_cell_mass(&self, lo: f64, hi: f64) -> f64 {
        let cross = (self.log_f(lo) + self.log_g(hi)).exp();
        let cross = if cross.is_nan() { 0.0 } else { cross };
        (self.nu_mass(lo, hi) - self.diff(lo) + cross).max(0.0)
    }

    fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.pieces.iter().map(|p| p.lo).collect();
        k.push(self.b);
        k
    }

    /// `-integral ln D d mu - mu(I)`.
    fn entropy(&self) -> f64 {
        let mut total = 0.0;
        let mut mass = 0.0;
        for p in &self.pieces {
            if p.mu == 0.0 {
                continue;
            }
            let h = p.hi - p.lo;
            total -= p.mu * h * mean_log_linear(p.d_lo, p.d_hi);
            mass += p.mu * h;
        }
        total - mass
    }
}

/// Per-interval factor of the limit plan.
#[derive(Debug, Clone)]
pub struct LimitPlanFactor {
    pub interval: Interval,
    pub sign: Sign,
    /// Closed-form relative entropy of this block of the plan.
    pub entropy_value: f64,
    inner: PositiveFactor,
}

impl LimitPlanFactor {
    fn reflected(&self) -> bool {
        self.sign == Sign::Minus
    }

    fn work(&self, x: f64) -> f64 {
        if self.reflected() {
            -x
        } else {
            x
        }
    }

    /// Cumulative primitive `S` of `mu / |F_mu - F_nu|`, anchored at the
    /// interval midpoint; equals `ln F`.
    pub fn log_f(&self, x: f64) -> f64 {
        self.inner.log_f(self.work(x))
    }

    pub fn log_g(&self, x: f64) -> f64 {
        self.inner.log_g(self.work(x))
    }

    pub fn f(&self, x: f64) -> f64 {
        self.log_f(x).exp()
    }

    pub fn g(&self, x: f64) -> f64 {
        self.log_g(x).exp()
    }

    /// `|F_mu - F_nu|` on the interval, zero at its ends.
    pub fn abs_cdf_diff(&self, x: f64) -> f64 {
        self.inner.diff(self.work(x))
    }

    /// Lebesgue density of `rho1 = mu / G`.
    pub fn rho1(&self, x: f64) -> f64 {
        self.inner.rho1(self.work(x))
    }

    /// Lebesgue density of `rho2 = nu / F`.
    pub fn rho2(&self, y: f64) -> f64 {
        self.inner.rho2(self.work(y))
    }

    /// `rho1` mass of `[lo, hi]` (a subinterval of the factor interval).
    /// `F` and `G` may exceed the range of `f64` on thin regions; products of
    /// masses should go through [`Self::log_rho1_mass`].
    pub fn rho1_mass(&self, lo: f64, hi: f64) -> f64 {
        self.log_rho1_mass(lo, hi).exp()
    }

    pub fn rho2_mass(&self, lo: f64, hi: f64) -> f64 {
        self.log_rho2_mass(lo, hi).exp()
    }

    pub fn log_rho1_mass(&self, lo: f64, hi: f64) -> f64 {
        if self.reflected() {
            self.inner.log_rho1_mass(-hi, -lo)
        } else {
            self.inner.log_rho1_mass(lo, hi)
        }
    }

    pub fn log_rho2_mass(&self, lo: f64, hi: f64) -> f64 {
        if self.reflected() {
            self.inner.log_rho2_mass(-hi, -lo)
        } else {
            self.inner.log_rho2_mass(lo, hi)
        }
    }

    /// `1 / (G(x) F(y))` without the half-plane restriction; 0 where undefined.
    fn pair_density(&self, x: f64, y: f64) -> f64 {
        let v = (-(self.log_g(x) + self.log_f(y))).exp();
        if v.is_nan() {
            0.0
        } else {
            v
        }
    }

    /// Plan mass on `{(x, y) in [lo, hi]^2 : allowed}`.
    pub fn diagonal_cell_mass(&self, lo: f64, hi: f64) -> f64 {
        if self.reflected() {
            self.inner.diagonal_cell_mass(-hi, -lo)
        } else {
            self.inner.diagonal_cell_mass(lo, hi)
        }
    }

    /// Whether `(x, y)` lies in the open half where the plan may live.
    pub fn allowed(&self, x: f64, y: f64) -> bool {
        match self.sign {
            Sign::Minus => y < x,
            _ => y > x,
        }
    }

    /// Breakpoints of the piecewise structure, increasing, original coordinates.
    pub fn knots(&self) -> Vec<f64> {
        let mut k = self.inner.knots();
        if self.reflected() {
            k = k.into_iter().rev().map(|x| -x).collect();
        }
        k
    }
}

/// Builds the factor on one maximal signed region.
pub fn build_factor(
    mu: &Measure1D,
    nu: &Measure1D,
    region: &Region,
) -> Result<LimitPlanFactor, LimitPlanError> {
    let iv = region.interval;
    let inner = match region.sign {
        Sign::Plus => PositiveFactor::build(mu, nu, iv.lo, iv.hi)?,
        Sign::Minus => {
            let w = iv.reflect();
            PositiveFactor::build(&mu.reflect(), &nu.reflect(), w.lo, w.hi)?
        }
        Sign::Zero => {
            return Err(LimitPlanError::UnsignedRegion {
                lo: iv.lo,
                hi: iv.hi,
            })
        }
    };
    Ok(LimitPlanFactor {
        interval: iv,
        sign: region.sign,
        entropy_value: inner.entropy(),
        inner,
    })
}

/// `-integral_I ln|F_mu - F_nu| d mu - mu(I)`, closed form per piece.
pub fn factor_entropy_formula(f: &LimitPlanFactor, mu: &Measure1D) -> f64 {
    let knots = f.knots();
    let mut total = 0.0;
    for w in knots.windows(2) {
        let d = mu.density_at(0.5 * (w[0] + w[1]));
        if d == 0.0 {
            continue;
        }
        let (e0, e1) = (f.abs_cdf_diff(w[0]), f.abs_cdf_diff(w[1]));
        let h = w[1] - w[0];
        total -= d * h * mean_log_linear(e0, e1);
        total -= d * h;
    }
    total
}

/// Tensor tanh-sinh estimate of
/// `integral_{allowed} -ln(G(x) F(y)) / (G(x) F(y)) d mu(x) d nu(y)`.
pub fn factor_entropy_quadrature(
    f: &LimitPlanFactor,
    mu: &Measure1D,
    nu: &Measure1D,
    n_quad: usize,
) -> f64 {
    let knots = f.knots();
    let min_per = 24;
    let outer = composite_tanh_sinh(&knots, n_quad, min_per);
    let (a, b) = (f.interval.lo, f.interval.hi);
    let mut total = 0.0;
    for &(y, wy) in &outer {
        let dn = nu.density_at(y);
        if dn == 0.0 {
            continue;
        }
        let log_fy = f.log_f(y);
        let inner_knots = match f.sign {
            Sign::Minus => knots_within(knots.iter().copied(), y, b),
            _ => knots_within(knots.iter().copied(), a, y),
        };
        let inner = composite_tanh_sinh(&inner_knots, n_quad, min_per);
        let mut acc = 0.0;
        for &(x, wx) in &inner {
            let dm = mu.density_at(x);
            if dm == 0.0 {
                continue;
            }
            let l = f.log_g(x) + log_fy;
            let v = (-l).exp() * (-l);
            if v.is_finite() {
                acc += wx * dm * v;
            }
        }
        total += wy * dn * acc;
    }
    total
}

/// L1 errors between the quadrature marginals of `rho1 (x) rho2` on the
/// allowed half and the Lebesgue densities of `mu`, `nu` on the interval.
pub fn marginal_l1_errors(
    f: &LimitPlanFactor,
    mu: &Measure1D,
    nu: &Measure1D,
    n: usize,
) -> (f64, f64) {
    let knots = f.knots();
    let (a, b) = (f.interval.lo, f.interval.hi);
    let min_per = 24;
    let outer = composite_tanh_sinh(&knots, n, min_per);
    let plus = f.sign != Sign::Minus;
    let mut err_mu = 0.0;
    let mut err_nu = 0.0;
    for &(t, wt) in &outer {
        // First marginal at x = t: partners y on the allowed side of t.
        let partner = if plus {
            knots_within(knots.iter().copied(), t, b)
        } else {
            knots_within(knots.iter().copied(), a, t)
        };
        let dm = mu.density_at(t);
        let inner: f64 = if dm == 0.0 {
            0.0
        } else {
            composite_tanh_sinh(&partner, n, min_per)
                .iter()
                .map(|&(y, w)| w * nu.density_at(y) * f.pair_density(t, y))
                .sum::<f64>()
                * dm
        };
        err_mu += wt * (inner - dm).abs();

        // Second marginal at y = t: partners x on the other side.
        let partner = if plus {
            knots_within(knots.iter().copied(), a, t)
        } else {
            knots_within(knots.iter().copied(), t, b)
        };
        let dn = nu.density_at(t);
        let inner: f64 = if dn == 0.0 {
            0.0
        } else {
            composite_tanh_sinh(&partner, n, min_per)
                .iter()
                .map(|&(x, w)| w * mu.density_at(x) * f.pair_density(x, t))
                .sum::<f64>()
                * dn
        };
        err_nu += wt * (inner - dn).abs();
    }
    (err_mu, err_nu)
}

/// `-integral_{A+ u A-} ln|F_mu - F_nu| d mu`; `+inf` if it diverges.
pub fn h2_value(mu: &Measure1D, nu: &Measure1D, dec: &SignDecomposition) -> f64 {
    let diff = crate::structure::CdfDifference::new(mu, nu);
    let mut total = 0.0;
    for r in dec.signed_regions() {
        let iv = r.interval;
        let knots = knots_within(diff.knots().iter().copied(), iv.lo, iv.hi);
        let last = knots.len() - 1;
        for (i, w) in knots.windows(2).enumerate() {
            let d = mu.density_at(0.5 * (w[0] + w[1]));
            if d == 0.0 {
                continue;
            }
            let e0 = if i == 0 { 0.0 } else { diff.eval(w[0]).abs() };
            let e1 = if i + 1 == last { 0.0 } else { diff.eval(w[1]).abs() };
            if e0 == 0.0 && e1 == 0.0 {
                return f64::INFINITY;
            }
            total -= d * (w[1] - w[0]) * mean_log_linear(e0, e1);
        }
    }
    total
}

/// The minimizer of the limit functional: identity on `A`, and one factor
/// per signed region.
#[derive(Debug, Clone)]
pub struct LimitPlan {
    pub factors: Vec<LimitPlanFactor>,
    /// `mu` restricted to `A`, transported by the identity.
    pub diagonal_measure: PiecewiseDensity,
    /// `-integral_A ln(d mu / dx) d mu`.
    pub zero_region_entropy_term: f64,
    pub zero_intervals: Vec<Interval>,
}

impl LimitPlan {
    pub fn diagonal_mass(&self) -> f64 {
        self.diagonal_measure.total_mass()
    }
}

pub fn build_limit_plan(
    mu: &Measure1D,
    nu: &Measure1D,
    dec: &SignDecomposition,
) -> Result<LimitPlan, LimitPlanError> {
    let factors = dec
        .signed_regions()
        .map(|r| build_factor(mu, nu, r))
        .collect::<Result<Vec<_>, _>>()?;
    let zero_intervals = dec.zero_intervals();
    let diagonal_measure = mu.restrict(&zero_intervals);
    let zero_region_entropy_term = -diagonal_measure.entropy_vs_lebesgue();
    Ok(LimitPlan {
        factors,
        diagonal_measure,
        zero_region_entropy_term,
        zero_intervals,
    })
}

/// `min F = sum of factor entropies - integral_A ln(d mu/dx) d mu`.
pub fn limit_functional_value(lp: &LimitPlan) -> Result<f64, LimitPlanError> {
    let v: f64 = lp.factors.iter().map(|f| f.entropy_value).sum::<f64>() + lp.zero_region_entropy_term;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LimitPlanError::InfiniteEntropy)
    }
}

/// `d gamma0 / d(mu (x) nu) = 1 / (G(x) F(y))` on the allowed half, else 0.
pub fn gamma0_density(f: &LimitPlanFactor, x: f64, y: f64) -> Result<f64, LimitPlanError> {
    if !(f.interval.contains(x) && f.interval.contains(y)) {
        return Err(LimitPlanError::OutsideInterval { x, y });
    }
    if !f.allowed(x, y) {
        return Ok(0.0);
    }
    let v = (-(f.log_g(x) + f.log_f(y))).exp();
    Ok(if v.is_nan() { 0.0 } else { v })
}

/// Cell masses of the limit plan on `grid`, cleaned up by marginal rescaling.
pub fn discretize_limit_plan(lp: &LimitPlan, grid: &Grid) -> DiscretePlan {
    let mut plan = DiscretePlan::zeros(grid.n());
    add_factor_cells(lp, grid, &mut plan);
    for z in &lp.zero_intervals {
        let (lo, hi) = grid.cells_meeting(z);
        for i in lo..=hi {
            if let Some(c) = grid.cell(i).intersect(z) {
                let m = lp.diagonal_measure.mass(&c);
                plan.add(i, i, m);
            }
        }
    }
    plan.rescale_to_marginals(grid, 1e-14, 200);
    plan
}

/// Adds the off-`A` part (the factors) of the limit plan, without cleanup.
pub(crate) fn add_factor_cells(lp: &LimitPlan, grid: &Grid, plan: &mut DiscretePlan) {
    for f in &lp.factors {
        let (lo, hi) = grid.cells_meeting(&f.interval);
        let clipped: Vec<Interval> = (lo..=hi)
            .map(|i| grid.cell(i).intersect(&f.interval).expect("cell meets interval"))
            .collect();
        let r1: Vec<f64> = clipped.iter().map(|c| f.log_rho1_mass(c.lo, c.hi)).collect();
        let r2: Vec<f64> = clipped.iter().map(|c| f.log_rho2_mass(c.lo, c.hi)).collect();
        let count = clipped.len();
        for i in 0..count {
            for j in 0..count {
                let m = match (i.cmp(&j), f.sign) {
                    (std::cmp::Ordering::Equal, _) => {
                        f.diagonal_cell_mass(clipped[i].lo, clipped[i].hi)
                    }
                    (std::cmp::Ordering::Less, Sign::Plus) | (std::cmp::Ordering::Greater, Sign::Minus) => {
                        (r1[i] + r2[j]).exp()
                    }
                    _ => 0.0,
                };
                if m > 0.0 && m.is_finite() {
                    plan.add(lo + i, lo + j, m);
                }
            }
        }
    }
}

/// Per-factor summary for reports.
#[derive(Debug, Clone, Serialize)]
pub struct FactorSummary {
    pub lo: f64,
    pub hi: f64,
    pub sign: Sign,
    pub mass: f64,
    pub entropy_formula: f64,
}

pub fn factor_summaries(lp: &LimitPlan, mu: &Measure1D) -> Vec<FactorSummary> {
    lp.factors
        .iter()
        .map(|f| FactorSummary {
            lo: f.interval.lo,
            hi: f.interval.hi,
            sign: f.sign,
            mass: mu.mass(&f.interval),
            entropy_formula: f.entropy_value,
        })
        .collect()
}
