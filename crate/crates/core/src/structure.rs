//! Structure of the optimal plans for the cost `|y - x|` on the line.
//!
//! Everything is driven by the CDF difference `F_mu - F_nu`, which is
//! piecewise linear for piecewise-constant densities. Its zero set `A`, its
//! positive set `A+` and negative set `A-` determine the optimal plans: mass
//! starting in `A` stays put, mass starting in a component of `A+` moves
//! right inside that component, and symmetrically for `A-`.

use serde::{Deserialize, Serialize};

use crate::error::StructureError;
use crate::measures::{Interval, Measure1D};
use crate::numeric::integral_log_distance;
use crate::solver::{DiscretePlan, Grid};

/// Default threshold below which `|F_mu - F_nu|` counts as zero.
pub const DEFAULT_TAU_SIGN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Zero,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub interval: Interval,
    pub sign: Sign,
}

/// `F_mu - F_nu` as values at the merged breakpoints of both measures.
#[derive(Debug, Clone)]
pub struct CdfDifference {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl CdfDifference {
    pub fn new(mu: &Measure1D, nu: &Measure1D) -> Self {
        let mut knots: Vec<f64> = mu.breakpoints().iter().chain(nu.breakpoints()).copied().collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let values = knots.iter().map(|&x| mu.cdf(x) - nu.cdf(x)).collect();
        Self { knots, values }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0] || x >= k[k.len() - 1] {
            return 0.0;
        }
        let i = k.partition_point(|&t| t <= x) - 1;
        let t = (x - k[i]) / (k[i + 1] - k[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    /// Exact `integral |F_mu - F_nu| dx`.
    pub fn abs_integral(&self) -> f64 {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, f)| abs_linear_integral(f[0], f[1], x[1] - x[0]))
            .sum()
    }
}

fn abs_linear_integral(f0: f64, f1: f64, h: f64) -> f64 {
    if f0 * f1 >= 0.0 {
        0.5 * (f0.abs() + f1.abs()) * h
    } else {
        0.5 * (f0 * f0 + f1 * f1) / (f0.abs() + f1.abs()) * h
    }
}

/// Ordered partition of the hull into Zero / Plus / Minus regions.
///
/// Adjacent regions differ in sign, except that two signed regions of the
/// same sign stay separate when `F_mu - F_nu` touches zero at their common
/// endpoint (they are distinct components of `A+` or `A-`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignDecomposition {
    pub regions: Vec<Region>,
    pub hull: Interval,
}

impl SignDecomposition {
    pub fn signed_regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.sign != Sign::Zero)
    }

    pub fn zero_intervals(&self) -> Vec<Interval> {
        self.regions
            .iter()
            .filter(|r| r.sign == Sign::Zero)
            .map(|r| r.interval)
            .collect()
    }

    /// `mu(A)`, the mass of the Zero regions.
    pub fn zero_mass(&self, mu: &Measure1D) -> f64 {
        self.zero_intervals().iter().fold(0.0, |s, iv| s + mu.mass(iv))
    }

    /// Index of the region whose closed interval contains `x` (first match).
    pub fn region_index(&self, x: f64) -> Option<usize> {
        let idx = self.regions.partition_point(|r| r.interval.hi < x);
        (idx < self.regions.len() && self.regions[idx].interval.contains(x)).then_some(idx)
    }
}

fn classify(v: f64, tau: f64) -> Sign {
    if v > tau {
        Sign::Plus
    } else if v < -tau {
        Sign::Minus
    } else {
        Sign::Zero
    }
}

/// Splits the hull of both supports into maximal regions where
/// `F_mu - F_nu` is zero, positive or negative.
///
/// Region boundaries are exact roots of the linear pieces; `tau_sign` only
/// decides when a knot value counts as zero.
pub fn sign_decompose(mu: &Measure1D, nu: &Measure1D, tau_sign: f64) -> SignDecomposition {
    let diff = CdfDifference::new(mu, nu);
    let (knots, values) = (diff.knots(), diff.values());
    let hull = Interval {
        lo: knots[0],
        hi: knots[knots.len() - 1],
    };

    // (lo, hi, sign, F vanishes at lo)
    let mut pieces: Vec<(f64, f64, Sign, bool)> = Vec::new();
    for i in 0..knots.len() - 1 {
        let (k0, k1) = (knots[i], knots[i + 1]);
        let (f0, f1) = (values[i], values[i + 1]);
        let (s0, s1) = (classify(f0, tau_sign), classify(f1, tau_sign));
        let zero_at_k0 = s0 == Sign::Zero;
        match (s0, s1) {
            (Sign::Zero, Sign::Zero) => pieces.push((k0, k1, Sign::Zero, true)),
            (Sign::Zero, s) => pieces.push((k0, k1, s, true)),
            (s, Sign::Zero) => pieces.push((k0, k1, s, false)),
            (a, b) if a == b => pieces.push((k0, k1, a, false)),
            (a, b) => {
                let r = k0 + (k1 - k0) * f0 / (f0 - f1);
                if r > k0 {
                    pieces.push((k0, r, a, zero_at_k0));
                }
                if r < k1 {
                    pieces.push((r, k1, b, true));
                }
            }
        }
    }

    let mut regions: Vec<Region> = Vec::new();
    for (lo, hi, sign, zero_at_lo) in pieces {
        if let Some(last) = regions.last_mut() {
            let joinable = last.sign == sign && (sign == Sign::Zero || !zero_at_lo);
            if joinable {
                last.interval.hi = hi;
                continue;
            }
        }
        regions.push(Region {
            interval: Interval { lo, hi },
            sign,
        });
    }
    SignDecomposition { regions, hull }
}

/// Monotone rearrangement `T(x) = inf { y : F_nu(y) >= F_mu(x) }`.
#[derive(Debug, Clone)]
pub struct MonotoneMap {
    source: Measure1D,
    target: Measure1D,
}

impl MonotoneMap {
    pub fn eval(&self, x: f64) -> f64 {
        self.target.quantile(self.source.cdf(x))
    }

    /// Points between which `T` is affine on the source support: source
    /// breakpoints and preimages of target breakpoints, inside the source hull.
    pub fn kinks(&self) -> Vec<f64> {
        let hull = self.source.hull();
        let mut pts: Vec<f64> = self.source.breakpoints().to_vec();
        pts.extend(
            self.target
                .breakpoints()
                .iter()
                .map(|&y| self.source.quantile(self.target.cdf(y))),
        );
        pts.retain(|p| hull.contains(*p));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    pub fn source(&self) -> &Measure1D {
        &self.source
    }

    pub fn target(&self) -> &Measure1D {
        &self.target
    }
}

pub fn monotone_map(mu: &Measure1D, nu: &Measure1D) -> MonotoneMap {
    MonotoneMap {
        source: mu.clone(),
        target: nu.clone(),
    }
}

/// `W1(mu, nu) = integral |F_mu - F_nu| dx`, exact.
pub fn w1(mu: &Measure1D, nu: &Measure1D) -> f64 {
    CdfDifference::new(mu, nu).abs_integral()
}

/// Piecewise-linear function, extended by constants outside its knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KantorovichPotential {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl KantorovichPotential {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, StructureError> {
        if knots.is_empty()
            || knots.len() != values.len()
            || knots.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(StructureError::MalformedPotential);
        }
        Ok(Self { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0] {
            return self.values[0];
        }
        if x >= k[k.len() - 1] {
            return self.values[k.len() - 1];
        }
        let i = k.partition_point(|&t| t <= x) - 1;
        let t = (x - k[i]) / (k[i + 1] - k[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
            .collect()
    }

    /// Exact `integral u d(mu)`.
    pub fn integrate(&self, mu: &Measure1D) -> f64 {
        let mut pts: Vec<f64> = mu.breakpoints().iter().chain(&self.knots).copied().collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts.windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                mu.density_at(mid) * (w[1] - w[0]) * 0.5 * (self.eval(w[0]) + self.eval(w[1]))
            })
            .sum()
    }
}

/// `u(x) = integral_{hull.lo}^x (1_{A+} - 1_{A-})`.
pub fn potential(dec: &SignDecomposition) -> KantorovichPotential {
    let mut knots = vec![dec.hull.lo];
    let mut values = vec![0.0];
    for r in &dec.regions {
        let slope = match r.sign {
            Sign::Zero => 0.0,
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        };
        let last = values[values.len() - 1];
        knots.push(r.interval.hi);
        values.push(last + slope * r.interval.length());
    }
    KantorovichPotential { knots, values }
}

/// `W1 - (integral u d nu - integral u d mu)`; zero certifies `u` optimal.
pub fn duality_gap(
    u: &KantorovichPotential,
    mu: &Measure1D,
    nu: &Measure1D,
) -> Result<f64, StructureError> {
    if let Some((piece, &slope)) = u
        .slopes()
        .iter()
        .enumerate()
        .find(|(_, s)| s.abs() > 1.0 + 1e-12)
    {
        return Err(StructureError::NotLipschitz { piece, slope });
    }
    Ok(w1(mu, nu) - (u.integrate(nu) - u.integrate(mu)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub row: usize,
    pub col: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub optimal: bool,
    pub violation_mass: f64,
    pub violations: Vec<Violation>,
}

/// Checks a discrete plan against the structure of optimal plans, with a
/// one-cell band around the diagonal and around region boundaries.
///
/// Mass at `(i, j)` is admissible if some region meeting cell `i` allows it:
/// a Zero region allows `|i - j| <= 1`; a Plus region allows `j >= i - 1`
/// with cell `j` within one cell of the region; a Minus region mirrors that.
pub fn is_optimal_plan(
    plan: &DiscretePlan,
    grid: &Grid,
    dec: &SignDecomposition,
    tol: f64,
) -> Result<OptimalityReport, StructureError> {
    let deviation = plan.marginal_deviation(grid);
    if deviation > tol.max(1e-10) {
        return Err(StructureError::MarginalMismatch { deviation });
    }
    let n = grid.n();
    // Cells meeting each region, as inclusive index ranges.
    let cell_range: Vec<(usize, usize)> = dec
        .regions
        .iter()
        .map(|r| grid.cells_meeting(&r.interval))
        .collect();
    let regions_of_cell: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            cell_range
                .iter()
                .enumerate()
                .filter(|(_, &(lo, hi))| lo <= i && i <= hi)
                .map(|(r, _)| r)
                .collect()
        })
        .collect();

    let allowed = |i: usize, j: usize| {
        regions_of_cell[i].iter().any(|&r| {
            let (lo, hi) = cell_range[r];
            let in_band = j + 1 >= lo && j <= hi + 1;
            match dec.regions[r].sign {
                Sign::Zero => i.abs_diff(j) <= 1,
                Sign::Plus => in_band && j + 1 >= i,
                Sign::Minus => in_band && j <= i + 1,
            }
        })
    };

    let mut violations = Vec::new();
    let mut violation_mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            let m = plan.get(i, j);
            if m > 0.0 && !allowed(i, j) {
                violation_mass += m;
                violations.push(Violation { row: i, col: j, mass: m });
            }
        }
    }
    Ok(OptimalityReport {
        optimal: violation_mass <= tol,
        violation_mass,
        violations,
    })
}

/// `-sum_i integral_{a_i}^{b_i} ln(min(x - a_i, b_i - x)) d mu` over the
/// components `(a_i, b_i)` of the interior of `A` intersected with the
/// support of `mu`.
///
/// Always finite for piecewise-constant instances; it reports how large the
/// log-integrability quantity is rather than testing it.
pub fn h1_diagnostic(mu: &Measure1D, dec: &SignDecomposition) -> f64 {
    let support = mu.as_density().support_components();
    let mut total = 0.0;
    for zero in dec.zero_intervals() {
        for s in &support {
            let Some(comp) = zero.intersect(s) else { continue };
            let mid = comp.midpoint();
            for (w, &d) in mu.breakpoints().windows(2).zip(mu.densities()) {
                if d <= 0.0 {
                    continue;
                }
                let piece = Interval { lo: w[0], hi: w[1] };
                let Some(p) = piece.intersect(&comp) else { continue };
                if p.lo < mid {
                    total += d * integral_log_distance(comp.lo, p.lo, p.hi.min(mid));
                }
                if p.hi > mid {
                    total += d * integral_log_distance(comp.hi, p.lo.max(mid), p.hi);
                }
            }
        }
    }
    -total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    fn uniform(lo: f64, hi: f64) -> Measure1D {
        Measure1D::from_piecewise(&[lo, hi], &[1.0 / (hi - lo)], false).unwrap()
    }

    fn signs(dec: &SignDecomposition) -> Vec<(f64, f64, Sign)> {
        dec.regions
            .iter()
            .map(|r| (r.interval.lo, r.interval.hi, r.sign))
            .collect()
    }

    #[test]
    fn decompose_identical() {
        let u = uniform(0.0, 1.0);
        let dec = sign_decompose(&u, &u, DEFAULT_TAU_SIGN);
        assert_eq!(signs(&dec), vec![(0.0, 1.0, Sign::Zero)]);
    }

    #[test]
    fn decompose_disjoint() {
        let dec = sign_decompose(&uniform(0.0, 1.0), &uniform(1.0, 2.0), DEFAULT_TAU_SIGN);
        assert_eq!(signs(&dec), vec![(0.0, 2.0, Sign::Plus)]);
        let dec = sign_decompose(&uniform(1.0, 2.0), &uniform(0.0, 1.0), DEFAULT_TAU_SIGN);
        assert_eq!(signs(&dec), vec![(0.0, 2.0, Sign::Minus)]);
    }

    #[test]
    fn decompose_mixed_e4() {
        let (mu, nu) = instances::e4();
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        assert_eq!(
            signs(&dec),
            vec![(0.0, 1.0, Sign::Zero), (1.0, 2.0, Sign::Plus)]
        );
    }

    #[test]
    fn decompose_splits_at_crossing_and_touching_zero() {
        // mu = U[0,2]; nu concentrated in the middle: F_mu - F_nu crosses
        // zero inside the piece [0.5, 1.5], at x = 1.
        let mu = uniform(0.0, 2.0);
        let nu = Measure1D::from_piecewise(&[0.0, 0.5, 1.5, 2.0], &[0.2, 0.8, 0.2], false).unwrap();
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        let s = signs(&dec);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].0, s[0].2), (0.0, Sign::Plus));
        assert_eq!((s[1].1, s[1].2), (2.0, Sign::Minus));
        assert!((s[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(s[0].1, s[1].0);
        // Two Plus components touching at a single zero stay separate.
        let mu = Measure1D::from_piecewise(&[0.0, 1.0, 2.0], &[0.5, 0.5], false).unwrap();
        let nu = Measure1D::from_piecewise(&[0.0, 0.5, 1.0, 1.5, 2.0], &[0.0, 1.0, 0.0, 1.0], false)
            .unwrap();
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        assert_eq!(
            signs(&dec),
            vec![(0.0, 1.0, Sign::Plus), (1.0, 2.0, Sign::Plus)]
        );
    }

    #[test]
    fn monotone_map_examples() {
        let u = uniform(0.0, 1.0);
        let t = monotone_map(&u, &u);
        for x in [0.1, 0.5, 0.9] {
            assert!((t.eval(x) - x).abs() < 1e-15);
        }
        let t = monotone_map(&u, &uniform(1.0, 2.0));
        assert!((t.eval(0.3) - 1.3).abs() < 1e-15);
        let t = monotone_map(&u, &uniform(0.5, 1.5));
        assert!((t.eval(0.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn w1_examples() {
        let u = uniform(0.0, 1.0);
        assert_eq!(w1(&u, &u), 0.0);
        assert!((w1(&u, &uniform(1.0, 2.0)) - 1.0).abs() < 1e-15);
        let (mu, nu) = instances::e4();
        // Two triangles of height 1/4 over [1, 1.5] and [1.5, 2].
        assert!((w1(&mu, &nu) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn potential_examples() {
        let u = uniform(0.0, 1.0);
        let p = potential(&sign_decompose(&u, &u, DEFAULT_TAU_SIGN));
        assert!(p.values.iter().all(|&v| v == 0.0));
        let p = potential(&sign_decompose(&u, &uniform(1.0, 2.0), DEFAULT_TAU_SIGN));
        for x in [0.0, 0.7, 2.0] {
            assert!((p.eval(x) - x).abs() < 1e-15);
        }
        let (mu, nu) = instances::e4();
        let p = potential(&sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN));
        for x in [0.0, 0.5, 1.0] {
            assert_eq!(p.eval(x), 0.0);
        }
        assert!((p.eval(1.5) - 0.5).abs() < 1e-15);
        assert!((p.eval(2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn duality_gap_examples() {
        let u = uniform(0.0, 1.0);
        let v = uniform(1.0, 2.0);
        let zero = KantorovichPotential::new(vec![0.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(duality_gap(&zero, &u, &u).unwrap(), 0.0);
        let id = KantorovichPotential::new(vec![0.0, 2.0], vec![0.0, 2.0]).unwrap();
        assert!(duality_gap(&id, &u, &v).unwrap().abs() < 1e-15);
        assert!((duality_gap(&zero, &u, &v).unwrap() - 1.0).abs() < 1e-15);
        let steep = KantorovichPotential::new(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        assert!(matches!(
            duality_gap(&steep, &u, &v),
            Err(StructureError::NotLipschitz { .. })
        ));
    }

    #[test]
    fn h1_examples() {
        let dec = sign_decompose(&uniform(0.0, 1.0), &uniform(1.0, 2.0), DEFAULT_TAU_SIGN);
        assert_eq!(h1_diagnostic(&uniform(0.0, 1.0), &dec), 0.0);
        let u = uniform(0.0, 1.0);
        let dec = sign_decompose(&u, &u, DEFAULT_TAU_SIGN);
        // -2 * integral_0^{1/2} ln t dt = 1 + ln 2.
        let expected = 1.0 + 2f64.ln();
        assert!((h1_diagnostic(&u, &dec) - expected).abs() < 1e-14);
        let (mu, nu) = instances::e4();
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        assert!((h1_diagnostic(&mu, &dec) - 0.5 * expected).abs() < 1e-14);
    }
}
