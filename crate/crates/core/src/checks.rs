//! Verification checks shared by the `verify` subcommand and the acceptance
//! test target. Each returns a [`CheckOutcome`] with a one-line summary.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::harness::{sweep, GridRule, SweepReport};
use crate::limit_plan::{
    build_limit_plan, discretize_limit_plan, factor_entropy_formula, factor_entropy_quadrature, limit_functional_value,
    marginal_l1_errors,
};
use crate::measures::Measure1D;
use crate::numeric::{composite_tanh_sinh, knots_within};
use crate::solver::{
    brute_min, ipf_masked, j_eps, limit_mask, make_grid, plan_tv, sinkhorn, DiscretePlan, Grid, DEFAULT_MAX_ITER,
};
use crate::structure::{duality_gap, is_optimal_plan, monotone_map, potential, sign_decompose, w1, DEFAULT_TAU_SIGN};

pub type Instance = (String, Measure1D, Measure1D);

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    /// Deterministic summary, without timing.
    pub fn summary(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u32, name: &str, f: impl FnOnce() -> (bool, String)) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = f();
    CheckOutcome {
        id,
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Bundled instances followed by `random` seeded random ones.
pub fn corpus(seed: u64, random: usize) -> Vec<Instance> {
    let mut out: Vec<Instance> = crate::instances::bundled()
        .into_iter()
        .map(|(n, m, v)| (n.to_string(), m, v))
        .collect();
    for (k, (m, v)) in crate::instances::random_corpus(seed, random).into_iter().enumerate() {
        out.push((format!("random{k}"), m, v));
    }
    out
}

/// `integral |T(x) - x| d mu` by tanh-sinh on pieces where `T - id` is
/// linear and of one sign.
pub fn w1_by_displacement(mu: &Measure1D, nu: &Measure1D) -> f64 {
    let t = monotone_map(mu, nu);
    let hull = mu.hull();
    let mut knots = knots_within(t.kinks(), hull.lo, hull.hi);
    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (g0, g1) = (t.eval(w[0]) - w[0], t.eval(w[1]) - w[1]);
        if g0 * g1 < 0.0 {
            roots.push(w[0] + (w[1] - w[0]) * g0 / (g0 - g1));
        }
    }
    knots.extend(roots);
    knots.sort_by(f64::total_cmp);
    composite_tanh_sinh(&knots, 64 * knots.len(), 40)
        .into_iter()
        .map(|(x, w)| w * mu.density_at(x) * (t.eval(x) - x).abs())
        .sum()
}

pub fn check_w1(instances: &[Instance]) -> CheckOutcome {
    timed(1, "W1 consistency", || {
        let worst = instances
            .iter()
            .map(|(_, m, v)| (w1(m, v) - w1_by_displacement(m, v)).abs())
            .fold(0.0, f64::max);
        (worst <= 1e-7, format!("max |W1_cdf - W1_disp| = {worst:.3e} over {} instances", instances.len()))
    })
}

pub fn check_duality(instances: &[Instance]) -> CheckOutcome {
    timed(2, "duality certificate", || {
        let mut worst: f64 = 0.0;
        for (name, m, v) in instances {
            let dec = sign_decompose(m, v, DEFAULT_TAU_SIGN);
            match duality_gap(&potential(&dec), m, v) {
                Ok(g) => worst = worst.max(g.abs()),
                Err(e) => return (false, format!("{name}: {e}")),
            }
        }
        (worst <= 1e-8, format!("max |gap| = {worst:.3e}"))
    })
}

pub fn check_marginals(instances: &[Instance], n: usize) -> CheckOutcome {
    timed(3, "limit plan marginals", || {
        let mut worst: f64 = 0.0;
        let mut factors = 0;
        for (name, m, v) in instances {
            let dec = sign_decompose(m, v, DEFAULT_TAU_SIGN);
            let lp = match build_limit_plan(m, v, &dec) {
                Ok(lp) => lp,
                Err(e) => return (false, format!("{name}: {e}")),
            };
            for f in &lp.factors {
                let (em, en) = marginal_l1_errors(f, m, v, n);
                worst = worst.max(em).max(en);
                factors += 1;
            }
        }
        (worst <= 1e-6, format!("max L1 error {worst:.3e} over {factors} factors at n={n}"))
    })
}

/// Formula against tensor quadrature for every factor.
pub fn check_entropy(instances: &[Instance], n_quad: usize) -> CheckOutcome {
    timed(4, "entropy formula", || {
        let mut worst: f64 = 0.0;
        for (name, m, v) in instances {
            let dec = sign_decompose(m, v, DEFAULT_TAU_SIGN);
            let lp = match build_limit_plan(m, v, &dec) {
                Ok(lp) => lp,
                Err(e) => return (false, format!("{name}: {e}")),
            };
            for f in &lp.factors {
                let diff = (factor_entropy_formula(f, m) - factor_entropy_quadrature(f, m, v, n_quad)).abs();
                worst = worst.max(diff);
            }
        }
        (worst <= 1e-4, format!("max |formula - quadrature| = {worst:.3e} at n={n_quad}"))
    })
}

/// Random grid with `n` cells on `[0, 1]`; about one cell in five is empty.
pub fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> Grid {
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.05..1.0) })
            .collect();
        if v.iter().all(|&x| x == 0.0) {
            v[0] = 1.0;
        }
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        let rest: f64 = v[1..].iter().sum();
        if v[0] > 0.0 {
            v[0] = 1.0 - rest;
        }
        v
    };
    let a = draw(rng);
    let b = draw(rng);
    Grid::from_masses(0.0, 1.0, a, b).expect("valid random grid")
}

pub fn check_solver_oracle(seed: u64, count: usize) -> CheckOutcome {
    timed(5, "Sinkhorn vs oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut obj, mut cell): (f64, f64) = (0.0, 0.0);
        for _ in 0..count {
            let n = rng.gen_range(2..=5);
            let g = random_grid(&mut rng, n);
            for eps in [0.05, 0.5] {
                let s = match sinkhorn(&g, eps, 1e-13, DEFAULT_MAX_ITER) {
                    Ok(s) => s,
                    Err(e) => return (false, e.to_string()),
                };
                let o = match brute_min(&g, eps) {
                    Ok(o) => o,
                    Err(e) => return (false, e.to_string()),
                };
                obj = obj.max((s.j_eps - j_eps(&o, &g, eps)).abs());
                for (x, y) in s.plan.as_slice().iter().zip(o.as_slice()) {
                    cell = cell.max((x - y).abs());
                }
            }
        }
        (
            obj <= 1e-9 && cell <= 1e-6,
            format!("{count} grids: objective gap {obj:.3e}, cell gap {cell:.3e}"),
        )
    })
}

pub fn check_ipf(instances: &[Instance], n: usize) -> CheckOutcome {
    timed(6, "IPF vs limit plan", || {
        let mut worst: f64 = 0.0;
        for (name, m, v) in instances {
            let dec = sign_decompose(m, v, DEFAULT_TAU_SIGN);
            let lp = match build_limit_plan(m, v, &dec) {
                Ok(lp) => lp,
                Err(e) => return (false, format!("{name}: {e}")),
            };
            let g = make_grid(m, v, n).expect("n >= 1");
            let p = match ipf_masked(&g, &limit_mask(&g, &dec), 1e-10, 2_000_000) {
                Ok(p) => p,
                Err(e) => return (false, format!("{name}: {e}")),
            };
            worst = worst.max(plan_tv(&p, &discretize_limit_plan(&lp, &g)).expect("same n"));
        }
        (worst <= 0.02, format!("max TV = {worst:.4} at n={n}"))
    })
}

/// `mu = nu`: `j_eps` against `eps |ln 2eps|` and the residual.
pub fn check_pure_diagonal(mu: &Measure1D, nu: &Measure1D, eps: f64, n: usize) -> CheckOutcome {
    timed(7, "expansion, diagonal only", || {
        let g = make_grid(mu, nu, n).expect("n >= 1");
        let s = match sinkhorn(&g, eps, 1e-9, DEFAULT_MAX_ITER) {
            Ok(s) => s,
            Err(e) => return (false, e.to_string()),
        };
        let dec = sign_decompose(mu, nu, DEFAULT_TAU_SIGN);
        let (w, ma) = (w1(mu, nu), dec.zero_mass(mu));
        let scale = eps * (2.0 * eps).ln().abs();
        let ratio = (s.j_eps - w) / scale;
        let r = crate::harness::residual(s.j_eps, eps, w, ma);
        (
            s.converged && (ratio - 1.0).abs() <= 0.05 && r.abs() <= 0.1,
            format!("j/(eps|ln 2eps|) = {ratio:.5}, r = {r:.5}, iters {}", s.iterations),
        )
    })
}

/// Sweep plus the extrapolation and plan-convergence gates.
pub fn check_expansion(
    id: u32,
    name: &str,
    mu: &Measure1D,
    nu: &Measure1D,
    eps_list: &[f64],
    rel_tol: f64,
    rule: GridRule,
) -> (CheckOutcome, Option<SweepReport>) {
    let mut report = None;
    let outcome = timed(id, name, || {
        let rep = match sweep(mu, nu, eps_list, rule) {
            Ok(r) => r,
            Err(e) => return (false, e.to_string()),
        };
        let (Some(reference), Some(extra)) = (rep.min_f_reference, rep.min_f_extrapolated) else {
            report = Some(rep);
            return (false, "no reference or extrapolation".into());
        };
        let rel = (extra - reference).abs() / reference.abs().max(1e-300);
        let tvs: Vec<f64> = rep.records.iter().map(|r| r.plan_tv_to_gamma0).collect();
        let monotone = tvs.windows(2).all(|w| w[1] <= w[0] + 0.01);
        let last_tv = *tvs.last().unwrap();
        let last_r = rep.records.last().unwrap().residual;
        let passed = rep.converged && rel <= rel_tol && monotone;
        let off = if reference.abs() < 1e-3 {
            format!("abs {:.2e}", (extra - reference).abs())
        } else {
            format!("{:.1}%", 100.0 * rel)
        };
        let detail = format!(
            "minF ref {reference:.5}, extrapolated {extra:.5} ({off}), last r {last_r:.5}, TV {:.4} -> {last_tv:.4}{}",
            tvs[0],
            if monotone { "" } else { " (not monotone)" }
        );
        report = Some(rep);
        (passed, detail)
    });
    (outcome, report)
}

/// TV at the smallest eps is at most `bound`.
pub fn final_tv_ok(report: &SweepReport, bound: f64) -> bool {
    report.records.last().is_some_and(|r| r.plan_tv_to_gamma0 <= bound)
}

/// Sandwich and slack trend of the recovery plans recorded in a sweep; the
/// slack may rise by at most `trend_tol` between consecutive records.
pub fn recovery_findings(report: &SweepReport, trend_tol: f64) -> (bool, String) {
    let Some(reference) = report.min_f_reference else {
        return (false, "no reference value".into());
    };
    let sandwich = report
        .records
        .iter()
        .all(|r| r.j_min <= r.recovery_j + 1e-12 && r.j_min >= r.w1_discrete - 1e-12);
    let slack: Vec<f64> = report.records.iter().map(|r| r.recovery_f - reference).collect();
    let monotone = slack.windows(2).all(|w| w[1] <= w[0] + trend_tol);
    let last = *slack.last().unwrap_or(&f64::INFINITY);
    let passed = sandwich && monotone && last <= 0.5;
    let list: Vec<String> = slack.iter().map(|s| format!("{s:.4}")).collect();
    (
        passed,
        format!(
            "sandwich {}, slack [{}]{}",
            if sandwich { "ok" } else { "violated" },
            list.join(", "),
            if monotone { "" } else { " not monotone" }
        ),
    )
}

pub fn check_recovery(reports: &[(&str, &SweepReport)]) -> CheckOutcome {
    timed(10, "recovery sandwich", || {
        let mut passed = true;
        let mut parts = Vec::new();
        for (name, rep) in reports {
            let (ok, detail) = recovery_findings(rep, 0.0);
            passed &= ok;
            parts.push(format!("{name}: {detail}"));
        }
        (passed, parts.join("; "))
    })
}

/// Moves mass `m` from `(i1, j1)` and `(i2, j2)` to `(i1, j2)` and `(i2, j1)`.
pub fn swap_mass(plan: &DiscretePlan, (i1, j1): (usize, usize), (i2, j2): (usize, usize)) -> (DiscretePlan, f64) {
    let m = plan.get(i1, j1).min(plan.get(i2, j2));
    let mut p = plan.clone();
    p.add(i1, j1, -m);
    p.add(i2, j2, -m);
    p.add(i1, j2, m);
    p.add(i2, j1, m);
    (p, m)
}

/// On the E3 monotone plan, swaps the targets of an early and a late row so
/// that the late row sends mass left inside the positive region.
pub fn swap_counterexample(n: usize) -> (Grid, DiscretePlan, f64) {
    let (mu, nu) = crate::instances::e3();
    let g = make_grid(&mu, &nu, n).expect("n >= 1");
    let p = DiscretePlan::monotone(&g);
    let col_of = |i: usize| (0..n).find(|&j| p.get(i, j) > 0.0).expect("row has mass");
    let (i1, i2) = (n / 8, 5 * n / 8);
    let (swapped, m) = swap_mass(&p, (i2, col_of(i2)), (i1, col_of(i1)));
    (g, swapped, m)
}

pub fn check_optimality(instances: &[Instance], n: usize) -> CheckOutcome {
    timed(11, "optimality predicate", || {
        for (name, m, v) in instances {
            let dec = sign_decompose(m, v, DEFAULT_TAU_SIGN);
            let g = make_grid(m, v, n).expect("n >= 1");
            let lp = match build_limit_plan(m, v, &dec) {
                Ok(lp) => lp,
                Err(e) => return (false, format!("{name}: {e}")),
            };
            for (label, plan) in [("monotone", DiscretePlan::monotone(&g)), ("limit", discretize_limit_plan(&lp, &g))] {
                match is_optimal_plan(&plan, &g, &dec, 1e-9) {
                    Ok(r) if r.optimal => {}
                    Ok(r) => return (false, format!("{name}: {label} plan rejected, violation {:.3e}", r.violation_mass)),
                    Err(e) => return (false, format!("{name}: {label} plan: {e}")),
                }
            }
        }
        let (g, p, m) = swap_counterexample(64);
        let (mu, nu) = crate::instances::e3();
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        match is_optimal_plan(&p, &g, &dec, 1e-9) {
            Ok(r) => (
                !r.optimal && r.violation_mass >= 0.9 * m,
                format!(
                    "{} instances accepted; swap rejected with violation {:.4} / swapped {:.4}",
                    instances.len(),
                    r.violation_mass,
                    m
                ),
            ),
            Err(e) => (false, e.to_string()),
        }
    })
}

/// Limit functional value cross-checked against tensor quadrature of the
/// factor entropies.
pub fn reference_min_f(mu: &Measure1D, nu: &Measure1D, n_quad: usize) -> Option<(f64, f64)> {
    let dec = sign_decompose(mu, nu, DEFAULT_TAU_SIGN);
    let lp = build_limit_plan(mu, nu, &dec).ok()?;
    let formula = limit_functional_value(&lp).ok()?;
    let quad: f64 = lp
        .factors
        .iter()
        .map(|f| factor_entropy_quadrature(f, mu, nu, n_quad))
        .sum::<f64>()
        + lp.zero_region_entropy_term;
    Some((formula, quad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn displacement_w1_matches_examples() {
        let (mu, nu) = instances::e4();
        assert!((w1_by_displacement(&mu, &nu) - 0.125).abs() < 1e-12);
        let (mu, nu) = instances::e3();
        assert!((w1_by_displacement(&mu, &nu) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn swap_moves_mass_left() {
        let (g, p, m) = swap_counterexample(64);
        assert!(m > 0.0);
        assert!(p.marginal_deviation(&g) < 1e-15);
    }
}
