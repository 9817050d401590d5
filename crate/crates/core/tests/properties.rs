//! Property tests for the invariants of measures, structure, limit plans and
//! the discrete solvers.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use monge1d::instances::random_instance;
use monge1d::limit_plan::{build_limit_plan, discretize_limit_plan, marginal_l1_errors};
use monge1d::measures::Measure1D;
use monge1d::solver::{
    brute_min, ipf_masked, j_eps, limit_mask, make_grid, sinkhorn, Grid, Mask, DEFAULT_MAX_ITER,
};
use monge1d::SolverError;
use monge1d::structure::{duality_gap, potential, sign_decompose, w1, Sign, DEFAULT_TAU_SIGN};

fn measure() -> impl Strategy<Value = Measure1D> {
    (
        -2.0f64..2.0,
        prop::collection::vec((0.05f64..1.0, 0.0f64..3.0), 1..6),
    )
        .prop_filter_map("zero mass", |(start, pieces)| {
            let mut bps = vec![start];
            for (w, _) in &pieces {
                bps.push(bps.last().unwrap() + w);
            }
            let d: Vec<f64> = pieces.iter().map(|p| p.1).collect();
            Measure1D::from_piecewise(&bps, &d, true).ok()
        })
}

fn instance() -> impl Strategy<Value = (Measure1D, Measure1D)> {
    any::<u64>().prop_map(|s| random_instance(&mut ChaCha8Rng::seed_from_u64(s)))
}

fn masses(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn w1_by_displacement(mu: &Measure1D, nu: &Measure1D) -> f64 {
    let n = 20_000;
    (0..n)
        .map(|k| {
            let p = (k as f64 + 0.5) / n as f64;
            (mu.quantile(p) - nu.quantile(p)).abs()
        })
        .sum::<f64>()
        / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdf_inverts_quantile(m in measure(), p in 0.0f64..=1.0) {
        prop_assert!((m.cdf(m.quantile(p)) - p).abs() < 1e-12);
    }

    #[test]
    fn cdf_is_monotone_with_unit_mass(m in measure(), x in -3.0f64..8.0, dx in 0.0f64..2.0) {
        prop_assert!(m.cdf(x) <= m.cdf(x + dx) + 1e-15);
        prop_assert!((m.mass(&m.hull()) - 1.0).abs() < 1e-12);
        prop_assert_eq!(m.cdf(m.hull().hi), 1.0);
    }

    #[test]
    fn w1_matches_displacement(mu in measure(), nu in measure()) {
        let (a, b) = (w1(&mu, &nu), w1_by_displacement(&mu, &nu));
        prop_assert!((a - b).abs() < 1e-3 * (1.0 + a), "{a} vs {b}");
        prop_assert!((w1(&nu, &mu) - a).abs() < 1e-12);
    }

    #[test]
    fn potential_closes_duality_gap((mu, nu) in instance()) {
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        let gap = duality_gap(&potential(&dec), &mu, &nu).unwrap();
        prop_assert!(gap.abs() < 1e-12, "gap {gap}");
    }

    #[test]
    fn signed_regions_balance_mass((mu, nu) in instance()) {
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        for r in dec.regions.iter().filter(|r| r.sign != Sign::Zero) {
            prop_assert!((mu.mass(&r.interval) - nu.mass(&r.interval)).abs() < 1e-9);
        }
    }

    #[test]
    fn limit_plan_has_the_right_marginals((mu, nu) in instance()) {
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        let lp = build_limit_plan(&mu, &nu, &dec).unwrap();
        for f in &lp.factors {
            let (e1, e2) = marginal_l1_errors(f, &mu, &nu, 512);
            prop_assert!(e1 < 1e-6 && e2 < 1e-6, "{e1} {e2}");
        }
        let g = make_grid(&mu, &nu, 64).unwrap();
        let p = discretize_limit_plan(&lp, &g);
        prop_assert!(p.marginal_deviation(&g) < 1e-10);
    }

    #[test]
    fn limit_factors_are_product_form((mu, nu) in instance(), s in 0.05f64..0.95, t in 0.05f64..0.95) {
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        let lp = build_limit_plan(&mu, &nu, &dec).unwrap();
        for f in &lp.factors {
            let iv = f.interval;
            let (x1, x2) = (iv.lo + s * iv.length(), iv.lo + t * iv.length());
            let (lo, hi) = (x1.min(x2), x1.max(x2));
            // log density = -ln G(x) - ln F(y): mixed second differences vanish.
            let ld = |x: f64, y: f64| -f.log_g(x) - f.log_f(y);
            let mixed = ld(lo, hi) - ld(lo, lo + 0.5 * (hi - lo)) - ld(lo + 0.25 * (hi - lo), hi)
                + ld(lo + 0.25 * (hi - lo), lo + 0.5 * (hi - lo));
            prop_assert!(mixed.abs() < 1e-9);
        }
    }

    #[test]
    fn sinkhorn_plan_is_product_form(a in masses(12), b in masses(12), eps in 0.05f64..2.0) {
        let g = Grid::from_masses(0.0, 1.0, a, b).unwrap();
        let r = sinkhorn(&g, eps, 1e-11, DEFAULT_MAX_ITER).unwrap();
        prop_assert!(r.converged);
        for i in 0..g.n() {
            for j in 0..g.n() {
                let expect = g.a()[i] * g.b()[j] * ((r.alpha[i] + r.beta[j] - g.cost(i, j)) / eps).exp();
                prop_assert!((r.plan.get(i, j) / expect - 1.0).abs() < 1e-12);
            }
        }
        if let (Some(first), Some(last)) = (r.residual_trace.first(), r.residual_trace.last()) {
            prop_assert!(last <= first);
        }
    }

    #[test]
    fn sinkhorn_agrees_with_oracle(a in masses(5), b in masses(5), eps in 0.1f64..1.0) {
        let g = Grid::from_masses(0.0, 1.0, a, b).unwrap();
        let s = sinkhorn(&g, eps, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let o = brute_min(&g, eps).unwrap();
        assert_abs_diff_eq!(j_eps(&s.plan, &g, eps), j_eps(&o, &g, eps), epsilon = 1e-9);
    }

    #[test]
    fn ipf_full_mask_is_product(a in masses(8), b in masses(8)) {
        let g = Grid::from_masses(0.0, 1.0, a.clone(), b.clone()).unwrap();
        let p = ipf_masked(&g, &Mask::full(8), 1e-12, 1000).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_abs_diff_eq!(p.get(i, j), a[i] * b[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ipf_fixed_point_respects_mask((mu, nu) in instance()) {
        let g = make_grid(&mu, &nu, 64).unwrap();
        let dec = sign_decompose(&mu, &nu, DEFAULT_TAU_SIGN);
        let mask = limit_mask(&g, &dec);
        // Thin sign regions make convergence very slow; a stall must still
        // be close to feasible, since the discretized limit plan fits the mask.
        let p = match ipf_masked(&g, &mask, 1e-10, DEFAULT_MAX_ITER) {
            Ok(p) => p,
            Err(SolverError::Infeasible { residual }) => {
                prop_assert!(residual < 1e-6, "stalled at {residual}");
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(p.marginal_deviation(&g) < 1e-9);
        for i in 0..64 {
            for j in 0..64 {
                if !mask.get(i, j) {
                    prop_assert_eq!(p.get(i, j), 0.0);
                }
            }
        }
    }
}
