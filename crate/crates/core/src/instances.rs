//! Bundled test instances and a seeded random generator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::measures::Measure1D;

pub fn uniform(lo: f64, hi: f64) -> Measure1D {
    Measure1D::from_piecewise(&[lo, hi], &[1.0 / (hi - lo)], false).expect("valid uniform")
}

/// `mu = nu = U[0,1]`.
pub fn e1() -> (Measure1D, Measure1D) {
    (uniform(0.0, 1.0), uniform(0.0, 1.0))
}

/// `mu = U[0,1]`, `nu = U[1,2]`.
pub fn e2() -> (Measure1D, Measure1D) {
    (uniform(0.0, 1.0), uniform(1.0, 2.0))
}

/// `mu = U[0,1]`, `nu = U[0.5,1.5]`.
pub fn e3() -> (Measure1D, Measure1D) {
    (uniform(0.0, 1.0), uniform(0.5, 1.5))
}

/// `mu = U[0,2]`; `nu` has density 1/2 on `[0,1]`, 0 on `[1,1.5]`, 1 on `[1.5,2]`.
pub fn e4() -> (Measure1D, Measure1D) {
    let nu = Measure1D::from_piecewise(&[0.0, 1.0, 1.5, 2.0], &[0.5, 0.0, 1.0], false)
        .expect("valid instance");
    (uniform(0.0, 2.0), nu)
}

pub fn bundled() -> Vec<(&'static str, Measure1D, Measure1D)> {
    let mut out = Vec::new();
    for (name, (mu, nu)) in [("e1", e1()), ("e2", e2()), ("e3", e3()), ("e4", e4())] {
        out.push((name, mu, nu));
    }
    out
}

fn random_piecewise(rng: &mut ChaCha8Rng, lo: f64, hi: f64, pieces: usize) -> (Vec<f64>, Vec<f64>) {
    let mut inner: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(lo..hi)).collect();
    inner.sort_by(f64::total_cmp);
    let mut bp = vec![lo];
    for x in inner {
        // Round to a dyadic grid so breakpoints are exactly representable and distinct.
        let x = (x * 64.0).round() / 64.0;
        if x > *bp.last().unwrap() && x < hi {
            bp.push(x);
        }
    }
    bp.push(hi);
    let dens = (0..bp.len() - 1)
        .map(|_| {
            if rng.gen_bool(0.15) {
                0.0
            } else {
                rng.gen_range(0.2..2.0)
            }
        })
        .collect();
    (bp, dens)
}

fn build(bp: &[f64], dens: &mut [f64]) -> Measure1D {
    if dens.iter().all(|&d| d == 0.0) {
        dens[0] = 1.0;
    }
    Measure1D::from_piecewise(bp, dens, true).expect("generated measure is valid")
}

/// Random pair of piecewise-constant measures. Some share a leading stretch
/// (producing a Zero region), some have density gaps.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Measure1D, Measure1D) {
    let lo = (rng.gen_range(-1.0..0.5) * 8.0f64).round() / 8.0;
    let hi = lo + (rng.gen_range(1.0..3.0) * 8.0f64).round() / 8.0;
    let pieces_mu = rng.gen_range(1..=5);
    let pieces_nu = rng.gen_range(1..=5);
    let (bp_mu, mut d_mu) = random_piecewise(rng, lo, hi, pieces_mu);
    if rng.gen_bool(0.3) {
        // Common prefix: same density up to a cut, different afterwards.
        let cut = ((lo + 0.4 * (hi - lo)) * 8.0).round() / 8.0;
        let w = 0.5;
        let bp = vec![lo, cut, hi];
        let rest_mu = (1.0 - w * (cut - lo)) / (hi - cut);
        let mu = Measure1D::from_piecewise(&bp, &[w, rest_mu], false).expect("valid");
        let nu_bp = vec![lo, cut, 0.5 * (cut + hi), hi];
        let m = 1.0 - w * (cut - lo);
        let half = 0.5 * (hi - cut);
        let split = rng.gen_range(0.1..0.9);
        let nu = Measure1D::from_piecewise(
            &nu_bp,
            &[w, split * m / half, (1.0 - split) * m / half],
            true,
        )
        .expect("valid");
        return (mu, nu);
    }
    let shift = (rng.gen_range(0.0..0.5) * 8.0f64).round() / 8.0;
    let (bp_nu, mut d_nu) = random_piecewise(rng, lo + shift, hi + 0.5, pieces_nu);
    (build(&bp_mu, &mut d_mu), build(&bp_nu, &mut d_nu))
}

/// `count` instances from a fixed seed.
pub fn random_corpus(seed: u64, count: usize) -> Vec<(Measure1D, Measure1D)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_instance(&mut rng)).collect()
}
