//! Compactly supported, atomless probability measures on the line.
//!
//! A measure is stored as a piecewise-constant density over strictly
//! increasing breakpoints, so its CDF is continuous and piecewise linear and
//! every quantity downstream (W1, sign regions, entropies) has a closed form.

use serde::{Deserialize, Serialize};

use crate::error::MeasureError;
use crate::numeric::xlogx;

/// Tolerance on total mass when the caller asks for no normalization.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, MeasureError> {
        if lo < hi && lo.is_finite() && hi.is_finite() {
            Ok(Self { lo, hi })
        } else {
            Err(MeasureError::EmptyInterval { lo, hi })
        }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Closed-interval membership.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }

    pub(crate) fn reflect(&self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

/// Nonnegative piecewise-constant density of arbitrary finite mass.
///
/// Used for restrictions such as `mu` restricted to the set where the two
/// CDFs agree; [`Measure1D`] is the unit-mass special case.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity {
    breakpoints: Vec<f64>,
    densities: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PiecewiseDensity {
    fn from_parts(breakpoints: Vec<f64>, densities: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(breakpoints.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for (w, d) in breakpoints.windows(2).zip(&densities) {
            acc += d * (w[1] - w[0]);
            cumulative.push(acc);
        }
        Self {
            breakpoints,
            densities,
            cumulative,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Mass of `(-inf, x]`.
    pub fn cumulative(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        if bp.is_empty() || x <= bp[0] {
            return 0.0;
        }
        if x >= bp[bp.len() - 1] {
            return self.total_mass();
        }
        let k = bp.partition_point(|&b| b <= x) - 1;
        self.cumulative[k] + self.densities[k] * (x - bp[k])
    }

    /// Density value at `x` (right-continuous; zero outside the breakpoints).
    pub fn density_at(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        if bp.is_empty() || x < bp[0] || x >= bp[bp.len() - 1] {
            return 0.0;
        }
        self.densities[bp.partition_point(|&b| b <= x) - 1]
    }

    pub fn mass(&self, interval: &Interval) -> f64 {
        (self.cumulative(interval.hi) - self.cumulative(interval.lo)).max(0.0)
    }

    /// `sum d ln d * length`, i.e. `integral ln(density) d(self)`.
    pub fn entropy_vs_lebesgue(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .zip(&self.densities)
            .map(|(w, &d)| xlogx(d) * (w[1] - w[0]))
            .sum()
    }

    /// Restriction to a union of disjoint intervals.
    pub fn restrict(&self, intervals: &[Interval]) -> PiecewiseDensity {
        let mut knots: Vec<f64> = self.breakpoints.clone();
        for iv in intervals {
            knots.push(iv.lo);
            knots.push(iv.hi);
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let densities = knots
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                if intervals.iter().any(|iv| iv.contains(mid)) {
                    self.density_at(mid)
                } else {
                    0.0
                }
            })
            .collect();
        PiecewiseDensity::from_parts(knots, densities)
    }

    /// Maximal intervals on which the density is positive.
    pub fn support_components(&self) -> Vec<Interval> {
        let mut out: Vec<Interval> = Vec::new();
        for (w, &d) in self.breakpoints.windows(2).zip(&self.densities) {
            if d <= 0.0 {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.hi == w[0] => last.hi = w[1],
                _ => out.push(Interval { lo: w[0], hi: w[1] }),
            }
        }
        out
    }
}

/// Compactly supported probability measure with piecewise-constant density.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure1D {
    inner: PiecewiseDensity,
}

impl Measure1D {
    /// Builds a measure from `m + 1` breakpoints and `m` densities.
    ///
    /// With `normalize` the densities are rescaled to unit mass; otherwise the
    /// mass must already be 1 within [`MASS_TOLERANCE`] (it is then snapped).
    pub fn from_piecewise(
        breakpoints: &[f64],
        densities: &[f64],
        normalize: bool,
    ) -> Result<Self, MeasureError> {
        if breakpoints.len() < 2 || densities.len() + 1 != breakpoints.len() {
            return Err(MeasureError::LengthMismatch {
                breakpoints: breakpoints.len(),
                expected: breakpoints.len().saturating_sub(1).max(1),
                got: densities.len(),
            });
        }
        if let Some(index) = breakpoints.iter().position(|b| !b.is_finite()) {
            return Err(MeasureError::NonIncreasingBreakpoints { index });
        }
        if let Some(i) = breakpoints.windows(2).position(|w| w[1] <= w[0]) {
            return Err(MeasureError::NonIncreasingBreakpoints { index: i + 1 });
        }
        if let Some(index) = densities.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(MeasureError::NegativeDensity {
                index,
                value: densities[index],
            });
        }
        let mass: f64 = breakpoints
            .windows(2)
            .zip(densities)
            .map(|(w, d)| d * (w[1] - w[0]))
            .sum();
        if mass <= 0.0 {
            return Err(MeasureError::ZeroMass);
        }
        if !normalize && (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(MeasureError::MassNotOne { mass });
        }
        let densities: Vec<f64> = densities.iter().map(|d| d / mass).collect();
        let mut inner = PiecewiseDensity::from_parts(breakpoints.to_vec(), densities);
        // Pin F = 1 at the right end so CDF differences vanish exactly there.
        if let Some(last) = inner.cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self { inner })
    }

    /// Equal-width histogram over `[min, max]` of the samples.
    pub fn from_samples(samples: &[f64], bin_count: usize) -> Result<Self, MeasureError> {
        if bin_count == 0 {
            return Err(MeasureError::ZeroBins);
        }
        if samples.len() < 2 {
            return Err(MeasureError::TooFewSamples(samples.len()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(MeasureError::NonFiniteSample(i));
        }
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo >= hi {
            return Err(MeasureError::DegenerateRange);
        }
        let width = (hi - lo) / bin_count as f64;
        let mut counts = vec![0usize; bin_count];
        for &s in samples {
            let k = (((s - lo) / width).floor() as usize).min(bin_count - 1);
            counts[k] += 1;
        }
        let mut breakpoints: Vec<f64> = (0..bin_count).map(|k| lo + k as f64 * width).collect();
        breakpoints.push(hi);
        let total = samples.len() as f64;
        let densities: Vec<f64> = counts
            .iter()
            .zip(breakpoints.windows(2))
            .map(|(&c, w)| c as f64 / (total * (w[1] - w[0])))
            .collect();
        Self::from_piecewise(&breakpoints, &densities, true)
    }

    /// Parses one real per line; blank lines and `#` comments are skipped.
    pub fn from_samples_csv(text: &str, bin_count: usize) -> Result<Self, SampleParseError> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let field = line.split(',').next().unwrap_or("").trim();
            let v: f64 = field.parse().map_err(|_| SampleParseError::BadLine {
                line: lineno + 1,
                content: line.to_string(),
            })?;
            samples.push(v);
        }
        Ok(Self::from_samples(&samples, bin_count)?)
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.inner.breakpoints()
    }

    pub fn densities(&self) -> &[f64] {
        self.inner.densities()
    }

    pub fn as_density(&self) -> &PiecewiseDensity {
        &self.inner
    }

    /// `[first breakpoint, last breakpoint]`.
    pub fn hull(&self) -> Interval {
        let bp = self.breakpoints();
        Interval {
            lo: bp[0],
            hi: bp[bp.len() - 1],
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.inner.cumulative(x).clamp(0.0, 1.0)
    }

    /// Left-continuous generalized inverse `inf { y : F(y) >= p }`.
    ///
    /// On a zero-density gap whose CDF plateau equals `p` this returns the
    /// gap's left end. `p <= 0` returns the hull's left end.
    pub fn quantile(&self, p: f64) -> f64 {
        let bp = self.breakpoints();
        let cum = &self.inner.cumulative;
        let m = self.densities().len();
        if p <= 0.0 {
            return bp[0];
        }
        let p = p.min(1.0);
        let i = cum[1..].partition_point(|&c| c < p).min(m - 1);
        let d = self.densities()[i];
        if d <= 0.0 || p <= cum[i] {
            return bp[i];
        }
        (bp[i] + (p - cum[i]) / d).clamp(bp[i], bp[i + 1])
    }

    pub fn density_at(&self, x: f64) -> f64 {
        self.inner.density_at(x)
    }

    pub fn mass(&self, interval: &Interval) -> f64 {
        (self.cdf(interval.hi) - self.cdf(interval.lo)).max(0.0)
    }

    pub fn entropy_vs_lebesgue(&self) -> f64 {
        self.inner.entropy_vs_lebesgue()
    }

    pub fn restrict(&self, intervals: &[Interval]) -> PiecewiseDensity {
        self.inner.restrict(intervals)
    }

    /// Image under `x -> -x`.
    pub fn reflect(&self) -> Measure1D {
        let breakpoints: Vec<f64> = self.breakpoints().iter().rev().map(|b| -b).collect();
        let densities: Vec<f64> = self.densities().iter().rev().copied().collect();
        let mut inner = PiecewiseDensity::from_parts(breakpoints, densities);
        if let Some(last) = inner.cumulative.last_mut() {
            *last = 1.0;
        }
        Measure1D { inner }
    }

    pub fn to_spec(&self) -> MeasureSpec {
        MeasureSpec {
            breakpoints: self.breakpoints().to_vec(),
            densities: self.densities().to_vec(),
            normalize: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SampleParseError {
    #[error("line {line}: cannot parse {content:?} as a real number")]
    BadLine { line: usize, content: String },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// JSON form of one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub breakpoints: Vec<f64>,
    pub densities: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub normalize: bool,
}

impl MeasureSpec {
    pub fn build(&self) -> Result<Measure1D, MeasureError> {
        Measure1D::from_piecewise(&self.breakpoints, &self.densities, self.normalize)
    }
}

/// Instance file: `{"mu": {...}, "nu": {...}, "label": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Which side of an instance failed validation.
#[derive(Debug, thiserror::Error)]
#[error("{field}: {source}")]
pub struct InstanceError {
    pub field: &'static str,
    #[source]
    pub source: MeasureError,
}

impl InstanceFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_measures(mu: &Measure1D, nu: &Measure1D, label: Option<&str>) -> Self {
        Self {
            mu: mu.to_spec(),
            nu: nu.to_spec(),
            label: label.map(str::to_string),
        }
    }

    pub fn measures(&self) -> Result<(Measure1D, Measure1D), InstanceError> {
        let mu = self
            .mu
            .build()
            .map_err(|source| InstanceError { field: "mu", source })?;
        let nu = self
            .nu
            .build()
            .map_err(|source| InstanceError { field: "nu", source })?;
        Ok((mu, nu))
    }
}
