//! Analysis report and JSON output with 17 significant digits.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::LimitPlanError;
use crate::limit_plan::{build_limit_plan, factor_entropy_formula, h2_value, limit_functional_value};
use crate::measures::Measure1D;
use crate::structure::{h1_diagnostic, potential, sign_decompose, w1, Sign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionEntry {
    pub lo: f64,
    pub hi: f64,
    pub sign: Sign,
    pub mu_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialEntry {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorEntry {
    pub lo: f64,
    pub hi: f64,
    pub sign: Sign,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub label: Option<String>,
    pub regions: Vec<RegionEntry>,
    pub w1: f64,
    pub mass_a: f64,
    pub potential: PotentialEntry,
    pub h1: f64,
    /// `None` when the integral diverges.
    pub h2: Option<f64>,
    pub factors: Vec<FactorEntry>,
    pub zero_region_entropy_term: f64,
    pub min_f: Option<f64>,
}

impl ReportFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn analyze(mu: &Measure1D, nu: &Measure1D, label: Option<&str>, tau: f64) -> Result<ReportFile, LimitPlanError> {
    let dec = sign_decompose(mu, nu, tau);
    let lp = build_limit_plan(mu, nu, &dec)?;
    let u = potential(&dec);
    let h2 = h2_value(mu, nu, &dec);
    Ok(ReportFile {
        label: label.map(str::to_string),
        regions: dec
            .regions
            .iter()
            .map(|r| RegionEntry {
                lo: r.interval.lo,
                hi: r.interval.hi,
                sign: r.sign,
                mu_mass: mu.mass(&r.interval),
            })
            .collect(),
        w1: w1(mu, nu),
        mass_a: dec.zero_mass(mu),
        potential: PotentialEntry {
            knots: u.knots().to_vec(),
            values: u.values().to_vec(),
        },
        h1: h1_diagnostic(mu, &dec),
        h2: h2.is_finite().then_some(h2),
        factors: lp
            .factors
            .iter()
            .map(|f| FactorEntry {
                lo: f.interval.lo,
                hi: f.interval.hi,
                sign: f.sign,
                entropy: factor_entropy_formula(f, mu),
            })
            .collect(),
        zero_region_entropy_term: lp.zero_region_entropy_term,
        min_f: limit_functional_value(&lp).ok(),
    })
}

/// Pretty JSON formatter writing every float as `d.dddddddddddddddde±x`.
struct Digits17(PrettyFormatter<'static>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        // Adding 0.0 turns -0.0 into 0.0.
        write!(w, "{:.16e}", value + 0.0)
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

/// Pretty JSON with 17 significant digits; non-finite floats become `null`
/// and negative zero is written as zero.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("serialization to memory cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON is UTF-8")
}
