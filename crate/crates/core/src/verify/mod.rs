//! Statistical verification: every identity or limit theorem is checked by
//! computing both sides with independent estimators (tree side against spine
//! side, or Monte Carlo against closed form) and applying a two-sample
//! z test, a Kolmogorov-Smirnov distance, or a chi-square fit.
//!
//! Checks are deterministic given `(config, seed)`: replica farms run on
//! indexed substreams and all reductions happen in fixed order, so reports
//! are byte-identical at any parallelism degree.

use crate::stats::{two_sample_z, McEstimate};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub mod clt;
pub mod fluctuation;
pub mod forks;
pub mod lln;
pub mod many_to_one;
pub mod moments;
pub mod suite;

pub use suite::{default_suite, run_suite, SuiteOutcome};

/// A statistic that may be infinite (degenerate z tests); serialized as a
/// number when finite, as `"inf"`/`"nan"` otherwise so reports stay valid
/// JSON.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Stat(pub f64);

impl Serialize for Stat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0.is_nan() {
            s.serialize_str("nan")
        } else {
            s.serialize_str(if self.0 > 0.0 { "inf" } else { "-inf" })
        }
    }
}

impl<'de> Deserialize<'de> for Stat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Num(x) => Stat(x),
            Raw::Text(s) => Stat(match s.as_str() {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                _ => f64::NAN,
            }),
        })
    }
}

/// Plot payload attached to a check, emitted later as tidy CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    /// `(x, y)` points.
    pub points: Vec<(f64, f64)>,
}

/// Result of one verification check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    /// Statistic family: `z`, `ks`, `chi2` or `rel`.
    pub kind: String,
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    /// Comparison statistic (z value, KS distance over threshold, ...).
    pub z: Stat,
    pub pass: bool,
    pub meta: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub plots: Vec<PlotSeries>,
}

impl CheckReport {
    /// Two-sample z comparison at level `z_max`.
    pub fn z_test(name: &str, lhs: McEstimate, rhs: McEstimate, z_max: f64) -> Self {
        let (z, pass) = two_sample_z(lhs, rhs, z_max);
        let mut meta = BTreeMap::new();
        meta.insert("z_max".into(), format_num(z_max));
        CheckReport {
            name: name.to_string(),
            kind: "z".into(),
            lhs,
            rhs,
            z: Stat(z),
            pass,
            meta,
            plots: Vec::new(),
        }
    }

    /// Threshold comparison `stat <= bound` (KS distances, relative errors).
    pub fn bound_test(name: &str, kind: &str, stat: f64, bound: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            kind: kind.into(),
            lhs: McEstimate::exact(stat),
            rhs: McEstimate::exact(bound),
            z: Stat(stat / bound),
            pass: stat <= bound,
            meta: BTreeMap::new(),
            plots: Vec::new(),
        }
    }

    /// Lower-bound comparison `stat >= bound` (p-values).
    pub fn p_value_test(name: &str, p: f64, p_min: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            kind: "chi2".into(),
            lhs: McEstimate::exact(p),
            rhs: McEstimate::exact(p_min),
            z: Stat(p_min / p.max(f64::MIN_POSITIVE)),
            pass: p > p_min,
            meta: BTreeMap::new(),
            plots: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_plot(mut self, plot: PlotSeries) -> Self {
        self.plots.push(plot);
        self
    }
}

pub(crate) fn format_num(x: f64) -> String {
    format!("{x}")
}

/// Named test functions used across checks; the battery is fixed so configs
/// can refer to functions by name.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFn {
    One,
    Identity,
    Square,
    /// `exp(-x^2)`
    GaussBump,
    /// Indicator of `[0, 1/2)`
    Band,
}

impl TestFn {
    pub fn eval(self, s: crate::motion::State) -> f64 {
        match self {
            TestFn::One => 1.0,
            TestFn::Identity => s.x,
            TestFn::Square => s.x * s.x,
            TestFn::GaussBump => (-s.x * s.x).exp(),
            TestFn::Band => {
                if (0.0..0.5).contains(&s.x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFn::One => "one",
            TestFn::Identity => "x",
            TestFn::Square => "x2",
            TestFn::GaussBump => "gauss_bump",
            TestFn::Band => "band",
        }
    }
}

/// Run `n` independent replicas on indexed substreams, in order.
pub fn par_replicas<T, F>(n: u64, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> crate::Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_serialization_handles_infinities() {
        let fin = serde_json::to_string(&Stat(1.5)).unwrap();
        assert_eq!(fin, "1.5");
        let inf = serde_json::to_string(&Stat(f64::INFINITY)).unwrap();
        assert_eq!(inf, "\"inf\"");
        let back: Stat = serde_json::from_str(&inf).unwrap();
        assert!(back.0.is_infinite());
    }

    #[test]
    fn z_report_degenerate_fail() {
        let r = CheckReport::z_test("x", McEstimate::exact(1.0), McEstimate::exact(2.0), 4.0);
        assert!(!r.pass);
        assert!(r.z.0.is_infinite());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"inf\""));
    }
}
