//! Report records and their JSON-lines and CSV renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::BigRational;
use serde::Serialize;
use serde_json::Value;
use uipq_core::formulas::{rat_string, to_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// a known mismatch that is reported but does not fail the run
    ExpectedFail,
    Info,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::ExpectedFail => "expected-fail",
            Verdict::Info => "info",
        }
    }
}

/// One comparison: lhs measured or computed, rhs the reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub lhs: String,
    pub rhs: String,
    pub abs_err: Option<f64>,
    pub rel_err: Option<f64>,
    pub verdict: Verdict,
}

/// Short rationals print as "p/q"; long ones as a decimal.
pub fn show_rational(x: &BigRational) -> String {
    if x.numer().bits() <= 128 && x.denom().bits() <= 128 {
        rat_string(x)
    } else {
        format!("{:e}", to_f64(x))
    }
}

fn errors(lhs: f64, rhs: f64) -> (Option<f64>, Option<f64>) {
    let abs = (lhs - rhs).abs();
    let rel = if rhs != 0.0 { Some(abs / rhs.abs()) } else { None };
    (Some(abs), rel)
}

impl Check {
    pub fn exact(name: impl Into<String>, lhs: &BigRational, rhs: &BigRational, verdict: Verdict) -> Self {
        let diff = to_f64(&(lhs - rhs));
        let r = to_f64(rhs);
        Check {
            name: name.into(),
            lhs: show_rational(lhs),
            rhs: show_rational(rhs),
            abs_err: Some(diff.abs()),
            rel_err: (r != 0.0).then(|| diff.abs() / r.abs()),
            verdict,
        }
    }

    pub fn float(name: impl Into<String>, lhs: f64, rhs: f64, verdict: Verdict) -> Self {
        let (abs_err, rel_err) = errors(lhs, rhs);
        Check { name: name.into(), lhs: format!("{lhs}"), rhs: format!("{rhs}"), abs_err, rel_err, verdict }
    }

    pub fn text(name: impl Into<String>, lhs: impl ToString, rhs: impl ToString, verdict: Verdict) -> Self {
        Check { name: name.into(), lhs: lhs.to_string(), rhs: rhs.to_string(), abs_err: None, rel_err: None, verdict }
    }
}

/// A statistic at one point of a sweep, e.g. TV at n = 200.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub key: String,
    pub at: f64,
    pub statistic: String,
    pub value: f64,
    pub error: Option<f64>,
}

impl Point {
    pub fn new(key: &str, at: f64, statistic: &str, value: f64, error: Option<f64>) -> Self {
        Point { key: key.into(), at, statistic: statistic.into(), value, error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub checks: usize,
    pub pass: usize,
    pub fail: usize,
    pub expected_fail: usize,
    pub info: usize,
    pub verdict: Verdict,
}

/// Everything an experiment produced. Wall-clock time is deliberately not
/// part of it, so equal seeds give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub parameters: BTreeMap<String, Value>,
    pub points: Vec<Point>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl ExperimentReport {
    pub fn new(experiment: &str, seed: u64) -> Self {
        ExperimentReport {
            experiment: experiment.into(),
            seed,
            parameters: BTreeMap::new(),
            points: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(key.into(), serde_json::to_value(value).expect("parameter serializes"));
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn point(&mut self, p: Point) {
        self.points.push(p);
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> Summary {
        let count = |v: Verdict| self.checks.iter().filter(|c| c.verdict == v).count();
        let fail = count(Verdict::Fail);
        Summary {
            experiment: self.experiment.clone(),
            checks: self.checks.len(),
            pass: count(Verdict::Pass),
            fail,
            expected_fail: count(Verdict::ExpectedFail),
            info: count(Verdict::Info),
            verdict: Verdict::from_bool(fail == 0),
        }
    }

    pub fn passed(&self) -> bool {
        self.summary().fail == 0
    }

    /// Header line, one line per point and per check, then the summary.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "type": "header",
            "experiment": self.experiment,
            "seed": self.seed,
            "parameters": self.parameters,
        });
        writeln!(out, "{header}").unwrap();
        for p in &self.points {
            let mut v = serde_json::to_value(p).unwrap();
            v["type"] = "point".into();
            writeln!(out, "{v}").unwrap();
        }
        for c in &self.checks {
            let mut v = serde_json::to_value(c).unwrap();
            v["type"] = "check".into();
            writeln!(out, "{v}").unwrap();
        }
        let mut s = serde_json::to_value(self.summary()).unwrap();
        s["type"] = "summary".into();
        writeln!(out, "{s}").unwrap();
        out
    }

    pub fn to_csv(&self) -> String {
        fn field(s: &str) -> String {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        }
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("kind,name,key,at,value,error,reference,abs_err,rel_err,verdict\n");
        for p in &self.points {
            writeln!(
                out,
                "point,{},{},{},{},{},,,,",
                field(&p.statistic),
                field(&p.key),
                p.at,
                p.value,
                opt(p.error)
            )
            .unwrap();
        }
        for c in &self.checks {
            writeln!(
                out,
                "check,{},,,{},,{},{},{},{}",
                field(&c.name),
                field(&c.lhs),
                field(&c.rhs),
                opt(c.abs_err),
                opt(c.rel_err),
                c.verdict.as_str()
            )
            .unwrap();
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json_lines(),
            Format::Csv => self.to_csv(),
        }
    }
}
