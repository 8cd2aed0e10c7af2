//! Unit-test style battery: fixed distributions, several rules, and
//! expectations about what each rule keeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{Dist, Vocab};
use crate::error::{Error, Result};
use crate::truncation::TruncationRule;

/// Members below this probability are left out of the report.
pub const DEFAULT_PRINT_THRESHOLD: f64 = 0.01;
const MAX_PRINTED_MEMBERS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    SizeEq(usize),
    SizeAtLeast(usize),
    SizeAtMost(usize),
    Contains(u32),
    Excludes(u32),
}

impl Check {
    fn holds(&self, size: usize, contains: impl Fn(u32) -> bool) -> bool {
        match *self {
            Check::SizeEq(n) => size == n,
            Check::SizeAtLeast(n) => size >= n,
            Check::SizeAtMost(n) => size <= n,
            Check::Contains(id) => contains(id),
            Check::Excludes(id) => !contains(id),
        }
    }

    fn describe(&self) -> String {
        match self {
            Check::SizeEq(n) => format!("size == {n}"),
            Check::SizeAtLeast(n) => format!("size >= {n}"),
            Check::SizeAtMost(n) => format!("size <= {n}"),
            Check::Contains(id) => format!("contains {id}"),
            Check::Excludes(id) => format!("excludes {id}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expectation {
    /// Index into the case's rule list.
    pub rule: usize,
    pub check: Check,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChecklistCase {
    pub name: String,
    pub vocab: Vocab,
    pub dist: Dist,
    pub rules: Vec<TruncationRule>,
    pub expected: Vec<Expectation>,
}

impl ChecklistCase {
    pub fn new(
        name: impl Into<String>,
        vocab: Vocab,
        dist: Dist,
        rules: Vec<TruncationRule>,
        expected: Vec<Expectation>,
    ) -> Result<Self> {
        let name = name.into();
        if rules.is_empty() {
            return Err(Error::param(format!("case {name:?} has no rules")));
        }
        if vocab.len() != dist.len() {
            return Err(Error::SizeMismatch {
                expected: dist.len(),
                actual: vocab.len(),
            });
        }
        if let Some(e) = expected.iter().find(|e| e.rule >= rules.len()) {
            return Err(Error::param(format!(
                "case {name:?} expects rule #{} which does not exist",
                e.rule
            )));
        }
        Ok(ChecklistCase {
            name,
            vocab,
            dist,
            rules,
            expected,
        })
    }
}

/// Distribution source in a cases file.
#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DistSpec {
    Probs(Vec<f64>),
    Uniform(usize),
    /// `p(r) ∝ r^-exponent` over ranks `1..=size`.
    Zipf {
        size: usize,
        exponent: f64,
    },
    /// One word at `head` and `count` words at `each`.
    Head {
        head: f64,
        each: f64,
        count: usize,
    },
}

#[derive(Clone, Debug, Deserialize)]
struct ExpectSpec {
    rule: String,
    #[serde(flatten)]
    check: Check,
}

#[derive(Clone, Debug, Deserialize)]
struct CaseSpec {
    name: String,
    dist: DistSpec,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    rules: Vec<String>,
    #[serde(default)]
    expect: Vec<ExpectSpec>,
}

fn build_dist(spec: &DistSpec) -> Result<Dist> {
    match *spec {
        DistSpec::Probs(ref p) => Dist::new(p.clone()),
        DistSpec::Uniform(n) => Dist::uniform(n),
        DistSpec::Zipf { size, exponent } => {
            Dist::from_weights((1..=size).map(|r| (r as f64).powf(-exponent)).collect())
        }
        DistSpec::Head { head, each, count } => {
            let mut p = vec![head];
            p.extend(std::iter::repeat_n(each, count));
            Dist::new(p)
        }
    }
}

impl CaseSpec {
    fn build(self) -> Result<ChecklistCase> {
        let dist = build_dist(&self.dist)?;
        let vocab = match self.tokens {
            Some(t) => Vocab::new(t)?,
            None => Vocab::synthetic(dist.len())?,
        };
        let rules = self
            .rules
            .iter()
            .map(|r| r.parse())
            .collect::<Result<Vec<TruncationRule>>>()?;
        let expected = self
            .expect
            .into_iter()
            .map(|e| {
                let rule: TruncationRule = e.rule.parse()?;
                let idx = rules
                    .iter()
                    .position(|r| *r == rule)
                    .ok_or_else(|| Error::param(format!("expectation names unlisted rule {rule}")))?;
                Ok(Expectation {
                    rule: idx,
                    check: e.check,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ChecklistCase::new(self.name, vocab, dist, rules, expected)
    }
}

/// Parses a JSON array of cases.
///
/// ```json
/// [{"name": "Donald", "dist": {"head": {"head": 0.96, "each": 0.001, "count": 40}},
///   "rules": ["top-p:0.95", "eta:0.0009"],
///   "expect": [{"rule": "top-p:0.95", "size_eq": 1}]}]
/// ```
pub fn parse_cases(json: &str) -> Result<Vec<ChecklistCase>> {
    let specs: Vec<CaseSpec> = serde_json::from_str(json)?;
    specs.into_iter().map(CaseSpec::build).collect()
}

pub fn load_cases(path: &Path) -> Result<Vec<ChecklistCase>> {
    parse_cases(&std::fs::read_to_string(path)?)
}

/// The low-entropy, high-entropy and degenerate fixtures.
pub fn builtin_cases() -> Vec<ChecklistCase> {
    let rule = |s: &str| s.parse::<TruncationRule>().expect("builtin rule");
    let donald = {
        let mut tokens = vec!["Trump".to_string()];
        tokens.extend((1..=40).map(|i| format!("alt{i}")));
        let mut p = vec![0.96];
        p.extend(std::iter::repeat_n(0.001, 40));
        ChecklistCase::new(
            "Donald",
            Vocab::new(tokens).expect("unique"),
            Dist::new(p).expect("normalized"),
            vec![
                rule("top-p:0.95"),
                rule("eta:0.0009"),
                rule("epsilon:0.0009"),
                rule("typical:0.95"),
            ],
            vec![
                Expectation {
                    rule: 0,
                    check: Check::SizeEq(1),
                },
                Expectation {
                    rule: 1,
                    check: Check::SizeEq(41),
                },
            ],
        )
    };
    let the = {
        let dist = build_dist(&DistSpec::Zipf {
            size: 50_000,
            exponent: 1.0,
        })
        .expect("zipf");
        ChecklistCase::new(
            "The",
            Vocab::synthetic(dist.len()).expect("vocab"),
            dist,
            vec![rule("epsilon:0.0003"), rule("eta:0.0003"), rule("top-p:0.95")],
            vec![
                Expectation {
                    rule: 0,
                    check: Check::SizeAtMost(1_000),
                },
                Expectation {
                    rule: 1,
                    check: Check::SizeAtLeast(5_000),
                },
                Expectation {
                    rule: 2,
                    check: Check::SizeAtLeast(10_000),
                },
            ],
        )
    };
    let one_hot = ChecklistCase::new(
        "one-hot",
        Vocab::synthetic(8).expect("vocab"),
        Dist::one_hot(8, 3).expect("one-hot"),
        vec![
            rule("top-k:1"),
            rule("top-p:0.95"),
            rule("typical:0.95"),
            rule("epsilon:0.0009"),
            rule("eta:0.0009"),
        ],
        (0..5)
            .flat_map(|r| {
                [
                    Expectation {
                        rule: r,
                        check: Check::SizeEq(1),
                    },
                    Expectation {
                        rule: r,
                        check: Check::Contains(3),
                    },
                ]
            })
            .collect(),
    );
    [donald, the, one_hot]
        .into_iter()
        .map(|c| c.expect("builtin case"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub description: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChecklistRow {
    pub case: String,
    pub rule: TruncationRule,
    pub allowed_size: usize,
    pub kept_mass: f64,
    /// Allowed words at or above the print threshold, most probable first.
    pub top_members: Vec<(String, f64)>,
    pub checks: Vec<CheckResult>,
}

impl ChecklistRow {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChecklistReport {
    pub rows: Vec<ChecklistRow>,
}

impl ChecklistReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(ChecklistRow::passed)
    }

    pub fn row(&self, case: &str, rule: &TruncationRule) -> Option<&ChecklistRow> {
        self.rows.iter().find(|r| r.case == case && r.rule == *rule)
    }
}

/// Applies every rule of every case and evaluates the expectations. Failed
/// expectations are recorded in the report, not returned as errors.
pub fn run_checklist(cases: &[ChecklistCase], print_threshold: f64) -> Result<ChecklistReport> {
    let mut rows = Vec::new();
    for case in cases {
        for (ri, rule) in case.rules.iter().enumerate() {
            let set = rule.allowed(&case.dist)?;
            let mut members: Vec<(u32, f64)> = set
                .members()
                .into_iter()
                .map(|id| (id, case.dist.prob(id)))
                .filter(|&(_, p)| p >= print_threshold)
                .collect();
            members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            members.truncate(MAX_PRINTED_MEMBERS);
            let checks = case
                .expected
                .iter()
                .filter(|e| e.rule == ri)
                .map(|e| CheckResult {
                    description: e.check.describe(),
                    passed: e.check.holds(set.size(), |id| set.contains(id)),
                })
                .collect();
            rows.push(ChecklistRow {
                case: case.name.clone(),
                rule: *rule,
                allowed_size: set.size(),
                kept_mass: set.kept_mass(),
                top_members: members
                    .into_iter()
                    .map(|(id, p)| (case.vocab.token(id).unwrap_or("<?>").to_owned(), p))
                    .collect(),
                checks,
            });
        }
    }
    Ok(ChecklistReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_battery_passes() {
        let report = run_checklist(&builtin_cases(), DEFAULT_PRINT_THRESHOLD).unwrap();
        for row in &report.rows {
            assert!(row.passed(), "{} {}: {:?}", row.case, row.rule, row.checks);
        }
        let the_eps = report.row("The", &"epsilon:0.0003".parse().unwrap()).unwrap();
        let the_eta = report.row("The", &"eta:0.0003".parse().unwrap()).unwrap();
        let the_top_p = report.row("The", &"top-p:0.95".parse().unwrap()).unwrap();
        // Oracle values from a direct scan of the Zipf weights.
        assert_eq!(the_eps.allowed_size, 292);
        assert_eq!(the_eta.allowed_size, 9753);
        assert_eq!(the_top_p.allowed_size, 28281);

        let donald = report.row("Donald", &"top-p:0.95".parse().unwrap()).unwrap();
        assert_eq!(donald.top_members, vec![("Trump".to_string(), 0.96)]);
    }

    #[test]
    fn failing_expectation_is_reported_not_raised() {
        let json = r#"[{"name": "flat", "dist": {"uniform": 4},
                        "rules": ["top-k:2"],
                        "expect": [{"rule": "top-k:2", "size_eq": 3}, {"rule": "top-k:2", "contains": 0}]}]"#;
        let cases = parse_cases(json).unwrap();
        let report = run_checklist(&cases, 0.0).unwrap();
        assert!(!report.all_passed());
        let checks = &report.rows[0].checks;
        assert!(!checks[0].passed && checks[1].passed);
    }

    #[test]
    fn parse_cases_variants_and_errors() {
        let json = r#"[
            {"name": "p", "dist": {"probs": [0.5, 0.5]}, "tokens": ["x", "y"], "rules": ["eta:0.01:0.5"]},
            {"name": "z", "dist": {"zipf": {"size": 10, "exponent": 1.5}}, "rules": ["typical:0.9"]},
            {"name": "h", "dist": {"head": {"head": 0.9, "each": 0.05, "count": 2}}, "rules": ["epsilon:0.1"],
             "expect": [{"rule": "epsilon:0.1", "excludes": 1}]}
        ]"#;
        let cases = parse_cases(json).unwrap();
        assert_eq!(cases.len(), 3);
        assert_eq!(cases[0].vocab.token(1), Some("y"));
        assert!(run_checklist(&cases, 0.01).unwrap().all_passed());

        assert!(parse_cases(r#"[{"name": "x", "dist": {"uniform": 2}, "rules": []}]"#).is_err());
        assert!(parse_cases(r#"[{"name": "x", "dist": {"uniform": 2}, "rules": ["top-p:2"]}]"#).is_err());
        assert!(parse_cases(
            r#"[{"name": "x", "dist": {"uniform": 2}, "rules": ["top-k:1"], "expect": [{"rule": "top-k:2", "size_eq": 1}]}]"#
        )
        .is_err());
        assert!(parse_cases(
            r#"[{"name": "x", "dist": {"probs": [0.5, 0.5]}, "tokens": ["a"], "rules": ["top-k:1"]}]"#
        )
        .is_err());
        assert!(parse_cases("not json").is_err());
    }
}
