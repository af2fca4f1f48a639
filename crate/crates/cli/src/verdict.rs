//! PASS/FAIL records per acceptance criterion, written as verdict.json.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub measured: f64,
    /// measured ≥ lower
    pub lower: Option<f64>,
    /// measured ≤ upper, or measured < upper when `strict`
    pub upper: Option<f64>,
    pub strict: bool,
    pub pass: bool,
}

impl Check {
    fn new(criterion: u32, name: &str, measured: f64, lower: Option<f64>, upper: Option<f64>, strict: bool) -> Self {
        let above = lower.is_none_or(|l| measured >= l);
        let below = upper.is_none_or(|u| if strict { measured < u } else { measured <= u });
        Check {
            criterion,
            name: name.into(),
            measured,
            lower,
            upper,
            strict,
            pass: measured.is_finite() && above && below,
        }
    }

    pub fn at_most(criterion: u32, name: &str, measured: f64, upper: f64) -> Self {
        Check::new(criterion, name, measured, None, Some(upper), false)
    }

    pub fn below(criterion: u32, name: &str, measured: f64, upper: f64) -> Self {
        Check::new(criterion, name, measured, None, Some(upper), true)
    }

    pub fn within(criterion: u32, name: &str, measured: f64, lower: f64, upper: f64) -> Self {
        Check::new(criterion, name, measured, Some(lower), Some(upper), false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: String,
    pub master_seed: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl Verdict {
    pub fn new(kind: &str, master_seed: u64, checks: Vec<Check>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Verdict {
            kind: kind.into(),
            master_seed,
            checks,
            pass,
        }
    }

    pub fn criteria(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.checks.iter().map(|c| c.criterion).collect();
        c.dedup();
        c
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("verdict.json"), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(dir.join("verdict.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_and_non_finite_values() {
        assert!(Check::at_most(1, "a", 1.0, 1.0).pass);
        assert!(!Check::below(1, "a", 1.0, 1.0).pass);
        assert!(Check::within(5, "s", 0.5, 0.3, 0.7).pass);
        assert!(!Check::within(5, "s", 0.8, 0.3, 0.7).pass);
        assert!(!Check::at_most(1, "a", f64::NAN, 1.0).pass);
    }

    #[test]
    fn verdict_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let v = Verdict::new("x", 4, vec![Check::at_most(2, "a", 0.0, 1e-12), Check::at_most(3, "b", 2.0, 1.0)]);
        assert!(!v.pass);
        assert_eq!(v.criteria(), vec![2, 3]);
        v.write(dir.path()).unwrap();
        assert_eq!(Verdict::read(dir.path()).unwrap(), v);
    }
}
