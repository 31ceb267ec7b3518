//! Summary, assertion checks and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Assertion, ExperimentKind};
use super::experiments::Outcome;
use super::LabError;

pub const SUMMARY_FILE: &str = "summary.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub metric: String,
    pub value: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub passed: bool,
}

impl AssertionResult {
    /// One line naming the metric, its value and the violated bound.
    pub fn diff(&self) -> String {
        let range = format!(
            "[{}, {}]",
            self.min.map(|v| v.to_string()).unwrap_or_else(|| "-inf".into()),
            self.max.map(|v| v.to_string()).unwrap_or_else(|| "inf".into())
        );
        match self.value {
            None => format!("FAIL {}: metric not produced (expected {range})", self.metric),
            Some(v) => {
                let side = match (self.min, self.max) {
                    (Some(lo), _) if !(v >= lo) => format!("below min by {}", lo - v),
                    (_, Some(hi)) if !(v <= hi) => format!("above max by {}", v - hi),
                    _ => "within range".into(),
                };
                let verdict = if self.passed { "ok  " } else { "FAIL" };
                format!("{verdict} {}: {v} vs {range} ({side})", self.metric)
            }
        }
    }
}

pub fn check_assertions(assertions: &[Assertion], metrics: &BTreeMap<String, f64>) -> Vec<AssertionResult> {
    assertions
        .iter()
        .map(|a| {
            let value = metrics.get(&a.metric).copied();
            let passed = value
                .map(|v| a.min.map(|lo| v >= lo).unwrap_or(true) && a.max.map(|hi| v <= hi).unwrap_or(true))
                .unwrap_or(false);
            AssertionResult {
                metric: a.metric.clone(),
                value,
                min: a.min,
                max: a.max,
                passed,
            }
        })
        .collect()
}

/// Deterministic record of a run: no timings, sorted keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_hash: String,
    pub passed: bool,
    pub tables: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: BTreeMap<String, String>,
    #[serde(default, rename = "assertion")]
    pub assertions: Vec<AssertionResult>,
}

impl Summary {
    pub fn new(
        kind: ExperimentKind,
        seed: u64,
        config_hash: &str,
        outcome: &Outcome,
        assertions: Vec<AssertionResult>,
    ) -> Self {
        Self {
            kind,
            seed,
            config_hash: config_hash.to_string(),
            passed: assertions.iter().all(|a| a.passed),
            tables: outcome.tables.iter().map(|(n, _)| format!("{n}.csv")).collect(),
            metrics: outcome.metrics.clone(),
            notes: outcome.notes.clone(),
            assertions,
        }
    }

    pub fn render(&self) -> Result<String, LabError> {
        toml::to_string(self).map_err(|e| LabError::Runtime(format!("summary: {e}")))
    }

    pub fn headline(&self, out: &Path) -> String {
        let failed = self.assertions.iter().filter(|a| !a.passed).count();
        format!(
            "{}: {} metrics, {} tables, {}/{} assertions passed -> {}",
            self.kind.name(),
            self.metrics.len(),
            self.tables.len(),
            self.assertions.len() - failed,
            self.assertions.len(),
            out.display()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub wall_time_s: f64,
    pub mode: String,
    /// SHA-256 of every emitted file except the manifest itself.
    pub digests: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write(dir: &Path, name: &str, text: &str, digests: &mut BTreeMap<String, String>) -> Result<(), LabError> {
    let path = dir.join(name);
    fs::write(&path, text.as_bytes()).map_err(|e| LabError::io(&path, e))?;
    digests.insert(name.to_string(), sha256_hex(text.as_bytes()));
    Ok(())
}

pub fn write_outputs(
    dir: &Path,
    kind: ExperimentKind,
    seed: u64,
    config_hash: &str,
    wall_time_s: f64,
    outcome: &Outcome,
    summary: &Summary,
) -> Result<RunManifest, LabError> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut digests = BTreeMap::new();
    for (name, table) in &outcome.tables {
        write(dir, &format!("{name}.csv"), &table.render(), &mut digests)?;
    }
    write(dir, SUMMARY_FILE, &summary.render()?, &mut digests)?;
    let manifest = RunManifest {
        config_hash: config_hash.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind,
        seed,
        wall_time_s,
        mode: crate::par::MODE.to_string(),
        digests,
    };
    let text = toml::to_string(&manifest).map_err(|e| LabError::Runtime(format!("manifest: {e}")))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> BTreeMap<String, f64> {
        BTreeMap::from([("a".to_string(), 1.5), ("b".to_string(), -2.0)])
    }

    #[test]
    fn assertions_report_each_violation() {
        let asserts = vec![
            Assertion {
                metric: "a".into(),
                min: Some(1.0),
                max: Some(2.0),
            },
            Assertion {
                metric: "b".into(),
                min: Some(0.0),
                max: None,
            },
            Assertion {
                metric: "c".into(),
                min: None,
                max: Some(1.0),
            },
        ];
        let r = check_assertions(&asserts, &metrics());
        assert_eq!(r.iter().map(|a| a.passed).collect::<Vec<_>>(), [true, false, false]);
        assert!(r[1].diff().contains("below min by 2"), "{}", r[1].diff());
        assert!(r[2].diff().contains("not produced"));
    }

    #[test]
    fn summary_is_valid_toml_and_sorted() {
        let outcome = Outcome {
            metrics: metrics(),
            ..Outcome::default()
        };
        let s = Summary::new(ExperimentKind::Selftest, 3, "abc", &outcome, vec![]);
        let text = s.render().unwrap();
        let back: Summary = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(text.find("a = 1.5").unwrap() < text.find("b = -2").unwrap());
    }
}
