//! Output files: JSON summaries and CSV exports.

use std::path::{Path, PathBuf};

use nodecorr::correction::{CorrectionRecord, Diagnostics};
use nodecorr::pipeline::{EnsembleStats, LandingPoint, MemberOutcome, Method, Metrics, RunOutput};
use serde::Serialize;

use crate::Failure;

pub const SUMMARY_VERSION: u32 = 1;

pub fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Numerical(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

#[derive(Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landing: Option<LandingPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
pub struct SeedRuns {
    pub seed: u64,
    pub runs: Vec<RunSummary>,
}

#[derive(Serialize)]
pub struct CorrectSummary {
    pub format: &'static str,
    pub version: u32,
    pub mode: &'static str,
    pub tf: f64,
    pub pinv_rtol: f64,
    pub seeds: Vec<SeedRuns>,
}

#[derive(Serialize)]
pub struct SeedEnsemble {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stats: Vec<EnsembleStats>,
    pub members: Vec<MemberOutcome>,
}

#[derive(Serialize)]
pub struct EnsembleSummary {
    pub format: &'static str,
    pub version: u32,
    pub mode: &'static str,
    pub tf: f64,
    pub pinv_rtol: f64,
    pub radius: f64,
    pub seeds: Vec<SeedEnsemble>,
}

#[derive(Serialize)]
pub struct CorrectionFile<'a> {
    pub computed_at: f64,
    pub correction: &'a CorrectionRecord,
}

pub fn correction_records(run: &RunOutput) -> Vec<(f64, CorrectionRecord)> {
    run.corrections.iter().map(|(t, c)| (*t, c.record())).collect()
}

/// Landing-frame position and velocity error, one row per member.
pub fn landing_csv(members: &[MemberOutcome]) -> String {
    let mut out = String::from(
        "# nodecorr-landing v1\nmethod,index,alpha,downrange,crossrange,dv_up,dv_downrange,dv_crossrange\n",
    );
    for m in members {
        if let Some(p) = &m.landing {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                m.method,
                m.index,
                m.alpha,
                p.horizontal[0],
                p.horizontal[1],
                p.velocity_error[0],
                p.velocity_error[1],
                p.velocity_error[2]
            ));
        }
    }
    out
}
