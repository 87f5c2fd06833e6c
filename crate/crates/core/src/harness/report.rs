//! Deterministic report export: one JSON summary plus CSVs for the
//! accuracy table, distance histograms, and attack curves. Re-exporting
//! the same inputs produces byte-identical files (stable ordering, no
//! timestamps, no wall-clock latencies).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AsrCurve;
use crate::decision::Verdict;
use crate::error::{Result, SvipError};
use crate::verify::EvalReport;

use super::attack_eval::{AdapterSweep, DirectAttackSummary};
use super::pipeline::AccuracySummary;
use super::session::SessionTranscript;

/// Verdict tallies over a batch of sessions with one strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub spec_model: String,
    pub strategy: String,
    pub sessions: usize,
    pub queries_per_session: usize,
    pub honest_verdicts: usize,
    pub dishonest_verdicts: usize,
    pub rotations: u64,
    pub retrain_flags: usize,
    pub mean_accept_rate: f64,
}

pub fn summarize_sessions(transcripts: &[SessionTranscript]) -> Option<SessionSummary> {
    let first = transcripts.first()?;
    let honest = transcripts
        .iter()
        .filter(|t| t.verdict.decision == Verdict::Honest)
        .count();
    let accept_mean = transcripts
        .iter()
        .map(|t| t.verdict.mean_outcome)
        .sum::<f64>()
        / transcripts.len() as f64;
    Some(SessionSummary {
        spec_model: first.spec_model.clone(),
        strategy: first.strategy.clone(),
        sessions: transcripts.len(),
        queries_per_session: first.records.len(),
        honest_verdicts: honest,
        dishonest_verdicts: transcripts.len() - honest,
        rotations: transcripts.iter().map(|t| t.rotations.len() as u64).sum(),
        retrain_flags: transcripts.iter().filter(|t| t.retrain_flagged).count(),
        mean_accept_rate: accept_mean,
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportInputs {
    pub accuracy: Vec<AccuracySummary>,
    pub eval_reports: Vec<EvalReport>,
    pub adapter_sweeps: Vec<AdapterSweep>,
    pub recovery_curves: Vec<AsrCurve>,
    pub direct_attacks: Vec<DirectAttackSummary>,
    pub sessions: Vec<SessionSummary>,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn fmt_float(v: f64) -> String {
    // shortest round-trip representation; stable for identical inputs
    format!("{v}")
}

/// Writes the summary JSON and per-artifact CSVs into `out_dir`; returns
/// the paths written, in a fixed order.
pub fn export_report(inputs: &ReportInputs, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out)
        .map_err(|e| SvipError::Io(e))
        .map_err(|e| match e {
            SvipError::Io(io) => SvipError::InvalidArgument(format!(
                "cannot create report directory {}: {io}",
                out.display()
            )),
            other => other,
        })?;
    let mut written = Vec::new();

    let summary = serde_json::to_string_pretty(inputs)
        .map_err(|e| SvipError::Format(e.to_string()))?;
    let summary_path = out.join("summary.json");
    write_atomic(&summary_path, &summary)?;
    written.push(summary_path);

    // accuracy table (FNR / FPR per scenario)
    if !inputs.accuracy.is_empty() {
        let mut csv = String::from("spec_model,metric,scenario,value\n");
        for row in &inputs.accuracy {
            csv.push_str(&format!(
                "{},fnr,honest,{}\n",
                row.spec_model,
                fmt_float(row.fnr)
            ));
            for (scenario, fpr) in &row.fpr_per_scenario {
                csv.push_str(&format!(
                    "{},fpr,{},{}\n",
                    row.spec_model,
                    scenario,
                    fmt_float(*fpr)
                ));
            }
            for (scenario, auc) in &row.auc_per_scenario {
                csv.push_str(&format!(
                    "{},auc,{},{}\n",
                    row.spec_model,
                    scenario,
                    fmt_float(*auc)
                ));
            }
        }
        let p = out.join("accuracy.csv");
        write_atomic(&p, &csv)?;
        written.push(p);
    }

    // distance histograms per (spec model, scenario)
    for report in &inputs.eval_reports {
        for scen in &report.scenarios {
            let mut csv = String::from("bin_left,bin_right,count\n");
            for (i, count) in scen.histogram.counts.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    fmt_float(scen.histogram.bin_edges[i]),
                    fmt_float(scen.histogram.bin_edges[i + 1]),
                    count
                ));
            }
            let name = format!(
                "distances_{}_{}.csv",
                sanitize(&report.spec_model),
                sanitize(&scen.scenario)
            );
            let p = out.join(name);
            write_atomic(&p, &csv)?;
            written.push(p);
        }
    }

    // adapter ASR curves
    for sweep in &inputs.adapter_sweeps {
        let curve = sweep.to_curve();
        let p = out.join(format!("adapter_asr_{}.csv", sanitize(&sweep.scenario)));
        write_atomic(&p, &curve_csv(&curve))?;
        written.push(p);
    }

    // secret-recovery curves
    for curve in &inputs.recovery_curves {
        let p = out.join(format!("recovery_asr_{}.csv", sanitize(&curve.scenario)));
        write_atomic(&p, &curve_csv(curve))?;
        written.push(p);
    }

    if !inputs.sessions.is_empty() {
        let mut csv =
            String::from("spec_model,strategy,sessions,queries,honest_verdicts,dishonest_verdicts,mean_accept_rate\n");
        for s in &inputs.sessions {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.spec_model,
                s.strategy,
                s.sessions,
                s.queries_per_session,
                s.honest_verdicts,
                s.dishonest_verdicts,
                fmt_float(s.mean_accept_rate)
            ));
        }
        let p = out.join("sessions.csv");
        write_atomic(&p, &csv)?;
        written.push(p);
    }

    Ok(written)
}

fn curve_csv(curve: &AsrCurve) -> String {
    let mut csv = String::from("budget,asr,stderr\n");
    for ((b, a), se) in curve.budgets.iter().zip(&curve.asr).zip(&curve.stderr) {
        csv.push_str(&format!("{},{},{}\n", b, fmt_float(*a), fmt_float(*se)));
    }
    csv
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_inputs_produce_valid_summary() {
        let dir = tempfile::tempdir().unwrap();
        let written = export_report(&ReportInputs::default(), dir.path()).unwrap();
        assert_eq!(written.len(), 1);
        let text = std::fs::read_to_string(&written[0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["accuracy"].as_array().unwrap().is_empty());
    }

    #[test]
    fn re_export_is_byte_identical() {
        let inputs = ReportInputs {
            recovery_curves: vec![AsrCurve {
                scenario: "secret-recovery:spec-a".into(),
                budgets: vec![100, 500],
                asr: vec![0.0, 0.125],
                stderr: vec![0.0, 0.01],
            }],
            ..Default::default()
        };
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let w1 = export_report(&inputs, dir1.path()).unwrap();
        let w2 = export_report(&inputs, dir2.path()).unwrap();
        for (a, b) in w1.iter().zip(&w2) {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{a:?} vs {b:?}"
            );
        }
    }

    #[test]
    fn unwritable_directory_rejected() {
        let res = export_report(&ReportInputs::default(), "/proc/definitely/not/writable");
        assert!(res.is_err());
    }
}
