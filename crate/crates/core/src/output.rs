//! Result files: trajectory CSV, JSON summaries, sweep and comparison tables.
//! Every number is written with 9 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scenario::{improvement, NoiseRow, RunResult, SweepRow};

/// `x` rounded to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.8e}").parse().unwrap_or(x)
    } else {
        x
    }
}

/// Shortest text that parses back to `round9(x)`.
pub fn fmt9(x: f64) -> String {
    format!("{}", round9(x))
}

fn opt9(x: Option<f64>) -> String {
    x.map(fmt9).unwrap_or_default()
}

pub fn trajectory_header(cells: usize) -> String {
    let mut cols = vec!["k".to_string(), "t_min".to_string()];
    for name in ["rho", "v", "q"] {
        cols.extend((1..=cells).map(|i| format!("{name}_{i}")));
    }
    cols.extend(
        [
            "w_ramp",
            "w_main",
            "u_cmd",
            "r_applied",
            "rho_star_hat",
            "q_star_hat",
            "e1",
            "e2",
            "trace_gamma",
        ]
        .map(String::from),
    );
    cols.join(",")
}

/// Trajectory as CSV text. Quantities that do not apply are left empty.
pub fn trajectory_csv(run: &RunResult) -> String {
    let cells = run.trajectory.first().map_or(0, |r| r.rho.len());
    let mut out = trajectory_header(cells);
    out.push('\n');
    for r in &run.trajectory {
        let mut fields = vec![r.k.to_string(), fmt9(r.t_min)];
        fields.extend(r.rho.iter().chain(&r.v).chain(&r.q).map(|x| fmt9(*x)));
        fields.extend([
            fmt9(r.w_ramp),
            fmt9(r.w_main),
            opt9(r.u_cmd),
            fmt9(r.r_applied),
            opt9(r.rho_star_hat),
            opt9(r.q_star_hat),
            opt9(r.e.map(|e| e[0])),
            opt9(r.e.map(|e| e[1])),
            opt9(r.trace_gamma),
        ]);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Header names and rows of optional numbers.
pub type CsvTable = (Vec<String>, Vec<Vec<Option<f64>>>);

/// Parses a trajectory CSV back into rows of optional numbers.
pub fn read_csv_rows(text: &str) -> Result<CsvTable> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Io("empty csv".into()))?
        .split(',')
        .map(String::from)
        .collect();
    let rows = lines
        .map(|line| {
            line.split(',')
                .map(|f| {
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>()
                            .map(Some)
                            .map_err(|e| Error::Io(format!("bad number `{f}`: {e}")))
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub horizon_steps: usize,
    pub step_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tts_veh_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improvement_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_ramp_queue_veh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_main_queue_veh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_phase1_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_phase2_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_rho_star_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_q_star_hat: Option<f64>,
    #[serde(default)]
    pub overrides: Value,
}

impl Summary {
    pub fn from_run(run: &RunResult, baseline_tts: Option<f64>, step_s: f64, overrides: Value) -> Self {
        let last = run.trajectory.last();
        let conv = run.convergence_min.unwrap_or([None, None]);
        Self {
            scenario: run.id.to_string(),
            status: "ok".into(),
            error: None,
            horizon_steps: run.trajectory.len().saturating_sub(1),
            step_s: round9(step_s),
            tts_veh_h: Some(round9(run.tts)),
            improvement_pct: baseline_tts.map(|b| round9(improvement(b, run.tts))),
            peak_ramp_queue_veh: Some(round9(run.peak_ramp_queue)),
            peak_main_queue_veh: Some(round9(run.peak_main_queue)),
            convergence_phase1_min: conv[0].map(round9),
            convergence_phase2_min: conv[1].map(round9),
            final_rho_star_hat: last.and_then(|r| r.rho_star_hat).map(round9),
            final_q_star_hat: last.and_then(|r| r.q_star_hat).map(round9),
            overrides,
        }
    }

    pub fn failed(scenario: &str, horizon_steps: usize, step_s: f64, error: &Error, overrides: Value) -> Self {
        Self {
            scenario: scenario.into(),
            status: "failed".into(),
            error: Some(error.to_string()),
            horizon_steps,
            step_s: round9(step_s),
            tts_veh_h: None,
            improvement_pct: None,
            peak_ramp_queue_veh: None,
            peak_main_queue_veh: None,
            convergence_phase1_min: None,
            convergence_phase2_min: None,
            final_rho_star_hat: None,
            final_q_star_hat: None,
            overrides,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("K_r,C_r,tts_veh_h,improvement_pct,status\n");
    for r in rows {
        let status = if r.tts.is_some() { "ok" } else { "missing" };
        let _ = writeln!(
            out,
            "{},{},{},{},{status}",
            fmt9(r.k_r),
            fmt9(r.c_r),
            opt9(r.tts),
            opt9(r.improvement_pct)
        );
    }
    out
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut out = String::from("noise_std,seeds,mean_final_rho_star_hat,std_final_rho_star_hat,bias_pct,mean_tts_veh_h\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt9(r.noise_std),
            r.seeds,
            fmt9(r.mean_final),
            fmt9(r.std_final),
            fmt9(r.bias_pct),
            fmt9(r.mean_tts)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub scenario: String,
    pub tts: f64,
    pub improvement_pct: f64,
}

/// Improvement of each summary over `baseline`. Summaries must share a horizon.
pub fn compare(baseline: &Summary, others: &[Summary]) -> Result<Vec<CompareRow>> {
    let base_tts = baseline
        .tts_veh_h
        .ok_or_else(|| Error::Comparison(format!("baseline {} has no TTS", baseline.scenario)))?;
    others
        .iter()
        .map(|s| {
            if s.horizon_steps != baseline.horizon_steps || s.step_s != baseline.step_s {
                return Err(Error::Comparison(format!(
                    "{} covers {} steps of {} s, baseline {} steps of {} s",
                    s.scenario, s.horizon_steps, s.step_s, baseline.horizon_steps, baseline.step_s
                )));
            }
            let tts = s
                .tts_veh_h
                .ok_or_else(|| Error::Comparison(format!("{} has no TTS", s.scenario)))?;
            Ok(CompareRow {
                scenario: s.scenario.clone(),
                tts,
                improvement_pct: improvement(base_tts, tts),
            })
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("scenario,tts_veh_h,improvement_pct\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.scenario, fmt9(r.tts), fmt9(r.improvement_pct));
    }
    out
}

pub fn compare_table(baseline: &Summary, rows: &[CompareRow]) -> String {
    let mut out = format!("{:<10} {:>12} {:>14}\n", "scenario", "TTS [veh h]", "improvement %");
    let _ = writeln!(out, "{:<10} {:>12.1} {:>14}", baseline.scenario, baseline.tts_veh_h.unwrap_or(f64::NAN), "-");
    for r in rows {
        let _ = writeln!(out, "{:<10} {:>12.1} {:>14.1}", r.scenario, r.tts, r.improvement_pct);
    }
    out
}
