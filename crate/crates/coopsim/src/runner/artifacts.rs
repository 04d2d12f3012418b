//! Run artifact writers: `log.jsonl`, `report.csv`, `timings.csv`.
//!
//! `log.jsonl` and `report.csv` are deterministic functions of the run
//! (identical bytes for identical `(scenario, mode, seed, alpha)`);
//! `timings.csv` carries the wall-clock stage breakdown and is the one file
//! expected to differ between repeats.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{RunError, RunLog};

/// Format a metric value for CSV: fixed three decimals, `inf` for the
/// no-conflict sentinel.
pub(crate) fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.3}")
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write the newline-delimited JSON log: one header record, then one record
/// per tick, then one summary record.
///
/// Field names are the serialized forms of [`super::RunHeader`],
/// [`super::TickRecord`], and the summary wrapper written here; infinite
/// metric values serialize as JSON `null` (the CSV report keeps them as
/// `inf`).
pub fn write_log_jsonl(log: &RunLog, path: &Path) -> Result<(), RunError> {
    #[derive(Serialize)]
    struct HeaderLine<'a> {
        header: &'a super::RunHeader,
    }
    #[derive(Serialize)]
    struct SummaryLine<'a> {
        summary: Summary<'a>,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        ttc_min_s: f64,
        drac_mps2: f64,
        dcz_m: f64,
        vr_pct: f64,
        events: &'a [crate::metrics::SafetyEvent],
        comms: &'a super::CommsTotals,
    }

    let mut out = Vec::new();
    out.extend_from_slice(
        serde_json::to_string(&HeaderLine {
            header: &log.header,
        })
        .expect("header serializes")
        .as_bytes(),
    );
    out.push(b'\n');
    for tick in &log.ticks {
        out.extend_from_slice(serde_json::to_string(tick).expect("tick serializes").as_bytes());
        out.push(b'\n');
    }
    out.extend_from_slice(
        serde_json::to_string(&SummaryLine {
            summary: Summary {
                ttc_min_s: log.safety.ttc_min_s,
                drac_mps2: log.safety.drac_mps2,
                dcz_m: log.safety.dcz_m,
                vr_pct: log.safety.vr_pct,
                events: &log.safety.events,
                comms: &log.comms_totals,
            },
        })
        .expect("summary serializes")
        .as_bytes(),
    );
    out.push(b'\n');
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Write the single-run `report.csv`: an identity comment, the column
/// header, and one metrics row. `reaction_lead_s` stays empty — it is a
/// paired-run quantity filled by the suite.
pub fn write_report_csv(log: &RunLog, path: &Path) -> Result<(), RunError> {
    let mut s = String::new();
    s.push_str(&format!(
        "# scenario={} mode={} seed={} alpha={}\n",
        log.header.scenario, log.header.mode, log.header.seed, log.header.alpha
    ));
    s.push_str("scenario,mode,ttc_min_s,drac_mps2,dcz_m,vr_pct,reaction_lead_s\n");
    s.push_str(&format!(
        "{},{},{},{},{},{},\n",
        log.header.scenario,
        log.header.mode,
        fmt_metric(log.safety.ttc_min_s),
        fmt_metric(log.safety.drac_mps2),
        fmt_metric(log.safety.dcz_m),
        fmt_metric(log.safety.vr_pct),
    ));
    fs::write(path, s).map_err(|e| io_err(path, e))
}

/// Write the wall-clock stage breakdown.
pub fn write_timings_csv(log: &RunLog, path: &Path) -> Result<(), RunError> {
    let mut s = String::from("tick,perception_ms,localization_ms,comms_ms,planning_ms,total_ms\n");
    for t in &log.timings {
        s.push_str(&format!(
            "{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            t.tick, t.perception_ms, t.localization_ms, t.comms_ms, t.planning_ms, t.total_ms
        ));
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}

/// Write the full artifact set for one run into `dir`:
/// `log.jsonl`, `report.csv`, `timings.csv`, and `plots/*.svg`.
pub fn write_run_artifacts(log: &RunLog, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_log_jsonl(log, &dir.join("log.jsonl"))?;
    write_report_csv(log, &dir.join("report.csv"))?;
    write_timings_csv(log, &dir.join("timings.csv"))?;
    super::write_plots(log, &dir.join("plots"))?;
    Ok(())
}
