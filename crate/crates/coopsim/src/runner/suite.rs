//! Paired-mode evaluation across a scenario set.
//!
//! For every `(scenario, seed)` the suite runs the ego-only and cooperative
//! pipelines on identical ground truth and seeds, aggregates the safety
//! metrics over seeds, and reports the per-metric improvement of cooperation
//! averaged over scenarios. A failed run is recorded and skipped rather than
//! aborting the whole suite.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use thiserror::Error;

use crate::metrics;
use crate::scenario::Scenario;

use super::artifacts::fmt_metric;
use super::{run_scenario, Mode, RunLog, DECEL_THRESHOLD_MPS2};

/// What to run: scenario files, seeds per scenario, the shared GNSS
/// degradation level, and an optional output directory for `suite.csv`.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub scenario_paths: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub alpha: u8,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("suite has no scenario files")]
    NoScenarios,
    #[error("suite has no seeds")]
    NoSeeds,
    #[error("every suite run failed; first error: {0}")]
    AllRunsFailed(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One aggregated table row: a scenario/mode pair averaged over seeds, or the
/// final improvement row (`scenario = "improvement"`, `mode = "coop-ego"`).
#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub scenario: String,
    pub mode: String,
    pub ttc_min_s: f64,
    pub drac_mps2: f64,
    pub dcz_m: f64,
    pub vr_pct: f64,
    /// Paired metric; populated on coop and improvement rows only.
    pub reaction_lead_s: Option<f64>,
}

/// A run that errored out; the rest of the suite continues without it.
#[derive(Debug, Clone)]
pub struct SuiteFailure {
    pub scenario: String,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub error: String,
}

/// Aggregated suite result plus the rendered CSV.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub rows: Vec<SuiteRow>,
    /// Mean over scenarios of (coop − ego) per metric; `None` if no scenario
    /// completed in both modes.
    pub improvement: Option<SuiteRow>,
    pub failures: Vec<SuiteFailure>,
    pub csv: String,
}

/// Per-seed scalars extracted from one run.
#[derive(Debug, Clone, Copy)]
struct SeedMetrics {
    ttc_min_s: f64,
    drac_mps2: f64,
    dcz_m: f64,
    vr_pct: f64,
}

impl SeedMetrics {
    fn from_log(log: &RunLog) -> Self {
        SeedMetrics {
            ttc_min_s: log.safety.ttc_min_s,
            drac_mps2: log.safety.drac_mps2,
            dcz_m: log.safety.dcz_m,
            vr_pct: log.safety.vr_pct,
        }
    }
}

/// Mean that lets infinities propagate (an unbounded TTC stays unbounded).
fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn mean_opt(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| mean(values))
}

/// Difference `a - b` with matching infinities treated as "no change": the
/// improvement of an already-unbounded TTC is zero, not NaN.
fn delta(a: f64, b: f64) -> f64 {
    if a.is_infinite() && b.is_infinite() && a.signum() == b.signum() {
        0.0
    } else {
        a - b
    }
}

fn csv_row(out: &mut String, row: &SuiteRow) {
    out.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        row.scenario,
        row.mode,
        fmt_metric(row.ttc_min_s),
        fmt_metric(row.drac_mps2),
        fmt_metric(row.dcz_m),
        fmt_metric(row.vr_pct),
        row.reaction_lead_s.map_or(String::new(), fmt_metric),
    ));
}

/// Run the whole suite. Every `(scenario, seed)` pair runs both modes on the
/// same seed so the comparison isolates cooperation.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteOutcome, SuiteError> {
    if cfg.scenario_paths.is_empty() {
        return Err(SuiteError::NoScenarios);
    }
    if cfg.seeds.is_empty() {
        return Err(SuiteError::NoSeeds);
    }

    let mut rows: Vec<SuiteRow> = Vec::new();
    let mut failures: Vec<SuiteFailure> = Vec::new();
    // Per-scenario (ego aggregate, coop aggregate, reaction lead) for the
    // improvement row.
    let mut paired: Vec<(SeedMetrics, SeedMetrics, Option<f64>)> = Vec::new();

    for path in &cfg.scenario_paths {
        let name = path
            .file_stem()
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let scenario = match Scenario::load(path) {
            Ok(s) => s,
            Err(e) => {
                failures.push(SuiteFailure {
                    scenario: name,
                    mode: None,
                    seed: None,
                    error: e.to_string(),
                });
                continue;
            }
        };

        let mut per_mode: BTreeMap<&str, Vec<SeedMetrics>> = BTreeMap::new();
        let mut leads: Vec<f64> = Vec::new();
        for &seed in &cfg.seeds {
            let mut run = |mode: Mode| -> Option<RunLog> {
                match run_scenario(&scenario, &name, mode, seed, cfg.alpha) {
                    Ok(log) => Some(log),
                    Err(e) => {
                        failures.push(SuiteFailure {
                            scenario: name.clone(),
                            mode: Some(mode),
                            seed: Some(seed),
                            error: e.to_string(),
                        });
                        None
                    }
                }
            };
            let ego = run(Mode::EgoOnly);
            let coop = run(Mode::Coop);
            if let Some(log) = &ego {
                per_mode.entry(Mode::EgoOnly.as_str()).or_default().push(SeedMetrics::from_log(log));
            }
            if let Some(log) = &coop {
                per_mode.entry(Mode::Coop.as_str()).or_default().push(SeedMetrics::from_log(log));
            }
            if let (Some(ego), Some(coop)) = (&ego, &coop) {
                if let Some(lead) = metrics::reaction_lead_s(
                    &coop.speed_series,
                    &ego.speed_series,
                    DECEL_THRESHOLD_MPS2,
                ) {
                    leads.push(lead);
                }
            }
        }

        let aggregate = |seeds: &[SeedMetrics], mode: &str, lead: Option<f64>| SuiteRow {
            scenario: name.clone(),
            mode: mode.to_string(),
            ttc_min_s: mean(&seeds.iter().map(|m| m.ttc_min_s).collect::<Vec<_>>()),
            drac_mps2: mean(&seeds.iter().map(|m| m.drac_mps2).collect::<Vec<_>>()),
            dcz_m: mean(&seeds.iter().map(|m| m.dcz_m).collect::<Vec<_>>()),
            vr_pct: mean(&seeds.iter().map(|m| m.vr_pct).collect::<Vec<_>>()),
            reaction_lead_s: lead,
        };
        let lead = mean_opt(&leads);
        let ego_rows = per_mode.get(Mode::EgoOnly.as_str());
        let coop_rows = per_mode.get(Mode::Coop.as_str());
        if let Some(seeds) = ego_rows {
            rows.push(aggregate(seeds, Mode::EgoOnly.as_str(), None));
        }
        if let Some(seeds) = coop_rows {
            rows.push(aggregate(seeds, Mode::Coop.as_str(), lead));
        }
        if let (Some(ego), Some(coop)) = (ego_rows, coop_rows) {
            let scalar = |rows: &[SeedMetrics]| SeedMetrics {
                ttc_min_s: mean(&rows.iter().map(|m| m.ttc_min_s).collect::<Vec<_>>()),
                drac_mps2: mean(&rows.iter().map(|m| m.drac_mps2).collect::<Vec<_>>()),
                dcz_m: mean(&rows.iter().map(|m| m.dcz_m).collect::<Vec<_>>()),
                vr_pct: mean(&rows.iter().map(|m| m.vr_pct).collect::<Vec<_>>()),
            };
            paired.push((scalar(ego), scalar(coop), lead));
        }
    }

    if rows.is_empty() {
        let first = failures
            .first()
            .map_or_else(|| "no runs executed".to_string(), |f| f.error.clone());
        return Err(SuiteError::AllRunsFailed(first));
    }

    let improvement = (!paired.is_empty()).then(|| {
        let col = |f: fn(&SeedMetrics) -> f64| {
            mean(&paired.iter().map(|(e, c, _)| delta(f(c), f(e))).collect::<Vec<_>>())
        };
        let leads: Vec<f64> = paired.iter().filter_map(|(_, _, l)| *l).collect();
        SuiteRow {
            scenario: "improvement".to_string(),
            mode: "coop-ego".to_string(),
            ttc_min_s: col(|m| m.ttc_min_s),
            drac_mps2: col(|m| m.drac_mps2),
            dcz_m: col(|m| m.dcz_m),
            vr_pct: col(|m| m.vr_pct),
            reaction_lead_s: mean_opt(&leads),
        }
    });

    let mut csv = format!(
        "# seeds={} alpha={}\n",
        cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join("|"),
        cfg.alpha
    );
    csv.push_str("scenario,mode,ttc_min_s,drac_mps2,dcz_m,vr_pct,reaction_lead_s\n");
    for row in &rows {
        csv_row(&mut csv, row);
    }
    if let Some(row) = &improvement {
        csv_row(&mut csv, row);
    }

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(|e| SuiteError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let path = dir.join("suite.csv");
        fs::write(&path, &csv).map_err(|e| SuiteError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }

    Ok(SuiteOutcome {
        rows,
        improvement,
        failures,
        csv,
    })
}
