//! N sweeps: optimization, baselines, verification and result files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use seqmetro_core::channels::ParamChannel;
use seqmetro_core::optimize::{run, warm_start_extend, ControlMode, OptimizationReport, RunSettings, Strategy};

use crate::baselines;
use crate::config::{Baseline, RunConfig};
use crate::verify::{verify_strategy, Verification, VERIFY_MAX_N};
use crate::CliError;

pub const CSV_FILE: &str = "results.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Distinct seed for the `start`-th start of a point.
fn seed_for_start(base: u64, start: usize) -> u64 {
    base.wrapping_add(start as u64)
}

/// One line of the plot-ready table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub mode: ControlMode,
    pub ancilla_dim: usize,
    pub qfi: f64,
    #[serde(rename = "qfi_per_N")]
    pub qfi_per_n: f64,
    #[serde(rename = "qfi_per_N2")]
    pub qfi_per_n2: f64,
    pub control_free_plus: Option<f64>,
    #[serde(rename = "classical_nF1")]
    pub classical_nf1: Option<f64>,
    pub near_inverse_control: Option<f64>,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointResult {
    pub row: CsvRow,
    pub near_inverse_discontinuous: Option<bool>,
    pub verification: Option<Verification>,
    /// Final QFI of every start; the report belongs to the best one.
    pub start_qfis: Vec<f64>,
    pub report: OptimizationReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Sufficient to rerun the sweep.
    pub config: RunConfig,
    pub points: Vec<PointResult>,
}

/// Command-line additions to a config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Starting strategy for the point whose N matches it.
    pub resume: Option<Strategy>,
    /// QFI trace already recorded before `resume`; prepended to that point.
    pub resume_trace: Vec<f64>,
    /// Write results into this directory instead of `config.out`.
    pub out_override: Option<PathBuf>,
}

impl RunOptions {
    fn continue_trace(&self, point: &mut PointResult) {
        if self.resume.as_ref().is_some_and(|r| r.n == point.row.n) && !self.resume_trace.is_empty() {
            let trace = &mut point.report.qfi_trace;
            let mut full = self.resume_trace.clone();
            full.append(trace);
            *trace = full;
        }
    }
}

pub fn emit_csv(rows: &[CsvRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, CliError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Io(e.to_string()))
}

/// Everything needed to evaluate one N.
struct Sweep<'a> {
    config: &'a RunConfig,
    channel: ParamChannel,
    settings: RunSettings,
    out: PathBuf,
}

impl Sweep<'_> {
    fn point(&self, n: usize, init: Option<Strategy>) -> Result<PointResult, CliError> {
        let cfg = self.config;
        let start = Instant::now();
        let mut best: Option<OptimizationReport> = None;
        let mut start_qfis = vec![];
        for k in 0..cfg.starts {
            let mut settings = self.settings.clone();
            settings.seed = seed_for_start(self.settings.seed, k);
            if settings.checkpoint_every > 0 {
                settings.checkpoint_path = Some(self.out.join("checkpoints").join(format!("N{n}_start{k}.json")));
            }
            let init = if k == 0 { init.clone() } else { None };
            let rep = run(&self.channel, cfg.theta0, n, cfg.mode, cfg.ancilla_dim, &settings, init)?;
            start_qfis.push(rep.final_qfi);
            if best.as_ref().is_none_or(|b| rep.final_qfi > b.final_qfi) {
                best = Some(rep);
            }
        }
        let report = best.expect("at least one start");

        let wants = |b: Baseline| cfg.baselines.contains(&b);
        let control_free = wants(Baseline::ControlFreePlus)
            .then(|| baselines::control_free(&self.channel, cfg.theta0, n))
            .transpose()?;
        let classical = wants(Baseline::ClassicalNf1)
            .then(|| baselines::classical(&self.channel, cfg.theta0, n, cfg.ancilla_dim))
            .transpose()?;
        let near_inverse = wants(Baseline::NearInverseControl)
            .then(|| baselines::near_inverse(&self.channel, cfg.theta0, n, cfg.near_inverse_eps))
            .transpose()?;
        let verification = (cfg.verify && n <= VERIFY_MAX_N)
            .then(|| verify_strategy(&self.channel, cfg.theta0, &report.final_strategy))
            .transpose()?;

        let q = report.final_qfi;
        let nf = n as f64;
        Ok(PointResult {
            row: CsvRow {
                n,
                mode: cfg.mode,
                ancilla_dim: cfg.ancilla_dim,
                qfi: q,
                qfi_per_n: q / nf,
                qfi_per_n2: q / (nf * nf),
                control_free_plus: control_free,
                classical_nf1: classical,
                near_inverse_control: near_inverse.map(|r| r.qfi),
                iterations: report.iterations,
                seconds: start.elapsed().as_secs_f64(),
            },
            near_inverse_discontinuous: near_inverse.map(|r| r.discontinuous),
            verification,
            start_qfis,
            report,
        })
    }
}

fn write_outputs(out: &Path, report: &ExperimentReport) -> Result<(), CliError> {
    let rows: Vec<CsvRow> = report.points.iter().map(|p| p.row.clone()).collect();
    write_atomic(&out.join(CSV_FILE), emit_csv(&rows)?.as_bytes())?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&out.join(REPORT_FILE), &json)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn failed_verification(n: usize, v: &Verification) -> CliError {
    CliError::Numerical(format!("N={n}: tensor-network contractions disagree with the dense oracle: {v:?}"))
}

/// Run every N of `config`, flushing the CSV and JSON outputs after each
/// completed point so an interrupted sweep leaves its finished points on disk.
pub fn run_experiment(config: &RunConfig, opts: &RunOptions) -> Result<ExperimentReport, CliError> {
    config.validate()?;
    let out = opts.out_override.clone().unwrap_or_else(|| config.out.clone());
    fs::create_dir_all(&out)?;
    write_atomic(&out.join(CONFIG_ECHO_FILE), config.to_toml().as_bytes())?;
    let sweep = Sweep { config, channel: config.channel()?, settings: config.effective_settings(), out: out.clone() };
    let ns = config.n_values();
    let mut report = ExperimentReport { config: config.clone(), points: vec![] };

    if config.warm_start || ns.len() == 1 {
        let mut prev: Option<Strategy> = None;
        for &n in &ns {
            let init = match (&opts.resume, prev.take()) {
                (Some(r), _) if r.n == n => Some(r.clone()),
                (_, Some(mut s)) if config.warm_start => {
                    while s.n < n {
                        s = warm_start_extend(&s);
                    }
                    Some(s)
                }
                _ => None,
            };
            let mut point = sweep.point(n, init)?;
            opts.continue_trace(&mut point);
            prev = Some(point.report.final_strategy.clone());
            let bad = point.verification.as_ref().filter(|v| !v.passed).cloned();
            report.points.push(point);
            write_outputs(&out, &report)?;
            if let Some(v) = bad {
                return Err(failed_verification(n, &v));
            }
        }
        return Ok(report);
    }

    // Independent points share nothing, so they run as a pool.
    let slots: Mutex<Vec<Option<PointResult>>> = Mutex::new(vec![None; ns.len()]);
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<CliError>> = Mutex::new(None);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(ns.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= ns.len() || first_error.lock().unwrap().is_some() {
                    break;
                }
                let n = ns[i];
                let init = opts.resume.clone().filter(|r| r.n == n);
                let result = sweep.point(n, init).and_then(|mut p| {
                    opts.continue_trace(&mut p);
                    match &p.verification {
                        Some(v) if !v.passed => Err(failed_verification(n, v)),
                        _ => Ok(p),
                    }
                });
                match result {
                    Ok(p) => {
                        let mut slots = slots.lock().unwrap();
                        slots[i] = Some(p);
                        let done = ExperimentReport {
                            config: config.clone(),
                            points: slots.iter().flatten().cloned().collect(),
                        };
                        if let Err(e) = write_outputs(&out, &done) {
                            first_error.lock().unwrap().get_or_insert(e);
                        }
                    }
                    Err(e) => {
                        first_error.lock().unwrap().get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    report.points = slots.into_inner().unwrap().into_iter().flatten().collect();
    Ok(report)
}
