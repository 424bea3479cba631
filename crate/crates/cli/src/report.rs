//! `forkcast pipeline`: per-period report as JSON plus a flat CSV twin.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use forkcast_core::forkrate::{fork_rate, implied_delta0, implied_hhi, ImpliedResult, MethodChoice};
use forkcast_core::ingest::{Dataset, DatasetPaths};
use forkcast_core::model::expected_block_time;
use forkcast_core::{PeriodRecord, QuadratureConfig};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::fit_counts;
use crate::{CliError, FitFamily, PipelineArgs, PipelineFamily};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool: Tool,
    pub inputs: Inputs,
    pub settings: Settings,
    pub complete_periods: usize,
    pub remainder_blocks: usize,
    pub succeeded: usize,
    pub periods: Vec<PeriodEntry>,
}

#[derive(Debug, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Inputs {
    pub blocks: InputFile,
    pub stale: InputFile,
    pub propagation: InputFile,
    pub hashrate: InputFile,
}

#[derive(Debug, Serialize)]
pub struct Settings {
    pub period_len: usize,
    pub rescale: f64,
    pub models: Vec<&'static str>,
    pub quadrature: QuadratureConfig,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Triple {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

#[derive(Debug, Serialize)]
pub struct ModelEntry {
    pub model: &'static str,
    pub parameters: Option<serde_json::Value>,
    pub fork_rate: Option<Triple>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ImpliedEntry {
    pub delta0: Option<ImpliedResult>,
    pub hhi_p50: Option<ImpliedResult>,
    pub hhi_p90: Option<ImpliedResult>,
    pub hhi_p99: Option<ImpliedResult>,
    pub errors: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct PeriodEntry {
    pub index: usize,
    pub status: &'static str,
    pub error: Option<String>,
    pub record: Option<PeriodRecord>,
    pub block_time: Option<f64>,
    pub models: Vec<ModelEntry>,
    pub implied: Option<ImpliedEntry>,
}

impl PeriodEntry {
    fn ok(&self) -> bool {
        self.status == "ok"
    }
}

fn expand(families: &[PipelineFamily]) -> Vec<FitFamily> {
    let mut out = Vec::new();
    for f in families {
        let add: &[FitFamily] = match f {
            PipelineFamily::Exp => &[FitFamily::Exp],
            PipelineFamily::Lognormal => &[FitFamily::Lognormal],
            PipelineFamily::Tpl => &[FitFamily::Tpl],
            PipelineFamily::Semi => &[FitFamily::SemiIid, FitFamily::SemiInid],
            PipelineFamily::SemiIid => &[FitFamily::SemiIid],
            PipelineFamily::SemiInid => &[FitFamily::SemiInid],
            PipelineFamily::Empirical => &[FitFamily::Empirical],
        };
        for a in add {
            if !out.contains(a) {
                out.push(*a);
            }
        }
    }
    out
}

fn digest(path: &Path) -> Result<InputFile, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(InputFile {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn error_text(e: CliError) -> String {
    match e {
        CliError::Input(m) | CliError::Numeric(m) | CliError::Internal(m) => m,
    }
}

fn evaluate_model(record: &PeriodRecord, family: FitFamily, cfg: &QuadratureConfig) -> ModelEntry {
    let run = || -> Result<(Option<serde_json::Value>, Triple), CliError> {
        let counts = record.counts()?;
        let fit = fit_counts(&counts, record.lambda_total, 0, family)?;
        let parameters = match (&fit.parameters, fit.gamma) {
            (Some(p), _) => Some(serde_json::to_value(p).map_err(|e| CliError::Internal(e.to_string()))?),
            (None, Some(g)) => Some(serde_json::json!({ "gamma": g })),
            (None, None) => None,
        };
        let c = |d: f64| fork_rate(&fit.model, d, MethodChoice::Auto, cfg).map(|r| r.value);
        let triple = Triple {
            p50: c(record.prop_p50)?,
            p90: c(record.prop_p90)?,
            p99: c(record.prop_p99)?,
        };
        Ok((parameters, triple))
    };
    match run() {
        Ok((parameters, triple)) => ModelEntry {
            model: family.name(),
            parameters,
            fork_rate: Some(triple),
            error: None,
        },
        Err(e) => ModelEntry {
            model: family.name(),
            parameters: None,
            fork_rate: None,
            error: Some(error_text(e)),
        },
    }
}

fn implied(record: &PeriodRecord) -> ImpliedEntry {
    let mut errors = Vec::new();
    let mut keep = |r: forkcast_core::Result<ImpliedResult>, what: &str| match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{what}: {e}"));
            None
        }
    };
    let (c, l) = (record.fork_rate_empirical, record.lambda_total);
    let delta0 = keep(implied_delta0(c, l, record.hhi), "implied delta0");
    let hhi_p50 = keep(implied_hhi(c, l, record.prop_p50), "implied hhi p50");
    let hhi_p90 = keep(implied_hhi(c, l, record.prop_p90), "implied hhi p90");
    let hhi_p99 = keep(implied_hhi(c, l, record.prop_p99), "implied hhi p99");
    ImpliedEntry {
        delta0,
        hhi_p50,
        hhi_p90,
        hhi_p99,
        errors,
    }
}

fn evaluate_period(
    index: usize,
    record: forkcast_core::Result<PeriodRecord>,
    models: &[FitFamily],
    cfg: &QuadratureConfig,
) -> PeriodEntry {
    let record = match record {
        Ok(r) => r,
        Err(e) => {
            return PeriodEntry {
                index,
                status: "error",
                error: Some(e.to_string()),
                record: None,
                block_time: None,
                models: Vec::new(),
                implied: None,
            }
        }
    };
    let block_time = Some(expected_block_time(record.lambda_total));
    if !record.usable {
        return PeriodEntry {
            index,
            status: "error",
            error: Some(format!("{} active miner(s); at least 2 are needed", record.n_miners)),
            record: Some(record),
            block_time,
            models: Vec::new(),
            implied: None,
        };
    }
    let entries = models.iter().map(|&f| evaluate_model(&record, f, cfg)).collect();
    PeriodEntry {
        index,
        status: "ok",
        error: None,
        implied: Some(implied(&record)),
        block_time,
        record: Some(record),
        models: entries,
    }
}

fn build(a: &PipelineArgs, models: &[FitFamily], cfg: &QuadratureConfig) -> Result<Report, CliError> {
    let paths = DatasetPaths {
        blocks: a.blocks.clone(),
        stales: a.stale.clone(),
        propagation: a.propagation.clone(),
        hashrate: a.hashrate.clone(),
    };
    let inputs = Inputs {
        blocks: digest(&paths.blocks)?,
        stale: digest(&paths.stales)?,
        propagation: digest(&paths.propagation)?,
        hashrate: digest(&paths.hashrate)?,
    };
    let data = Dataset::load(&paths)?;
    let (records, remainder) = data.period_records(a.period_len, a.rescale)?;
    if records.is_empty() {
        return Err(CliError::Input(format!(
            "{} blocks do not fill a single period of {}",
            data.blocks.len(),
            a.period_len
        )));
    }
    let periods: Vec<PeriodEntry> = records
        .into_par_iter()
        .enumerate()
        .map(|(i, r)| evaluate_period(i, r, models, cfg))
        .collect();
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        tool: Tool {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
        inputs,
        settings: Settings {
            period_len: a.period_len,
            rescale: a.rescale,
            models: models.iter().map(|f| f.name()).collect(),
            quadrature: *cfg,
        },
        complete_periods: periods.len(),
        remainder_blocks: remainder,
        succeeded: periods.iter().filter(|p| p.ok()).count(),
        periods,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// One row per period; model and implied columns are empty where the
/// report has no value.
pub fn csv_twin(report: &Report) -> String {
    let mut out = String::from(
        "index,status,first_height,last_height,start_time,end_time,n_miners,lambda_total,block_time,hhi,\
         fork_rate_empirical,prop_p50,prop_p90,prop_p99,implied_delta0,implied_delta0_valid,\
         implied_hhi_p50,implied_hhi_p90,implied_hhi_p99",
    );
    for m in &report.settings.models {
        let _ = write!(out, ",C_{m}_p50,C_{m}_p90,C_{m}_p99");
    }
    out.push('\n');
    for p in &report.periods {
        let r = p.record.as_ref();
        let imp = p.implied.as_ref();
        let fields = [
            p.index.to_string(),
            p.status.to_string(),
            r.map(|r| r.first_height.to_string()).unwrap_or_default(),
            r.map(|r| r.last_height.to_string()).unwrap_or_default(),
            r.map(|r| r.start_time.to_string()).unwrap_or_default(),
            r.map(|r| r.end_time.to_string()).unwrap_or_default(),
            r.map(|r| r.n_miners.to_string()).unwrap_or_default(),
            cell(r.map(|r| r.lambda_total)),
            cell(p.block_time),
            cell(r.map(|r| r.hhi)),
            cell(r.map(|r| r.fork_rate_empirical)),
            cell(r.map(|r| r.prop_p50)),
            cell(r.map(|r| r.prop_p90)),
            cell(r.map(|r| r.prop_p99)),
            cell(imp.and_then(|i| i.delta0).map(|v| v.value)),
            imp.and_then(|i| i.delta0).map(|v| v.valid.to_string()).unwrap_or_default(),
            cell(imp.and_then(|i| i.hhi_p50).map(|v| v.value)),
            cell(imp.and_then(|i| i.hhi_p90).map(|v| v.value)),
            cell(imp.and_then(|i| i.hhi_p99).map(|v| v.value)),
        ];
        out.push_str(&fields.join(","));
        for name in &report.settings.models {
            let c = p.models.iter().find(|m| m.model == *name).and_then(|m| m.fork_rate);
            let _ = write!(
                out,
                ",{},{},{}",
                cell(c.map(|t| t.p50)),
                cell(c.map(|t| t.p90)),
                cell(c.map(|t| t.p99))
            );
        }
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn pipeline(a: PipelineArgs) -> Result<(), CliError> {
    let cfg = a.quad.config()?;
    let models = expand(&a.families);
    let report = if a.threads == 0 {
        build(&a, &models, &cfg)?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(a.threads)
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?
            .install(|| build(&a, &models, &cfg))?
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&a.out, &(json + "\n"))?;
    let csv_path = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_file(&csv_path, &csv_twin(&report))?;
    eprintln!(
        "forkcast: {} of {} periods evaluated; report written to {}",
        report.succeeded,
        report.complete_periods,
        a.out.display()
    );
    if report.succeeded == 0 {
        return Err(CliError::Numeric("no period could be evaluated".into()));
    }
    Ok(())
}
