//! Command implementations behind the `pfts` binary and the HTTP router used
//! by `pfts serve`.

pub mod http;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pfts_core::harness::{cost_adjusted, emit, run_suite_on, summary, CostRow, Summary};
use pfts_core::session::{SessionError, SessionService, SessionStore};
use pfts_core::{HarnessError, RunConfig, SuiteResult};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{0}")]
    Usage(String),
    #[error("server error: {0}")]
    Server(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Harness(HarnessError::InvalidConfig(_) | HarnessError::ConfigParse(_)) => "invalid_config",
            Self::Harness(HarnessError::Io { .. }) => "io",
            Self::Harness(HarnessError::Environment(_)) => "environment",
            Self::Harness(HarnessError::Policy(_)) => "policy",
            Self::Harness(HarnessError::MissingPolicy(_)) => "missing_policy",
            Self::Session(e) => e.code(),
            Self::Usage(_) => "usage",
            Self::Server(_) => "server",
        }
    }

    /// `{"code": ..., "message": ...}` on one line.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "code": self.code(), "message": self.to_string() }).to_string()
    }
}

/// Values given on the command line that replace the config file's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub horizon: Option<usize>,
    pub policy: Option<String>,
}

pub fn load_config(path: &Path, o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if !o.seeds.is_empty() {
        cfg.seeds = o.seeds.clone();
    }
    if let Some(out) = &o.out {
        cfg.output = Some(out.clone());
    }
    if let Some(h) = o.horizon {
        cfg.horizon = h;
    }
    if let Some(name) = &o.policy {
        let p = cfg.policy(name).cloned().ok_or_else(|| CliError::Usage(format!("policy `{name}` is not in the config")))?;
        cfg.policies = vec![p];
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
pub struct Report {
    #[serde(flatten)]
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<Vec<CostRow>>,
}

fn write_outputs(cfg: &RunConfig, suite: &SuiteResult, cost: Option<&[CostRow]>) -> Result<Option<PathBuf>, CliError> {
    match &cfg.output {
        Some(dir) => {
            emit(dir, suite, cfg.horizon, cost)?;
            Ok(Some(dir.clone()))
        }
        None => Ok(None),
    }
}

/// `run`: the first policy and first seed only.
pub fn run(mut cfg: RunConfig) -> Result<Report, CliError> {
    cfg.policies.truncate(1);
    cfg.seeds.truncate(1);
    suite(cfg)
}

/// `suite`: every policy against every seed.
pub fn suite(cfg: RunConfig) -> Result<Report, CliError> {
    let env = cfg.build_environment()?;
    let result = run_suite_on(&cfg, &env);
    let output = write_outputs(&cfg, &result, None)?;
    Ok(Report { summary: summary(&result, cfg.horizon), output, cost: None })
}

/// `cost`: the suite plus the cost-adjusted table.
pub fn cost(cfg: RunConfig) -> Result<Report, CliError> {
    let env = cfg.build_environment()?;
    let result = run_suite_on(&cfg, &env);
    let rows = cost_adjusted(&cfg, &result)?;
    let output = write_outputs(&cfg, &result, Some(&rows))?;
    Ok(Report { summary: summary(&result, cfg.horizon), output, cost: Some(rows) })
}

/// `serve`: blocks until ctrl-c.
pub fn serve(addr: SocketAddr, store_path: Option<PathBuf>) -> Result<(), CliError> {
    let store = match store_path {
        Some(p) => SessionStore::open(p)?,
        None => SessionStore::in_memory(),
    };
    let svc = Arc::new(SessionService::new(store)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Server(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Server(e.to_string()))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| CliError::Server(e.to_string()))?);
        axum::serve(listener, http::router(svc))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Server(e.to_string()))
    })
}
