//! Scenario runs with files on disk and process exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | run completed |
//! | 2 | usage, parse or validation error |
//! | 3 | equilibrium seeding failed |
//! | 4 | singular system |
//! | 5 | contact break |
//! | 6 | infeasible force constraints |
//! | 7 | friction violation |
//! | 8 | numerical failure (corrector or joint range) |
//! | 9 | input/output error |

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::export::write_outputs;
use crate::scenario::{bundled_names, bundled_source, parse_scenario_with, Override, Scenario, ScenarioError};
use crate::sim::{run, SimError, Summary, Termination};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "ROLLHAND_OUT";

/// Output directory used when neither `--out` nor the environment sets one.
pub const DEFAULT_OUTPUT_DIR: &str = "rollhand-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Ok,
    Usage,
    Seeding,
    Singular,
    ContactBreak,
    Infeasible,
    Friction,
    Numerical,
    Io,
}

impl ExitStatus {
    pub const ALL: [ExitStatus; 9] = [
        ExitStatus::Ok,
        ExitStatus::Usage,
        ExitStatus::Seeding,
        ExitStatus::Singular,
        ExitStatus::ContactBreak,
        ExitStatus::Infeasible,
        ExitStatus::Friction,
        ExitStatus::Numerical,
        ExitStatus::Io,
    ];

    pub fn code(self) -> u8 {
        match self {
            ExitStatus::Ok => 0,
            ExitStatus::Usage => 2,
            ExitStatus::Seeding => 3,
            ExitStatus::Singular => 4,
            ExitStatus::ContactBreak => 5,
            ExitStatus::Infeasible => 6,
            ExitStatus::Friction => 7,
            ExitStatus::Numerical => 8,
            ExitStatus::Io => 9,
        }
    }

    pub fn from_termination(t: Termination) -> Self {
        match t {
            Termination::Completed => ExitStatus::Ok,
            Termination::SingularSystem => ExitStatus::Singular,
            Termination::ContactBreak => ExitStatus::ContactBreak,
            Termination::FrictionViolation => ExitStatus::Friction,
            Termination::ConstraintInfeasible => ExitStatus::Infeasible,
            Termination::NumericalFailure => ExitStatus::Numerical,
        }
    }

    pub fn from_scenario_error(e: &ScenarioError) -> Self {
        match e {
            ScenarioError::Seeding(_) => ExitStatus::Seeding,
            _ => ExitStatus::Usage,
        }
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExitStatus::Ok => "ok",
            ExitStatus::Usage => "usage error",
            ExitStatus::Seeding => "seeding failed",
            ExitStatus::Singular => "singular system",
            ExitStatus::ContactBreak => "contact break",
            ExitStatus::Infeasible => "infeasible constraints",
            ExitStatus::Friction => "friction violation",
            ExitStatus::Numerical => "numerical failure",
            ExitStatus::Io => "i/o error",
        };
        f.write_str(s)
    }
}

/// Result of one scenario run.
#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub source: String,
    pub status: ExitStatus,
    pub summary: Option<Summary>,
    pub files: Option<PathBuf>,
    pub error: Option<String>,
}

impl RunOutcome {
    fn failed(source: &str, status: ExitStatus, error: impl ToString) -> Self {
        RunOutcome {
            source: source.to_owned(),
            status,
            summary: None,
            files: None,
            error: Some(error.to_string()),
        }
    }
}

/// Resolves `source` as a file path, or as a bundled scenario name when no
/// such file exists.
pub fn load_scenario(source: &str, overrides: &[Override]) -> Result<Scenario, (ExitStatus, String)> {
    let path = Path::new(source);
    let text = if path.exists() {
        std::fs::read_to_string(path).map_err(|e| (ExitStatus::Io, format!("{source}: {e}")))?
    } else {
        bundled_source(source)
            .map_err(|_| {
                (
                    ExitStatus::Usage,
                    format!("{source}: no such file or bundled scenario (bundled: {})", bundled_names().join(", ")),
                )
            })?
            .to_owned()
    };
    parse_scenario_with(&text, overrides).map_err(|e| (ExitStatus::from_scenario_error(&e), format!("{source}: {e}")))
}

/// Loads, runs and exports one scenario into `output_dir`.
pub fn run_scenario(source: &str, output_dir: &Path, overrides: &[Override]) -> RunOutcome {
    let scenario = match load_scenario(source, overrides) {
        Ok(s) => s,
        Err((status, message)) => return RunOutcome::failed(source, status, message),
    };
    let record = match run(&scenario) {
        Ok(r) => r,
        Err(SimError::Scenario(e)) => return RunOutcome::failed(source, ExitStatus::from_scenario_error(&e), e),
        Err(e) => return RunOutcome::failed(source, ExitStatus::Usage, e),
    };
    let status = ExitStatus::from_termination(record.summary.termination);
    match write_outputs(&record, output_dir) {
        Ok(_) => RunOutcome {
            source: source.to_owned(),
            status,
            summary: Some(record.summary),
            files: Some(output_dir.to_owned()),
            error: None,
        },
        Err(e) => RunOutcome::failed(source, ExitStatus::Io, e),
    }
}

/// Scenario files (`*.toml`) directly inside `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs every scenario in `dir` on `jobs` worker threads, writing each into
/// `output_dir/<file stem>`. Outcomes are returned in file-name order.
pub fn run_batch(dir: &Path, output_dir: &Path, jobs: usize) -> Result<Vec<RunOutcome>, (ExitStatus, String)> {
    let files = scenario_files(dir).map_err(|e| (ExitStatus::Io, format!("{}: {e}", dir.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| (ExitStatus::Usage, e.to_string()))?;
    Ok(pool.install(|| {
        files
            .par_iter()
            .map(|path| {
                let stem = path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
                run_scenario(&path.to_string_lossy(), &output_dir.join(stem), &[])
            })
            .collect()
    }))
}

/// Exit status of a batch: the first failure in file order, or success.
pub fn batch_status(outcomes: &[RunOutcome]) -> ExitStatus {
    outcomes.iter().map(|o| o.status).find(|s| *s != ExitStatus::Ok).unwrap_or(ExitStatus::Ok)
}
