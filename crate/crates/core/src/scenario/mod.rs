//! Batch execution of scenario files.
//!
//! A run parses and builds everything first, computes all results in memory
//! and only then writes the output directory, so input errors leave no
//! files behind. Every JSON output carries the SHA-256 of the scenario file
//! and every CSV starts with a `# config_hash=` comment line.

mod exec;
mod report;
mod schema;

pub use report::{report, ReportOutcome};
pub use schema::{Kind, Scenario};

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimates::Certificate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERTIFICATE: i32 = 1;
pub const EXIT_REFUSED: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

/// Exit code for an error raised while running a scenario.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Refusal(_)
        | Error::InsufficientFamily(_)
        | Error::NonConvergence { .. }
        | Error::Divergence { .. }
        | Error::Internal(_) => EXIT_REFUSED,
        _ => EXIT_INPUT,
    }
}

/// Named file contents produced by a run.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// In-memory results of a scenario before they are written.
#[derive(Debug, Default)]
pub(crate) struct Results {
    pub artifacts: Vec<Artifact>,
    pub certificates: Vec<Certificate>,
    /// Set when the run ends in a refusal-class outcome that still has
    /// outputs worth keeping, e.g. an infeasible control problem.
    pub refusal: Option<String>,
}

pub(crate) struct Writer<'a> {
    pub hash: &'a str,
}

impl Writer<'_> {
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<Artifact> {
        #[derive(Serialize)]
        struct Tagged<'a, T> {
            config_hash: &'a str,
            #[serde(flatten)]
            value: &'a T,
        }
        let mut bytes = serde_json::to_vec_pretty(&Tagged {
            config_hash: self.hash,
            value,
        })?;
        bytes.push(b'\n');
        Ok(Artifact {
            name: name.to_string(),
            bytes,
        })
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<Artifact> {
        let mut bytes = format!("# config_hash={}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut bytes);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r.iter().map(|v| v.to_string()))?;
            }
            w.flush()?;
        }
        Ok(Artifact {
            name: name.to_string(),
            bytes,
        })
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    scenario: String,
    kind: &'a str,
    seed: u64,
    version: &'a str,
    threads: usize,
    status: &'a str,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    outputs: Vec<&'a str>,
    wall_time: f64,
}

/// Outcome of [`run`].
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// Directory written to, absent for input errors.
    pub out_dir: Option<PathBuf>,
    pub certificates: Vec<Certificate>,
    /// Diagnostic lines for standard error.
    pub messages: Vec<String>,
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parsed scenario with its raw hash and directory.
pub struct Loaded {
    pub scenario: Scenario,
    pub hash: String,
    pub base: PathBuf,
    pub name: String,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Invalid(format!("scenario is not UTF-8: {e}")))?;
    let scenario = Scenario::parse(text)?;
    Ok(Loaded {
        scenario,
        hash: config_hash(&bytes),
        base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        name: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    })
}

fn default_out(loaded: &Loaded) -> PathBuf {
    match &loaded.scenario.output_dir {
        Some(d) => loaded.base.join(d),
        None => {
            let stem = Path::new(&loaded.name)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            PathBuf::from("runs").join(stem)
        }
    }
}

fn write_dir(dir: &Path, files: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in files {
        std::fs::write(dir.join(&f.name), &f.bytes)?;
    }
    Ok(())
}

/// Runs the scenario at `path`, writing into `out` or the scenario's own
/// output directory.
pub fn run(path: &Path, out: Option<&Path>) -> RunOutcome {
    let start = Instant::now();
    let input_error = |e: Error| RunOutcome {
        exit_code: EXIT_INPUT,
        out_dir: None,
        certificates: Vec::new(),
        messages: vec![format!("error: {e}")],
    };
    let loaded = match load(path) {
        Ok(l) => l,
        Err(e) => return input_error(e),
    };
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| default_out(&loaded));
    let w = Writer { hash: &loaded.hash };
    let computed = exec::execute(&loaded, &w);

    let (results, code, status, message) = match computed {
        Ok(r) => {
            let failed: Vec<&Certificate> = r.certificates.iter().filter(|c| !c.pass).collect();
            let (code, status) = if r.refusal.is_some() {
                (EXIT_REFUSED, "refused")
            } else if !failed.is_empty() {
                (EXIT_CERTIFICATE, "certificate-failure")
            } else {
                (EXIT_OK, "pass")
            };
            let msg = r.refusal.clone();
            (r, code, status, msg)
        }
        Err(e) => {
            let code = exit_code(&e);
            if code == EXIT_INPUT {
                return input_error(e);
            }
            let mut r = Results::default();
            #[derive(Serialize)]
            struct Diagnostic {
                error: String,
                #[serde(skip_serializing_if = "Option::is_none")]
                residual_history: Option<Vec<f64>>,
            }
            let history = match &e {
                Error::NonConvergence { history, .. } => Some(history.clone()),
                _ => None,
            };
            match w.json(
                "diagnostics.json",
                &Diagnostic {
                    error: e.to_string(),
                    residual_history: history,
                },
            ) {
                Ok(a) => r.artifacts.push(a),
                Err(e) => return input_error(e),
            }
            (r, code, "refused", Some(e.to_string()))
        }
    };

    let mut messages = Vec::new();
    if let Some(m) = &message {
        messages.push(format!("refused: {m}"));
    }
    for c in results.certificates.iter().filter(|c| !c.pass) {
        messages.push(format!(
            "certificate {} failed: margin {:e} below -{:e}",
            c.name, c.margin, c.tolerance
        ));
    }

    let mut files = results.artifacts;
    if !results.certificates.is_empty() {
        #[derive(Serialize)]
        struct Certs<'a> {
            certificates: &'a [Certificate],
        }
        match w.json(
            "certificates.json",
            &Certs {
                certificates: &results.certificates,
            },
        ) {
            Ok(a) => files.push(a),
            Err(e) => return input_error(e),
        }
    }
    let names: Vec<String> = files.iter().map(|f| f.name.clone()).collect();
    let manifest = Manifest {
        config_hash: &loaded.hash,
        scenario: loaded.name.clone(),
        kind: loaded.scenario.kind.name(),
        seed: loaded.scenario.seed,
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        status,
        exit_code: code,
        message,
        outputs: names.iter().map(String::as_str).collect(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    let mbytes = match serde_json::to_vec_pretty(&manifest) {
        Ok(mut b) => {
            b.push(b'\n');
            b
        }
        Err(e) => return input_error(e.into()),
    };
    files.push(Artifact {
        name: "manifest.json".into(),
        bytes: mbytes,
    });
    if let Err(e) = write_dir(&dir, &files) {
        return input_error(e);
    }
    RunOutcome {
        exit_code: code,
        out_dir: Some(dir),
        certificates: results.certificates,
        messages,
    }
}

/// Schema check plus the hypothesis battery, without writing anything.
pub fn validate(path: &Path) -> (i32, Vec<String>) {
    match exec::validate(path) {
        Ok(lines) => (EXIT_OK, lines),
        Err(e) => (exit_code(&e), vec![format!("error: {e}")]),
    }
}
