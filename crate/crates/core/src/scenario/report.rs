//! Summary tables over finished run directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Writer, EXIT_CERTIFICATE, EXIT_INPUT, EXIT_OK};
use crate::error::{Error, Result};
use crate::estimates::Certificate;

#[derive(Deserialize)]
struct ManifestIn {
    config_hash: String,
    scenario: String,
    status: String,
    exit_code: i32,
}

#[derive(Deserialize)]
struct CertsIn {
    certificates: Vec<Certificate>,
}

/// Result of [`report`].
#[derive(Debug)]
pub struct ReportOutcome {
    pub exit_code: i32,
    /// Lines for standard output.
    pub lines: Vec<String>,
    /// Lines for standard error.
    pub errors: Vec<String>,
}

fn read_dir(dir: &Path) -> Result<(ManifestIn, Vec<Certificate>)> {
    let mpath = dir.join("manifest.json");
    if !mpath.is_file() {
        return Err(Error::Invalid(format!("{} has no manifest.json", dir.display())));
    }
    let m: ManifestIn = serde_json::from_slice(&std::fs::read(mpath)?)?;
    let cpath = dir.join("certificates.json");
    let certs = if cpath.is_file() {
        serde_json::from_slice::<CertsIn>(&std::fs::read(cpath)?)?.certificates
    } else {
        Vec::new()
    };
    Ok((m, certs))
}

/// Prints one row per certificate and writes its curves to
/// `<dir>/report/<name>.csv`.
pub fn report(dirs: &[PathBuf]) -> ReportOutcome {
    let mut lines = Vec::new();
    let mut errors = Vec::new();
    let (mut total, mut passed) = (0usize, 0usize);
    let mut refused = false;
    for dir in dirs {
        let (m, certs) = match read_dir(dir) {
            Ok(x) => x,
            Err(e) => {
                return ReportOutcome {
                    exit_code: EXIT_INPUT,
                    lines,
                    errors: vec![format!("error: {e}")],
                }
            }
        };
        lines.push(format!("{} ({}): {}", m.scenario, dir.display(), m.status));
        if m.exit_code > EXIT_CERTIFICATE {
            refused = true;
        }
        let w = Writer { hash: &m.config_hash };
        let rdir = dir.join("report");
        for c in &certs {
            total += 1;
            if c.pass {
                passed += 1;
            }
            let mut row = String::new();
            let _ = write!(
                row,
                "  {:<28} {:<4} margin {:>12.4e}  tol {:.2e}",
                c.name,
                if c.pass { "pass" } else { "FAIL" },
                c.margin,
                c.tolerance
            );
            lines.push(row);
            let rows: Vec<Vec<f64>> = (0..c.t_grid.len())
                .map(|k| vec![c.t_grid[k], c.lhs[k], c.rhs[k], c.rhs[k] - c.lhs[k]])
                .collect();
            let written = w
                .csv(&format!("{}.csv", c.name), &["t", "lhs", "rhs", "margin"], &rows)
                .and_then(|a| {
                    std::fs::create_dir_all(&rdir)?;
                    std::fs::write(rdir.join(&a.name), &a.bytes)?;
                    Ok(())
                });
            if let Err(e) = written {
                errors.push(format!("could not write report curve {}: {e}", c.name));
            }
        }
    }
    if dirs.is_empty() {
        return ReportOutcome {
            exit_code: EXIT_INPUT,
            lines,
            errors: vec!["error: no run directories given".into()],
        };
    }
    let ok = passed == total;
    lines.push(format!("{} {passed}/{total}", if ok { "PASS" } else { "FAIL" }));
    if refused {
        errors.push("some runs were refused".into());
    }
    ReportOutcome {
        exit_code: if ok { EXIT_OK } else { EXIT_CERTIFICATE },
        lines,
        errors,
    }
}
