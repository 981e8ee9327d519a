use std::path::{Path, PathBuf};

use dcone::folds::Branch;
use dcone::obstacle::SolverConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Contents of a `--config` file. Every field is optional; flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub include_bump: Option<bool>,
    /// Full solver block; `n`, `seed`, `restarts` above take precedence.
    pub solver: Option<SolverConfig>,
    pub h: Option<Vec<f64>>,
    pub profile: Option<Profile>,
    pub alpha: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub ks: Option<Vec<f64>>,
    pub branch: Option<Branch>,
    pub samples: Option<usize>,
    pub numeric: Option<bool>,
    pub out: Option<PathBuf>,
    pub w_out: Option<PathBuf>,
    pub summary_out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Closed-form single fold.
    SingleFold,
    /// Numerical minimizer from the bump start.
    Minimizer,
}

/// Fully resolved settings for one subcommand. Its canonical JSON, output
/// paths excluded, is hashed into every output header.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Minimize {
        solver: SolverConfig,
        #[serde(skip)]
        out: PathBuf,
        #[serde(skip)]
        w_out: PathBuf,
    },
    Folds {
        n: usize,
        numeric: bool,
        #[serde(skip)]
        out: PathBuf,
    },
    Sweep {
        alphas: Vec<f64>,
        ks: Vec<f64>,
        branch: Branch,
        #[serde(skip)]
        out: PathBuf,
    },
    Recover {
        profile: Profile,
        n: usize,
        h: Vec<f64>,
        #[serde(skip)]
        out: PathBuf,
        #[serde(skip)]
        summary_out: PathBuf,
    },
    PlotG {
        alpha: f64,
        branch: Branch,
        samples: usize,
        #[serde(skip)]
        out: PathBuf,
    },
}

impl RunConfig {
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("plain data");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn header(&self) -> String {
        format!("# dcone {} config={}", env!("CARGO_PKG_VERSION"), self.hash())
    }

    pub fn outputs(&self) -> Vec<&Path> {
        match self {
            RunConfig::Minimize { out, w_out, .. } => vec![out, w_out],
            RunConfig::Recover { out, summary_out, .. } => vec![out, summary_out],
            RunConfig::Folds { out, .. } | RunConfig::Sweep { out, .. } | RunConfig::PlotG { out, .. } => {
                vec![out]
            }
        }
    }

    /// Checks that do not need any numerics.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        match self {
            RunConfig::Minimize { solver, .. } => {
                solver.validate().map_err(|e| CliError::Validation(e.to_string()))?
            }
            RunConfig::Folds { n, .. } => check_grid(*n)?,
            RunConfig::Sweep { alphas, ks, .. } => {
                if alphas.is_empty() || ks.is_empty() {
                    return bad("sweep needs at least one alpha and one k".into());
                }
                if let Some(a) = alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
                    return bad(format!("alpha must be positive and finite, got {a}"));
                }
                if let Some(k) = ks.iter().find(|k| !k.is_finite()) {
                    return bad(format!("k must be finite, got {k}"));
                }
            }
            RunConfig::Recover { n, h, .. } => {
                check_grid(*n)?;
                if h.is_empty() {
                    return bad("empty h list".into());
                }
                if let Some(x) = h.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
                    return bad(format!("h must lie in (0, 1), got {x}"));
                }
            }
            RunConfig::PlotG { alpha, samples, .. } => {
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return bad(format!("alpha must be positive and finite, got {alpha}"));
                }
                if *samples < 2 {
                    return bad("samples must be at least 2".into());
                }
            }
        }
        for p in self.outputs() {
            check_writable(p)?;
        }
        Ok(())
    }
}

fn check_grid(n: usize) -> Result<(), CliError> {
    dcone::make_grid(n).map(|_| ()).map_err(|e| CliError::Validation(e.to_string()))
}

fn check_writable(path: &Path) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let meta = std::fs::metadata(dir)
        .map_err(|_| CliError::Validation(format!("output directory {} does not exist", dir.display())))?;
    if !meta.is_dir() || meta.permissions().readonly() {
        return Err(CliError::Validation(format!("output directory {} is not writable", dir.display())));
    }
    if path.is_dir() {
        return Err(CliError::Validation(format!("output path {} is a directory", path.display())));
    }
    Ok(())
}

/// `a,b,c` or `start:stop:count` (inclusive, evenly spaced).
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("range `{s}` must be start:stop:count"));
        };
        let (a, b) = (num(a)?, num(b)?);
        let count: usize = c.trim().parse().map_err(|e| format!("`{c}`: {e}"))?;
        return match count {
            0 => Err("range count must be positive".into()),
            1 => Ok(vec![a]),
            _ => Ok((0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()),
        };
    }
    s.split(',').filter(|t| !t.trim().is_empty()).map(num).collect()
}

/// Sibling of `path` with a new file name, e.g. `out/report.json` to `out/w.csv`.
pub fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("0.2,0.1").unwrap(), vec![0.2, 0.1]);
        assert_eq!(parse_list("1:2:3").unwrap(), vec![1.0, 1.5, 2.0]);
        assert_eq!(parse_list("4:9:1").unwrap(), vec![4.0]);
        assert!(parse_list("1:2").is_err());
        assert!(parse_list("x").is_err());
    }

    #[test]
    fn hash_tracks_settings_not_paths() {
        let a = RunConfig::PlotG { alpha: 7.0, branch: Branch::Trig, samples: 4000, out: "g.csv".into() };
        let b = RunConfig::PlotG { alpha: 7.0, branch: Branch::Trig, samples: 4001, out: "g.csv".into() };
        let moved = RunConfig::PlotG { alpha: 7.0, branch: Branch::Trig, samples: 4000, out: "x/g.csv".into() };
        assert_eq!(a.hash(), moved.hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
