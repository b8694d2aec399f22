//! Run configuration: a JSON file merged with command-line flags (flags win).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdfspectral::basis::{BasisFamily, BasisSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Decompose,
    Value,
    Calibrate,
    Bootstrap,
    Mc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Hermite,
    Bspline,
    Sparse,
}

impl From<Family> for BasisFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Hermite => BasisFamily::Hermite,
            Family::Bspline => BasisFamily::BSpline,
            Family::Sparse => BasisFamily::SparseTensor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Utility {
    Power,
    Recursive,
}

/// Every field is optional so that a file and the flags can be layered.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub input: Option<PathBuf>,
    /// Simulated design instead of an input file (`mc` only): `"baseline"`.
    pub design: Option<String>,
    pub state_cols: Option<Vec<String>>,
    pub growth_col: Option<String>,
    pub return_cols: Option<Vec<String>>,
    pub sdf_col: Option<String>,
    pub date_col: Option<String>,
    pub basis: Option<Family>,
    pub k: Option<usize>,
    pub instrument_k: Option<usize>,
    pub utility: Option<Utility>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub boot_b: Option<usize>,
    pub block: Option<f64>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub reps: Option<usize>,
    pub sizes: Option<Vec<usize>>,
}

macro_rules! layer {
    ($base:ident, $top:ident, $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {} does not match the schema", path.display()))
    }

    /// `self` overridden by every field set in `top`.
    pub fn merged(mut self, top: &RunConfig) -> Self {
        layer!(
            self, top, command, input, design, state_cols, growth_col, return_cols, sdf_col, date_col, basis, k,
            instrument_k, utility, beta, gamma, boot_b, block, level, seed, out, reps, sizes
        );
        self
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn command(&self) -> Result<Command> {
        self.command.context("no command given")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn family(&self) -> Family {
        self.basis.unwrap_or(Family::Hermite)
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(match self.family() {
            Family::Sparse => 5,
            _ => 8,
        })
    }

    pub fn solve_basis(&self) -> Result<BasisSpec> {
        Ok(BasisSpec::from_family(self.family().into(), self.k())?)
    }

    /// Instruments default to one step below the solve basis.
    pub fn instrument_basis(&self) -> Result<BasisSpec> {
        let solve = self.solve_basis()?;
        Ok(match (solve, self.instrument_k) {
            (BasisSpec::Sparse { degree, .. }, Some(cap)) => BasisSpec::Sparse { degree, cap },
            (BasisSpec::Sparse { degree, cap }, None) => BasisSpec::Sparse { degree, cap: cap - 1 },
            (_, Some(k)) => BasisSpec::from_family(self.family().into(), k)?,
            (_, None) => BasisSpec::from_family(self.family().into(), self.k().saturating_sub(1).max(1))?,
        })
    }

    pub fn utility(&self) -> Utility {
        self.utility.unwrap_or(Utility::Recursive)
    }

    /// Fixed preferences if both are set.
    pub fn preferences(&self) -> Result<Option<(f64, f64)>> {
        match (self.beta, self.gamma) {
            (Some(b), Some(g)) => Ok(Some((b, g))),
            (None, None) => Ok(None),
            _ => bail!("--beta and --gamma must be given together"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cmd = self.command()?;
        match (cmd, &self.input, &self.design) {
            (Command::Mc, Some(_), _) => bail!("mc simulates its own data; drop --input"),
            (Command::Mc, None, Some(d)) if d != "baseline" => bail!("unknown design {d:?}; only \"baseline\" exists"),
            (Command::Mc, _, _) => {}
            (_, None, _) => bail!("{cmd:?} needs --input"),
            (_, Some(_), Some(_)) => bail!("give either an input file or a design, not both"),
            _ => {}
        }
        if cmd != Command::Mc && self.state_cols.as_ref().map_or(true, Vec::is_empty) {
            bail!("--state-cols is required");
        }
        if let Some(level) = self.level {
            if !(level > 0.0 && level < 1.0) {
                bail!("--level must lie in (0, 1), got {level}");
            }
        }
        if let Some(block) = self.block {
            if !(block >= 1.0) {
                bail!("--block must be at least 1, got {block}");
            }
        }
        Ok(())
    }
}
