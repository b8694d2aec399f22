use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use sdfspectral::basis::SieveBasis;
use sdfspectral::calibrate::{self, OptimizerConfig, PreferenceBounds};
use sdfspectral::decomp;
use sdfspectral::inference;
use sdfspectral::pfeig;
use sdfspectral::report::{self, DecompScalars};
use sdfspectral::sievemat::{BasisEvaluations, SieveMatrices, StatePanel};
use sdfspectral::simkit::{self, McDesign};
use sdfspectral::valuefn::{self, FixedPointConfig};

use crate::config::{Command, RunConfig, Utility};
use crate::data::{self, Dataset};
use crate::plot;

/// Files written and whether an eigen-solution fell back to `rho = 1`.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub fallback: bool,
    pub note: Option<String>,
}

const GRID_POINTS: usize = 101;
const FIXED_STATISTICS: [&str; 4] = ["rho", "y", "L", "horizon_dependence"];

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> Result<fs::File> {
        let path = self.dir.join(name);
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(path);
        Ok(f)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        report::write_json(self.file(name)?, value)?;
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut w = Writer::new(&cfg.out_dir())?;
    let mut outcome = match cfg.command()? {
        Command::Decompose => decompose(cfg, &mut w)?,
        Command::Value => value(cfg, &mut w)?,
        Command::Calibrate => calibrate_cmd(cfg, &mut w)?,
        Command::Bootstrap => bootstrap(cfg, &mut w)?,
        Command::Mc => mc(cfg, &mut w)?,
    };
    provenance(cfg, &mut w)?;
    outcome.artifacts = w.written;
    Ok(outcome)
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    config: &'a RunConfig,
    artifacts: Vec<String>,
}

fn provenance(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let artifacts = w
        .written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let record = Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.hash(),
        seed: cfg.seed(),
        config: cfg,
        artifacts,
    };
    w.json("provenance.json", &record)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.input.as_deref().context("--input is required")?;
    data::load(path, cfg)
}

/// SDF series implied by the configuration on this panel: an SDF column if
/// present, otherwise growth with fixed `(beta, gamma)`.
fn sdf_for(cfg: &RunConfig, panel: &StatePanel, basis: &SieveBasis) -> Result<Vec<f64>> {
    if panel.has_sdf() {
        return Ok(panel.sdf()?.to_vec());
    }
    let Some((beta, gamma)) = cfg.preferences()? else {
        bail!("need --sdf-col, or --growth-col with --beta and --gamma");
    };
    let growth = panel.growth().context("--growth-col is required to build the SDF")?;
    match cfg.utility() {
        Utility::Power => Ok(growth.iter().map(|g| beta * g.powf(-gamma)).collect()),
        Utility::Recursive => {
            let evals = BasisEvaluations::new(basis, panel)?;
            let fp = valuefn::solve_with_evaluations(&evals, growth, beta, gamma, &FixedPointConfig::default())?;
            if !fp.converged {
                bail!("value fixed point did not converge in {} iterations", fp.iterations);
            }
            Ok(valuefn::sdf_from_evaluations(&evals, growth, &fp)?)
        }
    }
}

fn mean_point(states: &DMatrix<f64>) -> Vec<f64> {
    (0..states.ncols()).map(|j| states.column(j).mean()).collect()
}

/// Slice through the sample range of coordinate `j`, others at their means.
fn slice_points(states: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let col = states.column(j);
    let (lo, hi) = (col.min(), col.max());
    let center = mean_point(states);
    DMatrix::from_fn(GRID_POINTS, states.ncols(), |i, c| {
        if c == j {
            lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64
        } else {
            center[c]
        }
    })
}

fn decompose(cfg: &RunConfig, w: &mut Writer) -> Result<Outcome> {
    let ds = dataset(cfg)?;
    let basis = cfg.solve_basis()?.build(ds.panel.basis_data())?;
    let m = sdf_for(cfg, &ds.panel, &basis)?;
    let evals = BasisEvaluations::new(&basis, &ds.panel)?;
    let mats = SieveMatrices::from_evaluations(&basis, &evals, &m)?;
    let sol = pfeig::solve_normalized(&mats)?;
    let series = decomp::decompose(&sol, &basis, &ds.panel, &m)?;
    let association = decomp::pt_association(&series)?;

    let mut scalars = DecompScalars::from_series(&series, association, sol.is_fallback);
    if let Ok(infl) = inference::influence_rho(&sol, &basis, &ds.panel, &m) {
        scalars.se_rho = Some(infl.se_rho());
        scalars.se_y = Some(infl.se_y());
        scalars.se_l = Some(infl.se_l());
    }
    w.json("scalars.json", &scalars)?;
    report::write_series_csv(w.file("series.csv")?, &series, ds.dates.as_deref())?;

    let t: Vec<f64> = (0..series.m.len()).map(|t| t as f64).collect();
    let logs = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<f64>>();
    let (lm, lp, lt) = (logs(&series.m), logs(&series.m_perm), logs(&series.m_trans));
    w.text(
        "series.svg",
        &plot::line_chart("log SDF and its components", "t", &t, &[("log m", &lm), ("log m_perm", &lp), ("log m_trans", &lt)]),
    )?;

    let names = cfg.state_cols.clone().unwrap_or_default();
    for j in 0..ds.states.ncols() {
        let points = slice_points(&ds.states, j);
        let grid = decomp::eigenfunction_grid(&sol, &basis, &points)?;
        report::write_grid_csv(w.file(&format!("grid_{}.csv", names[j]))?, &grid)?;
        let x: Vec<f64> = points.column(j).iter().copied().collect();
        w.text(
            &format!("eigenfunctions_{}.svg", names[j]),
            &plot::line_chart(
                "eigenfunctions",
                &names[j],
                &x,
                &[("phi", &grid.phi), ("phi_star", &grid.phi_star), ("phi phi_star", &grid.density)],
            ),
        )?;
    }
    Ok(Outcome {
        fallback: sol.is_fallback,
        note: sol
            .is_fallback
            .then(|| "no simple positive leading eigenvalue; reported rho = 1, phi = phi* = 1".to_string()),
        ..Default::default()
    })
}

#[derive(Serialize)]
struct ValueReport {
    beta: f64,
    gamma: f64,
    lambda: f64,
    iterations: usize,
    converged: bool,
    final_step: f64,
    basis_dim: usize,
}

fn value(cfg: &RunConfig, w: &mut Writer) -> Result<Outcome> {
    let ds = dataset(cfg)?;
    let Some((beta, gamma)) = cfg.preferences()? else {
        bail!("value needs --beta and --gamma");
    };
    let basis = cfg.solve_basis()?.build(ds.panel.basis_data())?;
    let evals = BasisEvaluations::new(&basis, &ds.panel)?;
    let growth = ds.panel.growth().context("value needs --growth-col")?;
    let fp = valuefn::solve_with_evaluations(&evals, growth, beta, gamma, &FixedPointConfig::default())?;
    w.json(
        "value.json",
        &ValueReport {
            beta,
            gamma,
            lambda: fp.lambda,
            iterations: fp.iterations,
            converged: fp.converged,
            final_step: fp.final_step,
            basis_dim: basis.dim(),
        },
    )?;
    if !fp.converged {
        bail!("value fixed point did not converge in {} iterations", fp.iterations);
    }
    let chi = evals.current.transpose() * &fp.chi_coeffs;
    let m = valuefn::sdf_from_evaluations(&evals, growth, &fp);
    let mut out = csv::Writer::from_writer(w.file("value_series.csv")?);
    out.write_record(["t", "chi", "m"])?;
    for t in 0..chi.len() {
        let mt = m.as_ref().map(|m| report::fmt_f64(m[t])).unwrap_or_default();
        out.write_record([t.to_string(), report::fmt_f64(chi[t]), mt])?;
    }
    out.flush()?;
    Ok(Outcome {
        note: m.err().map(|e| format!("SDF not formed: {e}")),
        ..Default::default()
    })
}

#[derive(Serialize)]
struct CalibrationReport {
    beta_hat: f64,
    gamma_hat: f64,
    criterion_value: f64,
    lambda: f64,
    converged: bool,
    evaluations: usize,
    solve_dim: usize,
    instrument_dim: usize,
}

fn calibrate_cmd(cfg: &RunConfig, w: &mut Writer) -> Result<Outcome> {
    let ds = dataset(cfg)?;
    if !ds.panel.has_returns() || !ds.panel.has_growth() {
        bail!("calibrate needs --growth-col and --return-cols");
    }
    let solve = cfg.solve_basis()?.build(ds.panel.basis_data())?;
    let instruments = cfg.instrument_basis()?.build(ds.panel.basis_data())?;
    let fit = calibrate::estimate_preferences(
        &ds.panel,
        &PreferenceBounds::default(),
        &instruments,
        &solve,
        &OptimizerConfig::default(),
    )?;
    w.json(
        "calibrate.json",
        &CalibrationReport {
            beta_hat: fit.beta_hat,
            gamma_hat: fit.gamma_hat,
            criterion_value: fit.criterion_value,
            lambda: fit.inner_solution.lambda,
            converged: fit.converged,
            evaluations: fit.optimizer_trace.len(),
            solve_dim: solve.dim(),
            instrument_dim: instruments.dim(),
        },
    )?;
    let mut out = csv::Writer::from_writer(w.file("optimizer_trace.csv")?);
    out.write_record(["stage", "beta", "gamma", "criterion"])?;
    for e in &fit.optimizer_trace {
        let stage = serde_json::to_value(e.stage)?.as_str().unwrap_or_default().to_string();
        out.write_record([stage, report::fmt_f64(e.beta), report::fmt_f64(e.gamma), report::fmt_f64(e.value)])?;
    }
    out.flush()?;
    Ok(Outcome {
        note: (!fit.converged).then(|| "simplex stopped at the evaluation cap".to_string()),
        ..Default::default()
    })
}

fn fixed_statistics(cfg: &RunConfig, panel: &StatePanel) -> sdfspectral::Result<Vec<f64>> {
    let spec = cfg
        .solve_basis()
        .map_err(|e| sdfspectral::Error::InvalidArgument(e.to_string()))?;
    let basis = spec.build(panel.basis_data())?;
    let m = sdf_for(cfg, panel, &basis).map_err(|e| sdfspectral::Error::InvalidArgument(e.to_string()))?;
    let evals = BasisEvaluations::new(&basis, panel)?;
    let sol = pfeig::solve_normalized(&SieveMatrices::from_evaluations(&basis, &evals, &m)?)?;
    let s = decomp::decompose(&sol, &basis, panel, &m)?;
    Ok(vec![s.rho, s.yield_y, s.entropy_l, s.horizon_dependence])
}

fn bootstrap(cfg: &RunConfig, w: &mut Writer) -> Result<Outcome> {
    let ds = dataset(cfg)?;
    let b = cfg.boot_b.unwrap_or(200);
    let block = cfg.block.unwrap_or(6.0);
    let level = cfg.level.unwrap_or(0.90);
    let seed = cfg.seed();
    let estimate = cfg.preferences()?.is_none() && !ds.panel.has_sdf();
    let (names, result): (&[&str], _) = if estimate {
        if !ds.panel.has_returns() {
            bail!("bootstrap without fixed preferences estimates them; give --return-cols");
        }
        let solve = cfg.solve_basis()?;
        let instruments = cfg.instrument_basis()?;
        let bounds = PreferenceBounds::default();
        let opt = OptimizerConfig::default();
        let stat = |p: &StatePanel| calibrate::calibrated_statistics(p, &bounds, &instruments, &solve, &opt);
        (&calibrate::CALIBRATED_STATISTICS, inference::bootstrap_ci(stat, &ds.panel, b, block, level, seed)?)
    } else {
        let stat = |p: &StatePanel| fixed_statistics(cfg, p);
        (&FIXED_STATISTICS, inference::bootstrap_ci(stat, &ds.panel, b, block, level, seed)?)
    };
    report::write_bootstrap_csv(w.file("bootstrap.csv")?, names, &result)?;
    let mut out = csv::Writer::from_writer(w.file("bootstrap_replicates.csv")?);
    out.write_record(names)?;
    let rows = result.replicates.first().map(Vec::len).unwrap_or(0);
    for r in 0..rows {
        out.write_record(result.replicates.iter().map(|col| report::fmt_f64(col[r])))?;
    }
    out.flush()?;
    Ok(Outcome {
        note: (result.discarded > 0).then(|| format!("{} of {} replicates discarded", result.discarded, result.requested)),
        ..Default::default()
    })
}

fn mc(cfg: &RunConfig, w: &mut Writer) -> Result<Outcome> {
    let recursive = cfg.utility() == Utility::Recursive;
    let mut design = McDesign::baseline(recursive, cfg.solve_basis()?, cfg.reps.unwrap_or(2000), cfg.seed());
    if let Some(sizes) = &cfg.sizes {
        design.sample_sizes = sizes.clone();
    }
    if let Some((beta, gamma)) = cfg.preferences()? {
        design.preferences = if recursive {
            sdfspectral::SdfSpec::Recursive { beta, gamma }
        } else {
            sdfspectral::SdfSpec::Power { beta, gamma }
        };
    }
    let table = simkit::run_mc_study(&design)?;
    report::write_mc_csv(w.file("mc_table.csv")?, &table)?;
    w.json("mc_metadata.json", &report::McMetadata::from_table(&table))?;
    let flagged = table.rows.iter().any(|r| r.flagged);
    Ok(Outcome {
        fallback: flagged,
        note: flagged.then(|| format!("fallback share above {:.0}% in some cells", 100.0 * simkit::FALLBACK_FLAG_RATE)),
        ..Default::default()
    })
}
