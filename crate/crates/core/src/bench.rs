//! Monte Carlo study runner: simulate, estimate under correct and transformed
//! covariates, and aggregate bias, RMSE and interval coverage.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::config;
use crate::crossfit::{assign_folds, NuisanceEstimates, DEFAULT_NFOLDS};
use crate::error::{Error, Result};
use crate::estimator::{
    popsize, Method, PairSelection, PopsizeOptions, DEFAULT_ALPHA, DEFAULT_MARGIN,
};
use crate::learners::{Hyper, LearnerKind, ListPair};
use crate::seed;
use crate::simulator::{calibrate_ep, simulate, DgpForm, DgpSpec};
use crate::svg;

/// Largest fraction of failed replications tolerated per metrics row.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// Which covariates the learners see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    /// The covariates the capture model was generated from.
    CorX,
    /// Transformed covariates `exp(x/3) - 1`.
    MisX,
    /// No learning: the true nuisances are injected.
    Oracle,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::CorX => "CorX",
            Arm::MisX => "MisX",
            Arm::Oracle => "Oracle",
        })
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CorX" | "corx" => Ok(Arm::CorX),
            "MisX" | "misx" => Ok(Arm::MisX),
            "Oracle" | "oracle" => Ok(Arm::Oracle),
            other => Err(Error::invalid(format!("unknown arm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub reps: usize,
    /// Population template; its `seed` is replaced per replication.
    pub dgp: DgpSpec,
    /// When set, `dgp.ep` is recalibrated to this capture probability.
    pub target_psi: Option<f64>,
    pub learners: Vec<LearnerKind>,
    pub methods: Vec<Method>,
    pub arms: Vec<Arm>,
    pub nfolds: usize,
    pub margin: f64,
    pub alpha: f64,
    pub seed: u64,
    pub hyper: Hyper,
}

impl BenchConfig {
    pub fn new(dgp: DgpSpec, reps: usize) -> Self {
        BenchConfig {
            reps,
            dgp,
            target_psi: None,
            learners: vec![LearnerKind::RangerLogit],
            methods: vec![Method::DR, Method::PI],
            arms: vec![Arm::CorX, Arm::MisX],
            nfolds: DEFAULT_NFOLDS,
            margin: DEFAULT_MARGIN,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            hyper: Hyper::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.arms.is_empty() {
            return Err(Error::invalid("at least one arm is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if self.learners.is_empty() && self.arms.iter().any(|a| *a != Arm::Oracle) {
            return Err(Error::invalid("at least one learner is required"));
        }
        self.dgp.validate()
    }

    /// Parse a `key=value` benchmark config.
    ///
    /// Keys: `n_true`, `reps`, `k_lists`, `l`, `categorical`, `form`
    /// (`nonlinear` or `linear`), `ep` or `target_psi`, `learners`,
    /// `sl_library`, `methods`, `arms`, `nfolds`, `margin`, `alpha`, `seed`,
    /// `n_trees`.
    pub fn from_config(text: &str) -> Result<Self> {
        let entries = config::parse(text)?;
        let get = |key: &str| entries.iter().find(|e| e.key == key);
        let need = |key: &str| {
            get(key).ok_or_else(|| Error::Config {
                line: 0,
                message: format!("missing key {key}"),
            })
        };
        let form = match get("form") {
            None => DgpForm::Nonlinear,
            Some(e) => match e.value.as_str() {
                "nonlinear" => DgpForm::Nonlinear,
                "linear" => DgpForm::Linear,
                _ => return Err(e.error("form must be nonlinear or linear")),
            },
        };
        let target_psi = get("target_psi").map(|e| e.parse::<f64>()).transpose()?;
        let ep = match (get("ep"), target_psi) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    line: get("ep").map_or(0, |e| e.line),
                    message: "give either ep or target_psi, not both".into(),
                })
            }
            (Some(e), None) => e.parse()?,
            (None, Some(_)) => 0.0,
            (None, None) => {
                return Err(Error::Config {
                    line: 0,
                    message: "missing key ep or target_psi".into(),
                })
            }
        };
        let seed: u64 = get("seed").map(|e| e.parse()).transpose()?.unwrap_or(0);
        let mut dgp = DgpSpec::with_form(
            form,
            need("n_true")?.parse()?,
            get("k_lists").map(|e| e.parse()).transpose()?.unwrap_or(2),
            get("l").map(|e| e.parse()).transpose()?.unwrap_or(1),
            ep,
            seed,
        );
        if let Some(e) = get("categorical") {
            dgp.categorical = e.parse_bool()?;
        }
        let mut cfg = BenchConfig::new(dgp, need("reps")?.parse()?);
        cfg.seed = seed;
        cfg.target_psi = target_psi;
        let sl_library = get("sl_library")
            .map(|e| LearnerKind::parse_list(&e.value, None).map_err(|err| e.context(err)))
            .transpose()?;
        if let Some(e) = get("learners") {
            cfg.learners = LearnerKind::parse_list(&e.value, sl_library.as_deref())
                .map_err(|err| e.context(err))?;
        }
        if let Some(e) = get("methods") {
            cfg.methods = e
                .list()
                .iter()
                .map(|m| m.parse())
                .collect::<Result<_>>()
                .map_err(|err| e.context(err))?;
        }
        if let Some(e) = get("arms") {
            cfg.arms = e
                .list()
                .iter()
                .map(|a| a.parse())
                .collect::<Result<_>>()
                .map_err(|err| e.context(err))?;
        }
        if let Some(e) = get("nfolds") {
            cfg.nfolds = e.parse()?;
        }
        if let Some(e) = get("margin") {
            cfg.margin = e.parse()?;
        }
        if let Some(e) = get("alpha") {
            cfg.alpha = e.parse()?;
        }
        if let Some(e) = get("n_trees") {
            cfg.hyper.n_trees = e.parse()?;
        }
        const KEYS: [&str; 16] = [
            "n_true",
            "reps",
            "k_lists",
            "l",
            "categorical",
            "form",
            "ep",
            "target_psi",
            "learners",
            "sl_library",
            "methods",
            "arms",
            "nfolds",
            "margin",
            "alpha",
            "seed",
        ];
        if let Some(e) = entries
            .iter()
            .find(|e| !KEYS.contains(&e.key.as_str()) && e.key != "n_trees")
        {
            return Err(e.error("unknown key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The (arm, learner, method) cells reported, in output order.
    pub fn cells(&self) -> Vec<(Arm, String, Method)> {
        let mut out = Vec::new();
        for &arm in &self.arms {
            let names: Vec<String> = match arm {
                Arm::Oracle => vec!["oracle".into()],
                _ => self.learners.iter().map(|k| k.tag().to_owned()).collect(),
            };
            for name in names {
                for &m in &self.methods {
                    out.push((arm, name.clone(), m));
                }
            }
        }
        out
    }

    /// Population template with the calibrated intercept, if requested.
    pub fn resolved_dgp(&self) -> Result<DgpSpec> {
        let mut dgp = self.dgp.clone();
        if let Some(target) = self.target_psi {
            dgp.ep = calibrate_ep(&self.dgp, target, 0.005)?.ep;
        }
        Ok(dgp)
    }
}

/// Point estimate and interval hit for one cell in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDraw {
    pub n_hat: f64,
    pub covered: bool,
}

/// Results of one replication, aligned with [`BenchConfig::cells`]. `None`
/// marks a failed or degenerate estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub rep: usize,
    pub n_true: usize,
    pub cells: Vec<Option<CellDraw>>,
}

/// Run replication `rep` in isolation. `dgp` is the resolved template.
pub fn run_replication(cfg: &BenchConfig, dgp: &DgpSpec, rep: usize) -> RepOutcome {
    let cells = cfg.cells();
    let mut out = vec![None; cells.len()];
    let rep_seed = seed::derive(cfg.seed, &[rep as u64]);
    let spec = DgpSpec {
        seed: seed::derive(rep_seed, &[seed::label("population")]),
        ..dgp.clone()
    };
    let n_true = spec.n_true;
    let Ok(sim) = simulate(&spec) else {
        return RepOutcome {
            rep,
            n_true,
            cells: out,
        };
    };
    let pair = ListPair { j: 1, k: 2 };
    let truth = n_true as f64;
    for &arm in &cfg.arms {
        let mut opts = PopsizeOptions {
            kinds: cfg.learners.clone(),
            nfolds: cfg.nfolds,
            margin: cfg.margin,
            alpha: cfg.alpha,
            pairs: PairSelection::One(pair),
            methods: cfg.methods.clone(),
            injected: None,
            seed: seed::derive(rep_seed, &[seed::label("fit")]),
            hyper: cfg.hyper.clone(),
        };
        let data = match arm {
            Arm::CorX => &sim.data,
            Arm::MisX => &sim.data_xstar,
            Arm::Oracle => {
                let folds = match assign_folds(sim.data.n_obs(), cfg.nfolds, opts.seed) {
                    Ok(f) => f,
                    Err(_) => continue,
                };
                opts.injected = Some(NuisanceEstimates {
                    pair,
                    model_names: vec!["oracle".into()],
                    estimates: vec![sim.true_nuisances(pair)],
                    folds,
                });
                &sim.data
            }
        };
        let Ok(table) = popsize(data, &opts) else {
            continue;
        };
        for (slot, (cell_arm, name, method)) in out.iter_mut().zip(&cells) {
            if *cell_arm != arm {
                continue;
            }
            if let Some(row) = table
                .rows
                .iter()
                .find(|r| &r.model == name && r.method == *method && !r.degenerate)
            {
                *slot = Some(CellDraw {
                    n_hat: row.n,
                    covered: row.cin_l <= truth && truth <= row.cin_u,
                });
            }
        }
    }
    RepOutcome {
        rep,
        n_true,
        cells: out,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub arm: Arm,
    pub learner: String,
    pub method: Method,
    /// Mean of `n_hat - n_true`.
    pub mean_bias: f64,
    pub mean_abs_bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub reps_used: usize,
    pub reps_failed: usize,
}

/// Metrics from per-replication draws, in rep order.
pub fn aggregate(cfg: &BenchConfig, outcomes: &[RepOutcome]) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for (c, (arm, learner, method)) in cfg.cells().into_iter().enumerate() {
        let draws: Vec<(f64, bool)> = outcomes
            .iter()
            .filter_map(|o| o.cells[c].map(|d| (d.n_hat - o.n_true as f64, d.covered)))
            .collect();
        let failed = outcomes.len() - draws.len();
        if failed as f64 > MAX_FAILURE_RATE * outcomes.len() as f64 {
            return Err(Error::Degenerate(format!(
                "{failed} of {} replications failed for {arm}/{learner}/{method}",
                outcomes.len()
            )));
        }
        let used = draws.len() as f64;
        rows.push(MetricsRow {
            arm,
            learner,
            method,
            mean_bias: draws.iter().map(|d| d.0).sum::<f64>() / used,
            mean_abs_bias: draws.iter().map(|d| d.0.abs()).sum::<f64>() / used,
            rmse: (draws.iter().map(|d| d.0 * d.0).sum::<f64>() / used).sqrt(),
            coverage: draws.iter().filter(|d| d.1).count() as f64 / used,
            reps_used: draws.len(),
            reps_failed: failed,
        });
    }
    Ok(rows)
}

/// Every replication, run in parallel and returned in rep order.
pub fn run_replications(cfg: &BenchConfig) -> Result<Vec<RepOutcome>> {
    cfg.validate()?;
    let dgp = cfg.resolved_dgp()?;
    Ok((0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replication(cfg, &dgp, r))
        .collect())
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<MetricsRow>> {
    aggregate(cfg, &run_replications(cfg)?)
}

const HEADER: [&str; 8] = [
    "arm",
    "learner",
    "method",
    "mean_bias",
    "mean_abs_bias",
    "rmse",
    "coverage",
    "reps_used",
];

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.arm.to_string(),
            r.learner.clone(),
            r.method.to_string(),
            r.mean_bias.to_string(),
            r.mean_abs_bias.to_string(),
            r.rmse.to_string(),
            r.coverage.to_string(),
            r.reps_used.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

/// Bar-chart report of `rows`: bias, RMSE and coverage panels, one row of
/// panels per arm.
pub fn report_svg(rows: &[MetricsRow], alpha: f64) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("no metrics rows to report"));
    }
    if let Some(r) = rows.iter().find(|r| {
        ![r.mean_bias, r.mean_abs_bias, r.rmse, r.coverage]
            .iter()
            .all(|v| v.is_finite())
    }) {
        return Err(Error::invalid(format!(
            "non-finite metric for {}/{}/{}",
            r.arm, r.learner, r.method
        )));
    }
    let arms: Vec<String> = rows.iter().map(|r| r.arm.to_string()).collect();
    let bars = |value: fn(&MetricsRow) -> f64| -> Vec<svg::Bar<'_>> {
        rows.iter()
            .zip(&arms)
            .map(|(r, arm)| svg::Bar {
                facet: arm,
                group: r.learner.clone(),
                series: match r.method {
                    Method::DR => "DR",
                    Method::PI => "PI",
                },
                value: value(r),
            })
            .collect()
    };
    Ok(svg::bar_grid(
        &["bias", "rmse", "coverage"],
        &[
            bars(|r| r.mean_bias),
            bars(|r| r.rmse),
            bars(|r| r.coverage),
        ],
        &[Some(0.0), None, Some(1.0 - alpha)],
    ))
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Write `metrics.csv` and `report.svg` into `out_dir`, creating it if needed.
pub fn emit_report(
    rows: &[MetricsRow],
    alpha: f64,
    out_dir: impl AsRef<Path>,
) -> Result<ReportFiles> {
    let dir = out_dir.as_ref();
    let svg_text = report_svg(rows, alpha)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("metrics.csv");
    let svg_path = dir.join("report.svg");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_metrics_csv(rows, file)?;
    std::fs::write(&svg_path, svg_text).map_err(|e| Error::io(&svg_path, e))?;
    Ok(ReportFiles {
        csv: csv_path,
        svg: svg_path,
    })
}
