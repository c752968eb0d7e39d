//! Plug-in and doubly robust estimates of the capture probability and the
//! population size, with closed-form variance and Wald intervals.
//!
//! For a list pair with nuisances `q = (q1, q2, q12)`:
//!
//! ```text
//! gamma(x) = q12 / (q1 q2)
//! phi_i    = (1 / gamma(x_i)) * (y1/q1 + y2/q2 - y1 y2 / q12)
//! psi_DR   = 1 / mean(phi)
//! psi_PI   = N / sum_i q1 q2 / q12
//! var(n)   = N var(phi) + N (1 - psi) / psi^2
//! ```
//!
//! and `n = N / psi` for both methods.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::crossfit::{assign_folds, crossfit_nuisances, NuisanceEstimates, DEFAULT_NFOLDS};
use crate::dataset::{Covariate, Dataset};
use crate::error::{Error, Result};
use crate::learners::{Hyper, LearnerKind, ListPair, QTriple};
use crate::normal::z_two_sided;
use crate::seed;

pub const DEFAULT_MARGIN: f64 = 0.005;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Doubly robust, influence-function based.
    DR,
    /// Plug-in.
    PI,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::DR => "DR",
            Method::PI => "PI",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DR" | "dr" => Ok(Method::DR),
            "PI" | "pi" => Ok(Method::PI),
            "TMLE" | "tmle" => Err(Error::NotImplemented("TMLE")),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

pub fn gamma(q: QTriple) -> f64 {
    q.q12 / (q.q1 * q.q2)
}

/// Uncentered efficient influence function value for one row.
pub fn phi(y1: u8, y2: u8, q: QTriple) -> f64 {
    let (y1, y2) = (f64::from(y1), f64::from(y2));
    (y1 / q.q1 + y2 / q.q2 - y1 * y2 / q.q12) / gamma(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceValues {
    pub phi: Vec<f64>,
    pub pair: ListPair,
    pub model: String,
}

impl InfluenceValues {
    pub fn compute(
        data: &Dataset,
        pair: ListPair,
        model: &str,
        triples: &[QTriple],
    ) -> Result<Self> {
        if triples.len() != data.n_obs() {
            return Err(Error::invalid(format!(
                "{} nuisance rows for {} observations",
                triples.len(),
                data.n_obs()
            )));
        }
        let phi = triples
            .iter()
            .enumerate()
            .map(|(i, &q)| phi(data.capture(i, pair.j - 1), data.capture(i, pair.k - 1), q))
            .collect();
        Ok(InfluenceValues {
            phi,
            pair,
            model: model.to_owned(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.phi.iter().sum::<f64>() / self.phi.len() as f64
    }
}

/// A capture probability clamped into `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEstimate {
    pub psi: f64,
    /// Set when the raw estimate was undefined (non-positive mean of phi).
    pub degenerate: bool,
}

pub fn estimate_psi_dr(phis: &InfluenceValues) -> PsiEstimate {
    let mean = phis.mean();
    if !(mean > 0.0) {
        return PsiEstimate {
            psi: 1.0,
            degenerate: true,
        };
    }
    PsiEstimate {
        psi: (1.0 / mean).min(1.0),
        degenerate: false,
    }
}

pub fn estimate_psi_pi(qs: &[QTriple]) -> f64 {
    let inv_gamma_sum: f64 = qs.iter().map(|&q| 1.0 / gamma(q)).sum();
    (qs.len() as f64 / inv_gamma_sum).min(1.0)
}

/// Standard deviation of phi (unbiased) and of the population size estimate.
pub fn variance_n(phis: &InfluenceValues, psi: f64, n_obs: usize) -> Result<(f64, f64)> {
    if n_obs < 2 || phis.phi.len() < 2 {
        return Err(Error::invalid("variance needs at least two observations"));
    }
    if !(psi > 0.0 && psi <= 1.0) {
        return Err(Error::invalid(format!("psi must lie in (0, 1], got {psi}")));
    }
    let mean = phis.mean();
    let m = phis.phi.len() as f64;
    let var = phis.phi.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let sigma = var.sqrt();
    Ok((sigma, sigman_from(sigma, psi, n_obs)))
}

pub fn sigman_from(sigma: f64, psi: f64, n_obs: usize) -> f64 {
    let n = n_obs as f64;
    (n * sigma * sigma + n * (1.0 - psi) / (psi * psi)).sqrt()
}

/// Two-sided `(1 - alpha)` Wald interval `n -/+ z * sigman`.
pub fn confidence_interval(n: f64, sigman: f64, alpha: f64) -> (f64, f64) {
    let half = z_two_sided(alpha) * sigman;
    (n - half, n + half)
}

/// Sample analogue of the second-order remainder of the DR estimator, given
/// the true and the estimated nuisances on the same rows.
pub fn remainder_r2(truth: &[QTriple], est: &[QTriple]) -> Result<f64> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(Error::invalid(format!(
            "remainder needs equal non-empty inputs, got {} and {}",
            truth.len(),
            est.len()
        )));
    }
    let total: f64 = truth
        .iter()
        .zip(est)
        .map(|(&t, &e)| {
            ((t.q1 - e.q1) * (e.q2 - t.q2) + (t.q12 - e.q12) * (1.0 / gamma(t) - 1.0 / gamma(e)))
                / e.q12
        })
        .sum();
    Ok(total / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub listpair: ListPair,
    pub model: String,
    pub method: Method,
    pub psi: f64,
    pub sigma: f64,
    pub n: f64,
    pub sigman: f64,
    pub cin_l: f64,
    pub cin_u: f64,
    pub condvar: Option<String>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<EstimateRow>,
    pub alpha: f64,
    pub n_obs: usize,
    pub warnings: Vec<String>,
}

/// Which list pairs to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSelection {
    One(ListPair),
    All,
}

#[derive(Debug, Clone)]
pub struct PopsizeOptions {
    pub kinds: Vec<LearnerKind>,
    pub nfolds: usize,
    pub margin: f64,
    pub alpha: f64,
    pub pairs: PairSelection,
    pub methods: Vec<Method>,
    /// Externally estimated nuisances for a single pair.
    pub injected: Option<NuisanceEstimates>,
    pub seed: u64,
    pub hyper: Hyper,
}

impl Default for PopsizeOptions {
    fn default() -> Self {
        PopsizeOptions {
            kinds: vec![LearnerKind::RangerLogit],
            nfolds: DEFAULT_NFOLDS,
            margin: DEFAULT_MARGIN,
            alpha: DEFAULT_ALPHA,
            pairs: PairSelection::One(ListPair { j: 1, k: 2 }),
            methods: vec![Method::DR],
            injected: None,
            seed: 0,
            hyper: Hyper::default(),
        }
    }
}

/// Estimate rows for one (pair, model) from row-aligned nuisances.
pub fn estimate_rows(
    data: &Dataset,
    pair: ListPair,
    model: &str,
    triples: &[QTriple],
    methods: &[Method],
    alpha: f64,
) -> Result<Vec<EstimateRow>> {
    let phis = InfluenceValues::compute(data, pair, model, triples)?;
    let n_obs = data.n_obs();
    let dr = estimate_psi_dr(&phis);
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let (psi, degenerate) = match method {
            Method::DR => (dr.psi, dr.degenerate),
            Method::PI => (estimate_psi_pi(triples), false),
        };
        let (sigma, sigman) = variance_n(&phis, psi, n_obs)?;
        let n = n_obs as f64 / psi;
        let (lo, hi) = confidence_interval(n, sigman, alpha);
        rows.push(EstimateRow {
            listpair: pair,
            model: model.to_owned(),
            method,
            psi,
            sigma,
            n,
            sigman,
            cin_l: lo.max(n_obs as f64),
            cin_u: hi,
            condvar: None,
            degenerate,
        });
    }
    Ok(rows)
}

fn validate(opts: &PopsizeOptions) -> Result<()> {
    if opts.methods.is_empty() {
        return Err(Error::invalid("no estimation method requested"));
    }
    if !(opts.margin > 0.0 && opts.margin < 0.5) {
        return Err(Error::invalid(format!(
            "margin must lie in (0, 0.5), got {}",
            opts.margin
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    Ok(())
}

fn sort_rows(rows: &mut [EstimateRow]) {
    rows.sort_by(|a, b| {
        (&a.condvar, a.listpair, &a.model, a.method)
            .cmp(&(&b.condvar, b.listpair, &b.model, b.method))
    });
}

/// Estimate population size for the selected list pairs and models. Also
/// returns the nuisance estimates used, one entry per pair.
pub fn popsize_detailed(
    data: &Dataset,
    opts: &PopsizeOptions,
) -> Result<(ResultTable, Vec<NuisanceEstimates>)> {
    validate(opts)?;
    let n_obs = data.n_obs();
    let nuisances = match &opts.injected {
        Some(inj) => {
            let wanted = match opts.pairs {
                PairSelection::One(p) => p,
                PairSelection::All => {
                    return Err(Error::invalid(
                        "injected nuisances cover a single list pair",
                    ))
                }
            };
            if inj.pair != wanted {
                return Err(Error::invalid(format!(
                    "injected nuisances are for pair {}, requested {}",
                    inj.pair.label(),
                    wanted.label()
                )));
            }
            ListPair::new(wanted.j, wanted.k, data.n_lists())?;
            if inj.n_rows() != n_obs || inj.folds.len() != n_obs {
                return Err(Error::data(format!(
                    "injected nuisances have {} rows and {} fold labels for {n_obs} observations",
                    inj.n_rows(),
                    inj.folds.len()
                )));
            }
            let clamped = NuisanceEstimates {
                estimates: inj
                    .estimates
                    .iter()
                    .map(|e| e.iter().map(|q| q.clamp(opts.margin)).collect())
                    .collect(),
                ..inj.clone()
            };
            vec![clamped]
        }
        None => {
            let pairs = match opts.pairs {
                PairSelection::One(p) => vec![ListPair::new(p.j, p.k, data.n_lists())?],
                PairSelection::All => ListPair::all(data.n_lists()),
            };
            let folds = assign_folds(
                n_obs,
                opts.nfolds,
                seed::derive(opts.seed, &[seed::label("folds")]),
            )?;
            pairs
                .into_iter()
                .map(|pair| {
                    crossfit_nuisances(
                        data,
                        pair,
                        &opts.kinds,
                        &folds,
                        opts.margin,
                        &opts.hyper,
                        opts.seed,
                    )
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut rows = Vec::new();
    for nuis in &nuisances {
        for (model, triples) in nuis.model_names.iter().zip(&nuis.estimates) {
            rows.extend(estimate_rows(
                data,
                nuis.pair,
                model,
                triples,
                &opts.methods,
                opts.alpha,
            )?);
        }
    }
    sort_rows(&mut rows);
    Ok((
        ResultTable {
            rows,
            alpha: opts.alpha,
            n_obs,
            warnings: Vec::new(),
        },
        nuisances,
    ))
}

pub fn popsize(data: &Dataset, opts: &PopsizeOptions) -> Result<ResultTable> {
    popsize_detailed(data, opts).map(|(t, _)| t)
}

/// Estimate separately within each level of the categorical covariate
/// `condvar`. Nuisances are refitted inside every level, without `condvar`
/// as a feature. Levels too small to cross-fit are skipped with a warning.
pub fn popsize_cond(data: &Dataset, condvar: &str, opts: &PopsizeOptions) -> Result<ResultTable> {
    validate(opts)?;
    if opts.injected.is_some() {
        return Err(Error::invalid(
            "injected nuisances are not supported for conditional estimates",
        ));
    }
    let values = match data.covariate(condvar) {
        None => return Err(Error::data(format!("no covariate named {condvar}"))),
        Some(Covariate::Numeric { .. }) => {
            return Err(Error::data(format!(
                "{condvar} is numeric; discretize it into a categorical column first"
            )))
        }
        Some(Covariate::Categorical { values, .. }) => values,
    };
    let mut levels = values.clone();
    levels.sort();
    levels.dedup();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for level in &levels {
        let idx: Vec<usize> = (0..data.n_obs()).filter(|&i| &values[i] == level).collect();
        if idx.len() < opts.nfolds.max(2) {
            warnings.push(format!(
                "level {level} of {condvar} skipped: {} rows, need at least {}",
                idx.len(),
                opts.nfolds.max(2)
            ));
            continue;
        }
        let subset = data.select_rows(&idx).without_covariate(condvar);
        let table = popsize(&subset, opts)?;
        rows.extend(table.rows.into_iter().map(|r| EstimateRow {
            condvar: Some(level.clone()),
            ..r
        }));
    }
    sort_rows(&mut rows);
    Ok(ResultTable {
        rows,
        alpha: opts.alpha,
        n_obs: data.n_obs(),
        warnings,
    })
}

const HEADER: [&str; 9] = [
    "listpair", "model", "method", "psi", "sigma", "n", "sigman", "cin.l", "cin.u",
];

impl ResultTable {
    pub fn has_condvar(&self) -> bool {
        self.rows.iter().any(|r| r.condvar.is_some())
    }

    /// Full-precision CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let cond = self.has_condvar();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = HEADER.to_vec();
        if cond {
            header.push("condvar");
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.listpair.label(),
                r.model.clone(),
                r.method.to_string(),
                r.psi.to_string(),
                r.sigma.to_string(),
                r.n.to_string(),
                r.sigman.to_string(),
                r.cin_l.to_string(),
                r.cin_u.to_string(),
            ];
            if cond {
                rec.push(r.condvar.clone().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Read a table written by [`ResultTable::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let cond = match header.len() {
            9 => false,
            10 if header[9] == "condvar" => true,
            _ => return Err(Error::data(format!("unexpected result header {header:?}"))),
        };
        if header[..9] != HEADER {
            return Err(Error::data(format!("unexpected result header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                rec[c].parse().map_err(|_| {
                    Error::data(format!(
                        "result row {}: bad {} value {:?}",
                        i + 1,
                        HEADER[c],
                        &rec[c]
                    ))
                })
            };
            rows.push(EstimateRow {
                listpair: rec[0].parse()?,
                model: rec[1].to_owned(),
                method: rec[2].parse()?,
                psi: num(3)?,
                sigma: num(4)?,
                n: num(5)?,
                sigman: num(6)?,
                cin_l: num(7)?,
                cin_u: num(8)?,
                condvar: cond.then(|| rec[9].to_owned()),
                degenerate: false,
            });
        }
        let n_obs = rows
            .iter()
            .map(|r| (r.n * r.psi).round() as usize)
            .max()
            .unwrap_or(0);
        Ok(ResultTable {
            rows,
            alpha: DEFAULT_ALPHA,
            n_obs,
            warnings: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_csv(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
    }
}

impl fmt::Display for ResultTable {
    /// Rounded, column-aligned listing: psi, sigma and sigman to three
    /// decimals; n and the interval endpoints to integers.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cond = self.has_condvar();
        let mut cells: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut header: Vec<String> = HEADER.iter().map(|s| s.to_string()).collect();
        if cond {
            header.push("condvar".into());
        }
        cells.push(header);
        for r in &self.rows {
            let mut line = vec![
                r.listpair.label(),
                r.model.clone(),
                r.method.to_string(),
                format!("{:.3}", r.psi),
                format!("{:.3}", r.sigma),
                format!("{:.0}", r.n),
                format!("{:.3}", r.sigman),
                format!("{:.0}", r.cin_l),
                format!("{:.0}", r.cin_u),
            ];
            if cond {
                line.push(r.condvar.clone().unwrap_or_default());
            }
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}"))
                .collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
