//! Synthetic closed populations with known capture probabilities.
//!
//! Each of `n_true` individuals gets covariates `x_1..x_l ~ Uniform(0, 6)`
//! (plus an optional three-level `catcov` column) and is captured by list `k`
//! independently with probability
//!
//! ```text
//! pi_k(x) = expit(ep + f_k(x)),
//! f_k(x)  = sum_j a_kj x_j + b_kj sin(x_j) + c_kj (x_j/3 - 1)^2 + offset_k(level)
//! ```
//!
//! so any two lists are independent given the covariates. Only rows captured
//! at least once are returned. The transformed data replaces every `x_j` by
//! `exp(x_j / 3) - 1`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::config;
use crate::dataset::{Covariate, Dataset};
use crate::error::{Error, Result};
use crate::learners::{expit, ListPair, QTriple};
use crate::seed;

pub const COVARIATE_MAX: f64 = 6.0;
pub const LEVELS: [&str; 3] = ["a", "b", "c"];
pub const CALIBRATION_DRAWS: usize = 200_000;

/// `(a, b, c)` coefficients of one covariate's contribution to a list.
pub type Coef = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgpForm {
    /// Linear, sine and quadratic terms.
    Nonlinear,
    /// Linear terms only, so `logit pi_k` is linear in `x`.
    Linear,
}

/// Default nonlinear coefficients, indexed `[list][covariate % 3]`.
const NONLINEAR: [[Coef; 3]; 3] = [
    [[0.30, 0.80, 0.30], [0.25, -0.50, 0.60], [0.20, 0.40, 0.90]],
    [[0.20, -0.60, 1.20], [0.30, 0.50, 0.30], [0.25, -0.40, 0.60]],
    [[0.25, 0.50, 0.75], [0.20, -0.70, 0.90], [0.30, 0.60, 0.30]],
];

const LINEAR_SLOPES: [f64; 3] = [0.35, 0.25, 0.30];

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub n_true: usize,
    pub k_lists: usize,
    pub l: usize,
    pub categorical: bool,
    pub ep: f64,
    /// `coefficients[list][covariate]`.
    pub coefficients: Vec<Vec<Coef>>,
    /// Additive offset of each categorical level.
    pub level_offsets: [f64; 3],
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(n_true: usize, k_lists: usize, l: usize, ep: f64, seed: u64) -> Self {
        Self::with_form(DgpForm::Nonlinear, n_true, k_lists, l, ep, seed)
    }

    pub fn with_form(
        form: DgpForm,
        n_true: usize,
        k_lists: usize,
        l: usize,
        ep: f64,
        seed: u64,
    ) -> Self {
        let coefficients = (0..k_lists)
            .map(|k| {
                (0..l)
                    .map(|j| match form {
                        DgpForm::Nonlinear => NONLINEAR[k % 3][j % 3],
                        DgpForm::Linear => [LINEAR_SLOPES[k % 3], 0.0, 0.0],
                    })
                    .collect()
            })
            .collect();
        DgpSpec {
            n_true,
            k_lists,
            l,
            categorical: false,
            ep,
            coefficients,
            level_offsets: [0.0, 0.3, -0.3],
            seed,
        }
    }

    pub fn with_categorical(mut self, on: bool) -> Self {
        self.categorical = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_true == 0 {
            return Err(Error::invalid("n_true must be at least 1"));
        }
        if !(2..=3).contains(&self.k_lists) {
            return Err(Error::invalid(format!(
                "K must be 2 or 3, got {}",
                self.k_lists
            )));
        }
        if self.l == 0 {
            return Err(Error::invalid(
                "need at least one continuous covariate (l >= 1)",
            ));
        }
        if !self.ep.is_finite() {
            return Err(Error::invalid("ep must be finite"));
        }
        if self.coefficients.len() != self.k_lists
            || self.coefficients.iter().any(|c| c.len() != self.l)
        {
            return Err(Error::invalid("coefficient table does not match K and l"));
        }
        Ok(())
    }

    /// Length of the covariate vector accepted by the capture functions:
    /// `l` continuous values, then the level index when categorical.
    pub fn covariate_dim(&self) -> usize {
        self.l + usize::from(self.categorical)
    }

    /// `f_k(x)` for 0-based list `list`, without the intercept `ep`.
    fn shape(&self, list: usize, x: &[f64]) -> f64 {
        let mut s: f64 = self.coefficients[list]
            .iter()
            .zip(x)
            .map(|(&[a, b, c], &v)| a * v + b * v.sin() + c * (v / 3.0 - 1.0).powi(2))
            .sum();
        if self.categorical {
            s += self.level_offsets[x[self.l] as usize];
        }
        s
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.covariate_dim() {
            return Err(Error::invalid(format!(
                "covariate vector has {} entries, expected {}",
                x.len(),
                self.covariate_dim()
            )));
        }
        if self.categorical {
            let lvl = x[self.l];
            if !(lvl == 0.0 || lvl == 1.0 || lvl == 2.0) {
                return Err(Error::invalid(format!(
                    "level index must be 0, 1 or 2, got {lvl}"
                )));
            }
        }
        Ok(())
    }

    /// Probability that list `list_index` (1-based) captures an individual
    /// with covariates `x`.
    pub fn true_capture_prob(&self, list_index: usize, x: &[f64]) -> Result<f64> {
        if list_index == 0 || list_index > self.k_lists {
            return Err(Error::invalid(format!(
                "list index {list_index} out of range 1..={}",
                self.k_lists
            )));
        }
        self.check_x(x)?;
        Ok(expit(self.ep + self.shape(list_index - 1, x)))
    }

    /// Probability of being captured by at least one list.
    pub fn true_gamma(&self, x: &[f64]) -> Result<f64> {
        let mut miss = 1.0;
        for k in 1..=self.k_lists {
            miss *= 1.0 - self.true_capture_prob(k, x)?;
        }
        Ok(1.0 - miss)
    }

    /// True observed-data nuisances for `pair` at `x`.
    pub fn true_q(&self, pair: ListPair, x: &[f64]) -> Result<QTriple> {
        let gamma = self.true_gamma(x)?;
        let pj = self.true_capture_prob(pair.j, x)?;
        let pk = self.true_capture_prob(pair.k, x)?;
        Ok(QTriple::new(pj / gamma, pk / gamma, pj * pk / gamma))
    }

    fn draw_x(&self, rng: &mut impl Rng, out: &mut Vec<f64>) {
        out.clear();
        for _ in 0..self.l {
            out.push(rng.gen::<f64>() * COVARIATE_MAX);
        }
        if self.categorical {
            out.push(rng.gen_range(0..3) as f64);
        }
    }

    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_true={}", self.n_true);
        let _ = writeln!(s, "k_lists={}", self.k_lists);
        let _ = writeln!(s, "l={}", self.l);
        let _ = writeln!(s, "categorical={}", self.categorical);
        let _ = writeln!(s, "ep={}", self.ep);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(
            s,
            "level_offsets={},{},{}",
            self.level_offsets[0], self.level_offsets[1], self.level_offsets[2]
        );
        for (k, list) in self.coefficients.iter().enumerate() {
            for (j, [a, b, c]) in list.iter().enumerate() {
                let _ = writeln!(s, "coef.{}.{}={a},{b},{c}", k + 1, j + 1);
            }
        }
        s
    }

    /// Parse the format written by [`DgpSpec::to_config`]. Omitted
    /// coefficients take the nonlinear defaults.
    pub fn from_config(text: &str) -> Result<Self> {
        let entries = config::parse(text)?;
        let get = |key: &str| entries.iter().find(|e| e.key == key);
        let need = |key: &str| {
            get(key).ok_or_else(|| Error::Config {
                line: 0,
                message: format!("missing key {key}"),
            })
        };
        let mut spec = DgpSpec::new(
            need("n_true")?.parse()?,
            need("k_lists")?.parse()?,
            need("l")?.parse()?,
            need("ep")?.parse()?,
            get("seed").map(|e| e.parse()).transpose()?.unwrap_or(0),
        );
        if let Some(e) = get("categorical") {
            spec.categorical = e.parse_bool()?;
        }
        let floats = |e: &config::Entry| -> Result<[f64; 3]> {
            let v = e
                .list()
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| e.error(format!("bad number {t:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            v.try_into()
                .map_err(|_| e.error("expected three comma-separated numbers"))
        };
        if let Some(e) = get("level_offsets") {
            spec.level_offsets = floats(e)?;
        }
        for e in &entries {
            if let Some(rest) = e.key.strip_prefix("coef.") {
                let (k, j) = rest
                    .split_once('.')
                    .and_then(|(k, j)| Some((k.parse::<usize>().ok()?, j.parse::<usize>().ok()?)))
                    .ok_or_else(|| e.error("expected coef.<list>.<covariate>"))?;
                if k == 0 || k > spec.k_lists || j == 0 || j > spec.l {
                    return Err(e.error("index out of range"));
                }
                spec.coefficients[k - 1][j - 1] = floats(e)?;
            } else if ![
                "n_true",
                "k_lists",
                "l",
                "categorical",
                "ep",
                "seed",
                "level_offsets",
            ]
            .contains(&e.key.as_str())
            {
                return Err(e.error("unknown key"));
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Fraction of the population captured at least once.
    pub psi0: f64,
    pub data: Dataset,
    /// Same rows with transformed continuous covariates.
    pub data_xstar: Dataset,
    pub dgp: DgpSpec,
}

impl SimOutput {
    /// Covariate vector of observed row `i` in the layout expected by
    /// [`DgpSpec::true_capture_prob`].
    pub fn covariate_vector(&self, i: usize) -> Vec<f64> {
        self.data
            .covariates()
            .iter()
            .map(|c| match c {
                Covariate::Numeric { values, .. } => values[i],
                Covariate::Categorical { values, .. } => LEVELS
                    .iter()
                    .position(|l| *l == values[i])
                    .expect("simulated level")
                    as f64,
            })
            .collect()
    }

    /// True nuisances for every observed row.
    pub fn true_nuisances(&self, pair: ListPair) -> Vec<QTriple> {
        (0..self.data.n_obs())
            .map(|i| {
                self.dgp
                    .true_q(pair, &self.covariate_vector(i))
                    .expect("simulated covariates match the DGP")
            })
            .collect()
    }
}

pub fn transform_covariate(x: f64) -> f64 {
    (x / 3.0).exp() - 1.0
}

pub fn simulate(spec: &DgpSpec) -> Result<SimOutput> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let mut x = Vec::with_capacity(spec.covariate_dim());
    let mut captures = Vec::new();
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); spec.l];
    let mut levels = Vec::new();
    for _ in 0..spec.n_true {
        spec.draw_x(&mut rng, &mut x);
        let hist: Vec<u8> = (0..spec.k_lists)
            .map(|k| u8::from(rng.gen::<f64>() < expit(spec.ep + spec.shape(k, &x))))
            .collect();
        if hist.contains(&1) {
            captures.push(hist);
            for (col, &v) in xs.iter_mut().zip(&x) {
                col.push(v);
            }
            if spec.categorical {
                levels.push(LEVELS[x[spec.l] as usize].to_owned());
            }
        }
    }
    if captures.is_empty() {
        return Err(Error::data(
            "simulated population has no captured individuals",
        ));
    }
    let psi0 = captures.len() as f64 / spec.n_true as f64;
    let list_names: Vec<String> = (1..=spec.k_lists).map(|k| format!("y{k}")).collect();
    let build = |transform: bool| -> Result<Dataset> {
        let mut cov: Vec<Covariate> = xs
            .iter()
            .enumerate()
            .map(|(j, col)| Covariate::Numeric {
                name: format!("x{}", j + 1),
                values: if transform {
                    col.iter().map(|&v| transform_covariate(v)).collect()
                } else {
                    col.clone()
                },
            })
            .collect();
        if spec.categorical {
            cov.push(Covariate::Categorical {
                name: "catcov".into(),
                values: levels.clone(),
            });
        }
        Dataset::new(list_names.clone(), captures.clone(), cov)
    };
    Ok(SimOutput {
        psi0,
        data: build(false)?,
        data_xstar: build(true)?,
        dgp: spec.clone(),
    })
}

/// Monte Carlo evaluation of the capture probability as a function of `ep`,
/// with the covariate sample held fixed.
pub struct PsiCurve {
    /// `f_k(x)` for every draw, row-major `draws × K`.
    shapes: Vec<f64>,
    k_lists: usize,
}

impl PsiCurve {
    pub fn new(template: &DgpSpec, draws: usize) -> Result<Self> {
        template.validate()?;
        let mut rng = seed::rng(seed::derive(template.seed, &[seed::label("calibration")]));
        let mut x = Vec::new();
        let mut shapes = Vec::with_capacity(draws * template.k_lists);
        for _ in 0..draws {
            template.draw_x(&mut rng, &mut x);
            shapes.extend((0..template.k_lists).map(|k| template.shape(k, &x)));
        }
        Ok(PsiCurve {
            shapes,
            k_lists: template.k_lists,
        })
    }

    pub fn psi(&self, ep: f64) -> f64 {
        let draws = self.shapes.len() / self.k_lists;
        let total: f64 = self
            .shapes
            .chunks_exact(self.k_lists)
            .map(|fs| 1.0 - fs.iter().map(|f| 1.0 - expit(ep + f)).product::<f64>())
            .sum();
        total / draws as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub ep: f64,
    /// Capture probability at `ep` on the calibration sample.
    pub psi: f64,
    pub steps: usize,
}

/// Find `ep` whose capture probability is within `tol` of `target_psi`, by
/// bisection on a fixed Monte Carlo sample of `CALIBRATION_DRAWS` covariates.
pub fn calibrate_ep(template: &DgpSpec, target_psi: f64, tol: f64) -> Result<Calibration> {
    if !(target_psi > 0.0 && target_psi < 1.0) {
        return Err(Error::invalid(format!(
            "target psi must lie in (0, 1), got {target_psi}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let curve = PsiCurve::new(template, CALIBRATION_DRAWS)?;
    let (mut lo, mut hi) = (-10.0, 10.0);
    let mut expansions = 0;
    while curve.psi(lo) > target_psi || curve.psi(hi) < target_psi {
        lo *= 2.0;
        hi *= 2.0;
        expansions += 1;
        if expansions > 6 {
            return Err(Error::invalid(format!(
                "cannot bracket capture probability {target_psi}"
            )));
        }
    }
    let mut steps = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        let psi = curve.psi(mid);
        steps += 1;
        if (psi - target_psi).abs() <= tol || steps >= 100 {
            return Ok(Calibration {
                ep: mid,
                psi,
                steps,
            });
        }
        if psi < target_psi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

pub fn save_config(spec: &DgpSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, spec.to_config()).map_err(|e| Error::io(path, e))
}
