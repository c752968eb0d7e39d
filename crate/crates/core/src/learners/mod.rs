//! Nuisance models for the observed-data probabilities of a list pair.
//!
//! For lists `(j, k)` each model predicts, at a covariate vector `x`,
//!
//! * `q1(x)`  = Q(Y_j = 1 | x)
//! * `q2(x)`  = Q(Y_k = 1 | x)
//! * `q12(x)` = Q(Y_j = 1, Y_k = 1 | x)
//!
//! where Q is the distribution of the observed (captured at least once) rows.
//! All kinds except `mlogit` fit the three targets as separate binary
//! problems; `mlogit` fits one softmax model over capture profiles of
//! `(Y_j, Y_k)`, which makes `q12 <= min(q1, q2)` hold structurally.

pub mod design;
pub mod forest;
pub mod logistic;

use std::fmt;
use std::str::FromStr;

use crate::crossfit::assign_folds;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;

pub use design::{FeatureMatrix, FeatureSchema, NaturalSpline};
pub use forest::Forest;
pub use logistic::{expit, Logistic, Multinomial};

/// One of the six nuisance model families.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    Logit,
    Mlogit,
    Gam,
    Ranger,
    RangerLogit,
    /// Cross-validated convex stack of the listed kinds.
    Sl(Vec<LearnerKind>),
}

impl LearnerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LearnerKind::Logit => "logit",
            LearnerKind::Mlogit => "mlogit",
            LearnerKind::Gam => "gam",
            LearnerKind::Ranger => "ranger",
            LearnerKind::RangerLogit => "rangerlogit",
            LearnerKind::Sl(_) => "sl",
        }
    }

    /// Library used when `sl` is requested without one.
    pub fn default_sl_library() -> Vec<LearnerKind> {
        vec![LearnerKind::Logit, LearnerKind::Gam, LearnerKind::Ranger]
    }

    /// Parse a comma-separated list of tags; `sl` gets `sl_library`.
    pub fn parse_list(spec: &str, sl_library: Option<&[LearnerKind]>) -> Result<Vec<LearnerKind>> {
        spec.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match s.parse::<LearnerKind>()? {
                LearnerKind::Sl(_) => match sl_library {
                    Some(lib) => LearnerKind::sl(lib.to_vec()),
                    None => Ok(LearnerKind::Sl(Self::default_sl_library())),
                },
                k => Ok(k),
            })
            .collect()
    }

    /// Build an `sl` kind, checking its library.
    pub fn sl(library: Vec<LearnerKind>) -> Result<LearnerKind> {
        if library.is_empty() {
            return Err(Error::invalid("sl library must not be empty"));
        }
        if library.iter().any(|k| matches!(k, LearnerKind::Sl(_))) {
            return Err(Error::invalid("sl library cannot contain sl"));
        }
        Ok(LearnerKind::Sl(library))
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "logit" => LearnerKind::Logit,
            "mlogit" => LearnerKind::Mlogit,
            "gam" => LearnerKind::Gam,
            "ranger" => LearnerKind::Ranger,
            "rangerlogit" => LearnerKind::RangerLogit,
            "sl" => LearnerKind::Sl(LearnerKind::default_sl_library()),
            "tmle" | "TMLE" => return Err(Error::NotImplemented("TMLE")),
            other => return Err(Error::invalid(format!("unknown learner {other:?}"))),
        })
    }
}

/// Learner settings. Defaults are the documented ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub irls_max_iter: usize,
    pub irls_tol: f64,
    pub ridge: f64,
    /// Natural spline columns per numeric covariate for `gam`.
    pub gam_df: usize,
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_bins: usize,
    /// Inner folds used to pick ensemble weights.
    pub cv_folds: usize,
    pub sl_iterations: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            irls_max_iter: 50,
            irls_tol: 1e-8,
            ridge: 1e-10,
            gam_df: 4,
            n_trees: 200,
            min_leaf: 5,
            max_bins: 256,
            cv_folds: 5,
            sl_iterations: 200,
        }
    }
}

/// Observed-data probabilities for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QTriple {
    pub q1: f64,
    pub q2: f64,
    pub q12: f64,
}

impl QTriple {
    pub fn new(q1: f64, q2: f64, q12: f64) -> Self {
        QTriple { q1, q2, q12 }
    }

    /// Clamp every component into `[margin, 1]`.
    pub fn clamp(self, margin: f64) -> Self {
        let c = |v: f64| v.clamp(margin, 1.0);
        QTriple {
            q1: c(self.q1),
            q2: c(self.q2),
            q12: c(self.q12),
        }
    }

    fn get(&self, target: usize) -> f64 {
        [self.q1, self.q2, self.q12][target]
    }

    fn from_array(a: [f64; 3]) -> Self {
        QTriple::new(a[0], a[1], a[2])
    }
}

/// A list pair, 1-based as printed ("1,2").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ListPair {
    pub j: usize,
    pub k: usize,
}

impl ListPair {
    pub fn new(j: usize, k: usize, n_lists: usize) -> Result<Self> {
        if j == k || j == 0 || k == 0 || j > n_lists || k > n_lists {
            return Err(Error::invalid(format!(
                "list pair ({j},{k}) invalid for K={n_lists}"
            )));
        }
        Ok(ListPair { j, k })
    }

    /// Every pair `j < k` over `n_lists` lists.
    pub fn all(n_lists: usize) -> Vec<ListPair> {
        (1..=n_lists)
            .flat_map(|j| ((j + 1)..=n_lists).map(move |k| ListPair { j, k }))
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{},{}", self.j, self.k)
    }
}

impl FromStr for ListPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| Error::data(format!("bad list pair {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::data(format!("bad list pair {s:?}")))
        };
        let (j, k) = (parse(a)?, parse(b)?);
        ListPair::new(j, k, j.max(k))
    }
}

/// Binary targets for a pair: `Y_j`, `Y_k`, `Y_j * Y_k`.
pub(crate) fn pair_targets(data: &Dataset, pair: ListPair) -> [Vec<u8>; 3] {
    let n = data.n_obs();
    let y1: Vec<u8> = (0..n).map(|i| data.capture(i, pair.j - 1)).collect();
    let y2: Vec<u8> = (0..n).map(|i| data.capture(i, pair.k - 1)).collect();
    let y12 = y1.iter().zip(&y2).map(|(a, b)| a & b).collect();
    [y1, y2, y12]
}

#[derive(Debug, Clone, PartialEq)]
enum BinaryModel {
    /// Empirical proportion used when the training target is constant.
    Constant(f64),
    Logistic(Logistic),
    /// Logistic regression on a natural spline expansion.
    Additive(Vec<Option<NaturalSpline>>, Logistic),
    Forest(Forest),
}

fn spline_columns(splines: &[Option<NaturalSpline>], x: &FeatureMatrix) -> Vec<Vec<f64>> {
    x.cols
        .iter()
        .zip(splines)
        .flat_map(|(c, s)| match s {
            Some(s) => s.expand(c),
            None => vec![c.clone()],
        })
        .collect()
}

impl BinaryModel {
    fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        match self {
            BinaryModel::Constant(p) => vec![*p; x.n_rows],
            BinaryModel::Logistic(m) => m.predict(&x.cols, x.n_rows),
            BinaryModel::Additive(splines, m) => m.predict(&spline_columns(splines, x), x.n_rows),
            BinaryModel::Forest(f) => f.predict(x),
        }
    }

    fn converged(&self) -> bool {
        match self {
            BinaryModel::Logistic(m) | BinaryModel::Additive(_, m) => m.converged,
            _ => true,
        }
    }
}

/// Capture profile classes of `(Y_j, Y_k)`.
const PROFILES: [(u8, u8); 4] = [(1, 1), (1, 0), (0, 1), (0, 0)];

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Binary(Box<[BinaryModel; 3]>),
    Multinomial {
        /// Profile index (into `PROFILES`) of every fitted class.
        classes: Vec<usize>,
        model: Multinomial,
    },
    /// Per-target convex combination of member predictions.
    Blend {
        members: Vec<Fitted>,
        weights: [Vec<f64>; 3],
    },
}

/// Diagnostics collected while fitting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitFlags {
    /// Targets ("q1", "q2", "q12") fitted by the constant-proportion fallback.
    pub fallback: Vec<&'static str>,
    pub converged: bool,
}

const TARGET_NAMES: [&str; 3] = ["q1", "q2", "q12"];

fn fit_binary(
    kind: &LearnerKind,
    x: &FeatureMatrix,
    y: &[u8],
    hyper: &Hyper,
    seed: u64,
) -> (BinaryModel, bool) {
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return (BinaryModel::Constant(pos as f64 / y.len() as f64), true);
    }
    let model = match kind {
        LearnerKind::Logit => BinaryModel::Logistic(Logistic::fit(&x.cols, y, hyper)),
        LearnerKind::Gam => {
            let splines: Vec<Option<NaturalSpline>> = x
                .cols
                .iter()
                .zip(&x.continuous)
                .map(|(c, &cont)| cont.then(|| NaturalSpline::fit(c, hyper.gam_df)))
                .collect();
            let cols = spline_columns(&splines, x);
            BinaryModel::Additive(splines, Logistic::fit(&cols, y, hyper))
        }
        LearnerKind::Ranger => BinaryModel::Forest(Forest::fit(x, y, hyper, seed)),
        _ => unreachable!("not a single binary learner"),
    };
    (model, false)
}

fn fit_kind(
    kind: &LearnerKind,
    x: &FeatureMatrix,
    targets: &[Vec<u8>; 3],
    hyper: &Hyper,
    seed: u64,
    flags: &mut FitFlags,
) -> Fitted {
    match kind {
        LearnerKind::Logit | LearnerKind::Gam | LearnerKind::Ranger => {
            let fits: Vec<BinaryModel> = (0..3)
                .map(|t| {
                    let (m, fell_back) =
                        fit_binary(kind, x, &targets[t], hyper, seed::derive(seed, &[t as u64]));
                    if fell_back && !flags.fallback.contains(&TARGET_NAMES[t]) {
                        flags.fallback.push(TARGET_NAMES[t]);
                    }
                    flags.converged &= m.converged();
                    m
                })
                .collect();
            let fits: [BinaryModel; 3] = fits.try_into().expect("three targets");
            Fitted::Binary(Box::new(fits))
        }
        LearnerKind::Mlogit => {
            let profile = |i: usize| {
                PROFILES
                    .iter()
                    .position(|&p| p == (targets[0][i], targets[1][i]))
                    .expect("binary targets")
            };
            let labels: Vec<usize> = (0..x.n_rows).map(profile).collect();
            let mut classes: Vec<usize> = labels.clone();
            classes.sort_unstable();
            classes.dedup();
            let y: Vec<usize> = labels
                .iter()
                .map(|l| classes.binary_search(l).expect("present class"))
                .collect();
            if classes.len() == 1 {
                flags.fallback.extend(TARGET_NAMES);
            }
            let model = Multinomial::fit(&x.cols, &y, classes.len(), hyper);
            flags.converged &= model.converged;
            Fitted::Multinomial { classes, model }
        }
        LearnerKind::RangerLogit => {
            let members = [LearnerKind::Ranger, LearnerKind::Logit];
            fit_blend(&members, x, targets, hyper, seed, flags, WeightRule::Grid)
        }
        LearnerKind::Sl(library) => {
            fit_blend(library, x, targets, hyper, seed, flags, WeightRule::Stack)
        }
    }
}

impl Fitted {
    fn predict(&self, x: &FeatureMatrix) -> Vec<QTriple> {
        match self {
            Fitted::Binary(models) => {
                let p: Vec<Vec<f64>> = models.iter().map(|m| m.predict(x)).collect();
                (0..x.n_rows)
                    .map(|i| QTriple::new(p[0][i], p[1][i], p[2][i]))
                    .collect()
            }
            Fitted::Multinomial { classes, model } => model
                .predict(&x.cols, x.n_rows)
                .into_iter()
                .map(|probs| {
                    let mut by_profile = [0.0; 4];
                    for (c, &p) in classes.iter().zip(&probs) {
                        by_profile[*c] = p;
                    }
                    let q12 = by_profile[0];
                    QTriple::new(q12 + by_profile[1], q12 + by_profile[2], q12)
                })
                .collect(),
            Fitted::Blend { members, weights } => {
                let preds: Vec<Vec<QTriple>> = members.iter().map(|m| m.predict(x)).collect();
                (0..x.n_rows)
                    .map(|i| {
                        let mut out = [0.0; 3];
                        for (t, slot) in out.iter_mut().enumerate() {
                            *slot = preds
                                .iter()
                                .zip(&weights[t])
                                .map(|(p, w)| w * p[i].get(t))
                                .sum::<f64>()
                                .clamp(0.0, 1.0);
                        }
                        QTriple::from_array(out)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum WeightRule {
    /// Weight on the first member from {0, 0.1, ..., 1}; ties go to the
    /// smaller weight.
    Grid,
    /// Simplex weights by exponentiated-gradient descent on log loss.
    Stack,
}

const LOSS_EPS: f64 = 1e-6;

fn log_loss(y: &[u8], p: &[f64]) -> f64 {
    y.iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            let pi = pi.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            if yi == 1 {
                -pi.ln()
            } else {
                -(1.0 - pi).ln()
            }
        })
        .sum::<f64>()
        / y.len() as f64
}

fn grid_weights(y: &[u8], forest: &[f64], other: &[f64]) -> Vec<f64> {
    let mut best = (f64::INFINITY, 0.0);
    for step in 0..=10 {
        let w = step as f64 / 10.0;
        let blend: Vec<f64> = forest
            .iter()
            .zip(other)
            .map(|(f, o)| w * f + (1.0 - w) * o)
            .collect();
        let loss = log_loss(y, &blend);
        if loss < best.0 {
            best = (loss, w);
        }
    }
    vec![best.1, 1.0 - best.1]
}

/// Convex weights minimizing log loss of `sum_l w_l * preds[l]`.
pub(crate) fn stack_weights(y: &[u8], preds: &[Vec<f64>], iterations: usize) -> Vec<f64> {
    let m = preds.len();
    let n = y.len() as f64;
    let mut w = vec![1.0 / m as f64; m];
    for t in 0..iterations {
        let mut grad = vec![0.0; m];
        for (i, &yi) in y.iter().enumerate() {
            let p = preds
                .iter()
                .zip(&w)
                .map(|(col, wl)| wl * col[i])
                .sum::<f64>()
                .clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            let d = if yi == 1 { -1.0 / p } else { 1.0 / (1.0 - p) };
            for (g, col) in grad.iter_mut().zip(preds) {
                *g += d * col[i] / n;
            }
        }
        let gmax = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
        if gmax < 1e-12 {
            break;
        }
        let eta = 1.0 / (gmax * ((t + 1) as f64).sqrt());
        let mut total = 0.0;
        for (wl, g) in w.iter_mut().zip(&grad) {
            *wl *= (-eta * g).exp();
            total += *wl;
        }
        for wl in w.iter_mut() {
            *wl /= total;
        }
    }
    w
}

fn fit_blend(
    members: &[LearnerKind],
    x: &FeatureMatrix,
    targets: &[Vec<u8>; 3],
    hyper: &Hyper,
    seed: u64,
    flags: &mut FitFlags,
    rule: WeightRule,
) -> Fitted {
    let n = x.n_rows;
    let member_seed = |m: &LearnerKind| seed::derive(seed, &[seed::label(m.tag())]);
    let n_folds = hyper.cv_folds.min(n);
    let weights: [Vec<f64>; 3] = if n_folds >= 2 {
        let folds = assign_folds(n, n_folds, seed::derive(seed, &[seed::label("cv-folds")]))
            .expect("fold count checked");
        // cv[member][target][row]
        let mut cv = vec![vec![vec![0.0; n]; 3]; members.len()];
        for fold in 1..=n_folds {
            let train: Vec<usize> = (0..n).filter(|&i| folds.idfold[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds.idfold[i] == fold).collect();
            let xtr = x.select_rows(&train);
            let xte = x.select_rows(&test);
            let ttr: [Vec<u8>; 3] =
                std::array::from_fn(|t| train.iter().map(|&i| targets[t][i]).collect());
            for (mi, member) in members.iter().enumerate() {
                let mut scratch = FitFlags {
                    converged: true,
                    ..FitFlags::default()
                };
                let s = seed::derive(member_seed(member), &[fold as u64]);
                let fitted = fit_kind(member, &xtr, &ttr, hyper, s, &mut scratch);
                for (row, q) in test.iter().zip(fitted.predict(&xte)) {
                    for t in 0..3 {
                        cv[mi][t][*row] = q.get(t);
                    }
                }
            }
        }
        std::array::from_fn(|t| {
            let cols: Vec<Vec<f64>> = cv.iter().map(|m| m[t].clone()).collect();
            match rule {
                WeightRule::Grid => grid_weights(&targets[t], &cols[0], &cols[1]),
                WeightRule::Stack => stack_weights(&targets[t], &cols, hyper.sl_iterations),
            }
        })
    } else {
        std::array::from_fn(|_| vec![1.0 / members.len() as f64; members.len()])
    };
    let fitted = members
        .iter()
        .map(|m| fit_kind(m, x, targets, hyper, member_seed(m), flags))
        .collect();
    Fitted::Blend {
        members: fitted,
        weights,
    }
}

/// A fitted nuisance model for one list pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub kind: LearnerKind,
    pub pair: ListPair,
    schema: FeatureSchema,
    fitted: Fitted,
    pub flags: FitFlags,
    /// Folds whose rows were used for training (empty outside cross-fitting).
    pub training_folds: Vec<usize>,
}

impl QModel {
    /// Per-target ensemble weights, when the model is an ensemble.
    pub fn ensemble_weights(&self) -> Option<&[Vec<f64>; 3]> {
        match &self.fitted {
            Fitted::Blend { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Unclamped predictions.
    pub fn predict_raw(&self, data: &Dataset) -> Result<Vec<QTriple>> {
        let (x, _) = self.schema.encode(data)?;
        Ok(self.fitted.predict(&x))
    }
}

/// Fit the three nuisance functions for `pair` on `train`.
///
/// Rows are put in a canonical order before fitting, so the fit depends on
/// the training rows as a multiset and not on their order.
pub fn fit_nuisance(
    kind: &LearnerKind,
    train: &Dataset,
    pair: ListPair,
    hyper: &Hyper,
    seed: u64,
) -> Result<QModel> {
    if train.n_obs() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    ListPair::new(pair.j, pair.k, train.n_lists())?;
    let schema = FeatureSchema::from_dataset(train);
    let (x, _) = schema.encode(train)?;
    let targets = pair_targets(train, pair);
    let order = canonical_order(&x, &targets);
    let x = x.select_rows(&order);
    let targets: [Vec<u8>; 3] =
        std::array::from_fn(|t| order.iter().map(|&i| targets[t][i]).collect());
    let mut flags = FitFlags {
        converged: true,
        ..FitFlags::default()
    };
    let fitted = fit_kind(kind, &x, &targets, hyper, seed, &mut flags);
    Ok(QModel {
        kind: kind.clone(),
        pair,
        schema,
        fitted,
        flags,
        training_folds: Vec::new(),
    })
}

fn canonical_order(x: &FeatureMatrix, targets: &[Vec<u8>; 3]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.n_rows).collect();
    order.sort_by(|&a, &b| {
        x.cols
            .iter()
            .map(|c| c[a].total_cmp(&c[b]))
            .chain(targets[..2].iter().map(|t| t[a].cmp(&t[b])))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// Predictions clamped to `[margin, 1]`, plus the number of categorical
/// cells that fell back to the reference level.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub triples: Vec<QTriple>,
    pub unseen_levels: usize,
}

pub fn predict_q(model: &QModel, data: &Dataset, margin: f64) -> Result<Scored> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::invalid(format!(
            "margin must lie in (0, 0.5), got {margin}"
        )));
    }
    let (x, unseen_levels) = model.schema.encode(data)?;
    let triples = model
        .fitted
        .predict(&x)
        .into_iter()
        .map(|q| q.clamp(margin))
        .collect();
    Ok(Scored {
        triples,
        unseen_levels,
    })
}
