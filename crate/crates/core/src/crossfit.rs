//! Fold assignment and cross-fitted nuisance predictions.
//!
//! Every row is scored by a model trained on all the other folds, so no row's
//! nuisance estimate has seen that row.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{fit_nuisance, predict_q, Hyper, LearnerKind, ListPair, QTriple};
use crate::seed;

pub const DEFAULT_NFOLDS: usize = 5;

/// Row-to-fold map. Labels are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub idfold: Vec<usize>,
    pub nfolds: usize,
    pub seed: u64,
}

/// Balanced random partition: shuffle the row indices, then label them
/// round-robin.
pub fn assign_folds(n: usize, nfolds: usize, seed: u64) -> Result<FoldAssignment> {
    if nfolds < 2 {
        return Err(Error::invalid(format!(
            "nfolds must be at least 2, got {nfolds}"
        )));
    }
    if nfolds > n {
        return Err(Error::invalid(format!(
            "nfolds={nfolds} exceeds the {n} available rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut idfold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        idfold[row] = pos % nfolds + 1;
    }
    Ok(FoldAssignment {
        idfold,
        nfolds,
        seed,
    })
}

impl FoldAssignment {
    /// Wrap externally supplied labels. Every label in `1..=max` must occur.
    pub fn from_labels(idfold: Vec<usize>) -> Result<Self> {
        let nfolds = idfold.iter().copied().max().unwrap_or(0);
        if idfold.contains(&0) {
            return Err(Error::data("fold labels start at 1"));
        }
        for f in 1..=nfolds {
            if !idfold.contains(&f) {
                return Err(Error::data(format!("fold {f} has no rows")));
            }
        }
        Ok(FoldAssignment {
            idfold,
            nfolds,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.idfold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idfold.is_empty()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.nfolds];
        for &f in &self.idfold {
            sizes[f - 1] += 1;
        }
        sizes
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["idfold"])?;
        for f in &self.idfold {
            w.write_record([f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let cell = rec.get(0).unwrap_or("");
            labels.push(cell.parse::<usize>().map_err(|_| {
                Error::data(format!("fold file row {}: bad label {cell:?}", i + 1))
            })?);
        }
        Self::from_labels(labels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_csv(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Row-aligned nuisance estimates for one list pair, one column group per
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    pub pair: ListPair,
    pub model_names: Vec<String>,
    /// `estimates[m][i]` is model `m`'s triple for row `i`.
    pub estimates: Vec<Vec<QTriple>>,
    pub folds: FoldAssignment,
}

impl NuisanceEstimates {
    pub fn n_rows(&self) -> usize {
        self.estimates.first().map_or(0, Vec::len)
    }

    pub fn get(&self, model: &str) -> Option<&[QTriple]> {
        self.model_names
            .iter()
            .position(|m| m == model)
            .map(|i| self.estimates[i].as_slice())
    }

    /// Columns: `listpair`, then `m.q12,m.q1,m.q2` per model.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["listpair".to_string()];
        for m in &self.model_names {
            header.extend([format!("{m}.q12"), format!("{m}.q1"), format!("{m}.q2")]);
        }
        w.write_record(&header)?;
        let label = self.pair.label();
        for i in 0..self.n_rows() {
            let mut rec = vec![label.clone()];
            for est in &self.estimates {
                let q = est[i];
                rec.extend([q.q12.to_string(), q.q1.to_string(), q.q2.to_string()]);
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Read estimates written by [`NuisanceEstimates::write_csv`] (or by any
    /// external model using the same columns) and attach `folds`.
    pub fn read_csv<R: Read>(reader: R, folds: FoldAssignment) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.first().map(String::as_str) != Some("listpair") {
            return Err(Error::data(
                "nuisance file must start with a listpair column",
            ));
        }
        let mut model_names: Vec<String> = Vec::new();
        for h in &header[1..] {
            let (model, comp) = h
                .rsplit_once('.')
                .ok_or_else(|| Error::data(format!("bad nuisance column {h:?}")))?;
            if !matches!(comp, "q1" | "q2" | "q12") {
                return Err(Error::data(format!("bad nuisance column {h:?}")));
            }
            if !model_names.iter().any(|m| m == model) {
                model_names.push(model.to_owned());
            }
        }
        let column = |model: &str, comp: &str| {
            header
                .iter()
                .position(|h| *h == format!("{model}.{comp}"))
                .ok_or_else(|| Error::data(format!("missing column {model}.{comp}")))
        };
        let positions = model_names
            .iter()
            .map(|m| Ok([column(m, "q1")?, column(m, "q2")?, column(m, "q12")?]))
            .collect::<Result<Vec<_>>>()?;
        let mut estimates = vec![Vec::new(); model_names.len()];
        let mut pair: Option<ListPair> = None;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let this: ListPair = rec[0].parse()?;
            match pair {
                None => pair = Some(this),
                Some(p) if p != this => {
                    return Err(Error::data(
                        "nuisance estimates may cover only one list pair",
                    ))
                }
                _ => {}
            }
            let val = |c: usize| -> Result<f64> {
                let v: f64 = rec[c].parse().map_err(|_| {
                    Error::data(format!("nuisance row {}: bad value {:?}", i + 1, &rec[c]))
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::data(format!(
                        "nuisance row {}: {v} is not a probability",
                        i + 1
                    )));
                }
                Ok(v)
            };
            for (m, pos) in positions.iter().enumerate() {
                estimates[m].push(QTriple::new(val(pos[0])?, val(pos[1])?, val(pos[2])?));
            }
        }
        let pair = pair.ok_or_else(|| Error::data("nuisance file has no rows"))?;
        if estimates.first().is_some_and(|e| e.len() != folds.len()) {
            return Err(Error::data(format!(
                "{} nuisance rows but {} fold labels",
                estimates[0].len(),
                folds.len()
            )));
        }
        Ok(NuisanceEstimates {
            pair,
            model_names,
            estimates,
            folds,
        })
    }

    pub fn load(path: impl AsRef<Path>, folds: FoldAssignment) -> Result<Self> {
        let path = path.as_ref();
        Self::read_csv(
            std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
            folds,
        )
    }
}

/// Seed for one (model, pair, fold) fit.
pub fn fit_seed(master: u64, kind: &LearnerKind, pair: ListPair, fold: usize) -> u64 {
    seed::derive(
        master,
        &[
            seed::label(kind.tag()),
            pair.j as u64,
            pair.k as u64,
            fold as u64,
        ],
    )
}

/// Cross-fit every kind in `kinds` on `data` for `pair`.
pub fn crossfit_nuisances(
    data: &Dataset,
    pair: ListPair,
    kinds: &[LearnerKind],
    folds: &FoldAssignment,
    margin: f64,
    hyper: &Hyper,
    seed: u64,
) -> Result<NuisanceEstimates> {
    if kinds.is_empty() {
        return Err(Error::invalid("no learners requested"));
    }
    if folds.len() != data.n_obs() {
        return Err(Error::invalid(format!(
            "{} fold labels for {} rows",
            folds.len(),
            data.n_obs()
        )));
    }
    let mut names: Vec<String> = kinds.iter().map(|k| k.tag().to_owned()).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("each learner may be requested once"));
    }
    ListPair::new(pair.j, pair.k, data.n_lists())?;

    let jobs: Vec<(usize, usize)> = (0..kinds.len())
        .flat_map(|m| (1..=folds.nfolds).map(move |f| (m, f)))
        .collect();
    let results: Vec<(usize, Vec<usize>, Vec<QTriple>)> = jobs
        .par_iter()
        .map(|&(m, fold)| {
            let kind = &kinds[m];
            let annotate = |e: Error| Error::Fit {
                kind: kind.tag().to_owned(),
                fold,
                reason: e.to_string(),
            };
            let train: Vec<usize> = (0..data.n_obs())
                .filter(|&i| folds.idfold[i] != fold)
                .collect();
            let test: Vec<usize> = (0..data.n_obs())
                .filter(|&i| folds.idfold[i] == fold)
                .collect();
            let mut model = fit_nuisance(
                kind,
                &data.select_rows(&train),
                pair,
                hyper,
                fit_seed(seed, kind, pair, fold),
            )
            .map_err(annotate)?;
            model.training_folds = (1..=folds.nfolds).filter(|&f| f != fold).collect();
            let scored = predict_q(&model, &data.select_rows(&test), margin).map_err(annotate)?;
            Ok((m, test, scored.triples))
        })
        .collect::<Result<_>>()?;

    let mut estimates =
        vec![vec![QTriple::new(f64::NAN, f64::NAN, f64::NAN); data.n_obs()]; kinds.len()];
    for (m, rows, triples) in results {
        for (row, q) in rows.into_iter().zip(triples) {
            estimates[m][row] = q;
        }
    }
    Ok(NuisanceEstimates {
        pair,
        model_names: kinds.iter().map(|k| k.tag().to_owned()).collect(),
        estimates,
        folds: folds.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn balanced_even_split() {
        let f = assign_folds(10, 2, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![5, 5]);
    }

    #[test]
    fn near_balanced_split() {
        let f = assign_folds(7, 3, 1).unwrap();
        let mut sizes = f.fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(
            assign_folds(50, 5, 11).unwrap(),
            assign_folds(50, 5, 11).unwrap()
        );
        assert_ne!(
            assign_folds(50, 5, 11).unwrap().idfold,
            assign_folds(50, 5, 12).unwrap().idfold
        );
    }

    #[test]
    fn rejects_bad_fold_counts() {
        assert!(assign_folds(3, 4, 0).is_err());
        assert!(assign_folds(10, 1, 0).is_err());
    }

    #[test]
    fn fold_csv_roundtrip() {
        let f = assign_folds(9, 3, 4).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = FoldAssignment::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.idfold, f.idfold);
        assert_eq!(back.nfolds, 3);
    }

    #[test]
    fn nuisance_csv_header_and_rejections() {
        let folds = FoldAssignment::from_labels(vec![1, 2]).unwrap();
        let est = NuisanceEstimates {
            pair: ListPair { j: 1, k: 2 },
            model_names: vec!["rangerlogit".into()],
            estimates: vec![vec![
                QTriple::new(0.7, 0.4, 0.12),
                QTriple::new(0.75, 0.5, 0.25),
            ]],
            folds: folds.clone(),
        };
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "listpair,rangerlogit.q12,rangerlogit.q1,rangerlogit.q2\n\"1,2\",0.12,0.7,0.4"
        ));
        assert_eq!(
            NuisanceEstimates::read_csv(buf.as_slice(), folds).unwrap(),
            est
        );

        let short = FoldAssignment::from_labels(vec![1]).unwrap();
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        assert!(NuisanceEstimates::read_csv(buf.as_slice(), short).is_err());

        let mixed = "listpair,m.q12,m.q1,m.q2\n\"1,2\",0.1,0.5,0.5\n\"1,3\",0.1,0.5,0.5\n";
        let two = FoldAssignment::from_labels(vec![1, 2]).unwrap();
        assert!(NuisanceEstimates::read_csv(mixed.as_bytes(), two).is_err());
    }

    proptest! {
        #[test]
        fn folds_always_balanced(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let f = assign_folds(n, k, seed).unwrap();
            let sizes = f.fold_sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            prop_assert!(*lo >= 1);
        }
    }
}
