use caprec::crossfit::fit_seed;
use caprec::estimator::{popsize_detailed, Method, PopsizeOptions};
use caprec::learners::{fit_nuisance, predict_q};
use caprec::{
    assign_folds, crossfit_nuisances, simulate, Dataset, DgpSpec, FoldAssignment, Hyper,
    LearnerKind, ListPair, NuisanceEstimates,
};

const PAIR: ListPair = ListPair { j: 1, k: 2 };
const MARGIN: f64 = 0.005;

fn sim_data(n: usize, seed: u64) -> Dataset {
    simulate(&DgpSpec::new(n, 2, 2, -1.0, seed)).unwrap().data
}

#[test]
fn out_of_fold_purity() {
    let data = sim_data(800, 1);
    let folds = assign_folds(data.n_obs(), 3, 5).unwrap();
    let kinds = [LearnerKind::Gam, LearnerKind::RangerLogit];
    let hyper = Hyper::default();
    let nu = crossfit_nuisances(&data, PAIR, &kinds, &folds, MARGIN, &hyper, 17).unwrap();
    for (m, kind) in kinds.iter().enumerate() {
        for fold in 1..=3 {
            let train: Vec<usize> = (0..data.n_obs())
                .filter(|&i| folds.idfold[i] != fold)
                .collect();
            let test: Vec<usize> = (0..data.n_obs())
                .filter(|&i| folds.idfold[i] == fold)
                .collect();
            let model = fit_nuisance(
                kind,
                &data.select_rows(&train),
                PAIR,
                &hyper,
                fit_seed(17, kind, PAIR, fold),
            )
            .unwrap();
            let refit = predict_q(&model, &data.select_rows(&test), MARGIN)
                .unwrap()
                .triples;
            for (&i, q) in test.iter().zip(&refit) {
                assert_eq!(nu.estimates[m][i], *q, "{} row {i}", kind.tag());
            }
        }
    }
}

#[test]
fn two_folds_score_every_row() {
    let data = sim_data(400, 2);
    let folds = assign_folds(data.n_obs(), 2, 1).unwrap();
    assert_eq!(folds.fold_sizes().len(), 2);
    let nu = crossfit_nuisances(
        &data,
        PAIR,
        &[LearnerKind::Logit],
        &folds,
        MARGIN,
        &Hyper::default(),
        0,
    )
    .unwrap();
    assert_eq!(nu.n_rows(), data.n_obs());
    assert!(nu.estimates[0]
        .iter()
        .all(|q| q.q1.is_finite() && q.q2.is_finite() && q.q12.is_finite()));
}

#[test]
fn intercept_only_logit_gives_complementary_fold_proportions() {
    // 50 rows, no covariates
    let captures: Vec<Vec<u8>> = (0..50)
        .map(|i| match i % 5 {
            0 | 1 => vec![1, 0],
            2 => vec![0, 1],
            _ => vec![1, (i % 7 == 0) as u8],
        })
        .collect();
    let data = Dataset::new(vec!["y1".into(), "y2".into()], captures, Vec::new()).unwrap();
    let folds = assign_folds(50, 5, 3).unwrap();
    let nu = crossfit_nuisances(
        &data,
        PAIR,
        &[LearnerKind::Logit],
        &folds,
        MARGIN,
        &Hyper::default(),
        0,
    )
    .unwrap();
    for i in 0..50 {
        let train: Vec<&[u8]> = (0..50)
            .filter(|&r| folds.idfold[r] != folds.idfold[i])
            .map(|r| data.capture_row(r))
            .collect();
        let frac = |f: fn(&[u8]) -> bool| {
            train.iter().filter(|y| f(y)).count() as f64 / train.len() as f64
        };
        let q = nu.estimates[0][i];
        assert!((q.q1 - frac(|y| y[0] == 1)).abs() < 1e-8);
        assert!((q.q2 - frac(|y| y[1] == 1)).abs() < 1e-8);
        assert!((q.q12 - frac(|y| y[0] == 1 && y[1] == 1)).abs() < 1e-8);
    }
}

#[test]
fn two_kinds_share_folds() {
    let data = sim_data(500, 3);
    let folds = assign_folds(data.n_obs(), 5, 2).unwrap();
    let nu = crossfit_nuisances(
        &data,
        PAIR,
        &[LearnerKind::Logit, LearnerKind::Gam],
        &folds,
        MARGIN,
        &Hyper::default(),
        0,
    )
    .unwrap();
    assert_eq!(nu.model_names, ["logit", "gam"]);
    assert_eq!(nu.folds, folds);
    assert!(
        nu.get("logit").unwrap().len() == data.n_obs()
            && nu.get("gam").unwrap().len() == data.n_obs()
    );
}

#[test]
fn adding_a_model_leaves_other_fits_alone() {
    let data = sim_data(500, 4);
    let folds = assign_folds(data.n_obs(), 5, 2).unwrap();
    let hyper = Hyper::default();
    let one = crossfit_nuisances(
        &data,
        PAIR,
        &[LearnerKind::Ranger],
        &folds,
        MARGIN,
        &hyper,
        9,
    )
    .unwrap();
    let two = crossfit_nuisances(
        &data,
        PAIR,
        &[LearnerKind::Logit, LearnerKind::Ranger],
        &folds,
        MARGIN,
        &hyper,
        9,
    )
    .unwrap();
    assert_eq!(one.get("ranger"), two.get("ranger"));
}

#[test]
fn fold_count_mismatch_is_rejected() {
    let data = sim_data(300, 5);
    let folds = assign_folds(data.n_obs() - 1, 5, 2).unwrap();
    assert!(crossfit_nuisances(
        &data,
        PAIR,
        &[LearnerKind::Logit],
        &folds,
        MARGIN,
        &Hyper::default(),
        0
    )
    .is_err());
}

#[test]
fn saved_nuisances_reproduce_the_estimate() {
    let data = sim_data(1000, 6);
    let opts = PopsizeOptions {
        kinds: vec![LearnerKind::Logit, LearnerKind::Gam],
        methods: vec![Method::DR, Method::PI],
        seed: 12,
        ..PopsizeOptions::default()
    };
    let (table, nus) = popsize_detailed(&data, &opts).unwrap();
    let mut nuis_csv = Vec::new();
    nus[0].write_csv(&mut nuis_csv).unwrap();
    let mut fold_csv = Vec::new();
    nus[0].folds.write_csv(&mut fold_csv).unwrap();
    let folds = FoldAssignment::read_csv(fold_csv.as_slice()).unwrap();
    let injected = NuisanceEstimates::read_csv(nuis_csv.as_slice(), folds).unwrap();
    let again = popsize_detailed(
        &data,
        &PopsizeOptions {
            injected: Some(injected),
            ..opts.clone()
        },
    )
    .unwrap()
    .0;
    assert_eq!(table.rows.len(), again.rows.len());
    for (a, b) in table.rows.iter().zip(&again.rows) {
        assert_eq!((&a.model, a.method), (&b.model, b.method));
        assert!((a.n - b.n).abs() < 1e-9 * a.n, "{} vs {}", a.n, b.n);
        assert!((a.sigman - b.sigman).abs() < 1e-9 * a.sigman);
    }
}
