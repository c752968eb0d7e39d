use super::*;
use crate::crossfit::FoldAssignment;
use crate::dataset::Covariate;

const Q: QTriple = QTriple {
    q1: 0.8,
    q2: 0.5,
    q12: 0.2,
};

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

fn captures(profiles: &[(u8, u8)]) -> Vec<Vec<u8>> {
    profiles.iter().map(|&(a, b)| vec![a, b]).collect()
}

fn two_list(profiles: &[(u8, u8)], covariates: Vec<Covariate>) -> Dataset {
    Dataset::new(
        vec!["y1".into(), "y2".into()],
        captures(profiles),
        covariates,
    )
    .unwrap()
}

/// Twenty rows: eight (1,0), seven (0,1), five (1,1).
fn fixture() -> Dataset {
    let mut p = vec![(1, 0); 8];
    p.extend(vec![(0, 1); 7]);
    p.extend(vec![(1, 1); 5]);
    two_list(&p, vec![])
}

fn injected(data: &Dataset, q: QTriple) -> NuisanceEstimates {
    let n = data.n_obs();
    NuisanceEstimates {
        pair: ListPair { j: 1, k: 2 },
        model_names: vec!["const".into()],
        estimates: vec![vec![q; n]],
        folds: FoldAssignment::from_labels((0..n).map(|i| i % 5 + 1).collect()).unwrap(),
    }
}

fn phis(values: &[f64]) -> InfluenceValues {
    InfluenceValues {
        phi: values.to_vec(),
        pair: ListPair { j: 1, k: 2 },
        model: "m".into(),
    }
}

#[test]
fn gamma_and_phi_by_hand() {
    close(gamma(Q), 0.5, 1e-15);
    assert_eq!(gamma(QTriple::new(1.0, 1.0, 1.0)), 1.0);
    close(gamma(QTriple::new(0.5, 0.5, 0.4)), 1.6, 1e-15);
    close(phi(1, 0, Q), 2.5, 1e-12);
    close(phi(0, 1, Q), 4.0, 1e-12);
    close(phi(1, 1, Q), -3.5, 1e-12);
}

#[test]
fn psi_dr_examples() {
    let est = estimate_psi_dr(&phis(&[2.5, 4.0, -3.5, 5.0]));
    assert_eq!(
        est,
        PsiEstimate {
            psi: 0.5,
            degenerate: false
        }
    );
    assert_eq!(estimate_psi_dr(&phis(&[1.0; 6])).psi, 1.0);
    let d = estimate_psi_dr(&phis(&[-1.0, 0.5]));
    assert_eq!(
        d,
        PsiEstimate {
            psi: 1.0,
            degenerate: true
        }
    );
    // means below one would give psi above one
    assert_eq!(estimate_psi_dr(&phis(&[0.5, 0.9])).psi, 1.0);
}

#[test]
fn psi_dr_converges_under_constant_truth() {
    use rand::Rng;
    // list probabilities 0.4 and 0.25 for everyone: psi = 1 - 0.6 * 0.75
    let (p1, p2) = (0.4, 0.25);
    let psi = 1.0 - (1.0 - p1) * (1.0 - p2);
    let truth = QTriple::new(p1 / psi, p2 / psi, p1 * p2 / psi);
    let mut rng = seed::rng(17);
    let mut profiles = Vec::new();
    while profiles.len() < 10_000 {
        let a = u8::from(rng.gen::<f64>() < p1);
        let b = u8::from(rng.gen::<f64>() < p2);
        if a + b > 0 {
            profiles.push((a, b));
        }
    }
    let data = two_list(&profiles, vec![]);
    let v = InfluenceValues::compute(
        &data,
        ListPair { j: 1, k: 2 },
        "m",
        &vec![truth; data.n_obs()],
    )
    .unwrap();
    close(estimate_psi_dr(&v).psi, psi, 0.02);
}

#[test]
fn psi_pi_examples() {
    close(estimate_psi_pi(&[Q; 7]), 0.5, 1e-15);
    assert_eq!(estimate_psi_pi(&[QTriple::new(1.0, 1.0, 1.0); 3]), 1.0);
    close(
        estimate_psi_pi(&[Q, QTriple::new(0.9, 0.6, 0.27)]),
        0.5,
        1e-12,
    );
}

#[test]
fn variance_examples() {
    let n_obs = 4530;
    close(sigman_from(0.440, 0.910, n_obs), 37.03, 0.05);
    close(sigman_from(0.478, 0.910, n_obs), 39.07, 0.05);
    let (sigma, sigman) = variance_n(&phis(&[2.0; 100]), 0.5, 100).unwrap();
    assert_eq!(sigma, 0.0);
    close(sigman, 200f64.sqrt(), 1e-12);
    assert_eq!(variance_n(&phis(&[1.0; 10]), 1.0, 10).unwrap(), (0.0, 0.0));
    assert!(variance_n(&phis(&[1.0]), 1.0, 1).is_err());
    assert!(variance_n(&phis(&[1.0, 2.0]), 0.0, 2).is_err());
}

#[test]
fn sample_sd_is_unbiased() {
    let (sigma, _) = variance_n(&phis(&[1.0, 2.0, 3.0, 4.0]), 0.5, 4).unwrap();
    close(sigma, (5.0f64 / 3.0).sqrt(), 1e-14);
}

#[test]
fn interval_examples() {
    let (lo, hi) = confidence_interval(4978.0, 37.032, 0.05);
    assert_eq!((lo.round(), hi.round()), (4905.0, 5051.0));
    close(lo, 4905.42, 0.01);
    let (lo, hi) = confidence_interval(1000.0, 100.0, 0.05);
    close(lo, 804.0, 0.01);
    close(hi, 1196.0, 0.01);
    assert_eq!(confidence_interval(321.0, 0.0, 0.05), (321.0, 321.0));
}

#[test]
fn remainder_is_zero_at_truth() {
    let truth: Vec<QTriple> = (0..50)
        .map(|i| {
            let t = i as f64 / 50.0;
            QTriple::new(0.5 + 0.4 * t, 0.7 - 0.3 * t, 0.2 + 0.1 * t)
        })
        .collect();
    assert_eq!(remainder_r2(&truth, &truth).unwrap(), 0.0);
    assert!(remainder_r2(&truth, &truth[1..]).is_err());
}

#[test]
fn remainder_first_term_vanishes_when_only_q1_moves() {
    let truth: Vec<QTriple> = (0..100)
        .map(|i| QTriple::new(0.6 + 0.003 * i as f64, 0.55, 0.3))
        .collect();
    let est: Vec<QTriple> = truth
        .iter()
        .map(|t| QTriple::new(t.q1 + 0.05, t.q2, t.q12))
        .collect();
    // with q2 and q12 exact, only the gamma mismatch term is left, and it
    // is multiplied by q12 - q12_hat = 0
    assert_eq!(remainder_r2(&truth, &est).unwrap(), 0.0);
}

#[test]
fn remainder_is_quadratic_when_q1_and_q2_move() {
    let t = QTriple::new(0.7, 0.6, 0.35);
    let r = |eps: f64| remainder_r2(&[t], &[QTriple::new(t.q1 + eps, t.q2 + eps, t.q12)]).unwrap();
    let (r1, r2) = (r(1e-2).abs(), r(1e-3).abs());
    close((r1 / r2).log10(), 2.0, 0.05);
    // leading term is -eps^2 / q12
    close(r(1e-3) / 1e-6, -1.0 / t.q12, 1e-2);
}

#[test]
fn injected_constants_give_hand_values() {
    let data = fixture();
    let opts = PopsizeOptions {
        methods: vec![Method::DR, Method::PI],
        injected: Some(injected(&data, Q)),
        ..Default::default()
    };
    let table = popsize(&data, &opts).unwrap();
    assert_eq!(table.rows.len(), 2);
    let dr = &table.rows[0];
    let pi = &table.rows[1];
    assert_eq!((dr.method, pi.method), (Method::DR, Method::PI));
    let hand = (8.0 * 2.5 + 7.0 * 4.0 + 5.0 * -3.5) / 20.0;
    close(1.0 / dr.psi, hand, 1e-12);
    assert_eq!(pi.psi, 0.5);
    assert_eq!(dr.sigma, pi.sigma);
    assert_eq!(dr.n, 20.0 / dr.psi);
    assert_eq!(pi.n, 40.0);
}

#[test]
fn pi_ignores_histories_with_constant_nuisances() {
    let a = fixture();
    let b = two_list(&[(1, 1); 20], vec![]);
    let run = |d: &Dataset| {
        let opts = PopsizeOptions {
            methods: vec![Method::DR, Method::PI],
            injected: Some(injected(d, Q)),
            ..Default::default()
        };
        popsize(d, &opts).unwrap()
    };
    let (ta, tb) = (run(&a), run(&b));
    assert_eq!(ta.rows[1].psi, tb.rows[1].psi);
    assert_ne!(ta.rows[0].psi, tb.rows[0].psi);
    // all (1,1): mean phi is -3.5
    assert!(tb.rows[0].degenerate);
    assert_eq!(tb.rows[0].n, 20.0);
}

#[test]
fn sigman_identity_and_interval_shape() {
    let data = fixture();
    let opts = PopsizeOptions {
        methods: vec![Method::DR, Method::PI],
        injected: Some(injected(&data, QTriple::new(0.7, 0.6, 0.35))),
        alpha: 0.1,
        ..Default::default()
    };
    for r in popsize(&data, &opts).unwrap().rows {
        let n = 20.0;
        assert_eq!(r.sigman * r.sigman, {
            let s = sigman_from(r.sigma, r.psi, 20);
            s * s
        });
        close(
            r.sigman.powi(2),
            n * r.sigma.powi(2) + n * (1.0 - r.psi) / r.psi.powi(2),
            1e-9,
        );
        assert!(r.n >= n);
        let z = z_two_sided(0.1);
        if r.cin_l > n {
            close((r.cin_l + r.cin_u) / 2.0, r.n, 1e-9);
        }
        close(r.cin_u - r.n, z * r.sigman, 1e-9);
    }
}

#[test]
fn duplicating_rows_scales_n_only() {
    let data = fixture();
    let idx: Vec<usize> = (0..20).chain(0..20).collect();
    let doubled = data.select_rows(&idx);
    let q = QTriple::new(0.7, 0.6, 0.35);
    let run = |d: &Dataset| {
        let opts = PopsizeOptions {
            methods: vec![Method::DR, Method::PI],
            injected: Some(injected(d, q)),
            ..Default::default()
        };
        popsize(d, &opts).unwrap()
    };
    let (a, b) = (run(&data), run(&doubled));
    for (x, y) in a.rows.iter().zip(&b.rows) {
        close(x.psi, y.psi, 1e-12);
        close(y.n, 2.0 * x.n, 1e-9);
    }
}

#[test]
fn injection_is_validated() {
    let data = fixture();
    let mut inj = injected(&data, Q);
    inj.estimates[0].pop();
    let opts = PopsizeOptions {
        injected: Some(inj),
        ..Default::default()
    };
    assert!(matches!(popsize(&data, &opts), Err(Error::Data(_))));
    let opts = PopsizeOptions {
        injected: Some(injected(&data, Q)),
        pairs: PairSelection::All,
        ..Default::default()
    };
    assert!(popsize(&data, &opts).is_err());
    let opts = PopsizeOptions {
        methods: vec![],
        ..Default::default()
    };
    assert!(popsize(&data, &opts).is_err());
    assert!(matches!(
        "TMLE".parse::<Method>(),
        Err(Error::NotImplemented(_))
    ));
}

fn simulated(k: usize, n: usize, seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = seed::rng(seed);
    let mut caps = Vec::new();
    let mut x = Vec::new();
    let mut lvl = Vec::new();
    while caps.len() < n {
        let xi: f64 = rng.gen();
        let row: Vec<u8> = (0..k)
            .map(|j| {
                u8::from(rng.gen::<f64>() < crate::learners::expit(-0.5 + xi + 0.2 * j as f64))
            })
            .collect();
        if row.contains(&1) {
            caps.push(row);
            x.push(xi);
            lvl.push(["a", "b", "c"][caps.len() % 3].to_owned());
        }
    }
    Dataset::new(
        (1..=k).map(|j| format!("y{j}")).collect(),
        caps,
        vec![
            Covariate::Numeric {
                name: "x".into(),
                values: x,
            },
            Covariate::Categorical {
                name: "grp".into(),
                values: lvl,
            },
        ],
    )
    .unwrap()
}

#[test]
fn all_pairs_for_three_lists() {
    let data = simulated(3, 300, 4);
    let opts = PopsizeOptions {
        kinds: vec![LearnerKind::Logit, LearnerKind::Gam, LearnerKind::Mlogit],
        pairs: PairSelection::All,
        ..Default::default()
    };
    let table = popsize(&data, &opts).unwrap();
    assert_eq!(table.rows.len(), 9);
    let labels: Vec<String> = table.rows.iter().map(|r| r.listpair.label()).collect();
    assert_eq!(labels.iter().filter(|l| *l == "1,2").count(), 3);
    assert_eq!(labels.iter().filter(|l| *l == "1,3").count(), 3);
    assert_eq!(labels.iter().filter(|l| *l == "2,3").count(), 3);
    let pair_bad = PopsizeOptions {
        pairs: PairSelection::One(ListPair { j: 2, k: 4 }),
        ..opts
    };
    assert!(popsize(&data, &pair_bad).is_err());
}

#[test]
fn conditional_rows_per_level() {
    let data = simulated(2, 300, 5);
    let opts = PopsizeOptions {
        kinds: vec![LearnerKind::Logit, LearnerKind::Gam],
        methods: vec![Method::DR, Method::PI],
        ..Default::default()
    };
    let table = popsize_cond(&data, "grp", &opts).unwrap();
    assert_eq!(table.rows.len(), 12);
    for lvl in ["a", "b", "c"] {
        assert_eq!(
            table
                .rows
                .iter()
                .filter(|r| r.condvar.as_deref() == Some(lvl))
                .count(),
            4
        );
    }
    assert!(matches!(
        popsize_cond(&data, "x", &opts),
        Err(Error::Data(_))
    ));
    assert!(popsize_cond(&data, "nope", &opts).is_err());
}

#[test]
fn single_level_matches_unconditional() {
    let data = simulated(2, 200, 6);
    let one = data
        .without_covariate("grp")
        .with_covariates({
            let mut c = data.without_covariate("grp").covariates().to_vec();
            c.push(Covariate::Categorical {
                name: "g".into(),
                values: vec!["only".into(); 200],
            });
            c
        })
        .unwrap();
    let opts = PopsizeOptions {
        kinds: vec![LearnerKind::Logit],
        methods: vec![Method::DR, Method::PI],
        ..Default::default()
    };
    let cond = popsize_cond(&one, "g", &opts).unwrap();
    let plain = popsize(&data.without_covariate("grp"), &opts).unwrap();
    for (a, b) in cond.rows.iter().zip(&plain.rows) {
        assert_eq!(a.psi, b.psi);
        assert_eq!(a.sigman, b.sigman);
    }
}

#[test]
fn small_levels_are_skipped_with_warning() {
    let mut data = simulated(2, 60, 7);
    let mut lv: Vec<String> = vec!["big".into(); 60];
    lv[0] = "tiny".into();
    lv[1] = "tiny".into();
    let covs = vec![
        data.covariate("x").unwrap().clone(),
        Covariate::Categorical {
            name: "grp".into(),
            values: lv,
        },
    ];
    data = data.with_covariates(covs).unwrap();
    let opts = PopsizeOptions {
        kinds: vec![LearnerKind::Logit],
        ..Default::default()
    };
    let t = popsize_cond(&data, "grp", &opts).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.warnings.len(), 1);
    assert!(t.warnings[0].contains("tiny"));
}

#[test]
fn csv_round_trip() {
    let data = simulated(2, 200, 8);
    let opts = PopsizeOptions {
        kinds: vec![LearnerKind::Logit],
        methods: vec![Method::DR, Method::PI],
        ..Default::default()
    };
    for table in [
        popsize(&data, &opts).unwrap(),
        popsize_cond(&data, "grp", &opts).unwrap(),
    ] {
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("listpair,model,method,psi,sigma,n,sigman,cin.l,cin.u"));
        let back = ResultTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), table.rows.len());
        for (a, b) in back.rows.iter().zip(&table.rows) {
            assert_eq!(
                (a.psi, a.n, a.cin_l, &a.condvar),
                (b.psi, b.n, b.cin_l, &b.condvar)
            );
        }
    }
}

#[test]
fn display_rounds() {
    let row = EstimateRow {
        listpair: ListPair { j: 1, k: 2 },
        model: "gam".into(),
        method: Method::DR,
        psi: 0.91004,
        sigma: 0.4401,
        n: 4977.8,
        sigman: 37.0321,
        cin_l: 4905.4,
        cin_u: 5050.6,
        condvar: None,
        degenerate: false,
    };
    let t = ResultTable {
        rows: vec![row],
        alpha: 0.05,
        n_obs: 4530,
        warnings: vec![],
    };
    let s = t.to_string();
    let last = s.lines().nth(1).unwrap();
    let cells: Vec<&str> = last.split_whitespace().collect();
    assert_eq!(
        cells,
        ["1,2", "gam", "DR", "0.910", "0.440", "4978", "37.032", "4905", "5051"]
    );
}
