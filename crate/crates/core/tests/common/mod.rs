#![allow(dead_code)]

use std::path::PathBuf;

use caprec::bench::{Arm, MetricsRow};
use caprec::estimator::{EstimateRow, Method, ResultTable};
use caprec::ListPair;

/// Nine rows over the three pairs of a three-list study.
pub fn three_pair_table() -> ResultTable {
    let mut rows = Vec::new();
    let pairs = [(1, 2), (1, 3), (2, 3)];
    let spec = [
        ("gam", Method::DR),
        ("gam", Method::PI),
        ("logit", Method::DR),
    ];
    for (p, &(j, k)) in pairs.iter().enumerate() {
        for (m, &(model, method)) in spec.iter().enumerate() {
            let psi = 0.55 + 0.07 * p as f64 + 0.02 * m as f64;
            let n = 2100.0 / psi;
            let sigman = 60.0 + 15.0 * m as f64 + 10.0 * p as f64;
            rows.push(EstimateRow {
                listpair: ListPair { j, k },
                model: model.into(),
                method,
                psi,
                sigma: 0.4 + 0.01 * m as f64,
                n,
                sigman,
                cin_l: (n - 1.96 * sigman).max(2100.0),
                cin_u: n + 1.96 * sigman,
                condvar: None,
                degenerate: false,
            });
        }
    }
    ResultTable {
        rows,
        alpha: 0.05,
        n_obs: 2100,
        warnings: Vec::new(),
    }
}

/// Four metrics rows: two arms by two methods.
pub fn four_metrics_rows() -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for (a, arm) in [Arm::CorX, Arm::MisX].into_iter().enumerate() {
        for (m, method) in [Method::DR, Method::PI].into_iter().enumerate() {
            let bias = [[-4.0, 12.5], [-9.0, -160.0]][a][m];
            rows.push(MetricsRow {
                arm,
                learner: "rangerlogit".into(),
                method,
                mean_bias: bias,
                mean_abs_bias: bias.abs() + 30.0,
                rmse: bias.abs() + 45.0,
                coverage: [[0.95, 0.93], [0.92, 0.41]][a][m],
                reps_used: 100,
                reps_failed: 0,
            });
        }
    }
    rows
}

/// Compare `actual` with `tests/golden/<name>`. `UPDATE_GOLDEN=1` rewrites the
/// snapshot instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path)
        .map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1)", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .map_or_else(|| "length".to_string(), |i| format!("line {}", i + 1));
        Err(format!("{name} differs from snapshot at {line}"))
    }
}
