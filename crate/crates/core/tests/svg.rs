mod common;

use caprec::estimator::ResultTable;
use caprec::svg::forest_plot;

#[test]
fn three_pairs_in_three_facets() {
    let table = common::three_pair_table();
    let svg = forest_plot(&table, None);
    for pair in ["lists 1,2", "lists 1,3", "lists 2,3"] {
        assert_eq!(svg.matches(&format!(">{pair}</text>")).count(), 1, "{pair}");
    }
    assert_eq!(svg.matches("<circle").count(), 9);
    assert!(!svg.contains("stroke-dasharray"));
    common::check_golden("forest_three_pairs.svg", &forest_plot(&table, Some(3500.0))).unwrap();
}

#[test]
fn single_row() {
    let mut table = common::three_pair_table();
    table.rows.truncate(1);
    let svg = forest_plot(&table, None);
    assert_eq!(svg.matches("<circle").count(), 1);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn survives_csv_round_trip() {
    let table = common::three_pair_table();
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let back = ResultTable::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.rows.len(), 9);
    assert_eq!(forest_plot(&back, None).matches("<circle").count(), 9);
}
