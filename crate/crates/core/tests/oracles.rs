//! Special functions and t-statistics against frozen 50-digit references
//! produced by `fixtures/gen_fixtures.py`.

use serde::Deserialize;
use simcrit::numerics::{expected_gc, normal_tail, poisson_tail, student_t_tail};
use simcrit::{Dataset, Design};

#[derive(Deserialize)]
struct Oracles {
    normal_tail: Vec<Point>,
    student_t_tail: Vec<Point>,
    expected_gc: Vec<Point>,
    poisson_tail: Vec<Point>,
    t_rows: Vec<Row>,
}

#[derive(Deserialize)]
struct Point {
    #[serde(default)]
    t: f64,
    #[serde(default)]
    df: f64,
    #[serde(default)]
    c: f64,
    #[serde(default, rename = "lambda")]
    lam: f64,
    #[serde(default)]
    k: u64,
    value: String,
}

#[derive(Deserialize)]
struct Row {
    row: Option<Vec<f64>>,
    first: Option<Vec<f64>>,
    second: Option<Vec<f64>>,
    t: String,
    df: Option<String>,
}

fn oracles() -> Oracles {
    let text = include_str!("fixtures/oracles.json");
    serde_json::from_str(text).expect("fixture parses")
}

fn num(s: &str) -> f64 {
    s.parse().expect("numeric fixture")
}

fn rel_err(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}

#[test]
fn normal_tail_matches_quadrature() {
    for p in oracles().normal_tail {
        let want = num(&p.value);
        let got = normal_tail(p.t).unwrap();
        if p.t.abs() <= 8.0 {
            assert!(rel_err(got, want) <= 1e-12, "t = {}: {got} vs {want}", p.t);
        } else {
            // deep tail: full relative accuracy until the value underflows
            let ok = rel_err(got, want) <= 1e-12 || (got - want).abs() <= 1e-300;
            assert!(ok, "t = {}: {got} vs {want}", p.t);
        }
    }
}

#[test]
fn student_t_tail_matches_quadrature() {
    for p in oracles().student_t_tail {
        let want = num(&p.value);
        let got = student_t_tail(p.t, p.df).unwrap();
        assert!(
            rel_err(got, want) <= 1e-10,
            "t = {}, df = {}: {got} vs {want}",
            p.t,
            p.df
        );
    }
}

#[test]
fn poisson_tail_matches_summation() {
    let points = oracles().poisson_tail;
    assert_eq!(points.len(), 200);
    for p in points {
        let want = num(&p.value);
        let got = poisson_tail(p.lam, p.k).unwrap();
        assert!(
            (got - want).abs() <= 1e-12,
            "lambda = {}, k = {}: {got} vs {want}",
            p.lam,
            p.k
        );
    }
}

#[test]
fn expected_gc_matches_quadrature() {
    for p in oracles().expected_gc {
        let want = num(&p.value);
        let got = expected_gc(p.c).unwrap();
        assert!(rel_err(got, want) <= 1e-12, "c = {}: {got} vs {want}", p.c);
    }
}

#[test]
fn t_statistics_match_exact_arithmetic() {
    let rows = oracles().t_rows;
    assert_eq!(rows.len(), 1000);
    for (i, r) in rows.into_iter().enumerate() {
        let want = num(&r.t);
        let (values, n_cols, design) = match (r.row, r.first, r.second) {
            (Some(row), _, _) => {
                let n = row.len();
                (row, n, Design::OneSample)
            }
            (None, Some(a), Some(b)) => {
                let second = (0..a.len() + b.len()).map(|j| j >= a.len()).collect();
                let n = a.len() + b.len();
                ([a, b].concat(), n, Design::TwoSample { second })
            }
            _ => panic!("row {i} has no data"),
        };
        let data = Dataset::new(values, n_cols, vec![format!("r{i}")], design).unwrap();
        let tv = data.t_statistics();
        let got = tv.stats()[0].expect("non-degenerate row");
        assert!(rel_err(got, want) <= 1e-10, "row {i}: {got} vs {want}");
        if let Some(df) = r.df {
            assert!(rel_err(tv.df()[0], num(&df)) <= 1e-10, "row {i} df");
        }
    }
}
