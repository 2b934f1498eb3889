//! End-to-end evaluation of the eight-image fixture against the metrics
//! computed by `fixtures/generate_eval_fixture.py`.

use std::path::PathBuf;

use depthkit::combine::{average_dataset, image_oracle, Choice};
use depthkit::io::load_manifest;
use depthkit::metrics::{evaluate_dataset, Metric, MetricReport, PredictionDir};
use serde_json::Value;

const TOL: f64 = 1e-9;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eval8")
}

fn expected() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture().join("expected.json")).unwrap()).unwrap()
}

fn check_report(report: &MetricReport, expected: &Value, key: &str) {
    let images = expected["images"].as_array().unwrap();
    assert_eq!(report.per_image.len(), images.len());
    for (row, want) in report.per_image.iter().zip(images) {
        let want = &want[key];
        assert!((row.delta1 - want["delta1"].as_f64().unwrap()).abs() < TOL, "{key} {} delta1 {}", row.id, row.delta1);
        assert!((row.absrel - want["absrel"].as_f64().unwrap()).abs() < TOL, "{key} {} absrel {}", row.id, row.absrel);
        assert_eq!(row.valid_pixels as u64, want["valid_pixels"].as_u64().unwrap(), "{key} {}", row.id);
    }
    let agg = &expected["aggregates"][key];
    assert!((report.aggregate(Metric::Delta1) - agg["delta1"].as_f64().unwrap()).abs() < TOL);
    assert!((report.aggregate(Metric::AbsRel) - agg["absrel"].as_f64().unwrap()).abs() < TOL);
}

#[test]
fn per_method_metrics_match_reference() {
    let m = load_manifest(fixture().join("manifest.json")).unwrap();
    let exp = expected();
    for name in ["alpha", "beta"] {
        let report = evaluate_dataset(&m, &PredictionDir::new(fixture().join(name)), name, 1).unwrap();
        check_report(&report, &exp, name);
        assert_eq!(report.per_image[2].category.as_deref(), Some("indoor"));
    }
}

#[test]
fn pixel_average_matches_reference() {
    let m = load_manifest(fixture().join("manifest.json")).unwrap();
    let a = PredictionDir::new(fixture().join("alpha"));
    let b = PredictionDir::new(fixture().join("beta"));
    let avg = average_dataset(&m, &a, &b, 2).unwrap();
    let report = evaluate_dataset(&m, &avg, "average", 1).unwrap();
    check_report(&report, &expected(), "average");
}

#[test]
fn oracle_matches_reference_and_dominates() {
    let m = load_manifest(fixture().join("manifest.json")).unwrap();
    let ra = evaluate_dataset(&m, &PredictionDir::new(fixture().join("alpha")), "alpha", 1).unwrap();
    let rb = evaluate_dataset(&m, &PredictionDir::new(fixture().join("beta")), "beta", 1).unwrap();
    let exp = expected();
    for metric in [Metric::Delta1, Metric::AbsRel] {
        let o = image_oracle(&ra, &rb, metric).unwrap();
        let want = &exp["aggregates"][format!("oracle_{}", metric.name())];
        let picks: Vec<&str> = o.choices.iter().map(|c| if *c == Choice::A { "alpha" } else { "beta" }).collect();
        let want_picks: Vec<&str> = want["choices"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        assert_eq!(picks, want_picks);
        assert_eq!(o.fraction_a, want["fraction_alpha"].as_f64().unwrap());
        assert_eq!(o.fraction_b, want["fraction_beta"].as_f64().unwrap());
        let got = o.report.aggregate(metric);
        assert!((got - want[metric.name()].as_f64().unwrap()).abs() < TOL);
        let best = if metric.higher_is_better() { ra.aggregate(metric).max(rb.aggregate(metric)) } else { ra.aggregate(metric).min(rb.aggregate(metric)) };
        assert!(if metric.higher_is_better() { got >= best } else { got <= best });
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let m = load_manifest(fixture().join("manifest.json")).unwrap();
    let src = PredictionDir::new(fixture().join("beta"));
    let one = evaluate_dataset(&m, &src, "beta", 1).unwrap();
    let many = evaluate_dataset(&m, &src, "beta", 8).unwrap();
    assert_eq!(one, many);
}
