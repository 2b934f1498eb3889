use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use depthkit_ffi::*;

fn fixture(rel: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/eval8").join(rel);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = dk_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(dk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn metrics_of_an_affine_copy() {
    let gt_values: Vec<f64> = (1..=12).map(f64::from).collect();
    let pred_values: Vec<f64> = gt_values.iter().map(|v| 0.5 * v - 3.0).collect();
    unsafe {
        let (mut gt, mut pred) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(dk_depth_map_new(3, 4, gt_values.as_ptr(), DkSpace::Depth, &mut gt), DkStatus::Ok);
        assert_eq!(dk_depth_map_new(3, 4, pred_values.as_ptr(), DkSpace::Disparity, &mut pred), DkStatus::Ok);
        let mut m = DkMetrics::default();
        assert_eq!(dk_compute_metrics(gt, pred, &mut m), DkStatus::Ok);
        assert_eq!(m.delta1, 1.0);
        assert!(m.absrel < 1e-12);
        assert_eq!(m.valid_pixels, 12);

        let (mut h, mut w) = (0, 0);
        assert_eq!(dk_depth_map_size(gt, &mut h, &mut w), DkStatus::Ok);
        assert_eq!((h, w), (3, 4));
        let mut copy = vec![0.0; 12];
        let mut valid = vec![9u8; 12];
        assert_eq!(dk_depth_map_copy(gt, copy.as_mut_ptr(), valid.as_mut_ptr(), 12), DkStatus::Ok);
        assert_eq!(copy, gt_values);
        assert!(valid.iter().all(|&v| v == 1));
        assert_eq!(dk_depth_map_copy(gt, copy.as_mut_ptr(), ptr::null_mut(), 5), DkStatus::Shape);
        dk_depth_map_free(gt);
        dk_depth_map_free(pred);
    }
}

#[test]
fn evaluation_and_oracle_over_the_fixture() {
    unsafe {
        let manifest = fixture("manifest.json");
        let (mut a, mut b, mut o) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(dk_evaluate(manifest.as_ptr(), fixture("alpha").as_ptr(), ptr::null(), 1, &mut a), DkStatus::Ok);
        let method = CString::new("b").unwrap();
        assert_eq!(dk_evaluate(manifest.as_ptr(), fixture("beta").as_ptr(), method.as_ptr(), 4, &mut b), DkStatus::Ok);
        let mut fraction = 0.0;
        assert_eq!(dk_image_oracle(a, b, DkMetric::Delta1, &mut o, &mut fraction), DkStatus::Ok);
        let (mut da, mut db, mut dor, mut n) = (0.0, 0.0, 0.0, 0);
        dk_report_summary(a, &mut da, ptr::null_mut(), &mut n);
        dk_report_summary(b, &mut db, ptr::null_mut(), ptr::null_mut());
        dk_report_summary(o, &mut dor, ptr::null_mut(), ptr::null_mut());
        assert_eq!(n, 8);
        assert!(dor >= da.max(db));
        assert!((0.0..=100.0).contains(&fraction));

        let mut m = DkMetrics::default();
        let mut id: [std::ffi::c_char; 3] = [0; 3];
        assert_eq!(dk_report_image(a, 7, &mut m, id.as_mut_ptr(), id.len()), DkStatus::Ok);
        assert_eq!(CStr::from_ptr(id.as_ptr()).to_str().unwrap(), "im");
        assert_eq!(dk_report_image(a, 8, &mut m, ptr::null_mut(), 0), DkStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("a.json").to_str().unwrap()).unwrap();
        assert_eq!(dk_report_write(a, path.as_ptr(), DkReportFormat::Json), DkStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(dk_report_read(path.as_ptr(), 0, &mut back), DkStatus::Ok);
        let mut d_back = 0.0;
        dk_report_summary(back, &mut d_back, ptr::null_mut(), ptr::null_mut());
        assert_eq!(d_back, da);
        assert_eq!(dk_report_read(path.as_ptr(), 1, &mut back), DkStatus::InvalidArgument);

        for r in [a, b, o, back] {
            dk_report_free(r);
        }
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut map = ptr::null_mut();
        assert_eq!(dk_depth_map_read_pfm(ptr::null(), DkSpace::Depth, &mut map), DkStatus::NullPointer);
        assert!(last_error().contains("path"));
        let missing = CString::new("/no/such/file.pfm").unwrap();
        assert_eq!(dk_depth_map_read_pfm(missing.as_ptr(), DkSpace::Depth, &mut map), DkStatus::Io);
        assert_eq!(dk_depth_map_read_png16(fixture("gt/img2_mask.png").as_ptr(), fixture("gt/img5.json").as_ptr(), DkSpace::Depth, &mut map), DkStatus::Unsupported);
        let dir = tempfile::tempdir().unwrap();
        let lonely = dir.path().join("x.png");
        std::fs::copy(fixture("gt/img5.png").to_str().unwrap(), &lonely).unwrap();
        let lonely = CString::new(lonely.to_str().unwrap()).unwrap();
        assert_eq!(dk_depth_map_read_png16(lonely.as_ptr(), ptr::null(), DkSpace::Depth, &mut map), DkStatus::MissingSidecar);
        let bad = dir.path().join("bad.pfm");
        std::fs::write(&bad, b"Pf\n2 2\n-1\n\0\0").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(dk_depth_map_read_pfm(bad.as_ptr(), DkSpace::Depth, &mut map), DkStatus::Malformed);
        assert!(last_error().contains("payload"));
        let mut report = ptr::null_mut();
        assert_eq!(dk_evaluate(fixture("manifest.json").as_ptr(), fixture("gt").as_ptr(), ptr::null(), 1, &mut report), DkStatus::MissingPredictions);
        dk_depth_map_free(ptr::null_mut());
        dk_report_free(ptr::null_mut());
    }
}

#[test]
fn ranks_from_a_flat_grid() {
    let scores = [0.9, 0.1, 0.8, 0.2, 0.8, 0.3];
    let metrics = [DkMetric::Delta1, DkMetric::AbsRel];
    let mut avg = [0.0; 3];
    let mut rounded = [0.0; 3];
    unsafe {
        assert_eq!(dk_average_rank(scores.as_ptr(), 3, 2, metrics.as_ptr(), DkTieRule::Fractional, avg.as_mut_ptr(), rounded.as_mut_ptr()), DkStatus::Ok);
        assert_eq!(avg, [1.0, 2.25, 2.75]);
        assert_eq!(rounded, [1.0, 2.3, 2.8]);
        assert_eq!(dk_average_rank(scores.as_ptr(), 3, 2, metrics.as_ptr(), DkTieRule::Competition, avg.as_mut_ptr(), ptr::null_mut()), DkStatus::Ok);
        assert_eq!(avg, [1.0, 2.0, 2.5]);
        let nan = [f64::NAN, 0.1];
        assert_eq!(dk_average_rank(nan.as_ptr(), 1, 2, metrics.as_ptr(), DkTieRule::Competition, avg.as_mut_ptr(), ptr::null_mut()), DkStatus::IncompleteGrid);
    }
}
