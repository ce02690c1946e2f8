use super::*;

fn proba(rows: &[&[f64]]) -> Tensor {
    Tensor::matrix(rows)
}

#[test]
fn perfect_prediction() {
    let y = [0, 1, 2, 1, 0];
    let m = classification_metrics(&y, &y, 3).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn half_right_binary() {
    // confusion: tp0=1 fp0=1 fn0=1, same for class 1 -> p = r = f1 = 0.5
    let m = classification_metrics(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.f1, 0.5);
}

#[test]
fn constant_prediction_zero_fill() {
    // class 0: precision 2/4; class 1 is never predicted -> 0
    let m = classification_metrics(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.precision, 0.25);
    assert_eq!(m.recall, 0.5);
}

#[test]
fn classification_errors() {
    assert!(matches!(classification_metrics(&[], &[], 2), Err(Error::Contract(_))));
    assert!(matches!(classification_metrics(&[0, 2], &[0, 1], 2), Err(Error::LabelRange { .. })));
}

#[test]
fn macro_metrics_invariant_under_relabeling() {
    let y = [0, 1, 2, 2, 1, 0, 0];
    let p = [0, 2, 2, 1, 1, 0, 1];
    let perm = [2, 0, 1];
    let yp: Vec<usize> = y.iter().map(|c| perm[*c]).collect();
    let pp: Vec<usize> = p.iter().map(|c| perm[*c]).collect();
    let a = classification_metrics(&y, &p, 3).unwrap();
    let b = classification_metrics(&yp, &pp, 3).unwrap();
    assert!((a.f1 - b.f1).abs() < 1e-15 && (a.precision - b.precision).abs() < 1e-15);
    assert_eq!(a.accuracy, b.accuracy);
}

#[test]
fn auroc_extremes() {
    let s = proba(&[&[0.9, 0.1], &[0.8, 0.2], &[0.3, 0.7], &[0.1, 0.9]]);
    assert_eq!(auroc_ovr(&[0, 0, 1, 1], &s).unwrap(), 1.0);
    let flat = Tensor::full(&[4, 2], 0.5);
    assert_eq!(auroc_ovr(&[0, 0, 1, 1], &flat).unwrap(), 0.5);
}

#[test]
fn auroc_six_sample_by_hand() {
    // positives {0.8, 0.4, 0.6}, negatives {0.5, 0.4, 0.1}
    // wins: 0.8 beats 3, 0.6 beats 3, 0.4 beats 0.1 and ties 0.4 -> 1.5; total 7.5 / 9
    let pos = [true, true, true, false, false, false];
    let s = [0.8, 0.4, 0.6, 0.5, 0.4, 0.1];
    assert!((binary_auroc(&pos, &s).unwrap() - 7.5 / 9.0).abs() < 1e-15);
}

#[test]
fn auroc_complement_without_ties() {
    let pos = [true, false, true, false, false];
    let s = [0.3, 0.1, 0.9, 0.7, 0.2];
    let neg: Vec<f64> = s.iter().map(|v| -v).collect();
    assert!((binary_auroc(&pos, &s).unwrap() + binary_auroc(&pos, &neg).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn auprc_by_hand() {
    // ranking: + (P=1,R=1/2), - , + (P=2/3,R=1) -> 1/2 + 1/2 * 2/3
    let pos = [true, false, true];
    let s = [0.9, 0.5, 0.2];
    assert!((binary_auprc(&pos, &s).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    assert_eq!(binary_auprc(&[true, true, false], &[0.9, 0.8, 0.1]), Some(1.0));
}

#[test]
fn degenerate_class_skipped_then_error() {
    let s = proba(&[&[0.6, 0.4], &[0.3, 0.7]]);
    assert!(matches!(auroc_ovr(&[1, 1], &s), Err(Error::DegenerateMetric(_))));
    assert!(matches!(auprc(&[0, 0], &s), Err(Error::DegenerateMetric(_))));
    // class 2 has no positives and is skipped
    let s3 = proba(&[&[0.6, 0.3, 0.1], &[0.2, 0.7, 0.1]]);
    assert_eq!(auroc_ovr(&[0, 1], &s3).unwrap(), 1.0);
}

#[test]
fn evaluate_and_report() {
    let s = proba(&[&[0.9, 0.1], &[0.4, 0.6], &[0.3, 0.7], &[0.2, 0.8]]);
    let m = evaluate(&[0, 0, 1, 1], &s).unwrap();
    assert_eq!(m.accuracy, 0.75);
    assert_eq!(m.auroc, 1.0);
    let report = EvalReport::new(vec![(1, m), (2, RunMetrics { accuracy: 0.25, ..m })]).unwrap();
    assert_eq!(report.mean()[0], 0.5);
    assert!((report.std()[0] - 0.125f64.sqrt()).abs() < 1e-15);
    let csv = report.to_csv();
    assert!(csv.starts_with("run,seed,accuracy,precision,recall,f1,auroc,auprc\nseed,1,0.75,"));
    assert_eq!(csv.lines().count(), 5);
    assert!(EvalReport::new(vec![]).is_err());
}

#[test]
fn std_of_single_run_is_zero() {
    assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!((m, s), (2.0, 1.0));
}
