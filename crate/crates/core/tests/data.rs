use catgen_core::crossfit::{cross_fit, NuisanceConfig, TreatmentProbability};
use catgen_core::data::{diagnose_from_predictions, diagnose_overlap, read_cohort, write_cohort, Cohort, OutcomeKind, SchemaConfig};
use catgen_core::learners::LearnerSpec;
use catgen_core::simulation::DgpSpec;
use catgen_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schema() -> SchemaConfig {
    SchemaConfig {
        s_column: "s".into(),
        a_column: "a".into(),
        y_column: "y".into(),
        covariate_columns: vec!["x1".into(), "x2".into(), "x3".into()],
        effect_modifier: "x2".into(),
        outcome_kind: OutcomeKind::Continuous,
        lenient: false,
    }
}

fn small_cohort(seed: u64) -> Cohort {
    DgpSpec::continuous(300, 120).calibrate().unwrap().generate_cohort(seed).unwrap()
}

#[test]
fn csv_round_trip_is_bitwise() {
    let cohort = small_cohort(4);
    let mut buf = Vec::new();
    write_cohort(&cohort, &schema(), &mut buf).unwrap();
    let back = read_cohort(buf.as_slice(), &schema()).unwrap();
    assert_eq!(back, cohort);
    let mut again = Vec::new();
    write_cohort(&back, &schema(), &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn participation_partitions_the_rows() {
    let cohort = small_cohort(5);
    let mut ids = cohort.trial_indices();
    ids.extend((0..cohort.n()).filter(|&i| cohort.s()[i] == 0));
    ids.sort_unstable();
    assert_eq!(ids, (0..cohort.n()).collect::<Vec<_>>());
    assert_eq!(cohort.n_trial() + cohort.n_nontrial(), cohort.n());
}

#[test]
fn reads_a_cohort_of_1686_with_731_participants() {
    let mut rng = ChaCha8Rng::seed_from_u64(1686);
    let mut text = String::from("x1,x2,x3,s,a,y\n");
    let mut rows: Vec<u8> = [vec![1u8; 731], vec![0u8; 955]].concat();
    rows.shuffle(&mut rng);
    for (i, s) in rows.iter().enumerate() {
        let x: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        if *s == 1 {
            text += &format!("{},{},{},1,{},{}\n", x[0], x[1], x[2], i % 2, rng.random::<f64>());
        } else {
            text += &format!("{},{},{},0,NA,\n", x[0], x[1], x[2]);
        }
    }
    let cohort = read_cohort(text.as_bytes(), &schema()).unwrap();
    assert_eq!((cohort.n(), cohort.n_trial(), cohort.n_nontrial()), (1686, 731, 955));
}

#[test]
fn schema_and_row_errors_are_specific() {
    let missing = "x1,x2,s,a,y\n0,0,1,1,1\n";
    assert!(matches!(read_cohort(missing.as_bytes(), &schema()), Err(Error::Schema(m)) if m.contains("x3")));
    let bad_s = "x1,x2,x3,s,a,y\n0,0,0,1,1,1\n0,0,0,2,1,1\n";
    assert!(matches!(read_cohort(bad_s.as_bytes(), &schema()), Err(Error::Parse { row: 2, .. })));
    let no_y = "x1,x2,x3,s,a,y\n0,0,0,1,1,1\n0,0,0,1,0,\n0,0,0,0,,\n";
    assert!(matches!(read_cohort(no_y.as_bytes(), &schema()), Err(Error::Data { row: 2, .. })));
    let mut binary = schema();
    binary.outcome_kind = OutcomeKind::Binary;
    let not_binary = "x1,x2,x3,s,a,y\n0,0,0,1,1,1\n0,0,0,1,0,0.5\n0,0,0,0,,\n";
    assert!(matches!(read_cohort(not_binary.as_bytes(), &binary), Err(Error::Data { row: 2, .. })));
}

#[test]
fn lenient_mode_drops_forbidden_fields() {
    let text = "x1,x2,x3,s,a,y\n0,1,0,1,1,2\n0,2,0,1,0,1\n0,3,0,0,1,3.2\n";
    assert!(matches!(read_cohort(text.as_bytes(), &schema()), Err(Error::Data { row: 3, .. })));
    let mut lenient = schema();
    lenient.lenient = true;
    let cohort = read_cohort(text.as_bytes(), &lenient).unwrap();
    assert_eq!((cohort.a()[2], cohort.y()[2]), (None, None));
}

#[test]
fn threshold_counts_and_constant_propensity() {
    let cohort = small_cohort(6);
    let n = cohort.n();
    let mut selection = vec![0.5; n];
    let report = diagnose_from_predictions(&cohort, &selection, &vec![0.5; n], 0.01).unwrap();
    assert_eq!((report.selection_range.min, report.selection_range.max), (0.5, 0.5));
    assert_eq!(report.count_below_threshold, 0);
    selection[17] = 0.004;
    let report = diagnose_from_predictions(&cohort, &selection, &vec![0.5; n], 0.01).unwrap();
    assert_eq!(report.count_below_threshold, 1);
    assert_eq!(report.n_trial + report.n_nontrial, report.n);
}

fn lean_config() -> NuisanceConfig {
    NuisanceConfig {
        library: vec![LearnerSpec::GlmMainEffects, LearnerSpec::GlmPairwiseInteractions],
        treatment_probability: TreatmentProbability::Known(0.5),
        ..NuisanceConfig::default()
    }
}

#[test]
fn overlap_report_is_permutation_invariant() {
    let cohort = small_cohort(7);
    let mut order: Vec<usize> = (0..cohort.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let permuted = cohort.select(&order);
    let a = diagnose_overlap(&cohort, &cross_fit(&cohort, &lean_config(), 11).unwrap()).unwrap();
    let b = diagnose_overlap(&permuted, &cross_fit(&permuted, &lean_config(), 11).unwrap()).unwrap();
    assert_eq!(a, b);
}

/// Maximum-likelihood logistic regression by Newton's method.
fn logistic_mle(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let design = x.clone().insert_column(0, 1.0);
    let mut beta = DVector::zeros(design.ncols());
    for _ in 0..50 {
        let p = (&design * &beta).map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = p.map(|q| q * (1.0 - q));
        let grad = design.transpose() * (DVector::from_column_slice(y) - &p);
        let hess = design.transpose() * DMatrix::from_diagonal(&w) * &design;
        let step = hess.lu().solve(&grad).unwrap();
        beta += &step;
        if step.norm() < 1e-12 {
            break;
        }
    }
    beta
}

#[test]
fn selection_range_agrees_with_oracle_refit() {
    let cohort = DgpSpec::binary(2500, 1000).calibrate().unwrap().generate_cohort(1).unwrap();
    let s: Vec<f64> = cohort.s().iter().map(|&v| f64::from(v)).collect();
    let beta = logistic_mle(cohort.covariates(), &s);
    let design = cohort.covariates().clone().insert_column(0, 1.0);
    let fitted: Vec<f64> = (&design * &beta).iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
    let (lo, hi) = fitted.iter().fold((1.0f64, 0.0f64), |(l, h), &p| (l.min(p), h.max(p)));

    let report = diagnose_overlap(&cohort, &cross_fit(&cohort, &lean_config(), 1).unwrap()).unwrap();
    assert!((report.selection_range.min - lo).abs() <= 0.05, "{} vs {lo}", report.selection_range.min);
    assert!((report.selection_range.max - hi).abs() <= 0.05, "{} vs {hi}", report.selection_range.max);
    assert_eq!(report.treatment_range.min, 0.5);
}
