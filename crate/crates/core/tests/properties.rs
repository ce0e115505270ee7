use std::collections::BTreeSet;

use nalgebra::DMatrix;
use proptest::prelude::*;

use explet_core::classify::{solve_binary, SvmConfig};
use explet_core::embed::{build_graphs, scatter_laplacians};
use explet_core::explet::{covariance_of, spd_log};
use explet_core::fv::normalize_fv;
use explet_core::harness::{make_folds, report_from, CvProtocol, Prediction};
use explet_core::linalg::{max_abs_asymmetry, min_eigenvalue};
use explet_core::stfeat::VideoMeta;
use explet_core::umm::{train_em, CovKind, EmConfig};

fn metas(subject_of: &[usize]) -> Vec<VideoMeta> {
    subject_of
        .iter()
        .enumerate()
        .map(|(i, s)| VideoMeta {
            video_id: format!("v{i}"),
            subject_id: format!("s{s}"),
            label: i % 3,
        })
        .collect()
}

fn protocol() -> impl Strategy<Value = CvProtocol> {
    prop_oneof![
        Just(CvProtocol::LeaveOneSubjectOut),
        (2usize..5, any::<u64>()).prop_map(|(k, seed)| CvProtocol::PersonKFold { k, seed }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_subjects(subject_of in prop::collection::vec(0usize..6, 5..40), protocol in protocol()) {
        let metas = metas(&subject_of);
        let n_subjects = subject_of.iter().collect::<BTreeSet<_>>().len();
        let Ok(folds) = make_folds(&metas, protocol) else {
            let needed = match protocol {
                CvProtocol::LeaveOneSubjectOut => 2,
                CvProtocol::PersonKFold { k, .. } => k,
            };
            prop_assert!(n_subjects < needed);
            return Ok(());
        };
        if protocol == CvProtocol::LeaveOneSubjectOut {
            prop_assert_eq!(folds.len(), n_subjects);
        }
        let mut tested = vec![0usize; metas.len()];
        for fold in &folds {
            let train: BTreeSet<&str> = fold.train.iter().map(|&i| metas[i].subject_id.as_str()).collect();
            let test: BTreeSet<&str> = fold.test.iter().map(|&i| metas[i].subject_id.as_str()).collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(fold.train.len() + fold.test.len(), metas.len());
            for &i in &fold.test {
                tested[i] += 1;
            }
        }
        prop_assert!(tested.iter().all(|&c| c == 1));
    }

    #[test]
    fn report_rows_match_class_counts(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80)) {
        let predictions: Vec<Prediction> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(truth, predicted))| Prediction { fold: 0, video_id: format!("v{i}"), truth, predicted })
            .collect();
        let report = report_from(predictions);
        for (row, class) in report.confusion.iter().zip(&report.classes) {
            let count = pairs.iter().filter(|(t, _)| t == class).count();
            prop_assert_eq!(row.iter().sum::<usize>(), count);
        }
        let total: usize = report.confusion.iter().flatten().sum();
        prop_assert_eq!(total, pairs.len());
        prop_assert!((0.0..=100.0).contains(&report.acc));
        prop_assert!((0.0..=100.0).contains(&report.macc));
    }

    #[test]
    fn regularized_covariance_logs_are_symmetric(
        d in 1usize..7,
        n in 2usize..12,
        seed in prop::collection::vec(-3.0f64..3.0, 84),
    ) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|j| seed[(i * d + j) % seed.len()] * (1.0 + j as f64)).collect()).collect();
        let cov = covariance_of(rows);
        prop_assert!(max_abs_asymmetry(&cov) <= 1e-10);
        prop_assert!(min_eigenvalue(&cov) > 0.0);
        let log = spd_log(&cov).unwrap();
        prop_assert!(max_abs_asymmetry(&log) <= 1e-10);
        prop_assert!(log.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn normalized_fv_has_unit_norm(v in prop::collection::vec(-100.0f64..100.0, 1..64)) {
        let out = normalize_fv(v.clone());
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v.iter().all(|&x| x == 0.0) {
            prop_assert_eq!(norm, 0.0);
        } else {
            prop_assert!((norm - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn graphs_respect_modes_and_labels(labels in prop::collection::vec(0usize..3, 2..7), k in 1usize..4) {
        let graphs = build_graphs(&labels, k).unwrap();
        let (ww, wb) = graphs.to_dense();
        let n = graphs.n_nodes();
        for m in 0..n {
            prop_assert_eq!(ww[(m, m)], 0.0);
            prop_assert_eq!(wb[(m, m)], 0.0);
            for q in 0..n {
                prop_assert_eq!(ww[(m, q)], ww[(q, m)]);
                prop_assert_eq!(wb[(m, q)], wb[(q, m)]);
                let same_mode = m % k == q % k;
                let same_label = labels[m / k] == labels[q / k];
                if ww[(m, q)] == 1.0 {
                    prop_assert!(same_mode && same_label);
                }
                if wb[(m, q)] == 1.0 {
                    prop_assert!(same_mode && !same_label);
                }
            }
        }
        let (lw, lb) = scatter_laplacians(&graphs);
        for l in [lw.to_dense(), lb.to_dense()] {
            prop_assert!(max_abs_asymmetry(&l) == 0.0);
            prop_assert!(min_eigenvalue(&l) >= -1e-9);
        }
    }

    #[test]
    fn svm_dual_never_decreases(
        points in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 4..30),
        c in 0.05f64..5.0,
        seed in any::<u64>(),
    ) {
        let xs: Vec<Vec<f64>> = points.iter().map(|&(a, b)| vec![a, b, 1.0]).collect();
        let ys: Vec<f64> = points.iter().map(|&(a, b)| if a + 0.5 * b > 0.0 { 1.0 } else { -1.0 }).collect();
        let config = SvmConfig { c, shuffle_seed: Some(seed), ..SvmConfig::default() };
        let (_, trace) = solve_binary(&xs, &ys, &config);
        for pair in trace.dual.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs().max(1.0));
        }
        if let Some(&last) = trace.dual.last() {
            prop_assert!(last <= trace.primal + 1e-9 * trace.primal.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn em_keeps_mixture_invariants(
        values in prop::collection::vec(-4.0f64..4.0, 180),
        k in 1usize..5,
        diag in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let rows: Vec<Vec<f64>> = values.chunks(3).map(<[f64]>::to_vec).collect();
        let config = EmConfig {
            k,
            cov: if diag { CovKind::Diagonal } else { CovKind::Isotropic },
            max_iters: 30,
            seed,
            ..EmConfig::default()
        };
        let (model, trace) = train_em(&rows, &config).unwrap();
        prop_assert!((model.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(model.means.iter().all(|v| v.is_finite()));
        prop_assert!(model.sigmas.iter().all(|&s| s >= config.sigma_floor));
        for (i, pair) in trace.log_likelihoods.windows(2).enumerate() {
            if !trace.reseeds.contains(&i) && !trace.reseeds.contains(&(i + 1)) {
                prop_assert!(pair[1] >= pair[0] - 1e-9);
            }
        }
    }
}

#[test]
fn ridge_keeps_rank_deficient_covariance_positive() {
    let rows = vec![vec![1.0, 2.0, 3.0]; 5];
    let cov = covariance_of(rows);
    assert!(min_eigenvalue(&cov) > 0.0);
    assert_eq!(cov, DMatrix::identity(3, 3) * cov[(0, 0)]);
}
