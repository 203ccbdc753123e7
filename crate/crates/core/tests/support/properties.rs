//! Property checks, one function per invariant. Each returns `Err` with a
//! description of the first counterexample.

use proptest::collection::vec as pvec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use mstl_core::active::{exploration_probability, ActiveState, EnsembleContext, StrategyKind};
use mstl_core::data::{
    generate_synthetic, labeled_count, split_labeled_fraction, DomainDataset, FeatureVector, Label,
    LabeledExample, SyntheticConfig,
};
use mstl_core::ensemble::{
    combine_weights, compute_proximity, peer_vote, predict_weighted_vote, pwmstl_predict,
    relation_from_errors, EnsembleWeights, PwMstlModel,
};
use mstl_core::harness::{
    prepare_trial, run_active_experiment, run_transfer_experiment, ExperimentConfig, FractionPlan,
    ProximityOrder,
};
use mstl_core::kernel::{
    compute_mmd, gaussian_kernel, median_bandwidth, solve_kmm, solve_kmm_traced, KernelConfig,
    KmmConfig, KmmSolution,
};
use mstl_core::pipeline::EnsembleParams;
use mstl_core::svm::{
    train_weighted_svm, uncertainty_from_margin, uncertainty_score, LinearModel, TrainConfig,
};

use super::oracles::{grid_minimum, spearman, symmetric_eigenvalues, MatchingQp};

pub type Check = fn() -> Result<(), String>;

/// Every invariant, by name.
pub const ALL: &[(&str, Check)] = &[
    (
        "generator: proximity orders mean distance",
        generator_proximity_orders_distance,
    ),
    (
        "generator: pure function of config and seed",
        generation_is_pure,
    ),
    (
        "split: class ratio kept within one example",
        split_preserves_class_ratio,
    ),
    (
        "kmm: objective non-increasing, constraints hold",
        kmm_monotone_and_feasible,
    ),
    (
        "kmm: matches grid oracle on tiny instances",
        kmm_matches_grid_oracle,
    ),
    (
        "mmd: a sample against itself is exactly zero",
        mmd_self_is_zero,
    ),
    ("kernel: gram matrix symmetric PSD in (0, 1]", gram_is_psd),
    (
        "svm: dual ascent on random problems",
        svm_trains_with_dual_ascent,
    ),
    (
        "svm: weight scaling with C / c leaves optimum",
        svm_weight_scaling,
    ),
    ("svm: example order does not matter", svm_order_invariance),
    (
        "svm: uncertainty strictly decreasing in |h|",
        uncertainty_strictly_decreasing,
    ),
    (
        "ensemble: R, delta, omega are stochastic",
        weights_are_stochastic,
    ),
    (
        "ensemble: lower peer error never weighs less",
        relation_rows_monotone,
    ),
    (
        "ensemble: omega affine in mu with exact endpoints",
        omega_affine_with_endpoints,
    ),
    (
        "ensemble: zero tolerance equals plain vote",
        zero_tolerance_equals_vote,
    ),
    (
        "ensemble: label invariant under margin rescaling",
        label_invariant_under_rescaling,
    ),
    (
        "active: conservation, oracle fidelity, frozen alpha",
        active_bookkeeping,
    ),
    (
        "active: exploration zero iff ratios uniform",
        exploration_zero_iff_uniform,
    ),
    (
        "active: AMSAT collapses to uncertainty sampling",
        amsat_collapses_to_uncertainty,
    ),
    (
        "active: same seed gives identical runs",
        active_runs_are_deterministic,
    ),
    (
        "harness: any trial subset reproduces its rows",
        trial_subset_reproduces,
    ),
    (
        "harness: test data disjoint from training data",
        test_data_untouched,
    ),
    (
        "harness: strategies share the initial partition",
        strategies_share_partition,
    ),
];

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn points(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<FeatureVector>> {
    pvec(pvec(-3.0f64..3.0, dim), n)
}

fn mean_point(points: &[FeatureVector]) -> FeatureVector {
    let d = points[0].len();
    let mut m = vec![0.0; d];
    for p in points {
        for (a, b) in m.iter_mut().zip(p) {
            *a += b / points.len() as f64;
        }
    }
    m
}

pub fn generator_proximity_orders_distance() -> Result<(), String> {
    let base = SyntheticConfig::default();
    let k = base.num_sources;
    let mut avg = vec![0.0; k];
    for seed in 0..30 {
        let g = generate_synthetic(&SyntheticConfig {
            seed,
            ..base.clone()
        })
        .map_err(|e| e.to_string())?;
        let mut target: Vec<FeatureVector> = g.target.labeled.iter().map(|e| e.x.clone()).collect();
        target.extend(g.target.unlabeled.iter().cloned());
        let mt = mean_point(&target);
        for (i, s) in g.sources.iter().enumerate() {
            let ms = mean_point(&s.aggregate_points());
            avg[i] += ms
                .iter()
                .zip(&mt)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / 30.0;
        }
    }
    let rho = spearman(&base.proximity, &avg);
    ensure(rho > 0.8, || {
        format!("spearman {rho:.3} for distances {avg:?}")
    })
}

pub fn generation_is_pure() -> Result<(), String> {
    run(8, (0u64..1000, 0.0f64..=1.0), |(seed, fraction)| {
        let cfg = SyntheticConfig {
            num_sources: 2,
            proximity: vec![0.3, 0.9],
            per_source_pos: 10,
            per_source_neg: 10,
            seed,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(&a.sources, &b.sources);
        prop_assert_eq!(&a.target, &b.target);
        let sa = split_labeled_fraction(&a.sources[0], fraction, seed).unwrap();
        let sb = split_labeled_fraction(&b.sources[0], fraction, seed).unwrap();
        prop_assert_eq!(sa, sb);
        Ok(())
    })
}

pub fn split_preserves_class_ratio() -> Result<(), String> {
    run(
        256,
        (1usize..40, 1usize..40, 0.0f64..=1.0, any::<u64>()),
        |(n_pos, n_neg, fraction, seed)| {
            let labeled: Vec<LabeledExample> = (0..n_pos + n_neg)
                .map(|i| {
                    LabeledExample::new(
                        vec![i as f64],
                        Label::from_sign(n_pos as f64 - 0.5 - i as f64),
                    )
                })
                .collect();
            let pos_total = labeled.iter().filter(|e| e.y == Label::Positive).count();
            let n = labeled.len();
            let domain = DomainDataset::new("d", labeled, Vec::new(), None).unwrap();
            let split = split_labeled_fraction(&domain, fraction, seed).unwrap();
            let m = labeled_count(fraction, n);
            prop_assert_eq!(split.labeled.len(), m);
            prop_assert_eq!(split.len(), n);
            let pos = split
                .labeled
                .iter()
                .filter(|e| e.y == Label::Positive)
                .count() as f64;
            let expected = m as f64 * pos_total as f64 / n as f64;
            prop_assert!(
                (pos - expected).abs() <= 1.0,
                "{pos} positives, expected {expected}"
            );
            Ok(())
        },
    )
}

pub fn kmm_monotone_and_feasible() -> Result<(), String> {
    let instance = (1usize..=3).prop_flat_map(|d| (points(2..20, d), points(1..20, d)));
    run(48, instance, |(src, tgt)| {
        let tgt: Vec<FeatureVector> = tgt
            .into_iter()
            .map(|p| p.into_iter().map(|v| v + 1.0).collect())
            .collect();
        let mut all = src.clone();
        all.extend(tgt.iter().cloned());
        let Ok(kernel) = median_bandwidth(&all) else {
            return Ok(());
        };
        let cfg = KmmConfig::default();
        let (sol, trace) = solve_kmm_traced(&src, &tgt, &kernel, &cfg).unwrap();
        for w in trace.windows(2) {
            prop_assert!(
                w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0),
                "objective rose {} -> {}",
                w[0],
                w[1]
            );
        }
        let eps = cfg.slack_for(src.len());
        for a in &sol.alpha {
            prop_assert!(
                (-cfg.tol..=cfg.upper_bound + cfg.tol).contains(a),
                "alpha {a} outside box"
            );
        }
        prop_assert!(
            (sol.mean_alpha() - 1.0).abs() <= eps + cfg.tol,
            "mean alpha {}",
            sol.mean_alpha()
        );
        Ok(())
    })
}

/// Solves random instances with at most four source points and compares the
/// objective with the exhaustive grid optimum (step 0.01, box `[0, 2]`).
/// Returns the largest excess `solver - grid` seen.
pub fn kmm_grid_excess(instances: usize, seed: u64) -> Result<f64, String> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cfg = KmmConfig {
        upper_bound: 2.0,
        ..KmmConfig::default()
    };
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let n = rng.gen_range(2..=4);
        let nt = rng.gen_range(1..=4);
        let dim = rng.gen_range(1..=2);
        let mut draw = |m: usize, shift: f64| -> Vec<FeatureVector> {
            (0..m)
                .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0) + shift).collect())
                .collect()
        };
        let src = draw(n, 0.0);
        let tgt = draw(nt, 0.5);
        let gamma = rng.gen_range(0.5..4.0);
        let kernel = KernelConfig::new(gamma).map_err(|e| e.to_string())?;
        let sol = solve_kmm(&src, &tgt, &kernel, &cfg).map_err(|e| e.to_string())?;
        let qp = MatchingQp::new(&src, &tgt, gamma);
        let eps = cfg.slack_for(n);
        let grid = grid_minimum(&qp, cfg.upper_bound, eps, 0.01);
        let total: f64 = sol.alpha.iter().sum();
        if sol
            .alpha
            .iter()
            .any(|a| *a < -1e-9 || *a > cfg.upper_bound + 1e-9)
            || (total - n as f64).abs() > n as f64 * eps + 1e-7
        {
            return Err(format!("infeasible alpha {:?}", sol.alpha));
        }
        worst = worst.max(qp.objective(&sol.alpha) - grid);
    }
    Ok(worst)
}

pub fn kmm_matches_grid_oracle() -> Result<(), String> {
    let excess = kmm_grid_excess(50, 7)?;
    ensure(excess <= 1e-3, || {
        format!("solver exceeds grid optimum by {excess:.3e}")
    })
}

pub fn mmd_self_is_zero() -> Result<(), String> {
    run(128, (1usize..=4).prop_flat_map(|d| points(1..25, d)), |a| {
        let kernel = KernelConfig::new(1.7).unwrap();
        let m = compute_mmd(&a, &a, &kernel).unwrap().value();
        prop_assert_eq!(m, 0.0);
        Ok(())
    })
}

pub fn gram_is_psd() -> Result<(), String> {
    run(
        64,
        (1usize..=5).prop_flat_map(|d| (points(10..11, d), 0.1f64..10.0)),
        |(pts, gamma)| {
            let kernel = KernelConfig::new(gamma).unwrap();
            let k: Vec<Vec<f64>> = pts
                .iter()
                .map(|x| {
                    pts.iter()
                        .map(|y| gaussian_kernel(x, y, &kernel).unwrap())
                        .collect()
                })
                .collect();
            for i in 0..10 {
                for j in 0..10 {
                    prop_assert!(k[i][j] > 0.0 && k[i][j] <= 1.0, "entry {}", k[i][j]);
                    prop_assert_eq!(k[i][j], k[j][i]);
                }
            }
            let min = symmetric_eigenvalues(&k)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-9, "smallest eigenvalue {min}");
            Ok(())
        },
    )
}

fn labeled_points(
    dim: usize,
    n: std::ops::Range<usize>,
) -> impl Strategy<Value = Vec<LabeledExample>> {
    pvec((pvec(-3.0f64..3.0, dim), any::<bool>()), n).prop_map(|v| {
        v.into_iter()
            .map(|(x, pos)| {
                LabeledExample::new(
                    x,
                    if pos {
                        Label::Positive
                    } else {
                        Label::Negative
                    },
                )
            })
            .collect()
    })
}

pub fn svm_trains_with_dual_ascent() -> Result<(), String> {
    // the trainer asserts dual ascent every epoch in debug builds
    run(
        64,
        (1usize..=4).prop_flat_map(|d| (labeled_points(d, 2..40), pvec(0.0f64..3.0, 40))),
        |(ex, w)| {
            let weights = &w[..ex.len()];
            let cfg = TrainConfig {
                c: 2.0,
                tol: 1e-6,
                max_epochs: 500,
                seed: 3,
            };
            match train_weighted_svm(&ex, weights, &cfg) {
                Ok(m) => prop_assert!(m.w.iter().all(|v| v.is_finite()) && m.b.is_finite()),
                Err(mstl_core::Error::AllWeightsZero) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            Ok(())
        },
    )
}

pub fn svm_weight_scaling() -> Result<(), String> {
    run(
        64,
        (1usize..=3).prop_flat_map(|d| {
            (
                labeled_points(d, 4..30),
                pvec(0.1f64..2.0, 30),
                0.1f64..10.0,
            )
        }),
        |(ex, w, scale)| {
            if ex.iter().all(|e| e.y == ex[0].y) {
                return Ok(());
            }
            let weights = &w[..ex.len()];
            let cfg = TrainConfig {
                c: 1.0,
                tol: 1e-9,
                max_epochs: 20_000,
                seed: 1,
            };
            let scaled: Vec<f64> = weights.iter().map(|v| v * scale).collect();
            let a = train_weighted_svm(&ex, weights, &cfg).unwrap();
            let b = train_weighted_svm(
                &ex,
                &scaled,
                &TrainConfig {
                    c: 1.0 / scale,
                    ..cfg
                },
            )
            .unwrap();
            let dw: f64 =
                a.w.iter()
                    .zip(&b.w)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
            prop_assert!(
                dw <= 1e-6 && (a.b - b.b).abs() <= 1e-6,
                "w moved {dw}, b moved {}",
                (a.b - b.b).abs()
            );
            Ok(())
        },
    )
}

pub fn svm_order_invariance() -> Result<(), String> {
    let separable =
        (1usize..=3).prop_flat_map(|d| (pvec(-1.0f64..1.0, d), pvec(pvec(-3.0f64..3.0, d), 6..40)));
    run(
        48,
        (separable, any::<u64>()),
        |((truth, xs), shuffle_seed)| {
            let norm: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 0.1 {
                return Ok(());
            }
            let ex: Vec<LabeledExample> = xs
                .into_iter()
                .filter_map(|x| {
                    let s: f64 = truth.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / norm;
                    (s.abs() > 0.3).then(|| LabeledExample::new(x, Label::from_sign(s)))
                })
                .collect();
            if ex.len() < 2 || ex.iter().all(|e| e.y == ex[0].y) {
                return Ok(());
            }
            let mut shuffled = ex.clone();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
            let cfg = TrainConfig {
                c: 1.0,
                tol: 1e-9,
                max_epochs: 50_000,
                seed: 5,
            };
            let ones = vec![1.0; ex.len()];
            let a = train_weighted_svm(&ex, &ones, &cfg).unwrap();
            let b = train_weighted_svm(&shuffled, &ones, &TrainConfig { seed: 99, ..cfg }).unwrap();
            let dw: f64 =
                a.w.iter()
                    .zip(&b.w)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
            prop_assert!(dw <= 1e-3, "w differs by {dw}");
            Ok(())
        },
    )
}

pub fn uncertainty_strictly_decreasing() -> Result<(), String> {
    run(
        512,
        (0.0f64..30.0, 1e-3f64..10.0, any::<bool>()),
        |(h, gap, neg)| {
            let sign = if neg { -1.0 } else { 1.0 };
            prop_assert!(uncertainty_from_margin(sign * h) > uncertainty_from_margin(h + gap));
            let model = LinearModel {
                w: vec![1.0],
                b: 0.0,
                train_size: 2,
                single_class: None,
            };
            let near = uncertainty_score(&model, &[sign * h]).unwrap();
            let far = uncertainty_score(&model, &[-sign * (h + gap)]).unwrap();
            prop_assert!(near > far);
            Ok(())
        },
    )
}

fn relation_inputs() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, f64, f64)> {
    (2usize..8).prop_flat_map(|k| {
        (
            pvec(pvec(0.0f64..=1.0, k), k),
            pvec(0.0f64..2.0, k),
            0.0f64..20.0,
            0.0f64..=1.0,
        )
    })
}

pub fn weights_are_stochastic() -> Result<(), String> {
    run(1000, relation_inputs(), |(errors, mmd, beta1, mu)| {
        let r = relation_from_errors(&errors, beta1).unwrap();
        let prox = compute_proximity(&mmd, 1.0 / (mmd.iter().sum::<f64>() + 1e-3), 1.0).unwrap();
        let w = combine_weights(&prox, &r, mu).unwrap();
        for (i, row) in r.rows.iter().enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(row[i], 0.0);
        }
        prop_assert!((prox.delta.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!((w.omega.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(w.omega.iter().all(|v| *v >= 0.0));
        Ok(())
    })
}

pub fn relation_rows_monotone() -> Result<(), String> {
    run(256, relation_inputs(), |(errors, _, beta1, _)| {
        let r = relation_from_errors(&errors, beta1).unwrap();
        let k = errors.len();
        for i in 0..k {
            for a in (0..k).filter(|&a| a != i) {
                for b in (0..k).filter(|&b| b != i) {
                    if errors[i][a] < errors[i][b] {
                        prop_assert!(r.get(i, a) >= r.get(i, b));
                    }
                }
            }
        }
        Ok(())
    })
}

pub fn omega_affine_with_endpoints() -> Result<(), String> {
    run(256, relation_inputs(), |(errors, mmd, beta1, mu)| {
        let r = relation_from_errors(&errors, beta1).unwrap();
        let prox = compute_proximity(&mmd, 2.0, 1.0).unwrap();
        let w1 = combine_weights(&prox, &r, 1.0).unwrap();
        let w0 = combine_weights(&prox, &r, 0.0).unwrap();
        let wm = combine_weights(&prox, &r, mu).unwrap();
        prop_assert_eq!(&w1.omega, &prox.delta);
        let k = mmd.len();
        for j in 0..k {
            let peer: f64 = (0..k).map(|i| prox.delta[i] * r.get(i, j)).sum();
            prop_assert!((w0.omega[j] - peer).abs() <= 1e-15);
            let lerp = mu * w1.omega[j] + (1.0 - mu) * w0.omega[j];
            prop_assert!((wm.omega[j] - lerp).abs() <= 1e-12);
        }
        Ok(())
    })
}

fn ensemble_inputs() -> impl Strategy<Value = (Vec<LinearModel>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)>
{
    (2usize..6, 1usize..4).prop_flat_map(|(k, d)| {
        (
            pvec((pvec(-2.0f64..2.0, d), -1.0f64..1.0), k).prop_map(|v| {
                v.into_iter()
                    .map(|(w, b)| LinearModel {
                        w,
                        b,
                        train_size: 1,
                        single_class: None,
                    })
                    .collect()
            }),
            pvec(pvec(0.0f64..=1.0, k), k),
            pvec(0.0f64..2.0, k),
            pvec(-3.0f64..3.0, d),
        )
    })
}

pub fn zero_tolerance_equals_vote() -> Result<(), String> {
    run(
        256,
        (ensemble_inputs(), 0.0f64..=1.0),
        |((models, errors, mmd, x), mu)| {
            let r = relation_from_errors(&errors, 5.0).unwrap();
            let prox = compute_proximity(&mmd, 1.0, 1.0).unwrap();
            let w = combine_weights(&prox, &r, mu).unwrap();
            let omega = w.omega.clone();
            let model = PwMstlModel::new(models.clone(), w, r, prox, 0.0).unwrap();
            prop_assert_eq!(
                pwmstl_predict(&model, &x).unwrap(),
                predict_weighted_vote(&models, &omega, &x).unwrap()
            );
            Ok(())
        },
    )
}

pub fn label_invariant_under_rescaling() -> Result<(), String> {
    let scales = prop::sample::select(vec![0.125, 0.25, 0.5, 2.0, 4.0, 8.0]);
    run(
        512,
        (ensemble_inputs(), 0.0f64..3.0, scales),
        |((models, errors, mmd, x), b1, c)| {
            let r = relation_from_errors(&errors, 5.0).unwrap();
            let prox = compute_proximity(&mmd, 1.0, 1.0).unwrap();
            let EnsembleWeights { omega, .. } = combine_weights(&prox, &r, 0.2).unwrap();
            let h: Vec<f64> = models.iter().map(|m| m.margin(&x)).collect();
            let scaled: Vec<f64> = h.iter().map(|v| v * c).collect();
            prop_assert_eq!(
                peer_vote(&h, &omega, &r, b1).0,
                peer_vote(&scaled, &omega, &r, b1 * c).0
            );
            Ok(())
        },
    )
}

/// Small multi-source active-learning setup.
pub fn small_active_state(seed: u64, k: usize, uniform_alpha: bool) -> ActiveState {
    let cfg = SyntheticConfig {
        num_sources: k,
        dim: 3,
        proximity: (1..=k).map(|i| i as f64 / k as f64).collect(),
        per_source_pos: 8,
        per_source_neg: 8,
        target_test_size: 10,
        target_pool_size: 20,
        seed,
        ..SyntheticConfig::default()
    };
    let g = generate_synthetic(&cfg).unwrap();
    let sources: Vec<DomainDataset> = g
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| split_labeled_fraction(s, 0.25, seed + i as u64).unwrap())
        .collect();
    let mut all: Vec<FeatureVector> = sources.iter().flat_map(|s| s.aggregate_points()).collect();
    all.extend(g.target.unlabeled.iter().cloned());
    let kernel = median_bandwidth(&all).unwrap();
    let alphas: Vec<KmmSolution> = sources
        .iter()
        .map(|s| {
            if uniform_alpha {
                KmmSolution {
                    alpha: vec![1.0; s.len()],
                    objective: 0.0,
                    weighted_mmd: 0.0,
                    kkt_residual: 0.0,
                    iterations: 0,
                    converged: true,
                }
            } else {
                solve_kmm(
                    &s.aggregate_points(),
                    &g.target.unlabeled,
                    &kernel,
                    &KmmConfig::default(),
                )
                .unwrap()
            }
        })
        .collect();
    let mmd: Vec<f64> = sources
        .iter()
        .map(|s| {
            compute_mmd(&s.aggregate_points(), &g.target.unlabeled, &kernel)
                .unwrap()
                .value()
        })
        .collect();
    let context = EnsembleContext {
        proximity: compute_proximity(&mmd, 1.0, 1.0).unwrap(),
        params: EnsembleParams::default(),
    };
    let budget = sources.iter().map(|s| s.unlabeled.len()).sum();
    ActiveState::new(
        sources,
        alphas,
        context,
        TrainConfig::default(),
        budget,
        seed,
    )
    .unwrap()
}

pub fn active_bookkeeping() -> Result<(), String> {
    let strategy = prop::sample::select(StrategyKind::ALL.to_vec());
    run(
        24,
        (any::<u64>(), 1usize..=4, pvec(strategy, 1..30)),
        |(seed, k, plan)| {
            let mut state = small_active_state(seed % 10_000, k, false);
            let initial = state.sources().to_vec();
            let alphas = state.alphas().to_vec();
            let sizes: Vec<usize> = initial.iter().map(DomainDataset::len).collect();
            let labeled0: Vec<usize> = state.labeled_counts();
            let steps = plan.len().min(state.budget_total());
            for &s in &plan[..steps] {
                let rec = state.step(s).unwrap();
                let src = &initial[rec.source];
                let n_lab = src.labeled.len();
                prop_assert!(rec.index >= n_lab, "queried an initially labeled example");
                let truth = src.hidden_labels.as_ref().unwrap()[rec.index - n_lab];
                prop_assert_eq!(rec.label, truth);
                let now: Vec<usize> = state
                    .labeled_counts()
                    .iter()
                    .zip(state.unlabeled_counts())
                    .map(|(l, u)| l + u)
                    .collect();
                prop_assert_eq!(&now, &sizes);
                let gained: usize = state
                    .labeled_counts()
                    .iter()
                    .zip(&labeled0)
                    .map(|(a, b)| a - b)
                    .sum();
                prop_assert_eq!(gained, state.budget_spent());
                prop_assert_eq!(state.alphas(), &alphas[..]);
            }
            let mut seen: Vec<(usize, usize)> = state
                .query_log()
                .iter()
                .map(|r| (r.source, r.index))
                .collect();
            let n = seen.len();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n, "an example was queried twice");
            Ok(())
        },
    )
}

pub fn exploration_zero_iff_uniform() -> Result<(), String> {
    run(
        512,
        (1usize..10).prop_flat_map(|k| (pvec(0.01f64..1.0, k), any::<bool>())),
        |(raw, uniform)| {
            let k = raw.len();
            let beta: Vec<f64> = if uniform {
                vec![1.0 / k as f64; k]
            } else {
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            };
            let p = exploration_probability(&beta).unwrap();
            let is_uniform = beta.iter().all(|b| (b - beta[0]).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&p));
            if is_uniform {
                prop_assert!(p.abs() < 1e-12, "uniform ratios gave {p}");
            } else {
                prop_assert!(p > 0.0, "non-uniform {beta:?} gave 0");
            }
            Ok(())
        },
    )
}

pub fn amsat_collapses_to_uncertainty() -> Result<(), String> {
    run(16, any::<u64>(), |seed| {
        let mut a = small_active_state(seed % 10_000, 1, true);
        let mut b = a.clone();
        for _ in 0..a.budget_total() {
            let ra = a.step(StrategyKind::Amsat).unwrap();
            let rb = b.step(StrategyKind::Uncertainty).unwrap();
            prop_assert_eq!((ra.source, ra.index), (rb.source, rb.index));
        }
        Ok(())
    })
}

pub fn active_runs_are_deterministic() -> Result<(), String> {
    let strategy = prop::sample::select(StrategyKind::ALL.to_vec());
    run(12, (any::<u64>(), strategy), |(seed, s)| {
        let mut a = small_active_state(seed % 10_000, 3, false);
        let mut b = small_active_state(seed % 10_000, 3, false);
        for _ in 0..10 {
            a.step(s).unwrap();
            b.step(s).unwrap();
        }
        prop_assert_eq!(a.query_log(), b.query_log());
        prop_assert_eq!(a.models(), b.models());
        Ok(())
    })
}

fn tiny_experiment(trials: usize, master_seed: u64) -> ExperimentConfig {
    let synthetic = SyntheticConfig {
        num_sources: 3,
        dim: 4,
        proximity: vec![0.2, 0.6, 1.0],
        per_source_pos: 15,
        per_source_neg: 15,
        target_test_size: 30,
        target_pool_size: 30,
        ..SyntheticConfig::default()
    };
    let mut cfg = ExperimentConfig::synthetic(
        synthetic,
        FractionPlan::Ordered {
            values: vec![0.05, 0.15, 0.3],
            order: ProximityOrder::SimilarRicher,
        },
    );
    cfg.trials = trials;
    cfg.master_seed = master_seed;
    cfg
}

pub fn trial_subset_reproduces() -> Result<(), String> {
    let full = run_transfer_experiment(&tiny_experiment(4, 100)).map_err(|e| e.to_string())?;
    for (i, row) in full.trials.iter().enumerate() {
        let alone = run_transfer_experiment(&tiny_experiment(1, 100 + i as u64))
            .map_err(|e| e.to_string())?;
        ensure(alone.trials[0].accuracies == row.accuracies, || {
            format!("trial {i} differs when run alone")
        })?;
        ensure(alone.trials[0].seed == row.seed, || {
            format!("trial {i} seed differs")
        })?;
    }
    Ok(())
}

pub fn test_data_untouched() -> Result<(), String> {
    let cfg = tiny_experiment(3, 5);
    for t in 0..cfg.trials {
        let data = prepare_trial(&cfg, t).map_err(|e| e.to_string())?;
        let mut training: Vec<&FeatureVector> = data.target_pool.iter().collect();
        for s in &data.sources {
            training.extend(s.labeled.iter().map(|e| &e.x));
            training.extend(s.unlabeled.iter());
        }
        for e in &data.target_test {
            ensure(!training.contains(&&e.x), || {
                format!("trial {t}: test point reused in training data")
            })?;
        }
    }
    Ok(())
}

pub fn strategies_share_partition() -> Result<(), String> {
    let mut cfg = tiny_experiment(3, 11);
    cfg.budget_fraction = 0.1;
    let a = run_active_experiment(&cfg).map_err(|e| e.to_string())?;
    let b = run_active_experiment(&cfg).map_err(|e| e.to_string())?;
    ensure(a == b, || "active experiment not reproducible".into())?;
    for t in &a.trials {
        let data = prepare_trial(&cfg, t.trial).map_err(|e| e.to_string())?;
        let context = EnsembleContext {
            proximity: data.proximity.clone(),
            params: EnsembleParams::default(),
        };
        let fingerprints: Vec<u64> = StrategyKind::ALL
            .iter()
            .map(|_| {
                ActiveState::new(
                    data.sources.clone(),
                    data.alphas.clone(),
                    context.clone(),
                    TrainConfig::default(),
                    0,
                    1,
                )
                .map(|s| s.partition_fingerprint())
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(
            fingerprints.iter().all(|f| *f == t.partition_fingerprint),
            || format!("trial {}: partition fingerprints differ", t.trial),
        )?;
    }
    Ok(())
}
