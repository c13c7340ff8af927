mod common;

use rand::Rng;
use rlhf_lab::env::{
    make_synthetic_env, preference_probability, sample_offline_dataset, EnvSpec, Environment,
    PreferenceRecord, PromptId, PromptResponses, ResponseId, RewardGen,
};
use rlhf_lab::iterative::{run_offline_dpo, run_pipeline, LoopConfig, Provenance};
use rlhf_lab::linear::{
    covariance_update, expected_feature, information_gain, select_enhancer, Candidate,
    CovarianceAccumulator, LinearExploreConfig,
};
use rlhf_lab::optim::OptimOpts;
use rlhf_lab::policy::{fit_dpo, policy_value_j, Policy};
use rlhf_lab::reward::{
    fit_bt_reward, fit_bt_reward_from, fit_pairwise_pref_model, format_pair_instance,
    length_reward_correlation, pairwise_nll, pairwise_nll_grad, pairwise_pref_predict,
    reward_pref_prob, PairFeatures, PairwisePrefModel, RewardMode, RewardModel, TrueReward,
};
use rlhf_lab::seeds::{rng_from_seed, SeedStreams};

fn provenance() -> Provenance {
    Provenance {
        master_seed: 0,
        config_hash: String::new(),
    }
}

fn exhaustive_records(env: &Environment) -> Vec<PreferenceRecord> {
    let mut data = Vec::new();
    for x in env.prompt_ids() {
        for a in env.response_ids(x) {
            for b in env.response_ids(x).filter(|b| *b != a) {
                let p = preference_probability(env, x, a, b).unwrap();
                data.push(PreferenceRecord::new(x, a, b).with_weight(p));
            }
        }
    }
    data
}

#[test]
fn pairwise_gradient_matches_finite_differences() {
    let env = make_synthetic_env(
        &EnvSpec {
            prompts: 3,
            responses: 4,
            ..EnvSpec::default()
        },
        4,
    )
    .unwrap();
    let mut rng = rng_from_seed(8);
    let u = Policy::uniform(&env);
    let data = sample_offline_dataset(&env, &u, &u, 60, &mut rng)
        .unwrap()
        .records;
    let instances: Vec<_> = data
        .iter()
        .map(|r| format_pair_instance(r, &mut rng))
        .collect();
    for _ in 0..20 {
        let weights: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let model = PairwisePrefModel {
            features: PairFeatures::TabularDifference,
            weights,
            position_bias: rng.random_range(-1.0..1.0),
        };
        let (_, grad) = pairwise_nll_grad(&model, &env, &instances).unwrap();
        let mut p = model.weights.clone();
        p.push(model.position_bias);
        let f = |q: &[f64]| {
            let m = PairwisePrefModel {
                features: PairFeatures::TabularDifference,
                weights: q[..12].to_vec(),
                position_bias: q[12],
            };
            pairwise_nll(&m, &env, &instances).unwrap()
        };
        let fd = common::central_diff(f, &p, 1e-5);
        assert!(common::relative_error(&grad, &fd) <= 1e-5);
    }
}

#[test]
fn linear_bt_optimum_is_unique() {
    let spec = EnvSpec {
        prompts: 4,
        responses: 5,
        reward: RewardGen::Linear { dim: 3, bound: 1.0 },
        ..EnvSpec::default()
    };
    let env = make_synthetic_env(&spec, 9).unwrap();
    let u = Policy::uniform(&env);
    let data = sample_offline_dataset(&env, &u, &u, 400, &mut rng_from_seed(1))
        .unwrap()
        .records;
    let opts = OptimOpts {
        l2_reg: 1e-2,
        tolerance: 1e-7,
        max_iters: 20_000,
        ..OptimOpts::default()
    };
    let a = fit_bt_reward_from(
        &data,
        &env,
        RewardModel::Linear {
            theta: vec![0.0; 3],
        },
        &opts,
    )
    .unwrap();
    let b = fit_bt_reward_from(
        &data,
        &env,
        RewardModel::Linear {
            theta: vec![5.0, -4.0, 3.0],
        },
        &opts,
    )
    .unwrap();
    assert!(
        a.report.converged && b.report.converged,
        "{:?} {:?}",
        a.report,
        b.report
    );
    // Strong convexity with modulus l2 puts each run within |grad| / l2 of the optimum.
    let bound = 2.0 * 1e-7 / 1e-2;
    let (pa, pb) = (a.model.params(), b.model.params());
    let dist = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(dist <= bound, "{pa:?} vs {pb:?}");
}

#[test]
fn learned_models_agree_with_oracle_and_each_other() {
    let env = make_synthetic_env(
        &EnvSpec {
            prompts: 4,
            responses: 6,
            ..EnvSpec::default()
        },
        21,
    )
    .unwrap();
    let u = Policy::uniform(&env);
    let mut rng = rng_from_seed(5);
    let data = sample_offline_dataset(&env, &u, &u, 20_000, &mut rng)
        .unwrap()
        .records;
    let bt = fit_bt_reward(&data, &env, RewardMode::Tabular, &OptimOpts::default())
        .unwrap()
        .model;
    let instances: Vec<_> = data
        .iter()
        .map(|r| format_pair_instance(r, &mut rng))
        .collect();
    let pm = fit_pairwise_pref_model(
        &instances,
        &env,
        PairFeatures::TabularDifference,
        &OptimOpts::default(),
    )
    .unwrap()
    .model;
    let (mut agree, mut total) = (0, 0);
    for x in env.prompt_ids() {
        for a in env.response_ids(x) {
            for b in env.response_ids(x).filter(|b| b.0 > a.0) {
                let oracle = preference_probability(&env, x, a, b).unwrap();
                let learned = reward_pref_prob(&bt, &env, x, a, b).unwrap();
                let pairwise = pairwise_pref_predict(&pm, &env, x, a, b).unwrap();
                assert!(
                    (learned - oracle).abs() < 0.05,
                    "BT {learned} vs oracle {oracle}"
                );
                assert!(
                    (pairwise - learned).abs() < 0.05,
                    "pairwise {pairwise} vs BT {learned}"
                );
                total += 1;
                if (pairwise > 0.5) == (learned > 0.5) {
                    agree += 1;
                }
            }
        }
    }
    assert!(agree as f64 >= 0.95 * total as f64, "{agree}/{total}");
}

#[test]
fn length_independent_reward_has_null_correlation() {
    let env = make_synthetic_env(
        &EnvSpec {
            prompts: 50,
            responses: 8,
            ..EnvSpec::default()
        },
        2,
    )
    .unwrap();
    let u = Policy::uniform(&env);
    let report =
        length_reward_correlation(&TrueReward, &env, &u, 2000, 8, &mut rng_from_seed(4)).unwrap();
    let mean = report.mean_coefficient.unwrap();
    assert!(mean.abs() < 0.05, "{mean}");
    assert_eq!(
        report.histogram.iter().map(|b| b.count).sum::<usize>(),
        2000 - report.n_missing
    );
    assert!(report
        .to_csv()
        .starts_with("prompt_id,mean_length,pearson_r,n_missing\n"));
}

#[test]
fn dpo_optimum_ignores_init_scale() {
    let env = make_synthetic_env(
        &EnvSpec {
            prompts: 2,
            responses: 4,
            ..EnvSpec::default()
        },
        13,
    )
    .unwrap();
    let reference = Policy::uniform(&env);
    let data = exhaustive_records(&env);
    let opts = OptimOpts {
        l2_reg: 0.0,
        tolerance: 1e-9,
        max_iters: 50_000,
        ..OptimOpts::default()
    };
    let init = Policy::from_logits(
        vec![vec![0.4, -0.2, 0.9, 0.0], vec![-1.0, 0.3, 0.2, 0.5]],
        1.0,
    )
    .unwrap();
    let doubled = Policy::from_logits(
        init.logits()
            .iter()
            .map(|r| r.iter().map(|v| 2.0 * v).collect())
            .collect(),
        1.0,
    )
    .unwrap();
    let a = fit_dpo(&data, &reference, &init, 0.5, &opts)
        .unwrap()
        .policy;
    let b = fit_dpo(&data, &reference, &doubled, 0.5, &opts)
        .unwrap()
        .policy;
    for x in env.prompt_ids() {
        assert!(common::total_variation(&a.probs(x), &b.probs(x)) < 1e-6);
    }
}

#[test]
fn expected_feature_matches_monte_carlo() {
    let spec = EnvSpec {
        prompts: 5,
        responses: 4,
        reward: RewardGen::Linear { dim: 3, bound: 1.0 },
        ..EnvSpec::default()
    };
    let env = make_synthetic_env(&spec, 3).unwrap();
    let policy = Policy::from_logits(
        env.prompt_ids()
            .map(|x| {
                (0..4)
                    .map(|a| 0.3 * (a as f64) - 0.2 * x.0 as f64)
                    .collect()
            })
            .collect(),
        1.0,
    )
    .unwrap();
    let exact = expected_feature(&policy, &env).unwrap();
    let mut rng = rng_from_seed(17);
    let n = 100_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let x = env.sample_prompt(&mut rng);
        let a = policy.sample(x, &mut rng);
        for (k, f) in env.features(x, a).unwrap().iter().enumerate() {
            sum[k] += f;
            sq[k] += f * f;
        }
    }
    for k in 0..3 {
        let mean = sum[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - exact[k]).abs() <= 3.0 * se,
            "dim {k}: {mean} vs {}",
            exact[k]
        );
    }
}

fn two_direction_env() -> Environment {
    Environment::new_linear(
        vec![1.0],
        vec![PromptResponses {
            rewards: vec![0.5, -0.5, 0.0],
            lengths: vec![1, 1, 1],
            features: Some(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]),
        }],
        vec![0.5, 0.0],
        1.0,
    )
    .unwrap()
}

#[test]
fn update_along_direction_shrinks_gain() {
    let env = two_direction_env();
    let p1 = Policy::from_logits(vec![vec![2.0, 0.0, 0.0]], 1.0).unwrap();
    let p2 = Policy::from_logits(vec![vec![0.0, 2.0, 0.0]], 1.0).unwrap();
    let acc = CovarianceAccumulator::new(2, 0.5).unwrap();
    let before = information_gain(&acc, &p1, &p2, &env, 1.0).unwrap();
    let after_acc = covariance_update(&acc, &p1, &p2, &env).unwrap();
    let after = information_gain(&after_acc, &p1, &p2, &env, 1.0).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn far_candidate_wins_under_fresh_covariance() {
    let env = two_direction_env();
    let main = Policy::uniform(&env);
    let far = Policy::from_logits(vec![vec![0.0, 0.0, 3.0]], 1.0).unwrap();
    let near = Policy::from_logits(vec![vec![0.1, 0.0, 0.0]], 1.0).unwrap();
    let acc = CovarianceAccumulator::new(2, 1e-3).unwrap();
    let cfg = LinearExploreConfig::default();
    let candidates = vec![
        Candidate {
            label: "main".into(),
            policy: main.clone(),
        },
        Candidate {
            label: "near".into(),
            policy: near,
        },
        Candidate {
            label: "far".into(),
            policy: far.clone(),
        },
    ];
    let choice = select_enhancer(&main, &acc, &env, &cfg, &candidates).unwrap();
    assert_eq!(choice.label, "far");
    assert!(!choice.exhausted);
    assert!(cfg.eta * choice.kl <= choice.gamma);
    assert_eq!(choice.policy, far);
}

#[test]
fn kl_budget_excludes_distant_candidates() {
    let env = two_direction_env();
    let main = Policy::uniform(&env);
    let far = Policy::from_logits(vec![vec![0.0, 0.0, 30.0]], 1.0).unwrap();
    // A large ridge makes every gain tiny, so the KL budget binds.
    let acc = CovarianceAccumulator::new(2, 1e6).unwrap();
    let cfg = LinearExploreConfig {
        eta: 1.0,
        ..LinearExploreConfig::default()
    };
    let candidates = vec![Candidate {
        label: "far".into(),
        policy: far,
    }];
    let choice = select_enhancer(&main, &acc, &env, &cfg, &candidates).unwrap();
    assert!(choice.exhausted);
    assert_eq!(choice.policy, main);
    assert_eq!(choice.gamma, 0.0);
}

#[test]
fn single_iteration_with_offline_data_is_offline_dpo() {
    let env = make_synthetic_env(&EnvSpec::default(), 6).unwrap();
    let reference = Policy::uniform(&env);
    let streams = SeedStreams::new(31);
    let cfg = LoopConfig {
        iterations: 1,
        offline_pairs: 64,
        ..LoopConfig::default()
    };
    let online = run_pipeline(&cfg, &env, &reference, &TrueReward, &streams, provenance()).unwrap();
    let offline = run_offline_dpo(&cfg, &env, &reference, 64, &streams, provenance()).unwrap();
    assert_eq!(online.final_policy(), &offline.policy);
    assert_eq!(online.metrics[0].j_true, offline.metrics.j_true);
}

#[test]
fn pipeline_accounting_and_improvement() {
    let env = make_synthetic_env(&EnvSpec::default(), 1).unwrap();
    let reference = Policy::uniform(&env);
    let cfg = LoopConfig {
        offline_pairs: 10,
        ..LoopConfig::default()
    };
    let report = run_pipeline(
        &cfg,
        &env,
        &reference,
        &TrueReward,
        &SeedStreams::new(2),
        provenance(),
    )
    .unwrap();
    let off = 10 - report.offline_skipped;
    let mut last = 0;
    for (t, row) in report.metrics.iter().enumerate() {
        assert_eq!(row.iteration, t + 1);
        assert!(row.dataset_size >= off && row.dataset_size <= off + t * cfg.batch_size);
        assert!(row.dataset_size >= last);
        last = row.dataset_size;
    }
    assert_eq!(
        report.dataset.len(),
        last + report.metrics.last().unwrap().batch_pairs
    );
    let j0 = policy_value_j(&reference, &reference, &env, cfg.eta).unwrap();
    let selected = &report.metrics[report.best_iteration - 1];
    assert!(selected.j_true >= j0, "{} < {j0}", selected.j_true);
    let again = run_pipeline(
        &cfg,
        &env,
        &reference,
        &TrueReward,
        &SeedStreams::new(2),
        provenance(),
    )
    .unwrap();
    assert_eq!(report, again);
}

#[test]
fn reward_table_ids_round_trip_through_lookup_errors() {
    let env = common::table_env(&[vec![0.0, 1.0]]);
    assert!(preference_probability(&env, PromptId(1), ResponseId(0), ResponseId(1)).is_err());
    assert!(preference_probability(&env, PromptId(0), ResponseId(0), ResponseId(2)).is_err());
}
