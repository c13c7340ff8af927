//! The practical online loop: refit DPO on everything collected so far,
//! sample `n` responses per prompt at mixed temperatures, keep the best and
//! worst under a (length-penalized) scorer as a new preference pair, repeat.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    preference_probability, sample_offline_dataset, sample_preference, Environment,
    PreferenceLabel, PreferenceRecord, PromptId, RecordMeta, ResponseId,
};
use crate::error::{LabError, Result};
use crate::optim::OptimOpts;
use crate::policy::{
    best_worst_of_n, expected_length, fit_dpo, gibbs_policy, mean_kl, policy_value_j, Policy,
};
use crate::reward::{
    fit_bt_reward, fit_pairwise_pref_model, format_pair_instance, LengthBiased, PairFeatures,
    PairwiseTournament, RewardFn, RewardMode, RewardModel, TrueReward,
};
use crate::seeds::SeedStreams;

/// `r~(x, a) = r^(x, a) - lambda |a|`.
pub fn apply_length_penalty(score: f64, length: u32, lambda: f64) -> f64 {
    score - lambda * length as f64
}

#[derive(Debug, Clone)]
pub struct LengthPenalized<S> {
    pub inner: S,
    pub lambda: f64,
}

impl<S: RewardFn> RewardFn for LengthPenalized<S> {
    fn reward(&self, env: &Environment, x: PromptId, a: ResponseId) -> f64 {
        apply_length_penalty(self.inner.reward(env, x, a), env.length(x, a), self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    RestartFromRef,
    #[default]
    ContinueFromLast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    /// Number of iterations `T`.
    pub iterations: usize,
    /// Prompts per iteration `m`.
    pub batch_size: usize,
    /// Rejection-sampling width `n`.
    pub rejection_n: usize,
    pub eta: f64,
    pub length_penalty: f64,
    /// `n` is split evenly across these, in order.
    pub temperatures: Vec<f64>,
    pub init_mode: InitMode,
    /// Size of the offline seed dataset, drawn from `pi_0 x pi_0`.
    pub offline_pairs: usize,
    /// Oracle-judged comparisons per checkpoint for model selection.
    pub validation_evals: usize,
    pub dpo: OptimOpts,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            batch_size: 32,
            rejection_n: 8,
            eta: 0.1,
            length_penalty: 0.0,
            temperatures: vec![1.0, 0.7],
            init_mode: InitMode::ContinueFromLast,
            offline_pairs: 0,
            validation_evals: 2000,
            dpo: OptimOpts::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(LabError::Config("loop.iterations must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(LabError::Config("loop.batch_size must be >= 1".into()));
        }
        if self.rejection_n < 2 {
            return Err(LabError::Config("loop.rejection_n must be >= 2".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(LabError::Config("loop.eta must be positive".into()));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(LabError::Config("loop.length_penalty must be >= 0".into()));
        }
        if self.temperatures.is_empty()
            || self
                .temperatures
                .iter()
                .any(|t| !(*t > 0.0 && t.is_finite()))
        {
            return Err(LabError::Config(
                "loop.temperatures must be nonempty and positive".into(),
            ));
        }
        if !self.rejection_n.is_multiple_of(self.temperatures.len()) {
            return Err(LabError::Config(format!(
                "loop.rejection_n = {} is not divisible by {} temperatures",
                self.rejection_n,
                self.temperatures.len()
            )));
        }
        if self.validation_evals < 1 {
            return Err(LabError::Config(
                "loop.validation_evals must be >= 1".into(),
            ));
        }
        self.dpo.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub records: Vec<PreferenceRecord>,
    /// Prompts whose best and worst draws were the same response.
    pub dropped: usize,
}

/// For each of `m` prompts drawn from `d0`, the best/worst-of-`n` pair under
/// `scorer - lambda |a|`. Pairs with best = worst are dropped and counted.
#[allow(clippy::too_many_arguments)]
pub fn collect_preference_batch<S: RewardFn + ?Sized, R: Rng + ?Sized>(
    policy: &Policy,
    scorer: &S,
    env: &Environment,
    m: usize,
    n: usize,
    temps: &[f64],
    lambda: f64,
    rng: &mut R,
) -> Result<BatchOutcome> {
    if !(lambda >= 0.0) {
        return Err(LabError::Argument(format!(
            "length penalty must be >= 0, got {lambda}"
        )));
    }
    let penalized = LengthPenalized {
        inner: |e: &Environment, x, a| scorer.reward(e, x, a),
        lambda,
    };
    let mut records = Vec::with_capacity(m);
    let mut dropped = 0;
    for _ in 0..m {
        let x = env.sample_prompt(rng);
        let (best, worst) = best_worst_of_n(policy, &penalized, env, x, n, temps, rng)?;
        if best == worst {
            dropped += 1;
        } else {
            records.push(PreferenceRecord::new(x, best, worst));
        }
    }
    Ok(BatchOutcome { records, dropped })
}

/// True when every record's chosen response strictly outscores its rejected
/// one under `scorer - lambda |a|`.
pub fn batch_is_ordered<S: RewardFn + ?Sized>(
    records: &[PreferenceRecord],
    scorer: &S,
    env: &Environment,
    lambda: f64,
) -> bool {
    records.iter().all(|r| {
        let s = |a| {
            apply_length_penalty(
                scorer.reward(env, r.prompt, a),
                env.length(r.prompt, a),
                lambda,
            )
        };
        s(r.chosen) > s(r.rejected)
    })
}

/// Per-iteration diagnostics of the policy `pi_t` trained at iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub j_true: f64,
    /// `E_{d0} KL(pi_t || pi_0)`.
    pub kl_to_ref: f64,
    pub mean_response_length: f64,
    /// Records `pi_t` was trained on.
    pub dataset_size: usize,
    /// Exact oracle win probability of `pi_t` against `pi_0`, ties counted 1/2.
    pub win_rate_vs_ref: f64,
    /// `J(pi*) - J(pi_t) + eta E_{d0} KL(pi* || pi_t)`.
    pub suboptimality_gap: f64,
    pub batch_pairs: usize,
    pub batch_dropped: usize,
}

pub const METRICS_HEADER: &str = "iteration,j_true,kl_to_ref,mean_response_length,dataset_size,win_rate_vs_ref,suboptimality_gap,batch_pairs,batch_dropped";

pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.j_true,
            r.kl_to_ref,
            r.mean_response_length,
            r.dataset_size,
            r.win_rate_vs_ref,
            r.suboptimality_gap,
            r.batch_pairs,
            r.batch_dropped
        )
        .unwrap();
    }
    out
}

/// Exact `P(a ~ policy beats b ~ baseline)` under the oracle, averaged over `d0`.
/// Identical responses count 1/2, which is also what the oracle returns.
pub fn expected_win_rate(policy: &Policy, baseline: &Policy, env: &Environment) -> Result<f64> {
    policy.check_env(env)?;
    baseline.check_env(env)?;
    let mut total = 0.0;
    for x in env.prompt_ids() {
        let (p, q) = (policy.probs(x), baseline.probs(x));
        let mut w = 0.0;
        for a in env.response_ids(x) {
            for b in env.response_ids(x) {
                w += p[a.0] * q[b.0] * preference_probability(env, x, a, b)?;
            }
        }
        total += env.prompt_dist()[x.0] * w;
    }
    Ok(total)
}

/// Monte-Carlo oracle-judged win rate of `policy` over `baseline`.
pub fn win_rate<R: Rng + ?Sized>(
    policy: &Policy,
    baseline: &Policy,
    env: &Environment,
    n_eval: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_eval == 0 {
        return Err(LabError::Argument("win_rate needs n_eval >= 1".into()));
    }
    policy.check_env(env)?;
    baseline.check_env(env)?;
    let mut wins = 0.0;
    for _ in 0..n_eval {
        let x = env.sample_prompt(rng);
        let (a, b) = (policy.sample(x, rng), baseline.sample(x, rng));
        if a == b {
            wins += 0.5;
        } else if sample_preference(env, x, a, b, rng)? == PreferenceLabel::First {
            wins += 1.0;
        }
    }
    Ok(wins / n_eval as f64)
}

pub fn evaluate_policy(
    policy: &Policy,
    reference: &Policy,
    env: &Environment,
    eta: f64,
    iteration: usize,
    dataset_size: usize,
) -> Result<MetricRow> {
    let optimal = gibbs_policy(&TrueReward, env, reference, eta)?;
    let j = policy_value_j(policy, reference, env, eta)?;
    let gap =
        policy_value_j(&optimal, reference, env, eta)? - j + eta * mean_kl(&optimal, policy, env)?;
    Ok(MetricRow {
        iteration,
        j_true: j,
        kl_to_ref: mean_kl(policy, reference, env)?,
        mean_response_length: expected_length(policy, env)?,
        dataset_size,
        win_rate_vs_ref: expected_win_rate(policy, reference, env)?,
        suboptimality_gap: gap,
        batch_pairs: 0,
        batch_dropped: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    /// Index of the next iteration to run, starting at 1.
    pub iteration: usize,
    /// `D_off ∪ D_1 ∪ ... ∪ D_{t-1}`; append-only.
    pub dataset: Vec<PreferenceRecord>,
    pub policy: Policy,
    pub metrics: Vec<MetricRow>,
}

impl IterationState {
    pub fn new(reference: &Policy, offline: Vec<PreferenceRecord>) -> Self {
        Self {
            iteration: 1,
            dataset: offline,
            policy: reference.clone(),
            metrics: Vec::new(),
        }
    }
}

/// One pass of fit, collect, append.
pub fn run_iteration<S: RewardFn + ?Sized, R: Rng + ?Sized>(
    state: IterationState,
    cfg: &LoopConfig,
    env: &Environment,
    scorer: &S,
    reference: &Policy,
    rng: &mut R,
) -> Result<IterationState> {
    let t = state.iteration;
    let mut inner = || -> Result<IterationState> {
        let policy = if state.dataset.is_empty() {
            reference.clone()
        } else {
            let init = match cfg.init_mode {
                InitMode::RestartFromRef => reference,
                InitMode::ContinueFromLast => &state.policy,
            };
            fit_dpo(&state.dataset, reference, init, cfg.eta, &cfg.dpo)?.policy
        };
        let batch = collect_preference_batch(
            &policy,
            scorer,
            env,
            cfg.batch_size,
            cfg.rejection_n,
            &cfg.temperatures,
            cfg.length_penalty,
            rng,
        )?;
        let mut row = evaluate_policy(&policy, reference, env, cfg.eta, t, state.dataset.len())?;
        row.batch_pairs = batch.records.len();
        row.batch_dropped = batch.dropped;

        let mut dataset = state.dataset.clone();
        dataset.extend(batch.records.into_iter().map(|r| {
            r.with_meta(RecordMeta {
                iteration: Some(t),
                sampler: Some("best_worst_of_n".into()),
                ..RecordMeta::default()
            })
        }));
        let mut metrics = state.metrics.clone();
        metrics.push(row);
        Ok(IterationState {
            iteration: t + 1,
            dataset,
            policy,
            metrics,
        })
    };
    inner().map_err(|e| e.at_iteration(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerMode {
    /// Rank with the environment's true reward.
    #[default]
    Oracle,
    /// Rank with a tabular BT reward fitted on oracle-labeled pairs.
    BtReward,
    /// Rank by mean predicted win probability under a pairwise model.
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSpec {
    pub mode: ScorerMode,
    /// Oracle-labeled pairs from `pi_0 x pi_0` used to fit learned scorers.
    pub train_pairs: usize,
    /// Adds `length_bias * |a|` to the scorer, emulating a length-biased reward model.
    pub length_bias: f64,
    pub fit: OptimOpts,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        Self {
            mode: ScorerMode::Oracle,
            train_pairs: 4000,
            length_bias: 0.0,
            fit: OptimOpts::default(),
        }
    }
}

impl ScorerSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.length_bias.is_finite() {
            return Err(LabError::Config("scorer.length_bias must be finite".into()));
        }
        if self.mode != ScorerMode::Oracle && self.train_pairs == 0 {
            return Err(LabError::Config(
                "scorer.train_pairs must be >= 1 for learned scorers".into(),
            ));
        }
        self.fit.validate()
    }
}

#[derive(Debug, Clone)]
pub enum ScorerModel {
    Oracle,
    Bt(RewardModel),
    Pairwise(PairwiseTournament),
}

impl RewardFn for ScorerModel {
    fn reward(&self, env: &Environment, x: PromptId, a: ResponseId) -> f64 {
        match self {
            ScorerModel::Oracle => env.true_reward(x, a),
            ScorerModel::Bt(m) => m.reward(env, x, a),
            ScorerModel::Pairwise(t) => t.reward(env, x, a),
        }
    }
}

/// Builds the ranking scorer. Learned scorers are trained on their own
/// oracle-labeled data drawn from the `"scorer"` stream.
pub fn build_scorer(
    spec: &ScorerSpec,
    env: &Environment,
    reference: &Policy,
    streams: &SeedStreams,
) -> Result<LengthBiased<ScorerModel>> {
    spec.validate()?;
    let inner = match spec.mode {
        ScorerMode::Oracle => ScorerModel::Oracle,
        mode => {
            let mut rng = streams.rng("scorer");
            let data =
                sample_offline_dataset(env, reference, reference, spec.train_pairs, &mut rng)?
                    .records;
            if data.is_empty() {
                return Err(LabError::Config(
                    "scorer training data came out empty".into(),
                ));
            }
            if mode == ScorerMode::BtReward {
                ScorerModel::Bt(fit_bt_reward(&data, env, RewardMode::Tabular, &spec.fit)?.model)
            } else {
                let instances: Vec<_> = data
                    .iter()
                    .map(|r| format_pair_instance(r, &mut rng))
                    .collect();
                let model = fit_pairwise_pref_model(
                    &instances,
                    env,
                    PairFeatures::TabularDifference,
                    &spec.fit,
                )?
                .model;
                ScorerModel::Pairwise(PairwiseTournament::new(model, env)?)
            }
        }
    };
    Ok(LengthBiased {
        inner,
        bias: spec.length_bias,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub provenance: Provenance,
    pub metrics: Vec<MetricRow>,
    /// `checkpoints[t-1]` is `pi_t`.
    pub checkpoints: Vec<Policy>,
    pub validation_win_rates: Vec<f64>,
    /// 1-based index of the selected checkpoint.
    pub best_iteration: usize,
    pub dataset: Vec<PreferenceRecord>,
    pub offline_skipped: usize,
}

impl PipelineReport {
    pub fn final_policy(&self) -> &Policy {
        self.checkpoints.last().expect("at least one iteration")
    }

    pub fn best_policy(&self) -> &Policy {
        &self.checkpoints[self.best_iteration - 1]
    }
}

/// Index of the first maximum; ties resolve to the earlier checkpoint.
fn select_best(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Runs `T` iterations and picks the checkpoint with the highest
/// held-out oracle win rate against `pi_0`.
///
/// Streams used: `"offline"` for `D_off`, `"loop"` for batch collection and
/// `"validation"` (restarted per checkpoint) for model selection.
pub fn run_pipeline<S: RewardFn + ?Sized>(
    cfg: &LoopConfig,
    env: &Environment,
    reference: &Policy,
    scorer: &S,
    streams: &SeedStreams,
    provenance: Provenance,
) -> Result<PipelineReport> {
    cfg.validate()?;
    reference.check_env(env)?;
    let offline = sample_offline_dataset(
        env,
        reference,
        reference,
        cfg.offline_pairs,
        &mut streams.rng("offline"),
    )?;
    let mut state = IterationState::new(reference, offline.records);
    let mut rng = streams.rng("loop");
    let mut checkpoints = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        state = run_iteration(state, cfg, env, scorer, reference, &mut rng)?;
        checkpoints.push(state.policy.clone());
    }
    let validation_win_rates = checkpoints
        .iter()
        .map(|p| {
            win_rate(
                p,
                reference,
                env,
                cfg.validation_evals,
                &mut streams.rng("validation"),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let best_iteration = select_best(&validation_win_rates) + 1;
    Ok(PipelineReport {
        provenance,
        metrics: state.metrics,
        checkpoints,
        validation_win_rates,
        best_iteration,
        dataset: state.dataset,
        offline_skipped: offline.skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub provenance: Provenance,
    pub metrics: MetricRow,
    pub policy: Policy,
    pub dataset: Vec<PreferenceRecord>,
    pub skipped: usize,
}

/// Single-shot DPO on `budget` oracle-labeled pairs from `pi_0 x pi_0`.
pub fn run_offline_dpo(
    cfg: &LoopConfig,
    env: &Environment,
    reference: &Policy,
    budget: usize,
    streams: &SeedStreams,
    provenance: Provenance,
) -> Result<OfflineReport> {
    cfg.validate()?;
    let sample = sample_offline_dataset(
        env,
        reference,
        reference,
        budget,
        &mut streams.rng("offline"),
    )?;
    let policy = if sample.records.is_empty() {
        reference.clone()
    } else {
        fit_dpo(&sample.records, reference, reference, cfg.eta, &cfg.dpo)?.policy
    };
    let metrics = evaluate_policy(&policy, reference, env, cfg.eta, 1, sample.records.len())?;
    Ok(OfflineReport {
        provenance,
        metrics,
        policy,
        dataset: sample.records,
        skipped: sample.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_synthetic_env, EnvSpec, PromptResponses};
    use crate::seeds::rng_from_seed;

    #[test]
    fn penalty_examples() {
        assert_eq!(apply_length_penalty(1.3, 250, 0.0), 1.3);
        assert!((apply_length_penalty(1.0, 500, 0.001) - 0.5).abs() < 1e-15);
        for lambda in [1e-6, 0.001, 2.0] {
            assert!(
                apply_length_penalty(0.7, 100, lambda) > apply_length_penalty(0.7, 200, lambda)
            );
        }
    }

    #[test]
    fn degenerate_policy_drops_everything() {
        let env = make_synthetic_env(&EnvSpec::default(), 0).unwrap();
        let logits = env
            .prompt_ids()
            .map(|x| {
                (0..env.n_responses(x))
                    .map(|a| if a == 0 { 0.0 } else { -1e4 })
                    .collect()
            })
            .collect();
        let point = Policy::from_logits(logits, 1.0).unwrap();
        let mut rng = rng_from_seed(2);
        let out =
            collect_preference_batch(&point, &TrueReward, &env, 20, 8, &[1.0, 0.7], 0.0, &mut rng)
                .unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.dropped, 20);
        let out =
            collect_preference_batch(&point, &TrueReward, &env, 0, 8, &[1.0, 0.7], 0.0, &mut rng)
                .unwrap();
        assert!(out.records.is_empty() && out.dropped == 0);
    }

    #[test]
    fn chosen_outranks_rejected() {
        let env = make_synthetic_env(&EnvSpec::default(), 5).unwrap();
        let u = Policy::uniform(&env);
        let mut rng = rng_from_seed(3);
        for lambda in [0.0, 0.001, 0.01] {
            let out = collect_preference_batch(
                &u,
                &TrueReward,
                &env,
                200,
                8,
                &[1.0, 0.7],
                lambda,
                &mut rng,
            )
            .unwrap();
            assert!(!out.records.is_empty());
            assert!(batch_is_ordered(&out.records, &TrueReward, &env, lambda));
        }
    }

    #[test]
    fn first_iteration_without_data_keeps_reference() {
        let env = make_synthetic_env(&EnvSpec::default(), 1).unwrap();
        let reference = Policy::from_logits(
            env.prompt_ids()
                .map(|x| (0..env.n_responses(x)).map(|a| 0.1 * a as f64).collect())
                .collect(),
            1.0,
        )
        .unwrap();
        let state = IterationState::new(&reference, vec![]);
        let cfg = LoopConfig::default();
        let next = run_iteration(
            state,
            &cfg,
            &env,
            &TrueReward,
            &reference,
            &mut rng_from_seed(0),
        )
        .unwrap();
        assert_eq!(next.policy, reference);
        assert_eq!(next.iteration, 2);
        assert_eq!(next.metrics.len(), 1);
        assert_eq!(next.metrics[0].dataset_size, 0);
    }

    #[test]
    fn win_rate_examples() {
        let env = Environment::new(
            vec![1.0],
            vec![PromptResponses {
                rewards: vec![15.0, 0.0, -15.0],
                lengths: vec![1, 1, 1],
                features: None,
            }],
        )
        .unwrap();
        let u = Policy::uniform(&env);
        let mut rng = rng_from_seed(1);
        let self_play = win_rate(&u, &u, &env, 10_000, &mut rng).unwrap();
        assert!((self_play - 0.5).abs() < 0.02);
        let best = Policy::from_logits(vec![vec![0.0, -1e4, -1e4]], 1.0).unwrap();
        let worst = Policy::from_logits(vec![vec![-1e4, -1e4, 0.0]], 1.0).unwrap();
        assert!(win_rate(&best, &worst, &env, 1000, &mut rng).unwrap() > 0.999);
        assert!(matches!(
            win_rate(&u, &u, &env, 0, &mut rng),
            Err(LabError::Argument(_))
        ));
        assert!((expected_win_rate(&u, &u, &env).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn select_best_prefers_earlier_on_ties() {
        assert_eq!(select_best(&[0.5, 0.7, 0.7]), 1);
        assert_eq!(select_best(&[0.9, 0.1]), 0);
    }

    #[test]
    fn invalid_loop_configs() {
        let bad = [
            LoopConfig {
                iterations: 0,
                ..LoopConfig::default()
            },
            LoopConfig {
                batch_size: 0,
                ..LoopConfig::default()
            },
            LoopConfig {
                rejection_n: 1,
                ..LoopConfig::default()
            },
            LoopConfig {
                rejection_n: 7,
                ..LoopConfig::default()
            },
            LoopConfig {
                eta: 0.0,
                ..LoopConfig::default()
            },
            LoopConfig {
                length_penalty: -1.0,
                ..LoopConfig::default()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(cfg.validate(), Err(LabError::Config(_))),
                "{cfg:?}"
            );
        }
    }
}
