//! One function per CLI subcommand. Each writes into an output directory and
//! returns a one-line summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use super::ingest::{ingest_preference_file, records_to_jsonl, IngestOptions, IngestReport};
use super::{build_reference, write_file, ExperimentConfig};
use crate::env::{sample_offline_dataset, Environment, PreferenceRecord};
use crate::error::{LabError, Result};
use crate::iterative::{
    build_scorer, evaluate_policy, metrics_to_csv, run_offline_dpo, run_pipeline, MetricRow,
    Provenance,
};
use crate::linear::run_theoretical_loop;
use crate::policy::Policy;
use crate::reward::{
    fit_bt_reward, fit_pairwise_pref_model, format_pair_instance, length_reward_correlation,
    pairwise_pref_predict, RewardFn,
};
use crate::seeds::SeedStreams;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub output_dir: PathBuf,
    pub summary: String,
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    env: Environment,
    reference: Policy,
    streams: SeedStreams,
    hash: String,
}

impl Run {
    /// Resolves the environment and `pi_0` and writes the files every run shares:
    /// `config.resolved.json`, `env.json` and `reference.json`.
    fn start(cfg: &ExperimentConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.environment()?;
        let streams = cfg.streams();
        let reference = build_reference(&cfg.reference, &env, &streams)?;
        let hash = cfg.hash();
        std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
        write_file(out, "config.resolved.json", &(cfg.to_json() + "\n"))?;
        write_file(out, "env.json", &(env.to_json()? + "\n"))?;
        save_checkpoint(
            &reference,
            CheckpointMeta {
                config_hash: hash.clone(),
                iteration: 0,
            },
            &out.join("reference.json"),
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            out: out.to_path_buf(),
            env,
            reference,
            streams,
            hash,
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            master_seed: self.cfg.master_seed,
            config_hash: self.hash.clone(),
        }
    }

    fn checkpoint(&self, policy: &Policy, iteration: usize, name: &str) -> Result<()> {
        save_checkpoint(
            policy,
            CheckpointMeta {
                config_hash: self.hash.clone(),
                iteration,
            },
            &self.out.join(name),
        )
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_file(
            &self.out,
            name,
            &(serde_json::to_string_pretty(value)? + "\n"),
        )
        .map(|_| ())
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        write_file(&self.out, name, contents).map(|_| ())
    }

    fn outcome(&self, summary: String) -> Outcome {
        Outcome {
            output_dir: self.out.clone(),
            summary,
        }
    }

    /// The configured data file, or `pairs` oracle-labeled pairs from
    /// `pi_0 x pi_0` on the `"data"` stream.
    fn preference_data(&self, pairs: usize) -> Result<(Vec<PreferenceRecord>, String)> {
        let (records, note) = match &self.cfg.data.file {
            Some(path) => {
                let opts = IngestOptions {
                    margin_threshold: self.cfg.data.margin_threshold,
                };
                let report: IngestReport = ingest_preference_file(path, &opts)?;
                self.write_json("ingest_report.json", &IngestSummary::from(&report))?;
                let note = report.summary();
                (report.records, note)
            }
            None => {
                let mut rng = self.streams.rng("data");
                let s = sample_offline_dataset(
                    &self.env,
                    &self.reference,
                    &self.reference,
                    pairs,
                    &mut rng,
                )?;
                let note = format!("{} sampled pairs, {} skipped", s.records.len(), s.skipped);
                (s.records, note)
            }
        };
        for r in &records {
            self.env.check_record(r)?;
        }
        if records.is_empty() {
            return Err(LabError::Ingestion("no usable preference records".into()));
        }
        self.write("dataset.jsonl", &records_to_jsonl(&records)?)?;
        Ok((records, note))
    }
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    kept: usize,
    below_margin: usize,
    blank_lines: usize,
    rejected: &'a [super::ingest::RejectedLine],
}

impl<'a> From<&'a IngestReport> for IngestSummary<'a> {
    fn from(r: &'a IngestReport) -> Self {
        Self {
            kept: r.records.len(),
            below_margin: r.below_margin,
            blank_lines: r.blank_lines,
            rejected: &r.rejected,
        }
    }
}

/// Largest error on within-prompt reward differences, i.e. after removing
/// each prompt's unidentifiable offset.
fn max_difference_error<F: RewardFn + ?Sized>(model: &F, env: &Environment) -> f64 {
    let mut worst: f64 = 0.0;
    for x in env.prompt_ids() {
        let ids: Vec<_> = env.response_ids(x).collect();
        for &a in &ids {
            for &b in &ids {
                let est = model.reward(env, x, a) - model.reward(env, x, b);
                let truth = env.true_reward(x, a) - env.true_reward(x, b);
                worst = worst.max((est - truth).abs());
            }
        }
    }
    worst
}

pub fn gen_env(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = Run::start(cfg, out)?;
    let mode = if run.env.is_linear() {
        "linear"
    } else {
        "tabular"
    };
    Ok(run.outcome(format!(
        "gen-env: {} prompts, {} responses, {mode} -> {}",
        run.env.n_prompts(),
        run.env.total_responses(),
        out.join("env.json").display()
    )))
}

pub fn fit_reward(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = Run::start(cfg, out)?;
    let spec = &cfg.reward_fit;
    let (data, note) = run.preference_data(spec.pairs)?;
    let fit = fit_bt_reward(&data, &run.env, spec.mode, &spec.opts)?;
    let err = max_difference_error(&fit.model, &run.env);

    #[derive(Serialize)]
    struct Report<'a> {
        fit: &'a crate::reward::BtFit,
        max_difference_error: f64,
        data: &'a str,
    }
    run.write_json(
        "reward_model.json",
        &Report {
            fit: &fit,
            max_difference_error: err,
            data: &note,
        },
    )?;
    Ok(run.outcome(format!(
        "fit-reward: {:?} BT model on {} records ({note}); loss {:.6}, converged {}, max difference error {err:.4}",
        spec.mode,
        data.len(),
        fit.report.final_loss,
        fit.report.converged
    )))
}

pub fn fit_pref_model(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = Run::start(cfg, out)?;
    let spec = &cfg.pref_model;
    let (data, note) = run.preference_data(spec.pairs)?;
    let mut rng = run.streams.rng("format");
    let instances: Vec<_> = data
        .iter()
        .map(|r| format_pair_instance(r, &mut rng))
        .collect();
    let fit = fit_pairwise_pref_model(&instances, &run.env, spec.features.clone(), &spec.opts)?;
    let (mut agree, mut total) = (0usize, 0usize);
    for x in run.env.prompt_ids() {
        for a in run.env.response_ids(x) {
            for b in run.env.response_ids(x).filter(|b| b.0 > a.0) {
                let truth = run.env.true_reward(x, a) - run.env.true_reward(x, b);
                if truth == 0.0 {
                    continue;
                }
                let p = pairwise_pref_predict(&fit.model, &run.env, x, a, b)?;
                total += 1;
                if (p > 0.5) == (truth > 0.0) {
                    agree += 1;
                }
            }
        }
    }
    let agreement = if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    };

    #[derive(Serialize)]
    struct Report<'a> {
        fit: &'a crate::reward::PairwiseFit,
        oracle_order_agreement: f64,
        data: &'a str,
    }
    run.write_json(
        "pref_model.json",
        &Report {
            fit: &fit,
            oracle_order_agreement: agreement,
            data: &note,
        },
    )?;
    Ok(run.outcome(format!(
        "fit-pref-model: {} instances ({note}); loss {:.6}, position bias {:.4}, oracle order agreement {agreement:.4}",
        instances.len(),
        fit.report.final_loss,
        fit.model.position_bias
    )))
}

pub fn run_offline(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = Run::start(cfg, out)?;
    let budget = cfg.loop_cfg.iterations * cfg.loop_cfg.batch_size;
    let report = run_offline_dpo(
        &cfg.loop_cfg,
        &run.env,
        &run.reference,
        budget,
        &run.streams,
        run.provenance(),
    )?;
    run.write(
        "metrics.csv",
        &metrics_to_csv(std::slice::from_ref(&report.metrics)),
    )?;
    run.write("dataset.jsonl", &records_to_jsonl(&report.dataset)?)?;
    run.checkpoint(&report.policy, 1, "policy.json")?;

    #[derive(Serialize)]
    struct Report<'a> {
        provenance: &'a Provenance,
        budget: usize,
        skipped: usize,
        metrics: &'a MetricRow,
    }
    run.write_json(
        "report.json",
        &Report {
            provenance: &report.provenance,
            budget,
            skipped: report.skipped,
            metrics: &report.metrics,
        },
    )?;
    Ok(run.outcome(format!(
        "run-offline-dpo: {} pairs; J_true {:.6}, KL {:.4}, win rate vs ref {:.4}",
        report.dataset.len(),
        report.metrics.j_true,
        report.metrics.kl_to_ref,
        report.metrics.win_rate_vs_ref
    )))
}

pub fn run_iterative(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = Run::start(cfg, out)?;
    let scorer = build_scorer(&cfg.scorer, &run.env, &run.reference, &run.streams)?;
    let report = run_pipeline(
        &cfg.loop_cfg,
        &run.env,
        &run.reference,
        &scorer,
        &run.streams,
        run.provenance(),
    )?;
    run.write("metrics.csv", &metrics_to_csv(&report.metrics))?;
    run.write("dataset.jsonl", &records_to_jsonl(&report.dataset)?)?;
    for (i, policy) in report.checkpoints.iter().enumerate() {
        run.checkpoint(policy, i + 1, &format!("checkpoints/iter_{}.json", i + 1))?;
    }
    run.checkpoint(report.best_policy(), report.best_iteration, "policy.json")?;

    #[derive(Serialize)]
    struct Report<'a> {
        provenance: &'a Provenance,
        best_iteration: usize,
        validation_win_rates: &'a [f64],
        offline_skipped: usize,
        metrics: &'a [MetricRow],
    }
    run.write_json(
        "report.json",
        &Report {
            provenance: &report.provenance,
            best_iteration: report.best_iteration,
            validation_win_rates: &report.validation_win_rates,
            offline_skipped: report.offline_skipped,
            metrics: &report.metrics,
        },
    )?;
    let best = &report.metrics[report.best_iteration - 1];
    Ok(run.outcome(format!(
        "run-iterative: {} iterations, {} records; selected iteration {} with J_true {:.6}, win rate vs ref {:.4}",
        report.metrics.len(),
        report.dataset.len(),
        report.best_iteration,
        best.j_true,
        best.win_rate_vs_ref
    )))
}

pub fn run_theoretical(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = Run::start(cfg, out)?;
    if !run.env.is_linear() {
        return Err(LabError::Mode(
            "run-theoretical needs a linear environment (env.reward.kind = \"linear\")".into(),
        ));
    }
    let explore = &cfg.explore;
    let trace = run_theoretical_loop(
        &run.env,
        &run.reference,
        explore,
        &explore.candidates,
        &mut run.streams.rng("explore"),
    )?;
    run.write("trace.csv", &trace.to_csv())?;
    run.write("dataset.jsonl", &records_to_jsonl(&trace.dataset)?)?;
    run.write_json("trace.json", &trace.rows)?;
    let (first, last) = (&trace.rows[0], &trace.rows[trace.rows.len() - 1]);
    Ok(run.outcome(format!(
        "run-theoretical: {} iterations; suboptimality gap {:.6} -> {:.6}, selected gain {:.4} -> {:.4}",
        trace.rows.len(),
        first.subopt_gap,
        last.subopt_gap,
        first.gamma_selected,
        last.gamma_selected
    )))
}

pub fn analyze_length_bias(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let run = Run::start(cfg, out)?;
    let scorer = build_scorer(&cfg.scorer, &run.env, &run.reference, &run.streams)?;
    let policy = match &cfg.analysis.policy_checkpoint {
        Some(path) => load_checkpoint(path)?.policy,
        None => run.reference.clone(),
    };
    let a = &cfg.analysis;
    let report = length_reward_correlation(
        &scorer,
        &run.env,
        &policy,
        a.n_prompts,
        a.n_resp,
        &mut run.streams.rng("analysis"),
    )?;
    run.write("length_bias.csv", &report.to_csv())?;
    run.write_json("length_bias.json", &report)?;
    let mean = report
        .mean_coefficient
        .map_or_else(|| "undefined".to_string(), |m| format!("{m:.4}"));
    Ok(run.outcome(format!(
        "analyze-length-bias: {} prompts x {} responses; mean Pearson r {mean}, {} undefined",
        a.n_prompts, a.n_resp, report.n_missing
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub run: PathBuf,
    pub j_true: f64,
    pub win_rate_vs_ref: f64,
    pub mean_response_length: f64,
}

/// Recomputes metrics of each listed run from its stored `env.json`,
/// `reference.json`, `policy.json` and `config.resolved.json`.
pub fn compare_runs(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    if cfg.compare.runs.is_empty() {
        return Err(LabError::Config(
            "compare.runs must list at least one run directory".into(),
        ));
    }
    let mut rows = Vec::with_capacity(cfg.compare.runs.len());
    for dir in &cfg.compare.runs {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| LabError::io(&p, e))
        };
        let run_cfg = ExperimentConfig::from_json_str(&read("config.resolved.json")?)?;
        let env = Environment::from_json(&read("env.json")?)?;
        let reference = load_checkpoint(&dir.join("reference.json"))?.policy;
        let policy = load_checkpoint(&dir.join("policy.json"))?.policy;
        let m = evaluate_policy(&policy, &reference, &env, run_cfg.loop_cfg.eta, 0, 0)?;
        rows.push(CompareRow {
            run: dir.clone(),
            j_true: m.j_true,
            win_rate_vs_ref: m.win_rate_vs_ref,
            mean_response_length: m.mean_response_length,
        });
    }
    let mut csv = String::from("run,j_true,win_rate_vs_ref,mean_response_length\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.run.display(),
            r.j_true,
            r.win_rate_vs_ref,
            r.mean_response_length
        )
        .unwrap();
    }
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    write_file(out, "config.resolved.json", &(cfg.to_json() + "\n"))?;
    write_file(out, "compare.csv", &csv)?;
    let best = rows
        .iter()
        .reduce(|a, b| if b.j_true > a.j_true { b } else { a })
        .expect("nonempty");
    Ok(Outcome {
        output_dir: out.to_path_buf(),
        summary: format!(
            "compare: {} runs; highest J_true {:.6} in {}",
            rows.len(),
            best.j_true,
            best.run.display()
        ),
    })
}
