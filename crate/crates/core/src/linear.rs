//! Exploration with an enhancer policy in the linear-reward case.
//!
//! The main agent exploits: it is the DPO optimum over the log-linear policy
//! class on all data so far. The enhancer explores: among candidate variants
//! of the main agent it maximizes the information gain
//! `Gamma = beta |E_{pi1} phi - E_{pi2} phi|_{Sigma^{-1}}`, subject to
//! `eta E_{d0} KL(pi' || main) <= Gamma`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_preference, Environment, PreferenceLabel, PreferenceRecord, RecordMeta};
use crate::error::{LabError, Result};
use crate::iterative::evaluate_policy;
use crate::numeric::dot;
use crate::optim::OptimOpts;
use crate::policy::{
    best_of_n_policy, fit_dpo_linear, mean_kl, temperature_variant, worst_of_n_policy, Policy,
};

const SYMMETRY_TOL: f64 = 1e-10;

/// `Sigma_t = lambda I + sum_s E[(phi1 - phi2)(phi1 - phi2)^T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    matrix: DMatrix<f64>,
    lambda: f64,
    history_count: usize,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::Argument(
                "covariance dimension must be >= 1".into(),
            ));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LabError::Argument(format!(
                "ridge lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            matrix: DMatrix::identity(dim, dim) * lambda,
            lambda,
            history_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn history_count(&self) -> usize {
        self.history_count
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| {
            (0..d).all(|j| (self.matrix[(i, j)] - self.matrix[(j, i)]).abs() <= SYMMETRY_TOL)
        })
    }

    /// `v^T Sigma^{-1} v` through a Cholesky factorization.
    pub fn inverse_quadratic_form(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(LabError::Argument(format!(
                "vector of dimension {} against a {}x{} covariance",
                v.len(),
                self.dim(),
                self.dim()
            )));
        }
        let chol =
            self.matrix.clone().cholesky().ok_or_else(|| {
                LabError::LinearAlgebra("covariance is not positive definite".into())
            })?;
        let b = DVector::from_column_slice(v);
        let solved = chol.solve(&b);
        Ok(b.dot(&solved).max(0.0))
    }
}

fn feature_dim(env: &Environment) -> Result<usize> {
    env.feature_dim()
        .ok_or_else(|| LabError::Mode("linear exploration needs environment features".into()))
}

/// Exact `E_{x~d0, a~pi} phi(x, a)`.
pub fn expected_feature(policy: &Policy, env: &Environment) -> Result<Vec<f64>> {
    let d = feature_dim(env)?;
    policy.check_env(env)?;
    let mut mean = vec![0.0; d];
    for x in env.prompt_ids() {
        let w = env.prompt_dist()[x.0];
        for (a, p) in env.response_ids(x).zip(policy.probs(x)) {
            for (m, f) in mean.iter_mut().zip(env.features(x, a).unwrap()) {
                *m += w * p * f;
            }
        }
    }
    Ok(mean)
}

/// Adds `E_{x~d0, a1~pi1, a2~pi2}[(phi1 - phi2)(phi1 - phi2)^T]`, computed as
/// `E1[phi phi^T] + E2[phi phi^T] - mu1 mu2^T - mu2 mu1^T` per prompt.
pub fn covariance_update(
    acc: &CovarianceAccumulator,
    pi1: &Policy,
    pi2: &Policy,
    env: &Environment,
) -> Result<CovarianceAccumulator> {
    let d = feature_dim(env)?;
    if d != acc.dim() {
        return Err(LabError::Argument(format!(
            "features have dimension {d} but the accumulator is {}",
            acc.dim()
        )));
    }
    pi1.check_env(env)?;
    pi2.check_env(env)?;
    let mut inc = DMatrix::<f64>::zeros(d, d);
    for x in env.prompt_ids() {
        let w = env.prompt_dist()[x.0];
        let (p1, p2) = (pi1.probs(x), pi2.probs(x));
        let mut mu1 = DVector::<f64>::zeros(d);
        let mut mu2 = DVector::<f64>::zeros(d);
        let mut second = DMatrix::<f64>::zeros(d, d);
        for a in env.response_ids(x) {
            let phi = DVector::from_column_slice(env.features(x, a).unwrap());
            mu1 += &phi * p1[a.0];
            mu2 += &phi * p2[a.0];
            second += (&phi * phi.transpose()) * (p1[a.0] + p2[a.0]);
        }
        let cross = &mu1 * mu2.transpose();
        inc += (second - &cross - cross.transpose()) * w;
    }
    // Symmetrize away rounding.
    let inc = (&inc + inc.transpose()) * 0.5;
    Ok(CovarianceAccumulator {
        matrix: &acc.matrix + inc,
        lambda: acc.lambda,
        history_count: acc.history_count + 1,
    })
}

/// `beta * sqrt(delta^T Sigma^{-1} delta)` with `delta = E_{pi1} phi - E_{pi2} phi`.
pub fn information_gain(
    acc: &CovarianceAccumulator,
    pi1: &Policy,
    pi2: &Policy,
    env: &Environment,
    beta: f64,
) -> Result<f64> {
    let (m1, m2) = (expected_feature(pi1, env)?, expected_feature(pi2, env)?);
    let delta: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a - b).collect();
    if delta.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    Ok(beta.abs() * acc.inverse_quadratic_form(&delta)?.sqrt())
}

/// How enhancer candidates are derived from the main agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateSpec {
    pub temperatures: Vec<f64>,
    /// Best-of-n variants, ranked by the main agent's implicit reward.
    pub best_of_n: Vec<usize>,
    pub worst_of_n: Vec<usize>,
}

impl Default for CandidateSpec {
    fn default() -> Self {
        Self {
            temperatures: vec![0.25, 0.5, 2.0, 4.0],
            best_of_n: vec![2, 4, 8],
            worst_of_n: vec![2, 4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: String,
    pub policy: Policy,
}

/// Produces enhancer candidates from the main agent and its reward estimate.
pub trait CandidateGenerator {
    fn candidates(&self, main: &Policy, theta: &[f64], env: &Environment)
        -> Result<Vec<Candidate>>;
}

impl CandidateGenerator for CandidateSpec {
    fn candidates(
        &self,
        main: &Policy,
        theta: &[f64],
        env: &Environment,
    ) -> Result<Vec<Candidate>> {
        let reward = |e: &Environment, x, a| dot(theta, e.features(x, a).unwrap());
        let mut out = vec![Candidate {
            label: "main".into(),
            policy: main.clone(),
        }];
        for &t in &self.temperatures {
            out.push(Candidate {
                label: format!("temperature:{t}"),
                policy: temperature_variant(main, main.temperature() * t)?,
            });
        }
        for &n in &self.best_of_n {
            out.push(Candidate {
                label: format!("best_of:{n}"),
                policy: best_of_n_policy(main, &reward, env, n)?,
            });
        }
        for &n in &self.worst_of_n {
            out.push(Candidate {
                label: format!("worst_of:{n}"),
                policy: worst_of_n_policy(main, &reward, env, n)?,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearExploreConfig {
    pub beta: f64,
    pub eta: f64,
    /// Ridge term of the covariance.
    pub lambda: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub candidates: CandidateSpec,
    /// Options for the main agent's log-linear DPO fit.
    pub main_fit: OptimOpts,
}

impl Default for LinearExploreConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            eta: 0.1,
            lambda: 1.0,
            iterations: 8,
            batch_size: 64,
            candidates: CandidateSpec::default(),
            main_fit: OptimOpts {
                l2_reg: 1e-3,
                ..OptimOpts::default()
            },
        }
    }
}

impl LinearExploreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LabError::Config("explore.beta must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(LabError::Config("explore.eta must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(LabError::Config("explore.lambda must be positive".into()));
        }
        if self.iterations < 1 || self.batch_size < 1 {
            return Err(LabError::Config(
                "explore.iterations and explore.batch_size must be >= 1".into(),
            ));
        }
        if self.candidates.temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(LabError::Config(
                "explore.candidates.temperatures must be positive".into(),
            ));
        }
        if self
            .candidates
            .best_of_n
            .iter()
            .chain(&self.candidates.worst_of_n)
            .any(|n| *n < 1)
        {
            return Err(LabError::Config(
                "explore.candidates best/worst-of-n sizes must be >= 1".into(),
            ));
        }
        self.main_fit.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerChoice {
    pub label: String,
    pub policy: Policy,
    pub gamma: f64,
    /// `E_{d0} KL(enhancer || main)`.
    pub kl: f64,
    /// No candidate with positive information gain met the KL budget.
    pub exhausted: bool,
}

/// Picks the admissible candidate with the largest information gain, or the
/// main agent itself when nothing else is admissible. The constraint is
/// re-checked on the returned choice.
pub fn select_enhancer(
    main: &Policy,
    acc: &CovarianceAccumulator,
    env: &Environment,
    cfg: &LinearExploreConfig,
    candidates: &[Candidate],
) -> Result<EnhancerChoice> {
    let mut best: Option<EnhancerChoice> = None;
    for c in candidates {
        let gamma = information_gain(acc, main, &c.policy, env, cfg.beta)?;
        let kl = mean_kl(&c.policy, main, env)?;
        if cfg.eta * kl > gamma || gamma <= 0.0 {
            continue;
        }
        if best.as_ref().is_none_or(|b| gamma > b.gamma) {
            best = Some(EnhancerChoice {
                label: c.label.clone(),
                policy: c.policy.clone(),
                gamma,
                kl,
                exhausted: false,
            });
        }
    }
    let choice = best.unwrap_or_else(|| EnhancerChoice {
        label: "main".into(),
        policy: main.clone(),
        gamma: 0.0,
        kl: 0.0,
        exhausted: true,
    });
    assert!(
        cfg.eta * choice.kl <= choice.gamma,
        "enhancer violates the KL budget: eta*KL = {} > Gamma = {}",
        cfg.eta * choice.kl,
        choice.gamma
    );
    Ok(choice)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreRow {
    pub iteration: usize,
    pub gamma_selected: f64,
    pub subopt_gap: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub enhancer: String,
    pub enhancer_kl: f64,
    pub exhausted: bool,
    pub pairs: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreTrace {
    pub rows: Vec<ExploreRow>,
    pub final_theta: Vec<f64>,
    pub dataset: Vec<PreferenceRecord>,
}

pub const TRACE_HEADER: &str = "iteration,gamma_selected,subopt_gap,min_eig,max_eig";

impl ExploreTrace {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRACE_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.gamma_selected, r.subopt_gap, r.min_eig, r.max_eig
            )
            .unwrap();
        }
        out
    }
}

/// The theoretical loop. Row `t` reports the main agent `pi_t^1`, the
/// covariance `Sigma_t` it was compared under, and the chosen enhancer.
pub fn run_theoretical_loop<G: CandidateGenerator + ?Sized, R: Rng + ?Sized>(
    env: &Environment,
    reference: &Policy,
    cfg: &LinearExploreConfig,
    generator: &G,
    rng: &mut R,
) -> Result<ExploreTrace> {
    cfg.validate()?;
    let d = feature_dim(env)?;
    reference.check_env(env)?;
    let mut acc = CovarianceAccumulator::new(d, cfg.lambda)?;
    let mut history: Vec<PreferenceRecord> = Vec::new();
    let mut theta = vec![0.0; d];
    let mut rows = Vec::with_capacity(cfg.iterations);
    for t in 1..=cfg.iterations {
        let step =
            |acc: &CovarianceAccumulator, history: &[PreferenceRecord], rng: &mut R| -> Result<_> {
                let (main, theta) = if history.is_empty() {
                    (reference.clone(), vec![0.0; d])
                } else {
                    let fit = fit_dpo_linear(history, env, reference, cfg.eta, &cfg.main_fit)?;
                    (fit.policy, fit.theta)
                };
                let candidates = generator.candidates(&main, &theta, env)?;
                let choice = select_enhancer(&main, acc, env, cfg, &candidates)?;
                let mut batch = Vec::with_capacity(cfg.batch_size);
                let mut dropped = 0;
                for _ in 0..cfg.batch_size {
                    let x = env.sample_prompt(rng);
                    let (a1, a2) = (main.sample(x, rng), choice.policy.sample(x, rng));
                    if a1 == a2 {
                        dropped += 1;
                        continue;
                    }
                    let rec = match sample_preference(env, x, a1, a2, rng)? {
                        PreferenceLabel::First => PreferenceRecord::new(x, a1, a2),
                        PreferenceLabel::Second => PreferenceRecord::new(x, a2, a1),
                    };
                    batch.push(rec.with_meta(RecordMeta {
                        iteration: Some(t),
                        sampler: Some(format!("main|{}", choice.label)),
                        ..RecordMeta::default()
                    }));
                }
                let gap = evaluate_policy(&main, reference, env, cfg.eta, t, history.len())?
                    .suboptimality_gap;
                let eig = acc.eigenvalues();
                let row = ExploreRow {
                    iteration: t,
                    gamma_selected: choice.gamma,
                    subopt_gap: gap,
                    min_eig: eig[0],
                    max_eig: eig[eig.len() - 1],
                    enhancer: choice.label.clone(),
                    enhancer_kl: choice.kl,
                    exhausted: choice.exhausted,
                    pairs: batch.len(),
                    dropped,
                };
                let next_acc = covariance_update(acc, &main, &choice.policy, env)?;
                Ok((row, batch, next_acc, theta))
            };
        let (row, batch, next_acc, th) =
            step(&acc, &history, rng).map_err(|e| e.at_iteration(t))?;
        rows.push(row);
        history.extend(batch);
        acc = next_acc;
        theta = th;
    }
    Ok(ExploreTrace {
        rows,
        final_theta: theta,
        dataset: history,
    })
}
