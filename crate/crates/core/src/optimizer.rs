//! Objective-decomposition training of VVCA parameters.
//!
//! The empirical revenue `R_S = Z_S + F_S` is optimized by combining two
//! gradients:
//!
//! - `F_S` is continuous and piecewise linear in `(e^α, λ)`; holding the
//!   `n + 1` argmax allocations fixed gives its gradient almost everywhere.
//! - `Z_S` is piecewise constant, so it is replaced by its Gaussian smoothing
//!   `Z̃^σ_S(α, λ) = E[Z_S(α + σε, λ + σδ)]`, whose gradient is estimated from
//!   `n_r` random directions with a baseline:
//!   `(1/n_r) Σ_r (Z_S(α + σε_r, λ + σδ_r) - Z_S(α, λ)) / σ · (ε_r, δ_r)`.
//!
//! One OD-VVCA iteration therefore costs `n + 1` batched winner
//! determinations for `A*` and the removed-bidder maxima (which also give
//! the baseline `Z_S`), plus `n_r` for the perturbed directions.

use std::path::Path;
use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{sample_batch, AuctionSize, SettingId, ValuationBatch, ValuationProfile};
use crate::error::{Error, Result};
use crate::mechanism::{self, evaluate_stream, EvaluationSummary, ProfileSolves, VvcaParams};
use crate::winner::{self, DpStats, Execution};

/// Gaussian smoothing of the welfare component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub sigma: f64,
    pub n_r: usize,
    pub seed: u64,
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.n_r == 0 {
            return Err(Error::Config("n_r must be at least 1".into()));
        }
        Ok(())
    }
}

/// A direction in `(α, λ)` space.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub d_alpha: Vec<f64>,
    pub d_lambda: Vec<f64>,
}

impl GradientEstimate {
    pub fn zeros(size: AuctionSize) -> Self {
        Self {
            d_alpha: vec![0.0; size.n_bidders],
            d_lambda: vec![0.0; size.table_len()],
        }
    }

    pub fn add_scaled(&mut self, other: &GradientEstimate, c: f64) {
        for (a, b) in self.d_alpha.iter_mut().zip(&other.d_alpha) {
            *a += c * b;
        }
        for (a, b) in self.d_lambda.iter_mut().zip(&other.d_lambda) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.d_alpha
            .iter_mut()
            .chain(self.d_lambda.iter_mut())
            .for_each(|x| *x *= c);
    }

    pub fn norm_alpha(&self) -> f64 {
        self.d_alpha.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn norm_lambda(&self) -> f64 {
        self.d_lambda.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.norm_alpha().hypot(self.norm_lambda())
    }

    pub fn is_finite(&self) -> bool {
        self.d_alpha.iter().chain(&self.d_lambda).all(|x| x.is_finite())
    }
}

/// Partial derivatives of `F` for one profile with its argmax allocations
/// held fixed, in raw `(w, λ)` coordinates. Adds into `d_w` and `d_lambda`.
pub(crate) fn accumulate_grad_f_raw(
    profile: &ValuationProfile,
    params: &VvcaParams,
    solves: &ProfileSolves,
    d_w: &mut [f64],
    d_lambda: &mut [f64],
) {
    let size = params.size();
    let (n, nb) = (size.n_bidders, size.n_bundles());
    let weights = params.weights();
    let inv_w: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
    let inv_sum: f64 = inv_w.iter().sum();
    let (star, maw_star) = &solves.winning;

    for (i, (removed, m_removed)) in solves.removed.iter().enumerate() {
        for k in 0..n {
            let b = removed.bundle(k);
            d_lambda[k * nb + b.index()] += inv_w[i];
            if k != i {
                d_w[k] += inv_w[i] * profile.value(k, b);
            }
        }
        d_w[i] -= m_removed * inv_w[i] * inv_w[i];
    }
    for k in 0..n {
        let b = star.bundle(k);
        d_lambda[k * nb + b.index()] -= inv_sum;
        d_w[k] += maw_star * inv_w[k] * inv_w[k] - inv_sum * profile.value(k, b);
    }
}

/// Batch-mean gradient of `F` in raw `(w, λ)` coordinates.
pub(crate) fn grad_f_raw(
    profiles: &[ValuationProfile],
    params: &VvcaParams,
    solves: &[ProfileSolves],
) -> (Vec<f64>, Vec<f64>) {
    let size = params.size();
    let mut d_w = vec![0.0; size.n_bidders];
    let mut d_lambda = vec![0.0; size.table_len()];
    for (p, s) in profiles.iter().zip(solves) {
        accumulate_grad_f_raw(p, params, s, &mut d_w, &mut d_lambda);
    }
    let inv = 1.0 / profiles.len() as f64;
    d_w.iter_mut().chain(d_lambda.iter_mut()).for_each(|x| *x *= inv);
    (d_w, d_lambda)
}

fn grad_f_from_solves(
    profiles: &[ValuationProfile],
    params: &VvcaParams,
    solves: &[ProfileSolves],
) -> GradientEstimate {
    let (d_w, d_lambda) = grad_f_raw(profiles, params, solves);
    // d/dα_k = w_k d/dw_k
    let d_alpha = d_w.iter().enumerate().map(|(k, g)| params.weight(k) * g).collect();
    GradientEstimate { d_alpha, d_lambda }
}

fn check_batch(batch: &ValuationBatch, params: &VvcaParams) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.size() != params.size() {
        return Err(Error::ShapeMismatch(format!(
            "batch is {} but parameters are {}",
            batch.size(),
            params.size()
        )));
    }
    Ok(())
}

/// Almost-everywhere gradient of `F_S` with respect to `(α, λ)`.
pub fn grad_f(batch: &ValuationBatch, params: &VvcaParams) -> Result<GradientEstimate> {
    check_batch(batch, params)?;
    let solves = mechanism::solve_all(batch.profiles(), params, Execution::Parallel, None)?;
    Ok(grad_f_from_solves(batch.profiles(), params, &solves))
}

/// Mean welfare `Z_S` of the winning allocations: one batched sweep.
pub fn welfare_mean(profiles: &[ValuationProfile], params: &VvcaParams, stats: Option<&DpStats>) -> Result<f64> {
    let solved = winner::solve_profiles(profiles, params, None, Execution::Parallel, stats)?;
    Ok(mean_welfare(profiles, solved.iter().map(|(a, _)| a)))
}

fn mean_welfare<'a>(profiles: &[ValuationProfile], allocs: impl Iterator<Item = &'a winner::Allocation>) -> f64 {
    let total: f64 = profiles
        .iter()
        .zip(allocs)
        .map(|(p, a)| a.bundles().iter().enumerate().map(|(i, b)| p.value(i, *b)).sum::<f64>())
        .sum();
    total / profiles.len() as f64
}

/// One random direction `(ε, δ)` of standard normals.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub epsilon: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Direction {
    pub fn draw<R: RngCore + ?Sized>(size: AuctionSize, rng: &mut R) -> Self {
        let epsilon = (0..size.n_bidders).map(|_| StandardNormal.sample(rng)).collect();
        let delta = (0..size.table_len()).map(|_| StandardNormal.sample(rng)).collect();
        Self { epsilon, delta }
    }

    /// `(α + σε, λ + σδ)`.
    pub fn perturb(&self, params: &VvcaParams, sigma: f64) -> VvcaParams {
        let alpha = params
            .alpha()
            .iter()
            .zip(&self.epsilon)
            .map(|(a, e)| a + sigma * e)
            .collect();
        let lambda = params
            .lambda()
            .iter()
            .zip(&self.delta)
            .map(|(l, d)| l + sigma * d)
            .collect();
        VvcaParams::new(params.size(), alpha, lambda).expect("perturbed parameters stay finite")
    }
}

/// Smoothed-gradient estimate given the unperturbed `Z_S`. With
/// `baseline = None` the raw `Z_S(perturbed) / σ` weights are used instead
/// of the differences; both have the same expectation.
pub fn estimate_grad_z_from(
    profiles: &[ValuationProfile],
    params: &VvcaParams,
    smoothing: &SmoothingConfig,
    baseline: Option<f64>,
    rng: &mut ChaCha8Rng,
    stats: Option<&DpStats>,
) -> Result<GradientEstimate> {
    smoothing.validate()?;
    let size = params.size();
    // All directions are drawn up front so the result does not depend on how
    // the sweeps are scheduled.
    let directions: Vec<Direction> = (0..smoothing.n_r).map(|_| Direction::draw(size, rng)).collect();
    let mut grad = GradientEstimate::zeros(size);
    for dir in &directions {
        let z = welfare_mean(profiles, &dir.perturb(params, smoothing.sigma), stats)?;
        let coeff = (z - baseline.unwrap_or(0.0)) / smoothing.sigma;
        for (g, e) in grad.d_alpha.iter_mut().zip(&dir.epsilon) {
            *g += coeff * e;
        }
        for (g, d) in grad.d_lambda.iter_mut().zip(&dir.delta) {
            *g += coeff * d;
        }
    }
    grad.scale(1.0 / smoothing.n_r as f64);
    Ok(grad)
}

/// Monte Carlo estimate of `∇ Z̃^σ_S` from `n_r` directions drawn from `rng`.
/// Costs one sweep for the baseline plus `n_r` perturbed sweeps.
pub fn estimate_grad_z(
    batch: &ValuationBatch,
    params: &VvcaParams,
    smoothing: &SmoothingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GradientEstimate> {
    check_batch(batch, params)?;
    smoothing.validate()?;
    let base = welfare_mean(batch.profiles(), params, None)?;
    estimate_grad_z_from(batch.profiles(), params, smoothing, Some(base), rng, None)
}

/// Monte Carlo estimate of `Z̃^σ_S` itself from `directions` draws.
pub fn smoothed_welfare(
    profiles: &[ValuationProfile],
    params: &VvcaParams,
    sigma: f64,
    directions: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..directions {
        let dir = Direction::draw(params.size(), rng);
        total += welfare_mean(profiles, &dir.perturb(params, sigma), None)?;
    }
    Ok(total / directions as f64)
}

/// Which parts of the revenue objective a trainer follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMethod {
    /// Analytic `∇F` plus the smoothed `∇Z̃`.
    #[serde(rename = "od_vvca")]
    OdVvca,
    /// Analytic `∇F` only.
    #[serde(rename = "fo_vvca")]
    FoVvca,
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `θ ← θ + lr · g`.
    #[default]
    Sga,
    /// Adaptive moments (β₁ = 0.9, β₂ = 0.999), ascending.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub smoothing: SmoothingConfig,
    /// Held-out profiles used for the training curve and final report.
    pub eval_size: u64,
    pub seed: u64,
    /// Curve resolution in iterations; the final iteration is always logged.
    pub log_every: usize,
    pub update: UpdateRule,
    /// Rescale the combined gradient to at most this Euclidean norm.
    pub max_grad_norm: Option<f64>,
    /// Fill the `wall_ms` curve column; off gives byte-reproducible curves.
    pub record_wall_time: bool,
}

/// Per-setting defaults: learning rate, σ and batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableDefaults {
    pub learning_rate: f64,
    pub sigma: f64,
    pub batch_size: usize,
    pub n_r: usize,
    pub iterations: usize,
    /// False when the size is not one of the tabulated rows.
    pub listed: bool,
}

/// Tuned hyperparameters for the tabulated `(setting, n, m)` rows, or the
/// global fallback (lr 0.001, σ 0.01, batch 1024).
pub fn table_defaults(setting: SettingId, size: AuctionSize) -> TableDefaults {
    use SettingId::*;
    let row = match (setting, size.n_bidders, size.n_items) {
        (A, 2, 2) | (D, 2, 2) => Some((0.01, 0.01, 1024)),
        (A, 2, 5) | (C, 2, 5) => Some((0.001, 0.01, 2048)),
        (A, 3, 10) | (D, 3, 10) | (B, 5, 3) | (B, 3, 10) | (C, 5, 3) | (C, 3, 10) => Some((0.001, 0.01, 1024)),
        (A, 5, 10) => Some((0.0003, 0.001, 1024)),
        (A, 10, 5) | (D, 5, 10) | (D, 10, 5) => Some((0.0003, 0.01, 1024)),
        (B, 5, 10) | (B, 10, 5) | (B, 30, 5) | (C, 5, 10) | (C, 10, 5) | (C, 30, 5) => Some((0.005, 0.01, 1024)),
        _ => None,
    };
    let (learning_rate, sigma, batch_size) = row.unwrap_or((0.001, 0.01, 1024));
    TableDefaults {
        learning_rate,
        sigma,
        batch_size,
        n_r: 8,
        iterations: 2000,
        listed: row.is_some(),
    }
}

/// Seed of the held-out evaluation sample of a run seeded with `seed`.
pub fn eval_seed_for(seed: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed).next_u64()
}

/// Held-out sample size used when none is given.
pub const DEFAULT_EVAL_SIZE: u64 = 1 << 16;

impl TrainConfig {
    pub fn defaults_for(setting: SettingId, size: AuctionSize, method: TrainMethod, seed: u64) -> Self {
        let d = table_defaults(setting, size);
        Self {
            method,
            learning_rate: d.learning_rate,
            iterations: d.iterations,
            batch_size: d.batch_size,
            smoothing: SmoothingConfig {
                sigma: d.sigma,
                n_r: d.n_r,
                seed,
            },
            eval_size: DEFAULT_EVAL_SIZE,
            seed,
            log_every: 10,
            update: UpdateRule::Sga,
            max_grad_norm: None,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_size == 0 {
            return Err(Error::Config("eval_size must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Config("max_grad_norm must be positive".into()));
            }
        }
        if self.method == TrainMethod::OdVvca {
            self.smoothing.validate()?;
        }
        Ok(())
    }
}

/// One logged point of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub r_mean: f64,
    pub z_mean: f64,
    pub f_mean: f64,
    pub grad_norm_alpha: f64,
    pub grad_norm_lambda: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    /// Held-out evaluation of the returned parameters.
    pub final_eval: EvaluationSummary,
    /// Batched winner-determination sweeps spent on training steps.
    pub dp_sweeps: u64,
    pub eval_seed: u64,
}

pub const CURVE_HEADER: &str = "iteration,r_mean,z_mean,f_mean,grad_norm_alpha,grad_norm_lambda,wall_ms";

/// Renders curve rows under [`CURVE_HEADER`].
pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration, r.r_mean, r.z_mean, r.f_mean, r.grad_norm_alpha, r.grad_norm_lambda, r.wall_ms
        ));
    }
    out
}

impl TrainReport {
    pub fn curve_csv(&self) -> String {
        curve_csv(&self.curve)
    }

    pub fn write_curve(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.curve_csv())?;
        Ok(())
    }
}

/// How a trainer turns a batch into an update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum StepRule {
    /// Gradient ascent in `(α, λ)`; optionally adds the smoothed `∇Z̃`.
    LogWeights { smooth_welfare: bool },
    /// Frozen-allocation revenue gradient in raw `(w, λ)`, with `w ≥ floor`.
    RawWeights { weight_floor: f64 },
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// What one training step did.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub gradient: GradientEstimate,
    /// Batched sweeps this step performed.
    pub dp_sweeps: u64,
}

/// Stateful training loop; [`train`] drives it to completion.
#[derive(Debug)]
pub struct Trainer {
    setting: SettingId,
    config: TrainConfig,
    rule: StepRule,
    params: VvcaParams,
    rng: ChaCha8Rng,
    eval_seed: u64,
    adam: Option<AdamState>,
    stats: DpStats,
    iteration: usize,
}

impl Trainer {
    /// Starts from VCG (`α = 0`, `λ = 0`).
    pub fn new(setting: SettingId, size: AuctionSize, config: TrainConfig) -> Result<Self> {
        let rule = StepRule::LogWeights {
            smooth_welfare: config.method == TrainMethod::OdVvca,
        };
        Self::with_rule(setting, size, config, rule)
    }

    pub(crate) fn with_rule(
        setting: SettingId,
        size: AuctionSize,
        config: TrainConfig,
        rule: StepRule,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let eval_seed = rng.next_u64();
        debug_assert_eq!(eval_seed, eval_seed_for(config.seed));
        let adam = (config.update == UpdateRule::Adam).then(|| AdamState {
            m: vec![0.0; size.n_bidders + size.table_len()],
            v: vec![0.0; size.n_bidders + size.table_len()],
            t: 0,
        });
        Ok(Self {
            setting,
            config,
            rule,
            params: VvcaParams::zeros(size),
            rng,
            eval_seed,
            adam,
            stats: DpStats::new(),
            iteration: 0,
        })
    }

    pub fn params(&self) -> &VvcaParams {
        &self.params
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Seed of the fixed held-out sample.
    pub fn eval_seed(&self) -> u64 {
        self.eval_seed
    }

    pub fn dp_sweeps(&self) -> u64 {
        self.stats.sweeps()
    }

    /// Samples a fresh batch and applies one update.
    pub fn step(&mut self) -> Result<StepInfo> {
        let before = self.stats.sweeps();
        let size = self.params.size();
        let batch_seed = self.rng.next_u64();
        let direction_seed = self.rng.next_u64();
        let batch = sample_batch(self.setting, size, self.config.batch_size, batch_seed)?;
        let profiles = batch.profiles();
        let solves = mechanism::solve_all(profiles, &self.params, Execution::Parallel, Some(&self.stats))?;

        let mut gradient = match self.rule {
            StepRule::LogWeights { smooth_welfare } => {
                let mut g = grad_f_from_solves(profiles, &self.params, &solves);
                if smooth_welfare {
                    let base = mean_welfare(profiles, solves.iter().map(|s| &s.winning.0));
                    let mut dir_rng = ChaCha8Rng::seed_from_u64(direction_seed);
                    let gz = estimate_grad_z_from(
                        profiles,
                        &self.params,
                        &self.config.smoothing,
                        Some(base),
                        &mut dir_rng,
                        Some(&self.stats),
                    )?;
                    g.add_scaled(&gz, 1.0);
                }
                g
            }
            StepRule::RawWeights { .. } => {
                let (d_w, d_lambda) = grad_f_raw(profiles, &self.params, &solves);
                GradientEstimate { d_alpha: d_w, d_lambda }
            }
        };

        if let Some(cap) = self.config.max_grad_norm {
            let norm = gradient.norm();
            if norm > cap {
                gradient.scale(cap / norm);
            }
        }
        self.apply(&gradient);
        self.iteration += 1;
        Ok(StepInfo {
            gradient,
            dp_sweeps: self.stats.sweeps() - before,
        })
    }

    fn apply(&mut self, g: &GradientEstimate) {
        let lr = self.config.learning_rate;
        let n = g.d_alpha.len();
        let mut step: Vec<f64> = g.d_alpha.iter().chain(&g.d_lambda).map(|x| lr * x).collect();
        if let Some(adam) = &mut self.adam {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            adam.t += 1;
            let c1 = 1.0 - B1.powi(adam.t);
            let c2 = 1.0 - B2.powi(adam.t);
            for (k, x) in g.d_alpha.iter().chain(&g.d_lambda).enumerate() {
                adam.m[k] = B1 * adam.m[k] + (1.0 - B1) * x;
                adam.v[k] = B2 * adam.v[k] + (1.0 - B2) * x * x;
                step[k] = lr * (adam.m[k] / c1) / ((adam.v[k] / c2).sqrt() + EPS);
            }
        }
        match self.rule {
            StepRule::LogWeights { .. } => {
                for (a, s) in self.params.alpha_mut().iter_mut().zip(&step[..n]) {
                    *a += s;
                }
            }
            StepRule::RawWeights { weight_floor } => {
                for (k, s) in step[..n].iter().enumerate() {
                    let w = (self.params.weight(k) + s).max(weight_floor);
                    self.params.alpha_mut()[k] = w.ln();
                }
            }
        }
        for (l, s) in self.params.lambda_mut().iter_mut().zip(&step[n..]) {
            *l += s;
        }
    }

    /// Evaluates the current parameters on the held-out sample.
    pub fn evaluate(&self) -> Result<EvaluationSummary> {
        evaluate_stream(self.setting, &self.params, self.config.eval_size, self.eval_seed)
    }

    /// Runs the remaining iterations, logging the curve.
    pub fn run(mut self) -> Result<(VvcaParams, TrainReport)> {
        let start = Instant::now();
        let wall = |start: &Instant, on: bool| if on { start.elapsed().as_millis() as u64 } else { 0 };
        let mut curve = Vec::new();
        let first = self.evaluate()?;
        curve.push(CurveRow {
            iteration: self.iteration,
            r_mean: first.breakdown.r_mean,
            z_mean: first.breakdown.z_mean,
            f_mean: first.breakdown.f_mean,
            grad_norm_alpha: 0.0,
            grad_norm_lambda: 0.0,
            wall_ms: wall(&start, self.config.record_wall_time),
        });
        let mut last_eval = first;
        while self.iteration < self.config.iterations {
            let info = self.step()?;
            if self.iteration % self.config.log_every == 0 || self.iteration == self.config.iterations {
                last_eval = self.evaluate()?;
                curve.push(CurveRow {
                    iteration: self.iteration,
                    r_mean: last_eval.breakdown.r_mean,
                    z_mean: last_eval.breakdown.z_mean,
                    f_mean: last_eval.breakdown.f_mean,
                    grad_norm_alpha: info.gradient.norm_alpha(),
                    grad_norm_lambda: info.gradient.norm_lambda(),
                    wall_ms: wall(&start, self.config.record_wall_time),
                });
            }
        }
        let report = TrainReport {
            curve,
            final_eval: last_eval,
            dp_sweeps: self.stats.sweeps(),
            eval_seed: self.eval_seed,
        };
        Ok((self.params, report))
    }
}

/// Trains from VCG with OD-VVCA or its `F`-only ablation.
pub fn train(setting: SettingId, size: AuctionSize, config: TrainConfig) -> Result<(VvcaParams, TrainReport)> {
    Trainer::new(setting, size, config)?.run()
}

/// Revenue, `Z`, `F` and per-bidder payment means on a batch.
pub fn evaluate(params: &VvcaParams, batch: &ValuationBatch) -> Result<EvaluationSummary> {
    mechanism::evaluate_batch(batch, params)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::domain::{sample_batch, sample_profile};
    use crate::mechanism::{run_auction, zero_bidder};

    fn size(n: usize, m: usize) -> AuctionSize {
        AuctionSize::new(n, m).unwrap()
    }

    fn random_params(size: AuctionSize, rng: &mut ChaCha8Rng) -> VvcaParams {
        let alpha = (0..size.n_bidders).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let lambda = (0..size.table_len()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        VvcaParams::new(size, alpha, lambda).unwrap()
    }

    fn all_allocations(p: &ValuationProfile, q: &VvcaParams) -> Vec<winner::Allocation> {
        let mut v = vec![winner::solve_winner(p, q).unwrap().0];
        for i in 0..q.size().n_bidders {
            v.push(winner::solve_winner(&zero_bidder(p, i).unwrap(), q).unwrap().0);
        }
        v
    }

    #[test]
    fn table_lookup() {
        let d = table_defaults(SettingId::A, size(2, 2));
        assert_eq!(
            (d.learning_rate, d.sigma, d.batch_size, d.n_r, d.iterations),
            (0.01, 0.01, 1024, 8, 2000)
        );
        let d = table_defaults(SettingId::A, size(5, 10));
        assert_eq!((d.learning_rate, d.sigma, d.batch_size), (0.0003, 0.001, 1024));
        let d = table_defaults(SettingId::C, size(2, 5));
        assert_eq!(d.batch_size, 2048);
        let d = table_defaults(SettingId::A, size(4, 4));
        assert!(!d.listed);
        assert_eq!((d.learning_rate, d.sigma), (0.001, 0.01));
    }

    #[test]
    fn grad_f_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        let mut checked = 0;
        for trial in 0..200 {
            let s = if trial % 2 == 0 { size(2, 3) } else { size(3, 3) };
            let p = sample_profile(SettingId::ALL[trial % 4], s, &mut rng);
            let q = random_params(s, &mut rng);
            let batch = ValuationBatch::new(SettingId::A, 0, vec![p.clone()]).unwrap();
            let g = grad_f(&batch, &q).unwrap();
            let base = all_allocations(&p, &q);
            let coords = s.n_bidders + s.table_len();
            let mut fd = vec![0.0; coords];
            let mut stable = true;
            for c in 0..coords {
                let shift = |d: f64| {
                    let mut r = q.clone();
                    if c < s.n_bidders {
                        r.alpha_mut()[c] += d;
                    } else {
                        r.lambda_mut()[c - s.n_bidders] += d;
                    }
                    r
                };
                let (plus, minus) = (shift(h), shift(-h));
                if all_allocations(&p, &plus) != base || all_allocations(&p, &minus) != base {
                    stable = false;
                    break;
                }
                let f = |r: &VvcaParams| run_auction(&p, r).unwrap().continuous_f;
                fd[c] = (f(&plus) - f(&minus)) / (2.0 * h);
            }
            if !stable {
                continue;
            }
            checked += 1;
            let analytic: Vec<f64> = g.d_alpha.iter().chain(&g.d_lambda).copied().collect();
            let diff: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            // Finite-difference round-off is about 1e-11; the floor keeps near-zero
            // gradients from turning it into a large relative error.
            assert!(diff <= 1e-4 * norm.max(1e-3), "trial {trial}: {diff} vs {norm}");
        }
        assert!(checked >= 100, "{checked}");
    }

    #[test]
    fn lambda_gradient_is_bounded_by_inverse_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = size(3, 3);
        let batch = sample_batch(SettingId::B, s, 40, 1).unwrap();
        let q = random_params(s, &mut rng);
        let bound: f64 = q.weights().iter().map(|w| 1.0 / w).sum();
        let g = grad_f(&batch, &q).unwrap();
        assert!(g.d_lambda.iter().all(|x| x.abs() <= bound + 1e-12));
    }

    #[test]
    fn batch_gradient_is_mean_of_profile_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = size(2, 3);
        let batch = sample_batch(SettingId::C, s, 16, 1).unwrap();
        let q = random_params(s, &mut rng);
        let g = grad_f(&batch, &q).unwrap();
        let mut mean = GradientEstimate::zeros(s);
        for p in batch.profiles() {
            let single = ValuationBatch::new(SettingId::C, 1, vec![p.clone()]).unwrap();
            mean.add_scaled(&grad_f(&single, &q).unwrap(), 1.0 / 16.0);
        }
        for (a, b) in g
            .d_alpha
            .iter()
            .chain(&g.d_lambda)
            .zip(mean.d_alpha.iter().chain(&mean.d_lambda))
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_bidder_alpha_estimate_vanishes() {
        let s = size(1, 3);
        let batch = sample_batch(SettingId::A, s, 64, 2).unwrap();
        let q = VvcaParams::zeros(s);
        // λ frozen: only α moves, and a lone bidder's argmax ignores the weight.
        let smoothing = SmoothingConfig {
            sigma: 0.5,
            n_r: 32,
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = welfare_mean(batch.profiles(), &q, None).unwrap();
        for _ in 0..smoothing.n_r {
            let mut dir = Direction::draw(s, &mut rng);
            dir.delta.iter_mut().for_each(|d| *d = 0.0);
            let z = welfare_mean(batch.profiles(), &dir.perturb(&q, smoothing.sigma), None).unwrap();
            assert_eq!(z, base);
        }
    }

    #[test]
    fn estimator_is_deterministic_and_validates_sigma() {
        let s = size(2, 2);
        let batch = sample_batch(SettingId::A, s, 64, 2).unwrap();
        let q = VvcaParams::zeros(s);
        let sm = SmoothingConfig {
            sigma: 0.05,
            n_r: 8,
            seed: 0,
        };
        let a = estimate_grad_z(&batch, &q, &sm, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = estimate_grad_z(&batch, &q, &sm, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
        let bad = SmoothingConfig { sigma: 0.0, ..sm };
        assert!(estimate_grad_z(&batch, &q, &bad, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }

    fn quick_config(method: TrainMethod, lr: f64) -> TrainConfig {
        let mut c = TrainConfig::defaults_for(SettingId::A, size(2, 2), method, 7);
        c.learning_rate = lr;
        c.iterations = 20;
        c.batch_size = 64;
        c.eval_size = 512;
        c.log_every = 5;
        c.record_wall_time = false;
        c
    }

    #[test]
    fn zero_learning_rate_keeps_vcg() {
        for method in [TrainMethod::OdVvca, TrainMethod::FoVvca] {
            let (params, report) = train(SettingId::A, size(2, 2), quick_config(method, 0.0)).unwrap();
            assert_eq!(params, VvcaParams::zeros(size(2, 2)));
            assert_eq!(report.curve.len(), 5);
            assert_eq!(report.curve.last().unwrap().iteration, 20);
        }
    }

    #[test]
    fn iteration_sweep_accounting() {
        let s = size(3, 3);
        let mut c = TrainConfig::defaults_for(SettingId::B, s, TrainMethod::OdVvca, 1);
        c.batch_size = 16;
        c.eval_size = 16;
        let mut t = Trainer::new(SettingId::B, s, c.clone()).unwrap();
        for _ in 0..3 {
            assert_eq!(t.step().unwrap().dp_sweeps, (3 + 1 + 8) as u64);
        }
        c.method = TrainMethod::FoVvca;
        let mut t = Trainer::new(SettingId::B, s, c).unwrap();
        assert_eq!(t.step().unwrap().dp_sweeps, 4);
    }

    #[test]
    fn training_is_deterministic() {
        let c = quick_config(TrainMethod::OdVvca, 0.01);
        let (a, ra) = train(SettingId::A, size(2, 2), c.clone()).unwrap();
        let (b, rb) = train(SettingId::A, size(2, 2), c).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.curve_csv(), rb.curve_csv());
    }

    #[test]
    fn adam_and_clipping_run() {
        let mut c = quick_config(TrainMethod::OdVvca, 0.01);
        c.update = UpdateRule::Adam;
        c.max_grad_norm = Some(0.5);
        let mut t = Trainer::new(SettingId::A, size(2, 2), c).unwrap();
        let info = t.step().unwrap();
        assert!(info.gradient.norm() <= 0.5 + 1e-12);
        assert_ne!(t.params(), &VvcaParams::zeros(size(2, 2)));
    }

    #[test]
    fn config_validation() {
        let mut c = quick_config(TrainMethod::OdVvca, 0.01);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = quick_config(TrainMethod::OdVvca, -1.0);
        assert!(c.validate().is_err());
        c.learning_rate = 0.1;
        c.smoothing.n_r = 0;
        assert!(c.validate().is_err());
        c.method = TrainMethod::FoVvca;
        assert!(c.validate().is_ok());
    }
}
