//! VVCA evaluation: allocation, payments and the revenue split `R = Z + F`.
//!
//! For parameters `w = e^α` and boosts `λ_i(S)`, with `A*` the affine welfare
//! maximizer and `M_{-i}` the maximum affine welfare after bidder `i`'s values
//! are zeroed (the boosts stay in place), bidder `i` pays
//!
//! ```text
//! p_i = ( M_{-i} - Σ_{j≠i} w_j v_j(A*_j) - Σ_k λ_k(A*_k) ) / w_i
//! ```
//!
//! Revenue splits into the welfare term `Z = Σ_i v_i(A*_i)`, which is
//! piecewise constant in the parameters, and the continuous term
//! `F = Σ_i M_{-i} / w_i - Σ_i MAW* / w_i`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{sample_profile_at, AuctionSize, BundleMask, SettingId, ValuationBatch, ValuationProfile};
use crate::error::{Error, Result};
use crate::winner::{self, Allocation, DpStats, Execution};

/// Log-weights and per-bidder-bundle boosts of a VVCA.
#[derive(Debug, Clone, PartialEq)]
pub struct VvcaParams {
    size: AuctionSize,
    alpha: Vec<f64>,
    lambda: Vec<f64>,
}

impl VvcaParams {
    /// `alpha` has one entry per bidder; `lambda` is an `n x 2^m` bidder-major table.
    pub fn new(size: AuctionSize, alpha: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if alpha.len() != size.n_bidders {
            return Err(Error::ShapeMismatch(format!(
                "expected {} log-weights, got {}",
                size.n_bidders,
                alpha.len()
            )));
        }
        if lambda.len() != size.table_len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} boosts, got {}",
                size.table_len(),
                lambda.len()
            )));
        }
        if alpha.iter().chain(&lambda).any(|x| !x.is_finite()) {
            return Err(Error::Config("VVCA parameters must be finite".into()));
        }
        Ok(Self { size, alpha, lambda })
    }

    /// `α = 0`, `λ = 0`: the VCG mechanism.
    pub fn zeros(size: AuctionSize) -> Self {
        Self {
            size,
            alpha: vec![0.0; size.n_bidders],
            lambda: vec![0.0; size.table_len()],
        }
    }

    pub fn size(&self) -> AuctionSize {
        self.size
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    pub fn lambda_mut(&mut self) -> &mut [f64] {
        &mut self.lambda
    }

    #[inline]
    pub fn weight(&self, bidder: usize) -> f64 {
        self.alpha[bidder].exp()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a.exp()).collect()
    }

    #[inline]
    pub fn boost(&self, bidder: usize, bundle: BundleMask) -> f64 {
        self.lambda[bidder * self.size.n_bundles() + bundle.index()]
    }

    #[inline]
    pub fn lambda_row(&self, bidder: usize) -> &[f64] {
        let nb = self.size.n_bundles();
        &self.lambda[bidder * nb..(bidder + 1) * nb]
    }

    /// `λ(A) = Σ_i λ_i(A_i)`.
    pub fn allocation_boost(&self, alloc: &Allocation) -> f64 {
        alloc.bundles().iter().enumerate().map(|(i, b)| self.boost(i, *b)).sum()
    }

    /// `(w, λ) -> (c w, c λ)`, i.e. `α + ln c`.
    pub fn scaled(&self, c: f64) -> Self {
        assert!(c > 0.0, "scale factor must be positive");
        let shift = c.ln();
        Self {
            size: self.size,
            alpha: self.alpha.iter().map(|a| a + shift).collect(),
            lambda: self.lambda.iter().map(|l| l * c).collect(),
        }
    }

    /// Serializable form, optionally tagged with the setting and seed it came from.
    pub fn to_file(&self, setting_id: Option<SettingId>, created_from_seed: Option<u64>) -> ParamsFile {
        ParamsFile {
            n: self.size.n_bidders,
            m: self.size.n_items,
            alpha: self.alpha.clone(),
            lambda: (0..self.size.n_bidders).map(|i| self.lambda_row(i).to_vec()).collect(),
            setting_id,
            created_from_seed,
        }
    }

    pub fn save(&self, path: &Path, setting_id: Option<SettingId>, created_from_seed: Option<u64>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file(setting_id, created_from_seed))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ParamsFile)> {
        let text = std::fs::read_to_string(path)?;
        let file: ParamsFile = serde_json::from_str(&text)?;
        Ok((file.to_params()?, file))
    }
}

/// On-disk representation of [`VvcaParams`]. Floats are written in shortest
/// round-trip form and parsed back exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub n: usize,
    pub m: usize,
    pub alpha: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub setting_id: Option<SettingId>,
    pub created_from_seed: Option<u64>,
}

impl ParamsFile {
    pub fn to_params(&self) -> Result<VvcaParams> {
        let size = AuctionSize::new(self.n, self.m)?;
        if self.lambda.len() != self.n || self.lambda.iter().any(|row| row.len() != size.n_bundles()) {
            return Err(Error::ShapeMismatch("lambda must be an n x 2^m table".into()));
        }
        VvcaParams::new(size, self.alpha.clone(), self.lambda.concat())
    }
}

/// Result of running the auction on one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    pub allocation: Allocation,
    pub payments: Vec<f64>,
    pub revenue: f64,
    /// `Z`: welfare of the winning allocation.
    pub welfare_z: f64,
    /// `F`: the continuous revenue component.
    pub continuous_f: f64,
}

/// Batch means of revenue and its two components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueBreakdown {
    pub r_mean: f64,
    pub z_mean: f64,
    pub f_mean: f64,
}

/// Copy of `profile` with bidder `i`'s row replaced by zeros.
pub fn zero_bidder(profile: &ValuationProfile, i: usize) -> Result<ValuationProfile> {
    let size = profile.size();
    if i >= size.n_bidders {
        return Err(Error::OutOfRange {
            what: "bidder",
            index: i,
            limit: size.n_bidders,
        });
    }
    let mut values = profile.values().to_vec();
    let nb = size.n_bundles();
    values[i * nb..(i + 1) * nb].fill(0.0);
    Ok(ValuationProfile::from_parts(size, values, profile.is_additive()))
}

/// The `n + 1` winner determinations one auction needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSolves {
    /// `A*` and its affine welfare.
    pub winning: (Allocation, f64),
    /// For each bidder `i`, the maximizer with `i`'s values zeroed and `M_{-i}`.
    pub removed: Vec<(Allocation, f64)>,
}

fn check_shapes(profile: &ValuationProfile, params: &VvcaParams) -> Result<()> {
    if profile.size() != params.size() {
        return Err(Error::ShapeMismatch(format!(
            "profile is {} but parameters are {}",
            profile.size(),
            params.size()
        )));
    }
    Ok(())
}

/// Assembles payments and the revenue split from precomputed solves.
pub fn outcome_from_solves(profile: &ValuationProfile, params: &VvcaParams, solves: &ProfileSolves) -> AuctionOutcome {
    let n = params.size().n_bidders;
    let (alloc, maw_star) = &solves.winning;
    let weights = params.weights();

    let mut payments = Vec::with_capacity(n);
    let mut f_removed = 0.0;
    let mut f_star = 0.0;
    for i in 0..n {
        let m_removed = solves.removed[i].1;
        // Affine welfare of A* with bidder i's values zeroed, same order as the DP.
        let others = alloc.bundles().iter().enumerate().fold(0.0, |acc, (j, b)| {
            let value = if j == i { 0.0 } else { profile.value(j, *b) };
            acc + (weights[j] * value + params.boost(j, *b))
        });
        payments.push((m_removed - others) / weights[i]);
        f_removed += m_removed / weights[i];
        f_star += maw_star / weights[i];
    }
    let welfare_z: f64 = alloc
        .bundles()
        .iter()
        .enumerate()
        .map(|(i, b)| profile.value(i, *b))
        .sum();
    AuctionOutcome {
        allocation: alloc.clone(),
        revenue: payments.iter().sum(),
        payments,
        welfare_z,
        continuous_f: f_removed - f_star,
    }
}

/// Runs the VVCA on truthful bids: `n + 1` winner determinations.
pub fn run_auction(profile: &ValuationProfile, params: &VvcaParams) -> Result<AuctionOutcome> {
    check_shapes(profile, params)?;
    let winning = winner::solve_winner(profile, params)?;
    let removed = (0..params.size().n_bidders)
        .map(|i| winner::solve_winner(&zero_bidder(profile, i)?, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(outcome_from_solves(
        profile,
        params,
        &ProfileSolves { winning, removed },
    ))
}

/// Batched version of the `n + 1` solves: one sweep for `A*` and one per
/// removed bidder.
pub fn solve_all(
    profiles: &[ValuationProfile],
    params: &VvcaParams,
    exec: Execution,
    stats: Option<&DpStats>,
) -> Result<Vec<ProfileSolves>> {
    let winning = winner::solve_profiles(profiles, params, None, exec, stats)?;
    let mut removed: Vec<Vec<(Allocation, f64)>> = (0..params.size().n_bidders)
        .map(|i| winner::solve_profiles(profiles, params, Some(i), exec, stats))
        .collect::<Result<_>>()?;
    Ok(winning
        .into_iter()
        .enumerate()
        .map(|(k, winning)| ProfileSolves {
            winning,
            removed: removed
                .iter_mut()
                .map(|r| std::mem::replace(&mut r[k], (Allocation::empty(0), 0.0)))
                .collect(),
        })
        .collect())
}

/// Outcomes for every profile of a slice, in order.
pub fn run_auctions(
    profiles: &[ValuationProfile],
    params: &VvcaParams,
    exec: Execution,
) -> Result<Vec<AuctionOutcome>> {
    let solves = solve_all(profiles, params, exec, None)?;
    Ok(profiles
        .iter()
        .zip(&solves)
        .map(|(p, s)| outcome_from_solves(p, params, s))
        .collect())
}

/// Running sums over auction outcomes, accumulated in profile order.
#[derive(Debug, Clone, PartialEq)]
pub struct RevenueAccumulator {
    count: u64,
    revenue: f64,
    revenue_sq: f64,
    z: f64,
    f: f64,
    payments: Vec<f64>,
}

impl RevenueAccumulator {
    pub fn new(n_bidders: usize) -> Self {
        Self {
            count: 0,
            revenue: 0.0,
            revenue_sq: 0.0,
            z: 0.0,
            f: 0.0,
            payments: vec![0.0; n_bidders],
        }
    }

    pub fn push(&mut self, outcome: &AuctionOutcome) {
        self.count += 1;
        self.revenue += outcome.revenue;
        self.revenue_sq += outcome.revenue * outcome.revenue;
        self.z += outcome.welfare_z;
        self.f += outcome.continuous_f;
        for (acc, p) in self.payments.iter_mut().zip(&outcome.payments) {
            *acc += p;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn breakdown(&self) -> Result<RevenueBreakdown> {
        if self.count == 0 {
            return Err(Error::EmptyBatch);
        }
        let c = self.count as f64;
        Ok(RevenueBreakdown {
            r_mean: self.revenue / c,
            z_mean: self.z / c,
            f_mean: self.f / c,
        })
    }

    pub fn payment_means(&self) -> Vec<f64> {
        let c = (self.count as f64).max(1.0);
        self.payments.iter().map(|p| p / c).collect()
    }

    /// Monte Carlo standard error of the revenue mean.
    pub fn revenue_std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let c = self.count as f64;
        let mean = self.revenue / c;
        let var = ((self.revenue_sq - c * mean * mean) / (c - 1.0)).max(0.0);
        (var / c).sqrt()
    }
}

/// Means of `(R, Z, F)` over a batch.
pub fn revenue_breakdown_batch(batch: &ValuationBatch, params: &VvcaParams) -> Result<RevenueBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = RevenueAccumulator::new(params.size().n_bidders);
    for o in run_auctions(batch.profiles(), params, Execution::Parallel)? {
        acc.push(&o);
    }
    acc.breakdown()
}

/// Summary of a mechanism's performance on a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub breakdown: RevenueBreakdown,
    pub payment_means: Vec<f64>,
    pub revenue_std_error: f64,
    pub count: u64,
}

impl RevenueAccumulator {
    pub fn summary(&self) -> Result<EvaluationSummary> {
        Ok(EvaluationSummary {
            breakdown: self.breakdown()?,
            payment_means: self.payment_means(),
            revenue_std_error: self.revenue_std_error(),
            count: self.count,
        })
    }
}

/// Profiles generated and solved per block when streaming.
pub const STREAM_CHUNK: usize = 4096;

/// Evaluates `params` on profiles `0..count` of `(setting, seed)` without
/// materializing the whole sample. Matches evaluating the equivalent
/// [`ValuationBatch`] exactly.
pub fn evaluate_stream(setting: SettingId, params: &VvcaParams, count: u64, seed: u64) -> Result<EvaluationSummary> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    let size = params.size();
    let mut acc = RevenueAccumulator::new(size.n_bidders);
    let mut start = 0u64;
    while start < count {
        let end = (start + STREAM_CHUNK as u64).min(count);
        let profiles: Vec<ValuationProfile> = (start..end)
            .into_par_iter()
            .map(|k| sample_profile_at(setting, size, seed, k))
            .collect();
        for o in run_auctions(&profiles, params, Execution::Parallel)? {
            acc.push(&o);
        }
        start = end;
    }
    acc.summary()
}

/// Evaluates `params` on an explicit batch.
pub fn evaluate_batch(batch: &ValuationBatch, params: &VvcaParams) -> Result<EvaluationSummary> {
    if batch.size() != params.size() {
        return Err(Error::ShapeMismatch(format!(
            "batch is {} but parameters are {}",
            batch.size(),
            params.size()
        )));
    }
    let mut acc = RevenueAccumulator::new(params.size().n_bidders);
    for o in run_auctions(batch.profiles(), params, Execution::Parallel)? {
        acc.push(&o);
    }
    acc.summary()
}

/// Bidder `i`'s utility when the auction runs on `reported` and the bundle
/// won is valued according to `truth`.
pub fn utility(truth: &ValuationProfile, reported: &ValuationProfile, params: &VvcaParams, i: usize) -> Result<f64> {
    if truth.size() != reported.size() {
        return Err(Error::ShapeMismatch("true and reported profiles differ in size".into()));
    }
    let outcome = run_auction(reported, params)?;
    let won = outcome.allocation.bundle(i);
    Ok(truth.bundle_value(i, won)? - outcome.payments[i])
}

/// Replaces bidder `i`'s row of `profile` with `row`.
pub fn with_bidder_row(profile: &ValuationProfile, i: usize, row: &[f64]) -> Result<ValuationProfile> {
    let size = profile.size();
    if i >= size.n_bidders {
        return Err(Error::OutOfRange {
            what: "bidder",
            index: i,
            limit: size.n_bidders,
        });
    }
    if row.len() != size.n_bundles() {
        return Err(Error::ShapeMismatch("row must have 2^m entries".into()));
    }
    let mut values = profile.values().to_vec();
    let nb = size.n_bundles();
    values[i * nb..(i + 1) * nb].copy_from_slice(row);
    ValuationProfile::from_table(size, values)
}
