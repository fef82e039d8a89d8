//! Reference mechanisms: VCG, per-item Myerson with ironed virtual values,
//! and the frozen-allocation (BBBVVCA) trainer.

use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::domain::{sample_profile_at, AuctionSize, SettingId, ValuationBatch, ValuationProfile};
use crate::error::{Error, Result};
use crate::mechanism::{VvcaParams, STREAM_CHUNK};
use crate::optimizer::{grad_f_raw, StepRule, TrainConfig, TrainReport, Trainer};
use crate::winner::Execution;

/// The VCG mechanism as a VVCA: unit weights, no boosts.
pub fn vcg_params(size: AuctionSize) -> VvcaParams {
    VvcaParams::zeros(size)
}

/// Grid resolution used when none is given.
pub const DEFAULT_GRID_SIZE: usize = 10_000;

/// Ironed virtual value function of one bidder's item-value distribution,
/// tabulated on a quantile grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualValueTable {
    bidder: usize,
    /// Strictly ascending values.
    values: Vec<f64>,
    /// Non-decreasing ironed virtual values, aligned with `values`.
    virtual_values: Vec<f64>,
    reserve: f64,
}

/// Pool-adjacent-violators with equal weights: the non-decreasing sequence
/// closest to `ys` in least squares.
pub fn iron(ys: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count); each block's mean exceeds the previous one's.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(ys.len());
    for &y in ys {
        let mut cur = (y, 1usize);
        while let Some(&(s, c)) = blocks.last() {
            if s / c as f64 >= cur.0 / cur.1 as f64 {
                blocks.pop();
                cur = (cur.0 + s, cur.1 + c);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(s, c)| std::iter::repeat(s / c as f64).take(c))
        .collect()
}

impl VirtualValueTable {
    /// Builds a table from raw `(value, virtual value)` samples. Values must
    /// be strictly ascending; virtual values are ironed.
    pub fn from_grid(bidder: usize, values: Vec<f64>, raw_virtual: &[f64]) -> Result<Self> {
        if values.len() < 2 || values.len() != raw_virtual.len() {
            return Err(Error::ShapeMismatch(
                "virtual value grid needs at least two aligned points".into(),
            ));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) || raw_virtual.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidProfile(
                "virtual value grid must be finite and strictly ascending".into(),
            ));
        }
        let mut table = Self {
            bidder,
            values,
            virtual_values: iron(raw_virtual),
            reserve: 0.0,
        };
        table.reserve = table.inverse(0.0);
        Ok(table)
    }

    pub fn bidder(&self) -> usize {
        self.bidder
    }

    pub fn reserve(&self) -> f64 {
        self.reserve
    }

    pub fn grid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.virtual_values.iter().copied())
    }

    /// Ironed virtual value at `v`, interpolated linearly and clamped to the
    /// grid ends.
    pub fn phi(&self, v: f64) -> f64 {
        let (xs, ys) = (&self.values, &self.virtual_values);
        if v <= xs[0] {
            return ys[0];
        }
        let last = xs.len() - 1;
        if v >= xs[last] {
            return ys[last];
        }
        let j = xs.partition_point(|&x| x <= v);
        let t = (v - xs[j - 1]) / (xs[j] - xs[j - 1]);
        ys[j - 1] + t * (ys[j] - ys[j - 1])
    }

    /// Smallest value whose ironed virtual value reaches `z`: the threshold
    /// bid. Clamps to the grid ends.
    pub fn inverse(&self, z: f64) -> f64 {
        let (xs, ys) = (&self.values, &self.virtual_values);
        let j = ys.partition_point(|&y| y < z);
        if j == 0 {
            return xs[0];
        }
        if j == ys.len() {
            return xs[xs.len() - 1];
        }
        let t = (z - ys[j - 1]) / (ys[j] - ys[j - 1]);
        xs[j - 1] + t * (xs[j] - xs[j - 1])
    }

    /// `value,virtual_value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,virtual_value\n");
        for (v, p) in self.grid() {
            out.push_str(&format!("{v},{p}\n"));
        }
        out
    }
}

/// Ironed virtual value table for bidder `bidder` (0-based) of `setting`.
///
/// Uniform settings use the closed form `φ(v) = 2v - k` on `U[0, k]` over an
/// evenly spaced grid with endpoints `0` and `k`. The lognormal setting
/// evaluates `v - (1 - F(v)) / f(v)` at the quantiles `(j + 0.5) / grid_size`.
pub fn build_virtual_value(setting: SettingId, bidder: usize, grid_size: usize) -> Result<VirtualValueTable> {
    if grid_size < 2 {
        return Err(Error::Config("virtual value grid needs at least two points".into()));
    }
    let rank = (bidder + 1) as f64;
    match setting {
        SettingId::A | SettingId::B => {
            let k = if setting == SettingId::A { 1.0 } else { rank };
            let step = k / (grid_size - 1) as f64;
            let values: Vec<f64> = (0..grid_size).map(|j| j as f64 * step).collect();
            let phis: Vec<f64> = values.iter().map(|v| 2.0 * v - k).collect();
            VirtualValueTable::from_grid(bidder, values, &phis)
        }
        SettingId::C => {
            let sigma = 1.0 / rank;
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            let mut values = Vec::with_capacity(grid_size);
            let mut phis = Vec::with_capacity(grid_size);
            for j in 0..grid_size {
                let q = (j as f64 + 0.5) / grid_size as f64;
                let z = normal.inverse_cdf(q);
                let v = (sigma * z).exp();
                let density = normal.pdf(z) / (v * sigma);
                values.push(v);
                phis.push(v - (1.0 - normal.cdf(z)) / density);
            }
            VirtualValueTable::from_grid(bidder, values, &phis)
        }
        SettingId::D => Err(Error::UnsupportedSetting {
            setting: setting.to_string(),
            what: "item-wise Myerson",
        }),
    }
}

/// Single-item Myerson auction over ironed virtual values. Ties go to the
/// lowest bidder index; the winner pays the threshold
/// `φ_w⁻¹(max(0, highest competing φ))`.
pub fn item_myerson_outcome(item_values: &[f64], tables: &[VirtualValueTable]) -> (Option<usize>, f64) {
    debug_assert_eq!(item_values.len(), tables.len());
    let phis: Vec<f64> = item_values.iter().zip(tables).map(|(v, t)| t.phi(*v)).collect();
    let mut winner: Option<usize> = None;
    for (i, &p) in phis.iter().enumerate() {
        if p >= 0.0 && winner.map_or(true, |w| p > phis[w]) {
            winner = Some(i);
        }
    }
    match winner {
        None => (None, 0.0),
        Some(w) => {
            let competing = phis
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != w)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            (Some(w), tables[w].inverse(competing))
        }
    }
}

/// Item-wise Myerson auction for additive valuations.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemMyerson {
    tables: Vec<VirtualValueTable>,
}

impl ItemMyerson {
    pub fn new(setting: SettingId, n_bidders: usize, grid_size: usize) -> Result<Self> {
        let tables = (0..n_bidders)
            .map(|i| build_virtual_value(setting, i, grid_size))
            .collect::<Result<_>>()?;
        Ok(Self { tables })
    }

    pub fn from_tables(tables: Vec<VirtualValueTable>) -> Self {
        Self { tables }
    }

    pub fn tables(&self) -> &[VirtualValueTable] {
        &self.tables
    }

    /// Winner and payment for each item of an additive profile.
    pub fn outcomes(&self, profile: &ValuationProfile) -> Result<Vec<(Option<usize>, f64)>> {
        let size = profile.size();
        if !profile.is_additive() {
            return Err(Error::NonAdditive);
        }
        if size.n_bidders != self.tables.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tables for {} bidders",
                self.tables.len(),
                size.n_bidders
            )));
        }
        let mut values = vec![0.0; size.n_bidders];
        Ok((0..size.n_items)
            .map(|j| {
                for (i, v) in values.iter_mut().enumerate() {
                    *v = profile.item_value(i, j);
                }
                item_myerson_outcome(&values, &self.tables)
            })
            .collect())
    }

    pub fn revenue(&self, profile: &ValuationProfile) -> Result<f64> {
        Ok(self.outcomes(profile)?.iter().map(|(_, p)| p).sum())
    }

    fn revenue_sum(&self, profiles: &[ValuationProfile]) -> Result<f64> {
        let per: Vec<f64> = profiles.par_iter().map(|p| self.revenue(p)).collect::<Result<_>>()?;
        Ok(per.iter().sum())
    }
}

/// Mean item-wise Myerson revenue over an additive batch.
pub fn item_myerson_revenue(batch: &ValuationBatch) -> Result<f64> {
    if !batch.is_additive() {
        return Err(Error::NonAdditive);
    }
    let auction = ItemMyerson::new(batch.setting(), batch.size().n_bidders, DEFAULT_GRID_SIZE)?;
    Ok(auction.revenue_sum(batch.profiles())? / batch.len() as f64)
}

/// Mean item-wise Myerson revenue over profiles `0..count` of
/// `(setting, seed)`, generated in chunks. Matches the batch version on the
/// same sample.
pub fn item_myerson_revenue_stream(setting: SettingId, size: AuctionSize, count: u64, seed: u64) -> Result<f64> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    if !setting.is_additive() {
        return Err(Error::NonAdditive);
    }
    let auction = ItemMyerson::new(setting, size.n_bidders, DEFAULT_GRID_SIZE)?;
    let mut total = 0.0;
    let mut start = 0u64;
    while start < count {
        let end = (start + STREAM_CHUNK as u64).min(count);
        let profiles: Vec<ValuationProfile> = (start..end)
            .into_par_iter()
            .map(|k| sample_profile_at(setting, size, seed, k))
            .collect();
        total += auction.revenue_sum(&profiles)?;
        start = end;
    }
    Ok(total / count as f64)
}

/// Lower bound on every bidder weight during frozen-allocation training.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Iteration budget for the frozen-allocation trainer.
pub const BBBVVCA_ITERATIONS: usize = 4000;

/// Batch-mean revenue gradient with all `n + 1` allocations per profile held
/// fixed, in raw `(w, λ)` coordinates. Welfare contributes nothing while the
/// allocations are frozen.
pub fn frozen_allocation_gradient(batch: &ValuationBatch, params: &VvcaParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.size() != params.size() {
        return Err(Error::ShapeMismatch("batch and parameter sizes differ".into()));
    }
    let solves = crate::mechanism::solve_all(batch.profiles(), params, Execution::Parallel, None)?;
    Ok(grad_f_raw(batch.profiles(), params, &solves))
}

/// Gradient ascent on revenue with frozen allocations in `(w, λ)`,
/// projecting `w ≥ WEIGHT_FLOOR` after each step. `config.method` and the
/// smoothing settings are ignored.
pub fn bbbvvca_train(setting: SettingId, size: AuctionSize, config: TrainConfig) -> Result<(VvcaParams, TrainReport)> {
    let rule = StepRule::RawWeights {
        weight_floor: WEIGHT_FLOOR,
    };
    let mut config = config;
    config.method = crate::optimizer::TrainMethod::FoVvca;
    Trainer::with_rule(setting, size, config, rule)?.run()
}
