//! Winner determination: the affine welfare maximizer over all `(n+1)^m`
//! deterministic allocations, computed by a dynamic program over item subsets.
//!
//! `MAW(i, S)` is the largest affine welfare obtainable by handing out exactly
//! the items of `S` to bidders `0..=i`, and `AB(i, S)` the bundle bidder `i`
//! receives in that optimum:
//!
//! ```text
//! MAW(0, S) = u_0(S)
//! MAW(i, S) = max_{B ⊆ S} MAW(i-1, S \ B) + u_i(B)       u_i(B) = w_i v_i(B) + λ_i(B)
//! ```
//!
//! The winning allocation is recovered from `S_n = argmax_S MAW(n-1, S)` by
//! walking `AB` back down to bidder 0. Items outside `S_n` stay unallocated.
//!
//! Ties are broken towards the smaller bundle mask, both for the per-cell
//! argmax and for `S_n`. Comparisons are exact (no epsilon). Under this rule
//! the solver returns the optimal allocation that is lexicographically
//! smallest in the key `(S_n, A_{n-1}, ..., A_0)`, which is the key the
//! exhaustive oracle uses.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::domain::{AuctionSize, BundleMask, ValuationBatch, ValuationProfile};
use crate::error::{Error, Result};
use crate::mechanism::VvcaParams;

/// Default cap on `(n+1)^m` for [`brute_force_winner`].
pub const DEFAULT_ORACLE_CAP: u128 = 10_000_000;

/// One bundle per bidder, pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation {
    bundles: Vec<BundleMask>,
}

impl Allocation {
    pub fn new(bundles: Vec<BundleMask>) -> Result<Self> {
        let mut seen = BundleMask::EMPTY;
        for (i, b) in bundles.iter().enumerate() {
            if !b.is_disjoint(seen) {
                return Err(Error::InvalidProfile(format!(
                    "bundle of bidder {i} overlaps an earlier bundle"
                )));
            }
            seen = seen | *b;
        }
        Ok(Self { bundles })
    }

    /// Everyone receives the empty bundle.
    pub fn empty(n_bidders: usize) -> Self {
        Self {
            bundles: vec![BundleMask::EMPTY; n_bidders],
        }
    }

    pub fn bundles(&self) -> &[BundleMask] {
        &self.bundles
    }

    pub fn bundle(&self, bidder: usize) -> BundleMask {
        self.bundles[bidder]
    }

    pub fn n_bidders(&self) -> usize {
        self.bundles.len()
    }

    /// All allocated items.
    pub fn union(&self) -> BundleMask {
        self.bundles.iter().fold(BundleMask::EMPTY, |acc, b| acc | *b)
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = 0u32;
        for b in &self.bundles {
            if b.0 & seen != 0 {
                return false;
            }
            seen |= b.0;
        }
        true
    }

    /// Order used to break ties between optimal allocations: allocated set
    /// first, then bundles from the last bidder down to the first.
    pub fn tie_key(&self) -> impl Ord {
        let mut key = Vec::with_capacity(self.bundles.len() + 1);
        key.push(self.union().0);
        key.extend(self.bundles.iter().rev().map(|b| b.0));
        key
    }
}

#[inline]
pub(crate) fn bidder_term(profile: &ValuationProfile, params: &VvcaParams, bidder: usize, bundle: BundleMask) -> f64 {
    params.weight(bidder) * profile.value(bidder, bundle) + params.boost(bidder, bundle)
}

/// `Σ_i w_i v_i(A_i) + Σ_i λ_i(A_i)`, accumulated bidder by bidder in the same
/// order the dynamic program uses.
pub fn affine_welfare(profile: &ValuationProfile, params: &VvcaParams, alloc: &Allocation) -> f64 {
    alloc
        .bundles()
        .iter()
        .enumerate()
        .fold(0.0, |acc, (i, b)| acc + bidder_term(profile, params, i, *b))
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

/// Number of candidate evaluations one dynamic-program solve performs:
/// `2^m` to initialise the first bidder plus `3^m` for every further bidder.
pub fn dp_operation_count(size: AuctionSize) -> u64 {
    let m = size.n_items as u32;
    (1u64 << m) + (size.n_bidders as u64 - 1) * 3u64.pow(m)
}

/// How the per-cell argmax resolves exact ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Smaller bundle mask wins. This is the rule the oracle reproduces.
    #[default]
    PreferSmaller,
    /// Larger bundle mask wins. Only useful for checking that the oracle
    /// comparison notices a divergent rule.
    PreferLarger,
}

/// The full dynamic-programming state of one solve.
#[derive(Debug, Clone)]
pub struct DpTables {
    size: AuctionSize,
    /// `MAW(i, S)`, bidder-major.
    pub maw: Vec<f64>,
    /// `AB(i, S)`, bidder-major.
    pub ab: Vec<BundleMask>,
    /// Inner-loop candidate evaluations performed.
    pub op_count: u64,
}

impl DpTables {
    pub fn maw(&self, bidder: usize, pool: BundleMask) -> f64 {
        self.maw[bidder * self.size.n_bundles() + pool.index()]
    }

    pub fn ab(&self, bidder: usize, pool: BundleMask) -> BundleMask {
        self.ab[bidder * self.size.n_bundles() + pool.index()]
    }

    /// Replays the backtrack from `pool` down to the first bidder.
    pub fn backtrack(&self, pool: BundleMask) -> Allocation {
        let n = self.size.n_bidders;
        let mut bundles = vec![BundleMask::EMPTY; n];
        let mut rest = pool;
        for i in (0..n).rev() {
            let b = self.ab(i, rest);
            bundles[i] = b;
            rest = rest - b;
        }
        debug_assert!(rest.is_empty());
        Allocation { bundles }
    }
}

/// Solves the dynamic program for one profile, keeping every table.
pub fn solve_winner_instrumented(
    profile: &ValuationProfile,
    params: &VvcaParams,
    tie: TieBreak,
) -> Result<(Allocation, f64, DpTables)> {
    check_shapes(profile, params)?;
    let size = profile.size();
    let (n, nb) = (size.n_bidders, size.n_bundles());
    let mut maw = vec![0.0; n * nb];
    let mut ab = vec![BundleMask::EMPTY; n * nb];
    let mut ops = 0u64;

    for s in 0..nb {
        let pool = BundleMask(s as u32);
        maw[s] = bidder_term(profile, params, 0, pool);
        ab[s] = pool;
        ops += 1;
    }

    let mut term = vec![0.0; nb];
    for i in 1..n {
        for (b, t) in term.iter_mut().enumerate() {
            *t = bidder_term(profile, params, i, BundleMask(b as u32));
        }
        let (done, rest) = maw.split_at_mut(i * nb);
        let prev = &done[(i - 1) * nb..];
        let cur = &mut rest[..nb];
        let cur_ab = &mut ab[i * nb..(i + 1) * nb];
        for s in 0..nb as u32 {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0u32;
            for b in BundleMask(s).submasks() {
                let cand = prev[(s ^ b.0) as usize] + term[b.index()];
                ops += 1;
                let take = match tie {
                    // Submasks arrive largest first: `>=` lets smaller masks win ties.
                    TieBreak::PreferSmaller => cand >= best,
                    TieBreak::PreferLarger => cand > best,
                };
                if take {
                    best = cand;
                    arg = b.0;
                }
            }
            cur[s as usize] = best;
            cur_ab[s as usize] = BundleMask(arg);
        }
    }

    let last = &maw[(n - 1) * nb..];
    let mut pool = 0usize;
    for (s, v) in last.iter().enumerate() {
        let better = match tie {
            TieBreak::PreferSmaller => *v > last[pool],
            TieBreak::PreferLarger => *v >= last[pool],
        };
        if better {
            pool = s;
        }
    }
    let maw_star = last[pool];
    let tables = DpTables {
        size,
        maw,
        ab,
        op_count: ops,
    };
    let allocation = tables.backtrack(BundleMask(pool as u32));
    Ok((allocation, maw_star, tables))
}

/// The affine-welfare-maximizing allocation and its welfare.
pub fn solve_winner(profile: &ValuationProfile, params: &VvcaParams) -> Result<(Allocation, f64)> {
    let (alloc, maw, _) = solve_winner_instrumented(profile, params, TieBreak::PreferSmaller)?;
    Ok((alloc, maw))
}

/// Exhaustive maximization over every item-to-bidder-or-nobody assignment.
pub fn brute_force_winner(profile: &ValuationProfile, params: &VvcaParams) -> Result<(Allocation, f64)> {
    brute_force_winner_capped(profile, params, DEFAULT_ORACLE_CAP)
}

pub fn brute_force_winner_capped(
    profile: &ValuationProfile,
    params: &VvcaParams,
    cap: u128,
) -> Result<(Allocation, f64)> {
    check_shapes(profile, params)?;
    let size = profile.size();
    let (n, m) = (size.n_bidders, size.n_items);
    let allocations = ((n + 1) as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if allocations > cap {
        return Err(Error::OracleTooLarge { allocations, cap });
    }

    // Odometer over owners; owner `n` means unallocated.
    let mut owner = vec![n; m];
    let mut best: Option<(f64, Allocation)> = None;
    loop {
        let mut bundles = vec![BundleMask::EMPTY; n];
        for (j, &o) in owner.iter().enumerate() {
            if o < n {
                bundles[o] = bundles[o] | BundleMask::singleton(j);
            }
        }
        let alloc = Allocation { bundles };
        let welfare = affine_welfare(profile, params, &alloc);
        let replace = match &best {
            None => true,
            Some((w, a)) => welfare > *w || (welfare == *w && alloc.tie_key() < a.tie_key()),
        };
        if replace {
            best = Some((welfare, alloc));
        }

        let mut j = 0;
        loop {
            if j == m {
                let (w, a) = best.expect("at least one allocation enumerated");
                return Ok((a, w));
            }
            if owner[j] == 0 {
                owner[j] = n;
                j += 1;
            } else {
                owner[j] -= 1;
                break;
            }
        }
    }
}

/// Whether batch solves may fan out across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

/// Counters for batched winner determination.
#[derive(Debug, Default)]
pub struct DpStats {
    sweeps: AtomicU64,
    solves: AtomicU64,
}

impl DpStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Batched passes (one solve per profile of a batch).
    pub fn sweeps(&self) -> u64 {
        self.sweeps.load(Ordering::Relaxed)
    }

    /// Individual profile solves.
    pub fn solves(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    fn record(&self, profiles: usize) {
        self.sweeps.fetch_add(1, Ordering::Relaxed);
        self.solves.fetch_add(profiles as u64, Ordering::Relaxed);
    }
}

/// Profiles solved together by the blocked kernel. Each lane runs the exact
/// arithmetic of [`solve_winner`], so results match it bit for bit.
pub const LANES: usize = 8;

#[derive(Debug, Default)]
struct LaneWorkspace {
    term: Vec<[f64; LANES]>,
    maw_prev: Vec<[f64; LANES]>,
    maw_cur: Vec<[f64; LANES]>,
    ab: Vec<[u32; LANES]>,
}

impl LaneWorkspace {
    fn prepare(&mut self, size: AuctionSize) {
        let nb = size.n_bundles();
        self.term.resize(nb, [0.0; LANES]);
        self.maw_prev.resize(nb, [0.0; LANES]);
        self.maw_cur.resize(nb, [0.0; LANES]);
        self.ab.resize(size.n_bidders * nb, [0; LANES]);
    }

    fn fill_terms(&mut self, block: &[&ValuationProfile], params: &VvcaParams, bidder: usize, zeroed: Option<usize>) {
        let w = params.weight(bidder);
        let boosts = params.lambda_row(bidder);
        let zero = zeroed == Some(bidder);
        for (b, t) in self.term.iter_mut().enumerate() {
            for l in 0..LANES {
                let p = block[l.min(block.len() - 1)];
                let v = if zero { 0.0 } else { p.row(bidder)[b] };
                t[l] = w * v + boosts[b];
            }
        }
    }

    /// Solves up to `LANES` profiles. Lanes past `block.len()` replay the last
    /// profile and are discarded.
    fn solve(
        &mut self,
        block: &[&ValuationProfile],
        params: &VvcaParams,
        zeroed: Option<usize>,
        out: &mut Vec<(Allocation, f64)>,
    ) {
        let size = params.size();
        let (n, nb) = (size.n_bidders, size.n_bundles());
        self.prepare(size);

        self.fill_terms(block, params, 0, zeroed);
        for s in 0..nb {
            self.maw_prev[s] = self.term[s];
            self.ab[s] = [s as u32; LANES];
        }

        for i in 1..n {
            self.fill_terms(block, params, i, zeroed);
            let prev = &self.maw_prev;
            let term = &self.term;
            let ab = &mut self.ab[i * nb..(i + 1) * nb];
            for s in 0..nb as u32 {
                let mut best = [f64::NEG_INFINITY; LANES];
                let mut arg = [0u32; LANES];
                let mut b = s;
                loop {
                    let pv = &prev[(s ^ b) as usize];
                    let tv = &term[b as usize];
                    for l in 0..LANES {
                        let cand = pv[l] + tv[l];
                        let take = cand >= best[l];
                        best[l] = if take { cand } else { best[l] };
                        arg[l] = if take { b } else { arg[l] };
                    }
                    if b == 0 {
                        break;
                    }
                    b = (b - 1) & s;
                }
                self.maw_cur[s as usize] = best;
                ab[s as usize] = arg;
            }
            std::mem::swap(&mut self.maw_prev, &mut self.maw_cur);
        }

        for (l, _) in block.iter().enumerate() {
            let mut pool = 0usize;
            for s in 1..nb {
                if self.maw_prev[s][l] > self.maw_prev[pool][l] {
                    pool = s;
                }
            }
            let maw_star = self.maw_prev[pool][l];
            let mut bundles = vec![BundleMask::EMPTY; n];
            let mut rest = pool as u32;
            for i in (0..n).rev() {
                let b = self.ab[i * nb + rest as usize][l];
                bundles[i] = BundleMask(b);
                rest &= !b;
            }
            out.push((Allocation { bundles }, maw_star));
        }
    }
}

/// Solves every profile under `params`, optionally with one bidder's
/// valuations replaced by zeros (boosts untouched). Results are in input
/// order and do not depend on `exec`.
pub fn solve_profiles(
    profiles: &[ValuationProfile],
    params: &VvcaParams,
    zeroed: Option<usize>,
    exec: Execution,
    stats: Option<&DpStats>,
) -> Result<Vec<(Allocation, f64)>> {
    for p in profiles {
        check_shapes(p, params)?;
    }
    if let Some(i) = zeroed {
        if i >= params.size().n_bidders {
            return Err(Error::OutOfRange {
                what: "bidder",
                index: i,
                limit: params.size().n_bidders,
            });
        }
    }
    if let Some(stats) = stats {
        stats.record(profiles.len());
    }
    let solve_chunk = |ws: &mut LaneWorkspace, chunk: &[ValuationProfile]| {
        let refs: Vec<&ValuationProfile> = chunk.iter().collect();
        let mut out = Vec::with_capacity(chunk.len());
        ws.solve(&refs, params, zeroed, &mut out);
        out
    };
    let results = match exec {
        Execution::Sequential => {
            let mut ws = LaneWorkspace::default();
            profiles
                .chunks(LANES)
                .flat_map(|chunk| solve_chunk(&mut ws, chunk))
                .collect()
        }
        Execution::Parallel => profiles
            .par_chunks(LANES)
            .map_init(LaneWorkspace::default, solve_chunk)
            .flatten_iter()
            .collect(),
    };
    Ok(results)
}

/// [`solve_winner`] over a whole batch.
pub fn solve_winner_batch(batch: &ValuationBatch, params: &VvcaParams) -> Result<Vec<(Allocation, f64)>> {
    solve_profiles(batch.profiles(), params, None, Execution::Parallel, None)
}

pub fn solve_winner_batch_with(
    batch: &ValuationBatch,
    params: &VvcaParams,
    exec: Execution,
) -> Result<Vec<(Allocation, f64)>> {
    solve_profiles(batch.profiles(), params, None, exec, None)
}
