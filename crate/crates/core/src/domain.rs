//! Bundle algebra, valuation profiles and the four valuation distributions.
//!
//! Bundles are bitmasks over the items (bit `j` set means item `j` is in the
//! bundle). A [`ValuationProfile`] stores the full `n x 2^m` value table in
//! bidder-major order, so downstream code never has to distinguish additive
//! from combinatorial valuations.
//!
//! Randomness comes from ChaCha8 with one stream per profile: profile `k` of
//! a batch seeded with `s` is drawn from `ChaCha8Rng::seed_from_u64(s)` moved
//! to stream `k`. Any profile can therefore be regenerated on its own, and
//! batches can be produced in parallel or streamed without changing a bit.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of items accepted unless a caller raises the cap.
pub const DEFAULT_ITEM_CAP: usize = 16;

/// Hard limit imposed by the `u32` bundle representation and table sizes.
pub const MAX_ITEMS: usize = 24;

/// The valuation distributions used throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SettingId {
    /// Symmetric additive, item values `U[0, 1]`.
    A,
    /// Asymmetric additive, bidder `i` (1-based) draws item values from `U[0, i]`.
    B,
    /// Asymmetric additive, bidder `i` draws `exp(N(0, 1/i^2))`.
    C,
    /// Combinatorial: item values `U[1, 2]` plus bundle noise `U[-|S|/2, |S|/2]`.
    D,
}

impl SettingId {
    pub const ALL: [SettingId; 4] = [SettingId::A, SettingId::B, SettingId::C, SettingId::D];

    /// Whether profiles drawn from this setting are additive over items.
    pub fn is_additive(self) -> bool {
        !matches!(self, SettingId::D)
    }

    fn code(self) -> u8 {
        match self {
            SettingId::A => b'A',
            SettingId::B => b'B',
            SettingId::C => b'C',
            SettingId::D => b'D',
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            b'A' => Some(SettingId::A),
            b'B' => Some(SettingId::B),
            b'C' => Some(SettingId::C),
            b'D' => Some(SettingId::D),
            _ => None,
        }
    }
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code() as char)
    }
}

impl FromStr for SettingId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(SettingId::A),
            "B" | "b" => Ok(SettingId::B),
            "C" | "c" => Ok(SettingId::C),
            "D" | "d" => Ok(SettingId::D),
            other => Err(Error::UnknownSetting(other.to_string())),
        }
    }
}

/// Number of bidders and items of an auction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuctionSize {
    pub n_bidders: usize,
    pub n_items: usize,
}

impl AuctionSize {
    /// Validates against [`DEFAULT_ITEM_CAP`].
    pub fn new(n_bidders: usize, n_items: usize) -> Result<Self> {
        Self::with_item_cap(n_bidders, n_items, DEFAULT_ITEM_CAP)
    }

    pub fn with_item_cap(n_bidders: usize, n_items: usize, item_cap: usize) -> Result<Self> {
        if n_bidders == 0 {
            return Err(Error::InvalidSize("at least one bidder is required".into()));
        }
        if n_items == 0 {
            return Err(Error::InvalidSize("at least one item is required".into()));
        }
        let cap = item_cap.min(MAX_ITEMS);
        if n_items > cap {
            return Err(Error::InvalidSize(format!(
                "{n_items} items exceeds the item cap of {cap}"
            )));
        }
        Ok(Self { n_bidders, n_items })
    }

    /// `2^m`, the number of bundles.
    #[inline]
    pub fn n_bundles(&self) -> usize {
        1 << self.n_items
    }

    /// The bundle containing every item.
    #[inline]
    pub fn full_bundle(&self) -> BundleMask {
        BundleMask((self.n_bundles() - 1) as u32)
    }

    /// Length of a bidder-major `n x 2^m` table.
    #[inline]
    pub fn table_len(&self) -> usize {
        self.n_bidders * self.n_bundles()
    }
}

impl fmt::Display for AuctionSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_bidders, self.n_items)
    }
}

/// A set of items encoded as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BundleMask(pub u32);

impl BundleMask {
    pub const EMPTY: BundleMask = BundleMask(0);

    pub fn singleton(item: usize) -> Self {
        BundleMask(1 << item)
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn contains(self, item: usize) -> bool {
        self.0 >> item & 1 == 1
    }

    #[inline]
    pub fn is_subset_of(self, other: BundleMask) -> bool {
        self.0 & !other.0 == 0
    }

    #[inline]
    pub fn is_disjoint(self, other: BundleMask) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_valid_for(self, size: &AuctionSize) -> bool {
        (self.0 as usize) < size.n_bundles()
    }

    /// Items in ascending order.
    pub fn items(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(j)
            }
        })
    }

    /// Every submask, from `self` down to the empty bundle.
    pub fn submasks(self) -> Submasks {
        Submasks {
            mask: self.0,
            next: Some(self.0),
        }
    }
}

impl std::ops::BitOr for BundleMask {
    type Output = BundleMask;
    fn bitor(self, rhs: Self) -> Self {
        BundleMask(self.0 | rhs.0)
    }
}

impl std::ops::BitAnd for BundleMask {
    type Output = BundleMask;
    fn bitand(self, rhs: Self) -> Self {
        BundleMask(self.0 & rhs.0)
    }
}

impl std::ops::Sub for BundleMask {
    type Output = BundleMask;
    fn sub(self, rhs: Self) -> Self {
        BundleMask(self.0 & !rhs.0)
    }
}

impl fmt::Display for BundleMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.items().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", j + 1)?;
        }
        write!(f, "}}")
    }
}

/// Descending `(b - 1) & mask` walk over the submasks of a mask.
#[derive(Debug, Clone)]
pub struct Submasks {
    mask: u32,
    next: Option<u32>,
}

impl Iterator for Submasks {
    type Item = BundleMask;

    #[inline]
    fn next(&mut self) -> Option<BundleMask> {
        let b = self.next?;
        self.next = if b == 0 {
            None
        } else {
            Some(b.wrapping_sub(1) & self.mask)
        };
        Some(BundleMask(b))
    }
}

/// All `2^popcount(mask)` submasks of `mask`, largest first.
pub fn enumerate_subsets(mask: BundleMask) -> Vec<BundleMask> {
    mask.submasks().collect()
}

/// Per-bidder values of every bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationProfile {
    size: AuctionSize,
    values: Vec<f64>,
    additive: bool,
}

impl ValuationProfile {
    /// Builds an additive profile from `n x m` item values (bidder-major).
    ///
    /// `v_i(S)` is accumulated over the items of `S` in ascending order, so it
    /// equals the left fold `0 + v_i1 + v_i2 + ...` bit for bit.
    pub fn from_item_values(size: AuctionSize, item_values: &[f64]) -> Result<Self> {
        let m = size.n_items;
        if item_values.len() != size.n_bidders * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {} item values for a {size} auction, got {}",
                size.n_bidders * m,
                item_values.len()
            )));
        }
        if let Some(bad) = item_values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidProfile(format!(
                "item value {bad} is not a finite non-negative number"
            )));
        }
        let n_bundles = size.n_bundles();
        let mut values = vec![0.0; size.table_len()];
        for (row, items) in values.chunks_exact_mut(n_bundles).zip(item_values.chunks_exact(m)) {
            expand_additive(row, items);
        }
        Ok(Self {
            size,
            values,
            additive: true,
        })
    }

    /// Builds a profile from a full bidder-major table, checking its invariants.
    pub fn from_table(size: AuctionSize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size.table_len() {
            return Err(Error::ShapeMismatch(format!(
                "expected a table of {} values for a {size} auction, got {}",
                size.table_len(),
                values.len()
            )));
        }
        let n_bundles = size.n_bundles();
        for (i, row) in values.chunks_exact(n_bundles).enumerate() {
            if row[0] != 0.0 {
                return Err(Error::InvalidProfile(format!(
                    "bidder {i} values the empty bundle at {}",
                    row[0]
                )));
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidProfile(format!("bidder {i} has invalid value {bad}")));
            }
        }
        Ok(Self {
            size,
            values,
            additive: false,
        })
    }

    pub(crate) fn from_parts(size: AuctionSize, values: Vec<f64>, additive: bool) -> Self {
        debug_assert_eq!(values.len(), size.table_len());
        Self { size, values, additive }
    }

    #[inline]
    pub fn size(&self) -> AuctionSize {
        self.size
    }

    /// True when the profile was constructed from item values.
    #[inline]
    pub fn is_additive(&self) -> bool {
        self.additive
    }

    /// Checked lookup of `v_bidder(mask)`.
    pub fn bundle_value(&self, bidder: usize, mask: BundleMask) -> Result<f64> {
        if bidder >= self.size.n_bidders {
            return Err(Error::OutOfRange {
                what: "bidder",
                index: bidder,
                limit: self.size.n_bidders,
            });
        }
        if !mask.is_valid_for(&self.size) {
            return Err(Error::OutOfRange {
                what: "bundle",
                index: mask.index(),
                limit: self.size.n_bundles(),
            });
        }
        Ok(self.value(bidder, mask))
    }

    /// Unchecked lookup; panics on out-of-range indices.
    #[inline]
    pub fn value(&self, bidder: usize, mask: BundleMask) -> f64 {
        self.values[bidder * self.size.n_bundles() + mask.index()]
    }

    /// Value of a single item, `v_i({j})`.
    #[inline]
    pub fn item_value(&self, bidder: usize, item: usize) -> f64 {
        self.value(bidder, BundleMask::singleton(item))
    }

    /// Bidder `i`'s row of `2^m` bundle values.
    #[inline]
    pub fn row(&self, bidder: usize) -> &[f64] {
        let nb = self.size.n_bundles();
        &self.values[bidder * nb..(bidder + 1) * nb]
    }

    pub(crate) fn row_mut(&mut self, bidder: usize) -> &mut [f64] {
        let nb = self.size.n_bundles();
        &mut self.values[bidder * nb..(bidder + 1) * nb]
    }

    pub(crate) fn set_additive(&mut self, additive: bool) {
        self.additive = additive;
    }

    /// The whole bidder-major table.
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Fills `row[S] = sum of items[j] for j in S`, summing in ascending item order.
fn expand_additive(row: &mut [f64], items: &[f64]) {
    row[0] = 0.0;
    for s in 1..row.len() {
        let high = 31 - (s as u32).leading_zeros();
        row[s] = row[s & !(1 << high)] + items[high as usize];
    }
}

/// Random number generator for profile `index` of a batch seeded with `seed`.
pub fn profile_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one profile from `setting`.
///
/// Bidder indices in the asymmetric settings are 1-based: bidder 0 of the
/// table plays bidder 1 and draws from `U[0, 1]` in setting B.
pub fn sample_profile<R: Rng + ?Sized>(setting: SettingId, size: AuctionSize, rng: &mut R) -> ValuationProfile {
    let (n, m) = (size.n_bidders, size.n_items);
    let mut items = vec![0.0; n * m];
    for i in 0..n {
        let rank = (i + 1) as f64;
        let row = &mut items[i * m..(i + 1) * m];
        match setting {
            SettingId::A => row.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0)),
            SettingId::B => row.iter_mut().for_each(|v| *v = rng.gen_range(0.0..rank)),
            SettingId::C => {
                // Second parameter read as the variance 1/i^2, so sigma = 1/i.
                let dist = LogNormal::new(0.0, 1.0 / rank).expect("finite lognormal parameters");
                row.iter_mut().for_each(|v| *v = dist.sample(rng));
            }
            SettingId::D => row.iter_mut().for_each(|v| *v = rng.gen_range(1.0..2.0)),
        }
    }
    let mut profile =
        ValuationProfile::from_item_values(size, &items).expect("sampled item values are finite and non-negative");
    if setting == SettingId::D {
        for i in 0..n {
            let row = profile.row_mut(i);
            for (s, v) in row.iter_mut().enumerate().skip(1) {
                let half = (s as u32).count_ones() as f64 / 2.0;
                *v += rng.gen_range(-half..=half);
            }
        }
        profile.set_additive(false);
    }
    profile
}

/// Regenerates profile `index` of the batch `(setting, size, seed)`.
pub fn sample_profile_at(setting: SettingId, size: AuctionSize, seed: u64, index: u64) -> ValuationProfile {
    sample_profile(setting, size, &mut profile_rng(seed, index))
}

/// An i.i.d. sample of valuation profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationBatch {
    setting: SettingId,
    seed: u64,
    size: AuctionSize,
    profiles: Vec<ValuationProfile>,
}

impl ValuationBatch {
    /// Wraps existing profiles; they must share one size and the list must be non-empty.
    pub fn new(setting: SettingId, seed: u64, profiles: Vec<ValuationProfile>) -> Result<Self> {
        let first = profiles.first().ok_or(Error::EmptyBatch)?;
        let size = first.size();
        if let Some(p) = profiles.iter().find(|p| p.size() != size) {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes {size} and {} profiles",
                p.size()
            )));
        }
        Ok(Self {
            setting,
            seed,
            size,
            profiles,
        })
    }

    pub fn setting(&self) -> SettingId {
        self.setting
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn size(&self) -> AuctionSize {
        self.size
    }

    pub fn profiles(&self) -> &[ValuationProfile] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// True when every profile is additive.
    pub fn is_additive(&self) -> bool {
        self.profiles.iter().all(ValuationProfile::is_additive)
    }

    const MAGIC: &'static [u8; 8] = b"VVCABAT1";

    /// Binary layout (little endian): magic `VVCABAT1`, setting code (u8),
    /// additive flag (u8), n (u32), m (u32), count (u64), seed (u64), then
    /// `count x n x 2^m` f64 values, profile-major then bidder-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&[self.setting.code(), self.is_additive() as u8])?;
        w.write_all(&(self.size.n_bidders as u32).to_le_bytes())?;
        w.write_all(&(self.size.n_items as u32).to_le_bytes())?;
        w.write_all(&(self.profiles.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for p in &self.profiles {
            for v in p.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(bad("not a valuation batch file"));
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let setting = SettingId::from_code(flags[0]).ok_or_else(|| bad("unknown setting code"))?;
        let additive = flags[1] == 1;
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf)?;
        let n = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let m = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        let size = AuctionSize::with_item_cap(n, m, MAX_ITEMS)?;
        let mut profiles = Vec::with_capacity(count);
        for _ in 0..count {
            let mut values = Vec::with_capacity(size.table_len());
            for _ in 0..size.table_len() {
                r.read_exact(&mut u64buf)?;
                values.push(f64::from_le_bytes(u64buf));
            }
            let mut profile = ValuationProfile::from_table(size, values)?;
            profile.set_additive(additive);
            profiles.push(profile);
        }
        Self::new(setting, seed, profiles)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file), path)
    }
}

/// Draws `count` profiles; profile `k` uses stream `k` of `seed`.
pub fn sample_batch(setting: SettingId, size: AuctionSize, count: usize, seed: u64) -> Result<ValuationBatch> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    let profiles = (0..count as u64)
        .into_par_iter()
        .map(|k| sample_profile_at(setting, size, seed, k))
        .collect();
    ValuationBatch::new(setting, seed, profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn size(n: usize, m: usize) -> AuctionSize {
        AuctionSize::new(n, m).unwrap()
    }

    #[test]
    fn subsets_of_101() {
        let got = enumerate_subsets(BundleMask(0b101));
        let mut bits: Vec<u32> = got.iter().map(|b| b.0).collect();
        bits.sort();
        assert_eq!(bits, vec![0b000, 0b001, 0b100, 0b101]);
        assert_eq!(got.first(), Some(&BundleMask(0b101)));
        assert_eq!(got.last(), Some(&BundleMask::EMPTY));
    }

    #[test]
    fn subsets_of_empty() {
        assert_eq!(enumerate_subsets(BundleMask::EMPTY), vec![BundleMask::EMPTY]);
    }

    #[test]
    fn subset_walk_is_exhaustive_up_to_twelve_items() {
        for m in 0..=12u32 {
            let full = (1u32 << m) - 1;
            // A spread of masks rather than all 2^12 to keep this quick.
            for mask in (0..=full).step_by(((full as usize) / 97).max(1)) {
                let got: Vec<u32> = BundleMask(mask).submasks().map(|b| b.0).collect();
                let expected: Vec<u32> = (0..=full).rev().filter(|b| b & mask == *b).collect();
                assert_eq!(got, expected, "mask {mask:b}");
                assert_eq!(got.len(), 1 << mask.count_ones());
            }
        }
    }

    #[test]
    fn size_validation() {
        assert!(AuctionSize::new(0, 2).is_err());
        assert!(AuctionSize::new(2, 0).is_err());
        assert!(AuctionSize::new(2, 17).is_err());
        assert!(AuctionSize::with_item_cap(2, 17, 20).is_ok());
        assert!(AuctionSize::with_item_cap(2, 25, 30).is_err());
    }

    #[test]
    fn setting_parse() {
        assert_eq!("B".parse::<SettingId>().unwrap(), SettingId::B);
        assert!(matches!("E".parse::<SettingId>(), Err(Error::UnknownSetting(_))));
    }

    #[test]
    fn bundle_value_lookup() {
        let s = size(2, 3);
        let p = ValuationProfile::from_item_values(s, &[0.1, 0.2, 0.4, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.bundle_value(0, BundleMask::EMPTY).unwrap(), 0.0);
        assert_eq!(p.bundle_value(1, s.full_bundle()).unwrap(), 6.0);
        assert_eq!(p.bundle_value(0, BundleMask(0b101)).unwrap(), 0.1 + 0.4);
        assert!(matches!(
            p.bundle_value(2, BundleMask(1)),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            p.bundle_value(0, BundleMask(8)),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn from_table_rejects_bad_tables() {
        let s = size(1, 1);
        assert!(ValuationProfile::from_table(s, vec![0.5, 1.0]).is_err());
        assert!(ValuationProfile::from_table(s, vec![0.0, -1.0]).is_err());
        assert!(ValuationProfile::from_table(s, vec![0.0, f64::NAN]).is_err());
        assert!(ValuationProfile::from_table(s, vec![0.0]).is_err());
        assert!(ValuationProfile::from_table(s, vec![0.0, 1.0]).is_ok());
    }

    fn additivity_residual(p: &ValuationProfile) -> f64 {
        let s = p.size();
        let mut worst = 0.0f64;
        for i in 0..s.n_bidders {
            for b in 0..s.n_bundles() as u32 {
                let mask = BundleMask(b);
                let sum = mask.items().fold(0.0, |acc, j| acc + p.item_value(i, j));
                worst = worst.max((p.value(i, mask) - sum).abs());
            }
        }
        worst
    }

    #[test]
    fn setting_a_is_unit_uniform_and_additive() {
        let s = size(3, 5);
        for seed in 0..20 {
            let p = sample_profile_at(SettingId::A, s, seed, 0);
            assert!(p.is_additive());
            for i in 0..3 {
                for j in 0..5 {
                    let v = p.item_value(i, j);
                    assert!((0.0..=1.0).contains(&v));
                }
            }
            assert_eq!(additivity_residual(&p), 0.0);
        }
    }

    #[test]
    fn additive_settings_have_zero_residual() {
        let s = size(4, 6);
        for setting in [SettingId::A, SettingId::B, SettingId::C] {
            for k in 0..10 {
                let p = sample_profile_at(setting, s, 99, k);
                assert_eq!(additivity_residual(&p), 0.0, "{setting}");
            }
        }
    }

    #[test]
    fn setting_c_strictly_positive() {
        let s = size(5, 4);
        for k in 0..50 {
            let p = sample_profile_at(SettingId::C, s, 3, k);
            for i in 0..5 {
                for b in 1..16 {
                    assert!(p.value(i, BundleMask(b)) > 0.0);
                }
            }
        }
    }

    #[test]
    fn setting_d_bundle_bounds() {
        let s = size(3, 5);
        for k in 0..100 {
            let p = sample_profile_at(SettingId::D, s, 11, k);
            assert!(!p.is_additive());
            for i in 0..3 {
                assert_eq!(p.value(i, BundleMask::EMPTY), 0.0);
                for b in 1..32u32 {
                    let len = b.count_ones() as f64;
                    let v = p.value(i, BundleMask(b));
                    assert!(v >= len / 2.0 && v <= 2.5 * len, "bundle {b:b}: {v}");
                }
            }
        }
    }

    #[test]
    fn setting_b_means_match_upper_bound() {
        // 10^6 draws per bidder; E[U[0, i]] = i/2 with standard error i/sqrt(12 N).
        let s = size(3, 10);
        let profiles = 100_000u64;
        let mut sums = [0.0f64; 3];
        for k in 0..profiles {
            let p = sample_profile_at(SettingId::B, s, 5, k);
            for (i, sum) in sums.iter_mut().enumerate() {
                *sum += (0..10).map(|j| p.item_value(i, j)).sum::<f64>();
            }
        }
        let draws = (profiles * 10) as f64;
        for (i, sum) in sums.iter().enumerate() {
            let upper = (i + 1) as f64;
            let se = upper / (12.0 * draws).sqrt();
            let mean = sum / draws;
            assert!((mean - upper / 2.0).abs() < 3.0 * se, "bidder {}: {mean}", i + 1);
        }
    }

    #[test]
    fn batches_are_deterministic() {
        let s = size(2, 3);
        let a = sample_batch(SettingId::D, s, 16, 42).unwrap();
        let b = sample_batch(SettingId::D, s, 16, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_batch(SettingId::D, s, 16, 43).unwrap();
        assert_ne!(a, c);
        assert!(sample_batch(SettingId::A, s, 0, 1).is_err());
    }

    #[test]
    fn batch_mean_in_clt_band() {
        let s = size(2, 2);
        let batch = sample_batch(SettingId::A, s, 1024, 7).unwrap();
        let mut total = 0.0;
        for p in batch.profiles() {
            for i in 0..2 {
                total += p.item_value(i, 0) + p.item_value(i, 1);
            }
        }
        let mean = total / (1024.0 * 4.0);
        assert!((0.47..=0.53).contains(&mean), "{mean}");
    }

    #[test]
    fn batch_file_round_trip_is_byte_identical() {
        let s = size(3, 4);
        let batch = sample_batch(SettingId::C, s, 8, 1234).unwrap();
        let mut first = Vec::new();
        batch.write_to(&mut first).unwrap();
        let mut second = Vec::new();
        sample_batch(SettingId::C, s, 8, 1234)
            .unwrap()
            .write_to(&mut second)
            .unwrap();
        assert_eq!(first, second);
        let back = ValuationBatch::read_from(first.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, batch);
        assert!(ValuationBatch::read_from(&b"garbage!garbage"[..], Path::new("mem")).is_err());
    }
}
