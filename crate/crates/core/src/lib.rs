//! Virtual valuations combinatorial auctions (VVCAs).
//!
//! A VVCA is an affine maximizer auction whose allocation boost splits into
//! one term per bidder and bundle. Every parameter choice is dominant-strategy
//! incentive compatible and individually rational, which makes the parameters
//! safe to tune for revenue. The crate provides:
//!
//! - [`domain`]: bundles as bitmasks, valuation profiles and the four sampling settings;
//! - [`winner`]: the subset dynamic program for winner determination and an exhaustive oracle;
//! - [`mechanism`]: payments and the revenue split `R = Z + F`;
//! - [`optimizer`]: analytic gradients of `F`, Gaussian-smoothing gradients of `Z`, and training;
//! - [`baselines`]: VCG, per-item Myerson and the frozen-allocation BBBVVCA trainer;
//! - [`harness`]: experiments, case-study surfaces, smoothing sweeps and the verification suite;
//! - [`config`]: the flat run configuration used by the command-line tool.

pub mod baselines;
pub mod config;
pub mod domain;
pub mod error;
pub mod harness;
pub mod mechanism;
pub mod optimizer;
pub mod winner;

pub use domain::{
    enumerate_subsets, sample_batch, sample_profile, AuctionSize, BundleMask, SettingId, ValuationBatch,
    ValuationProfile,
};
pub use error::{Error, Result};
pub use mechanism::{run_auction, AuctionOutcome, RevenueBreakdown, VvcaParams};
pub use optimizer::{GradientEstimate, SmoothingConfig, TrainConfig, TrainMethod, TrainReport};
pub use winner::{brute_force_winner, dp_operation_count, solve_winner, solve_winner_batch, Allocation};
