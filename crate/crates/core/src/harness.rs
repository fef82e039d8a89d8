//! Experiment orchestration: replicated runs, the two-parameter case-study
//! surface, the one-dimensional smoothing sweep and the verification suite.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, item_myerson_revenue_stream, vcg_params};
use crate::domain::{sample_profile, AuctionSize, BundleMask, SettingId, ValuationBatch, ValuationProfile};
use crate::error::{Error, Result};
use crate::mechanism::{self, evaluate_batch, evaluate_stream, run_auction, AuctionOutcome, VvcaParams};
use crate::optimizer::{self, eval_seed_for, CurveRow, Direction, TrainConfig, TrainMethod, Trainer};
use crate::winner::{self, dp_operation_count, TieBreak};

/// Mechanism compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OdVvca,
    FoVvca,
    Bbbvvca,
    Vcg,
    ItemMyerson,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::OdVvca,
        Method::FoVvca,
        Method::Bbbvvca,
        Method::Vcg,
        Method::ItemMyerson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::OdVvca => "od_vvca",
            Method::FoVvca => "fo_vvca",
            Method::Bbbvvca => "bbbvvca",
            Method::Vcg => "vcg",
            Method::ItemMyerson => "item_myerson",
        }
    }

    pub fn is_trained(self) -> bool {
        matches!(self, Method::OdVvca | Method::FoVvca | Method::Bbbvvca)
    }

    /// Item-wise Myerson is only truthful for additive valuations.
    pub fn supports(self, setting: SettingId) -> bool {
        self != Method::ItemMyerson || setting.is_additive()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Directory name under `output_dir`.
    pub name: String,
    pub setting: SettingId,
    pub size: AuctionSize,
    pub method: Method,
    /// Hyperparameters; run `k` uses seed `train.seed + k`.
    pub train: TrainConfig,
    pub runs: usize,
    /// `None` keeps everything in memory.
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Tabulated defaults, five runs, frozen-allocation runs at their own
    /// iteration budget.
    pub fn defaults(setting: SettingId, size: AuctionSize, method: Method, seed: u64) -> Self {
        let mut train = TrainConfig::defaults_for(setting, size, TrainMethod::OdVvca, seed);
        match method {
            Method::FoVvca => train.method = TrainMethod::FoVvca,
            Method::Bbbvvca => {
                train.method = TrainMethod::FoVvca;
                train.iterations = baselines::BBBVVCA_ITERATIONS;
            }
            _ => {}
        }
        Self {
            name: format!("{}_{}_{}", method, setting, size),
            setting,
            size,
            method,
            train,
            runs: 5,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if !self.method.supports(self.setting) {
            return Err(Error::UnsupportedSetting {
                setting: self.setting.to_string(),
                what: "item_myerson",
            });
        }
        if self.method.is_trained() {
            self.train.validate()?;
        } else if self.train.eval_size == 0 {
            return Err(Error::Config("eval_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.train.seed.wrapping_add(run as u64)
    }
}

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    /// Held-out mean revenue.
    pub revenue: f64,
    /// Held-out `Z` and `F`; absent for item-wise Myerson, which is no VVCA.
    pub z_mean: Option<f64>,
    pub f_mean: Option<f64>,
    pub revenue_std_error: Option<f64>,
    pub curve: Vec<CurveRow>,
    pub params: Option<VvcaParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); zero for one run.
    pub std: f64,
}

impl ExperimentReport {
    pub fn revenues(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.revenue).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    /// `std / mean`.
    pub fn relative_std(&self) -> f64 {
        self.std / self.mean.abs()
    }
}

/// Mean and sample standard deviation in one pass (Welford).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    let std = if xs.len() > 1 {
        (m2 / (xs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn run_once(config: &ExperimentConfig, run: usize) -> Result<RunResult> {
    let seed = config.run_seed(run);
    let mut train = config.train.clone();
    train.seed = seed;
    train.smoothing.seed = seed;
    let (setting, size) = (config.setting, config.size);
    let trained = match config.method {
        Method::OdVvca | Method::FoVvca => {
            train.method = if config.method == Method::OdVvca {
                TrainMethod::OdVvca
            } else {
                TrainMethod::FoVvca
            };
            Some(Trainer::new(setting, size, train.clone())?.run()?)
        }
        Method::Bbbvvca => Some(baselines::bbbvvca_train(setting, size, train.clone())?),
        Method::Vcg | Method::ItemMyerson => None,
    };
    let result = match (config.method, trained) {
        (_, Some((params, report))) => {
            let e = &report.final_eval;
            RunResult {
                run,
                seed,
                revenue: e.breakdown.r_mean,
                z_mean: Some(e.breakdown.z_mean),
                f_mean: Some(e.breakdown.f_mean),
                revenue_std_error: Some(e.revenue_std_error),
                curve: report.curve,
                params: Some(params),
            }
        }
        (Method::Vcg, None) => {
            let params = vcg_params(size);
            let e = evaluate_stream(setting, &params, train.eval_size, eval_seed_for(seed))?;
            RunResult {
                run,
                seed,
                revenue: e.breakdown.r_mean,
                z_mean: Some(e.breakdown.z_mean),
                f_mean: Some(e.breakdown.f_mean),
                revenue_std_error: Some(e.revenue_std_error),
                curve: Vec::new(),
                params: Some(params),
            }
        }
        _ => RunResult {
            run,
            seed,
            revenue: item_myerson_revenue_stream(setting, size, train.eval_size, eval_seed_for(seed))?,
            z_mean: None,
            f_mean: None,
            revenue_std_error: None,
            curve: Vec::new(),
            params: None,
        },
    };
    Ok(result)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_run(dir: &Path, config: &ExperimentConfig, r: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(p) = &r.params {
        p.save(&dir.join("params.json"), Some(config.setting), Some(r.seed))?;
    }
    fs::write(dir.join("curve.csv"), optimizer::curve_csv(&r.curve))?;
    let csv = format!(
        "{RUN_HEADER}\n{},{},{},{},{},{},{},{},{},{},{}\n",
        r.run,
        r.seed,
        config.method,
        config.setting,
        config.size.n_bidders,
        config.size.n_items,
        config.train.eval_size,
        r.revenue,
        opt(r.z_mean),
        opt(r.f_mean),
        opt(r.revenue_std_error),
    );
    fs::write(dir.join("report.csv"), csv)?;
    Ok(())
}

/// Columns of each run's `report.csv`.
pub const RUN_HEADER: &str = "run,seed,method,setting,n,m,eval_size,r_mean,z_mean,f_mean,std_error";

#[derive(Serialize)]
struct SummaryFile<'a> {
    name: &'a str,
    setting: SettingId,
    n: usize,
    m: usize,
    method: Method,
    train: &'a TrainConfig,
    runs: usize,
    seeds: Vec<u64>,
    revenues: Vec<f64>,
    mean: f64,
    std: f64,
}

/// Runs `config.runs` seeded replications and, when an output directory is
/// set, writes `{output_dir}/{name}/run_{k}/{params.json, curve.csv,
/// report.csv}` plus `summary.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let runs = (0..config.runs)
        .map(|k| run_once(config, k))
        .collect::<Result<Vec<_>>>()?;
    let revenues: Vec<f64> = runs.iter().map(|r| r.revenue).collect();
    let (mean, std) = mean_std(&revenues);
    let report = ExperimentReport {
        config: config.clone(),
        runs,
        mean,
        std,
    };
    if let Some(out) = &config.output_dir {
        let root = out.join(&config.name);
        for r in &report.runs {
            write_run(&root.join(format!("run_{}", r.run)), config, r)?;
        }
        let summary = SummaryFile {
            name: &config.name,
            setting: config.setting,
            n: config.size.n_bidders,
            m: config.size.n_items,
            method: config.method,
            train: &config.train,
            runs: config.runs,
            seeds: report.seeds(),
            revenues,
            mean,
            std,
        };
        fs::write(
            root.join("summary.json"),
            serde_json::to_string_pretty(&summary)? + "\n",
        )?;
    }
    Ok(report)
}

/// One point of the case-study surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub f: f64,
    pub z: f64,
}

pub const SURFACE_HEADER: &str = "x,y,R,F,Z";

/// Two-bidder, two-item parameters with unit weights, singleton boosts `x`
/// and grand-bundle boosts `y` for both bidders.
pub fn case_study_params(x: f64, y: f64) -> VvcaParams {
    let size = AuctionSize::new(2, 2).expect("2x2 is valid");
    let row = [0.0, x, x, y];
    let lambda = row.iter().chain(&row).copied().collect();
    VvcaParams::new(size, vec![0.0, 0.0], lambda).expect("finite case-study parameters")
}

/// Evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Revenue, `F` and `Z` over a `grid_n × grid_n` grid of
/// [`case_study_params`], row-major in `x` then `y`.
pub fn case_study_grid(
    x_range: (f64, f64),
    y_range: (f64, f64),
    grid_n: usize,
    batch: &ValuationBatch,
) -> Result<Vec<SurfaceRow>> {
    if batch.size() != AuctionSize::new(2, 2)? {
        return Err(Error::ShapeMismatch(format!(
            "case study needs a 2x2 batch, got {}",
            batch.size()
        )));
    }
    if grid_n == 0 {
        return Err(Error::Config("grid_n must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(grid_n * grid_n);
    for x in linspace(x_range.0, x_range.1, grid_n) {
        for y in linspace(y_range.0, y_range.1, grid_n) {
            let b = evaluate_batch(batch, &case_study_params(x, y))?.breakdown;
            rows.push(SurfaceRow {
                x,
                y,
                r: b.r_mean,
                f: b.f_mean,
                z: b.z_mean,
            });
        }
    }
    Ok(rows)
}

pub fn surface_csv(rows: &[SurfaceRow]) -> String {
    let mut out = format!("{SURFACE_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.x, r.y, r.r, r.f, r.z));
    }
    out
}

/// Fraction of adjacent pairs in `values` that are exactly equal.
pub fn repeat_fraction(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 1.0;
    }
    let same = values.windows(2).filter(|w| w[0] == w[1]).count();
    same as f64 / (values.len() - 1) as f64
}

/// [`repeat_fraction`] of `Z` over all horizontally and vertically adjacent
/// grid points of a surface produced with `grid_n` points per axis.
pub fn surface_repeat_fraction(rows: &[SurfaceRow], grid_n: usize) -> f64 {
    let (mut same, mut total) = (0usize, 0usize);
    for i in 0..grid_n {
        for j in 0..grid_n {
            let z = rows[i * grid_n + j].z;
            if j + 1 < grid_n {
                total += 1;
                same += usize::from(z == rows[i * grid_n + j + 1].z);
            }
            if i + 1 < grid_n {
                total += 1;
                same += usize::from(z == rows[(i + 1) * grid_n + j].z);
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        same as f64 / total as f64
    }
}

/// Which single boost the sweep moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LambdaCoordinate {
    pub bidder: usize,
    pub bundle: BundleMask,
}

impl LambdaCoordinate {
    fn flat(&self, size: AuctionSize) -> Result<usize> {
        if self.bidder >= size.n_bidders || !self.bundle.is_valid_for(&size) {
            return Err(Error::OutOfRange {
                what: "boost coordinate",
                index: self.bidder * size.n_bundles() + self.bundle.index(),
                limit: size.table_len(),
            });
        }
        Ok(self.bidder * size.n_bundles() + self.bundle.index())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub z: f64,
    /// Monte Carlo `Z̃^σ`, one per σ.
    pub smoothed: Vec<f64>,
    /// Estimated derivative of `Z̃^σ` along the swept coordinate, one per σ.
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub sigmas: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,Z");
        for s in &self.sigmas {
            out.push_str(&format!(",Zs_{s}"));
        }
        for s in &self.sigmas {
            out.push_str(&format!(",grad_{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.lambda, r.z));
            for v in r.smoothed.iter().chain(&r.gradient) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// `max |Z̃^σ - Z|` over the sweep, one per σ.
    pub fn max_deviation(&self) -> Vec<f64> {
        (0..self.sigmas.len())
            .map(|k| {
                self.rows
                    .iter()
                    .map(|r| (r.smoothed[k] - r.z).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn z_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.z).collect()
    }
}

/// Smoothed welfare and its estimated derivative along one coordinate at
/// `params`, from `directions` perturbations of the full parameter vector
/// drawn from `seed`. Returns `(Z, Z̃^σ, ∂Z̃^σ)`.
pub fn smoothing_point(
    profiles: &[ValuationProfile],
    params: &VvcaParams,
    coordinate: usize,
    sigma: f64,
    directions: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let z = optimizer::welfare_mean(profiles, params, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut smoothed, mut grad) = (0.0, 0.0);
    for _ in 0..directions {
        let dir = Direction::draw(params.size(), &mut rng);
        let zd = optimizer::welfare_mean(profiles, &dir.perturb(params, sigma), None)?;
        smoothed += zd;
        grad += (zd - z) / sigma * dir.delta[coordinate];
    }
    let d = directions as f64;
    Ok((z, smoothed / d, grad / d))
}

/// Sweeps one boost across `values` with every other parameter fixed at
/// `base`, reporting `Z`, `Z̃^σ` and the estimated derivative for each σ.
/// All σ and all sweep points share the direction seed.
pub fn smoothing_sweep(
    base: &VvcaParams,
    coordinate: LambdaCoordinate,
    values: &[f64],
    sigmas: &[f64],
    batch: &ValuationBatch,
    directions: usize,
    seed: u64,
) -> Result<SweepTable> {
    if batch.size() != base.size() {
        return Err(Error::ShapeMismatch("batch and parameter sizes differ".into()));
    }
    if directions == 0 || sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("need positive sigmas and at least one direction".into()));
    }
    let flat = coordinate.flat(base.size())?;
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut params = base.clone();
        params.lambda_mut()[flat] = v;
        let mut row = SweepRow {
            lambda: v,
            z: 0.0,
            smoothed: Vec::new(),
            gradient: Vec::new(),
        };
        for &sigma in sigmas {
            let (z, s, g) = smoothing_point(batch.profiles(), &params, flat, sigma, directions, seed)?;
            row.z = z;
            row.smoothed.push(s);
            row.gradient.push(g);
        }
        rows.push(row);
    }
    Ok(SweepTable {
        sigmas: sigmas.to_vec(),
        rows,
    })
}

/// Size of the verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Quick,
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quick" => Ok(Scale::Quick),
            "full" => Ok(Scale::Full),
            other => Err(Error::Config(format!(
                "unknown scale `{other}` (expected quick or full)"
            ))),
        }
    }
}

/// Deliberate defects used to check that the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Flips the sign of bidder 0's payment in every outcome.
    NegatePayment,
    /// Resolves DP ties towards larger bundles, unlike the oracle.
    TieBreakDivergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn random_params(size: AuctionSize, rng: &mut ChaCha8Rng) -> VvcaParams {
    let alpha = (0..size.n_bidders).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let lambda = (0..size.table_len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    VvcaParams::new(size, alpha, lambda).expect("finite random parameters")
}

fn random_size(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> AuctionSize {
    AuctionSize::new(rng.gen_range(1..=max_n), rng.gen_range(1..=max_m)).expect("small sizes are valid")
}

struct Suite {
    mutation: Mutation,
    rng: ChaCha8Rng,
    scale: usize,
}

impl Suite {
    fn outcome(&self, p: &ValuationProfile, q: &VvcaParams) -> Result<AuctionOutcome> {
        let mut o = run_auction(p, q)?;
        if self.mutation == Mutation::NegatePayment {
            o.payments[0] = -o.payments[0];
        }
        Ok(o)
    }

    fn tie(&self) -> TieBreak {
        match self.mutation {
            Mutation::TieBreakDivergence => TieBreak::PreferLarger,
            _ => TieBreak::PreferSmaller,
        }
    }

    fn oracle_equivalence(&mut self) -> Result<CheckResult> {
        let mut worst: f64 = 0.0;
        let mut mismatches = 0usize;
        let trials = 250 * self.scale;
        for t in 0..trials {
            let setting = SettingId::ALL[t % 4];
            let size = random_size(&mut self.rng, 4, 4);
            // Every other instance uses integer values and no boosts so exact
            // ties are frequent.
            let (p, q) = if t % 2 == 0 {
                (
                    sample_profile(setting, size, &mut self.rng),
                    random_params(size, &mut self.rng),
                )
            } else {
                let items: Vec<f64> = (0..size.n_bidders * size.n_items)
                    .map(|_| self.rng.gen_range(0..3) as f64)
                    .collect();
                (
                    ValuationProfile::from_item_values(size, &items)?,
                    VvcaParams::zeros(size),
                )
            };
            let (a, w, _) = winner::solve_winner_instrumented(&p, &q, self.tie())?;
            let (b, v) = winner::brute_force_winner(&p, &q)?;
            worst = worst.max((w - v).abs() / v.abs().max(1.0));
            if a != b {
                mismatches += 1;
            }
        }
        Ok(CheckResult {
            name: "oracle_equivalence",
            passed: mismatches == 0 && worst <= 1e-12,
            detail: format!("{trials} instances, {mismatches} allocation mismatches, max rel welfare gap {worst:.3e}"),
        })
    }

    fn identities(&mut self) -> Result<CheckResult> {
        let mut failures = Vec::new();
        let trials = 200 * self.scale;
        for t in 0..trials {
            let setting = SettingId::ALL[t % 4];
            let size = random_size(&mut self.rng, 4, 4);
            let p = sample_profile(setting, size, &mut self.rng);
            let q = random_params(size, &mut self.rng);
            let o = self.outcome(&p, &q)?;
            let tol = 1e-9 * o.revenue.abs().max(1.0);
            let sum: f64 = o.payments.iter().sum();
            if (o.revenue - o.welfare_z - o.continuous_f).abs() > tol {
                failures.push(format!("R != Z + F at {t}"));
            }
            if (o.revenue - sum).abs() > tol {
                failures.push(format!("R != sum p at {t}"));
            }
            if let Some(x) = o.payments.iter().find(|x| **x < -1e-12) {
                failures.push(format!("negative payment {x:.3e} at {t}"));
            }
            for c in [0.5, 2.0, 10.0] {
                let s = self.outcome(&p, &q.scaled(c))?;
                if (s.revenue - o.revenue).abs() > tol {
                    failures.push(format!("scale {c} changes revenue at {t}"));
                }
            }
        }
        Ok(summarize("revenue_identities", trials, failures))
    }

    fn incentives(&mut self) -> Result<CheckResult> {
        let mut failures = Vec::new();
        let trials = 250 * self.scale;
        let mut worst_gain: f64 = 0.0;
        for t in 0..trials {
            let n = 2 + t % 2;
            let size = AuctionSize::new(n, 3)?;
            let p = sample_profile(SettingId::ALL[t % 4], size, &mut self.rng);
            let q = random_params(size, &mut self.rng);
            let truthful = self.outcome(&p, &q)?;
            for i in 0..n {
                let u_true = p.value(i, truthful.allocation.bundle(i)) - truthful.payments[i];
                if u_true < -1e-9 {
                    failures.push(format!("IR violated by {u_true:.3e} at {t}"));
                }
                let lie = sample_profile(SettingId::ALL[(t + 1) % 4], size, &mut self.rng);
                let reported = mechanism::with_bidder_row(&p, i, lie.row(i))?;
                let o = self.outcome(&reported, &q)?;
                let gain = p.value(i, o.allocation.bundle(i)) - o.payments[i] - u_true;
                worst_gain = worst_gain.max(gain);
                if gain > 1e-9 {
                    failures.push(format!("misreport gains {gain:.3e} at {t}"));
                }
            }
        }
        let mut r = summarize("incentives", trials, failures);
        r.detail.push_str(&format!(", max misreport gain {worst_gain:.3e}"));
        Ok(r)
    }

    fn operation_count(&mut self) -> Result<CheckResult> {
        let mut failures = Vec::new();
        let max_m = if self.scale > 1 { 10 } else { 8 };
        for n in 1..=6 {
            for m in 1..=max_m {
                let size = AuctionSize::new(n, m)?;
                let p = sample_profile(SettingId::A, size, &mut self.rng);
                let (_, _, tables) = winner::solve_winner_instrumented(&p, &VvcaParams::zeros(size), self.tie())?;
                if tables.op_count != dp_operation_count(size) {
                    failures.push(format!("{size}: {} != {}", tables.op_count, dp_operation_count(size)));
                }
            }
        }
        Ok(summarize("dp_operation_count", 6 * max_m, failures))
    }

    fn sweep_accounting(&mut self) -> Result<CheckResult> {
        let mut failures = Vec::new();
        for (n, m) in [(2, 2), (3, 3)] {
            let size = AuctionSize::new(n, m)?;
            let mut c = TrainConfig::defaults_for(SettingId::A, size, TrainMethod::OdVvca, 1);
            c.batch_size = 32;
            c.eval_size = 32;
            let mut t = Trainer::new(SettingId::A, size, c.clone())?;
            let got = t.step()?.dp_sweeps;
            let want = (n + 1 + c.smoothing.n_r) as u64;
            if got != want {
                failures.push(format!("{size}: {got} sweeps, expected {want}"));
            }
        }
        Ok(summarize("iteration_sweeps", 2, failures))
    }

    fn gradient(&mut self) -> Result<CheckResult> {
        let h = 1e-5;
        let (mut checked, mut failures) = (0usize, Vec::new());
        let trials = 60 * self.scale;
        for t in 0..trials {
            let size = AuctionSize::new(2 + t % 2, 3)?;
            let p = sample_profile(SettingId::ALL[t % 4], size, &mut self.rng);
            let mut q = random_params(size, &mut self.rng);
            q.alpha_mut().iter_mut().for_each(|a| *a *= 0.5);
            let batch = ValuationBatch::new(SettingId::A, 0, vec![p.clone()])?;
            let g = optimizer::grad_f(&batch, &q)?;
            let allocs = |r: &VvcaParams| -> Result<Vec<winner::Allocation>> {
                let mut v = vec![winner::solve_winner(&p, r)?.0];
                for i in 0..size.n_bidders {
                    v.push(winner::solve_winner(&mechanism::zero_bidder(&p, i)?, r)?.0);
                }
                Ok(v)
            };
            let base = allocs(&q)?;
            let coords = size.n_bidders + size.table_len();
            let (mut fd, mut stable) = (Vec::with_capacity(coords), true);
            for c in 0..coords {
                let shift = |d: f64| {
                    let mut r = q.clone();
                    if c < size.n_bidders {
                        r.alpha_mut()[c] += d;
                    } else {
                        r.lambda_mut()[c - size.n_bidders] += d;
                    }
                    r
                };
                let (plus, minus) = (shift(h), shift(-h));
                if allocs(&plus)? != base || allocs(&minus)? != base {
                    stable = false;
                    break;
                }
                fd.push((run_auction(&p, &plus)?.continuous_f - run_auction(&p, &minus)?.continuous_f) / (2.0 * h));
            }
            if !stable {
                continue;
            }
            checked += 1;
            let analytic: Vec<f64> = g.d_alpha.iter().chain(&g.d_lambda).copied().collect();
            let diff = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
            if diff > 1e-4 * norm {
                failures.push(format!("relative error {:.3e} at {t}", diff / norm));
            }
        }
        let mut r = summarize("grad_f_finite_difference", checked, failures);
        if checked == 0 {
            r.passed = false;
        }
        Ok(r)
    }
}

fn summarize(name: &'static str, trials: usize, failures: Vec<String>) -> CheckResult {
    let detail = match failures.first() {
        None => format!("{trials} cases"),
        Some(first) => format!("{trials} cases, {} failures, first: {first}", failures.len()),
    };
    CheckResult {
        name,
        passed: failures.is_empty(),
        detail,
    }
}

/// Cross-module property checks: oracle agreement, revenue identities and
/// scale invariance, IR and DSIC, operation counts, sweep accounting and
/// the finite-difference gradient check.
pub fn verify_suite(scale: Scale, mutation: Mutation, seed: u64) -> Result<VerifyReport> {
    let mut suite = Suite {
        mutation,
        rng: ChaCha8Rng::seed_from_u64(seed),
        scale: match scale {
            Scale::Quick => 1,
            Scale::Full => 20,
        },
    };
    let checks = vec![
        suite.oracle_equivalence()?,
        suite.identities()?,
        suite.incentives()?,
        suite.operation_count()?,
        suite.sweep_accounting()?,
        suite.gradient()?,
    ];
    Ok(VerifyReport { checks })
}
