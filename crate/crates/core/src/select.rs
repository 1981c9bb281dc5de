//! Model-selection searches over mechanism counts: Poisson covariate shift
//! and bivariate linear-Gaussian causal versus anticausal fits.

use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cfmp::{
    build_cbn, CausalStatements, Cfmp, CfmpSpec, CbnFactor, FeatureMechanism, FeatureRef,
    FeaturizedMechanism, MechanismBody, ProbMechanism, Selection,
};
use crate::dist::{ceil_log2, discretize_gaussian, discretize_poisson, pack, DiscreteDistribution, DyadicPmf};
use crate::error::{Error, Result};
use crate::ufcc::{binomial, fc_objective, strategy_bits, ObjectiveForm, Strategy};

/// Largest number of subsets enumerated for one `k`: `C(24, 12)`.
pub const MAX_SUBSETS: u64 = 2_704_156;

fn default_precision() -> u32 {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateShiftConfig {
    pub env_count: usize,
    pub samples_per_env: usize,
    pub support_size: usize,
    pub candidate_lambdas: Vec<f64>,
    pub ground_truth_lambdas: Vec<f64>,
    pub seed: u64,
    /// Bits of every discretized probability; also the likelihood floor `2^{-precision}`.
    #[serde(default = "default_precision")]
    pub precision: u32,
}

impl CovariateShiftConfig {
    /// Builds a config from unscaled parameter lists.
    pub fn scaled(
        candidates: &[f64],
        ground_truth: &[f64],
        scale: f64,
        samples_per_env: usize,
        seed: u64,
    ) -> Self {
        Self {
            env_count: ground_truth.len(),
            samples_per_env,
            support_size: 18,
            candidate_lambdas: candidates.iter().map(|c| c * scale).collect(),
            ground_truth_lambdas: ground_truth.iter().map(|g| g * scale).collect(),
            seed,
            precision: default_precision(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.env_count == 0 || self.samples_per_env == 0 {
            return Err(Error::Argument("need at least one environment and one sample".into()));
        }
        if self.support_size < 2 || self.support_size > 1 << 16 {
            return Err(Error::Argument(format!("support size {} is invalid", self.support_size)));
        }
        if self.ground_truth_lambdas.len() != self.env_count {
            return Err(Error::Argument("one ground-truth rate per environment".into()));
        }
        if self.candidate_lambdas.is_empty() {
            return Err(Error::Argument("the candidate list is empty".into()));
        }
        if self.precision == 0 || self.precision > DyadicPmf::MAX_BITS {
            return Err(Error::Argument(format!("precision {} is invalid", self.precision)));
        }
        for &g in &self.ground_truth_lambdas {
            if !self.candidate_lambdas.iter().any(|&c| (c - g).abs() <= 1e-9 * c.abs().max(1.0)) {
                return Err(Error::Argument(format!(
                    "ground-truth rate {g} is not a candidate"
                )));
            }
        }
        Ok(())
    }
}

/// Per-environment `(x, y)` samples on `{0..support_size-1}^2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateShiftSamples {
    pub support_size: usize,
    pub envs: Vec<Vec<(u32, u32)>>,
}

impl CovariateShiftSamples {
    pub fn env_count(&self) -> usize {
        self.envs.len()
    }

    pub fn sample_count(&self) -> usize {
        self.envs.iter().map(Vec::len).sum()
    }

    pub fn empirical_mean_x(&self, e: usize) -> f64 {
        let s = &self.envs[e];
        s.iter().map(|&(x, _)| x as f64).sum::<f64>() / s.len() as f64
    }
}

/// Discretized `N(x, 1)` on the support, one row per `x`.
fn y_given_x(support: usize, n: u32) -> Result<Vec<DyadicPmf>> {
    (0..support)
        .map(|x| discretize_gaussian(x as f64, 1.0, 0, support as i64 - 1, n))
        .collect()
}

fn uniform_draw(rng: &mut ChaCha8Rng, n: u32) -> u64 {
    rng.random::<u64>() >> (64 - n)
}

/// `X ~ Poisson(λ_e)` with the tail absorbed, `Y | X ~ N(X, 1)` binned.
pub fn gen_covariate_shift_data(cfg: &CovariateShiftConfig) -> Result<CovariateShiftSamples> {
    cfg.validate()?;
    let n = cfg.precision;
    let ys = y_given_x(cfg.support_size, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut envs = Vec::with_capacity(cfg.env_count);
    for &lambda in &cfg.ground_truth_lambdas {
        let px = discretize_poisson(lambda, cfg.support_size, n)?;
        let env = (0..cfg.samples_per_env)
            .map(|_| {
                let x = px.sample_index(uniform_draw(&mut rng, n));
                let y = ys[x].sample_index(uniform_draw(&mut rng, n));
                (x as u32, y as u32)
            })
            .collect();
        envs.push(env);
    }
    Ok(CovariateShiftSamples {
        support_size: cfg.support_size,
        envs,
    })
}

/// Best `k`-subset of candidate rates and the per-environment choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateShiftFit {
    pub k: usize,
    /// Candidate indices, ascending.
    pub subset: Vec<usize>,
    /// Candidate index used by each environment.
    pub assignment: Vec<usize>,
    pub nll_bits: f64,
}

/// Precomputed likelihood tables for one data set and candidate list.
#[derive(Clone, Debug)]
pub struct CovariateShiftModel {
    lambdas: Vec<f64>,
    /// `nll_x[e][j]`: bits of env `e`'s `x` values under candidate `j`.
    nll_x: Vec<Vec<f64>>,
    /// Candidates ordered by distance of their mean to each env's mean, ties to smaller rate.
    ranking: Vec<Vec<usize>>,
    /// Bits of all `y | x` and environment labels, shared by every candidate choice.
    fixed_bits: f64,
}

impl CovariateShiftModel {
    pub fn new(samples: &CovariateShiftSamples, candidates: &[f64], precision: u32) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Argument("the candidate list is empty".into()));
        }
        if samples.envs.is_empty() || samples.envs.iter().any(Vec::is_empty) {
            return Err(Error::Argument("every environment needs samples".into()));
        }
        let s = samples.support_size;
        let pmfs = candidates
            .iter()
            .map(|&l| discretize_poisson(l, s, precision))
            .collect::<Result<Vec<_>>>()?;
        let means: Vec<f64> = pmfs.iter().map(DyadicPmf::mean).collect();
        let ys = y_given_x(s, precision)?;
        let env_bits = (samples.env_count() as f64).log2();
        let mut fixed_bits = 0.0;
        let mut nll_x = Vec::new();
        let mut ranking = Vec::new();
        for (e, env) in samples.envs.iter().enumerate() {
            for &(x, y) in env {
                if x as usize >= s || y as usize >= s {
                    return Err(Error::Argument(format!("sample ({x}, {y}) is off the support")));
                }
                fixed_bits += ys[x as usize].floored_neg_log2(y as usize) + env_bits;
            }
            nll_x.push(
                pmfs.iter()
                    .map(|p| env.iter().map(|&(x, _)| p.floored_neg_log2(x as usize)).sum())
                    .collect(),
            );
            let emp = samples.empirical_mean_x(e);
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&a, &b| {
                (means[a] - emp)
                    .abs()
                    .total_cmp(&(means[b] - emp).abs())
                    .then(candidates[a].total_cmp(&candidates[b]))
                    .then(a.cmp(&b))
            });
            ranking.push(order);
        }
        Ok(Self {
            lambdas: candidates.to_vec(),
            nll_x,
            ranking,
            fixed_bits,
        })
    }

    pub fn candidate_count(&self) -> usize {
        self.lambdas.len()
    }

    pub fn env_count(&self) -> usize {
        self.nll_x.len()
    }

    fn score(&self, member: &[bool], assignment: &mut [usize]) -> f64 {
        let mut total = self.fixed_bits;
        for (e, order) in self.ranking.iter().enumerate() {
            let j = *order.iter().find(|&&j| member[j]).expect("nonempty subset");
            assignment[e] = j;
            total += self.nll_x[e][j];
        }
        total
    }

    /// Exhaustive search over `k`-subsets; ties go to the lexicographically smallest.
    pub fn fit(&self, k: usize) -> Result<CovariateShiftFit> {
        let m = self.lambdas.len();
        if k == 0 || k > m {
            return Err(Error::Argument(format!("k = {k} must lie in 1..={m}")));
        }
        let count = binomial(m as u64, k as u64);
        if count > BigUint::from(MAX_SUBSETS) {
            return Err(Error::Argument(format!(
                "C({m}, {k}) subsets exceed the exhaustive-search limit"
            )));
        }
        let mut best: Option<CovariateShiftFit> = None;
        let mut member = vec![false; m];
        let mut assignment = vec![0; self.env_count()];
        for_each_subset(m, k, |subset| {
            member.iter_mut().for_each(|b| *b = false);
            for &j in subset {
                member[j] = true;
            }
            let nll = self.score(&member, &mut assignment);
            if best.as_ref().is_none_or(|b| nll < b.nll_bits) {
                best = Some(CovariateShiftFit {
                    k,
                    subset: subset.to_vec(),
                    assignment: assignment.clone(),
                    nll_bits: nll,
                });
            }
        });
        Ok(best.expect("at least one subset"))
    }
}

/// Calls `f` on every `k`-subset of `0..m` in lexicographic order.
pub fn for_each_subset(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < m - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn fit_covariate_shift(
    samples: &CovariateShiftSamples,
    candidates: &[f64],
    k: usize,
    precision: u32,
) -> Result<CovariateShiftFit> {
    CovariateShiftModel::new(samples, candidates, precision)?.fit(k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub k: usize,
    pub subset: Vec<usize>,
    pub assignment: Vec<usize>,
    pub nll_bits: f64,
    pub model_bits: f64,
    pub fc_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub rows: Vec<SelectionRow>,
    pub argmin_nll: usize,
    pub argmin_fc: usize,
}

/// Index of the smallest value, first one on ties.
fn argmin_by(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

impl SelectionResult {
    fn from_rows(rows: Vec<SelectionRow>) -> Result<Self> {
        let pick = |f: fn(&SelectionRow) -> f64| {
            argmin_by(rows.iter().map(f))
                .map(|i| rows[i].k)
                .ok_or_else(|| Error::Argument("empty k range".into()))
        };
        let argmin_nll = pick(|r| r.nll_bits)?;
        let argmin_fc = pick(|r| r.fc_total)?;
        Ok(Self {
            rows,
            argmin_nll,
            argmin_fc,
        })
    }

    pub fn row(&self, k: usize) -> Option<&SelectionRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,nll_bits,model_bits,fc_total,argmin_nll,argmin_fc\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{},{}",
                r.k,
                r.nll_bits,
                r.model_bits,
                r.fc_total,
                r.k == self.argmin_nll,
                r.k == self.argmin_fc
            );
        }
        s
    }
}

/// Fits every `k` in `k_range` and scores it with sparse-selection model bits
/// for `slots` slots drawn from a pool of `pool`.
pub fn select_k(
    model: &CovariateShiftModel,
    k_range: impl IntoIterator<Item = usize>,
    pool: u64,
    slots: u64,
) -> Result<SelectionResult> {
    let mut rows = Vec::new();
    for k in k_range {
        let fit = model.fit(k)?;
        let model_bits = strategy_bits(slots, pool, k as u64, Strategy::Sparse)?;
        rows.push(SelectionRow {
            k,
            subset: fit.subset,
            assignment: fit.assignment,
            nll_bits: fit.nll_bits,
            model_bits,
            fc_total: fc_objective(model_bits, fit.nll_bits, ObjectiveForm::Experiment),
        });
    }
    SelectionResult::from_rows(rows)
}

/// Generates data for `cfg` and selects over `k = 1..=min(I, |candidates|)`.
pub fn run_covariate_shift(cfg: &CovariateShiftConfig) -> Result<(CovariateShiftSamples, SelectionResult)> {
    let samples = gen_covariate_shift_data(cfg)?;
    let model = CovariateShiftModel::new(&samples, &cfg.candidate_lambdas, cfg.precision)?;
    let kmax = cfg.env_count.min(cfg.candidate_lambdas.len());
    let result = select_k(
        &model,
        1..=kmax,
        cfg.candidate_lambdas.len() as u64,
        cfg.env_count as u64,
    )?;
    Ok((samples, result))
}

/// Program `f(X|E)·f(Y|X)·f(E)` for a covariate-shift assignment.
pub fn covariate_shift_cfmp(
    lambdas: &[f64],
    assignment: &[usize],
    support_size: usize,
    precision: u32,
) -> Result<Cfmp> {
    let envs = assignment.len();
    let m = ceil_log2(support_size.max(envs) as u64) as usize;
    let cols = 1usize << m;
    let mut fx = vec![BigUint::zero(); cols * cols];
    for (e, &j) in assignment.iter().enumerate() {
        let lambda = *lambdas
            .get(j)
            .ok_or_else(|| Error::Argument(format!("assignment names candidate {j}")))?;
        let pmf = discretize_poisson(lambda, support_size, precision)?;
        for (x, &v) in pmf.nums.iter().enumerate() {
            fx[e * cols + x] = BigUint::from(v);
        }
    }
    let fy = ProbMechanism::parametric(
        "y|x",
        m as u32,
        m as u32,
        precision,
        MechanismBody::Gaussian {
            mean: 0.0,
            slope: 1.0,
            sigma: 1.0,
            support: support_size as u64,
        },
    )
    .expand()?;
    let share = (BigUint::from(1u8) << precision) / BigUint::from(envs.max(1));
    let mut fe = vec![BigUint::zero(); cols];
    fe[..envs].fill(share);
    build_cbn(
        3,
        m,
        &["X", "Y", "E"],
        vec![
            CbnFactor { value_coords: vec![2], cond_coords: vec![], n: precision, nums: fe },
            CbnFactor { value_coords: vec![0], cond_coords: vec![2], n: precision, nums: fx },
            CbnFactor { value_coords: vec![1], cond_coords: vec![0], n: precision, nums: fy },
        ],
    )
}

/// Causal statements of the winning covariate-shift program.
pub fn covariate_shift_readout(
    cfg: &CovariateShiftConfig,
    result: &SelectionResult,
) -> Result<CausalStatements> {
    let row = result
        .row(result.argmin_fc)
        .ok_or_else(|| Error::Argument("no row for the selected k".into()))?;
    let cfmp = covariate_shift_cfmp(
        &cfg.candidate_lambdas,
        &row.assignment,
        cfg.support_size,
        cfg.precision,
    )?;
    Ok(cfmp.causal_statements())
}

/// Candidate joints `P_j(x, y) = Poisson_j(x)·N(y | x, 1)` on `X^2`, one per
/// candidate rate, at `2·precision` bits.
pub fn covariate_shift_pool(cfg: &CovariateShiftConfig) -> Result<Vec<DiscreteDistribution>> {
    cfg.validate()?;
    let n = cfg.precision;
    let m = ceil_log2(cfg.support_size as u64) as usize;
    let ys = y_given_x(cfg.support_size, n)?;
    cfg.candidate_lambdas
        .iter()
        .map(|&lambda| {
            let px = discretize_poisson(lambda, cfg.support_size, n)?;
            let mut table = vec![BigUint::zero(); 1 << (2 * m)];
            for (x, &a) in px.nums.iter().enumerate() {
                for (y, &b) in ys[x].nums.iter().enumerate() {
                    table[pack(&[x as u64, y as u64], m) as usize] = BigUint::from(a) * BigUint::from(b);
                }
            }
            DiscreteDistribution::from_parts(2, m, 2 * n, table)
        })
        .collect()
}

/// Samples as symbols `e·2^{2m} + pack(x, y)`.
pub fn covariate_shift_symbols(samples: &CovariateShiftSamples) -> Vec<u64> {
    let m = ceil_log2(samples.support_size as u64) as usize;
    samples
        .envs
        .iter()
        .enumerate()
        .flat_map(|(e, env)| {
            env.iter()
                .map(move |&(x, y)| ((e as u64) << (2 * m)) | pack(&[x as u64, y as u64], m))
        })
        .collect()
}

/// `(σ1², σ2², a)` for `X ~ N(0, σ1²)`, `Y = aX + ε`, `ε ~ N(0, σ2²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub var_cause: f64,
    pub var_noise: f64,
    pub coef: f64,
}

impl GaussianParams {
    pub fn new(var_cause: f64, var_noise: f64, coef: f64) -> Self {
        Self {
            var_cause,
            var_noise,
            coef,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.var_cause, self.var_noise, self.coef]
    }

    /// Parameters of the reverse factorization with the same joint law.
    pub fn reversed(&self) -> Self {
        let t1 = self.coef * self.coef * self.var_cause + self.var_noise;
        Self {
            var_cause: t1,
            var_noise: self.var_cause * self.var_noise / t1,
            coef: self.coef * self.var_cause / t1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BivariateConfig {
    pub env_params: Vec<GaussianParams>,
    pub samples_per_env: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub k_min: usize,
    pub k_max: usize,
}

impl BivariateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.env_params.is_empty() || self.samples_per_env == 0 {
            return Err(Error::Argument("need environments and samples".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::Argument("grids need at least 2 points".into()));
        }
        for p in &self.env_params {
            if !(p.var_cause > 0.0 && p.var_noise > 0.0 && p.coef.is_finite()) {
                return Err(Error::Argument(format!("invalid parameters {p:?}")));
            }
        }
        let pool = 3 * self.grid_size;
        if self.k_min < 3 || self.k_min > self.k_max || self.k_max > pool {
            return Err(Error::Argument(format!(
                "k range {}..={} must lie in 3..={pool}",
                self.k_min, self.k_max
            )));
        }
        Ok(())
    }

    pub fn slots(&self) -> u64 {
        3 * self.env_params.len() as u64
    }

    pub fn pool(&self) -> u64 {
        3 * self.grid_size as u64
    }
}

/// Per-environment `(x, y)` draws.
pub fn gen_linear_gaussian_data(cfg: &BivariateConfig) -> Result<Vec<Vec<(f64, f64)>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = Normal::new(0.0, 1.0).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(cfg
        .env_params
        .iter()
        .map(|p| {
            (0..cfg.samples_per_env)
                .map(|_| {
                    let x = p.var_cause.sqrt() * std.sample(&mut rng);
                    let y = p.coef * x + p.var_noise.sqrt() * std.sample(&mut rng);
                    (x, y)
                })
                .collect()
        })
        .collect())
}

/// `grid_size` evenly spaced points over the values' range, with the nearest
/// point replaced by each distinct value.
pub fn grid_with_values(values: &[f64], grid_size: usize) -> Result<Vec<f64>> {
    let mut distinct: Vec<f64> = Vec::new();
    for &v in values {
        if !distinct.iter().any(|&d| (d - v).abs() <= 1e-12 * v.abs().max(1.0)) {
            distinct.push(v);
        }
    }
    distinct.sort_by(f64::total_cmp);
    if distinct.len() > grid_size {
        return Err(Error::Argument(format!(
            "{} distinct values do not fit a grid of {grid_size}",
            distinct.len()
        )));
    }
    let (mut lo, mut hi) = (distinct[0], distinct[distinct.len() - 1]);
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        lo -= 1.0;
        hi += 1.0;
    }
    let mut grid: Vec<f64> = (0..grid_size)
        .map(|i| lo + (hi - lo) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let mut fixed = vec![false; grid_size];
    for &v in &distinct {
        let slot = (0..grid_size)
            .filter(|&i| !fixed[i])
            .min_by(|&a, &b| (grid[a] - v).abs().total_cmp(&(grid[b] - v).abs()))
            .expect("free slot");
        grid[slot] = v;
        fixed[slot] = true;
    }
    grid.sort_by(f64::total_cmp);
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Causal,
    Anticausal,
}

/// The three 8-point grids for one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPool {
    pub direction: Direction,
    pub var_cause: Vec<f64>,
    pub var_noise: Vec<f64>,
    pub coef: Vec<f64>,
}

impl ParameterPool {
    pub fn for_direction(params: &[GaussianParams], grid_size: usize, direction: Direction) -> Result<Self> {
        let ps: Vec<GaussianParams> = match direction {
            Direction::Causal => params.to_vec(),
            Direction::Anticausal => params.iter().map(GaussianParams::reversed).collect(),
        };
        let col = |f: fn(&GaussianParams) -> f64| ps.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            direction,
            var_cause: grid_with_values(&col(|p| p.var_cause), grid_size)?,
            var_noise: grid_with_values(&col(|p| p.var_noise), grid_size)?,
            coef: grid_with_values(&col(|p| p.coef), grid_size)?,
        })
    }

    pub fn size(&self) -> usize {
        self.var_cause.len() + self.var_noise.len() + self.coef.len()
    }
}

const LOG2_2PI: f64 = 2.651_496_129_472_318_7;

/// `-log2` of the `N(mean, var)` density at `x`.
pub fn gaussian_neg_log2_density(x: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return f64::INFINITY;
    }
    0.5 * (LOG2_2PI + var.log2()) + (x - mean).powi(2) / (2.0 * var) * std::f64::consts::LOG2_E
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BivariateFit {
    pub direction: Direction,
    pub k: usize,
    /// Grid indices chosen for `(var_cause, var_noise, coef)`.
    pub subsets: [Vec<usize>; 3],
    /// Per-environment parameters in the direction's own orientation.
    pub assignment: Vec<GaussianParams>,
    pub nll_bits: f64,
}

/// Exhaustive best-subset search for one direction. The likelihood splits
/// into a cause term depending on `var_cause` and a mechanism term depending
/// on `(var_noise, coef)`, so subsets of the two groups are searched apart.
#[derive(Clone, Debug)]
pub struct BivariateSearch {
    pool: ParameterPool,
    /// Best cause-term bits and subset for every subset size.
    cause: Vec<Option<(f64, Vec<usize>)>>,
    /// Best mechanism-term bits and `(noise, coef)` subsets for every combined size.
    mech: Vec<Option<(f64, Vec<usize>, Vec<usize>)>>,
    f: Vec<Vec<f64>>,
    g: Vec<Vec<Vec<f64>>>,
}

fn mask_members(mask: u32, len: usize) -> Vec<usize> {
    (0..len).filter(|&i| mask >> i & 1 == 1).collect()
}

impl BivariateSearch {
    pub fn new(samples: &[Vec<(f64, f64)>], pool: ParameterPool) -> Result<Self> {
        let g1 = pool.var_cause.len();
        let (g2, g3) = (pool.var_noise.len(), pool.coef.len());
        if g1 > 16 || g2 > 16 || g3 > 16 {
            return Err(Error::Argument("grids above 16 points are not supported".into()));
        }
        let orient = |&(x, y): &(f64, f64)| match pool.direction {
            Direction::Causal => (x, y),
            Direction::Anticausal => (y, x),
        };
        // f[e][i], g[e][j][l]
        let f: Vec<Vec<f64>> = samples
            .iter()
            .map(|env| {
                pool.var_cause
                    .iter()
                    .map(|&v| env.iter().map(|s| gaussian_neg_log2_density(orient(s).0, 0.0, v)).sum())
                    .collect()
            })
            .collect();
        let g: Vec<Vec<Vec<f64>>> = samples
            .iter()
            .map(|env| {
                pool.var_noise
                    .iter()
                    .map(|&v| {
                        pool.coef
                            .iter()
                            .map(|&b| {
                                env.iter()
                                    .map(|s| {
                                        let (c, e) = orient(s);
                                        gaussian_neg_log2_density(e, b * c, v)
                                    })
                                    .sum()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut cause: Vec<Option<(f64, Vec<usize>)>> = vec![None; g1 + 1];
        for mask in 1u32..(1 << g1) {
            let members = mask_members(mask, g1);
            let bits: f64 = f
                .iter()
                .map(|row| members.iter().map(|&i| row[i]).fold(f64::INFINITY, f64::min))
                .sum();
            let slot = &mut cause[members.len()];
            if better(bits, slot.as_ref().map(|s| (s.0, &s.1)), &members) {
                *slot = Some((bits, members));
            }
        }
        let mut mech: Vec<Option<(f64, Vec<usize>, Vec<usize>)>> = vec![None; g2 + g3 + 1];
        for m2 in 1u32..(1 << g2) {
            let s2 = mask_members(m2, g2);
            for m3 in 1u32..(1 << g3) {
                let s3 = mask_members(m3, g3);
                let bits: f64 = g
                    .iter()
                    .map(|grid| {
                        let mut best = f64::INFINITY;
                        for &j in &s2 {
                            for &l in &s3 {
                                best = best.min(grid[j][l]);
                            }
                        }
                        best
                    })
                    .sum();
                let key: Vec<usize> = s2.iter().copied().chain(s3.iter().map(|l| l + g2)).collect();
                let slot = &mut mech[s2.len() + s3.len()];
                let current = slot.as_ref().map(|s| {
                    let k: Vec<usize> = s.1.iter().copied().chain(s.2.iter().map(|l| l + g2)).collect();
                    (s.0, k)
                });
                if better(bits, current.as_ref().map(|c| (c.0, &c.1)), &key) {
                    *slot = Some((bits, s2.clone(), s3));
                }
            }
        }
        Ok(Self {
            pool,
            cause,
            mech,
            f,
            g,
        })
    }

    pub fn pool(&self) -> &ParameterPool {
        &self.pool
    }

    /// Best fit using exactly `k` pool members, at least one per parameter.
    pub fn fit(&self, k: usize) -> Result<BivariateFit> {
        if k < 3 || k > self.pool.size() {
            return Err(Error::Argument(format!(
                "k = {k} must lie in 3..={}",
                self.pool.size()
            )));
        }
        let mut best: Option<(f64, usize)> = None;
        for j in 1..self.cause.len() {
            let Some(t) = k.checked_sub(j) else { continue };
            let (Some(c), Some(m)) = (&self.cause[j], self.mech.get(t).and_then(Option::as_ref)) else {
                continue;
            };
            let bits = c.0 + m.0;
            if best.is_none_or(|(b, _)| bits < b) {
                best = Some((bits, j));
            }
        }
        let (nll, j) = best.ok_or_else(|| Error::Argument(format!("no split of k = {k}")))?;
        let s1 = self.cause[j].as_ref().expect("present").1.clone();
        let (_, s2, s3) = self.mech[k - j].as_ref().expect("present").clone();
        let assignment = (0..self.f.len())
            .map(|e| {
                let i = *s1
                    .iter()
                    .min_by(|&&a, &&b| self.f[e][a].total_cmp(&self.f[e][b]).then(a.cmp(&b)))
                    .expect("nonempty");
                let mut pick = (f64::INFINITY, s2[0], s3[0]);
                for &a in &s2 {
                    for &b in &s3 {
                        if self.g[e][a][b] < pick.0 {
                            pick = (self.g[e][a][b], a, b);
                        }
                    }
                }
                GaussianParams::new(
                    self.pool.var_cause[i],
                    self.pool.var_noise[pick.1],
                    self.pool.coef[pick.2],
                )
            })
            .collect();
        Ok(BivariateFit {
            direction: self.pool.direction,
            k,
            subsets: [s1, s2, s3],
            assignment,
            nll_bits: nll,
        })
    }

    /// Best fit with every pool member available.
    pub fn full_grid(&self) -> Result<BivariateFit> {
        self.fit(self.pool.size())
    }
}

fn better(bits: f64, current: Option<(f64, &Vec<usize>)>, key: &[usize]) -> bool {
    match current {
        None => true,
        Some((b, k)) => bits < b || (bits == b && key < k.as_slice()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BivariateRow {
    pub direction: Direction,
    pub k: usize,
    pub nll_bits: f64,
    pub model_bits: f64,
    pub fc_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BivariateResult {
    pub rows: Vec<BivariateRow>,
    pub fits: Vec<BivariateFit>,
    /// Smallest-NLL `k` per direction.
    pub argmin_nll: Vec<(Direction, usize)>,
    /// Smallest-FC `k` per direction.
    pub argmin_fc_by_direction: Vec<(Direction, usize)>,
    /// Overall winner by FC total; ties prefer the causal direction, then smaller `k`.
    pub winner: (Direction, usize),
}

impl BivariateResult {
    pub fn winning_fit(&self) -> &BivariateFit {
        self.fits
            .iter()
            .find(|f| (f.direction, f.k) == self.winner)
            .expect("winner has a fit")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("direction,k,nll_bits,model_bits,fc_total,winner\n");
        for r in &self.rows {
            let dir = match r.direction {
                Direction::Causal => "causal",
                Direction::Anticausal => "anticausal",
            };
            let _ = writeln!(
                s,
                "{dir},{},{:.6},{:.6},{:.6},{}",
                r.k,
                r.nll_bits,
                r.model_bits,
                r.fc_total,
                (r.direction, r.k) == self.winner
            );
        }
        s
    }
}

pub fn fit_bivariate(
    samples: &[Vec<(f64, f64)>],
    causal_pool: ParameterPool,
    anticausal_pool: ParameterPool,
    k: usize,
) -> Result<(BivariateFit, BivariateFit)> {
    let c = BivariateSearch::new(samples, causal_pool)?.fit(k)?;
    let a = BivariateSearch::new(samples, anticausal_pool)?.fit(k)?;
    Ok((c, a))
}

/// Both directions over the configured `k` range, scored by FC.
pub fn select_bivariate(cfg: &BivariateConfig, samples: &[Vec<(f64, f64)>]) -> Result<BivariateResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut argmin_nll = Vec::new();
    let mut argmin_fc_by_direction = Vec::new();
    for direction in [Direction::Causal, Direction::Anticausal] {
        let pool = ParameterPool::for_direction(&cfg.env_params, cfg.grid_size, direction)?;
        let search = BivariateSearch::new(samples, pool)?;
        let start = rows.len();
        for k in cfg.k_min..=cfg.k_max {
            let fit = search.fit(k)?;
            let model_bits = strategy_bits(cfg.slots(), cfg.pool(), k as u64, Strategy::Sparse)?;
            rows.push(BivariateRow {
                direction,
                k,
                nll_bits: fit.nll_bits,
                model_bits,
                fc_total: fc_objective(model_bits, fit.nll_bits, ObjectiveForm::Experiment),
            });
            fits.push(fit);
        }
        let mine = &rows[start..];
        let i = argmin_by(mine.iter().map(|r| r.nll_bits)).expect("nonempty range");
        argmin_nll.push((direction, mine[i].k));
        let i = argmin_by(mine.iter().map(|r| r.fc_total)).expect("nonempty range");
        argmin_fc_by_direction.push((direction, mine[i].k));
    }
    let w = argmin_by(rows.iter().map(|r| r.fc_total)).expect("nonempty range");
    Ok(BivariateResult {
        winner: (rows[w].direction, rows[w].k),
        rows,
        fits,
        argmin_nll,
        argmin_fc_by_direction,
    })
}

/// Context-specific program for a bivariate fit: in environment `e` the
/// selected mechanisms are `f_e(cause)`, `f_e(effect | cause)` and `f(E)`.
pub fn bivariate_cfmp(fit: &BivariateFit) -> Result<Cfmp> {
    let envs = fit.assignment.len();
    let m = ceil_log2(envs.max(2) as u64).max(3) as usize;
    let n = 16;
    let support = 1u64 << m;
    let (cause, effect) = match fit.direction {
        Direction::Causal => (0, 1),
        Direction::Anticausal => (1, 0),
    };
    let centre = (support / 2) as f64;
    let mut mechanisms = Vec::new();
    let mut featurized = Vec::new();
    let mut lists = Vec::new();
    let share = (1u64 << n) / envs as u64;
    let mut prior = vec![BigUint::zero(); 1 << m];
    prior[..envs].fill(BigUint::from(share));
    mechanisms.push(ProbMechanism::table("env", m as u32, 0, n, prior));
    featurized.push(FeaturizedMechanism::new(0, FeatureRef::observed(2), None));
    for (e, p) in fit.assignment.iter().enumerate() {
        let base = mechanisms.len();
        mechanisms.push(ProbMechanism::parametric(
            format!("cause[{e}]"),
            m as u32,
            0,
            n,
            MechanismBody::Gaussian {
                mean: centre,
                slope: 0.0,
                sigma: p.var_cause.sqrt(),
                support,
            },
        ));
        mechanisms.push(ProbMechanism::parametric(
            format!("effect[{e}]"),
            m as u32,
            m as u32,
            n,
            MechanismBody::Gaussian {
                mean: centre * (1.0 - p.coef),
                slope: p.coef,
                sigma: p.var_noise.sqrt(),
                support,
            },
        ));
        let fb = featurized.len();
        featurized.push(FeaturizedMechanism::new(base, FeatureRef::observed(cause), None));
        featurized.push(FeaturizedMechanism::new(
            base + 1,
            FeatureRef::observed(effect),
            Some(FeatureRef::observed(cause)),
        ));
        lists.push(vec![0, fb, fb + 1]);
    }
    while lists.len() < 1 << m {
        lists.push(lists[0].clone());
    }
    Cfmp::new(CfmpSpec {
        d: 3,
        m,
        latent_dims: 0,
        coord_names: vec!["X".into(), "Y".into(), "E".into()],
        mechanisms,
        features: vec![
            FeatureMechanism::projection("X", vec![0]),
            FeatureMechanism::projection("Y", vec![1]),
            FeatureMechanism::projection("E", vec![2]),
        ],
        featurized,
        selection: Selection::ByContext { coord: 2, lists },
    })
}

pub fn bivariate_readout(result: &BivariateResult) -> Result<CausalStatements> {
    Ok(bivariate_cfmp(result.winning_fit())?.causal_statements())
}

/// Median of a nonempty list of selected `k`, lower middle on even counts.
pub fn median_k(ks: &[usize]) -> Option<usize> {
    let mut v = ks.to_vec();
    v.sort_unstable();
    v.get((v.len().max(1) - 1) / 2).copied()
}

/// `u64` view of a big count for reporting.
pub fn subset_count(m: usize, k: usize) -> Option<u64> {
    binomial(m as u64, k as u64).to_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANDIDATES: [f64; 18] = [
        0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8,
        0.85, 0.9,
    ];
    const K7: [f64; 10] = [0.1, 0.1, 0.1, 0.3, 0.3, 0.5, 0.6, 0.7, 0.8, 0.9];

    fn k7(seed: u64) -> CovariateShiftConfig {
        CovariateShiftConfig::scaled(&CANDIDATES, &K7, 20.0, 10, seed)
    }

    #[test]
    fn subsets_lexicographic() {
        let mut all = Vec::new();
        for_each_subset(4, 2, |s| all.push(s.to_vec()));
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        let mut n = 0;
        for_each_subset(18, 9, |_| n += 1);
        assert_eq!(n, 48620);
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = k7(3);
        assert_eq!(cfg.ground_truth_lambdas[0], 2.0);
        let a = gen_covariate_shift_data(&cfg).unwrap();
        let b = gen_covariate_shift_data(&cfg).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_ne!(a, gen_covariate_shift_data(&k7(4)).unwrap());
    }

    #[test]
    fn generator_mean_within_three_sigma() {
        let mut cfg = k7(11);
        cfg.samples_per_env = 2000;
        let s = gen_covariate_shift_data(&cfg).unwrap();
        for (e, &l) in cfg.ground_truth_lambdas.iter().enumerate() {
            let pmf = discretize_poisson(l, 18, 32).unwrap();
            let mean = pmf.mean();
            let var: f64 = pmf.probs().iter().enumerate().map(|(i, p)| p * (i as f64 - mean).powi(2)).sum();
            let tol = 3.0 * var.sqrt() / (cfg.samples_per_env as f64).sqrt();
            assert!((s.empirical_mean_x(e) - mean).abs() <= tol, "env {e}");
        }
    }

    #[test]
    fn rejects_foreign_ground_truth() {
        let mut cfg = k7(0);
        cfg.ground_truth_lambdas[0] = 3.3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toy_assignment() {
        let mut cfg = CovariateShiftConfig::scaled(&[0.1, 0.7], &[0.1, 0.7], 20.0, 30, 5);
        cfg.env_count = 2;
        let s = gen_covariate_shift_data(&cfg).unwrap();
        let fit = fit_covariate_shift(&s, &cfg.candidate_lambdas, 2, 32).unwrap();
        assert_eq!(fit.assignment, vec![0, 1]);
        // exhaustive oracle over the 1- and 2-subsets
        let model = CovariateShiftModel::new(&s, &cfg.candidate_lambdas, 32).unwrap();
        let one = model.fit(1).unwrap();
        assert!(fit.nll_bits <= one.nll_bits);
    }

    #[test]
    fn nll_monotone_on_three_env_toy() {
        let cfg = CovariateShiftConfig::scaled(&CANDIDATES[..6], &[0.05, 0.15, 0.3], 20.0, 10, 9);
        let s = gen_covariate_shift_data(&cfg).unwrap();
        let model = CovariateShiftModel::new(&s, &cfg.candidate_lambdas, 32).unwrap();
        let nll: Vec<f64> = (1..=3).map(|k| model.fit(k).unwrap().nll_bits).collect();
        assert!(nll[0] >= nll[1] && nll[1] >= nll[2], "{nll:?}");
    }

    #[test]
    fn saturation_matches_per_env_optimum() {
        let cfg = k7(2);
        let s = gen_covariate_shift_data(&cfg).unwrap();
        let model = CovariateShiftModel::new(&s, &cfg.candidate_lambdas, 32).unwrap();
        let full = model.fit(18).unwrap();
        let expect: f64 = model.fixed_bits
            + (0..10)
                .map(|e| model.nll_x[e][model.ranking[e][0]])
                .sum::<f64>();
        assert!((full.nll_bits - expect).abs() < 1e-9);
    }

    #[test]
    fn selection_rows_consistent() {
        let (_, r) = run_covariate_shift(&k7(1)).unwrap();
        assert_eq!(r.rows.len(), 10);
        for row in &r.rows {
            assert_eq!(row.fc_total, fc_objective(row.model_bits, row.nll_bits, ObjectiveForm::Experiment));
        }
        let (_, again) = run_covariate_shift(&k7(1)).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
        assert!(r.to_csv().lines().count() == 11);
    }

    #[test]
    fn covariate_shift_readout_is_causal() {
        let cfg = k7(1);
        let (_, r) = run_covariate_shift(&cfg).unwrap();
        let s = covariate_shift_readout(&cfg, &r).unwrap();
        assert!(s.has_global("X", "Y"));
        assert!(s.has_global("E", "X"));
        assert!(!s.has_global("Y", "X"));
    }

    fn f2_params() -> Vec<GaussianParams> {
        [[1.0, 16.0, 1.0], [1.0, 16.0, 1.0], [9.0, 16.0, 2.0], [9.0, 25.0, 2.5], [25.0, 25.0, 2.5]]
            .iter()
            .map(|p| GaussianParams::new(p[0], p[1], p[2]))
            .collect()
    }

    fn f2_config(seed: u64) -> BivariateConfig {
        BivariateConfig {
            env_params: f2_params(),
            samples_per_env: 10,
            grid_size: 8,
            seed,
            k_min: 3,
            k_max: 15,
        }
    }

    #[test]
    fn reversal_preserves_joint_density() {
        for p in f2_params() {
            let r = p.reversed();
            for &(x, y) in &[(0.3, -1.2), (2.0, 5.0), (-1.0, 0.5)] {
                let causal = gaussian_neg_log2_density(x, 0.0, p.var_cause)
                    + gaussian_neg_log2_density(y, p.coef * x, p.var_noise);
                let anti = gaussian_neg_log2_density(y, 0.0, r.var_cause)
                    + gaussian_neg_log2_density(x, r.coef * y, r.var_noise);
                assert!((causal - anti).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grids_contain_optima() {
        let ps = f2_params();
        let causal = ParameterPool::for_direction(&ps, 8, Direction::Causal).unwrap();
        assert_eq!(causal.size(), 24);
        for p in &ps {
            assert!(causal.var_cause.contains(&p.var_cause));
            assert!(causal.var_noise.contains(&p.var_noise));
            assert!(causal.coef.contains(&p.coef));
        }
        let anti = ParameterPool::for_direction(&ps, 8, Direction::Anticausal).unwrap();
        for p in ps.iter().map(GaussianParams::reversed) {
            assert!(anti.var_cause.contains(&p.var_cause));
            assert!(anti.coef.contains(&p.coef));
        }
        let g = grid_with_values(&[3.0, 3.0], 4).unwrap();
        assert_eq!((g.len(), g[0], g[3]), (4, 2.0, 4.0));
        assert!(g.contains(&3.0) && g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empirical_variance_of_effect() {
        let mut cfg = f2_config(7);
        cfg.samples_per_env = 4000;
        let data = gen_linear_gaussian_data(&cfg).unwrap();
        for (p, env) in cfg.env_params.iter().zip(&data) {
            let n = env.len() as f64;
            let mean = env.iter().map(|s| s.1).sum::<f64>() / n;
            let var = env.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let truth = p.coef * p.coef * p.var_cause + p.var_noise;
            // sd of the sample variance ≈ truth·sqrt(2/(n−1))
            assert!((var - truth).abs() <= 3.0 * truth * (2.0 / (n - 1.0)).sqrt(), "{var} vs {truth}");
        }
    }

    #[test]
    fn factorized_search_matches_brute_force() {
        let mut cfg = f2_config(3);
        cfg.grid_size = 3;
        cfg.env_params.truncate(3);
        cfg.k_max = 9;
        let data = gen_linear_gaussian_data(&cfg).unwrap();
        let pool = ParameterPool {
            direction: Direction::Causal,
            var_cause: vec![1.0, 9.0, 25.0],
            var_noise: vec![10.0, 16.0, 25.0],
            coef: vec![1.0, 2.0, 2.5],
        };
        let search = BivariateSearch::new(&data, pool.clone()).unwrap();
        let flat: Vec<(usize, f64)> = (0..3)
            .flat_map(|t| {
                let g = [&pool.var_cause, &pool.var_noise, &pool.coef][t];
                g.iter().map(move |&v| (t, v))
            })
            .collect();
        for k in 3..=9 {
            let mut best = f64::INFINITY;
            for_each_subset(9, k, |s| {
                let pick = |t| s.iter().filter(|&&i| flat[i].0 == t).map(|&i| flat[i].1).collect::<Vec<_>>();
                let (a, b, c) = (pick(0), pick(1), pick(2));
                if a.is_empty() || b.is_empty() || c.is_empty() {
                    return;
                }
                let nll: f64 = data
                    .iter()
                    .map(|env| {
                        let mut m = f64::INFINITY;
                        for &v1 in &a {
                            for &v2 in &b {
                                for &co in &c {
                                    let t: f64 = env
                                        .iter()
                                        .map(|&(x, y)| {
                                            gaussian_neg_log2_density(x, 0.0, v1)
                                                + gaussian_neg_log2_density(y, co * x, v2)
                                        })
                                        .sum();
                                    m = m.min(t);
                                }
                            }
                        }
                        m
                    })
                    .sum();
                best = best.min(nll);
            });
            let got = search.fit(k).unwrap().nll_bits;
            assert!((got - best).abs() < 1e-9, "k = {k}: {got} vs {best}");
        }
    }

    #[test]
    fn independent_variant_picks_zero_coefficient() {
        let cfg = BivariateConfig {
            env_params: vec![GaussianParams::new(1.0, 1.0, 0.0); 3],
            samples_per_env: 200,
            grid_size: 8,
            seed: 1,
            k_min: 3,
            k_max: 24,
        };
        let data = gen_linear_gaussian_data(&cfg).unwrap();
        let pool = ParameterPool::for_direction(&cfg.env_params, 8, Direction::Causal).unwrap();
        let fit = BivariateSearch::new(&data, pool).unwrap().full_grid().unwrap();
        for p in fit.assignment {
            assert!(p.coef.abs() < 0.3, "{p:?}");
        }
    }

    #[test]
    fn bivariate_readouts() {
        let cfg = f2_config(0);
        let data = gen_linear_gaussian_data(&cfg).unwrap();
        let r = select_bivariate(&cfg, &data).unwrap();
        assert_eq!(r.rows.len(), 26);
        for dir in [Direction::Causal, Direction::Anticausal] {
            let fit = r.fits.iter().find(|f| f.direction == dir).unwrap();
            let s = bivariate_cfmp(fit).unwrap().causal_statements();
            match dir {
                Direction::Causal => assert!(s.has_global("X", "Y") && !s.has_global("Y", "X")),
                Direction::Anticausal => assert!(s.has_global("Y", "X") && !s.has_global("X", "Y")),
            }
        }
        assert!(!bivariate_readout(&r).unwrap().global.is_empty());
    }

    #[test]
    fn median_lower_middle() {
        assert_eq!(median_k(&[3, 1, 2]), Some(2));
        assert_eq!(median_k(&[4, 1, 2, 3]), Some(2));
        assert_eq!(median_k(&[]), None);
    }
}
