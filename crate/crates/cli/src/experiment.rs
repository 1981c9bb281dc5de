use std::path::Path;

use fcc_core::cfmp::CausalStatements;
use fcc_core::codec::{encode_dataset, CompCbnContext, CompCbnDescription, Header, Model, VERSION};
use fcc_core::dist::{ceil_log2, DistributionFile};
use fcc_core::select::{
    bivariate_readout, covariate_shift_pool, covariate_shift_readout, covariate_shift_symbols,
    gen_linear_gaussian_data, median_k, run_covariate_shift, select_bivariate, BivariateConfig,
    BivariateResult, BivariateSearch, CovariateShiftConfig, Direction, GaussianParams,
    ParameterPool, SelectionResult,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::{read_json, CliError, CliResult, OutDir, Report};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSweep {
    pub curve: String,
    pub samples_per_env: Vec<usize>,
}

/// Covariate-shift experiment file; rates are listed unscaled.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovariateShiftFile {
    pub samples_per_env: usize,
    pub support_size: usize,
    pub scale: f64,
    pub candidate_lambdas: Vec<f64>,
    pub curves: Vec<Curve>,
    #[serde(default)]
    pub sample_sweep: Option<SampleSweep>,
    #[serde(default = "default_precision")]
    pub precision: u32,
    /// Value bits of the environment prior in `.fcc` outputs.
    #[serde(default = "default_prior_bits")]
    pub prior_bits: u16,
}

fn default_precision() -> u32 {
    32
}

fn default_prior_bits() -> u16 {
    16
}

impl CovariateShiftFile {
    fn config(&self, curve: &Curve, samples_per_env: usize, seed: u64) -> CovariateShiftConfig {
        let mut cfg = CovariateShiftConfig::scaled(&self.candidate_lambdas, &curve.lambdas, self.scale, samples_per_env, seed);
        cfg.support_size = self.support_size;
        cfg.precision = self.precision;
        cfg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BivariateFile {
    /// `(σ1², σ2², a)` per environment.
    pub env_params: Vec<[f64; 3]>,
    pub samples_per_env: usize,
    pub grid_size: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Mechanism count compared against the full-grid optimum.
    #[serde(default = "default_gap_k")]
    pub gap_k: usize,
    /// Largest selected `k` the run accepts.
    #[serde(default = "default_gap_k")]
    pub max_selected_k: usize,
}

fn default_gap_k() -> usize {
    8
}

impl BivariateFile {
    fn config(&self, seed: u64) -> BivariateConfig {
        BivariateConfig {
            env_params: self.env_params.iter().map(|p| GaussianParams::new(p[0], p[1], p[2])).collect(),
            samples_per_env: self.samples_per_env,
            grid_size: self.grid_size,
            seed,
            k_min: self.k_min,
            k_max: self.k_max,
        }
    }
}

pub struct Tolerances {
    pub min_agreement: f64,
    pub max_gap: f64,
}

impl Tolerances {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.min_agreement > 0.0 && self.min_agreement <= 1.0) {
            return Err(CliError::Config("--min-agreement must lie in (0, 1]".into()));
        }
        if !(self.max_gap > 0.0) {
            return Err(CliError::Config("--max-gap must be positive".into()));
        }
        Ok(())
    }

    fn needed(&self, seeds: usize) -> usize {
        (self.min_agreement * seeds as f64 - 1e-9).ceil() as usize
    }
}

fn statements(s: &CausalStatements) -> Vec<String> {
    let mut out: Vec<String> = s.global.iter().map(|c| c.to_string()).collect();
    out.extend(s.local.iter().map(|(c, loci)| format!("{c} (local at {} loci)", loci.len())));
    out
}

#[derive(Serialize)]
struct CovariateRun<'a> {
    curve: &'a str,
    seed: u64,
    config: &'a CovariateShiftConfig,
    result: &'a SelectionResult,
    causal_statements: Vec<String>,
    fcc_file: String,
    fcc_bits: u64,
}

struct CovariateOutcome {
    curve: String,
    seed: u64,
    result: SelectionResult,
}

pub fn covariate_shift(config: &Path, seeds: &[u64], out: &OutDir, tol: &Tolerances) -> CliResult<()> {
    tol.validate()?;
    let file: CovariateShiftFile = read_json(config)?;
    if file.curves.is_empty() {
        return Err(CliError::Config("no curves in the config".into()));
    }
    let probe = file.config(&file.curves[0], file.samples_per_env, 0);
    probe.validate()?;
    let pool = covariate_shift_pool(&probe)?;
    let pool_files: Vec<DistributionFile> = pool.iter().map(DistributionFile::from).collect();
    out.write_json("covariate_shift_pool.json", &pool_files)?;
    let ctx = CompCbnContext { pool };
    let m = ceil_log2(file.support_size as u64) as u16;

    let jobs: Vec<(&Curve, u64)> = file.curves.iter().flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let runs: Vec<CliResult<CovariateOutcome>> = jobs
        .par_iter()
        .map(|&(curve, seed)| {
            let cfg = file.config(curve, file.samples_per_env, seed);
            let (samples, result) = run_covariate_shift(&cfg)?;
            let readout = covariate_shift_readout(&cfg, &result)?;
            let row = result.row(result.argmin_fc).expect("selected row");
            let header = Header {
                version: VERSION,
                m,
                d: 2,
                n: file.prior_bits,
                envs: cfg.env_count as u16,
            };
            let model = Model::CompCbn(CompCbnDescription { assignment: row.assignment.clone() });
            let artifact = encode_dataset(header, &model, &covariate_shift_symbols(&samples), Some(&ctx))?;
            let stem = format!("covariate_shift_{}_seed{seed}", curve.name);
            out.write(&format!("{stem}.csv"), result.to_csv().as_bytes())?;
            out.write(&format!("{stem}.fcc"), &artifact.bytes)?;
            out.write_json(
                &format!("{stem}.json"),
                &CovariateRun {
                    curve: &curve.name,
                    seed,
                    config: &cfg,
                    result: &result,
                    causal_statements: statements(&readout),
                    fcc_file: format!("{stem}.fcc"),
                    fcc_bits: artifact.total_bits(),
                },
            )?;
            Ok(CovariateOutcome {
                curve: curve.name.clone(),
                seed,
                result,
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut report = Report::default();
    for curve in &file.curves {
        let mine: Vec<&CovariateOutcome> = runs.iter().filter(|r| r.curve == curve.name).collect();
        for r in &mine {
            let mono = r.result.rows.windows(2).all(|w| w[1].nll_bits <= w[0].nll_bits);
            report.check(
                format!("{} seed {} NLL nonincreasing in k", curve.name, r.seed),
                mono,
                format!("argmin_nll {}, argmin_fc {}", r.result.argmin_nll, r.result.argmin_fc),
            );
        }
        let agree = mine.iter().filter(|r| r.result.argmin_fc <= r.result.argmin_nll).count();
        report.check(
            format!("{} argmin_fc <= argmin_nll", curve.name),
            agree >= tol.needed(mine.len()),
            format!("{agree}/{} seeds", mine.len()),
        );
    }

    let mut sweep_summary = Vec::new();
    if let Some(sweep) = &file.sample_sweep {
        let curve = file
            .curves
            .iter()
            .find(|c| c.name == sweep.curve)
            .ok_or_else(|| CliError::Config(format!("sweep curve {:?} is not defined", sweep.curve)))?;
        let jobs: Vec<(usize, u64)> = sweep.samples_per_env.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
        let ks: Vec<CliResult<(usize, usize)>> = jobs
            .par_iter()
            .map(|&(n, seed)| Ok((n, run_covariate_shift(&file.config(curve, n, seed))?.1.argmin_fc)))
            .collect();
        let ks = ks.into_iter().collect::<CliResult<Vec<_>>>()?;
        let mut csv = String::from("samples_per_env,median_argmin_fc,argmin_fc_by_seed\n");
        let mut medians = Vec::new();
        for &n in &sweep.samples_per_env {
            let row: Vec<usize> = ks.iter().filter(|(s, _)| *s == n).map(|&(_, k)| k).collect();
            let med = median_k(&row).unwrap_or(0);
            medians.push(med);
            let seeds_col: Vec<String> = row.iter().map(ToString::to_string).collect();
            csv.push_str(&format!("{n},{med},{}\n", seeds_col.join(";")));
            sweep_summary.push((n, med, row));
        }
        out.write("covariate_shift_sweep.csv", csv.as_bytes())?;
        report.check(
            format!("{} sample sweep median argmin_fc nondecreasing", curve.name),
            medians.windows(2).all(|w| w[0] <= w[1]),
            format!("{medians:?}"),
        );
    }

    let summary = serde_json::json!({
        "config": file,
        "seeds": seeds,
        "runs": runs.iter().map(|r| serde_json::json!({
            "curve": r.curve,
            "seed": r.seed,
            "argmin_nll": r.result.argmin_nll,
            "argmin_fc": r.result.argmin_fc,
            "assignment": r.result.row(r.result.argmin_fc).map(|row| row.assignment.clone()),
        })).collect::<Vec<_>>(),
        "sample_sweep": sweep_summary,
        "checks": &report.checks,
    });
    out.write_json("covariate_shift_summary.json", &summary)?;
    report.finish()
}

#[derive(Serialize)]
struct BivariateRun<'a> {
    seed: u64,
    config: &'a BivariateConfig,
    result: &'a BivariateResult,
    gap_bits_per_sample: f64,
    causal_statements: Vec<String>,
}

pub fn bivariate(config: &Path, seeds: &[u64], out: &OutDir, tol: &Tolerances) -> CliResult<()> {
    tol.validate()?;
    let file: BivariateFile = read_json(config)?;
    file.config(0).validate()?;
    let runs: Vec<CliResult<(u64, BivariateResult, f64)>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = file.config(seed);
            let samples = gen_linear_gaussian_data(&cfg)?;
            let pool = ParameterPool::for_direction(&cfg.env_params, cfg.grid_size, Direction::Causal)?;
            let search = BivariateSearch::new(&samples, pool)?;
            let n = (cfg.samples_per_env * cfg.env_params.len()) as f64;
            let gap = (search.fit(file.gap_k)?.nll_bits - search.full_grid()?.nll_bits) / n;
            let result = select_bivariate(&cfg, &samples)?;
            let readout = bivariate_readout(&result)?;
            let stem = format!("bivariate_seed{seed}");
            out.write(&format!("{stem}.csv"), result.to_csv().as_bytes())?;
            out.write_json(
                &format!("{stem}.json"),
                &BivariateRun {
                    seed,
                    config: &cfg,
                    result: &result,
                    gap_bits_per_sample: gap,
                    causal_statements: statements(&readout),
                },
            )?;
            Ok((seed, result, gap))
        })
        .collect();
    let runs = runs.into_iter().collect::<CliResult<Vec<_>>>()?;

    let mut report = Report::default();
    for (seed, _, gap) in &runs {
        report.check(
            format!("seed {seed} causal fit at k={} near the full grid", file.gap_k),
            *gap <= tol.max_gap,
            format!("{gap:.4} bit/sample"),
        );
    }
    let small = runs.iter().filter(|(_, r, _)| r.winner.1 <= file.max_selected_k).count();
    let winners: Vec<String> = runs.iter().map(|(_, r, _)| format!("{:?}/{}", r.winner.0, r.winner.1)).collect();
    report.check(
        format!("selected k <= {}", file.max_selected_k),
        small >= tol.needed(runs.len()),
        format!("{small}/{} seeds, winners [{}]", runs.len(), winners.join(" ")),
    );
    let summary = serde_json::json!({
        "config": file,
        "seeds": seeds,
        "runs": runs.iter().map(|(seed, r, gap)| serde_json::json!({
            "seed": seed,
            "winner": r.winner,
            "argmin_nll": r.argmin_nll,
            "argmin_fc_by_direction": r.argmin_fc_by_direction,
            "gap_bits_per_sample": gap,
        })).collect::<Vec<_>>(),
        "checks": &report.checks,
    });
    out.write_json("bivariate_summary.json", &summary)?;
    report.finish()
}
