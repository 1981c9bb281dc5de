use std::fmt::Write as _;

use fcc_core::codec::{encode_dataset, entry_width, Header, Model, ShiftedCbn, ShiftedMechanism, VERSION};
use fcc_core::dist::DiscreteDistribution;
use fcc_core::ufcc::{
    bayes_vs_twopart, model_bits_density, model_bits_tabcbn, model_bits_tabinv, strategy_bits,
    tabcbn_table_bits, InvVariant, Strategy,
};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::output::{CliError, CliResult, OutDir, Report};

const BAYES_TOL: f64 = 1e-12;
/// Largest `d·m` for which the codec payload is built and measured.
const MEASURE_POINT_BITS: u64 = 12;

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn u32_arg(v: u64, what: &str) -> CliResult<u32> {
    u32::try_from(v)
        .ok()
        .filter(|&x| x > 0)
        .ok_or_else(|| CliError::Config(format!("{what} must be a positive 32-bit value")))
}

/// Uniform shifted CBN with the widest mechanisms the ledger prices.
fn measured_table_bits(m: u32, d: u32, n: u32, envs: u32) -> CliResult<u64> {
    let w = entry_width(n as u16);
    let one = BigUint::from(1u8) << w;
    let cells = |bits: u32| vec![&one >> bits; 1usize << bits];
    let parents: Vec<usize> = (1..d.saturating_sub(1) as usize).collect();
    let rows = (m as usize * parents.len()) as u32;
    let mech = ShiftedMechanism {
        parents,
        table: (0..1usize << rows).flat_map(|_| cells(m)).collect(),
    };
    let env_bits = fcc_core::dist::ceil_log2(envs as u64);
    let mut prior = cells(env_bits);
    prior.truncate(envs as usize);
    let model = Model::TabularCbn(ShiftedCbn {
        mechanisms: vec![mech; envs as usize],
        marginal: cells(m * (d - 1)),
        prior,
    });
    let header = Header {
        version: VERSION,
        m: m as u16,
        d: d as u16,
        n: n as u16,
        envs: envs as u16,
    };
    Ok(encode_dataset(header, &model, &[], None)?.payload.table)
}

pub fn prop17(m_grid: &[u64], d_grid: &[u64], n: u64, envs: u64, max_ratio: Option<f64>, out: &OutDir) -> CliResult<()> {
    let (n, envs) = (u32_arg(n, "--n")?, u32_arg(envs, "--envs")?);
    let ms = m_grid.iter().map(|&m| u32_arg(m, "--m-grid")).collect::<CliResult<Vec<_>>>()?;
    let ds = d_grid.iter().map(|&d| u32_arg(d, "--d")).collect::<CliResult<Vec<_>>>()?;
    if ds.iter().any(|&d| d < 2) {
        return Err(CliError::Config("--d values must be at least 2".into()));
    }
    let mut csv = String::from("m,d,n,envs,tabcbn_bits,table_bits,measured_table_bits,density_bits,ratio\n");
    let mut ratio = vec![vec![0.0; ms.len()]; ds.len()];
    let mut ledgers = Vec::new();
    let mut report = Report::default();
    for (i, &d) in ds.iter().enumerate() {
        for (j, &m) in ms.iter().enumerate() {
            let b = model_bits_tabcbn(m, d, n, envs)?;
            let tables = tabcbn_table_bits(m, d, n, envs)?;
            let dens = model_bits_density(m, d, n, envs);
            ratio[i][j] = b.model_bits / dens;
            let measured = if (m * d) as u64 <= MEASURE_POINT_BITS {
                let bits = measured_table_bits(m, d, n, envs)?;
                report.check(
                    format!("m={m} d={d} payload table bits equal the ledger"),
                    bits as f64 == tables,
                    format!("{bits} measured, {tables} ledgered"),
                );
                bits.to_string()
            } else {
                String::new()
            };
            let _ = writeln!(csv, "{m},{d},{n},{envs},{},{tables},{measured},{dens},{}", b.model_bits, ratio[i][j]);
            ledgers.push(serde_json::json!({"m": m, "d": d, "ledger": b.ledger(), "model_bits": b.model_bits}));
        }
    }
    if ms.len() > 1 {
        for (i, &d) in ds.iter().enumerate() {
            let r = &ratio[i];
            report.check(format!("d={d}: ratio strictly decreasing in m"), strictly_decreasing(r), format!("{r:.4?}"));
            if let (Some(limit), Some(&last)) = (max_ratio, r.last()) {
                report.check(format!("d={d}: final ratio below {limit}"), last < limit, format!("{last:.4}"));
            }
        }
    }
    if ds.len() > 1 {
        for (j, &m) in ms.iter().enumerate() {
            let r: Vec<f64> = ratio.iter().map(|row| row[j]).collect();
            report.check(format!("m={m}: ratio strictly decreasing in d"), strictly_decreasing(&r), format!("{r:.4?}"));
            if let (Some(limit), Some(&last)) = (max_ratio, r.last()) {
                report.check(format!("m={m}: final ratio below {limit}"), last < limit, format!("{last:.4}"));
            }
        }
    }
    out.write("prop17.csv", csv.as_bytes())?;
    out.write_json("prop17.json", &serde_json::json!({"n": n, "envs": envs, "rows": ledgers, "checks": &report.checks}))?;
    report.finish()
}

pub fn prop18(pool: u64, slots_grid: &[u64], out: &OutDir) -> CliResult<()> {
    if pool == 0 {
        return Err(CliError::Config("--M must be positive".into()));
    }
    let mut csv = String::from("N,M,k,sparse_bits,direct_bits,gap,s1_minus_s2\n");
    let mut report = Report::default();
    for &slots in slots_grid {
        if slots == 0 {
            return Err(CliError::Config("--N values must be positive".into()));
        }
        let direct = strategy_bits(slots, pool, 1, Strategy::Direct)?;
        let mut gaps = Vec::new();
        for k in 1..=pool.min(slots) {
            let sparse = strategy_bits(slots, pool, k, Strategy::Sparse)?;
            let gap = sparse - direct;
            let _ = writeln!(csv, "{slots},{pool},{k},{sparse},{direct},{gap},{}", -gap);
            gaps.push(gap);
        }
        let upto = (pool / 2).min(slots / 2) as usize;
        let rising = (1..upto).all(|k| gaps[k] > gaps[k - 1]);
        report.check(format!("N={slots}: A(1) < 0"), gaps[0] < 0.0, format!("A(1) = {:.3}", gaps[0]));
        report.check(
            format!("N={slots}: A rises for k < {upto}"),
            rising,
            format!("{:.3?}", &gaps[..upto.max(1).min(gaps.len())]),
        );
    }
    out.write("prop18.csv", csv.as_bytes())?;
    out.write_json("prop18.json", &serde_json::json!({"M": pool, "N": slots_grid, "checks": &report.checks}))?;
    report.finish()
}

pub fn prop19(m_grid: &[u64], orbits: u64, n: u64, max_ratio: Option<f64>, out: &OutDir) -> CliResult<()> {
    let n = u32_arg(n, "--n")?;
    let mut csv = String::from("m,orbits,invariant_bits,markov_bits,ratio\n");
    let mut ratios = Vec::new();
    for &m in m_grid {
        let m = u32_arg(m, "--m-grid")?;
        let inv = model_bits_tabinv(m, n, orbits, InvVariant::Invariant)?;
        let mk = model_bits_tabinv(m, n, orbits, InvVariant::Markov)?;
        let _ = writeln!(csv, "{m},{orbits},{inv},{mk},{}", inv / mk);
        ratios.push(inv / mk);
    }
    let mut report = Report::default();
    report.check("ratio strictly decreasing in m", strictly_decreasing(&ratios), format!("{ratios:.5?}"));
    if let (Some(limit), Some(&last)) = (max_ratio, ratios.last()) {
        report.check(format!("final ratio below {limit}"), last < limit, format!("{last:.5}"));
    }
    out.write("prop19.csv", csv.as_bytes())?;
    out.write_json("prop19.json", &serde_json::json!({"orbits": orbits, "n": n, "ratios": ratios, "checks": &report.checks}))?;
    report.finish()
}

fn random_model(rng: &mut ChaCha8Rng, cells: usize, n: u32) -> CliResult<DiscreteDistribution> {
    let weights: Vec<u64> = (0..cells).map(|_| rng.random_range(1..100)).collect();
    let total: u64 = weights.iter().sum();
    let nums = weights.iter().map(|&w| BigUint::from((w << n) / total)).collect();
    Ok(DiscreteDistribution::from_parts(1, cells.trailing_zeros() as usize, n, nums)?)
}

pub fn bayes(trials: u64, seed: u64, out: &OutDir) -> CliResult<()> {
    let mut report = Report::default();
    let p1 = DiscreteDistribution::from_parts(1, 1, 2, vec![2u8.into(), 2u8.into()])?;
    let p2 = DiscreteDistribution::from_parts(1, 1, 2, vec![1u8.into(), 3u8.into()])?;
    let (b, t) = bayes_vs_twopart(&[p1, p2], &[0.5, 0.5], &[0])?;
    report.check(
        "worked example",
        (t - 2.0).abs() < BAYES_TOL && (b + (3.0f64 / 8.0).log2()).abs() < BAYES_TOL,
        format!("two-part {t}, Bayes {b:.12}"),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("trial,models,samples,bayes_bits,twopart_bits\n");
    let mut violations = 0;
    for trial in 0..trials {
        let count = rng.random_range(1..=5usize);
        let models = (0..count).map(|_| random_model(&mut rng, 8, 12)).collect::<CliResult<Vec<_>>>()?;
        let raw: Vec<f64> = (0..count).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let prior: Vec<f64> = raw.iter().map(|w| w / s).collect();
        let xs: Vec<u64> = (0..rng.random_range(1..20)).map(|_| rng.random_range(0..8)).collect();
        let (b, t) = bayes_vs_twopart(&models, &prior, &xs)?;
        if b > t + BAYES_TOL {
            violations += 1;
        }
        let _ = writeln!(csv, "{trial},{count},{},{b},{t}", xs.len());
    }
    report.check("Bayes <= two-part on random instances", violations == 0, format!("{violations}/{trials} violations"));
    out.write("bayes.csv", csv.as_bytes())?;
    out.write_json("bayes.json", &serde_json::json!({"trials": trials, "seed": seed, "checks": &report.checks}))?;
    report.finish()
}
