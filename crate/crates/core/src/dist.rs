//! Dyadic-rational distributions on `(B^m)^d`.
//!
//! A point is stored as a `u64` whose bits are the concatenation
//! `x_0 x_1 … x_{d-1}`, each coordinate `m` bits wide, coordinate 0 most
//! significant. Probabilities are numerators over a common `2^n`; every
//! truncation rounds down.

use std::cmp::Ordering;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::bitcode::BitString;
use crate::error::{Error, Result};

/// Largest supported `d·m`; tables are dense.
pub const MAX_POINT_BITS: usize = 24;

/// Exact value `num / 2^exp`; equality and order compare values.
#[derive(Clone, Debug)]
pub struct Dyadic {
    pub num: BigUint,
    pub exp: u32,
}

impl Dyadic {
    pub fn new(num: impl Into<BigUint>, exp: u32) -> Self {
        Self {
            num: num.into(),
            exp,
        }
    }

    pub fn zero() -> Self {
        Self::new(0u32, 0)
    }

    pub fn one() -> Self {
        Self::new(1u32, 0)
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn mul(&self, other: &Dyadic) -> Dyadic {
        Dyadic::new(&self.num * &other.num, self.exp + other.exp)
    }

    pub fn add(&self, other: &Dyadic) -> Dyadic {
        let exp = self.exp.max(other.exp);
        let a = &self.num << (exp - self.exp);
        let b = &other.num << (exp - other.exp);
        Dyadic::new(a + b, exp)
    }

    /// Numerator over `2^bits`, rounding down when `bits < exp`.
    pub fn numerator_at(&self, bits: u32) -> BigUint {
        if bits >= self.exp {
            &self.num << (bits - self.exp)
        } else {
            &self.num >> (self.exp - bits)
        }
    }

    /// Prefix truncation of the binary expansion to `bits` places.
    pub fn truncate(&self, bits: u32) -> Dyadic {
        Dyadic::new(self.numerator_at(bits), bits)
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new(
            BigInt::from(self.num.clone()),
            BigInt::from(BigUint::one() << self.exp),
        )
    }

    pub fn to_f64(&self) -> f64 {
        big_to_f64_scaled(&self.num, self.exp)
    }

    /// `-log2` of the value; infinite at zero.
    pub fn neg_log2(&self) -> f64 {
        if self.is_zero() {
            return f64::INFINITY;
        }
        self.exp as f64 - crate::ufcc::log2_big(&self.num)
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Dyadic {}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let exp = self.exp.max(other.exp);
        self.numerator_at(exp).cmp(&other.numerator_at(exp))
    }
}

/// `⌊r·2^bits⌋ / 2^bits` for a nonnegative rational.
pub fn truncate_rational(r: &BigRational, bits: u32) -> Dyadic {
    let scaled = r.numer() * (BigInt::one() << bits);
    let q = scaled.div_floor(r.denom());
    Dyadic::new(q.to_biguint().unwrap_or_default(), bits)
}

pub(crate) fn big_to_f64_scaled(num: &BigUint, exp: u32) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let bits = num.bits();
    let shift = bits.saturating_sub(64);
    let top = (num >> shift).to_u64().unwrap_or(u64::MAX) as f64;
    top * 2f64.powi(shift as i32 - exp as i32)
}

fn point_bits(d: usize, m: usize) -> Result<usize> {
    let bits = d
        .checked_mul(m)
        .ok_or_else(|| Error::Argument("d·m overflows".into()))?;
    if bits > MAX_POINT_BITS {
        return Err(Error::Argument(format!(
            "d·m = {bits} exceeds the supported {MAX_POINT_BITS} bits"
        )));
    }
    Ok(bits)
}

/// Coordinate `i` of a packed point.
pub fn coord(point: u64, i: usize, d: usize, m: usize) -> u64 {
    let shift = m * (d - 1 - i);
    (point >> shift) & ((1u64 << m) - 1)
}

/// Packs coordinates (each `m` bits) into a point.
pub fn pack(coords: &[u64], m: usize) -> u64 {
    coords.iter().fold(0u64, |acc, &c| (acc << m) | c)
}

/// Packs the listed coordinates of `point` into a sub-point.
pub fn sub_point(point: u64, coords: &[usize], d: usize, m: usize) -> u64 {
    coords
        .iter()
        .fold(0u64, |acc, &i| (acc << m) | coord(point, i, d, m))
}

/// A distribution on `(B^m)^d` with values in `2^{-n}ℤ`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteDistribution {
    d: usize,
    m: usize,
    n: u32,
    table: Vec<BigUint>,
}

impl DiscreteDistribution {
    /// Validated top-level construction: every value strictly below one and
    /// total mass within truncation slack of one.
    pub fn from_numerators(d: usize, m: usize, n: u32, table: Vec<BigUint>) -> Result<Self> {
        let dist = Self::from_parts(d, m, n, table)?;
        let one = BigUint::one() << n;
        if let Some((i, _)) = dist.table.iter().enumerate().find(|(_, v)| **v >= one) {
            return Err(Error::Distribution(format!(
                "value at point {i} is not below 1"
            )));
        }
        let slack = BigUint::from(dist.table.len());
        let mass = dist.mass_numerator();
        if mass + slack < one {
            return Err(Error::Distribution(
                "total mass falls below the truncation slack".into(),
            ));
        }
        Ok(dist)
    }

    /// Construction for derived tables (projections, conditionals, code
    /// lengths): values may reach one, only `mass ≤ 1` is enforced.
    pub fn from_parts(d: usize, m: usize, n: u32, table: Vec<BigUint>) -> Result<Self> {
        let bits = point_bits(d, m)?;
        if table.len() != 1usize << bits {
            return Err(Error::Distribution(format!(
                "table has {} entries, expected 2^{bits}",
                table.len()
            )));
        }
        let dist = Self { d, m, n, table };
        if dist.mass_numerator() > BigUint::one() << n {
            return Err(Error::Distribution("total mass exceeds 1".into()));
        }
        Ok(dist)
    }

    pub fn uniform(d: usize, m: usize) -> Result<Self> {
        let bits = point_bits(d, m)?;
        let n = bits as u32;
        Self::from_parts(d, m, n, vec![BigUint::one(); 1 << bits])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn domain_size(&self) -> usize {
        self.table.len()
    }

    pub fn numerators(&self) -> &[BigUint] {
        &self.table
    }

    pub fn numerator(&self, point: u64) -> &BigUint {
        &self.table[point as usize]
    }

    pub fn value(&self, point: u64) -> Dyadic {
        Dyadic::new(self.table[point as usize].clone(), self.n)
    }

    pub fn prob(&self, point: u64) -> f64 {
        big_to_f64_scaled(&self.table[point as usize], self.n)
    }

    pub fn point_string(&self, point: u64) -> BitString {
        BitString::from_u64(point, self.d * self.m)
    }

    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        self.table
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(i, _)| i as u64)
    }

    pub fn mass_numerator(&self) -> BigUint {
        self.table.iter().sum()
    }

    pub fn mass(&self) -> Dyadic {
        Dyadic::new(self.mass_numerator(), self.n)
    }

    /// Mass strictly below one.
    pub fn is_semi_measure(&self) -> bool {
        self.mass_numerator() < BigUint::one() << self.n
    }

    /// Shannon entropy in bits over the support.
    pub fn entropy(&self) -> f64 {
        self.support()
            .map(|x| {
                let p = self.prob(x);
                -p * p.log2()
            })
            .sum()
    }

    fn check_coords(&self, coords: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.d];
        for &c in coords {
            if c >= self.d || std::mem::replace(&mut seen[c], true) {
                return Err(Error::Argument(format!(
                    "coordinate list {coords:?} is invalid for d = {}",
                    self.d
                )));
            }
        }
        Ok(())
    }

    /// Unnormalized sums over the listed coordinates, indexed by sub-point.
    fn sums_over(&self, coords: &[usize]) -> Vec<BigUint> {
        let mut out = vec![BigUint::zero(); 1usize << (coords.len() * self.m)];
        for (p, v) in self.table.iter().enumerate() {
            if !v.is_zero() {
                out[sub_point(p as u64, coords, self.d, self.m) as usize] += v;
            }
        }
        out
    }

    /// `P^{(m',n')}`: cylinder mass of each `m'`-bit prefix class, truncated to `n'` bits.
    pub fn project_precision(&self, m_new: usize, n_new: u32) -> Result<Self> {
        if m_new > self.m || n_new > self.n {
            return Err(Error::Argument(format!(
                "cannot project ({}, {}) to finer ({m_new}, {n_new})",
                self.m, self.n
            )));
        }
        let drop = self.m - m_new;
        let mut out = vec![BigUint::zero(); 1usize << (self.d * m_new)];
        for (p, v) in self.table.iter().enumerate() {
            let coarse: Vec<u64> = (0..self.d)
                .map(|i| coord(p as u64, i, self.d, self.m) >> drop)
                .collect();
            out[pack(&coarse, m_new) as usize] += v;
        }
        let shift = self.n - n_new;
        for v in &mut out {
            *v >>= shift;
        }
        Self::from_parts(self.d, m_new, n_new, out)
    }

    /// Drops the low `drop` bits of one coordinate, keeping the grid: each
    /// cylinder's mass sits on its representative with trailing zeros.
    pub fn coarsen_coordinate(&self, coord_index: usize, drop: usize) -> Result<Self> {
        self.check_coords(&[coord_index])?;
        if drop > self.m {
            return Err(Error::Argument(format!("cannot drop {drop} of {} bits", self.m)));
        }
        let mut out = vec![BigUint::zero(); self.table.len()];
        for (p, v) in self.table.iter().enumerate() {
            let mut cs: Vec<u64> = (0..self.d).map(|i| coord(p as u64, i, self.d, self.m)).collect();
            cs[coord_index] = (cs[coord_index] >> drop) << drop;
            out[pack(&cs, self.m) as usize] += v;
        }
        Self::from_parts(self.d, self.m, self.n, out)
    }

    /// Marginal on `coords` (in the given order). Sums of `2^{-n}` multiples are exact.
    pub fn marginal(&self, coords: &[usize]) -> Result<Self> {
        self.check_coords(coords)?;
        Self::from_parts(coords.len(), self.m, self.n, self.sums_over(coords))
    }

    /// `P(target | given)` truncated to this distribution's `n` bits.
    pub fn conditional(&self, target: &[usize], given: &[(usize, u64)]) -> Result<Self> {
        self.conditional_at(target, given, self.n)
    }

    /// `P(target | given)` truncated to `bits` bits.
    pub fn conditional_at(
        &self,
        target: &[usize],
        given: &[(usize, u64)],
        bits: u32,
    ) -> Result<Self> {
        let given_coords: Vec<usize> = given.iter().map(|&(c, _)| c).collect();
        let all: Vec<usize> = target.iter().chain(&given_coords).copied().collect();
        self.check_coords(&all)?;
        if let Some(&(c, v)) = given.iter().find(|&&(_, v)| v >> self.m != 0) {
            return Err(Error::Argument(format!(
                "value {v} does not fit coordinate {c}"
            )));
        }
        let matches = |p: u64| given.iter().all(|&(c, v)| coord(p, c, self.d, self.m) == v);
        let mut joint = vec![BigUint::zero(); 1usize << (target.len() * self.m)];
        let mut evidence = BigUint::zero();
        for (p, v) in self.table.iter().enumerate() {
            if !v.is_zero() && matches(p as u64) {
                joint[sub_point(p as u64, target, self.d, self.m) as usize] += v;
                evidence += v;
            }
        }
        if evidence.is_zero() {
            return Err(Error::ZeroMass(format!(
                "conditioning event {given:?} has zero mass"
            )));
        }
        let out = joint
            .into_iter()
            .map(|j| (j << bits) / &evidence)
            .collect();
        Self::from_parts(target.len(), self.m, bits, out)
    }

    /// Whether `max |P(a,b|c) − P(a|c)P(b|c)| ≤ tol` over the support of `C`.
    pub fn is_cond_independent(&self, a: &[usize], b: &[usize], c: &[usize], tol: f64) -> bool {
        let all: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
        if self.check_coords(&all).is_err() {
            return false;
        }
        let tol = BigRational::from_float(tol).unwrap_or_else(BigRational::zero);
        let abc = self.sums_over(&all);
        let ac: Vec<usize> = a.iter().chain(c).copied().collect();
        let bc: Vec<usize> = b.iter().chain(c).copied().collect();
        let p_ac = self.sums_over(&ac);
        let p_bc = self.sums_over(&bc);
        let p_c = self.sums_over(c);
        let (wa, wb, wc) = (a.len() * self.m, b.len() * self.m, c.len() * self.m);
        for (zc, pc) in p_c.iter().enumerate() {
            if pc.is_zero() {
                continue;
            }
            let pc_i = BigInt::from(pc.clone());
            let denom = &pc_i * &pc_i;
            for xa in 0..(1usize << wa) {
                let ia = (xa << wc) | zc;
                for xb in 0..(1usize << wb) {
                    let iabc = (((xa << wb) | xb) << wc) | zc;
                    let ib = (xb << wc) | zc;
                    let lhs = BigInt::from(abc[iabc].clone()) * &pc_i;
                    let rhs = BigInt::from(&p_ac[ia] * &p_bc[ib]);
                    let diff = BigRational::new((lhs - rhs).abs(), denom.clone());
                    if diff > tol {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Reads the `{d, m, n, entries:[{point, num}]}` JSON form.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: DistributionFile = serde_json::from_str(s)?;
        file.into_distribution()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DistributionFile::from(self))?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub point: BitString,
    #[serde(with = "crate::bigjson")]
    pub num: BigUint,
}

/// On-disk distribution table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionFile {
    pub d: usize,
    pub m: usize,
    pub n: u32,
    pub entries: Vec<DistributionEntry>,
}

impl DistributionFile {
    pub fn into_distribution(self) -> Result<DiscreteDistribution> {
        make_table_distribution(
            self.entries.into_iter().map(|e| (e.point, e.num)),
            self.d,
            self.m,
            self.n,
        )
    }
}

impl From<&DiscreteDistribution> for DistributionFile {
    fn from(p: &DiscreteDistribution) -> Self {
        Self {
            d: p.d,
            m: p.m,
            n: p.n,
            entries: p
                .support()
                .map(|x| DistributionEntry {
                    point: p.point_string(x),
                    num: p.numerator(x).clone(),
                })
                .collect(),
        }
    }
}

/// Builds a validated distribution from `(point, numerator)` entries; unlisted points get zero.
pub fn make_table_distribution(
    entries: impl IntoIterator<Item = (BitString, BigUint)>,
    d: usize,
    m: usize,
    n: u32,
) -> Result<DiscreteDistribution> {
    let bits = point_bits(d, m)?;
    let mut table = vec![BigUint::zero(); 1 << bits];
    let mut seen = vec![false; 1 << bits];
    for (point, num) in entries {
        if point.len() != bits {
            return Err(Error::Distribution(format!(
                "point {point} is not in (B^{m})^{d}"
            )));
        }
        let idx = point.to_biguint().to_usize().unwrap_or(usize::MAX);
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::Distribution(format!("duplicate point {point}")));
        }
        table[idx] = num;
    }
    DiscreteDistribution::from_numerators(d, m, n, table)
}

/// `2n + ⌈log2 l⌉ + 3`: factor width that keeps an `l`-fold product within `2^{-n-1}`.
pub fn required_factor_precision(n: u32, l: u32) -> u32 {
    assert!(l >= 1, "at least one factor");
    2 * n + ceil_log2(l as u64) + 3
}

pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// A probability vector over `0..len` with values in `2^{-n}ℤ` summing to exactly one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicPmf {
    pub n: u32,
    pub nums: Vec<u64>,
}

impl DyadicPmf {
    pub const MAX_BITS: u32 = 62;

    /// Floors each cell to `n` bits and gives the residual to the largest cell.
    pub fn round(probs: &[f64], n: u32) -> Result<Self> {
        if n > Self::MAX_BITS || probs.is_empty() {
            return Err(Error::Argument(format!(
                "cannot round {} cells to {n} bits",
                probs.len()
            )));
        }
        let scale = (1u64 << n) as f64;
        let mut nums: Vec<u64> = probs
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * scale).floor() as u64)
            .collect();
        let total: u64 = nums.iter().sum();
        let one = 1u64 << n;
        let largest = (0..nums.len())
            .max_by(|&i, &j| nums[i].cmp(&nums[j]).then(j.cmp(&i)))
            .unwrap_or(0);
        if total > one {
            nums[largest] -= total - one;
        } else {
            nums[largest] += one - total;
        }
        Ok(Self { n, nums })
    }

    pub fn len(&self) -> usize {
        self.nums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nums.is_empty()
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.nums[i] as f64 / (1u64 << self.n) as f64
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.prob(i)).collect()
    }

    pub fn mean(&self) -> f64 {
        (0..self.len()).map(|i| i as f64 * self.prob(i)).sum()
    }

    /// `-log2 max(p_i, 2^{-n})`.
    pub fn floored_neg_log2(&self, i: usize) -> f64 {
        let num = self.nums[i].max(1);
        self.n as f64 - (num as f64).log2()
    }

    /// Inverse-CDF lookup of an `n`-bit uniform draw.
    pub fn sample_index(&self, draw: u64) -> usize {
        let mut acc = 0u64;
        for (i, &v) in self.nums.iter().enumerate() {
            acc += v;
            if draw < acc {
                return i;
            }
        }
        self.nums.len() - 1
    }
}

/// Poisson pmf on `0..support_size-1`; the upper tail is absorbed into the last cell.
pub fn poisson_probs(lambda: f64, support_size: usize) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Argument(format!("Poisson rate must be positive, got {lambda}")));
    }
    if support_size < 2 {
        return Err(Error::Argument("support size must be at least 2".into()));
    }
    let mut out = Vec::with_capacity(support_size);
    let mut p = (-lambda).exp();
    let mut acc = 0.0;
    for k in 0..support_size - 1 {
        if k > 0 {
            p *= lambda / k as f64;
        }
        out.push(p);
        acc += p;
    }
    out.push((1.0 - acc).max(0.0));
    Ok(out)
}

pub fn discretize_poisson(lambda: f64, support_size: usize, n: u32) -> Result<DyadicPmf> {
    DyadicPmf::round(&poisson_probs(lambda, support_size)?, n)
}

fn upper_tail(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

fn lower_tail(z: f64) -> f64 {
    upper_tail(-z)
}

/// Integer-bin masses of `N(mu, sigma²)` over `lo..=hi`, tails absorbed at the ends.
pub fn gaussian_probs(mu: f64, sigma: f64, lo: i64, hi: i64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(Error::Argument(format!("invalid Gaussian ({mu}, {sigma})")));
    }
    if hi < lo {
        return Err(Error::Argument(format!("empty grid {lo}..={hi}")));
    }
    let z = |x: f64| (x - mu) / sigma;
    let cell = |a: f64, b: f64| {
        if z(a) >= 0.0 {
            upper_tail(z(a)) - upper_tail(z(b))
        } else {
            lower_tail(z(b)) - lower_tail(z(a))
        }
    };
    Ok((lo..=hi)
        .map(|i| {
            let (a, b) = (i as f64 - 0.5, i as f64 + 0.5);
            match (i == lo, i == hi) {
                (true, true) => 1.0,
                (true, false) => lower_tail(z(b)),
                (false, true) => upper_tail(z(a)),
                (false, false) => cell(a, b),
            }
        })
        .collect())
}

pub fn discretize_gaussian(mu: f64, sigma: f64, lo: i64, hi: i64, n: u32) -> Result<DyadicPmf> {
    DyadicPmf::round(&gaussian_probs(mu, sigma, lo, hi)?, n)
}

/// A list of environments sharing `(d, m, n)` plus a prior over them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiEnvSystem {
    envs: Vec<DiscreteDistribution>,
    env_prior: Vec<BigUint>,
}

impl MultiEnvSystem {
    /// `env_prior` holds numerators over `2^n` with `n` shared by the environments.
    pub fn new(envs: Vec<DiscreteDistribution>, env_prior: Vec<BigUint>) -> Result<Self> {
        let first = envs
            .first()
            .ok_or_else(|| Error::Distribution("a multi-env system needs an environment".into()))?;
        if envs
            .iter()
            .any(|e| (e.d, e.m, e.n) != (first.d, first.m, first.n))
        {
            return Err(Error::Distribution("environments differ in shape".into()));
        }
        if env_prior.len() != envs.len() {
            return Err(Error::Distribution("prior length differs from env count".into()));
        }
        let mass: BigUint = env_prior.iter().sum();
        if mass > BigUint::one() << first.n {
            return Err(Error::Distribution("env prior mass exceeds 1".into()));
        }
        Ok(Self { envs, env_prior })
    }

    /// Uniform prior, truncated to the shared precision.
    pub fn with_uniform_prior(envs: Vec<DiscreteDistribution>) -> Result<Self> {
        let n = envs.first().map(|e| e.n).unwrap_or(0);
        let count = BigUint::from(envs.len().max(1));
        let w = (BigUint::one() << n) / count;
        let prior = vec![w; envs.len()];
        Self::new(envs, prior)
    }

    pub fn env_count(&self) -> usize {
        self.envs.len()
    }

    pub fn envs(&self) -> &[DiscreteDistribution] {
        &self.envs
    }

    pub fn env_prior(&self) -> &[BigUint] {
        &self.env_prior
    }

    /// The system as one distribution on `X^d × [I]`, the environment being
    /// coordinate `d` (needs `I ≤ 2^m`); products are truncated to `n` bits.
    pub fn to_joint(&self) -> Result<DiscreteDistribution> {
        let e0 = &self.envs[0];
        let (d, m, n) = (e0.d, e0.m, e0.n);
        if self.envs.len() > 1usize << m {
            return Err(Error::Argument(format!(
                "{} environments do not fit in an {m}-bit coordinate",
                self.envs.len()
            )));
        }
        let bits = point_bits(d + 1, m)?;
        let mut table = vec![BigUint::zero(); 1 << bits];
        for (e, (env, w)) in self.envs.iter().zip(&self.env_prior).enumerate() {
            for (x, v) in env.table.iter().enumerate() {
                let p = ((x as u64) << m) | e as u64;
                table[p as usize] = (v * w) >> n;
            }
        }
        DiscreteDistribution::from_parts(d + 1, m, n, table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    fn dist(d: usize, m: usize, n: u32, nums: &[u64]) -> DiscreteDistribution {
        DiscreteDistribution::from_numerators(d, m, n, nums.iter().map(|&v| big(v)).collect())
            .unwrap()
    }

    #[test]
    fn table_construction() {
        let entries = ["00", "01", "10", "11"]
            .iter()
            .map(|p| (p.parse().unwrap(), big(1)));
        let u = make_table_distribution(entries, 2, 1, 2).unwrap();
        assert!(!u.is_semi_measure());
        assert_eq!(u.prob(3), 0.25);

        let src = dist(1, 2, 3, &[4, 2, 1, 1]);
        assert_eq!(src.prob(0), 0.5);
        assert_eq!(src.entropy(), 1.75);

        let bad = make_table_distribution([("0".parse().unwrap(), big(5))], 1, 1, 2);
        assert!(bad.is_err());
        let wrong_key = make_table_distribution([("000".parse().unwrap(), big(1))], 1, 1, 2);
        assert!(wrong_key.is_err());
        // mass 1/4 is below 1 - 2·2^{-2}
        assert!(DiscreteDistribution::from_numerators(1, 1, 2, vec![big(1), big(0)]).is_err());
    }

    #[test]
    fn projection_examples() {
        let u = DiscreteDistribution::uniform(1, 2).unwrap();
        let p = u.project_precision(1, 2).unwrap();
        assert_eq!(p.numerators(), &[big(2), big(2)]);

        // P(00)=3/8, P(01)=1/8, P(10)=1/4, P(11)=1/4
        let q = dist(1, 2, 3, &[3, 1, 2, 2]);
        let r = q.project_precision(1, 3).unwrap();
        // cylinder-sum oracle
        let oracle: Vec<u64> = (0..2u64)
            .map(|hi| (0..2u64).map(|lo| [3, 1, 2, 2][((hi << 1) | lo) as usize]).sum())
            .collect();
        assert_eq!(r.numerators(), &[big(oracle[0]), big(oracle[1])]);
        assert_eq!(r.prob(0), 0.5);

        assert_eq!(q.project_precision(2, 3).unwrap(), q);
        assert!(q.project_precision(3, 3).is_err());
        assert!(q.project_precision(1, 4).is_err());
    }

    #[test]
    fn marginal_and_conditional() {
        // product of (1/4, 3/4) and (1/2, 1/2)
        let p = dist(2, 1, 3, &[1, 1, 3, 3]);
        let m0 = p.marginal(&[0]).unwrap();
        assert_eq!(m0.numerators(), &[big(2), big(6)]);

        let u = DiscreteDistribution::uniform(2, 1).unwrap();
        let c = u.conditional(&[1], &[(0, 1)]).unwrap();
        assert_eq!(c.prob(0), 0.5);
        assert_eq!(c.prob(1), 0.5);

        // {00:1/2, 01:1/4, 10:1/8, 11:1/8}; exact-ratio oracle: (1/8)/(1/4) = 1/2
        let q = dist(2, 1, 3, &[4, 2, 1, 1]);
        let c = q.conditional(&[1], &[(0, 1)]).unwrap();
        let oracle = BigRational::new(1.into(), 8.into()) / BigRational::new(2.into(), 8.into());
        assert_eq!(c.value(0).to_rational(), oracle);
        assert_eq!(c.value(1).to_rational(), oracle);

        let z = dist(2, 1, 2, &[2, 2, 0, 0]);
        assert!(matches!(z.conditional(&[1], &[(0, 1)]), Err(Error::ZeroMass(_))));
    }

    #[test]
    fn conditional_truncates_down() {
        // P(1 | x0 = 0) = 1/3 → 0.0101… → 5/16 at 4 bits
        let p = dist(2, 1, 3, &[2, 1, 2, 3]);
        let c = p.conditional_at(&[1], &[(0, 0)], 4).unwrap();
        assert_eq!(c.numerators(), &[big(10), big(5)]);
        assert!(c.is_semi_measure());
    }

    #[test]
    fn independence_checks() {
        let p = dist(2, 1, 3, &[1, 1, 3, 3]);
        assert!(p.is_cond_independent(&[0], &[1], &[], 0.0));
        let corr = dist(2, 1, 2, &[2, 0, 0, 2]);
        assert!(!corr.is_cond_independent(&[0], &[1], &[], 0.01));
    }

    #[test]
    fn ci_survives_coarsening_of_x() {
        // X, Y ∈ B^2 independent given Z ∈ B^2, built as P(x|z)P(y|z)P(z) at 3·4 bits
        let pz = [3u64, 5, 4, 4];
        let px_z = [[1u64, 2, 3, 10], [4, 4, 4, 4], [8, 0, 0, 8], [2, 6, 6, 2]];
        let py_z = [[5u64, 5, 3, 3], [0, 16, 0, 0], [1, 1, 1, 13], [9, 3, 2, 2]];
        let mut t = vec![BigUint::zero(); 64];
        for x in 0..4u64 {
            for y in 0..4u64 {
                for z in 0..4u64 {
                    let v = px_z[z as usize][x as usize] * py_z[z as usize][y as usize] * pz[z as usize];
                    t[pack(&[x, y, z], 2) as usize] = big(v);
                }
            }
        }
        let p = DiscreteDistribution::from_parts(3, 2, 12, t).unwrap();
        assert!(p.is_cond_independent(&[0], &[1], &[2], 0.0));
        assert!(!p.is_cond_independent(&[0], &[1], &[], 1e-3));
        let coarse = p.coarsen_coordinate(0, 1).unwrap();
        assert!(coarse.is_cond_independent(&[0], &[1], &[2], 0.0));
        assert_eq!(coarse.mass(), p.mass());
    }

    #[test]
    fn factor_precision_arithmetic() {
        assert_eq!(required_factor_precision(4, 2), 12);
        assert_eq!(required_factor_precision(4, 1), 11);
        assert_eq!(required_factor_precision(3, 3), 11);
    }

    #[test]
    fn factor_precision_sufficiency_two_factors_n3() {
        // every pair of dyadic factors with ≤ 6-bit denominators
        let n = 3;
        let k = required_factor_precision(n, 2);
        assert_eq!(k, 10);
        let bound = BigRational::new(1.into(), BigInt::from(1u64 << (n + 1)));
        for a in 0u64..64 {
            for b in 0u64..64 {
                let ya = Dyadic::new(a, 6);
                let yb = Dyadic::new(b, 6);
                let exact = ya.mul(&yb).to_rational();
                let approx = ya.truncate(k).mul(&yb.truncate(k)).to_rational();
                assert!(exact.clone() - approx <= bound);
            }
        }
    }

    #[test]
    fn poisson_discretization() {
        let p = discretize_poisson(1e-12, 18, 32).unwrap();
        assert!((p.prob(0) - 1.0).abs() < 1e-9);
        assert_eq!(p.nums.iter().sum::<u64>(), 1 << 32);

        let p = discretize_poisson(2.0, 18, 32).unwrap();
        assert_eq!(p.nums.iter().sum::<u64>(), 1 << 32);
        // direct pmf oracle: e^{-2} 2^k / k!
        let mut fact = 1.0;
        for k in 0..17 {
            if k > 0 {
                fact *= k as f64;
            }
            let direct = (-2.0f64).exp() * 2f64.powi(k) / fact;
            assert!((p.prob(k as usize) - direct).abs() < 1e-8, "k = {k}");
        }
        assert!(discretize_poisson(0.0, 18, 32).is_err());
        assert!(discretize_poisson(-1.0, 18, 32).is_err());
        assert!(discretize_poisson(1.0, 1, 32).is_err());
    }

    #[test]
    fn poisson_tail_absorbed() {
        let p = poisson_probs(30.0, 18).unwrap();
        assert!(p[17] > 0.9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_discretization() {
        let g = discretize_gaussian(0.0, 1.0, -3, 3, 32).unwrap();
        assert_eq!(g.nums.iter().sum::<u64>(), 1 << 32);
        for i in 0..3 {
            assert!((g.prob(i) - g.prob(6 - i)).abs() < 1e-9);
        }
        let top = (0..7).max_by(|&a, &b| g.prob(a).total_cmp(&g.prob(b))).unwrap();
        assert_eq!(top, 3);
        assert!(discretize_gaussian(0.0, 0.0, -3, 3, 32).is_err());
    }

    #[test]
    fn multi_env_joint() {
        let a = dist(1, 1, 2, &[1, 3]);
        let b = dist(1, 1, 2, &[2, 2]);
        let sys = MultiEnvSystem::with_uniform_prior(vec![a, b]).unwrap();
        let joint = sys.to_joint().unwrap();
        assert_eq!(joint.d(), 2);
        // point (x=1, e=0) = 3/4 · 1/2 truncated to 2 bits
        assert_eq!(joint.numerator(pack(&[1, 0], 1)), &big(1));
        assert_eq!(joint.numerator(pack(&[0, 1], 1)), &big(1));
    }

    #[test]
    fn json_roundtrip() {
        let p = dist(1, 2, 3, &[4, 2, 1, 1]);
        let s = p.to_json().unwrap();
        assert_eq!(DiscreteDistribution::from_json(&s).unwrap(), p);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_dist(d: usize, m: usize, n: u32) -> impl Strategy<Value = DiscreteDistribution> {
            proptest::collection::vec(1u64..100, 1usize << (d * m)).prop_map(move |w| {
                let total: u64 = w.iter().sum();
                let nums = w.iter().map(|&x| BigUint::from((x << n) / total)).collect();
                DiscreteDistribution::from_parts(d, m, n, nums).unwrap()
            })
        }

        proptest! {
            #[test]
            fn projection_composes(p in arb_dist(2, 3, 16)) {
                let direct = p.project_precision(1, 10).unwrap();
                let staged = p.project_precision(2, 16).unwrap().project_precision(1, 10).unwrap();
                prop_assert_eq!(direct, staged);
            }

            #[test]
            fn projections_are_semi_measures(p in arb_dist(2, 2, 12), n2 in 1u32..12) {
                let q = p.project_precision(1, n2).unwrap();
                prop_assert!(q.mass_numerator() <= BigUint::one() << n2);
            }

            #[test]
            fn conditional_times_marginal_recovers_joint(p in arb_dist(2, 2, 8)) {
                let n = p.n();
                let k = required_factor_precision(n, 2);
                let bound = BigRational::new(1.into(), BigInt::from(1u64 << (n + 1)));
                let marg = p.marginal(&[0]).unwrap();
                for a in 0..4u64 {
                    if marg.numerator(a).is_zero() { continue; }
                    let cond = p.conditional_at(&[1], &[(0, a)], k).unwrap();
                    for b in 0..4u64 {
                        let rebuilt = cond.value(b).mul(&marg.value(a)).to_rational();
                        let exact = p.value(pack(&[a, b], 2)).to_rational();
                        prop_assert!((exact - rebuilt).abs() <= bound);
                    }
                }
            }
        }
    }
}
