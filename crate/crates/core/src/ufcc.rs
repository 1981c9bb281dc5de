//! Coding-length models for universal finite-codebook computers and the
//! two-part objective.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::dist::DiscreteDistribution;
use crate::error::{Error, Result};

/// `log2` of a big natural, accurate for values far beyond `f64` range.
pub fn log2_big(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    let shift = bits.saturating_sub(64);
    let top = (x >> shift).to_u64().unwrap_or(u64::MAX) as f64;
    top.log2() + shift as f64
}

pub fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, i| acc * i)
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    (0..k).fold(BigUint::one(), |acc, i| acc * (n - i) / (i + 1))
}

/// Stirling number of the second kind via `S(N,k) = k·S(N−1,k) + S(N−1,k−1)`.
pub fn stirling2(n: u64, k: u64) -> Result<BigUint> {
    if k > n {
        return Err(Error::Argument(format!("S({n}, {k}) needs k ≤ N")));
    }
    let k = k as usize;
    let mut row = vec![BigUint::zero(); k + 1];
    row[0] = BigUint::one();
    for i in 1..=n as usize {
        for j in (1..=k.min(i)).rev() {
            row[j] = &row[j] * BigUint::from(j) + &row[j - 1];
        }
        row[0] = BigUint::zero();
    }
    Ok(row[k].clone())
}

/// The reference machines whose model-length functions are implemented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag")]
pub enum UfccVariant {
    Unif,
    TabCbn,
    CompCbn { pool: u64, slots: u64 },
    TabInv,
}

impl UfccVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UfccVariant::CompCbn { pool, slots } if pool == 0 || slots == 0 => Err(
                Error::Argument("CompCBN needs a nonempty pool and at least one slot".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Model bits plus data bits, with a labeled ledger of the model part.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FcBreakdown {
    pub components: Vec<(String, f64)>,
    pub model_bits: f64,
    pub data_bits: f64,
    pub total: f64,
}

impl FcBreakdown {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: impl Into<String>, bits: f64) {
        self.components.push((label.into(), bits));
        self.model_bits += bits;
        self.total = self.model_bits + self.data_bits;
    }

    pub fn with_data(mut self, data_bits: f64) -> Self {
        self.data_bits = data_bits;
        self.total = self.model_bits + data_bits;
        self
    }

    pub fn component(&self, label: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, b)| b)
    }

    pub fn ledger(&self) -> BTreeMap<String, f64> {
        self.components.iter().cloned().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export<'a> {
            components: BTreeMap<String, f64>,
            model_bits: f64,
            data_bits: f64,
            total: f64,
            #[serde(skip)]
            _p: std::marker::PhantomData<&'a ()>,
        }
        Ok(serde_json::to_string_pretty(&Export {
            components: self.ledger(),
            model_bits: self.model_bits,
            data_bits: self.data_bits,
            total: self.total,
            _p: std::marker::PhantomData,
        })?)
    }
}

pub const SHIFTED_TABLES: &str = "shifted mechanism tables";
pub const MARGINAL_TABLE: &str = "marginal table";
pub const ENV_PRIOR: &str = "environment prior";
pub const FEATURES: &str = "feature mechanisms";
pub const FEATURIZATION: &str = "featurization";
pub const ASSIGNMENT: &str = "step-3 assignment";

fn pow2(e: u64) -> f64 {
    2f64.powf(e as f64)
}

/// Bits of one stored table entry at value precision `n`.
pub fn entry_bits(n: u32) -> u64 {
    2 * n as u64 + 4
}

/// Tabular CBN with one mechanism `P^i(X1 | X_{S_i}, e_i)` shifted per
/// environment, a shared `P(X2..Xd)` and an environment prior.
pub fn model_bits_tabcbn(m: u32, d: u32, n: u32, envs: u32) -> Result<FcBreakdown> {
    if m == 0 || d == 0 || n == 0 || envs == 0 {
        return Err(Error::Argument("TabCBN parameters must be positive".into()));
    }
    let e = entry_bits(n) as f64;
    let cells = pow2(m as u64 * (d as u64 - 1));
    let i = envs as f64;
    let mut b = FcBreakdown::new();
    b.push(SHIFTED_TABLES, e * cells * i);
    b.push(MARGINAL_TABLE, e * cells);
    b.push(ENV_PRIOR, e * i);
    b.push(FEATURES, (i + 3.0) * (d as f64 + 1.0));
    b.push(FEATURIZATION, 2.0 * (i + 2.0) * (2.0 * i + 3.0).log2());
    b.push(ASSIGNMENT, i * i.log2());
    Ok(b)
}

/// Sum of the three table entries of [`model_bits_tabcbn`].
pub fn tabcbn_table_bits(m: u32, d: u32, n: u32, envs: u32) -> Result<f64> {
    let b = model_bits_tabcbn(m, d, n, envs)?;
    Ok([SHIFTED_TABLES, MARGINAL_TABLE, ENV_PRIOR]
        .iter()
        .filter_map(|l| b.component(l))
        .sum())
}

/// Joint table per environment: `n·I·2^{md}`.
pub fn model_bits_density(m: u32, d: u32, n: u32, envs: u32) -> f64 {
    n as f64 * envs as f64 * pow2(m as u64 * d as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Name a pool member for every slot.
    Direct,
    /// Choose `k` pool members, partition the slots into `k` blocks, match them up.
    Sparse,
}

/// Mechanism-selection bits for `slots` slots drawn from a pool of `pool`.
pub fn strategy_bits(slots: u64, pool: u64, k: u64, strategy: Strategy) -> Result<f64> {
    if slots == 0 || pool == 0 {
        return Err(Error::Argument("pool and slot counts must be positive".into()));
    }
    match strategy {
        Strategy::Direct => Ok(slots as f64 * (pool as f64).log2()),
        Strategy::Sparse => {
            if k == 0 || k > slots.min(pool) {
                return Err(Error::Argument(format!(
                    "k = {k} must lie in 1..={}",
                    slots.min(pool)
                )));
            }
            Ok(log2_big(&binomial(pool, k))
                + log2_big(&stirling2(slots, k)?)
                + log2_big(&factorial(k))
                + (k as f64).log2())
        }
    }
}

/// `A(k)`: sparse minus direct selection bits.
pub fn strategy_gap(slots: u64, pool: u64, k: u64) -> Result<f64> {
    Ok(strategy_bits(slots, pool, k, Strategy::Sparse)?
        - strategy_bits(slots, pool, k, Strategy::Direct)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvVariant {
    /// `f1(x1 | orbit(x2))` plus `f2(x2)`.
    Invariant,
    /// `f1'(x1 | x2)` plus `f2(x2)`.
    Markov,
}

pub fn model_bits_tabinv(m: u32, n: u32, orbits: u64, variant: InvVariant) -> Result<f64> {
    let states = 1u64
        .checked_shl(m)
        .filter(|_| m < 63)
        .ok_or_else(|| Error::Overflow(format!("2^{m} states")))?;
    if orbits == 0 || orbits > states {
        return Err(Error::Argument(format!(
            "orbit count {orbits} must lie in 1..={states}"
        )));
    }
    let e = entry_bits(n) as f64;
    let s = states as f64;
    Ok(match variant {
        InvVariant::Invariant => e * (orbits as f64 * s + s),
        InvVariant::Markov => e * (s * s + s),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveForm {
    /// `data + 2·model + 1`.
    Experiment,
    /// `data + model`.
    General,
}

pub fn fc_objective(model_bits: f64, data_bits: f64, form: ObjectiveForm) -> f64 {
    match form {
        ObjectiveForm::Experiment => data_bits + 2.0 * model_bits + 1.0,
        ObjectiveForm::General => data_bits + model_bits,
    }
}

/// Bayes mixture code length and best two-part code length for `xs`.
pub fn bayes_vs_twopart(
    models: &[DiscreteDistribution],
    prior: &[f64],
    xs: &[u64],
) -> Result<(f64, f64)> {
    if models.is_empty() || models.len() != prior.len() {
        return Err(Error::Argument("need one prior weight per model".into()));
    }
    if prior.iter().any(|&w| !(w >= 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument("prior must be a probability vector".into()));
    }
    let terms: Vec<f64> = models
        .iter()
        .zip(prior)
        .map(|(p, &w)| {
            let data: f64 = xs
                .iter()
                .map(|&x| {
                    if (x as usize) < p.domain_size() {
                        p.value(x).neg_log2()
                    } else {
                        f64::INFINITY
                    }
                })
                .sum();
            data - w.log2()
        })
        .collect();
    let twopart = terms.iter().copied().fold(f64::INFINITY, f64::min);
    if !twopart.is_finite() {
        return Err(Error::ZeroMass("every model assigns zero to the data".into()));
    }
    // -log2 Σ 2^{-t}
    let sum: f64 = terms.iter().map(|&t| (twopart - t).exp2()).sum();
    let bayes = twopart - sum.log2();
    Ok((bayes, twopart))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partitions(n: usize) -> Vec<usize> {
        // block counts of all set partitions of [n] via restricted growth strings
        let mut counts = vec![0usize; n + 1];
        let mut a = vec![0usize; n];
        loop {
            let blocks = a.iter().max().map_or(0, |&x| x + 1);
            counts[if n == 0 { 0 } else { blocks }] += 1;
            let mut i = n;
            loop {
                if i <= 1 {
                    return counts;
                }
                i -= 1;
                let max_prev = a[..i].iter().copied().max().unwrap_or(0);
                if a[i] <= max_prev {
                    a[i] += 1;
                    for x in &mut a[i + 1..] {
                        *x = 0;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn stirling_matches_enumeration() {
        for n in 1..=10usize {
            let counts = partitions(n);
            for k in 1..=n {
                assert_eq!(stirling2(n as u64, k as u64).unwrap(), BigUint::from(counts[k]));
            }
        }
        assert_eq!(stirling2(3, 2).unwrap(), BigUint::from(3u32));
        assert_eq!(stirling2(10, 4).unwrap(), BigUint::from(34105u32));
        assert_eq!(stirling2(0, 0).unwrap(), BigUint::one());
        assert!(stirling2(2, 3).is_err());
    }

    #[test]
    fn tabcbn_ledger() {
        let b = model_bits_tabcbn(2, 2, 4, 2).unwrap();
        assert_eq!(tabcbn_table_bits(2, 2, 4, 2).unwrap(), 168.0);
        // explicit table sizes: 2 tables of 2^m rows × 2^m cols, one marginal, one prior
        assert_eq!(b.component(SHIFTED_TABLES), Some(12.0 * 4.0 * 2.0));
        assert_eq!(b.component(MARGINAL_TABLE), Some(12.0 * 4.0));
        assert_eq!(b.component(ENV_PRIOR), Some(24.0));
        assert_eq!(b.component(FEATURES), Some(15.0));
        assert_eq!(b.component(ASSIGNMENT), Some(2.0));
        let sum: f64 = b.components.iter().map(|c| c.1).sum();
        assert_eq!(b.model_bits, sum);
        assert_eq!(model_bits_tabcbn(2, 2, 4, 1).unwrap().component(ENV_PRIOR), Some(12.0));
        assert_eq!(tabcbn_table_bits(4, 3, 4, 2).unwrap(), 9240.0);
        assert_eq!(model_bits_density(4, 3, 4, 2), 32768.0);
        assert_eq!(model_bits_density(2, 2, 4, 2), 128.0);
        assert_eq!(model_bits_density(1, 1, 1, 1), 2.0);
    }

    #[test]
    fn strategies() {
        let s1 = strategy_bits(10, 18, 1, Strategy::Direct).unwrap();
        assert!((s1 - 10.0 * 18f64.log2()).abs() < 1e-12);
        assert!((s1 - 41.699).abs() < 1e-3);
        for n in [1, 5, 10, 100] {
            let s2 = strategy_bits(n, 18, 1, Strategy::Sparse).unwrap();
            assert!((s2 - 18f64.log2()).abs() < 1e-12);
        }
        let a1 = strategy_gap(10, 18, 1).unwrap();
        assert!((a1 + 37.53).abs() < 0.01, "{a1}");
        for k in 1..8 {
            assert!(strategy_gap(10, 18, k + 1).unwrap() > strategy_gap(10, 18, k).unwrap());
        }
        assert!(strategy_bits(10, 18, 0, Strategy::Sparse).is_err());
        assert!(strategy_bits(10, 18, 11, Strategy::Sparse).is_err());
    }

    #[test]
    fn sparse_bits_from_float_free_oracle() {
        // product of exact integers first, single log at the end
        let (n, m, k) = (10u64, 18u64, 4u64);
        let prod = binomial(m, k) * stirling2(n, k).unwrap() * factorial(k) * BigUint::from(k);
        let direct = log2_big(&prod);
        let s2 = strategy_bits(n, m, k, Strategy::Sparse).unwrap();
        assert!((direct - s2).abs() < 1e-9);
    }

    #[test]
    fn tabinv() {
        assert_eq!(model_bits_tabinv(3, 4, 2, InvVariant::Invariant).unwrap(), 12.0 * 24.0);
        assert_eq!(model_bits_tabinv(3, 4, 2, InvVariant::Markov).unwrap(), 12.0 * 72.0);
        assert_eq!(
            model_bits_tabinv(3, 4, 8, InvVariant::Invariant).unwrap(),
            model_bits_tabinv(3, 4, 8, InvVariant::Markov).unwrap()
        );
        assert!(model_bits_tabinv(3, 4, 9, InvVariant::Invariant).is_err());
    }

    #[test]
    fn objective_forms() {
        assert_eq!(fc_objective(0.0, 100.0, ObjectiveForm::Experiment), 101.0);
        assert_eq!(fc_objective(10.0, 0.0, ObjectiveForm::Experiment), 21.0);
        assert_eq!(fc_objective(10.0, 5.0, ObjectiveForm::General), 15.0);
    }

    #[test]
    fn bayes_example() {
        let p1 = DiscreteDistribution::from_parts(1, 1, 2, vec![2u32.into(), 2u32.into()]).unwrap();
        let p2 = DiscreteDistribution::from_parts(1, 1, 2, vec![1u32.into(), 3u32.into()]).unwrap();
        let (bayes, two) = bayes_vs_twopart(&[p1.clone(), p2], &[0.5, 0.5], &[0]).unwrap();
        assert!((two - 2.0).abs() < 1e-12);
        assert!((bayes + (3.0f64 / 8.0).log2()).abs() < 1e-12);
        let (b, t) = bayes_vs_twopart(&[p1], &[1.0], &[0, 1]).unwrap();
        assert_eq!(b, t);
    }

    #[test]
    fn ledger_json() {
        let b = model_bits_tabcbn(2, 2, 4, 2).unwrap().with_data(10.0);
        let v: serde_json::Value = serde_json::from_str(&b.to_json().unwrap()).unwrap();
        assert_eq!(v["components"][MARGINAL_TABLE], 48.0);
        assert_eq!(v["data_bits"], 10.0);
    }

    #[test]
    fn log2_of_huge() {
        let x = BigUint::one() << 5000u32;
        assert_eq!(log2_big(&x), 5000.0);
        assert_eq!(log2_big(&BigUint::from(8u32)), 3.0);
    }
}
