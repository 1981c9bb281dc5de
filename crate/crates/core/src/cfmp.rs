//! Conditional feature-mechanism programs.
//!
//! A program holds raw probabilistic mechanisms, feature maps on `X^d`, a
//! featurization binding them together, and a selection saying which
//! featurized mechanisms multiply at each point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::dist::{
    ceil_log2, coord, discretize_gaussian, discretize_poisson, sub_point, DiscreteDistribution,
    Dyadic, MAX_POINT_BITS,
};
use crate::error::{Error, Result};

/// Largest latent grid summed over during evaluation.
pub const MAX_LATENT_POINTS: u64 = 1 << 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MechanismBody {
    /// Numerators over `2^n`, indexed by `(cond << v) | value`.
    Table {
        #[serde(with = "crate::bigjson::vec")]
        nums: Vec<BigUint>,
    },
    /// Poisson on `0..support`, upper tail in the last cell; ignores the condition.
    Poisson { lambda: f64, support: u64 },
    /// Binned `N(mean + slope·cond, sigma²)` on `0..support`, tails at the ends.
    Gaussian {
        mean: f64,
        slope: f64,
        sigma: f64,
        support: u64,
    },
    /// Uniform on `B^v`.
    Uniform,
}

/// A map `B^v × B^c → 2^{-n}ℤ`; each value slice is a (semi-)distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbMechanism {
    pub name: String,
    pub v: u32,
    pub c: u32,
    pub n: u32,
    pub body: MechanismBody,
}

impl ProbMechanism {
    pub fn table(name: impl Into<String>, v: u32, c: u32, n: u32, nums: Vec<BigUint>) -> Self {
        Self {
            name: name.into(),
            v,
            c,
            n,
            body: MechanismBody::Table { nums },
        }
    }

    pub fn parametric(name: impl Into<String>, v: u32, c: u32, n: u32, body: MechanismBody) -> Self {
        Self {
            name: name.into(),
            v,
            c,
            n,
            body,
        }
    }

    /// The full table, validated.
    pub fn expand(&self) -> Result<Vec<BigUint>> {
        let width = self.v as usize + self.c as usize;
        if width > MAX_POINT_BITS {
            return Err(Error::Model(format!(
                "mechanism {} spans {width} bits",
                self.name
            )));
        }
        let rows = 1usize << self.c;
        let cols = 1usize << self.v;
        let fit = |support: u64| {
            if support < 2 || support > cols as u64 {
                Err(Error::Model(format!(
                    "support {support} does not fit {} value bits of {}",
                    self.v, self.name
                )))
            } else {
                Ok(support as usize)
            }
        };
        let pad = |pmf: crate::dist::DyadicPmf| {
            let mut row: Vec<BigUint> = pmf.nums.into_iter().map(BigUint::from).collect();
            row.resize(cols, BigUint::zero());
            row
        };
        let table = match &self.body {
            MechanismBody::Table { nums } => nums.clone(),
            MechanismBody::Poisson { lambda, support } => {
                let row = pad(discretize_poisson(*lambda, fit(*support)?, self.n)?);
                (0..rows).flat_map(|_| row.iter().cloned()).collect()
            }
            MechanismBody::Gaussian {
                mean,
                slope,
                sigma,
                support,
            } => {
                let hi = fit(*support)? as i64 - 1;
                let mut t = Vec::with_capacity(rows * cols);
                for cnd in 0..rows {
                    let mu = mean + slope * cnd as f64;
                    t.extend(pad(discretize_gaussian(mu, *sigma, 0, hi, self.n)?));
                }
                t
            }
            MechanismBody::Uniform => {
                if self.n < self.v {
                    return Err(Error::Model(format!(
                        "uniform mechanism {} needs n ≥ v",
                        self.name
                    )));
                }
                vec![BigUint::one() << (self.n - self.v); rows * cols]
            }
        };
        if table.len() != rows * cols {
            return Err(Error::Model(format!(
                "mechanism {} has {} entries, expected {}",
                self.name,
                table.len(),
                rows * cols
            )));
        }
        let one = BigUint::one() << self.n;
        for (r, slice) in table.chunks(cols).enumerate() {
            if slice.iter().sum::<BigUint>() > one {
                return Err(Error::Model(format!(
                    "mechanism {} slice {r} has mass above 1",
                    self.name
                )));
            }
        }
        Ok(table)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Concatenation of the listed coordinates.
    Projection { coords: Vec<usize> },
    /// Orbit index of the whole point under a partition of `X^d`.
    Quotient { partition: Vec<Vec<u64>> },
    /// Orbit index of the projection onto `coords`.
    Composition {
        coords: Vec<usize>,
        partition: Vec<Vec<u64>>,
    },
}

/// A total map from `X^d` (observed or latent) to bit strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMechanism {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureMechanism {
    pub fn projection(name: impl Into<String>, coords: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Projection { coords },
        }
    }

    pub fn quotient(name: impl Into<String>, partition: Vec<Vec<u64>>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Quotient { partition },
        }
    }

    pub fn composition(name: impl Into<String>, coords: Vec<usize>, partition: Vec<Vec<u64>>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Composition { coords, partition },
        }
    }

    fn input_coords(&self, d: usize) -> Vec<usize> {
        match &self.kind {
            FeatureKind::Projection { coords } | FeatureKind::Composition { coords, .. } => {
                coords.clone()
            }
            FeatureKind::Quotient { .. } => (0..d).collect(),
        }
    }

    fn partition(&self) -> Option<&[Vec<u64>]> {
        match &self.kind {
            FeatureKind::Projection { .. } => None,
            FeatureKind::Quotient { partition } | FeatureKind::Composition { partition, .. } => {
                Some(partition)
            }
        }
    }

    pub fn output_bits(&self, d: usize, m: usize) -> u32 {
        match self.partition() {
            None => (self.input_coords(d).len() * m) as u32,
            Some(p) => ceil_log2(p.len() as u64),
        }
    }

    /// Checks the map is total on `X^d` and builds its orbit lookup.
    fn compile(&self, d: usize, m: usize) -> Result<CompiledFeature> {
        let coords = self.input_coords(d);
        let mut seen = vec![false; d];
        for &c in &coords {
            if c >= d || std::mem::replace(&mut seen[c], true) {
                return Err(Error::Model(format!(
                    "feature {} uses invalid coordinates {coords:?} on d = {d}",
                    self.name
                )));
            }
        }
        let in_bits = coords.len() * m;
        if in_bits > MAX_POINT_BITS {
            return Err(Error::Model(format!("feature {} is too wide", self.name)));
        }
        let orbit = match self.partition() {
            None => None,
            Some(blocks) => {
                let size = 1usize << in_bits;
                let mut lookup = vec![u32::MAX; size];
                for (b, block) in blocks.iter().enumerate() {
                    if block.is_empty() {
                        return Err(Error::Model(format!("feature {} has an empty orbit", self.name)));
                    }
                    for &x in block {
                        let slot = lookup.get_mut(x as usize).ok_or_else(|| {
                            Error::Model(format!("feature {}: {x} is outside the domain", self.name))
                        })?;
                        if *slot != u32::MAX {
                            return Err(Error::Model(format!(
                                "feature {}: {x} lies in two orbits",
                                self.name
                            )));
                        }
                        *slot = b as u32;
                    }
                }
                if lookup.contains(&u32::MAX) {
                    return Err(Error::Model(format!(
                        "feature {}: the orbits do not cover the domain",
                        self.name
                    )));
                }
                Some(lookup)
            }
        };
        Ok(CompiledFeature { coords, orbit })
    }
}

#[derive(Clone, Debug)]
struct CompiledFeature {
    coords: Vec<usize>,
    orbit: Option<Vec<u32>>,
}

impl CompiledFeature {
    fn apply(&self, x: u64, d: usize, m: usize) -> u64 {
        let sub = sub_point(x, &self.coords, d, m);
        match &self.orbit {
            None => sub,
            Some(lookup) => u64::from(lookup[sub as usize]),
        }
    }
}

/// Which point a feature reads: the observed input or the latent one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tape {
    #[default]
    Observed,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureRef {
    pub feature: usize,
    #[serde(default)]
    pub tape: Tape,
}

impl FeatureRef {
    pub fn observed(feature: usize) -> Self {
        Self {
            feature,
            tape: Tape::Observed,
        }
    }

    pub fn latent(feature: usize) -> Self {
        Self {
            feature,
            tape: Tape::Latent,
        }
    }
}

/// `mech(value_feature(x) | cond_feature(x))`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizedMechanism {
    pub mech: usize,
    pub value: FeatureRef,
    #[serde(default)]
    pub cond: Option<FeatureRef>,
}

impl FeaturizedMechanism {
    pub fn new(mech: usize, value: FeatureRef, cond: Option<FeatureRef>) -> Self {
        Self { mech, value, cond }
    }

    pub fn is_hidden(&self) -> bool {
        self.value.tape == Tape::Latent || self.cond.is_some_and(|c| c.tape == Tape::Latent)
    }
}

/// Which featurized mechanisms multiply at a point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Global { list: Vec<usize> },
    PerPoint { map: BTreeMap<u64, Vec<usize>> },
    /// `lists[v]` applies where coordinate `coord` equals `v`.
    ByContext { coord: usize, lists: Vec<Vec<usize>> },
}

/// Serialized description of a program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfmpSpec {
    pub d: usize,
    pub m: usize,
    #[serde(default)]
    pub latent_dims: usize,
    #[serde(default)]
    pub coord_names: Vec<String>,
    pub mechanisms: Vec<ProbMechanism>,
    pub features: Vec<FeatureMechanism>,
    pub featurized: Vec<FeaturizedMechanism>,
    pub selection: Selection,
}

/// A validated program with expanded tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "CfmpSpec", into = "CfmpSpec")]
pub struct Cfmp {
    spec: CfmpSpec,
    tables: Vec<Vec<BigUint>>,
    compiled: Vec<Option<CompiledFeature>>,
    compiled_latent: Vec<Option<CompiledFeature>>,
}

impl PartialEq for Cfmp {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl From<Cfmp> for CfmpSpec {
    fn from(c: Cfmp) -> Self {
        c.spec
    }
}

impl TryFrom<CfmpSpec> for Cfmp {
    type Error = Error;

    fn try_from(spec: CfmpSpec) -> Result<Self> {
        Cfmp::new(spec)
    }
}

impl Cfmp {
    pub fn new(mut spec: CfmpSpec) -> Result<Self> {
        let (d, m) = (spec.d, spec.m);
        if d == 0 || m == 0 || d * m > MAX_POINT_BITS {
            return Err(Error::Model(format!("unsupported shape d = {d}, m = {m}")));
        }
        let latent_bits = spec.latent_dims * m;
        if latent_bits > 12 || (1u64 << latent_bits) > MAX_LATENT_POINTS {
            return Err(Error::Model(format!(
                "latent grid of 2^{latent_bits} points exceeds 2^12"
            )));
        }
        if spec.coord_names.is_empty() {
            spec.coord_names = (1..=d).map(|i| format!("X{i}")).collect();
        }
        if spec.coord_names.len() != d {
            return Err(Error::Model("one name per coordinate is required".into()));
        }
        let tables = spec
            .mechanisms
            .iter()
            .map(ProbMechanism::expand)
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<FeatureRef> = spec
            .featurized
            .iter()
            .flat_map(|fm| std::iter::once(fm.value).chain(fm.cond))
            .collect();
        let mut compiled = Vec::with_capacity(spec.features.len());
        let mut compiled_latent = Vec::with_capacity(spec.features.len());
        for (i, f) in spec.features.iter().enumerate() {
            let used = |tape| refs.iter().any(|r| r.feature == i && r.tape == tape);
            let latent = used(Tape::Latent);
            compiled_latent.push(if latent {
                Some(f.compile(spec.latent_dims, m)?)
            } else {
                None
            });
            compiled.push(if used(Tape::Observed) || !latent {
                Some(f.compile(d, m)?)
            } else {
                None
            });
        }
        for (i, fm) in spec.featurized.iter().enumerate() {
            let mech = spec
                .mechanisms
                .get(fm.mech)
                .ok_or_else(|| Error::Model(format!("featurized {i} names a missing mechanism")))?;
            let check = |r: &FeatureRef, want: u32, what: &str| -> Result<()> {
                let f = spec.features.get(r.feature).ok_or_else(|| {
                    Error::Model(format!("featurized {i} names a missing feature"))
                })?;
                let dims = match r.tape {
                    Tape::Observed => d,
                    Tape::Latent => spec.latent_dims,
                };
                let got = f.output_bits(dims, m);
                if got != want {
                    return Err(Error::Model(format!(
                        "featurized {i}: {what} feature {} gives {got} bits, mechanism {} expects {want}",
                        f.name, mech.name
                    )));
                }
                Ok(())
            };
            check(&fm.value, mech.v, "value")?;
            match &fm.cond {
                Some(c) => check(c, mech.c, "conditional")?,
                None if mech.c != 0 => {
                    return Err(Error::Model(format!(
                        "featurized {i}: mechanism {} needs a conditional feature",
                        mech.name
                    )))
                }
                None => {}
            }
        }
        let lists: Vec<&Vec<usize>> = match &spec.selection {
            Selection::Global { list } => vec![list],
            Selection::PerPoint { map } => {
                if let Some(&p) = map.keys().find(|&&p| p >> (d * m) != 0) {
                    return Err(Error::Model(format!("selection names point {p} outside X^d")));
                }
                map.values().collect()
            }
            Selection::ByContext { coord, lists } => {
                if *coord >= d || lists.len() > 1 << m {
                    return Err(Error::Model("context selection does not fit the shape".into()));
                }
                lists.iter().collect()
            }
        };
        if lists
            .iter()
            .flat_map(|l| l.iter())
            .any(|&j| j >= spec.featurized.len())
        {
            return Err(Error::Model("selection names a missing featurized mechanism".into()));
        }
        Ok(Self {
            spec,
            tables,
            compiled,
            compiled_latent,
        })
    }

    pub fn spec(&self) -> &CfmpSpec {
        &self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn mechanism_table(&self, i: usize) -> &[BigUint] {
        &self.tables[i]
    }

    pub fn feature_name(&self, r: FeatureRef) -> String {
        let name = &self.spec.features[r.feature].name;
        match r.tape {
            Tape::Observed => name.clone(),
            Tape::Latent => format!("{name}'"),
        }
    }

    /// Featurized mechanisms selected at `x`.
    pub fn selected(&self, x: u64) -> Result<&[usize]> {
        let (d, m) = (self.spec.d, self.spec.m);
        let missing = || Error::Model(format!("no selection at point {x}"));
        match &self.spec.selection {
            Selection::Global { list } => Ok(list),
            Selection::PerPoint { map } => map.get(&x).map(Vec::as_slice).ok_or_else(missing),
            Selection::ByContext { coord: c, lists } => lists
                .get(coord(x, *c, d, m) as usize)
                .map(Vec::as_slice)
                .ok_or_else(missing),
        }
    }

    fn feature_value(&self, r: FeatureRef, x: u64, latent: u64) -> u64 {
        let m = self.spec.m;
        let (table, point, dims) = match r.tape {
            Tape::Observed => (&self.compiled, x, self.spec.d),
            Tape::Latent => (&self.compiled_latent, latent, self.spec.latent_dims),
        };
        table[r.feature]
            .as_ref()
            .expect("compiled for every tape it is used on")
            .apply(point, dims, m)
    }

    fn factor(&self, j: usize, x: u64, latent: u64) -> Dyadic {
        let fm = &self.spec.featurized[j];
        let mech = &self.spec.mechanisms[fm.mech];
        let val = self.feature_value(fm.value, x, latent);
        let cnd = fm.cond.map_or(0, |c| self.feature_value(c, x, latent));
        let idx = ((cnd << mech.v) | val) as usize;
        Dyadic::new(self.tables[fm.mech][idx].clone(), mech.n)
    }

    /// Exact probability at `x`: the product of the selected factors, summed
    /// over the latent grid when a hidden mechanism is selected.
    pub fn evaluate(&self, x: u64) -> Result<Dyadic> {
        if x >> (self.spec.d * self.spec.m) != 0 {
            return Err(Error::Argument(format!("point {x} is outside X^d")));
        }
        let list = self.selected(x)?;
        let hidden = list.iter().any(|&j| self.spec.featurized[j].is_hidden());
        let product = |latent: u64| {
            list.iter()
                .fold(Dyadic::one(), |acc, &j| acc.mul(&self.factor(j, x, latent)))
        };
        if !hidden {
            return Ok(product(0));
        }
        let grid = 1u64 << (self.spec.latent_dims * self.spec.m);
        Ok((0..grid).fold(Dyadic::zero(), |acc, z| acc.add(&product(z))))
    }

    /// `evaluate` truncated to `n_out` bits.
    pub fn evaluate_at(&self, x: u64, n_out: u32) -> Result<Dyadic> {
        Ok(self.evaluate(x)?.truncate(n_out))
    }

    /// Bit width that holds every selected product exactly.
    pub fn exact_width(&self) -> u32 {
        let widths = |list: &[usize]| -> u32 {
            list.iter()
                .map(|&j| self.spec.mechanisms[self.spec.featurized[j].mech].n)
                .sum()
        };
        match &self.spec.selection {
            Selection::Global { list } => widths(list),
            Selection::PerPoint { map } => map.values().map(|l| widths(l)).max().unwrap_or(0),
            Selection::ByContext { lists, .. } => lists.iter().map(|l| widths(l)).max().unwrap_or(0),
        }
    }

    /// Table of `evaluate` over `X^d`, truncated to `n_out` bits.
    pub fn induced_distribution(&self, n_out: u32) -> Result<DiscreteDistribution> {
        let size = 1u64 << (self.spec.d * self.spec.m);
        let table = (0..size)
            .map(|x| Ok(self.evaluate(x)?.numerator_at(n_out)))
            .collect::<Result<Vec<_>>>()?;
        DiscreteDistribution::from_parts(self.spec.d, self.spec.m, n_out, table)
    }

    fn local_pairs(&self, list: &[usize]) -> BTreeSet<(FeatureRef, FeatureRef)> {
        let edges: BTreeSet<(FeatureRef, FeatureRef)> = list
            .iter()
            .filter_map(|&j| {
                let fm = &self.spec.featurized[j];
                fm.cond.map(|c| (c, fm.value))
            })
            .collect();
        edges
            .iter()
            .filter(|(c, v)| !edges.contains(&(*v, *c)))
            .copied()
            .collect()
    }

    /// Cause/effect pairs read off the selection.
    pub fn causal_statements(&self) -> CausalStatements {
        let (d, m) = (self.spec.d, self.spec.m);
        let mut out = CausalStatements::default();
        let mut per_locus: Vec<(Locus, BTreeSet<(FeatureRef, FeatureRef)>)> = Vec::new();
        let covers_all;
        match &self.spec.selection {
            Selection::Global { list } => {
                per_locus.push((Locus::Everywhere, self.local_pairs(list)));
                covers_all = true;
            }
            Selection::PerPoint { map } => {
                for (&p, list) in map {
                    per_locus.push((Locus::Point(p), self.local_pairs(list)));
                }
                covers_all = map.len() as u64 == 1u64 << (d * m);
            }
            Selection::ByContext { coord, lists } => {
                for (v, list) in lists.iter().enumerate() {
                    let locus = Locus::Context {
                        coord: *coord,
                        value: v as u64,
                    };
                    per_locus.push((locus, self.local_pairs(list)));
                }
                covers_all = lists.len() == 1 << m;
            }
        }
        let all: BTreeSet<(FeatureRef, FeatureRef)> =
            per_locus.iter().flat_map(|(_, s)| s.iter().copied()).collect();
        for pair in all {
            let holds: Vec<Locus> = per_locus
                .iter()
                .filter(|(_, s)| s.contains(&pair))
                .map(|(l, _)| *l)
                .collect();
            let statement = CausalStatement {
                cause: self.feature_name(pair.0),
                effect: self.feature_name(pair.1),
                latent_cause: pair.0.tape == Tape::Latent,
            };
            if covers_all && holds.len() == per_locus.len() {
                out.global.insert(statement);
            } else {
                out.local.insert(statement, holds);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CausalStatement {
    pub cause: String,
    pub effect: String,
    pub latent_cause: bool,
}

impl CausalStatement {
    pub fn new(cause: &str, effect: &str) -> Self {
        Self {
            cause: cause.into(),
            effect: effect.into(),
            latent_cause: false,
        }
    }
}

impl fmt::Display for CausalStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.cause, self.effect)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Locus {
    Everywhere,
    Point(u64),
    Context { coord: usize, value: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalStatements {
    pub global: BTreeSet<CausalStatement>,
    /// Statements that hold somewhere but not everywhere, with their loci.
    pub local: BTreeMap<CausalStatement, Vec<Locus>>,
}

impl CausalStatements {
    pub fn is_empty(&self) -> bool {
        self.global.is_empty() && self.local.is_empty()
    }

    pub fn has_global(&self, cause: &str, effect: &str) -> bool {
        self.global.contains(&CausalStatement::new(cause, effect))
    }
}

/// One factor `P(X_A | X_B)` of a causal Bayesian network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbnFactor {
    pub value_coords: Vec<usize>,
    #[serde(default)]
    pub cond_coords: Vec<usize>,
    pub n: u32,
    /// Numerators indexed by `(cond sub-point << |A|·m) | value sub-point`.
    #[serde(with = "crate::bigjson::vec")]
    pub nums: Vec<BigUint>,
}

/// Chain of factors whose value sets partition `[d]`, each conditioned only
/// on earlier value sets.
pub fn build_cbn(d: usize, m: usize, names: &[&str], factors: Vec<CbnFactor>) -> Result<Cfmp> {
    let mut covered = vec![false; d];
    for (i, f) in factors.iter().enumerate() {
        if f.value_coords.is_empty() {
            return Err(Error::Model(format!("factor {i} has no value coordinates")));
        }
        for &c in &f.cond_coords {
            if c >= d || !covered[c] {
                return Err(Error::Model(format!(
                    "factor {i} conditions on coordinate {c} before it is generated"
                )));
            }
        }
        for &c in &f.value_coords {
            if c >= d || std::mem::replace(&mut covered[c], true) {
                return Err(Error::Model(format!(
                    "factor {i} repeats or misplaces coordinate {c}"
                )));
            }
        }
    }
    if covered.contains(&false) {
        return Err(Error::Model("value sets do not cover every coordinate".into()));
    }
    let coord_names: Vec<String> = if names.is_empty() {
        (1..=d).map(|i| format!("X{i}")).collect()
    } else {
        names.iter().map(|s| s.to_string()).collect()
    };
    let mut features: Vec<FeatureMechanism> = Vec::new();
    let mut feature_for = |coords: &[usize]| -> usize {
        let kind = FeatureKind::Projection {
            coords: coords.to_vec(),
        };
        if let Some(i) = features.iter().position(|f| f.kind == kind) {
            return i;
        }
        let name = coords
            .iter()
            .map(|&c| coord_names.get(c).cloned().unwrap_or_else(|| format!("X{}", c + 1)))
            .collect::<Vec<_>>()
            .join(",");
        features.push(FeatureMechanism { name, kind });
        features.len() - 1
    };
    let mut mechanisms = Vec::new();
    let mut featurized = Vec::new();
    for (i, f) in factors.into_iter().enumerate() {
        let value = feature_for(&f.value_coords);
        let cond = (!f.cond_coords.is_empty()).then(|| feature_for(&f.cond_coords));
        mechanisms.push(ProbMechanism::table(
            format!("f{}", i + 1),
            (f.value_coords.len() * m) as u32,
            (f.cond_coords.len() * m) as u32,
            f.n,
            f.nums,
        ));
        featurized.push(FeaturizedMechanism::new(
            i,
            FeatureRef::observed(value),
            cond.map(FeatureRef::observed),
        ));
    }
    let list = (0..featurized.len()).collect();
    Cfmp::new(CfmpSpec {
        d,
        m,
        latent_dims: 0,
        coord_names,
        mechanisms,
        features,
        featurized,
        selection: Selection::Global { list },
    })
}

/// `P(x1, x2) = f1(x1 | φ(x2))·f2(x2)` on `X^2`.
pub fn build_invariant_model(
    m: usize,
    quotient: FeatureMechanism,
    f1: ProbMechanism,
    f2: ProbMechanism,
) -> Result<Cfmp> {
    let partition = match quotient.kind {
        FeatureKind::Quotient { partition } => partition,
        _ => return Err(Error::Model("the invariant model needs a quotient of X".into())),
    };
    let orbit_bits = ceil_log2(partition.len() as u64);
    if f1.c != orbit_bits {
        return Err(Error::Model(format!(
            "f1 conditions on {} bits, the quotient has {orbit_bits}",
            f1.c
        )));
    }
    let features = vec![
        FeatureMechanism::projection("X1", vec![0]),
        FeatureMechanism::projection("X2", vec![1]),
        FeatureMechanism::composition(quotient.name, vec![1], partition),
    ];
    Cfmp::new(CfmpSpec {
        d: 2,
        m,
        latent_dims: 0,
        coord_names: vec!["X1".into(), "X2".into()],
        mechanisms: vec![f1, f2],
        features,
        featurized: vec![
            FeaturizedMechanism::new(0, FeatureRef::observed(0), Some(FeatureRef::observed(2))),
            FeaturizedMechanism::new(1, FeatureRef::observed(1), None),
        ],
        selection: Selection::Global { list: vec![0, 1] },
    })
}

/// A single joint table on `X^d`.
pub fn density_estimator(p: &DiscreteDistribution) -> Result<Cfmp> {
    let (d, m) = (p.d(), p.m());
    Cfmp::new(CfmpSpec {
        d,
        m,
        latent_dims: 0,
        coord_names: Vec::new(),
        mechanisms: vec![ProbMechanism::table(
            "joint",
            (d * m) as u32,
            0,
            p.n(),
            p.numerators().to_vec(),
        )],
        features: vec![FeatureMechanism::projection("X", (0..d).collect())],
        featurized: vec![FeaturizedMechanism::new(0, FeatureRef::observed(0), None)],
        selection: Selection::Global { list: vec![0] },
    })
}

/// Conditional tables of `p` along the chain `order` (one coordinate per
/// factor), each truncated to `bits`.
pub fn chain_factors(p: &DiscreteDistribution, order: &[usize], bits: u32) -> Result<Vec<CbnFactor>> {
    let m = p.m();
    let mut out = Vec::with_capacity(order.len());
    for (i, &c) in order.iter().enumerate() {
        let parents: Vec<usize> = order[..i].to_vec();
        let rows = 1u64 << (parents.len() * m);
        let cols = 1usize << m;
        let marg_parents = p.marginal(&parents)?;
        let mut nums = Vec::with_capacity(rows as usize * cols);
        for pa in 0..rows {
            if parents.is_empty() || !marg_parents.numerator(pa).is_zero() {
                let given: Vec<(usize, u64)> = parents
                    .iter()
                    .enumerate()
                    .map(|(k, &q)| (q, coord(pa, k, parents.len(), m)))
                    .collect();
                let cond = p.conditional_at(&[c], &given, bits)?;
                nums.extend(cond.numerators().iter().cloned());
            } else {
                nums.extend(std::iter::repeat_n(BigUint::zero(), cols));
            }
        }
        out.push(CbnFactor {
            value_coords: vec![c],
            cond_coords: parents,
            n: bits,
            nums,
        });
    }
    Ok(out)
}
