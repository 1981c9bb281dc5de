//! The `.fcc` two-part-code file: a model from a fixed registry followed by
//! the Huffman-coded data under that model.
//!
//! Layout: `"FCC1"`, `u8` version, `u16` m, d, n, I (little-endian), then a
//! bit stream holding the self-delimited model index, a `u32` payload length,
//! the payload, a `u64` stream length, the stream and zero padding.

use std::io::Write as _;
use std::path::Path;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::bitcode::{self_delimit_u64, BitReader, BitString};
use crate::coding::{huffman_from_weights, Codebook};
use crate::dist::{ceil_log2, coord, sub_point, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::ufcc::{binomial, factorial, log2_big, stirling2, FcBreakdown};

pub const MAGIC: &[u8; 4] = b"FCC1";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 13;
/// Largest `d·m` accepted by the decoder.
pub const MAX_DECODE_POINT_BITS: usize = 20;
/// Largest joint domain `I·2^{md}` accepted by the decoder.
pub const MAX_JOINT_SIZE: u64 = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: u8,
    pub m: u16,
    pub d: u16,
    pub n: u16,
    pub envs: u16,
}

impl Header {
    fn point_bits(&self) -> usize {
        self.d as usize * self.m as usize
    }

    fn joint_size(&self) -> u64 {
        (self.envs as u64) << self.point_bits()
    }

    fn check(&self) -> Result<()> {
        if self.version != VERSION {
            return Err(Error::Decode(format!("unsupported version {}", self.version)));
        }
        if self.m == 0 || self.d == 0 || self.envs == 0 {
            return Err(Error::Decode("header has a zero dimension".into()));
        }
        if self.point_bits() > MAX_DECODE_POINT_BITS || self.joint_size() > MAX_JOINT_SIZE {
            return Err(Error::Decode(format!(
                "domain of {} environments on 2^{} points is too large",
                self.envs,
                self.point_bits()
            )));
        }
        Ok(())
    }

    fn to_bytes(self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[..4].copy_from_slice(MAGIC);
        out[4] = self.version;
        for (i, v) in [self.m, self.d, self.n, self.envs].into_iter().enumerate() {
            out[5 + 2 * i..7 + 2 * i].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_BYTES {
            return Err(Error::Decode("file is shorter than the header".into()));
        }
        if &b[..4] != MAGIC {
            return Err(Error::Decode("bad magic".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let h = Self {
            version: b[4],
            m: u16_at(5),
            d: u16_at(7),
            n: u16_at(9),
            envs: u16_at(11),
        };
        h.check()?;
        Ok(h)
    }
}

/// Registry index of each model kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    RawTable = 0,
    TabularCbn = 1,
    Invariant = 2,
    CompCbn = 3,
}

impl ModelKind {
    pub fn index(self) -> u64 {
        self as u64
    }

    fn from_index(i: u64) -> Result<Self> {
        Ok(match i {
            0 => Self::RawTable,
            1 => Self::TabularCbn,
            2 => Self::Invariant,
            3 => Self::CompCbn,
            _ => return Err(Error::Decode(format!("model index {i} is not registered"))),
        })
    }
}

/// Joint table on `[I] × X^d` with numerators over `2^width`, indexed `e·2^{md} + x`.
/// Entries are `width`-bit values, so no single cell reaches 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTable {
    pub width: u32,
    #[serde(with = "crate::bigjson::vec")]
    pub nums: Vec<BigUint>,
}

impl RawTable {
    pub fn from_distribution(p: &DiscreteDistribution) -> Self {
        Self {
            width: p.n(),
            nums: p.numerators().to_vec(),
        }
    }
}

/// A shifted mechanism `P^e(X1 | X_{S_e})`, indexed `(parents << m) | x1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftedMechanism {
    /// Parent coordinates, ascending, drawn from `1..d`.
    pub parents: Vec<usize>,
    #[serde(with = "crate::bigjson::vec")]
    pub table: Vec<BigUint>,
}

/// `P(x, e) = P^e(x1 | x_{S_e})·P(x2..xd)·P(e)`, every entry `2n+4` bits wide.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftedCbn {
    pub mechanisms: Vec<ShiftedMechanism>,
    #[serde(with = "crate::bigjson::vec")]
    pub marginal: Vec<BigUint>,
    #[serde(with = "crate::bigjson::vec")]
    pub prior: Vec<BigUint>,
}

/// `P(x1, x2) = f1(x1 | orbit(x2))·f2(x2)`, every entry `2n+4` bits wide.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantTables {
    pub orbit_count: u32,
    /// Orbit of each `x ∈ X`.
    pub orbit_of: Vec<u32>,
    /// Indexed `(orbit << m) | x1`.
    #[serde(with = "crate::bigjson::vec")]
    pub f1: Vec<BigUint>,
    #[serde(with = "crate::bigjson::vec")]
    pub f2: Vec<BigUint>,
}

/// Sparse selection from a pool shared by sender and receiver: slot `e`
/// (one per environment) uses pool member `assignment[e]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompCbnDescription {
    pub assignment: Vec<usize>,
}

impl CompCbnDescription {
    pub fn k(&self) -> usize {
        let mut used: Vec<usize> = self.assignment.clone();
        used.sort_unstable();
        used.dedup();
        used.len()
    }
}

/// Mechanism pool known to both sides; each member is a distribution on `X^d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompCbnContext {
    pub pool: Vec<DiscreteDistribution>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    RawTable(RawTable),
    TabularCbn(ShiftedCbn),
    Invariant(InvariantTables),
    CompCbn(CompCbnDescription),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::RawTable(_) => ModelKind::RawTable,
            Model::TabularCbn(_) => ModelKind::TabularCbn,
            Model::Invariant(_) => ModelKind::Invariant,
            Model::CompCbn(_) => ModelKind::CompCbn,
        }
    }
}

/// Entry width of the tabular registry models.
pub fn entry_width(n: u16) -> u32 {
    2 * n as u32 + 4
}

/// Payload bits split into table entries and framing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadBits {
    pub table: u64,
    pub framing: u64,
}

impl PayloadBits {
    pub fn total(&self) -> u64 {
        self.table + self.framing
    }
}

struct Writer {
    bits: BitString,
    table: u64,
}

impl Writer {
    fn new() -> Self {
        Self {
            bits: BitString::new(),
            table: 0,
        }
    }

    fn entries(&mut self, values: &[BigUint], width: u32) -> Result<()> {
        for v in values {
            self.bits.push_biguint(v, width as usize)?;
        }
        self.table += values.len() as u64 * width as u64;
        Ok(())
    }

    fn framing(&mut self, value: u64, width: usize) {
        self.bits.push_u64(value, width);
    }

    fn framing_big(&mut self, value: &BigUint, width: usize) -> Result<()> {
        self.bits.push_biguint(value, width)
    }

    fn self_delimited(&mut self, value: u64) {
        self.bits.extend_from(&self_delimit_u64(value));
    }
}

fn expect_len(what: &str, got: usize, want: u64) -> Result<()> {
    if got as u64 != want {
        return Err(Error::Model(format!("{what} has {got} entries, expected {want}")));
    }
    Ok(())
}

fn check_mass(what: &str, values: &[BigUint], width: u32) -> Result<()> {
    if values.iter().sum::<BigUint>() > BigUint::one() << width {
        return Err(Error::Decode(format!("{what} has mass above 1")));
    }
    Ok(())
}

fn bits_for(count: &BigUint) -> usize {
    // ⌈log2 count⌉
    if count <= &BigUint::one() {
        0
    } else {
        (count - BigUint::one()).bits() as usize
    }
}

fn encode_payload(model: &Model, h: &Header, ctx: Option<&CompCbnContext>) -> Result<(BitString, PayloadBits)> {
    let (d, m) = (h.d as usize, h.m as usize);
    let mut w = Writer::new();
    match model {
        Model::RawTable(t) => {
            expect_len("raw table", t.nums.len(), h.joint_size())?;
            check_mass("raw table", &t.nums, t.width).map_err(to_model)?;
            w.self_delimited(t.width as u64);
            w.entries(&t.nums, t.width)?;
        }
        Model::TabularCbn(c) => {
            let width = entry_width(h.n);
            expect_len("mechanism list", c.mechanisms.len(), h.envs as u64)?;
            for mech in &c.mechanisms {
                let mut mask = 0u64;
                for (i, &p) in mech.parents.iter().enumerate() {
                    if p == 0 || p >= d || (i > 0 && mech.parents[i - 1] >= p) {
                        return Err(Error::Model(format!("invalid parent list {:?}", mech.parents)));
                    }
                    mask |= 1 << (d - 1 - p);
                }
                w.framing(mask, d - 1);
            }
            for (e, mech) in c.mechanisms.iter().enumerate() {
                expect_len(
                    &format!("shifted mechanism {e}"),
                    mech.table.len(),
                    1 << (m * (1 + mech.parents.len())),
                )?;
                w.entries(&mech.table, width)?;
            }
            expect_len("marginal", c.marginal.len(), 1 << (m * (d - 1)))?;
            w.entries(&c.marginal, width)?;
            expect_len("prior", c.prior.len(), h.envs as u64)?;
            w.entries(&c.prior, width)?;
        }
        Model::Invariant(t) => {
            if d != 2 || h.envs != 1 {
                return Err(Error::Model("the invariant model lives on X^2 with one environment".into()));
            }
            let width = entry_width(h.n);
            let count = t.orbit_count as u64;
            if count == 0 || count > 1 << m {
                return Err(Error::Model(format!("orbit count {count} is invalid")));
            }
            expect_len("orbit labels", t.orbit_of.len(), 1 << m)?;
            if t.orbit_of.iter().any(|&o| o as u64 >= count) {
                return Err(Error::Model("orbit label out of range".into()));
            }
            w.self_delimited(count - 1);
            let label_bits = ceil_log2(count) as usize;
            for &o in &t.orbit_of {
                w.framing(o as u64, label_bits);
            }
            expect_len("f1", t.f1.len(), count << m)?;
            expect_len("f2", t.f2.len(), 1 << m)?;
            w.entries(&t.f1, width)?;
            w.entries(&t.f2, width)?;
        }
        Model::CompCbn(desc) => {
            let ctx = ctx.ok_or_else(|| Error::Model("CompCBN needs the shared pool".into()))?;
            let pool = ctx.pool.len();
            expect_len("assignment", desc.assignment.len(), h.envs as u64)?;
            if desc.assignment.iter().any(|&j| j >= pool) {
                return Err(Error::Model("assignment names a missing pool member".into()));
            }
            let (subset, rgs, perm) = split_assignment(&desc.assignment);
            let k = subset.len() as u64;
            let n_slots = desc.assignment.len() as u64;
            w.self_delimited(k - 1);
            w.framing_big(&rank_subset(&subset, pool), bits_for(&binomial(pool as u64, k)))?;
            w.framing_big(&rank_rgs(&rgs, k as usize), bits_for(&stirling2(n_slots, k)?))?;
            w.framing_big(&rank_permutation(&perm), bits_for(&factorial(k)))?;
        }
    }
    let framing = w.bits.len() as u64 - w.table;
    Ok((
        w.bits,
        PayloadBits {
            table: w.table,
            framing,
        },
    ))
}

fn to_model(e: Error) -> Error {
    match e {
        Error::Decode(s) => Error::Model(s),
        other => other,
    }
}

fn read_entries(r: &mut BitReader<'_>, count: u64, width: u32) -> Result<Vec<BigUint>> {
    if count.saturating_mul(width as u64) > r.remaining() as u64 {
        return Err(Error::Decode("payload is shorter than its tables".into()));
    }
    (0..count).map(|_| r.read_biguint(width as usize)).collect()
}

fn decode_payload(bits: &BitString, h: &Header, ctx: Option<&CompCbnContext>, kind: ModelKind) -> Result<Model> {
    let (d, m) = (h.d as usize, h.m as usize);
    let mut r = BitReader::new(bits);
    let model = match kind {
        ModelKind::RawTable => {
            let width = small(r.read_self_delimited()?, 1 << 16, "table width")? as u32;
            if width == 0 {
                return Err(Error::Decode("zero table width".into()));
            }
            let nums = read_entries(&mut r, h.joint_size(), width)?;
            check_mass("raw table", &nums, width)?;
            Model::RawTable(RawTable { width, nums })
        }
        ModelKind::TabularCbn => {
            let width = entry_width(h.n);
            let mut parents = Vec::with_capacity(h.envs as usize);
            for _ in 0..h.envs {
                let mask = r.read_u64(d - 1)?;
                parents.push((1..d).filter(|&p| mask >> (d - 1 - p) & 1 == 1).collect::<Vec<_>>());
            }
            let mut mechanisms = Vec::with_capacity(parents.len());
            for ps in parents {
                let rows = 1u64 << (m * (1 + ps.len()));
                let table = read_entries(&mut r, rows, width)?;
                for slice in table.chunks(1 << m) {
                    check_mass("shifted mechanism", slice, width)?;
                }
                mechanisms.push(ShiftedMechanism { parents: ps, table });
            }
            let marginal = read_entries(&mut r, 1 << (m * (d - 1)), width)?;
            check_mass("marginal", &marginal, width)?;
            let prior = read_entries(&mut r, h.envs as u64, width)?;
            check_mass("prior", &prior, width)?;
            Model::TabularCbn(ShiftedCbn {
                mechanisms,
                marginal,
                prior,
            })
        }
        ModelKind::Invariant => {
            if d != 2 || h.envs != 1 {
                return Err(Error::Decode("the invariant model lives on X^2 with one environment".into()));
            }
            let width = entry_width(h.n);
            let count = small(r.read_self_delimited()?, 1 << m, "orbit count")? + 1;
            if count > 1 << m {
                return Err(Error::Decode("orbit count exceeds |X|".into()));
            }
            let label_bits = ceil_log2(count) as usize;
            let orbit_of = (0..1u64 << m)
                .map(|_| {
                    let o = r.read_u64(label_bits)?;
                    if o >= count {
                        return Err(Error::Decode("orbit label out of range".into()));
                    }
                    Ok(o as u32)
                })
                .collect::<Result<Vec<_>>>()?;
            let f1 = read_entries(&mut r, count << m, width)?;
            for slice in f1.chunks(1 << m) {
                check_mass("f1", slice, width)?;
            }
            let f2 = read_entries(&mut r, 1 << m, width)?;
            check_mass("f2", &f2, width)?;
            Model::Invariant(InvariantTables {
                orbit_count: count as u32,
                orbit_of,
                f1,
                f2,
            })
        }
        ModelKind::CompCbn => {
            let ctx = ctx.ok_or_else(|| Error::Decode("CompCBN payload needs the shared pool".into()))?;
            let pool = ctx.pool.len();
            let n_slots = h.envs as usize;
            let k = small(r.read_self_delimited()?, n_slots.min(pool) as u64, "k")? as usize + 1;
            if k > n_slots.min(pool) {
                return Err(Error::Decode(format!("k = {k} exceeds the pool or slot count")));
            }
            let c = binomial(pool as u64, k as u64);
            let s = stirling2(n_slots as u64, k as u64)?;
            let f = factorial(k as u64);
            let read_rank = |r: &mut BitReader<'_>, count: &BigUint| -> Result<BigUint> {
                let v = r.read_biguint(bits_for(count))?;
                if &v >= count {
                    return Err(Error::Decode("rank out of range".into()));
                }
                Ok(v)
            };
            let subset = unrank_subset(&read_rank(&mut r, &c)?, pool, k);
            let rgs = unrank_rgs(&read_rank(&mut r, &s)?, n_slots, k);
            let perm = unrank_permutation(&read_rank(&mut r, &f)?, k);
            let assignment = rgs.iter().map(|&b| subset[perm[b]]).collect();
            Model::CompCbn(CompCbnDescription { assignment })
        }
    };
    if r.remaining() != 0 {
        return Err(Error::Decode(format!("{} stray bits after the payload", r.remaining())));
    }
    Ok(model)
}

fn small(v: BigUint, limit: u64, what: &str) -> Result<u64> {
    v.to_u64()
        .filter(|&x| x <= limit)
        .ok_or_else(|| Error::Decode(format!("{what} is out of range")))
}

/// Joint weights on `[I] × X^d` and their common exponent.
pub fn model_joint(model: &Model, h: &Header, ctx: Option<&CompCbnContext>) -> Result<(Vec<BigUint>, u32)> {
    let (d, m) = (h.d as usize, h.m as usize);
    let size = 1usize << (d * m);
    let envs = h.envs as usize;
    match model {
        Model::RawTable(t) => Ok((t.nums.clone(), t.width)),
        Model::TabularCbn(c) => {
            let width = entry_width(h.n);
            let rest: Vec<usize> = (1..d).collect();
            let mut out = Vec::with_capacity(envs * size);
            for (e, mech) in c.mechanisms.iter().enumerate() {
                for x in 0..size as u64 {
                    let pa = sub_point(x, &mech.parents, d, m);
                    let x1 = coord(x, 0, d, m);
                    let f = &mech.table[((pa << m) | x1) as usize];
                    let g = &c.marginal[sub_point(x, &rest, d, m) as usize];
                    out.push(f * g * &c.prior[e]);
                }
            }
            Ok((out, 3 * width))
        }
        Model::Invariant(t) => {
            let width = entry_width(h.n);
            let out = (0..size as u64)
                .map(|x| {
                    let (x1, x2) = (coord(x, 0, 2, m), coord(x, 1, 2, m));
                    let orbit = t.orbit_of[x2 as usize] as u64;
                    &t.f1[((orbit << m) | x1) as usize] * &t.f2[x2 as usize]
                })
                .collect();
            Ok((out, 2 * width))
        }
        Model::CompCbn(desc) => {
            let ctx = ctx.ok_or_else(|| Error::Model("CompCBN needs the shared pool".into()))?;
            let n = h.n as u32;
            let prior = (BigUint::one() << n) / BigUint::from(envs);
            let mut out = Vec::with_capacity(envs * size);
            for &j in &desc.assignment {
                let p = &ctx.pool[j];
                if p.domain_size() != size {
                    return Err(Error::Model("pool member has the wrong shape".into()));
                }
                for x in 0..size as u64 {
                    out.push(p.numerator(x) * &prior);
                }
            }
            let exp = ctx.pool.first().map_or(0, |p| p.n()) + n;
            if ctx.pool.iter().any(|p| p.n() + n != exp) {
                return Err(Error::Model("pool members differ in precision".into()));
            }
            Ok((out, exp))
        }
    }
}

fn codebook_for(weights: &[BigUint], h: &Header) -> Result<Codebook> {
    let mut support: Vec<(u64, BigUint)> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| !w.is_zero())
        .map(|(i, w)| (i as u64, w.clone()))
        .collect();
    if support.len() == 1 && weights.len() > 1 {
        // a lone symbol still gets a one-bit word
        let other = if support[0].0 == 0 { 1 } else { 0 };
        support.push((other, BigUint::zero()));
    }
    let bits = ceil_log2(h.joint_size()) as usize;
    huffman_from_weights(1, bits.max(1), &support)
}

/// JSON side of a `.fcc` file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub m: u16,
    pub d: u16,
    pub n: u16,
    pub envs: u16,
    pub model: Model,
    /// Symbols `e·2^{md} + x`.
    pub data: Vec<u64>,
}

impl Dataset {
    pub fn header(&self) -> Header {
        Header {
            version: VERSION,
            m: self.m,
            d: self.d,
            n: self.n,
            envs: self.envs,
        }
    }

    pub fn encode(&self, ctx: Option<&CompCbnContext>) -> Result<EncodedArtifact> {
        encode_dataset(self.header(), &self.model, &self.data, ctx)
    }
}

impl From<&EncodedArtifact> for Dataset {
    fn from(a: &EncodedArtifact) -> Self {
        Self {
            m: a.header.m,
            d: a.header.d,
            n: a.header.n,
            envs: a.header.envs,
            model: a.model.clone(),
            data: a.data.clone(),
        }
    }
}

/// Decoded or freshly encoded two-part code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedArtifact {
    pub header: Header,
    pub model: Model,
    /// Symbols `e·2^{md} + x`.
    pub data: Vec<u64>,
    pub index_bits: u64,
    pub payload: PayloadBits,
    pub stream_bits: u64,
    pub padding_bits: u64,
    /// The serialized file.
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl EncodedArtifact {
    /// Fixed-width fields: header bytes plus the two length prefixes.
    pub fn fixed_overhead_bits(&self) -> u64 {
        8 * HEADER_BYTES as u64 + 32 + 64
    }

    pub fn total_bits(&self) -> u64 {
        self.fixed_overhead_bits() + self.index_bits + self.payload.total() + self.stream_bits + self.padding_bits
    }
}

/// Serializes `model` and the Huffman code of `data` under it.
pub fn encode_dataset(
    header: Header,
    model: &Model,
    data: &[u64],
    ctx: Option<&CompCbnContext>,
) -> Result<EncodedArtifact> {
    header.check().map_err(to_model)?;
    let (payload_bits, payload) = encode_payload(model, &header, ctx)?;
    let (weights, _) = model_joint(model, &header, ctx)?;
    for &x in data {
        if weights.get(x as usize).is_none_or(Zero::is_zero) {
            return Err(Error::ZeroMass(format!("data point {x} has zero mass under the model")));
        }
    }
    let stream = if data.is_empty() {
        BitString::new()
    } else {
        codebook_for(&weights, &header)?.encode_sequence(data)?
    };
    let index = self_delimit_u64(model.kind().index());
    let mut body = index.clone();
    let plen = u32::try_from(payload_bits.len())
        .map_err(|_| Error::Overflow("payload exceeds 2^32 bits".into()))?;
    body.push_u64(plen as u64, 32);
    body.extend_from(&payload_bits);
    body.push_u64(stream.len() as u64, 64);
    body.extend_from(&stream);
    let padding = (8 - body.len() % 8) % 8;
    let mut bytes = header.to_bytes().to_vec();
    bytes.extend(body.to_bytes());
    Ok(EncodedArtifact {
        header,
        model: model.clone(),
        data: data.to_vec(),
        index_bits: index.len() as u64,
        payload,
        stream_bits: stream.len() as u64,
        padding_bits: padding as u64,
        bytes,
    })
}

/// Parses a `.fcc` file; a CompCBN payload needs the shared pool.
pub fn decode_dataset(bytes: &[u8], ctx: Option<&CompCbnContext>) -> Result<EncodedArtifact> {
    let header = Header::from_bytes(bytes)?;
    let body_bytes = &bytes[HEADER_BYTES..];
    let body = BitString::from_bytes(body_bytes, body_bytes.len() * 8)?;
    let mut r = BitReader::new(&body);
    let index_start = r.position();
    let index = small(
        r.read_self_delimited().map_err(|_| Error::Decode("bad model index".into()))?,
        u64::MAX,
        "model index",
    )?;
    let kind = ModelKind::from_index(index)?;
    let index_bits = (r.position() - index_start) as u64;
    let plen = r.read_u64(32)? as usize;
    if plen > r.remaining() {
        return Err(Error::Decode("payload runs past the end of the file".into()));
    }
    let payload_bits = r.read_bits(plen)?;
    let model = decode_payload(&payload_bits, &header, ctx, kind)?;
    let slen = r.read_u64(64)?;
    if slen > r.remaining() as u64 {
        return Err(Error::Decode("stream runs past the end of the file".into()));
    }
    let stream = r.read_bits(slen as usize)?;
    let padding = r.remaining();
    if padding >= 8 {
        return Err(Error::Decode(format!("{padding} trailing bits")));
    }
    if r.rest().bits().iter().any(|&b| b) {
        return Err(Error::Decode("nonzero padding".into()));
    }
    let (weights, _) = model_joint(&model, &header, ctx).map_err(|e| Error::Decode(e.to_string()))?;
    let data = if stream.is_empty() {
        Vec::new()
    } else {
        let book = codebook_for(&weights, &header).map_err(|e| Error::Decode(e.to_string()))?;
        if !book.is_prefix_free() {
            return Err(Error::Decode("embedded codebook is not prefix-free".into()));
        }
        book.decode_sequence(&stream)?
    };
    // re-measure the payload split
    let (_, payload) = encode_payload(&model, &header, ctx).map_err(|e| Error::Decode(e.to_string()))?;
    Ok(EncodedArtifact {
        header,
        model,
        data,
        index_bits,
        payload,
        stream_bits: slen,
        padding_bits: padding as u64,
        bytes: bytes.to_vec(),
    })
}

/// Writes through a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Measured bits against the analytic account.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub fixed_overhead_bits: u64,
    pub index_bits: u64,
    pub payload_table_bits: u64,
    pub payload_framing_bits: u64,
    pub ledger_model_bits: f64,
    /// Table entries of the ledger, when it itemizes them.
    pub ledger_table_bits: Option<f64>,
    pub stream_bits: u64,
    pub shannon_integer_bits: u64,
    pub real_nll_bits: f64,
    pub padding_bits: u64,
    pub total_bits: u64,
    pub data_len: usize,
}

impl Reconciliation {
    /// `0 ≤ Σ⌈-log2 p⌉ − Σ(-log2 p) < |data|`, or both zero for empty data.
    pub fn shannon_gap_ok(&self) -> bool {
        let gap = self.shannon_integer_bits as f64 - self.real_nll_bits;
        if self.data_len == 0 {
            return gap == 0.0;
        }
        gap >= -1e-9 && gap < self.data_len as f64
    }

    pub fn table_bits_match(&self) -> bool {
        self.ledger_table_bits == Some(self.payload_table_bits as f64)
    }
}

pub fn reconcile_bits(
    artifact: &EncodedArtifact,
    ledger: &FcBreakdown,
    ctx: Option<&CompCbnContext>,
) -> Result<Reconciliation> {
    let (weights, _) = model_joint(&artifact.model, &artifact.header, ctx)?;
    let mass: BigUint = weights.iter().sum();
    let mut real = 0.0;
    let mut int = 0u64;
    for &x in &artifact.data {
        let w = &weights[x as usize];
        if w.is_zero() {
            return Err(Error::ZeroMass(format!("data point {x}")));
        }
        // −log2(w / mass), the normalized model probability
        let bits = log2_big(&mass) - log2_big(w);
        real += bits;
        // ⌈−log2(w / mass)⌉ exactly: smallest L with w·2^L ≥ mass
        let mut l = (mass.bits() as i64 - w.bits() as i64 - 1).max(0) as u32;
        while (w << l) < mass {
            l += 1;
        }
        int += l as u64;
    }
    let table_labels = [
        crate::ufcc::SHIFTED_TABLES,
        crate::ufcc::MARGINAL_TABLE,
        crate::ufcc::ENV_PRIOR,
    ];
    let tables: Vec<f64> = table_labels.iter().filter_map(|l| ledger.component(l)).collect();
    Ok(Reconciliation {
        fixed_overhead_bits: artifact.fixed_overhead_bits(),
        index_bits: artifact.index_bits,
        payload_table_bits: artifact.payload.table,
        payload_framing_bits: artifact.payload.framing,
        ledger_model_bits: ledger.model_bits,
        ledger_table_bits: (!tables.is_empty()).then(|| tables.iter().sum()),
        stream_bits: artifact.stream_bits,
        shannon_integer_bits: int,
        real_nll_bits: real,
        padding_bits: artifact.padding_bits,
        total_bits: artifact.total_bits(),
        data_len: artifact.data.len(),
    })
}

/// Subset in order of first use, restricted growth string over blocks, and
/// the block-to-subset permutation.
fn split_assignment(assignment: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut first_use: Vec<usize> = Vec::new();
    let rgs: Vec<usize> = assignment
        .iter()
        .map(|&j| match first_use.iter().position(|&u| u == j) {
            Some(b) => b,
            None => {
                first_use.push(j);
                first_use.len() - 1
            }
        })
        .collect();
    let mut subset = first_use.clone();
    subset.sort_unstable();
    let perm = first_use
        .iter()
        .map(|j| subset.iter().position(|s| s == j).expect("member"))
        .collect();
    (subset, rgs, perm)
}

fn rank_subset(subset: &[usize], m: usize) -> BigUint {
    // lexicographic rank among k-subsets of 0..m
    let k = subset.len();
    let mut rank = BigUint::zero();
    let mut prev = 0usize;
    for (i, &s) in subset.iter().enumerate() {
        for v in prev..s {
            rank += binomial((m - v - 1) as u64, (k - i - 1) as u64);
        }
        prev = s + 1;
    }
    rank
}

fn unrank_subset(rank: &BigUint, m: usize, k: usize) -> Vec<usize> {
    let mut r = rank.clone();
    let mut out = Vec::with_capacity(k);
    let mut v = 0usize;
    for i in 0..k {
        loop {
            let c = binomial((m - v - 1) as u64, (k - i - 1) as u64);
            if r < c {
                break;
            }
            r -= c;
            v += 1;
        }
        out.push(v);
        v += 1;
    }
    out
}

/// Completions of a restricted growth string: `table[r][j]` counts ways to
/// fill `r` more positions with `j` blocks open and exactly `k` at the end.
fn rgs_table(n: usize, k: usize) -> Vec<Vec<BigUint>> {
    let mut t = vec![vec![BigUint::zero(); k + 2]; n + 1];
    t[0][k] = BigUint::one();
    for r in 1..=n {
        for j in 0..=k {
            let stay = &t[r - 1][j] * BigUint::from(j);
            let open = if j < k { t[r - 1][j + 1].clone() } else { BigUint::zero() };
            t[r][j] = stay + open;
        }
    }
    t
}

fn rank_rgs(rgs: &[usize], k: usize) -> BigUint {
    let n = rgs.len();
    let t = rgs_table(n, k);
    let mut rank = BigUint::zero();
    let mut open = 1usize;
    for (i, &a) in rgs.iter().enumerate().skip(1) {
        let rest = n - i - 1;
        for v in 0..a {
            let next_open = if v == open { open + 1 } else { open };
            rank += &t[rest][next_open];
        }
        if a == open {
            open += 1;
        }
    }
    rank
}

fn unrank_rgs(rank: &BigUint, n: usize, k: usize) -> Vec<usize> {
    let t = rgs_table(n, k);
    let mut r = rank.clone();
    let mut out = vec![0usize; n];
    let mut open = 1usize;
    for (i, slot) in out.iter_mut().enumerate().skip(1) {
        let rest = n - i - 1;
        for v in 0..=open.min(k.saturating_sub(1)) {
            let next_open = if v == open { open + 1 } else { open };
            let c = &t[rest][next_open.min(k + 1)];
            if &r < c {
                *slot = v;
                open = next_open;
                break;
            }
            r -= c;
        }
    }
    out
}

fn rank_permutation(perm: &[usize]) -> BigUint {
    let k = perm.len();
    let mut rank = BigUint::zero();
    for i in 0..k {
        let smaller = perm[i + 1..].iter().filter(|&&p| p < perm[i]).count();
        rank += factorial((k - i - 1) as u64) * BigUint::from(smaller);
    }
    rank
}

fn unrank_permutation(rank: &BigUint, k: usize) -> Vec<usize> {
    let mut r = rank.clone();
    let mut left: Vec<usize> = (0..k).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let f = factorial((k - i - 1) as u64);
        let idx = (&r / &f).to_usize().unwrap_or(0).min(left.len() - 1);
        r -= &f * BigUint::from(idx);
        out.push(left.remove(idx));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ufcc::{model_bits_tabcbn, Strategy};

    fn bigs(v: &[u64]) -> Vec<BigUint> {
        v.iter().map(|&x| BigUint::from(x)).collect()
    }

    fn textbook() -> (Header, Model) {
        let h = Header { version: VERSION, m: 2, d: 1, n: 3, envs: 1 };
        (h, Model::RawTable(RawTable { width: 3, nums: bigs(&[4, 2, 1, 1]) }))
    }

    #[test]
    fn textbook_roundtrip() {
        let (h, model) = textbook();
        let data = [0, 2, 3, 1, 0, 2];
        let a = encode_dataset(h, &model, &data, None).unwrap();
        assert_eq!(a.stream_bits, 13);
        let back = decode_dataset(&a.bytes, None).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.data, data);
        assert_eq!(back.stream_bits, 13);
        assert_eq!(a.total_bits() % 8, 0);
        assert_eq!(a.total_bits(), 8 * a.bytes.len() as u64);
    }

    #[test]
    fn empty_data() {
        let (h, model) = textbook();
        let a = encode_dataset(h, &model, &[], None).unwrap();
        assert_eq!(a.stream_bits, 0);
        assert!(decode_dataset(&a.bytes, None).unwrap().data.is_empty());
    }

    #[test]
    fn single_point_model() {
        let h = Header { version: VERSION, m: 1, d: 1, n: 1, envs: 1 };
        let model = Model::RawTable(RawTable { width: 1, nums: bigs(&[0, 1]) });
        let a = encode_dataset(h, &model, &[1, 1, 1], None).unwrap();
        assert_eq!(a.stream_bits, 3);
        assert_eq!(decode_dataset(&a.bytes, None).unwrap().data, vec![1, 1, 1]);
        let full = Model::RawTable(RawTable { width: 1, nums: bigs(&[0, 2]) });
        assert!(matches!(encode_dataset(h, &full, &[1], None), Err(Error::Overflow(_))));
    }

    #[test]
    fn zero_mass_point_refused() {
        let h = Header { version: VERSION, m: 2, d: 1, n: 2, envs: 1 };
        let model = Model::RawTable(RawTable { width: 2, nums: bigs(&[2, 2, 0, 0]) });
        assert!(matches!(encode_dataset(h, &model, &[2], None), Err(Error::ZeroMass(_))));
    }

    #[test]
    fn corrupted_inputs() {
        let (h, model) = textbook();
        let a = encode_dataset(h, &model, &[0, 1, 2, 3], None).unwrap();
        let mut bad = a.bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad, None).is_err());
        let mut bad = a.bytes.clone();
        bad[4] = 9;
        assert!(decode_dataset(&bad, None).is_err());
        let mut bad = a.bytes.clone();
        bad.push(0);
        assert!(decode_dataset(&bad, None).is_err());
        let mut bad = a.bytes.clone();
        *bad.last_mut().unwrap() |= 1;
        assert!(decode_dataset(&bad, None).is_err());
        assert!(decode_dataset(&a.bytes[..a.bytes.len() - 1], None).is_err());
    }

    #[test]
    fn mass_above_one_rejected() {
        let h = Header { version: VERSION, m: 1, d: 1, n: 2, envs: 1 };
        let mut body = self_delimit_u64(0);
        let mut payload = self_delimit_u64(2);
        payload.push_u64(3, 2);
        payload.push_u64(3, 2);
        body.push_u64(payload.len() as u64, 32);
        body.extend_from(&payload);
        body.push_u64(0, 64);
        let mut bytes = h.to_bytes().to_vec();
        bytes.extend(body.to_bytes());
        assert!(matches!(decode_dataset(&bytes, None), Err(Error::Decode(_))));
    }

    fn shifted_cbn(m: usize, d: usize, n: u16, envs: usize) -> (Header, Model) {
        let width = entry_width(n);
        let one = BigUint::one() << width;
        let uniform = |cells: usize| vec![&one / BigUint::from(cells); cells];
        let parents: Vec<usize> = (1..d.saturating_sub(1).max(1)).filter(|&p| p < d).collect();
        let mechanisms = (0..envs)
            .map(|e| {
                let rows = 1usize << (m * parents.len());
                let cols = 1usize << m;
                let mut table = Vec::new();
                for r in 0..rows {
                    let mut slice = uniform(cols);
                    slice[(r + e) % cols] += BigUint::one();
                    slice[(r + e + 1) % cols] -= BigUint::one();
                    table.extend(slice);
                }
                ShiftedMechanism { parents: parents.clone(), table }
            })
            .collect();
        let h = Header { version: VERSION, m: m as u16, d: d as u16, n, envs: envs as u16 };
        (
            h,
            Model::TabularCbn(ShiftedCbn {
                mechanisms,
                marginal: uniform(1 << (m * (d - 1))),
                prior: uniform(envs),
            }),
        )
    }

    #[test]
    fn tabular_cbn_payload_matches_ledger() {
        for (m, d, n, envs) in [(2usize, 2usize, 4u16, 2usize), (2, 3, 4, 2), (1, 4, 3, 4)] {
            let (h, model) = shifted_cbn(m, d, n, envs);
            let a = encode_dataset(h, &model, &[0, 1, 5], None).unwrap();
            let ledger = model_bits_tabcbn(m as u32, d as u32, n as u32, envs as u32).unwrap();
            let rec = reconcile_bits(&a, &ledger, None).unwrap();
            assert!(rec.table_bits_match(), "{rec:?}");
            assert_eq!(rec.payload_framing_bits, (envs * (d - 1)) as u64);
            let back = decode_dataset(&a.bytes, None).unwrap();
            assert_eq!(back.model, model);
            assert_eq!(back.data, vec![0, 1, 5]);
        }
    }

    #[test]
    fn invariant_roundtrip() {
        let n = 2u16;
        let w = entry_width(n);
        let one = BigUint::one() << w;
        let q = |v: u64| &one * BigUint::from(v) / BigUint::from(8u32);
        let model = Model::Invariant(InvariantTables {
            orbit_count: 3,
            orbit_of: vec![0, 1, 2, 1],
            f1: [4u64, 2, 1, 1, 2, 2, 2, 2, 1, 1, 3, 3].iter().map(|&v| q(v)).collect(),
            f2: [2u64, 2, 2, 2].iter().map(|&v| q(v)).collect(),
        });
        let h = Header { version: VERSION, m: 2, d: 2, n, envs: 1 };
        let a = encode_dataset(h, &model, &[0, 5, 15, 7], None).unwrap();
        let back = decode_dataset(&a.bytes, None).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.data, vec![0, 5, 15, 7]);
        assert_eq!(a.payload.table, 16 * w as u64);
    }

    #[test]
    fn rankings_roundtrip() {
        for m in 1..7usize {
            for k in 1..=m {
                let mut seen = Vec::new();
                crate::select::for_each_subset(m, k, |s| seen.push(s.to_vec()));
                for (i, s) in seen.iter().enumerate() {
                    assert_eq!(rank_subset(s, m), BigUint::from(i));
                    assert_eq!(&unrank_subset(&BigUint::from(i), m, k), s);
                }
            }
        }
        for n in 1..8usize {
            for k in 1..=n {
                let total = stirling2(n as u64, k as u64).unwrap().to_usize().unwrap();
                for i in 0..total {
                    let rgs = unrank_rgs(&BigUint::from(i), n, k);
                    assert_eq!(*rgs.iter().max().unwrap() + 1, k);
                    assert_eq!(rank_rgs(&rgs, k), BigUint::from(i));
                }
            }
        }
        for k in 1..6usize {
            let f = factorial(k as u64).to_usize().unwrap();
            for i in 0..f {
                let p = unrank_permutation(&BigUint::from(i), k);
                assert_eq!(rank_permutation(&p), BigUint::from(i));
            }
        }
    }

    #[test]
    fn comp_cbn_roundtrip_and_size() {
        let pool: Vec<DiscreteDistribution> = (0..6u64)
            .map(|j| {
                let mut t = vec![BigUint::from(1u32); 4];
                t[(j % 4) as usize] = BigUint::from(5u32);
                DiscreteDistribution::from_parts(1, 2, 3, t).unwrap()
            })
            .collect();
        let ctx = CompCbnContext { pool };
        let desc = CompCbnDescription { assignment: vec![4, 1, 1, 4, 2] };
        let h = Header { version: VERSION, m: 2, d: 1, n: 8, envs: 5 };
        let model = Model::CompCbn(desc.clone());
        let a = encode_dataset(h, &model, &[0, 4, 9, 19], Some(&ctx)).unwrap();
        let back = decode_dataset(&a.bytes, Some(&ctx)).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.data, vec![0, 4, 9, 19]);
        assert!(decode_dataset(&a.bytes, None).is_err());
        // rank fields use ⌈log2⌉ of each count; k itself is self-delimited
        let k = desc.k() as u64;
        let expect = crate::bitcode::self_delimit_u64(k - 1).len()
            + bits_for(&binomial(6, k))
            + bits_for(&stirling2(5, k).unwrap())
            + bits_for(&factorial(k));
        assert_eq!(a.payload.total() as usize, expect);
        let analytic = crate::ufcc::strategy_bits(5, 6, k, Strategy::Sparse).unwrap();
        assert!((a.payload.total() as f64) < analytic + 3.0 + 2.0 * (k as f64).log2() + 1.0);
    }

    #[test]
    fn reconcile_dyadic_and_not() {
        let (h, model) = textbook();
        let data = [0, 2, 3, 1, 0, 2];
        let a = encode_dataset(h, &model, &data, None).unwrap();
        let rec = reconcile_bits(&a, &FcBreakdown::new(), None).unwrap();
        assert_eq!(rec.real_nll_bits, 13.0);
        assert_eq!(rec.stream_bits, 13);
        assert_eq!(rec.shannon_integer_bits, 13);
        assert!(rec.shannon_gap_ok());

        let h = Header { version: VERSION, m: 2, d: 1, n: 4, envs: 1 };
        let model = Model::RawTable(RawTable { width: 4, nums: bigs(&[7, 5, 3, 1]) });
        let data = [0, 1, 2, 3, 2, 1];
        let a = encode_dataset(h, &model, &data, None).unwrap();
        let rec = reconcile_bits(&a, &FcBreakdown::new(), None).unwrap();
        // per-symbol ceiling oracle
        let oracle: u64 = data.iter().map(|&x| (16.0 / [7.0, 5.0, 3.0, 1.0][x as usize] as f64).log2().ceil() as u64).sum();
        assert_eq!(rec.shannon_integer_bits, oracle);
        assert!(rec.shannon_gap_ok());
    }

    #[test]
    fn atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fcc");
        write_atomic(&path, b"abc").unwrap();
        write_atomic(&path, b"defg").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"defg");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fuzz_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
                let _ = decode_dataset(&bytes, None);
            }

            #[test]
            fn fuzz_after_header(tail in proptest::collection::vec(any::<u8>(), 0..64), m in 1u16..4, n in 1u16..6) {
                let h = Header { version: VERSION, m, d: 1, n, envs: 1 };
                let mut bytes = h.to_bytes().to_vec();
                bytes.extend(tail);
                let _ = decode_dataset(&bytes, None);
            }

            #[test]
            fn random_roundtrip(w in proptest::collection::vec(1u64..40, 8), xs in proptest::collection::vec(0u64..8, 0..40)) {
                let total: u64 = w.iter().sum();
                let nums: Vec<BigUint> = w.iter().map(|&v| BigUint::from((v << 10) / total)).collect();
                prop_assume!(nums.iter().all(|v| !v.is_zero()));
                let h = Header { version: VERSION, m: 3, d: 1, n: 10, envs: 1 };
                let model = Model::RawTable(RawTable { width: 10, nums: nums.clone() });
                let a = encode_dataset(h, &model, &xs, None).unwrap();
                let back = decode_dataset(&a.bytes, None).unwrap();
                prop_assert_eq!(&back.data, &xs);
                let weights: Vec<(u64, BigUint)> = nums.iter().cloned().enumerate().map(|(i, v)| (i as u64, v)).collect();
                let book = huffman_from_weights(1, 3, &weights).unwrap();
                let sum: u64 = xs.iter().map(|&x| book.word(x).unwrap().len() as u64).sum();
                prop_assert_eq!(a.stream_bits, sum);
            }
        }
    }
}
