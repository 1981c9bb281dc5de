//! Prefix codebooks over sample points.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::bitcode::{kraft_sum, BitReader, BitString};
use crate::dist::{DiscreteDistribution, Dyadic};
use crate::error::{Error, Result};

/// Injective prefix-free map from points of `(B^m)^d` to bit strings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codebook {
    d: usize,
    m: usize,
    words: BTreeMap<u64, BitString>,
    trie: Vec<TrieNode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
struct TrieNode {
    child: [Option<u32>; 2],
    leaf: Option<u64>,
}

impl Codebook {
    /// Validates prefix-freeness while building the decoding trie.
    pub fn new(d: usize, m: usize, words: BTreeMap<u64, BitString>) -> Result<Self> {
        let limit = 1u128 << (d * m).min(64);
        let mut trie = vec![TrieNode::default()];
        for (&point, word) in &words {
            if u128::from(point) >= limit {
                return Err(Error::Codebook(format!("point {point} outside (B^{m})^{d}")));
            }
            if word.is_empty() && words.len() > 1 {
                return Err(Error::Codebook("empty word in a multi-word codebook".into()));
            }
            let mut node = 0usize;
            for &b in word.bits() {
                if trie[node].leaf.is_some() {
                    return Err(Error::Codebook(format!("a codeword is a prefix of {word}")));
                }
                let next = match trie[node].child[b as usize] {
                    Some(c) => c as usize,
                    None => {
                        trie.push(TrieNode::default());
                        let c = trie.len() - 1;
                        trie[node].child[b as usize] = Some(c as u32);
                        c
                    }
                };
                node = next;
            }
            if trie[node].leaf.is_some() || trie[node].child.iter().any(Option::is_some) {
                return Err(Error::Codebook(format!("{word} is a prefix of another codeword")));
            }
            trie[node].leaf = Some(point);
        }
        Ok(Self { d, m, words, trie })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, point: u64) -> Option<&BitString> {
        self.words.get(&point)
    }

    pub fn words(&self) -> &BTreeMap<u64, BitString> {
        &self.words
    }

    pub fn lengths(&self) -> Vec<u64> {
        self.words.values().map(|w| w.len() as u64).collect()
    }

    pub fn kraft_sum(&self) -> num_rational::BigRational {
        kraft_sum(&self.lengths())
    }

    /// Structural check that no word is a prefix of another (pairwise).
    pub fn is_prefix_free(&self) -> bool {
        let ws: Vec<&BitString> = self.words.values().collect();
        ws.iter().enumerate().all(|(i, a)| {
            ws.iter()
                .enumerate()
                .all(|(j, b)| i == j || !b.starts_with(a))
        })
    }

    pub fn encode_sequence(&self, xs: &[u64]) -> Result<BitString> {
        let mut out = BitString::new();
        for &x in xs {
            let w = self
                .words
                .get(&x)
                .ok_or_else(|| Error::Codebook(format!("point {x} is not in the codebook")))?;
            out.extend_from(w);
        }
        Ok(out)
    }

    pub fn decode_sequence(&self, bits: &BitString) -> Result<Vec<u64>> {
        let mut reader = BitReader::new(bits);
        let mut out = Vec::new();
        while reader.remaining() > 0 {
            out.push(self.decode_one(&mut reader)?);
        }
        Ok(out)
    }

    /// Reads one codeword; used when the stream carries a symbol count.
    pub fn decode_one(&self, reader: &mut BitReader<'_>) -> Result<u64> {
        if self.words.len() == 1 {
            if let Some((&p, w)) = self.words.iter().next() {
                if w.is_empty() {
                    return Ok(p);
                }
            }
        }
        let mut node = 0usize;
        loop {
            if let Some(p) = self.trie[node].leaf {
                return Ok(p);
            }
            let b = reader
                .read_bit()
                .map_err(|_| Error::Decode("stream ends inside a codeword".into()))?;
            node = self.trie[node].child[b as usize]
                .ok_or_else(|| Error::Decode("bits match no codeword".into()))?
                as usize;
        }
    }

    /// `2^{-|c(x)|}` for every word, as a distribution at the longest word length.
    pub fn to_semimeasure(&self) -> Result<DiscreteDistribution> {
        code_to_semimeasure(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CodebookFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: CodebookFile = serde_json::from_str(s)?;
        f.try_into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub point: BitString,
    pub word: BitString,
}

/// JSON form `{d, m, words:[{point, word}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodebookFile {
    pub d: usize,
    pub m: usize,
    pub words: Vec<CodebookEntry>,
}

impl From<&Codebook> for CodebookFile {
    fn from(c: &Codebook) -> Self {
        Self {
            d: c.d,
            m: c.m,
            words: c
                .words
                .iter()
                .map(|(&p, w)| CodebookEntry {
                    point: BitString::from_u64(p, c.d * c.m),
                    word: w.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<CodebookFile> for Codebook {
    type Error = Error;

    fn try_from(f: CodebookFile) -> Result<Self> {
        let mut words = BTreeMap::new();
        for e in f.words {
            if e.point.len() != f.d * f.m || e.point.len() > 64 {
                return Err(Error::Codebook(format!("point {} has the wrong width", e.point)));
            }
            let p = e.point.bits().iter().fold(0u64, |acc, &b| (acc << 1) | b as u64);
            if words.insert(p, e.word).is_some() {
                return Err(Error::Codebook(format!("duplicate point {}", e.point)));
            }
        }
        Codebook::new(f.d, f.m, words)
    }
}

#[derive(Debug)]
enum Tree {
    Leaf(u64),
    Node(Box<Tree>, Box<Tree>),
}

/// Huffman code of the support of `p`. Merges the two lightest nodes, ordered
/// by `(mass, smallest point)`; the lighter one becomes the `0` branch.
pub fn huffman_build(p: &DiscreteDistribution) -> Result<Codebook> {
    let masses: Vec<(u64, BigUint)> = p.support().map(|x| (x, p.numerator(x).clone())).collect();
    huffman_from_weights(p.d(), p.m(), &masses)
}

/// Huffman code from explicit nonnegative integer weights.
pub fn huffman_from_weights(d: usize, m: usize, weights: &[(u64, BigUint)]) -> Result<Codebook> {
    if weights.len() < 2 {
        return Err(Error::Codebook(format!(
            "Huffman coding needs a support of at least 2 points, got {}",
            weights.len()
        )));
    }
    let mut trees: Vec<Option<Tree>> = Vec::with_capacity(weights.len() * 2);
    let mut heap = BinaryHeap::new();
    for (&(x, ref w), i) in weights.iter().zip(0usize..) {
        trees.push(Some(Tree::Leaf(x)));
        heap.push(Reverse((w.clone(), x, i)));
    }
    while heap.len() > 1 {
        let Reverse((wa, xa, ia)) = heap.pop().expect("two nodes");
        let Reverse((wb, xb, ib)) = heap.pop().expect("two nodes");
        let a = trees[ia].take().expect("live node");
        let b = trees[ib].take().expect("live node");
        trees.push(Some(Tree::Node(Box::new(a), Box::new(b))));
        heap.push(Reverse((wa + wb, xa.min(xb), trees.len() - 1)));
    }
    let Reverse((_, _, root)) = heap.pop().expect("root");
    let mut words = BTreeMap::new();
    let mut stack = vec![(trees[root].take().expect("root"), BitString::new())];
    while let Some((t, prefix)) = stack.pop() {
        match t {
            Tree::Leaf(x) => {
                words.insert(x, prefix);
            }
            Tree::Node(l, r) => {
                let mut pl = prefix.clone();
                pl.push(false);
                let mut pr = prefix;
                pr.push(true);
                stack.push((*l, pl));
                stack.push((*r, pr));
            }
        }
    }
    Codebook::new(d, m, words)
}

/// Integer Shannon length `⌈-log2 P(x)⌉` and its real value.
pub fn shannon_length(p: &DiscreteDistribution, x: u64) -> Result<(u64, f64)> {
    let v = p.value(x);
    shannon_length_of(&v).ok_or_else(|| Error::ZeroMass(format!("P({x}) = 0")))
}

/// `(⌈-log2 v⌉, -log2 v)` for a positive dyadic value.
pub fn shannon_length_of(v: &Dyadic) -> Option<(u64, f64)> {
    if v.is_zero() {
        return None;
    }
    // −log2 v lies in (exp − ⌊log2 num⌋ − 1, exp − ⌊log2 num⌋], equal at powers of two
    let int = v.exp as i64 - (v.num.bits() as i64 - 1);
    Some((int.max(0) as u64, v.neg_log2()))
}

pub fn code_to_semimeasure(c: &Codebook) -> Result<DiscreteDistribution> {
    let n = c.words.values().map(BitString::len).max().unwrap_or(0) as u32;
    let mut table = vec![BigUint::zero(); 1usize << (c.d * c.m)];
    for (&x, w) in &c.words {
        table[x as usize] = BigUint::one() << (n as usize - w.len());
    }
    DiscreteDistribution::from_parts(c.d, c.m, n, table)
}

/// `Σ P(x)·|c(x)|`; points of the support outside the codebook are an error.
pub fn expected_length(c: &Codebook, p: &DiscreteDistribution) -> Result<f64> {
    p.support()
        .map(|x| {
            c.word(x)
                .map(|w| p.prob(x) * w.len() as f64)
                .ok_or_else(|| Error::Codebook(format!("support point {x} has no codeword")))
        })
        .sum()
}

/// Exact `Σ P(x)·|c(x)|` as a dyadic numerator over `2^n`.
pub fn expected_length_exact(c: &Codebook, p: &DiscreteDistribution) -> Result<Dyadic> {
    let mut acc = BigUint::zero();
    for x in p.support() {
        let w = c
            .word(x)
            .ok_or_else(|| Error::Codebook(format!("support point {x} has no codeword")))?;
        acc += p.numerator(x) * BigUint::from(w.len());
    }
    Ok(Dyadic::new(acc, p.n()))
}

pub fn entropy(p: &DiscreteDistribution) -> f64 {
    p.entropy()
}
