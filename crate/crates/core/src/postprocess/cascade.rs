//! Cascade reconciliation.
//!
//! The holder of the key to be corrected (Bob) asks the reference holder
//! (Alice) for parities of contiguous ranges in a pass-specific permutation of
//! the key. Four passes are run with block size `k1 = max(8, round(0.73/Q))`
//! doubling each pass. Pass 0 uses the identity order; later passes use a
//! Fisher-Yates shuffle seeded from the shared reconciliation seed.
//!
//! Queries are issued in batches so that one round trip carries every
//! independent question: all block parities of a new pass, or one bisection
//! level of every odd block of a single pass. Blocks of the same pass are
//! disjoint, so concurrent bisections never touch the same bit.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::keyhash::{polynomial_hash, HASH_BITS};
use crate::error::{ensure_domain, Error, Result};
use crate::rng::substream;

pub const CASCADE_PASSES: usize = 4;

/// Parity request over positions `start..end` of the permuted order of `pass`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityQuery {
    pub pass: u8,
    pub start: u32,
    pub end: u32,
}

pub fn initial_block_size(qber_hint: f64) -> Result<usize> {
    ensure_domain(qber_hint > 0.0 && qber_hint <= 0.25, "qber hint", qber_hint)?;
    Ok(libm::round(0.73 / qber_hint).max(8.0) as usize)
}

/// Permutations and block sizes shared by both parties.
#[derive(Debug, Clone)]
pub struct CascadeLayout {
    n: usize,
    /// `perms[p][pos]` is the key index at permuted position `pos`.
    perms: Vec<Vec<u32>>,
    /// `positions[p][i]` is the permuted position of key index `i`.
    positions: Vec<Vec<u32>>,
    block_sizes: Vec<usize>,
}

impl CascadeLayout {
    pub fn new(n: usize, qber_hint: f64, seed: u64) -> Result<CascadeLayout> {
        if n < 64 {
            return Err(Error::InsufficientData("cascade needs at least 64 key bits"));
        }
        let k1 = initial_block_size(qber_hint)?;
        let mut perms = Vec::with_capacity(CASCADE_PASSES);
        let mut positions = Vec::with_capacity(CASCADE_PASSES);
        let mut block_sizes = Vec::with_capacity(CASCADE_PASSES);
        for pass in 0..CASCADE_PASSES {
            let mut perm: Vec<u32> = (0..n as u32).collect();
            if pass > 0 {
                perm.shuffle(&mut substream(seed, pass as u64));
            }
            let mut pos = vec![0u32; n];
            for (p, &i) in perm.iter().enumerate() {
                pos[i as usize] = p as u32;
            }
            perms.push(perm);
            positions.push(pos);
            block_sizes.push((k1 << pass).min(n));
        }
        Ok(CascadeLayout { n, perms, positions, block_sizes })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn block_size(&self, pass: usize) -> usize {
        self.block_sizes[pass]
    }

    fn blocks(&self, pass: usize) -> usize {
        self.n.div_ceil(self.block_sizes[pass])
    }

    fn block_range(&self, pass: usize, block: usize) -> (usize, usize) {
        let k = self.block_sizes[pass];
        (block * k, ((block + 1) * k).min(self.n))
    }

    pub fn parity(&self, key: &[u8], q: &ParityQuery) -> Result<u8> {
        let perm = self.perms.get(q.pass as usize).ok_or(Error::Oracle("query names an unknown pass"))?;
        let (start, end) = (q.start as usize, q.end as usize);
        if start > end || end > self.n || key.len() != self.n {
            return Err(Error::Oracle("query range outside the key"));
        }
        Ok(perm[start..end].iter().fold(0u8, |acc, &i| acc ^ (key[i as usize] & 1)))
    }
}

/// Answer a batch of parity queries against the reference key.
pub fn answer_queries(layout: &CascadeLayout, key: &[u8], queries: &[ParityQuery]) -> Result<Vec<u8>> {
    queries.iter().map(|q| layout.parity(key, q)).collect()
}

#[derive(Debug, Clone)]
struct Bisection {
    start: usize,
    end: usize,
}

#[derive(Debug, Clone)]
enum Stage {
    /// Block parities of `pass` have been requested.
    Blocks(usize),
    /// Bisection of odd blocks of `pass` in progress.
    Bisect {
        pass: usize,
        searches: Vec<Bisection>,
    },
    Finished,
}

/// Resumable Cascade driver for the party being corrected.
#[derive(Debug, Clone)]
pub struct CascadeEngine {
    layout: CascadeLayout,
    key: Vec<u8>,
    /// Highest pass whose block parities are known.
    current_pass: usize,
    remote_block: Vec<Vec<u8>>,
    local_block: Vec<Vec<u8>>,
    stage: Stage,
    outstanding: Vec<ParityQuery>,
    parity_queries: usize,
    corrections: usize,
}

impl CascadeEngine {
    pub fn new(layout: CascadeLayout, key: Vec<u8>) -> Result<CascadeEngine> {
        if key.len() != layout.len() {
            return Err(Error::LengthMismatch { expected: layout.len(), actual: key.len() });
        }
        let mut engine = CascadeEngine {
            remote_block: vec![Vec::new(); CASCADE_PASSES],
            local_block: vec![Vec::new(); CASCADE_PASSES],
            layout,
            key,
            current_pass: 0,
            stage: Stage::Blocks(0),
            outstanding: Vec::new(),
            parity_queries: 0,
            corrections: 0,
        };
        engine.outstanding = engine.block_queries(0);
        Ok(engine)
    }

    fn block_queries(&self, pass: usize) -> Vec<ParityQuery> {
        (0..self.layout.blocks(pass))
            .map(|b| {
                let (s, e) = self.layout.block_range(pass, b);
                ParityQuery { pass: pass as u8, start: s as u32, end: e as u32 }
            })
            .collect()
    }

    fn local_range_parity(&self, pass: usize, start: usize, end: usize) -> u8 {
        self.layout.perms[pass][start..end].iter().fold(0u8, |acc, &i| acc ^ self.key[i as usize])
    }

    /// Queries awaiting answers; empty once the passes are finished.
    pub fn pending(&self) -> &[ParityQuery] {
        &self.outstanding
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.stage, Stage::Finished)
    }

    pub fn parity_queries(&self) -> usize {
        self.parity_queries
    }

    pub fn corrections(&self) -> usize {
        self.corrections
    }

    pub fn key(&self) -> &[u8] {
        &self.key
    }

    pub fn layout(&self) -> &CascadeLayout {
        &self.layout
    }

    pub fn into_key(self) -> Vec<u8> {
        self.key
    }

    /// Supply the answers to [`pending`](Self::pending), in order.
    pub fn feed(&mut self, answers: &[u8]) -> Result<()> {
        if answers.len() != self.outstanding.len() {
            return Err(Error::LengthMismatch { expected: self.outstanding.len(), actual: answers.len() });
        }
        self.parity_queries += answers.len();
        let stage = core::mem::replace(&mut self.stage, Stage::Finished);
        match stage {
            Stage::Blocks(pass) => {
                self.remote_block[pass] = answers.iter().map(|a| a & 1).collect();
                self.local_block[pass] = (0..self.layout.blocks(pass))
                    .map(|b| {
                        let (s, e) = self.layout.block_range(pass, b);
                        self.local_range_parity(pass, s, e)
                    })
                    .collect();
                self.current_pass = pass;
            }
            Stage::Bisect { pass, searches } => {
                for (mut search, &answer) in searches.into_iter().zip(answers) {
                    let mid = search.start + (search.end - search.start) / 2;
                    if self.local_range_parity(pass, search.start, mid) != answer & 1 {
                        search.end = mid;
                    } else {
                        search.start = mid;
                    }
                    if search.end - search.start == 1 {
                        let index = self.layout.perms[pass][search.start] as usize;
                        self.flip(index);
                    } else {
                        self.push_search(pass, search);
                    }
                }
                if let Stage::Bisect { searches, .. } = &self.stage {
                    if !searches.is_empty() {
                        self.outstanding = self.bisect_queries();
                        return Ok(());
                    }
                }
            }
            Stage::Finished => return Err(Error::Oracle("answers after cascade finished")),
        }
        self.advance();
        Ok(())
    }

    fn push_search(&mut self, pass: usize, search: Bisection) {
        match &mut self.stage {
            Stage::Bisect { searches, .. } => searches.push(search),
            _ => self.stage = Stage::Bisect { pass, searches: vec![search] },
        }
    }

    fn bisect_queries(&self) -> Vec<ParityQuery> {
        match &self.stage {
            Stage::Bisect { pass, searches } => searches
                .iter()
                .map(|s| ParityQuery {
                    pass: *pass as u8,
                    start: s.start as u32,
                    end: (s.start + (s.end - s.start) / 2) as u32,
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    fn flip(&mut self, index: usize) {
        self.key[index] ^= 1;
        self.corrections += 1;
        for pass in 0..=self.current_pass {
            let block = self.layout.positions[pass][index] as usize / self.layout.block_size(pass);
            self.local_block[pass][block] ^= 1;
        }
    }

    /// Pick the next batch: bisect the odd blocks of the earliest pass that
    /// has any, otherwise open the next pass, otherwise finish.
    fn advance(&mut self) {
        for pass in 0..=self.current_pass {
            let searches: Vec<Bisection> = (0..self.layout.blocks(pass))
                .filter(|&b| self.local_block[pass][b] != self.remote_block[pass][b])
                .map(|block| {
                    let (start, end) = self.layout.block_range(pass, block);
                    Bisection { start, end }
                })
                .collect();
            if searches.is_empty() {
                continue;
            }
            // single-bit blocks are resolved without a query
            let (done, open): (Vec<_>, Vec<_>) = searches.into_iter().partition(|s| s.end - s.start == 1);
            for s in done {
                let index = self.layout.perms[pass][s.start] as usize;
                self.flip(index);
            }
            if open.is_empty() {
                return self.advance();
            }
            self.stage = Stage::Bisect { pass, searches: open };
            self.outstanding = self.bisect_queries();
            return;
        }
        let next = self.current_pass + 1;
        if next < CASCADE_PASSES {
            self.stage = Stage::Blocks(next);
            self.outstanding = self.block_queries(next);
        } else {
            self.stage = Stage::Finished;
            self.outstanding.clear();
        }
    }
}

/// Source of the reference party's parities and verification hash.
/// Point at which the residual-verification hash is evaluated for a session
/// whose reconciliation seed is `seed`.
pub fn verification_hash_key(seed: u64) -> u64 {
    seed.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d
}

pub trait ParityOracle {
    fn parities(&mut self, layout: &CascadeLayout, queries: &[ParityQuery]) -> Result<Vec<u8>>;
    fn key_hash(&mut self, hash_key: u64) -> Result<u64>;
}

/// Oracle backed by an in-memory reference key.
#[derive(Debug, Clone)]
pub struct LocalParityOracle<'a> {
    key: &'a [u8],
}

impl<'a> LocalParityOracle<'a> {
    pub fn new(key: &'a [u8]) -> Self {
        LocalParityOracle { key }
    }
}

impl ParityOracle for LocalParityOracle<'_> {
    fn parities(&mut self, layout: &CascadeLayout, queries: &[ParityQuery]) -> Result<Vec<u8>> {
        answer_queries(layout, self.key, queries)
    }

    fn key_hash(&mut self, hash_key: u64) -> Result<u64> {
        Ok(polynomial_hash(self.key, hash_key))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconciliationResult {
    pub corrected_key: Vec<u8>,
    /// Parity answers plus the verification hash.
    pub leaked_bits: usize,
    pub parity_queries: usize,
    pub corrections: usize,
    pub passes: usize,
    pub residual_check: bool,
}

/// Run Cascade to completion against `oracle` and verify with a 64-bit hash.
pub fn cascade_correct<O: ParityOracle + ?Sized>(
    local_key: &[u8],
    oracle: &mut O,
    qber_hint: f64,
    seed: u64,
) -> Result<ReconciliationResult> {
    let layout = CascadeLayout::new(local_key.len(), qber_hint, seed)?;
    let mut engine = CascadeEngine::new(layout, local_key.to_vec())?;
    while !engine.is_finished() {
        let answers = oracle.parities(engine.layout(), engine.pending())?;
        engine.feed(&answers)?;
    }
    let hash_key = verification_hash_key(seed);
    let residual_check = oracle.key_hash(hash_key)? == polynomial_hash(engine.key(), hash_key);
    let parity_queries = engine.parity_queries();
    let corrections = engine.corrections();
    let result = ReconciliationResult {
        corrected_key: engine.into_key(),
        leaked_bits: parity_queries + HASH_BITS,
        parity_queries,
        corrections,
        passes: CASCADE_PASSES,
        residual_check,
    };
    if !result.residual_check {
        return Err(Error::ReconciliationFailed);
    }
    Ok(result)
}
