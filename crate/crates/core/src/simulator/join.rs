//! Local hash joins, the single-node oracle, and exact comparison of join
//! results kept in factored form.
//!
//! Skewed keys produce far more result pairs than input tuples, so results
//! are represented as a list of [`JoinBlock`]s, each standing for the full
//! cross product of its build and probe row ids.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::datagen::{RowId, Side, Tuple, Workload};

pub type Pair = (RowId, RowId);

/// Exact inner equi-join of `build` against `probe`: one `(build, probe)`
/// row-id pair per match, duplicates preserved.
pub fn local_hash_join(build: &[Tuple], probe: &[Tuple]) -> Vec<Pair> {
    let mut index: HashMap<u64, Vec<RowId>> = HashMap::new();
    for b in build {
        index.entry(b.key).or_default().push(b.rowid);
    }
    let mut out = Vec::new();
    for p in probe {
        if let Some(matches) = index.get(&p.key) {
            out.extend(matches.iter().map(|&b| (b, p.rowid)));
        }
    }
    out
}

/// Cross product `builds x probes` for one key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinBlock {
    pub key: u64,
    pub builds: Vec<RowId>,
    pub probes: Vec<RowId>,
}

impl JoinBlock {
    pub fn size(&self) -> u64 {
        self.builds.len() as u64 * self.probes.len() as u64
    }
}

/// A multiset of result pairs stored as a union of cross-product blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMultiset {
    pub blocks: Vec<JoinBlock>,
}

impl PairMultiset {
    pub fn size(&self) -> u64 {
        self.blocks.iter().map(JoinBlock::size).sum()
    }

    /// Expands every block. Only sensible for small results.
    pub fn materialize(&self) -> Vec<Pair> {
        let mut out = Vec::with_capacity(self.size() as usize);
        for b in &self.blocks {
            for &p in &b.probes {
                out.extend(b.builds.iter().map(|&r| (r, p)));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Single-node ground truth: for every key the full build and probe row-id
/// lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleJoin {
    pub size: u64,
    per_key: BTreeMap<u64, (Vec<RowId>, Vec<RowId>)>,
}

impl OracleJoin {
    pub fn as_multiset(&self) -> PairMultiset {
        PairMultiset {
            blocks: self
                .per_key
                .iter()
                .filter(|(_, (b, p))| !b.is_empty() && !p.is_empty())
                .map(|(&key, (b, p))| JoinBlock {
                    key,
                    builds: b.clone(),
                    probes: p.clone(),
                })
                .collect(),
        }
    }

    /// Canonical sorted pair list. Only for small workloads.
    pub fn pairs(&self) -> Vec<Pair> {
        self.as_multiset().materialize()
    }

    /// Checks that `result` holds exactly the oracle's pairs, each once.
    ///
    /// Works per key: every probe must be paired with the full build list of
    /// its key, counting every block it appears in. Probes sharing the same
    /// block signature are checked together.
    pub fn check(&self, result: &PairMultiset) -> Result<(), String> {
        let mut by_key: BTreeMap<u64, Vec<&JoinBlock>> = BTreeMap::new();
        for b in &result.blocks {
            by_key.entry(b.key).or_default().push(b);
        }
        let empty = (Vec::new(), Vec::new());
        let keys: std::collections::BTreeSet<u64> =
            by_key.keys().chain(self.per_key.keys()).copied().collect();
        for key in keys {
            let (builds, probes) = self.per_key.get(&key).unwrap_or(&empty);
            let blocks = by_key.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let mut expected = builds.clone();
            expected.sort_unstable();
            let probe_set: HashSet<RowId> = probes.iter().copied().collect();

            let mut signature: HashMap<RowId, Vec<usize>> = HashMap::new();
            for (i, b) in blocks.iter().enumerate() {
                for &p in &b.probes {
                    signature.entry(p).or_default().push(i);
                }
            }
            if !expected.is_empty() {
                if let Some(missing) = probes.iter().find(|p| !signature.contains_key(p)) {
                    return Err(format!("key {key}: probe {missing} produced no pairs"));
                }
            }
            let mut groups: HashMap<Vec<usize>, RowId> = HashMap::new();
            for (p, sig) in signature {
                groups.entry(sig).or_insert(p);
            }
            for (sig, sample) in groups {
                let mut combined: Vec<RowId> = sig
                    .iter()
                    .flat_map(|&i| blocks[i].builds.iter().copied())
                    .collect();
                combined.sort_unstable();
                let want: &[RowId] = if probe_set.contains(&sample) {
                    &expected
                } else {
                    &[]
                };
                if combined != want {
                    return Err(format!(
                        "key {key}: probe {sample} paired with {} build rows, expected {}",
                        combined.len(),
                        want.len()
                    ));
                }
            }
            // Probes in the same signature group share partners, but a group
            // may mix real and foreign probes; check membership per probe.
            for b in blocks {
                if b.builds.is_empty() {
                    continue;
                }
                if let Some(foreign) = b.probes.iter().find(|p| !probe_set.contains(p)) {
                    return Err(format!("key {key}: probe {foreign} does not carry this key"));
                }
            }
        }
        Ok(())
    }
}

/// Joins all shards on one node.
pub fn oracle_join(workload: &Workload) -> OracleJoin {
    let mut per_key: BTreeMap<u64, (Vec<RowId>, Vec<RowId>)> = BTreeMap::new();
    for t in workload.all_tuples() {
        let entry = per_key.entry(t.key).or_default();
        match t.side {
            Side::Build => entry.0.push(t.rowid),
            Side::Probe => entry.1.push(t.rowid),
        }
    }
    let size = per_key
        .values()
        .map(|(b, p)| b.len() as u64 * p.len() as u64)
        .sum();
    OracleJoin { size, per_key }
}
