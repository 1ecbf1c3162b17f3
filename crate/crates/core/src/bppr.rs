//! Balanced partitioning of skewed probe tuples.
//!
//! Every data node expands, per skewed key, a candidate node set along a
//! deterministic node sequence derived from the key alone, so sets built
//! independently on different nodes are always prefixes of one another. A
//! skewed tuple sticks to the node chosen for the previous tuple of its key
//! unless that would push the node-local balance factor above `epsilon`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::hash_node;

/// `(max - min) / max` over the loads, `0` when every load is zero.
pub fn balance_factor(loads: &[u64]) -> Result<f64> {
    let max = *loads.iter().max().ok_or(Error::EmptyLoads)?;
    let min = *loads.iter().min().ok_or(Error::EmptyLoads)?;
    Ok(ratio(max, min))
}

fn ratio(max: u64, min: u64) -> f64 {
    if max == 0 {
        0.0
    } else {
        (max - min) as f64 / max as f64
    }
}

/// Prefix of the per-key candidate node permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSeq {
    pub key: u64,
    pub seq: Vec<usize>,
}

impl NodeSeq {
    pub fn new(key: u64) -> Self {
        Self {
            key,
            seq: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn last(&self) -> Option<usize> {
        self.seq.last().copied()
    }

    /// Appends the next candidate unless the sequence already covers all `n`
    /// nodes. Returns the number of hash evaluations performed.
    pub fn extend(&mut self, n: usize) -> u64 {
        if self.seq.len() >= n {
            return 0;
        }
        let mut epoch = self.seq.len() as u64;
        let mut evals = 1;
        let mut candidate = hash_node(self.key.wrapping_add(epoch), n);
        while self.seq.contains(&candidate) {
            epoch += 1;
            evals += 1;
            candidate = hash_node(self.key.wrapping_add(epoch), n);
        }
        self.seq.push(candidate);
        evals
    }
}

/// Extends `seq` by one node (no-op once it holds all `n` nodes).
pub fn gen_seq(mut seq: NodeSeq, n: usize) -> NodeSeq {
    seq.extend(n);
    seq
}

/// A node's candidate set for one key; always a prefix of the key's sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub key: u64,
    pub members: Vec<usize>,
}

impl CandidateSet {
    pub fn new(key: u64) -> Self {
        Self {
            key,
            members: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Grows `u` by the next node of `seq`, extending `seq` first. Leaves `u`
/// unchanged once it already spans the whole (saturated) sequence.
pub fn update_u(u: &mut CandidateSet, seq: &mut NodeSeq, n: usize) -> u64 {
    let size = u.members.len();
    let evals = seq.extend(n);
    if size == seq.len() {
        return evals;
    }
    u.members.push(seq.seq[size]);
    evals
}

/// Which nodes bound the minimum in the local balance factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceScope {
    /// All `n` compute nodes, including ones that received nothing yet.
    #[default]
    AllNodes,
    /// Only nodes that already hold skewed load.
    ActiveNodes,
}

#[derive(Debug, Clone)]
struct KeyRoute {
    seq: NodeSeq,
    members: CandidateSet,
    last: usize,
}

/// Per-data-node routing state for skewed probe tuples.
#[derive(Debug, Clone)]
pub struct BpprState {
    n: usize,
    epsilon: f64,
    scope: BalanceScope,
    keys: HashMap<u64, KeyRoute>,
    loads: Vec<u64>,
    /// Number of nodes at each load value.
    load_hist: HashMap<u64, usize>,
    max_load: u64,
    min_load: u64,
    /// Smallest positive load, 0 while every load is 0.
    min_active: u64,
    routed: u64,
    ops: u64,
}

/// Outcome of routing one skewed tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Routed {
    pub node: usize,
    /// Candidate set size after the decision.
    pub u_len: usize,
    pub expanded: bool,
}

impl BpprState {
    pub fn new(n: usize, epsilon: f64) -> Self {
        Self::with_scope(n, epsilon, BalanceScope::AllNodes)
    }

    pub fn with_scope(n: usize, epsilon: f64, scope: BalanceScope) -> Self {
        assert!(n > 0, "node count must be positive");
        Self {
            n,
            epsilon,
            scope,
            keys: HashMap::new(),
            loads: vec![0; n],
            load_hist: HashMap::from([(0, n)]),
            max_load: 0,
            min_load: 0,
            min_active: 0,
            routed: 0,
            ops: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    /// Skewed tuples this data node sent to each compute node.
    pub fn partition_loads(&self) -> &[u64] {
        &self.loads
    }

    pub fn routed(&self) -> u64 {
        self.routed
    }

    /// Basic operations spent in [`BpprState::route_skewed`] so far.
    pub fn op_count(&self) -> u64 {
        self.ops
    }

    pub fn cached_extrema(&self) -> (u64, u64) {
        (self.max_load, self.min_load)
    }

    pub fn candidate_set(&self, key: u64) -> Option<&CandidateSet> {
        self.keys.get(&key).map(|r| &r.members)
    }

    pub fn node_seq(&self, key: u64) -> Option<&NodeSeq> {
        self.keys.get(&key).map(|r| &r.seq)
    }

    pub fn candidate_sets(&self) -> impl Iterator<Item = &CandidateSet> {
        self.keys.values().map(|r| &r.members)
    }

    /// Local balance factor over the partition loads.
    pub fn local_balance(&self) -> f64 {
        ratio(self.max_load, self.scoped_min(self.min_load, self.min_active))
    }

    fn scoped_min(&self, min_all: u64, min_active: u64) -> u64 {
        match self.scope {
            BalanceScope::AllNodes => min_all,
            BalanceScope::ActiveNodes => min_active,
        }
    }

    /// Balance factor if `node` received one more tuple, in constant time.
    fn tentative_balance(&self, node: usize) -> f64 {
        let load = self.loads[node];
        let new_load = load + 1;
        let max = self.max_load.max(new_load);
        let alone_at = |value: u64| self.load_hist.get(&value).copied().unwrap_or(0) == 1;
        let min_all = if load == self.min_load && alone_at(load) {
            load + 1
        } else {
            self.min_load
        };
        let min_active = if load == 0 {
            1
        } else if load == self.min_active && alone_at(load) {
            load + 1
        } else {
            self.min_active
        };
        ratio(max, self.scoped_min(min_all, min_active))
    }

    fn assign(&mut self, node: usize) {
        let load = self.loads[node];
        let new_load = load + 1;
        self.loads[node] = new_load;
        let slot = self.load_hist.get_mut(&load).expect("load histogram out of sync");
        *slot -= 1;
        let emptied = *slot == 0;
        if emptied {
            self.load_hist.remove(&load);
        }
        *self.load_hist.entry(new_load).or_insert(0) += 1;
        self.max_load = self.max_load.max(new_load);
        if load == self.min_load && emptied {
            self.min_load = new_load;
        }
        if load == 0 {
            self.min_active = 1;
        } else if load == self.min_active && emptied {
            self.min_active = new_load;
        }
        self.routed += 1;
    }

    /// Routes one skewed tuple with key `key` to a compute node.
    pub fn route_skewed(&mut self, key: u64) -> Routed {
        self.ops += 1;
        let n = self.n;
        let epsilon = self.epsilon;
        let Some(route) = self.keys.get(&key) else {
            // First skewed tuple of this key: seq[0], the default hash node.
            let mut seq = NodeSeq::new(key);
            let mut members = CandidateSet::new(key);
            self.ops += update_u(&mut members, &mut seq, n);
            let node = seq.seq[0];
            self.keys.insert(key, KeyRoute { seq, members, last: node });
            self.assign(node);
            return Routed {
                node,
                u_len: 1,
                expanded: true,
            };
        };

        let last = route.last;
        if self.tentative_balance(last) <= epsilon {
            let u_len = route.members.len();
            self.assign(last);
            return Routed {
                node: last,
                u_len,
                expanded: false,
            };
        }

        // Least-loaded member of U, lowest index on ties, except that the
        // previous choice wins a tie it is part of.
        let mut best = last;
        for &m in &route.members.members {
            let (lm, lb) = (self.loads[m], self.loads[best]);
            if lm < lb || (lm == lb && best != last && m < best) {
                best = m;
            }
        }
        self.ops += route.members.len() as u64;

        let mut expanded = false;
        let node = if best == last {
            let route = self.keys.get_mut(&key).expect("route vanished");
            let before = route.members.len();
            let evals = update_u(&mut route.members, &mut route.seq, n);
            expanded = route.members.len() > before;
            self.ops += evals;
            // A saturated U has nothing new to offer; stay on the minimum.
            if expanded {
                route.seq.last().expect("sequence is non-empty")
            } else {
                best
            }
        } else {
            best
        };
        let route = self.keys.get_mut(&key).expect("route vanished");
        route.last = node;
        let u_len = route.members.len();
        self.assign(node);
        Routed {
            node,
            u_len,
            expanded,
        }
    }

    /// Recomputes the extrema from scratch and compares them with the cache.
    pub fn extrema_consistent(&self) -> bool {
        let max = self.loads.iter().copied().max().unwrap_or(0);
        let min = self.loads.iter().copied().min().unwrap_or(0);
        let min_active = self.loads.iter().copied().filter(|&l| l > 0).min().unwrap_or(0);
        max == self.max_load && min == self.min_load && min_active == self.min_active
    }
}

/// Stable per-key fingerprint of a full node sequence.
pub fn full_sequence(key: u64, n: usize) -> Vec<usize> {
    let mut seq = NodeSeq::new(key);
    for _ in 0..n {
        seq.extend(n);
    }
    seq.seq
}
