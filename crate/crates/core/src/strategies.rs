//! Redistribution strategies. Each maps a tuple arriving at a data node to the
//! compute nodes that must receive it.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bppr::{BalanceScope, BpprState};
use crate::datagen::{Side, Tuple};
use crate::error::Error;
use crate::hash::{hash_node, mix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Plain hash partitioning of both sides.
    Grahj,
    /// Skewed probes stay local, skewed-key builds are broadcast.
    Prpd,
    /// Symmetric fragment-replicate over an r x c node grid.
    Sfr,
    /// Skewed probes round-robin over all nodes, skewed-key builds broadcast.
    Pnr,
    /// Balanced partitioning of skewed probes with on-demand build replication.
    Bppr,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Grahj,
        Strategy::Prpd,
        Strategy::Sfr,
        Strategy::Pnr,
        Strategy::Bppr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Grahj => "grahj",
            Strategy::Prpd => "prpd",
            Strategy::Sfr => "sfr",
            Strategy::Pnr => "pnr",
            Strategy::Bppr => "bppr",
        }
    }

    /// Whether the strategy consults a skew classifier at all.
    pub fn uses_skew(self) -> bool {
        self != Strategy::Grahj
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grahj" => Ok(Strategy::Grahj),
            "prpd" => Ok(Strategy::Prpd),
            "sfr" => Ok(Strategy::Sfr),
            "pnr" => Ok(Strategy::Pnr),
            "bppr" => Ok(Strategy::Bppr),
            other => Err(Error::UnknownStrategy(other.to_string())),
        }
    }
}

/// Logical `rows x cols` arrangement of the nodes for fragment-replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    /// Nearest-square factorization with `rows <= cols`; a prime `n` gives
    /// `1 x n`.
    pub fn for_nodes(n: usize) -> Self {
        let mut rows = 1;
        let mut r = 1;
        while r * r <= n {
            if n.is_multiple_of(r) {
                rows = r;
            }
            r += 1;
        }
        Self {
            rows,
            cols: n / rows,
        }
    }

    pub fn row_of(&self, node: usize) -> usize {
        node / self.cols
    }

    pub fn col_of(&self, node: usize) -> usize {
        node % self.cols
    }

    pub fn row_nodes(&self, row: usize) -> Vec<usize> {
        (0..self.cols).map(|c| row * self.cols + c).collect()
    }

    pub fn col_nodes(&self, col: usize) -> Vec<usize> {
        (0..self.rows).map(|r| r * self.cols + col).collect()
    }

    /// Row a skewed build tuple is replicated along.
    pub fn build_row(&self, tuple: &Tuple) -> usize {
        (mix64(tuple.rowid.as_u64()) % self.rows as u64) as usize
    }

    /// Column a skewed probe tuple is replicated along.
    pub fn probe_col(&self, tuple: &Tuple) -> usize {
        (mix64(tuple.rowid.as_u64()) % self.cols as u64) as usize
    }
}

/// Compute nodes a tuple is shipped to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Destinations {
    /// Distinct node indices in ascending order.
    pub nodes: Vec<usize>,
    /// The tuple is copied to every node, not sent to a single one.
    pub replicated: bool,
}

impl Destinations {
    pub fn single(node: usize) -> Self {
        Self {
            nodes: vec![node],
            replicated: false,
        }
    }

    pub fn all_of(mut nodes: Vec<usize>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        let replicated = nodes.len() > 1;
        Self { nodes, replicated }
    }

    pub fn broadcast(n: usize) -> Self {
        Self::all_of((0..n).collect())
    }
}

/// Result of routing one tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub dest: Destinations,
    /// Size of the node-local candidate set after a balanced-partition
    /// decision, 0 when the tuple took another path.
    pub u_len: usize,
}

impl From<Destinations> for Route {
    fn from(dest: Destinations) -> Self {
        Self { dest, u_len: 0 }
    }
}

/// Knobs shared by all routing contexts of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingParams {
    pub epsilon: f64,
    pub scope: BalanceScope,
    /// Also send replicated skewed-key build tuples to their hash node. Needed
    /// when skew decisions are not globally consistent.
    pub build_copy_to_hash_node: bool,
}

impl Default for RoutingParams {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            scope: BalanceScope::AllNodes,
            build_copy_to_hash_node: false,
        }
    }
}

/// Routing state owned by one data node.
#[derive(Debug, Clone)]
pub struct RoutingContext {
    strategy: Strategy,
    n: usize,
    origin: usize,
    params: RoutingParams,
    grid: Grid,
    cursors: HashMap<u64, usize>,
    bppr: Option<BpprState>,
}

impl RoutingContext {
    pub fn new(strategy: Strategy, n: usize, origin: usize, params: RoutingParams) -> Self {
        let bppr = (strategy == Strategy::Bppr)
            .then(|| BpprState::with_scope(n, params.epsilon, params.scope));
        Self {
            strategy,
            n,
            origin,
            params,
            grid: Grid::for_nodes(n),
            cursors: HashMap::new(),
            bppr,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn bppr_state(&self) -> Option<&BpprState> {
        self.bppr.as_ref()
    }

    /// Routes `tuple`; `skewed` is the classifier's verdict for its key.
    pub fn route(&mut self, tuple: &Tuple, skewed: bool) -> Route {
        match self.strategy {
            Strategy::Grahj => self.route_grahj(tuple).into(),
            Strategy::Prpd => self.route_prpd(tuple, skewed).into(),
            Strategy::Sfr => self.route_sfr(tuple, skewed).into(),
            Strategy::Pnr => self.route_pnr(tuple, skewed).into(),
            Strategy::Bppr => self.route_bppr(tuple, skewed),
        }
    }

    fn hash_dest(&self, tuple: &Tuple) -> Destinations {
        Destinations::single(hash_node(tuple.key, self.n))
    }

    fn with_hash_copy(&self, tuple: &Tuple, mut nodes: Vec<usize>) -> Destinations {
        if self.params.build_copy_to_hash_node {
            nodes.push(hash_node(tuple.key, self.n));
        }
        Destinations::all_of(nodes)
    }

    pub fn route_grahj(&self, tuple: &Tuple) -> Destinations {
        self.hash_dest(tuple)
    }

    pub fn route_prpd(&self, tuple: &Tuple, skewed: bool) -> Destinations {
        match (tuple.side, skewed) {
            (Side::Probe, true) => Destinations::single(self.origin),
            (Side::Build, true) => Destinations::broadcast(self.n),
            _ => self.hash_dest(tuple),
        }
    }

    pub fn route_sfr(&self, tuple: &Tuple, skewed: bool) -> Destinations {
        if !skewed {
            return self.hash_dest(tuple);
        }
        match tuple.side {
            Side::Build => {
                let row = self.grid.build_row(tuple);
                self.with_hash_copy(tuple, self.grid.row_nodes(row))
            }
            Side::Probe => Destinations::all_of(self.grid.col_nodes(self.grid.probe_col(tuple))),
        }
    }

    pub fn route_pnr(&mut self, tuple: &Tuple, skewed: bool) -> Destinations {
        match (tuple.side, skewed) {
            (Side::Probe, true) => {
                let cursor = self.cursors.entry(tuple.key).or_insert(0);
                let node = *cursor;
                *cursor = (*cursor + 1) % self.n;
                Destinations::single(node)
            }
            (Side::Build, true) => Destinations::broadcast(self.n),
            _ => self.hash_dest(tuple),
        }
    }

    /// Builds always go to their hash node; replication to the candidate set
    /// happens later by receiver-side pulls.
    pub fn route_bppr(&mut self, tuple: &Tuple, skewed: bool) -> Route {
        match (tuple.side, skewed) {
            (Side::Probe, true) => {
                let state = self.bppr.as_mut().expect("bppr context without state");
                let routed = state.route_skewed(tuple.key);
                Route {
                    dest: Destinations::single(routed.node),
                    u_len: routed.u_len,
                }
            }
            _ => self.hash_dest(tuple).into(),
        }
    }
}
