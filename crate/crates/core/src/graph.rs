//! Thresholded correlation graphs and independent maximal cliques.
//!
//! A maximal clique is *independent* when it owns a vertex (a unique member)
//! that lies in no other maximal clique. Such cliques are exactly the closed
//! neighborhoods `ne(i) = {i} ∪ adj(i)` that happen to be cliques, and their
//! unique members are exactly the vertices generating them. The search below
//! relies on that characterization; [`brute_force_independent_cliques`]
//! enumerates all maximal cliques instead and serves as a reference.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Structure;
use crate::numerics::SymMatrix;

/// Vertex-count limit for exhaustive maximal-clique enumeration.
pub const BRUTE_FORCE_LIMIT: usize = 25;

const DIAG_TOL: f64 = 1e-9;

/// Undirected graph on `p` vertices with adjacency stored as bitset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedGraph {
    p: usize,
    words: usize,
    rows: Vec<u64>,
    tau: Option<f64>,
}

impl ThresholdedGraph {
    pub fn empty(p: usize) -> Self {
        let words = p.div_ceil(64).max(1);
        ThresholdedGraph { p, words, rows: vec![0; p * words], tau: None }
    }

    /// Graph with the given undirected edges; self-loops are rejected.
    pub fn from_edges(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::empty(p);
        for (i, j) in edges {
            g.check(i)?;
            g.check(j)?;
            if i == j {
                return Err(Error::Domain(format!("self-loop at vertex {i}")));
            }
            g.set(i, j);
            g.set(j, i);
        }
        Ok(g)
    }

    fn set(&mut self, i: usize, j: usize) {
        self.rows[i * self.words + j / 64] |= 1 << (j % 64);
    }

    fn check(&self, i: usize) -> Result<()> {
        if i < self.p {
            Ok(())
        } else {
            Err(Error::Index { index: i, len: self.p })
        }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.rows[i * self.words..(i + 1) * self.words]
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Threshold the graph was built with, if any.
    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.row(i)[j / 64] & (1 << (j % 64)) != 0
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.p).map(|i| self.degree(i)).sum::<usize>() / 2
    }

    /// Edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.p)
            .flat_map(|i| ((i + 1)..self.p).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .collect()
    }

    /// True when every edge of `self` is also an edge of `other`.
    pub fn is_subgraph_of(&self, other: &ThresholdedGraph) -> bool {
        self.p == other.p && self.rows.iter().zip(&other.rows).all(|(a, b)| a & !b == 0)
    }

    fn closed_bits(&self, i: usize) -> Vec<u64> {
        let mut bits = self.row(i).to_vec();
        bits[i / 64] |= 1 << (i % 64);
        bits
    }

    /// Closed neighborhood `{i} ∪ {j : (i, j) is an edge}`, sorted.
    pub fn neighborhood(&self, i: usize) -> Result<Vec<usize>> {
        self.check(i)?;
        Ok(bits_to_vec(&self.closed_bits(i)))
    }

    pub fn is_clique(&self, set: &[usize]) -> Result<bool> {
        for &v in set {
            self.check(v)?;
        }
        Ok(set
            .iter()
            .enumerate()
            .all(|(a, &u)| set[a + 1..].iter().all(|&v| u == v || self.has_edge(u, v))))
    }

    /// `ne(i)` is a clique iff `ne(i) ⊆ ne(j)` for every neighbor `j`.
    fn closed_neighborhood_is_clique(&self, i: usize) -> bool {
        let ne = self.closed_bits(i);
        bits_iter(self.row(i)).all(|j| {
            let row = self.row(j);
            ne.iter().enumerate().all(|(w, &bits)| {
                let own = if w == j / 64 { 1u64 << (j % 64) } else { 0 };
                bits & !(row[w] | own) == 0
            })
        })
    }
}

fn bits_iter(bits: &[u64]) -> impl Iterator<Item = usize> + '_ {
    bits.iter().enumerate().flat_map(|(w, &word)| {
        let mut word = word;
        std::iter::from_fn(move || {
            if word == 0 {
                None
            } else {
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * 64 + b)
            }
        })
    })
}

fn bits_to_vec(bits: &[u64]) -> Vec<usize> {
    bits_iter(bits).collect()
}

/// Edges are the pairs with `|r_ij| > tau` (strict).
pub fn build_graph(r: &SymMatrix, tau: f64) -> Result<ThresholdedGraph> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("tau = {tau} must lie in [0, 1]")));
    }
    let p = r.dim();
    if let Some(i) = (0..p).find(|&i| (r.get(i, i) - 1.0).abs() > DIAG_TOL) {
        return Err(Error::Domain(format!("diagonal entry {i} is {}, expected 1", r.get(i, i))));
    }
    let mut g = ThresholdedGraph::empty(p);
    g.tau = Some(tau);
    for i in 0..p {
        for j in (i + 1)..p {
            if r.get(i, j).abs() > tau {
                g.set(i, j);
                g.set(j, i);
            }
        }
    }
    Ok(g)
}

/// Independent maximal cliques with their unique members.
///
/// Cliques are ordered by their smallest unique member; vertex lists are
/// sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CliqueSet {
    pub cliques: Vec<Vec<usize>>,
    pub unique_members: Vec<Vec<usize>>,
}

impl CliqueSet {
    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    fn sort_by_first_member(&mut self) {
        let mut idx: Vec<usize> = (0..self.cliques.len()).collect();
        idx.sort_by_key(|&k| self.unique_members[k][0]);
        self.cliques = idx.iter().map(|&k| self.cliques[k].clone()).collect();
        self.unique_members = idx.iter().map(|&k| self.unique_members[k].clone()).collect();
    }
}

/// Tests every closed neighborhood for being a clique and merges equal
/// neighborhoods. Costs `O(Σ_i deg(i) · p/64)` word operations.
pub fn independent_maximal_cliques(g: &ThresholdedGraph) -> CliqueSet {
    let is_clique: Vec<bool> = (0..g.p)
        .into_par_iter()
        .map(|i| g.closed_neighborhood_is_clique(i))
        .collect();

    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out = CliqueSet::default();
    for i in (0..g.p).filter(|&i| is_clique[i]) {
        let bits = g.closed_bits(i);
        match index.get(&bits) {
            Some(&k) => out.unique_members[k].push(i),
            None => {
                index.insert(bits.clone(), out.cliques.len());
                out.cliques.push(bits_to_vec(&bits));
                out.unique_members.push(vec![i]);
            }
        }
    }
    out
}

/// Bron–Kerbosch with Tomita pivoting over `u32` vertex masks.
fn bron_kerbosch(adj: &[u32], r: u32, mut p: u32, mut x: u32, out: &mut Vec<u32>) {
    if p == 0 {
        if x == 0 {
            out.push(r);
        }
        return;
    }
    let pivot = {
        let mut best = 0;
        let mut best_count = -1i32;
        let mut cand = p | x;
        while cand != 0 {
            let u = cand.trailing_zeros() as usize;
            cand &= cand - 1;
            let c = (p & adj[u]).count_ones() as i32;
            if c > best_count {
                best_count = c;
                best = u;
            }
        }
        best
    };
    let mut todo = p & !adj[pivot];
    while todo != 0 {
        let v = todo.trailing_zeros() as usize;
        todo &= todo - 1;
        bron_kerbosch(adj, r | (1 << v), p & adj[v], x & adj[v], out);
        p &= !(1 << v);
        x |= 1 << v;
    }
}

/// All maximal cliques of a graph with at most [`BRUTE_FORCE_LIMIT`]
/// vertices, as sorted vertex lists.
pub fn maximal_cliques(g: &ThresholdedGraph) -> Result<Vec<Vec<usize>>> {
    if g.p > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { size: g.p, limit: BRUTE_FORCE_LIMIT });
    }
    if g.p == 0 {
        return Ok(Vec::new());
    }
    let adj: Vec<u32> = (0..g.p)
        .map(|i| (0..g.p).filter(|&j| g.has_edge(i, j)).fold(0u32, |m, j| m | (1 << j)))
        .collect();
    let all = if g.p == 32 { u32::MAX } else { (1u32 << g.p) - 1 };
    let mut masks = Vec::new();
    bron_kerbosch(&adj, 0, all, 0, &mut masks);
    Ok(masks
        .into_iter()
        .map(|m| (0..g.p).filter(|&v| m & (1 << v) != 0).collect())
        .collect())
}

/// Reference search: enumerate all maximal cliques, keep those with a
/// vertex belonging to no other maximal clique.
pub fn brute_force_independent_cliques(g: &ThresholdedGraph) -> Result<CliqueSet> {
    let all = maximal_cliques(g)?;
    let mut count = vec![0usize; g.p];
    for c in &all {
        for &v in c {
            count[v] += 1;
        }
    }
    let mut out = CliqueSet::default();
    for c in all {
        let unique: Vec<usize> = c.iter().copied().filter(|&v| count[v] == 1).collect();
        if !unique.is_empty() {
            out.cliques.push(c);
            out.unique_members.push(unique);
        }
    }
    out.sort_by_first_member();
    Ok(out)
}

/// One factor per clique; variable `i` loads on factor `j` iff `i` is in
/// clique `j`. Columns follow the clique order (smallest unique member).
/// Vertices covered by no clique become empty rows.
pub fn structure_from_cliques(cs: &CliqueSet, p: usize) -> Result<Structure> {
    if cs.is_empty() {
        return Err(Error::EmptyCliqueSet);
    }
    let mut order: Vec<usize> = (0..cs.len()).collect();
    order.sort_by_key(|&k| cs.unique_members[k].first().copied().unwrap_or(usize::MAX));
    let mut support = BTreeSet::new();
    for (col, &k) in order.iter().enumerate() {
        for &v in &cs.cliques[k] {
            if v >= p {
                return Err(Error::Index { index: v, len: p });
            }
            support.insert((v, col));
        }
    }
    Structure::new(p, cs.len(), support)
}
