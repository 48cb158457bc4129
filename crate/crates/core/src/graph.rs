//! Causal DAGs, their JSON file format, and the normalized graph-convolution
//! operator `D^-1/2 (A + I) D^-1/2`.
//!
//! Graph files are JSON objects:
//!
//! ```json
//! {
//!   "nodes": ["x1", "x2", "y"],
//!   "edges": [["x1", "x2"], ["x2", "y"]],
//!   "target": "y"
//! }
//! ```
//!
//! `edges` refer to nodes by name; `target` is optional. Node order in the
//! file defines row/column order everywhere downstream.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_PERTURB_ATTEMPTS: usize = 10_000;

/// A named directed acyclic graph over model variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    node_names: Vec<String>,
    edges: Vec<(usize, usize)>,
    target: Option<usize>,
}

/// On-disk representation of a [`CausalGraph`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub nodes: Vec<String>,
    pub edges: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Rewire half of the edges (rounded up) to random non-edges.
    Partial,
    /// Replace every edge by a random pair that is neither an original edge
    /// nor the reversal of one.
    Incorrect,
}

impl CausalGraph {
    /// Builds a validated graph. Edges are deduplicated; order of first
    /// appearance is kept.
    pub fn new(
        node_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        target: Option<usize>,
    ) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, name) in node_names.iter().enumerate() {
            if seen.insert(name.as_str(), i).is_some() {
                return Err(Error::DuplicateNode(name.clone()));
            }
        }
        let n = node_names.len();
        let mut unique = Vec::with_capacity(edges.len());
        let mut set = BTreeSet::new();
        for &(s, t) in &edges {
            if s >= n || t >= n {
                return Err(Error::UnknownNode(format!("index {}", s.max(t))));
            }
            if s == t {
                return Err(Error::SelfEdge(node_names[s].clone()));
            }
            if set.insert((s, t)) {
                unique.push((s, t));
            }
        }
        if let Some(t) = target {
            if t >= n {
                return Err(Error::UnknownNode(format!("target index {t}")));
            }
        }
        let g = CausalGraph {
            node_names,
            edges: unique,
            target,
        };
        if let Some(cycle) = g.find_cycle() {
            return Err(Error::Cycle(
                cycle.into_iter().map(|i| g.node_names[i].clone()).collect(),
            ));
        }
        Ok(g)
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        let index: HashMap<&str, usize> = file
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownNode(name.to_string()))
        };
        // duplicate names must be reported before lookups silently pick one
        let mut names = BTreeSet::new();
        for n in &file.nodes {
            if !names.insert(n) {
                return Err(Error::DuplicateNode(n.clone()));
            }
        }
        let mut edges = Vec::with_capacity(file.edges.len());
        for [s, t] in &file.edges {
            if s == t {
                return Err(Error::SelfEdge(s.clone()));
            }
            edges.push((lookup(s)?, lookup(t)?));
        }
        let target = file.target.as_deref().map(lookup).transpose()?;
        CausalGraph::new(file.nodes.clone(), edges, target)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            nodes: self.node_names.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(s, t)| [self.node_names[s].clone(), self.node_names[t].clone()])
                .collect(),
            target: self.target.map(|t| self.node_names[t].clone()),
        }
    }

    /// Parses the JSON graph format described in the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::GraphParse(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph file serializes")
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn target(&self) -> Option<usize> {
        self.target
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.node_names.iter().position(|n| n == name)
    }

    pub fn parents(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, t)| t == node)
            .map(|&(s, _)| s)
            .collect()
    }

    /// Named form of the edge list, convenient for assertions.
    pub fn edge_names(&self) -> BTreeSet<(String, String)> {
        self.edges
            .iter()
            .map(|&(s, t)| (self.node_names[s].clone(), self.node_names[t].clone()))
            .collect()
    }

    /// `A[i][j] = 1` iff the graph has an edge `i -> j`.
    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let mut a = DMatrix::zeros(n, n);
        for &(s, t) in &self.edges {
            a[(s, t)] = 1.0;
        }
        a
    }

    pub fn propagation_operator(&self, symmetrize: bool) -> PropagationOperator {
        let matrix = propagation_matrix(&self.adjacency_matrix(), symmetrize)
            .expect("adjacency of a validated graph is square with zero diagonal");
        PropagationOperator {
            matrix,
            node_order: self.node_names.clone(),
            symmetrized: symmetrize,
        }
    }

    /// Kahn's algorithm, always releasing the lowest-index ready node first.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.node_count();
        let mut indeg = vec![0usize; n];
        for &(_, t) in &self.edges {
            indeg[t] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &(s, t) in &self.edges {
                if s == i {
                    indeg[t] -= 1;
                    if indeg[t] == 0 {
                        ready.insert(t);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Longest-path distance from any root (roots have depth 0).
    pub fn depths(&self) -> Vec<usize> {
        let order = self
            .topological_order()
            .expect("validated graphs are acyclic");
        let mut depth = vec![0usize; self.node_count()];
        for &i in &order {
            for &(s, t) in &self.edges {
                if s == i {
                    depth[t] = depth[t].max(depth[i] + 1);
                }
            }
        }
        depth
    }

    pub fn ancestor_count(&self, node: usize) -> usize {
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            for p in self.parents(v) {
                if !seen[p] {
                    seen[p] = true;
                    stack.push(p);
                }
            }
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// Induced subgraph on every node except the target.
    pub fn restrict_to_inputs(&self) -> Result<CausalGraph> {
        let target = self.target.ok_or(Error::NoTarget)?;
        let remap = |i: usize| if i < target { i } else { i - 1 };
        let names = self
            .node_names
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != target)
            .map(|(_, n)| n.clone())
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|&&(s, t)| s != target && t != target)
            .map(|&(s, t)| (remap(s), remap(t)))
            .collect();
        CausalGraph::new(names, edges, None)
    }

    /// Seeded, reproducible corruption of the edge set. The node set and
    /// target are kept.
    pub fn perturb(&self, mode: PerturbMode, seed: u64) -> Result<CausalGraph> {
        let n = self.node_count();
        let m = self.edges.len();
        if m == 0 {
            return Ok(self.clone());
        }
        let original: BTreeSet<(usize, usize)> = self.edges.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all_pairs = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)));

        match mode {
            PerturbMode::Partial => {
                let k = m.div_ceil(2);
                let pool: Vec<(usize, usize)> =
                    all_pairs.filter(|p| !original.contains(p)).collect();
                if pool.len() < k {
                    return Err(Error::PerturbationExhausted(0));
                }
                for _ in 0..MAX_PERTURB_ATTEMPTS {
                    let rewired: BTreeSet<usize> = sample(&mut rng, m, k).into_iter().collect();
                    let mut edges: Vec<(usize, usize)> = self
                        .edges
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !rewired.contains(i))
                        .map(|(_, &e)| e)
                        .collect();
                    let picks = sample(&mut rng, pool.len(), k);
                    edges.extend(picks.into_iter().map(|i| pool[i]));
                    let candidate = CausalGraph {
                        node_names: self.node_names.clone(),
                        edges,
                        target: self.target,
                    };
                    if candidate.is_acyclic() {
                        return Ok(candidate);
                    }
                }
                Err(Error::PerturbationExhausted(MAX_PERTURB_ATTEMPTS))
            }
            PerturbMode::Incorrect => {
                let pool: Vec<(usize, usize)> = all_pairs
                    .filter(|&(i, j)| !original.contains(&(i, j)) && !original.contains(&(j, i)))
                    .collect();
                if pool.len() < m {
                    return Err(Error::PerturbationExhausted(0));
                }
                for _ in 0..MAX_PERTURB_ATTEMPTS {
                    let edges = sample(&mut rng, pool.len(), m)
                        .into_iter()
                        .map(|i| pool[i])
                        .collect();
                    let candidate = CausalGraph {
                        node_names: self.node_names.clone(),
                        edges,
                        target: self.target,
                    };
                    if candidate.is_acyclic() {
                        return Ok(candidate);
                    }
                }
                Err(Error::PerturbationExhausted(MAX_PERTURB_ATTEMPTS))
            }
        }
    }

    /// Returns one directed cycle if the edge set has any.
    fn find_cycle(&self) -> Option<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let n = self.node_count();
        let mut children = vec![Vec::new(); n];
        for &(s, t) in &self.edges {
            children[s].push(t);
        }
        let mut mark = vec![Mark::New; n];
        let mut parent = vec![usize::MAX; n];
        for root in 0..n {
            if mark[root] != Mark::New {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            mark[root] = Mark::Active;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if *next < children[v].len() {
                    let w = children[v][*next];
                    *next += 1;
                    match mark[w] {
                        Mark::New => {
                            mark[w] = Mark::Active;
                            parent[w] = v;
                            stack.push((w, 0));
                        }
                        Mark::Active => {
                            let mut cycle = vec![w];
                            let mut u = v;
                            while u != w {
                                cycle.push(u);
                                u = parent[u];
                            }
                            cycle.push(w);
                            cycle.reverse();
                            return Some(cycle);
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[v] = Mark::Done;
                    stack.pop();
                }
            }
        }
        None
    }
}

/// Dense normalized propagation operator for a graph convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    pub matrix: DMatrix<f64>,
    pub node_order: Vec<String>,
    pub symmetrized: bool,
}

impl PropagationOperator {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Computes `D^-1/2 Ã D^-1/2` with `Ã = A + I` (optionally `max(Ã, Ãᵀ)`)
/// and `D` the row sums of `Ã`.
pub fn propagation_matrix(adjacency: &DMatrix<f64>, symmetrize: bool) -> Result<DMatrix<f64>> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::Shape(format!(
            "adjacency must be square, got {}x{}",
            n,
            adjacency.ncols()
        )));
    }
    if (0..n).any(|i| adjacency[(i, i)] != 0.0) {
        return Err(Error::Shape("adjacency diagonal must be zero".into()));
    }
    let mut a = adjacency + DMatrix::identity(n, n);
    if symmetrize {
        a = a.zip_map(&a.transpose(), f64::max);
    }
    let inv_sqrt: Vec<f64> = a.row_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        inv_sqrt[i] * a[(i, j)] * inv_sqrt[j]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> CausalGraph {
        CausalGraph::new(vec!["a".into(), "b".into()], vec![(0, 1)], None).unwrap()
    }

    #[test]
    fn parse_minimal() {
        let g = CausalGraph::parse(r#"{"nodes":["a","b"],"edges":[["a","b"]]}"#).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.target(), None);
    }

    #[test]
    fn parse_errors() {
        let self_edge = CausalGraph::parse(r#"{"nodes":["a"],"edges":[["a","a"]]}"#);
        assert!(matches!(self_edge, Err(Error::SelfEdge(n)) if n == "a"));

        let dup = CausalGraph::parse(r#"{"nodes":["a","a"],"edges":[]}"#);
        assert!(matches!(dup, Err(Error::DuplicateNode(_))));

        let unknown = CausalGraph::parse(r#"{"nodes":["a"],"edges":[["a","z"]]}"#);
        assert!(matches!(unknown, Err(Error::UnknownNode(n)) if n == "z"));

        let garbage = CausalGraph::parse("nodes: a");
        assert!(matches!(garbage, Err(Error::GraphParse(_))));

        let cyc = CausalGraph::parse(
            r#"{"nodes":["a","b","c"],"edges":[["a","b"],["b","c"],["c","a"]]}"#,
        );
        match cyc {
            Err(Error::Cycle(c)) => {
                assert_eq!(c.first(), c.last());
                assert_eq!(c.len(), 4);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn adjacency_examples() {
        let empty = CausalGraph::new(vec!["a".into(), "b".into()], vec![], None).unwrap();
        assert_eq!(empty.adjacency_matrix(), DMatrix::zeros(2, 2));
        assert_eq!(
            chain().adjacency_matrix(),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
        );
    }

    #[test]
    fn propagation_examples() {
        let single = propagation_matrix(&DMatrix::zeros(1, 1), true).unwrap();
        assert_eq!(single, DMatrix::from_element(1, 1, 1.0));

        let a = chain().adjacency_matrix();
        let directed = propagation_matrix(&a, false).unwrap();
        let expected = [0.5, 1.0 / 2f64.sqrt(), 0.0, 1.0];
        for (got, want) in directed.transpose().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
        let sym = propagation_matrix(&a, true).unwrap();
        assert!(sym.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn propagation_rejects_bad_input() {
        assert!(propagation_matrix(&DMatrix::zeros(2, 3), true).is_err());
        assert!(propagation_matrix(&DMatrix::identity(2, 2), true).is_err());
    }

    #[test]
    fn restrict_examples() {
        let g = CausalGraph::new(vec!["a".into(), "y".into()], vec![(0, 1)], Some(1)).unwrap();
        let r = g.restrict_to_inputs().unwrap();
        assert_eq!(r.node_names(), &["a".to_string()]);
        assert!(r.edges().is_empty());
        assert!(matches!(chain().restrict_to_inputs(), Err(Error::NoTarget)));
    }

    #[test]
    fn perturb_single_node_unchanged() {
        let g = CausalGraph::new(vec!["a".into()], vec![], None).unwrap();
        assert_eq!(g.perturb(PerturbMode::Partial, 0).unwrap(), g);
        assert_eq!(g.perturb(PerturbMode::Incorrect, 0).unwrap(), g);
    }

    #[test]
    fn perturb_too_dense() {
        // complete DAG on 3 nodes: every unordered pair is an edge or reversal
        let g = CausalGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1), (0, 2), (1, 2)],
            None,
        )
        .unwrap();
        assert!(matches!(
            g.perturb(PerturbMode::Incorrect, 1),
            Err(Error::PerturbationExhausted(_))
        ));
    }

    #[test]
    fn depths_and_order() {
        let g = CausalGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1), (1, 2), (0, 2)],
            None,
        )
        .unwrap();
        assert_eq!(g.depths(), vec![0, 1, 2]);
        assert_eq!(g.topological_order().unwrap(), vec![0, 1, 2]);
        assert_eq!(g.ancestor_count(2), 2);
    }
}
