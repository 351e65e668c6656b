//! Directed communication graphs: adjacency, connectivity, shortest paths,
//! generators and the edge-list text format.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// A directed graph on nodes `0..n`. Self-loops are allowed but kept apart
/// from the `m` regular edges: delay chains are only ever attached to the
/// regular edges, while self-loops only matter for protocol weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    self_loops: Vec<usize>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl DirectedGraph {
    pub fn new(n: usize) -> Self {
        DirectedGraph {
            n,
            edges: Vec::new(),
            self_loops: Vec::new(),
            out_adj: vec![Vec::new(); n],
            in_adj: vec![Vec::new(); n],
        }
    }

    /// Add the directed edge `sender -> receiver`. Duplicate edges are rejected.
    pub fn add_edge(&mut self, sender: usize, receiver: usize) -> Result<()> {
        if sender >= self.n || receiver >= self.n {
            return Err(Error::invalid(format!(
                "edge ({sender}, {receiver}) out of range for {} nodes",
                self.n
            )));
        }
        if sender == receiver {
            if self.self_loops.contains(&sender) {
                return Err(Error::invalid(format!("duplicate self-loop on {sender}")));
            }
            self.self_loops.push(sender);
            return Ok(());
        }
        if self.out_adj[sender].contains(&receiver) {
            return Err(Error::invalid(format!(
                "duplicate edge ({sender}, {receiver})"
            )));
        }
        self.edges.push((sender, receiver));
        self.out_adj[sender].push(receiver);
        self.in_adj[receiver].push(sender);
        Ok(())
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = DirectedGraph::new(n);
        for &(s, r) in edges {
            g.add_edge(s, r)?;
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// The regular (non-self-loop) directed edges in insertion order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of regular directed edges (`m`).
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn self_loops(&self) -> &[usize] {
        &self.self_loops
    }

    pub fn has_edge(&self, sender: usize, receiver: usize) -> bool {
        if sender == receiver {
            self.self_loops.contains(&sender)
        } else {
            self.out_adj[sender].contains(&receiver)
        }
    }

    /// Index of edge `(sender, receiver)` in `edges()`, if present.
    pub fn edge_index(&self, sender: usize, receiver: usize) -> Option<usize> {
        self.edges.iter().position(|&e| e == (sender, receiver))
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_adj[i]
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_adj[i]
    }

    /// BFS distances along directed edges; `None` for unreachable nodes.
    pub fn bfs_distances(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[src] = Some(0);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.out_adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_strongly_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        if self.n == 1 {
            return true;
        }
        let forward = self.bfs_distances(0);
        if forward.iter().any(|d| d.is_none()) {
            return false;
        }
        // reverse reachability from node 0
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0);
        while let Some(u) = queue.pop_front() {
            for &v in &self.in_adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Connectivity of the undirected view (edge directions ignored).
    pub fn is_connected_undirected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0);
        while let Some(u) = queue.pop_front() {
            for &v in self.out_adj[u].iter().chain(self.in_adj[u].iter()) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Maximum over ordered pairs of the shortest directed path length.
    pub fn diameter(&self) -> Result<usize> {
        if !self.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        let mut diam = 0;
        for src in 0..self.n {
            for d in self.bfs_distances(src).iter().flatten() {
                diam = diam.max(*d);
            }
        }
        Ok(diam)
    }

    /// Per-node degree in the undirected view, ignoring self-loops.
    pub fn undirected_degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let mut nbrs: Vec<usize> = self.out_adj[i]
                    .iter()
                    .chain(self.in_adj[i].iter())
                    .copied()
                    .collect();
                nbrs.sort_unstable();
                nbrs.dedup();
                nbrs.len()
            })
            .collect()
    }

    pub fn max_undirected_degree(&self) -> usize {
        self.undirected_degrees().into_iter().max().unwrap_or(0)
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn cycle(n: usize) -> Self {
        let mut g = DirectedGraph::new(n);
        for i in 0..n {
            if n > 1 {
                g.add_edge(i, (i + 1) % n).unwrap();
            }
        }
        g
    }

    /// Complete directed graph (both directions, no self-loops).
    pub fn complete(n: usize) -> Self {
        let mut g = DirectedGraph::new(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    g.add_edge(i, j).unwrap();
                }
            }
        }
        g
    }

    /// Erdős–Rényi undirected graph conditioned on connectivity by rejection,
    /// returned with both directions of every edge so the digraph is symmetric.
    pub fn random_connected<R: Rng>(n: usize, edge_prob: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        for _ in 0..10_000 {
            let mut g = DirectedGraph::new(n);
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < edge_prob {
                        g.add_edge(i, j).unwrap();
                        g.add_edge(j, i).unwrap();
                    }
                }
            }
            if g.is_connected_undirected() && (n == 1 || g.edge_count() > 0) {
                return Ok(g);
            }
        }
        Err(Error::invalid(
            "failed to sample a connected graph; raise edge_prob",
        ))
    }

    /// Directed Erdős–Rényi graph conditioned on strong connectivity by rejection.
    pub fn random_strongly_connected<R: Rng>(
        n: usize,
        edge_prob: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        for _ in 0..10_000 {
            let mut g = DirectedGraph::new(n);
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random::<f64>() < edge_prob {
                        g.add_edge(i, j).unwrap();
                    }
                }
            }
            if g.is_strongly_connected() {
                return Ok(g);
            }
        }
        Err(Error::invalid(
            "failed to sample a strongly connected digraph; raise edge_prob",
        ))
    }

    /// Read the edge-list format: first line `n m`, then `m` lines `sender receiver`.
    pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("empty graph file"))??;
        let mut it = header.split_whitespace();
        let n: usize = it
            .next()
            .ok_or_else(|| Error::parse("missing node count"))?
            .parse()
            .map_err(|e| Error::parse(format!("bad node count: {e}")))?;
        let m: usize = it
            .next()
            .ok_or_else(|| Error::parse("missing edge count"))?
            .parse()
            .map_err(|e| Error::parse(format!("bad edge count: {e}")))?;
        let mut g = DirectedGraph::new(n);
        let mut count = 0;
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let s: usize = it
                .next()
                .ok_or_else(|| Error::parse("missing sender"))?
                .parse()
                .map_err(|e| Error::parse(format!("bad sender: {e}")))?;
            let r: usize = it
                .next()
                .ok_or_else(|| Error::parse("missing receiver"))?
                .parse()
                .map_err(|e| Error::parse(format!("bad receiver: {e}")))?;
            g.add_edge(s, r)?;
            count += 1;
        }
        if count != m {
            return Err(Error::parse(format!(
                "header announced {m} edges but {count} were listed"
            )));
        }
        Ok(g)
    }

    /// Write the edge-list format (regular edges first, then self-loops).
    pub fn write_edge_list<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(
            writer,
            "{} {}",
            self.n,
            self.edges.len() + self.self_loops.len()
        )?;
        for &(s, r) in &self.edges {
            writeln!(writer, "{s} {r}")?;
        }
        for &i in &self.self_loops {
            writeln!(writer, "{i} {i}")?;
        }
        Ok(())
    }
}
