//! Labeled trees, Prüfer-code enumeration and path-infimum weakening matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LveError, Result};

/// Default cap on the number of vertices for exhaustive tree enumeration.
pub const DEFAULT_TREE_CAP: usize = 9;

/// A tree on the vertex set `0..n`. Edges are stored with `a < b`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledTree {
    n: usize,
    edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    n: usize,
    edges: Vec<[usize; 2]>,
}

impl LabeledTree {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(LveError::InvalidTree("a tree needs at least one vertex".into()));
        }
        let mut norm: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        norm.sort_unstable();
        if norm.len() != n - 1 {
            return Err(LveError::InvalidTree(format!("{} edges for {} vertices", norm.len(), n)));
        }
        let mut uf = UnionFind::new(n);
        for &(a, b) in &norm {
            if a == b || b >= n {
                return Err(LveError::InvalidTree(format!("bad edge ({a}, {b})")));
            }
            if !uf.union(a, b) {
                return Err(LveError::InvalidTree(format!("edge ({a}, {b}) closes a cycle")));
            }
        }
        Ok(Self { n, edges: norm })
    }

    pub fn single_vertex() -> Self {
        Self { n: 1, edges: Vec::new() }
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.binary_search(&key).ok()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    /// Neighbours of every vertex, each list sorted increasingly.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Edge indices along the unique path from `from` to `to`.
    pub fn path_edges(&self, from: usize, to: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut parent = vec![usize::MAX; self.n];
        let mut stack = vec![from];
        parent[from] = from;
        while let Some(v) = stack.pop() {
            if v == to {
                break;
            }
            for &u in &adj[v] {
                if parent[u] == usize::MAX {
                    parent[u] = v;
                    stack.push(u);
                }
            }
        }
        let mut path = Vec::new();
        let mut v = to;
        while v != from {
            let p = parent[v];
            path.push(self.edge_index(p, v).expect("tree edge"));
            v = p;
        }
        path.reverse();
        path
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(TreeJson { n: self.n, edges: self.edges.iter().map(|&(a, b)| [a, b]).collect() })
            .expect("serializable")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let t: TreeJson = serde_json::from_value(value.clone())
            .map_err(|e| LveError::InvalidTree(format!("malformed tree json: {e}")))?;
        Self::new(t.n, t.edges.into_iter().map(|[a, b]| (a, b)))
    }

    /// Prüfer code of the tree (length `n - 2`, empty for `n <= 2`).
    pub fn prufer_code(&self) -> Vec<usize> {
        if self.n <= 2 {
            return Vec::new();
        }
        let mut adj: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); self.n];
        for &(a, b) in &self.edges {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let mut leaves: std::collections::BTreeSet<usize> = (0..self.n).filter(|&v| adj[v].len() == 1).collect();
        let mut code = Vec::with_capacity(self.n - 2);
        for _ in 0..self.n - 2 {
            let leaf = *leaves.iter().next().expect("a tree always has a leaf");
            leaves.remove(&leaf);
            let nb = *adj[leaf].iter().next().expect("leaf has a neighbour");
            adj[nb].remove(&leaf);
            adj[leaf].clear();
            code.push(nb);
            if adj[nb].len() == 1 {
                leaves.insert(nb);
            }
        }
        code
    }

    /// Decodes a Prüfer sequence over `0..n` into a tree on `n` vertices.
    pub fn from_prufer(n: usize, code: &[usize]) -> Result<Self> {
        if n <= 2 {
            if !code.is_empty() {
                return Err(LveError::InvalidTree("Prüfer code must be empty for n <= 2".into()));
            }
            return if n == 1 { Ok(Self::single_vertex()) } else { Self::new(2, [(0, 1)]) };
        }
        if code.len() != n - 2 || code.iter().any(|&c| c >= n) {
            return Err(LveError::InvalidTree(format!("invalid Prüfer code for n = {n}")));
        }
        Ok(Self { n, edges: decode_prufer(n, code) })
    }
}

fn decode_prufer(n: usize, code: &[usize]) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &c in code {
        degree[c] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut ptr = 0;
    while degree[ptr] != 1 {
        ptr += 1;
    }
    let mut leaf = ptr;
    for &v in code {
        edges.push(if leaf < v { (leaf, v) } else { (v, leaf) });
        degree[v] -= 1;
        if degree[v] == 1 && v < ptr {
            leaf = v;
        } else {
            ptr += 1;
            while degree[ptr] != 1 {
                ptr += 1;
            }
            leaf = ptr;
        }
    }
    let last = n - 1;
    edges.push(if leaf < last { (leaf, last) } else { (last, leaf) });
    edges.sort_unstable();
    edges
}

/// Lazy enumeration of all labeled trees on `n` vertices in lexicographic Prüfer order.
pub struct LabeledTrees {
    n: usize,
    code: Vec<usize>,
    done: bool,
}

impl Iterator for LabeledTrees {
    type Item = LabeledTree;

    fn next(&mut self) -> Option<LabeledTree> {
        if self.done {
            return None;
        }
        let tree = LabeledTree::from_prufer(self.n, &self.code).expect("valid code");
        // odometer increment, last position fastest
        let mut i = self.code.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.code[i] += 1;
            if self.code[i] < self.n {
                break;
            }
            self.code[i] = 0;
        }
        Some(tree)
    }
}

pub fn labeled_trees(n: usize, cap: usize) -> Result<LabeledTrees> {
    if n == 0 {
        return Err(LveError::Domain("n must be positive".into()));
    }
    if n > cap {
        return Err(LveError::EnumerationLimit { requested: n, cap });
    }
    Ok(LabeledTrees { n, code: vec![0; n.saturating_sub(2)], done: false })
}

/// All labeled trees on `n` vertices, each exactly once.
pub fn enumerate_labeled_trees(n: usize) -> Result<Vec<LabeledTree>> {
    enumerate_labeled_trees_capped(n, DEFAULT_TREE_CAP)
}

pub fn enumerate_labeled_trees_capped(n: usize, cap: usize) -> Result<Vec<LabeledTree>> {
    Ok(labeled_trees(n, cap)?.collect())
}

/// Uniformly random labeled tree via a random Prüfer code.
pub fn random_tree<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> LabeledTree {
    let code: Vec<usize> = (0..n.saturating_sub(2)).map(|_| rng.gen_range(0..n)).collect();
    LabeledTree::from_prufer(n, &code).expect("random code is valid")
}

/// Weakening parameters, one per tree edge (indexed like `LabeledTree::edges`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakeningAssignment {
    values: Vec<f64>,
}

impl WeakeningAssignment {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(LveError::InvalidAssignment(format!("weakening parameter {bad} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    /// Builds an assignment from explicit `(a, b) -> w` entries; every tree edge must be present.
    pub fn from_pairs(tree: &LabeledTree, pairs: &[((usize, usize), f64)]) -> Result<Self> {
        let mut values = vec![f64::NAN; tree.edges().len()];
        for &((a, b), w) in pairs {
            let idx = tree
                .edge_index(a, b)
                .ok_or_else(|| LveError::InvalidAssignment(format!("({a}, {b}) is not a tree edge")))?;
            values[idx] = w;
        }
        if let Some(i) = values.iter().position(|w| w.is_nan()) {
            return Err(LveError::InvalidAssignment(format!("missing weight for edge {:?}", tree.edges()[i])));
        }
        Self::new(values)
    }

    pub fn uniform(n_edges: usize, w: f64) -> Result<Self> {
        Self::new(vec![w; n_edges])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Matrix with unit diagonal whose `(v, v')` entry is the minimum weakening
/// parameter along the tree path joining `v` and `v'`.
pub fn path_infimum_matrix(tree: &LabeledTree, w: &WeakeningAssignment) -> Result<DMatrix<f64>> {
    if w.values().len() != tree.edges().len() {
        return Err(LveError::InvalidAssignment(format!(
            "{} weights for {} tree edges",
            w.values().len(),
            tree.edges().len()
        )));
    }
    Ok(path_infimum_generic(tree, w.values(), 1.0, f64::min))
}

/// Path-infimum over an arbitrary totally ordered edge label on a forest;
/// pairs in different components get `disconnected`.
pub(crate) fn forest_path_infimum<T>(
    n: usize,
    edges: &[(usize, usize)],
    edge_values: &[T],
    diag: T,
    disconnected: T,
    min: impl Fn(T, T) -> T,
) -> DMatrix<T>
where
    T: nalgebra::Scalar + Copy,
{
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, i));
        adj[b].push((a, i));
    }
    let mut m = DMatrix::from_element(n, n, disconnected);
    for root in 0..n {
        m[(root, root)] = diag;
        let mut best: Vec<Option<T>> = vec![None; n];
        let mut visited = vec![false; n];
        visited[root] = true;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &(u, e) in &adj[v] {
                if !visited[u] {
                    visited[u] = true;
                    let x = edge_values[e];
                    best[u] = Some(match best[v] {
                        Some(b) => min(b, x),
                        None => x,
                    });
                    stack.push(u);
                }
            }
        }
        for u in 0..n {
            if let Some(b) = best[u] {
                m[(root, u)] = b;
            }
        }
    }
    m
}

pub(crate) fn path_infimum_generic<T>(tree: &LabeledTree, edge_values: &[T], diag: T, min: impl Fn(T, T) -> T) -> DMatrix<T>
where
    T: nalgebra::Scalar + Copy,
{
    forest_path_infimum(tree.n_vertices(), tree.edges(), edge_values, diag, diag, min)
}

/// Couplings of a forest interpolation: unit diagonal, path minimum of `w`
/// inside a component, zero across components.
pub fn forest_path_infimum_matrix(n: usize, forest: &[(usize, usize)], w: &[f64]) -> Result<DMatrix<f64>> {
    if w.len() != forest.len() {
        return Err(LveError::InvalidAssignment(format!("{} weights for {} forest edges", w.len(), forest.len())));
    }
    if let Some(bad) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(LveError::InvalidAssignment(format!("weight {bad} outside [0, 1]")));
    }
    Ok(forest_path_infimum(n, forest, w, 1.0, 0.0, f64::min))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn is_positive_semidefinite(m: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut y = x;
        while self.parent[y] != r {
            let next = self.parent[y];
            self.parent[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn small_tree_counts() {
        assert_eq!(enumerate_labeled_trees(1).unwrap().len(), 1);
        assert!(enumerate_labeled_trees(1).unwrap()[0].edges().is_empty());
        assert_eq!(enumerate_labeled_trees(2).unwrap().len(), 1);
        assert_eq!(enumerate_labeled_trees(4).unwrap().len(), 16);
    }

    #[test]
    fn trees_are_distinct_and_code_round_trips() {
        let trees = enumerate_labeled_trees(5).unwrap();
        let set: HashSet<_> = trees.iter().cloned().collect();
        assert_eq!(set.len(), 125);
        for t in &trees {
            assert_eq!(LabeledTree::from_prufer(5, &t.prufer_code()).unwrap(), *t);
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert_eq!(
            enumerate_labeled_trees(10).unwrap_err(),
            LveError::EnumerationLimit { requested: 10, cap: 9 }
        );
    }

    #[test]
    fn invalid_trees_rejected() {
        assert!(LabeledTree::new(3, [(0, 1)]).is_err());
        assert!(LabeledTree::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(LabeledTree::new(4, [(0, 1), (1, 2), (0, 2)]).is_err());
    }

    #[test]
    fn path_infimum_examples() {
        let path = LabeledTree::new(3, [(0, 1), (1, 2)]).unwrap();
        let w = WeakeningAssignment::from_pairs(&path, &[((0, 1), 0.5), ((1, 2), 0.2)]).unwrap();
        let m = path_infimum_matrix(&path, &w).unwrap();
        assert_eq!(m[(0, 2)], 0.2);
        assert_eq!(m[(0, 1)], 0.5);
        assert_eq!(m[(1, 1)], 1.0);

        let star = LabeledTree::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let ones = WeakeningAssignment::uniform(3, 1.0).unwrap();
        let m = path_infimum_matrix(&star, &ones).unwrap();
        assert!(m.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn missing_weight_is_an_error() {
        let path = LabeledTree::new(3, [(0, 1), (1, 2)]).unwrap();
        assert!(matches!(
            WeakeningAssignment::from_pairs(&path, &[((0, 1), 0.5)]),
            Err(LveError::InvalidAssignment(_))
        ));
        let short = WeakeningAssignment::new(vec![0.3]).unwrap();
        assert!(path_infimum_matrix(&path, &short).is_err());
        assert!(WeakeningAssignment::new(vec![1.5]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = LabeledTree::new(4, [(2, 0), (1, 2), (3, 2)]).unwrap();
        let v = t.to_json();
        assert_eq!(v, serde_json::json!({"n": 4, "edges": [[0, 2], [1, 2], [2, 3]]}));
        assert_eq!(LabeledTree::from_json(&v).unwrap(), t);
    }
}
