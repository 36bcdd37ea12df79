//! Decorated trees and their dual cycle words.
//!
//! Turning around a decorated tree (root = smallest loop vertex, children in
//! increasing label order) reads every resolvent line of every loop vertex in
//! one cyclic order. Tree lines between loop vertices become pairs of
//! half-lines on the cycle; lines to counterterm leaves become dots.

use serde::{Deserialize, Serialize};

use super::trees::LabeledTree;
use crate::error::{LveError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecoratedTree {
    tree: LabeledTree,
    counterterm: Vec<bool>,
}

impl DecoratedTree {
    /// `counterterm[v]` marks vertex `v` as a counterterm; only leaves may be marked.
    pub fn new(tree: LabeledTree, counterterm: Vec<bool>) -> Result<Self> {
        if counterterm.len() != tree.n_vertices() {
            return Err(LveError::InvalidTree("one decoration flag per vertex required".into()));
        }
        for (v, &ct) in counterterm.iter().enumerate() {
            if ct && tree.degree(v) != 1 {
                return Err(LveError::InvalidTree(format!("counterterm on non-leaf vertex {v}")));
            }
        }
        Ok(Self { tree, counterterm })
    }

    pub fn undecorated(tree: LabeledTree) -> Self {
        let n = tree.n_vertices();
        Self { tree, counterterm: vec![false; n] }
    }

    pub fn tree(&self) -> &LabeledTree {
        &self.tree
    }

    pub fn is_counterterm(&self, v: usize) -> bool {
        self.counterterm[v]
    }

    pub fn n_vertices(&self) -> usize {
        self.tree.n_vertices()
    }

    pub fn n_counterterms(&self) -> usize {
        self.counterterm.iter().filter(|&&c| c).count()
    }

    pub fn loop_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_vertices()).filter(|&v| !self.counterterm[v])
    }

    /// Loop vertices that are leaves of the tree (simple loops).
    pub fn simple_loops(&self) -> usize {
        self.loop_vertices().filter(|&v| self.tree.degree(v) == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DualObject {
    CounterDot,
    HalfLine,
    LeafResolvent,
    Resolvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DualCycleWord {
    pub objects: Vec<DualObject>,
    /// Pairs of positions (`a < b`) of matched half-lines.
    pub pairing: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DualCounts {
    pub counter_dots: usize,
    pub half_lines: usize,
    pub leaf_resolvents: usize,
    pub resolvents: usize,
}

impl DualCycleWord {
    pub fn counts(&self) -> DualCounts {
        let count = |o: DualObject| self.objects.iter().filter(|&&x| x == o).count();
        DualCounts {
            counter_dots: count(DualObject::CounterDot),
            half_lines: count(DualObject::HalfLine),
            leaf_resolvents: count(DualObject::LeafResolvent),
            resolvents: count(DualObject::Resolvent),
        }
    }

    pub fn is_non_crossing(&self) -> bool {
        for (i, &(a, b)) in self.pairing.iter().enumerate() {
            for &(c, d) in &self.pairing[i + 1..] {
                if (a < c && c < b && b < d) || (c < a && a < d && d < b) {
                    return false;
                }
            }
        }
        true
    }

    /// The two counting identities relating a word to a decorated tree with `n` vertices.
    pub fn satisfies_counting_identities(&self, n: usize) -> bool {
        let c = self.counts();
        let lines = if n == 0 { 0 } else { 2 * (n - 1) };
        c.leaf_resolvents + c.counter_dots + c.resolvents == lines
            && c.leaf_resolvents + c.resolvents == c.counter_dots + c.half_lines
            && c.half_lines == 2 * self.pairing.len()
    }
}

fn root_of(t: &DecoratedTree) -> Result<usize> {
    t.loop_vertices()
        .next()
        .ok_or_else(|| LveError::InvalidTree("decorated tree has no loop vertex".into()))
}

/// Reads the decorated tree as a single cycle.
pub fn dualize(t: &DecoratedTree) -> Result<DualCycleWord> {
    let root = root_of(t)?;
    let adj = t.tree.adjacency();
    let mut word = DualCycleWord { objects: Vec::new(), pairing: Vec::new() };
    walk(t, &adj, root, None, &mut word);
    Ok(word)
}

fn walk(t: &DecoratedTree, adj: &[Vec<usize>], v: usize, parent: Option<usize>, word: &mut DualCycleWord) {
    let segment = if adj[v].len() == 1 { DualObject::LeafResolvent } else { DualObject::Resolvent };
    let children: Vec<usize> = adj[v].iter().copied().filter(|&u| Some(u) != parent).collect();
    let edge = |c: usize, word: &mut DualCycleWord| {
        if t.counterterm[c] {
            word.objects.push(DualObject::CounterDot);
        } else {
            let open = word.objects.len();
            word.objects.push(DualObject::HalfLine);
            walk(t, adj, c, Some(v), word);
            let close = word.objects.len();
            word.objects.push(DualObject::HalfLine);
            word.pairing.push((open, close));
        }
    };
    if parent.is_none() {
        for &c in &children {
            edge(c, word);
            word.objects.push(segment);
        }
    } else {
        for &c in &children {
            word.objects.push(segment);
            edge(c, word);
        }
        word.objects.push(segment);
    }
}

/// Rebuilds the decorated tree from a dual word. Vertices are numbered in the
/// order they are met along the cycle, the root region being vertex 0.
pub fn primalize(word: &DualCycleWord) -> Result<DecoratedTree> {
    if !word.is_non_crossing() {
        return Err(LveError::InvalidTree("pairing crosses".into()));
    }
    let mut partner = vec![usize::MAX; word.objects.len()];
    for &(a, b) in &word.pairing {
        if word.objects.get(a) != Some(&DualObject::HalfLine) || word.objects.get(b) != Some(&DualObject::HalfLine) {
            return Err(LveError::InvalidTree("pairing must join half-lines".into()));
        }
        partner[a] = b;
        partner[b] = a;
    }
    let mut edges = Vec::new();
    let mut ct = vec![false];
    region(word, &partner, 0, word.objects.len(), 0, &mut edges, &mut ct)?;
    let tree = LabeledTree::new(ct.len(), edges)?;
    DecoratedTree::new(tree, ct)
}

fn region(
    word: &DualCycleWord,
    partner: &[usize],
    start: usize,
    end: usize,
    vertex: usize,
    edges: &mut Vec<(usize, usize)>,
    ct: &mut Vec<bool>,
) -> Result<()> {
    let mut i = start;
    while i < end {
        match word.objects[i] {
            DualObject::CounterDot => {
                let id = ct.len();
                ct.push(true);
                edges.push((vertex, id));
                i += 1;
            }
            DualObject::HalfLine => {
                let close = partner[i];
                if close == usize::MAX || close <= i || close >= end {
                    return Err(LveError::InvalidTree(format!("unmatched half-line at {i}")));
                }
                let id = ct.len();
                ct.push(false);
                edges.push((vertex, id));
                region(word, partner, i + 1, close, id, edges, ct)?;
                i = close + 1;
            }
            DualObject::LeafResolvent | DualObject::Resolvent => i += 1,
        }
    }
    Ok(())
}

/// Relabels vertices in the order `dualize` meets them, which is the labeling `primalize` returns.
pub fn canonical_relabel(t: &DecoratedTree) -> Result<DecoratedTree> {
    let root = root_of(t)?;
    let adj = t.tree.adjacency();
    let n = t.n_vertices();
    let mut order = vec![usize::MAX; n];
    let mut next = 0;
    fn visit(adj: &[Vec<usize>], v: usize, parent: Option<usize>, order: &mut [usize], next: &mut usize) {
        order[v] = *next;
        *next += 1;
        for &c in &adj[v] {
            if Some(c) != parent {
                visit(adj, c, Some(v), order, next);
            }
        }
    }
    visit(&adj, root, None, &mut order, &mut next);
    let edges: Vec<(usize, usize)> = t.tree.edges().iter().map(|&(a, b)| (order[a], order[b])).collect();
    let mut ct = vec![false; n];
    for v in 0..n {
        ct[order[v]] = t.counterterm[v];
    }
    DecoratedTree::new(LabeledTree::new(n, edges)?, ct)
}

/// Random decorated tree: uniform labeled tree, each leaf marked as a counterterm
/// with probability `p_counterterm`, keeping at least one loop vertex.
pub fn random_decorated_tree<R: rand::Rng + ?Sized>(n: usize, p_counterterm: f64, rng: &mut R) -> DecoratedTree {
    let tree = super::trees::random_tree(n, rng);
    let mut ct: Vec<bool> = (0..n).map(|v| tree.degree(v) == 1 && rng.gen_bool(p_counterterm)).collect();
    if ct.iter().all(|&c| c) {
        ct[0] = false;
    }
    DecoratedTree::new(tree, ct).expect("only leaves are marked")
}

#[cfg(test)]
mod tests {
    use super::*;
    use DualObject::*;

    #[test]
    fn two_loop_vertices() {
        let t = DecoratedTree::undecorated(LabeledTree::new(2, [(0, 1)]).unwrap());
        let w = dualize(&t).unwrap();
        assert_eq!(w.objects, vec![HalfLine, LeafResolvent, HalfLine, LeafResolvent]);
        assert_eq!(w.pairing, vec![(0, 2)]);
        assert!(w.satisfies_counting_identities(2));
    }

    #[test]
    fn loop_vertex_with_counterterm_leaf() {
        let t = DecoratedTree::new(LabeledTree::new(2, [(0, 1)]).unwrap(), vec![false, true]).unwrap();
        let w = dualize(&t).unwrap();
        assert_eq!(w.objects, vec![CounterDot, LeafResolvent]);
        assert!(w.pairing.is_empty());
        assert!(w.satisfies_counting_identities(2));
    }

    #[test]
    fn figure_scale_tree() {
        // 8 loop vertices on a path 0..8, 11 counterterm leaves hung on them.
        let mut edges: Vec<(usize, usize)> = (0..7).map(|i| (i, i + 1)).collect();
        for c in 0..11 {
            edges.push((c % 8, 8 + c));
        }
        let mut ct = vec![false; 8];
        ct.extend(std::iter::repeat(true).take(11));
        let t = DecoratedTree::new(LabeledTree::new(19, edges).unwrap(), ct).unwrap();
        assert_eq!(t.n_counterterms(), 11);
        let w = dualize(&t).unwrap();
        let c = w.counts();
        assert_eq!(c.counter_dots, 11);
        assert_eq!(c.leaf_resolvents + c.counter_dots + c.resolvents, 2 * 18);
        assert!(w.satisfies_counting_identities(19));
        assert!(w.is_non_crossing());
    }

    #[test]
    fn counterterm_on_internal_vertex_rejected() {
        let t = LabeledTree::new(3, [(0, 1), (1, 2)]).unwrap();
        assert!(DecoratedTree::new(t, vec![false, true, false]).is_err());
    }

    #[test]
    fn crossing_pairing_rejected() {
        let w = DualCycleWord {
            objects: vec![HalfLine, HalfLine, HalfLine, HalfLine],
            pairing: vec![(0, 2), (1, 3)],
        };
        assert!(!w.is_non_crossing());
        assert!(primalize(&w).is_err());
    }
}
