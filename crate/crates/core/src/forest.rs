//! Taylor forest interpolation of functions of pair couplings.
//!
//! A function `f` of the symmetric coupling matrix `X` (unit diagonal) is
//! written as a sum over forests `F` on the vertex set of
//! `∫ dw_F  ∂_F f (X^F(w))`, where `X^F(w)` carries, for vertices joined in
//! `F`, the smallest `w` on the joining path, and zero otherwise.

use std::cell::RefCell;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{LveError, Result};
use crate::graph::trees::{enumerate_labeled_trees, forest_path_infimum, forest_path_infimum_matrix};
use crate::quadrature::{gauss_hermite, gauss_legendre_unit};

pub const MAX_FOREST_VERTICES: usize = 6;
pub const MAX_W_DIM: usize = 5;

/// Largest derivative order the finite-difference fallback provides.
pub const MAX_FINITE_DIFFERENCE_ORDER: usize = 3;

const FD_STEP: f64 = 1e-4;

pub fn n_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Lexicographic index of the pair `{i, j}`, `i != j`.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).collect()
}

pub trait PairFunction {
    fn n(&self) -> usize;

    fn eval(&self, x: &DMatrix<f64>) -> f64;

    /// Mixed partial derivative with respect to the listed (distinct) pair couplings.
    fn derivative(&self, pairs: &[(usize, usize)], x: &DMatrix<f64>) -> Result<f64> {
        finite_difference(self, pairs, x)
    }

    /// Exact symbolic representation, when available.
    fn as_polynomial(&self) -> Option<&PairPolynomial> {
        None
    }
}

fn shifted<F: PairFunction + ?Sized>(f: &F, x: &DMatrix<f64>, pairs: &[(usize, usize)], signs: usize, h: f64) -> f64 {
    let mut y = x.clone();
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let s = if signs >> k & 1 == 1 { -h } else { h };
        y[(a, b)] += s;
        y[(b, a)] += s;
    }
    f.eval(&y)
}

fn central_difference<F: PairFunction + ?Sized>(f: &F, pairs: &[(usize, usize)], x: &DMatrix<f64>, h: f64) -> f64 {
    let k = pairs.len();
    let mut acc = 0.0;
    for signs in 0..(1usize << k) {
        let parity = if signs.count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        acc += parity * shifted(f, x, pairs, signs, h);
    }
    acc / (2.0 * h).powi(k as i32)
}

/// Central differences with one Richardson step.
pub fn finite_difference<F: PairFunction + ?Sized>(f: &F, pairs: &[(usize, usize)], x: &DMatrix<f64>) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f.eval(x));
    }
    if pairs.len() > MAX_FINITE_DIFFERENCE_ORDER {
        return Err(LveError::Capability(format!(
            "finite differences provide derivatives up to order {MAX_FINITE_DIFFERENCE_ORDER}, requested {}",
            pairs.len()
        )));
    }
    let coarse = central_difference(f, pairs, x, FD_STEP);
    let fine = central_difference(f, pairs, x, FD_STEP / 2.0);
    Ok((4.0 * fine - coarse) / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Monomial {
    pub coefficient: f64,
    /// Exponent of each pair variable, in `pairs(n)` order.
    pub exponents: Vec<u32>,
}

/// Polynomial in the pair couplings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairPolynomial {
    n: usize,
    terms: Vec<Monomial>,
}

impl PairPolynomial {
    pub fn new(n: usize, terms: Vec<Monomial>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.exponents.len() != n_pairs(n)) {
            return Err(LveError::Domain(format!(
                "monomial has {} exponents, expected {}",
                t.exponents.len(),
                n_pairs(n)
            )));
        }
        Ok(Self { n, terms })
    }

    /// Random multilinear polynomial: every subset of pairs gets a coefficient in `[-1, 1]`.
    pub fn random_multilinear<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let p = n_pairs(n);
        let terms = (0..(1usize << p))
            .map(|mask| Monomial {
                coefficient: rng.gen_range(-1.0..1.0),
                exponents: (0..p).map(|k| (mask >> k & 1) as u32).collect(),
            })
            .collect();
        Self { n, terms }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn differentiate(&self, wrt: &[(usize, usize)]) -> PairPolynomial {
        let mut terms = Vec::new();
        for t in &self.terms {
            let mut m = t.clone();
            let mut alive = true;
            for &(a, b) in wrt {
                let k = pair_index(self.n, a, b);
                if m.exponents[k] == 0 {
                    alive = false;
                    break;
                }
                m.coefficient *= m.exponents[k] as f64;
                m.exponents[k] -= 1;
            }
            if alive {
                terms.push(m);
            }
        }
        PairPolynomial { n: self.n, terms }
    }

    /// Exact value of `∫ dw  P(X^F(w))` over `[0,1]^|F|`, by splitting the cube
    /// into simplices ordered by the `w` values.
    pub fn forest_integral(&self, forest: &[(usize, usize)]) -> f64 {
        let k = forest.len();
        let pair_list = pairs(self.n);
        let mut total = 0.0;
        for order in permutations(k) {
            // rank[e] = position of edge e in increasing w order
            let mut rank = vec![0usize; k];
            for (pos, &e) in order.iter().enumerate() {
                rank[e] = pos;
            }
            let ranks = forest_path_infimum(self.n, forest, &rank, usize::MAX, usize::MAX - 1, usize::min);
            for t in &self.terms {
                let mut m = vec![0u32; k];
                let mut vanishes = false;
                for (p, &e) in t.exponents.iter().enumerate() {
                    if e == 0 {
                        continue;
                    }
                    let (a, b) = pair_list[p];
                    let r = ranks[(a, b)];
                    if r == usize::MAX - 1 {
                        vanishes = true;
                        break;
                    }
                    m[r] += e;
                }
                if vanishes {
                    continue;
                }
                let mut value = t.coefficient;
                let mut cumulative = 0u64;
                for &mi in &m {
                    cumulative += mi as u64 + 1;
                    value /= cumulative as f64;
                }
                total += value;
            }
        }
        total
    }
}

impl PairFunction for PairPolynomial {
    fn n(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &DMatrix<f64>) -> f64 {
        let pair_list = pairs(self.n);
        self.terms
            .iter()
            .map(|t| {
                t.coefficient
                    * t.exponents
                        .iter()
                        .zip(&pair_list)
                        .map(|(&e, &(a, b))| x[(a, b)].powi(e as i32))
                        .product::<f64>()
            })
            .sum()
    }

    fn derivative(&self, wrt: &[(usize, usize)], x: &DMatrix<f64>) -> Result<f64> {
        Ok(self.differentiate(wrt).eval(x))
    }

    fn as_polynomial(&self) -> Option<&PairPolynomial> {
        Some(self)
    }
}

/// `exp(Σ_{i<j} c_ij x_ij)`: multiplicative over components, analytic derivatives.
#[derive(Debug, Clone)]
pub struct ExponentialCoupling {
    c: DMatrix<f64>,
}

impl ExponentialCoupling {
    pub fn new(c: DMatrix<f64>) -> Self {
        Self { c }
    }

    pub fn uniform(n: usize, c: f64) -> Self {
        Self { c: DMatrix::from_element(n, n, c) }
    }
}

impl PairFunction for ExponentialCoupling {
    fn n(&self) -> usize {
        self.c.nrows()
    }

    fn eval(&self, x: &DMatrix<f64>) -> f64 {
        let n = self.n();
        pairs(n).iter().map(|&(a, b)| self.c[(a, b)] * x[(a, b)]).sum::<f64>().exp()
    }

    fn derivative(&self, wrt: &[(usize, usize)], x: &DMatrix<f64>) -> Result<f64> {
        Ok(wrt.iter().map(|&(a, b)| self.c[(a, b)]).product::<f64>() * self.eval(x))
    }
}

/// Replica function `⟨Π_v g(σ_v)⟩` under the centered Gaussian with covariance `X`.
/// `g(order, s)` returns the `order`-th derivative of `g` at `s`.
pub struct GaussianReplica<G: Fn(usize, f64) -> f64> {
    n: usize,
    g: G,
    order: usize,
}

impl<G: Fn(usize, f64) -> f64> GaussianReplica<G> {
    pub fn new(n: usize, g: G, quadrature_order: usize) -> Result<Self> {
        if n > 4 {
            return Err(LveError::CostCap(format!("tensor Gauss-Hermite replica limited to 4 vertices, got {n}")));
        }
        Ok(Self { n, g, order: quadrature_order })
    }

    fn expectation(&self, x: &DMatrix<f64>, orders: &[usize]) -> f64 {
        let n = self.n;
        let eig = x.clone().symmetric_eigen();
        let mut root = DMatrix::zeros(n, n);
        for k in 0..n {
            let s = eig.eigenvalues[k].max(0.0).sqrt();
            for i in 0..n {
                root[(i, k)] = eig.eigenvectors[(i, k)] * s;
            }
        }
        let (nodes, weights) = gauss_hermite(self.order);
        let z: Vec<f64> = nodes.iter().map(|t| t * std::f64::consts::SQRT_2).collect();
        let w: Vec<f64> = weights.iter().map(|t| t / std::f64::consts::PI.sqrt()).collect();
        let mut idx = vec![0usize; n];
        let mut total = 0.0;
        loop {
            let mut weight = 1.0;
            for &i in &idx {
                weight *= w[i];
            }
            let mut value = weight;
            for v in 0..n {
                let s: f64 = (0..n).map(|k| root[(v, k)] * z[idx[k]]).sum();
                value *= (self.g)(orders[v], s);
            }
            total += value;
            let mut d = 0;
            loop {
                if d == n {
                    return total;
                }
                idx[d] += 1;
                if idx[d] < self.order {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
}

impl<G: Fn(usize, f64) -> f64> PairFunction for GaussianReplica<G> {
    fn n(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &DMatrix<f64>) -> f64 {
        self.expectation(x, &vec![0; self.n])
    }

    fn derivative(&self, wrt: &[(usize, usize)], x: &DMatrix<f64>) -> Result<f64> {
        let mut orders = vec![0usize; self.n];
        for &(a, b) in wrt {
            orders[a] += 1;
            orders[b] += 1;
        }
        Ok(self.expectation(x, &orders))
    }
}

/// All acyclic edge sets on `0..n`.
pub fn enumerate_forests(n: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    if n > MAX_FOREST_VERTICES {
        return Err(LveError::EnumerationLimit { requested: n, cap: MAX_FOREST_VERTICES });
    }
    let pair_list = pairs(n);
    let mut out = Vec::new();
    for mask in 0..(1usize << pair_list.len()) {
        let edges: Vec<(usize, usize)> = (0..pair_list.len()).filter(|&k| mask >> k & 1 == 1).map(|k| pair_list[k]).collect();
        if is_acyclic(n, &edges) {
            out.push(edges);
        }
    }
    out.sort_by_key(|e| e.len());
    Ok(out)
}

fn is_acyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    true
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    fn rec(i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for j in i..cur.len() {
            cur.swap(i, j);
            rec(i + 1, cur, out);
            cur.swap(i, j);
        }
    }
    rec(0, &mut current, &mut out);
    out
}

#[derive(Debug, Clone, Copy)]
pub struct WQuadratureOptions {
    pub order: usize,
    /// Split the cube into the `dim!` simplices of ordered `w` before integrating.
    pub simplex_split: bool,
}

impl Default for WQuadratureOptions {
    fn default() -> Self {
        Self { order: 16, simplex_split: true }
    }
}

/// Integral over `[0,1]^dim` with the default options.
pub fn w_quadrature(dim: usize, integrand: impl Fn(&[f64]) -> f64) -> Result<f64> {
    w_quadrature_with(dim, integrand, WQuadratureOptions::default())
}

pub fn w_quadrature_with(dim: usize, integrand: impl Fn(&[f64]) -> f64, opts: WQuadratureOptions) -> Result<f64> {
    if dim > MAX_W_DIM {
        return Err(LveError::EnumerationLimit { requested: dim, cap: MAX_W_DIM });
    }
    if dim == 0 {
        return Ok(integrand(&[]));
    }
    let (nodes, weights) = gauss_legendre_unit(opts.order);
    let orders = if opts.simplex_split { permutations(dim) } else { vec![(0..dim).collect()] };
    let mut total = 0.0;
    let mut w = vec![0.0; dim];
    let mut idx = vec![0usize; dim];
    for perm in &orders {
        idx.iter_mut().for_each(|i| *i = 0);
        loop {
            let mut weight = 1.0;
            if opts.simplex_split {
                // Duffy map: s_k = Π_{i >= k} u_i gives s_0 <= s_1 <= ... <= s_{d-1}
                let mut s = 1.0;
                for k in (0..dim).rev() {
                    let u = nodes[idx[k]];
                    s *= u;
                    w[perm[k]] = s;
                    weight *= weights[idx[k]] * u.powi(k as i32);
                }
            } else {
                for k in 0..dim {
                    w[k] = nodes[idx[k]];
                    weight *= weights[idx[k]];
                }
            }
            total += weight * integrand(&w);
            let mut d = 0;
            loop {
                if d == dim {
                    break;
                }
                idx[d] += 1;
                if idx[d] < opts.order {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == dim {
                break;
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestTerm {
    pub forest: Vec<(usize, usize)>,
    /// Monomials of `∂_F f` in the pair couplings (polynomial inputs only).
    pub monomials: Vec<Monomial>,
    pub value: f64,
}

impl ForestTerm {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

/// The single forest term `∫ dw ∂_F f(X^F(w))`.
pub fn forest_term<F: PairFunction + ?Sized>(f: &F, forest: &[(usize, usize)], opts: WQuadratureOptions) -> Result<ForestTerm> {
    let n = f.n();
    if let Some(p) = f.as_polynomial() {
        let d = p.differentiate(forest);
        return Ok(ForestTerm { forest: forest.to_vec(), value: d.forest_integral(forest), monomials: d.terms });
    }
    let failure = RefCell::new(None);
    let value = w_quadrature_with(
        forest.len(),
        |w| {
            let x = forest_path_infimum_matrix(n, forest, w).expect("weights in range");
            match f.derivative(forest, &x) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        },
        opts,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(ForestTerm { forest: forest.to_vec(), monomials: Vec::new(), value })
}

/// Every forest term of `f`; their sum equals `f` at all couplings one.
pub fn bkar_decompose<F: PairFunction + ?Sized>(f: &F) -> Result<Vec<ForestTerm>> {
    bkar_decompose_with(f, WQuadratureOptions::default())
}

pub fn bkar_decompose_with<F: PairFunction + ?Sized>(f: &F, opts: WQuadratureOptions) -> Result<Vec<ForestTerm>> {
    enumerate_forests(f.n())?.iter().map(|forest| forest_term(f, forest, opts)).collect()
}

pub fn forest_sum(terms: &[ForestTerm]) -> f64 {
    terms.iter().map(|t| t.value).sum()
}

pub fn all_ones(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, n, 1.0)
}

/// Sampled test of `f(X_A ⊕ X_B) f(I) = f(X_A ⊕ I) f(I ⊕ X_B)` on random bipartitions.
pub fn check_multiplicative<F: PairFunction + ?Sized>(f: &F, samples: usize, seed: u64) -> Result<()> {
    let n = f.n();
    if n < 2 {
        return Ok(());
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let id = DMatrix::identity(n, n);
    let f_id = f.eval(&id);
    for _ in 0..samples {
        let side: Vec<bool> = loop {
            let s: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            if s.iter().any(|&b| b) && s.iter().any(|&b| !b) {
                break s;
            }
        };
        // couplings of a random tree inside each block keep the matrices positive semidefinite
        let mut x_block = DMatrix::identity(n, n);
        let mut x_a = DMatrix::identity(n, n);
        let mut x_b = DMatrix::identity(n, n);
        let w: f64 = rng.gen_range(0.1..0.9);
        for (a, b) in pairs(n) {
            if side[a] == side[b] {
                x_block[(a, b)] = w;
                x_block[(b, a)] = w;
                let target = if side[a] { &mut x_a } else { &mut x_b };
                target[(a, b)] = w;
                target[(b, a)] = w;
            }
        }
        let lhs = f.eval(&x_block) * f_id;
        let rhs = f.eval(&x_a) * f.eval(&x_b);
        if (lhs - rhs).abs() > 1e-9 * lhs.abs().max(rhs.abs()).max(1e-300) {
            return Err(LveError::ContractViolation(format!(
                "function does not factorize over components: {lhs:e} vs {rhs:e}"
            )));
        }
    }
    Ok(())
}

/// Spanning-tree terms of `f`: the connected part of the forest expansion.
pub fn tree_connected_part<F: PairFunction + ?Sized>(f: &F, opts: WQuadratureOptions) -> Result<Vec<ForestTerm>> {
    check_multiplicative(f, 16, 0x5eed)?;
    let n = f.n();
    if n == 1 {
        return Ok(vec![forest_term(f, &[], opts)?]);
    }
    enumerate_labeled_trees(n)?.iter().map(|t| forest_term(f, t.edges(), opts)).collect()
}

/// `f / f(I)` restricted to a subset of vertices (others decoupled).
struct Restricted<'a, F: PairFunction + ?Sized> {
    f: &'a F,
    subset: Vec<usize>,
    norm: f64,
}

impl<F: PairFunction + ?Sized> Restricted<'_, F> {
    fn embed(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.f.n();
        let mut y = DMatrix::identity(n, n);
        for (i, &a) in self.subset.iter().enumerate() {
            for (j, &b) in self.subset.iter().enumerate() {
                y[(a, b)] = x[(i, j)];
            }
        }
        y
    }
}

impl<F: PairFunction + ?Sized> PairFunction for Restricted<'_, F> {
    fn n(&self) -> usize {
        self.subset.len()
    }

    fn eval(&self, x: &DMatrix<f64>) -> f64 {
        self.f.eval(&self.embed(x)) / self.norm
    }

    fn derivative(&self, wrt: &[(usize, usize)], x: &DMatrix<f64>) -> Result<f64> {
        let global: Vec<(usize, usize)> = wrt.iter().map(|&(a, b)| (self.subset[a], self.subset[b])).collect();
        Ok(self.f.derivative(&global, &self.embed(x))? / self.norm)
    }
}

/// Outcome of the exponential-formula check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExponentialFormula {
    /// `f(1) / f(I)`, the normalized forest sum.
    pub forest_sum: f64,
    /// Sum over set partitions of products of connected (tree) parts.
    pub partition_sum: f64,
}

/// Rebuilds the normalized forest sum from tree terms on every vertex subset:
/// `f(1)/f(I) = Σ_partitions Π_blocks A(block)`, with `A` the tree sum of the block.
pub fn exponential_formula_check<F: PairFunction + ?Sized>(f: &F, opts: WQuadratureOptions) -> Result<ExponentialFormula> {
    check_multiplicative(f, 16, 0x5eed)?;
    let n = f.n();
    if n > MAX_FOREST_VERTICES {
        return Err(LveError::EnumerationLimit { requested: n, cap: MAX_FOREST_VERTICES });
    }
    let norm = f.eval(&DMatrix::identity(n, n));
    if norm == 0.0 {
        return Err(LveError::Domain("function vanishes at zero coupling".into()));
    }
    let full = (1usize << n) - 1;
    let mut connected = vec![0.0; full + 1];
    for mask in 1..=full {
        let subset: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
        let r = Restricted { f, subset, norm };
        connected[mask] = if r.n() == 1 {
            1.0
        } else {
            enumerate_labeled_trees(r.n())?
                .iter()
                .map(|t| forest_term(&r, t.edges(), opts).map(|ft| ft.value))
                .sum::<Result<f64>>()?
        };
    }
    let mut partition = vec![0.0; full + 1];
    partition[0] = 1.0;
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        let rest = mask ^ low;
        // blocks containing the lowest vertex
        let mut sub = rest;
        let mut acc = 0.0;
        loop {
            let block = sub | low;
            acc += connected[block] * partition[mask ^ block];
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        partition[mask] = acc;
    }
    Ok(ExponentialFormula { forest_sum: f.eval(&all_ones(n)) / norm, partition_sum: partition[full] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    #[test]
    fn pair_indexing() {
        let n = 5;
        for (k, (a, b)) in pairs(n).into_iter().enumerate() {
            assert_eq!(pair_index(n, a, b), k);
            assert_eq!(pair_index(n, b, a), k);
        }
    }

    #[test]
    fn forest_counts() {
        // forests on n labeled vertices: 1, 2, 7, 38, 291
        let counts: Vec<usize> = (1..=5).map(|n| enumerate_forests(n).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 2, 7, 38, 291]);
    }

    #[test]
    fn single_pair_fundamental_theorem() {
        let p = PairPolynomial::new(2, vec![Monomial { coefficient: 1.0, exponents: vec![1] }]).unwrap();
        let terms = bkar_decompose(&p).unwrap();
        assert_eq!(terms.len(), 2);
        assert!((forest_sum(&terms) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w_quadrature_examples() {
        assert!((w_quadrature(1, |_| 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((w_quadrature(2, |w| w[0] * w[1]).unwrap() - 0.25).abs() < 1e-14);
        assert!((w_quadrature(3, |w| w[0].min(w[1])).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!(matches!(w_quadrature(6, |_| 1.0), Err(LveError::EnumerationLimit { .. })));
    }

    #[test]
    fn exact_and_quadrature_forest_integrals_agree() {
        struct Opaque(PairPolynomial);
        impl PairFunction for Opaque {
            fn n(&self) -> usize {
                self.0.n()
            }
            fn eval(&self, x: &DMatrix<f64>) -> f64 {
                self.0.eval(x)
            }
            fn derivative(&self, w: &[(usize, usize)], x: &DMatrix<f64>) -> Result<f64> {
                self.0.derivative(w, x)
            }
        }
        let mut rng = StdRng::seed_from_u64(3);
        let p = PairPolynomial::random_multilinear(4, &mut rng);
        let exact = bkar_decompose(&p).unwrap();
        let numeric = bkar_decompose(&Opaque(p)).unwrap();
        for (a, b) in exact.iter().zip(&numeric) {
            assert!((a.value - b.value).abs() < 1e-12, "{:?}", a.forest);
        }
    }

    #[test]
    fn finite_difference_capability() {
        struct Plain;
        impl PairFunction for Plain {
            fn n(&self) -> usize {
                4
            }
            fn eval(&self, x: &DMatrix<f64>) -> f64 {
                (x[(0, 1)] * x[(2, 3)]).sin() + x[(1, 2)]
            }
        }
        let x = all_ones(4);
        let d = Plain.derivative(&[(0, 1), (2, 3)], &x).unwrap();
        assert!((d - (1.0f64.cos() - 1.0f64.sin())).abs() < 1e-7);
        assert!(matches!(
            Plain.derivative(&[(0, 1), (1, 2), (2, 3), (0, 3)], &x),
            Err(LveError::Capability(_))
        ));
    }

    #[test]
    fn non_factorizing_input_rejected() {
        struct Coupled;
        impl PairFunction for Coupled {
            fn n(&self) -> usize {
                4
            }
            fn eval(&self, x: &DMatrix<f64>) -> f64 {
                1.0 + pairs(4).iter().map(|&(a, b)| x[(a, b)]).sum::<f64>()
            }
        }
        assert!(matches!(tree_connected_part(&Coupled, WQuadratureOptions::default()), Err(LveError::ContractViolation(_))));
    }

    #[test]
    fn zero_couplings_have_no_connected_part() {
        let f = ExponentialCoupling::uniform(3, 0.0);
        let trees = tree_connected_part(&f, WQuadratureOptions::default()).unwrap();
        assert!(forest_sum(&trees).abs() < 1e-15);
    }
}
