//! Loop vertex expansion amplitudes on finite lattices.
//!
//! After the intermediate-field representation and the Gaussian integration
//! of `φ`, the interaction of one replica is `V = CC + CT + W` with
//!
//! * `CC = 3λ S T²` (S sites),
//! * `CT = 2i√λ T Σ_x σ_x`,
//! * `W = -½ Tr log₂(1 + 2i√λ C σ) = Σ_{k≥2} c_k Tr (Cσ)^k`,
//!   `c_k = -½ (-1)^{k-1} (2i√λ)^k / k`.
//!
//! `log Z = Σ_n 1/n! Σ_T ∫dw ⟨Π_{l∈T} ∂_{σ_v(x_l)} ∂_{σ_v'(x_l)} Π_v V_v⟩`, where
//! the replicas have covariance `w^T(v, v') δ_xy`. Derivatives select slots of the
//! cyclic words `Tr (Cσ)^k`; remaining slots are paired by Wick's theorem.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{LveError, Result};
use crate::graph::dual::DecoratedTree;
use crate::graph::trees::{enumerate_labeled_trees, forest_path_infimum, LabeledTree};
use crate::quadrature::gauss_hermite;
use crate::wick::{model_descriptor, QuarticModel, SeriesCoefficients};

pub const MAX_LVE_ORDER: usize = 3;
pub const MAX_LVE_TREE: usize = 4;

/// How each tree line differentiates the replicated measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DerivationConvention {
    /// One derivation pair per line, no extra factor.
    SingleDerivation,
    /// A factor `1/2` per line.
    HalfPerLine,
}

impl DerivationConvention {
    pub fn line_factor(self) -> Rational64 {
        match self {
            DerivationConvention::SingleDerivation => Rational64::one(),
            DerivationConvention::HalfPerLine => Rational64::new(1, 2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DerivationConvention::SingleDerivation => "single-derivation",
            DerivationConvention::HalfPerLine => "half-per-line",
        }
    }
}

/// What a replica contributes in one term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VertexTerm {
    Constant,
    Counterterm,
    Loop { k: usize },
}

impl VertexTerm {
    fn slots(self) -> usize {
        match self {
            VertexTerm::Constant => 0,
            VertexTerm::Counterterm => 1,
            VertexTerm::Loop { k } => k,
        }
    }

    /// Rational part of the coefficient; the `(i√λ)^slots` part is tracked separately.
    fn coefficient(self) -> Rational64 {
        match self {
            VertexTerm::Constant => Rational64::from_integer(3),
            VertexTerm::Counterterm => Rational64::from_integer(2),
            VertexTerm::Loop { k } => {
                let sign = if (k - 1) % 2 == 0 { -1 } else { 1 };
                Rational64::new(sign * (1i64 << k), 2 * k as i64)
            }
        }
    }
}

/// One Wick pairing pattern of a tree amplitude.
#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeTerm {
    pub tree: Vec<(usize, usize)>,
    pub vertices: Vec<VertexTerm>,
    /// For every tree line, the slots chosen at its two ends.
    pub line_slots: Vec<(usize, usize)>,
    /// Wick pairs `((v, slot), (v', slot'))` of the undifferentiated slots.
    pub pairing: Vec<((usize, usize), (usize, usize))>,
    pub order: usize,
    /// Exact rational prefactor, including the sign from `i^{2·order}` and the line convention.
    pub prefactor: String,
    pub w_integral: String,
    /// Site sum of the covariance network times the counterterm tadpoles.
    pub trace_value: f64,
    pub value: f64,
}

struct TermContext<'a> {
    tree: &'a LabeledTree,
    vertices: &'a [VertexTerm],
    model: &'a QuarticModel,
    convention: DerivationConvention,
    offsets: Vec<usize>,
}

impl TermContext<'_> {
    fn global(&self, v: usize, s: usize) -> usize {
        self.offsets[v] + s
    }
}

/// Visits every pairing pattern of the amplitude of `tree` with the given vertex terms.
fn for_each_term(
    tree: &LabeledTree,
    vertices: &[VertexTerm],
    model: &QuarticModel,
    convention: DerivationConvention,
    visit: &mut dyn FnMut(AmplitudeTerm),
) {
    let n = tree.n_vertices();
    let mut offsets = vec![0; n + 1];
    for v in 0..n {
        offsets[v + 1] = offsets[v] + vertices[v].slots();
    }
    let ctx = TermContext { tree, vertices, model, convention, offsets };
    let mut used: Vec<Vec<bool>> = vertices.iter().map(|t| vec![false; t.slots()]).collect();
    let mut line_slots = Vec::with_capacity(tree.edges().len());
    assign_lines(&ctx, 0, &mut used, &mut line_slots, visit);
}

fn assign_lines(
    ctx: &TermContext,
    line: usize,
    used: &mut Vec<Vec<bool>>,
    line_slots: &mut Vec<(usize, usize)>,
    visit: &mut dyn FnMut(AmplitudeTerm),
) {
    let edges = ctx.tree.edges();
    if line == edges.len() {
        let free: Vec<(usize, usize)> = used
            .iter()
            .enumerate()
            .flat_map(|(v, slots)| slots.iter().enumerate().filter(|(_, u)| !**u).map(move |(s, _)| (v, s)))
            .collect();
        if free.len() % 2 == 1 {
            return;
        }
        let mut pairing = Vec::new();
        match_free(ctx, &free, &mut vec![false; free.len()], &mut pairing, line_slots, visit);
        return;
    }
    let (a, b) = edges[line];
    for sa in 0..used[a].len() {
        if used[a][sa] {
            continue;
        }
        used[a][sa] = true;
        for sb in 0..used[b].len() {
            if used[b][sb] {
                continue;
            }
            used[b][sb] = true;
            line_slots.push((sa, sb));
            assign_lines(ctx, line + 1, used, line_slots, visit);
            line_slots.pop();
            used[b][sb] = false;
        }
        used[a][sa] = false;
    }
}

fn match_free(
    ctx: &TermContext,
    free: &[(usize, usize)],
    taken: &mut Vec<bool>,
    pairing: &mut Vec<((usize, usize), (usize, usize))>,
    line_slots: &[(usize, usize)],
    visit: &mut dyn FnMut(AmplitudeTerm),
) {
    let Some(first) = taken.iter().position(|t| !t) else {
        visit(evaluate_term(ctx, line_slots, pairing));
        return;
    };
    taken[first] = true;
    for j in first + 1..free.len() {
        if taken[j] {
            continue;
        }
        taken[j] = true;
        pairing.push((free[first], free[j]));
        match_free(ctx, free, taken, pairing, line_slots, visit);
        pairing.pop();
        taken[j] = false;
    }
    taken[first] = false;
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn evaluate_term(ctx: &TermContext, line_slots: &[(usize, usize)], pairing: &[((usize, usize), (usize, usize))]) -> AmplitudeTerm {
    let n = ctx.tree.n_vertices();
    let total_slots = ctx.offsets[n];
    let mut parent: Vec<usize> = (0..total_slots).collect();
    let union = |x: usize, y: usize, parent: &mut Vec<usize>| {
        let (rx, ry) = (find(parent, x), find(parent, y));
        if rx != ry {
            parent[rx] = ry;
        }
    };
    for (l, &(sa, sb)) in line_slots.iter().enumerate() {
        let (a, b) = ctx.tree.edges()[l];
        union(ctx.global(a, sa), ctx.global(b, sb), &mut parent);
    }
    for &((v, s), (u, t)) in pairing {
        union(ctx.global(v, s), ctx.global(u, t), &mut parent);
    }
    let w_integral = w_simplex_integral(ctx.tree, pairing);

    // site classes and covariance factors between consecutive slots of each cyclic word
    let mut class_of = vec![usize::MAX; total_slots];
    let mut n_classes = 0;
    for x in 0..total_slots {
        let r = find(&mut parent, x);
        if class_of[r] == usize::MAX {
            class_of[r] = n_classes;
            n_classes += 1;
        }
        class_of[x] = class_of[r];
    }
    let mut factors = Vec::new();
    let mut tadpoles = 0;
    for (v, term) in ctx.vertices.iter().enumerate() {
        match *term {
            VertexTerm::Loop { k } => {
                for s in 0..k {
                    factors.push((class_of[ctx.global(v, s)], class_of[ctx.global(v, (s + 1) % k)]));
                }
            }
            VertexTerm::Counterterm => tadpoles += 1,
            VertexTerm::Constant => {}
        }
    }
    let mut trace_value = site_sum(&ctx.model.covariance, n_classes, &factors) * ctx.model.tadpole.powi(tadpoles);

    let mut prefactor = Rational64::one();
    let mut i_power = 0;
    let mut order = 0;
    for term in ctx.vertices {
        prefactor *= term.coefficient();
        match term {
            VertexTerm::Constant => {
                order += 1;
                // 3λ S T²: the site sum of the constant is the volume
                trace_value = ctx.model.sites() as f64 * ctx.model.tadpole.powi(2);
            }
            _ => i_power += term.slots(),
        }
    }
    // i^{i_power} with an even power
    if (i_power / 2) % 2 == 1 {
        prefactor = -prefactor;
    }
    order += i_power / 2;
    for _ in 0..ctx.tree.edges().len() {
        prefactor *= ctx.convention.line_factor();
    }
    let exact = prefactor * w_integral;
    let value = rational_to_f64(exact) * trace_value;
    AmplitudeTerm {
        tree: ctx.tree.edges().to_vec(),
        vertices: ctx.vertices.to_vec(),
        line_slots: line_slots.to_vec(),
        pairing: pairing.to_vec(),
        order,
        prefactor: prefactor.to_string(),
        w_integral: w_integral.to_string(),
        trace_value,
        value,
    }
}

fn rational_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `∫ dw Π_pairs w^T(v, v')`, exact, through the simplices of ordered `w`.
fn w_simplex_integral(tree: &LabeledTree, pairing: &[((usize, usize), (usize, usize))]) -> Rational64 {
    let k = tree.edges().len();
    if k == 0 {
        return Rational64::one();
    }
    let n = tree.n_vertices();
    let mut total = Rational64::zero();
    for order in permutations(k) {
        let mut rank = vec![0usize; k];
        for (pos, &e) in order.iter().enumerate() {
            rank[e] = pos;
        }
        let ranks = forest_path_infimum(n, tree.edges(), &rank, usize::MAX, usize::MAX, usize::min);
        let mut m = vec![0i64; k];
        for &((v, _), (u, _)) in pairing {
            if v != u {
                m[ranks[(v, u)]] += 1;
            }
        }
        let mut value = Rational64::one();
        let mut cumulative = 0i64;
        for &mi in &m {
            cumulative += mi + 1;
            value /= cumulative;
        }
        total += value;
    }
    total
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(k - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

/// `Σ_{sites} Π_{(a,b)} C(x_a, x_b)` over assignments of sites to classes.
fn site_sum(cov: &nalgebra::DMatrix<f64>, n_classes: usize, factors: &[(usize, usize)]) -> f64 {
    let s = cov.nrows();
    if n_classes == 0 {
        return 1.0;
    }
    let mut assign = vec![0usize; n_classes];
    let mut total = 0.0;
    loop {
        total += factors.iter().map(|&(a, b)| cov[(assign[a], assign[b])]).product::<f64>();
        let mut d = 0;
        loop {
            if d == n_classes {
                return total;
            }
            assign[d] += 1;
            if assign[d] < s {
                break;
            }
            assign[d] = 0;
            d += 1;
        }
    }
}

fn check_caps(n: usize, order: usize) -> Result<()> {
    if order > MAX_LVE_ORDER {
        return Err(LveError::CostCap(format!("λ order {order} above {MAX_LVE_ORDER}")));
    }
    if n > MAX_LVE_TREE {
        return Err(LveError::EnumerationLimit { requested: n, cap: MAX_LVE_TREE });
    }
    Ok(())
}

/// Every choice of `W_k` (`k ≥ max(deg, 2)`) on the loop vertices with total λ order ≤ `order`.
fn vertex_term_choices(t: &DecoratedTree, order: usize) -> Vec<Vec<VertexTerm>> {
    let n = t.n_vertices();
    let budget = 2 * order;
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    fn rec(t: &DecoratedTree, v: usize, used: usize, budget: usize, current: &mut Vec<VertexTerm>, out: &mut Vec<Vec<VertexTerm>>) {
        if v == t.n_vertices() {
            out.push(current.clone());
            return;
        }
        if t.is_counterterm(v) {
            if used + 1 <= budget {
                current.push(VertexTerm::Counterterm);
                rec(t, v + 1, used + 1, budget, current, out);
                current.pop();
            }
            return;
        }
        let min_k = t.tree().degree(v).max(2);
        for k in min_k..=budget.saturating_sub(used) {
            current.push(VertexTerm::Loop { k });
            rec(t, v + 1, used + k, budget, current, out);
            current.pop();
        }
    }
    rec(t, 0, 0, budget, &mut current, &mut out);
    out
}

/// All pairing patterns of the amplitude of a decorated tree through λ order `order`
/// (without the `1/n!`). Counterterms must sit on leaves.
pub fn tree_amplitude_terms(
    t: &DecoratedTree,
    model: &QuarticModel,
    order: usize,
    convention: DerivationConvention,
) -> Result<Vec<AmplitudeTerm>> {
    check_caps(t.n_vertices(), order)?;
    let mut terms = Vec::new();
    for vertices in vertex_term_choices(t, order) {
        for_each_term(t.tree(), &vertices, model, convention, &mut |term| {
            if term.order <= order {
                terms.push(term)
            }
        });
    }
    Ok(terms)
}

/// λ-coefficients `0..=order` of the amplitude of a decorated tree (without `1/n!`).
pub fn tree_amplitude_series(
    t: &DecoratedTree,
    model: &QuarticModel,
    order: usize,
    convention: DerivationConvention,
) -> Result<Vec<f64>> {
    let mut series = vec![0.0; order + 1];
    for term in tree_amplitude_terms(t, model, order, convention)? {
        series[term.order] += term.value;
    }
    Ok(series)
}

/// The constant counterterm `3λ S T²` of a single replica.
pub fn constant_counterterm(model: &QuarticModel) -> f64 {
    3.0 * model.sites() as f64 * model.tadpole * model.tadpole
}

/// Decorated trees on `n` vertices: every labeled tree with every set of leaves marked as counterterms.
pub fn decorated_trees(n: usize) -> Result<Vec<DecoratedTree>> {
    let mut out = Vec::new();
    for tree in enumerate_labeled_trees(n)? {
        let leaves: Vec<usize> = (0..n).filter(|&v| tree.degree(v) == 1).collect();
        for mask in 0..(1usize << leaves.len()) {
            let mut ct = vec![false; n];
            for (i, &v) in leaves.iter().enumerate() {
                ct[v] = mask >> i & 1 == 1;
            }
            out.push(DecoratedTree::new(tree.clone(), ct)?);
        }
    }
    Ok(out)
}

/// `log Z` coefficients from trees with at most `n_max` vertices.
pub fn lve_log_z_series(model: &QuarticModel, n_max: usize, order: usize, convention: DerivationConvention) -> Result<SeriesCoefficients> {
    check_caps(n_max, order)?;
    let mut coefficients = vec![0.0; order + 1];
    if order >= 1 {
        coefficients[1] += constant_counterterm(model);
    }
    let mut factorial = 1.0;
    for n in 1..=n_max {
        factorial *= n as f64;
        for t in decorated_trees(n)? {
            let s = tree_amplitude_series(&t, model, order, convention)?;
            for (c, v) in coefficients.iter_mut().zip(&s) {
                *c += v / factorial;
            }
        }
    }
    let abs_err = coefficients.iter().map(|a| 1e-13 * a.abs()).collect();
    let mut descriptor = model_descriptor(model);
    descriptor["trees_up_to"] = n_max.into();
    descriptor["convention"] = convention.name().into();
    Ok(SeriesCoefficients { model: descriptor, method: "lve".into(), coefficients, abs_err })
}

/// Term inventory of every decorated tree up to `n_max`, as JSON lines.
pub fn term_inventory_jsonl(model: &QuarticModel, n_max: usize, order: usize, convention: DerivationConvention) -> Result<String> {
    check_caps(n_max, order)?;
    let mut out = String::new();
    for n in 1..=n_max {
        for t in decorated_trees(n)? {
            for term in tree_amplitude_terms(&t, model, order, convention)? {
                out.push_str(&serde_json::to_string(&term).expect("serializable"));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Every loop vertex of the inventory carries `k ≥ 2` slots, so no leaf can close a
/// tadpole on its own subtracted resolvent at zeroth order.
pub fn leaf_tadpoles_absent(terms: &[AmplitudeTerm]) -> bool {
    terms.iter().all(|t| t.vertices.iter().all(|v| !matches!(v, VertexTerm::Loop { k } if *k < 2)))
}

/// Outcome of comparing both derivation conventions with an oracle series.
#[derive(Debug, Clone, Serialize)]
pub struct ConventionComparison {
    pub oracle: Vec<f64>,
    pub single_derivation: Vec<f64>,
    pub half_per_line: Vec<f64>,
    pub single_derivation_matches: bool,
    pub half_per_line_matches: bool,
    /// The unique matching convention, if exactly one matches.
    pub selected: Option<DerivationConvention>,
}

/// Compares orders `2..=order` with the oracle at relative tolerance `rel_tol`.
pub fn compare_conventions(model: &QuarticModel, n_max: usize, order: usize, rel_tol: f64) -> Result<ConventionComparison> {
    let oracle = crate::wick::log_z_series(model, order)?.coefficients;
    let single = lve_log_z_series(model, n_max, order, DerivationConvention::SingleDerivation)?.coefficients;
    let half = lve_log_z_series(model, n_max, order, DerivationConvention::HalfPerLine)?.coefficients;
    let matches = |s: &[f64]| (2..=order).all(|n| (s[n] - oracle[n]).abs() <= rel_tol * oracle[n].abs());
    let (a, b) = (matches(&single), matches(&half));
    let selected = match (a, b) {
        (true, false) => Some(DerivationConvention::SingleDerivation),
        (false, true) => Some(DerivationConvention::HalfPerLine),
        _ => None,
    };
    Ok(ConventionComparison {
        oracle,
        single_derivation: single,
        half_per_line: half,
        single_derivation_matches: a,
        half_per_line_matches: b,
        selected,
    })
}

/// One resolvent chain from differentiating a loop vertex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolventChain {
    /// Derivation positions in the cyclic order of the trace, starting at position 0.
    pub positions: Vec<usize>,
    /// `true` for the single subtracted resolvent of a once-derived vertex.
    pub subtracted: bool,
}

impl ResolventChain {
    pub fn dressed_resolvents(&self) -> usize {
        if self.subtracted {
            0
        } else {
            self.positions.len()
        }
    }
}

/// `p` derivatives of `-½ Tr log₂(1 + 2i√λ Cσ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopVertexDerivative {
    /// Rational prefactor multiplying `(i√λ)^p`.
    pub prefactor: String,
    pub i_sqrt_lambda_power: usize,
    pub chains: Vec<ResolventChain>,
}

/// `p = 1`: `-i√λ Ĉ'(x, x)`; `p ≥ 2`: `-½ (2i√λ)^p (-1)^{p-1}` times the `(p-1)!` cyclic chains.
pub fn derive_loop_vertex(p: usize) -> Result<LoopVertexDerivative> {
    if p == 0 {
        return Err(LveError::Domain("at least one derivation is required".into()));
    }
    if p == 1 {
        return Ok(LoopVertexDerivative {
            prefactor: "-1".into(),
            i_sqrt_lambda_power: 1,
            chains: vec![ResolventChain { positions: vec![0], subtracted: true }],
        });
    }
    let sign = if (p - 1) % 2 == 0 { -1 } else { 1 };
    let prefactor = BigRational::new(BigInt::from(sign) * (BigInt::one() << p), BigInt::from(2));
    let chains = permutations(p - 1)
        .into_iter()
        .map(|perm| {
            let mut positions = vec![0];
            positions.extend(perm.into_iter().map(|x| x + 1));
            ResolventChain { positions, subtracted: false }
        })
        .collect();
    Ok(LoopVertexDerivative { prefactor: prefactor.to_string(), i_sqrt_lambda_power: p, chains })
}

/// Numeric value of the derivative at fixed `σ`: chains of `G = (1 + 2i√λ C Σ)^{-1} C`.
pub fn loop_vertex_derivative_value(
    cov: &nalgebra::DMatrix<f64>,
    sigma: &[f64],
    lambda: f64,
    sites: &[usize],
) -> Result<Complex64> {
    let p = sites.len();
    let d = derive_loop_vertex(p)?;
    let n = cov.nrows();
    let isl = Complex64::new(0.0, lambda.sqrt());
    let c = cov.map(|x| Complex64::new(x, 0.0));
    let a = c.scale(1.0).map(|x| x * 2.0 * isl);
    let sig = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, sigma.iter().map(|&s| Complex64::new(s, 0.0))));
    let m = nalgebra::DMatrix::<Complex64>::identity(n, n) + &a * &sig;
    let inv = m.try_inverse().ok_or_else(|| LveError::Numeric("singular resolvent".into()))?;
    let g = inv * &c;
    let mut total = Complex64::new(0.0, 0.0);
    for chain in &d.chains {
        if chain.subtracted {
            total += g[(sites[0], sites[0])] - c[(sites[0], sites[0])];
            continue;
        }
        let mut prod = Complex64::new(1.0, 0.0);
        for i in 0..p {
            let x = sites[chain.positions[i]];
            let y = sites[chain.positions[(i + 1) % p]];
            prod *= g[(x, y)];
        }
        total += prod;
    }
    let pref: BigRational = d.prefactor.parse().map_err(|_| LveError::Numeric("prefactor".into()))?;
    let pref = pref.numer().to_f64().unwrap_or(f64::NAN) / pref.denom().to_f64().unwrap_or(f64::NAN);
    Ok(total * pref * isl.powu(p as u32))
}

/// `prefactor · Σ_k C(n,k) A^{n-k} (-B)^k`, exactly.
pub fn renormalized_planar_sum(n: u32, a: &BigRational, b: &BigRational, prefactor: &BigRational) -> BigRational {
    let mut total = BigRational::zero();
    let mut binom = BigInt::one();
    for k in 0..=n {
        let term = num_traits::pow::pow(a.clone(), (n - k) as usize) * num_traits::pow::pow(-b.clone(), k as usize);
        total += BigRational::from_integer(binom.clone()) * term;
        binom = binom * BigInt::from(n - k) / BigInt::from(k + 1);
    }
    total * prefactor
}

/// Polynomial in `dim` Gaussian variables: `(coefficient, exponents)` terms.
pub type SigmaPolynomial = Vec<(f64, Vec<u32>)>;

/// `|∫dν(σ) f(σ) e^{2i√λ T Σσ} - e^{-2λT² dim} ⟨f(σ + 2i√λ T)⟩|`.
pub fn reexponentiation_identity(dim: usize, f: &SigmaPolynomial, lambda: f64, tadpole: f64) -> Result<f64> {
    if dim == 0 || dim > 3 {
        return Err(LveError::Domain(format!("dimension {dim} outside 1..=3")));
    }
    if f.iter().any(|(_, e)| e.len() != dim || e.iter().sum::<u32>() > 8) {
        return Err(LveError::Domain("polynomial must have degree ≤ 8 in the given dimension".into()));
    }
    let b = 2.0 * lambda.sqrt() * tadpole;
    let order = 80;
    let (x, w) = gauss_hermite(order);
    let z: Vec<f64> = x.iter().map(|t| t * std::f64::consts::SQRT_2).collect();
    let w: Vec<f64> = w.iter().map(|t| t / std::f64::consts::PI.sqrt()).collect();
    let mut lhs = Complex64::new(0.0, 0.0);
    let mut idx = vec![0usize; dim];
    loop {
        let weight: f64 = idx.iter().map(|&i| w[i]).product();
        let sigma: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
        let fv: f64 = f
            .iter()
            .map(|(c, e)| c * sigma.iter().zip(e).map(|(s, &k)| s.powi(k as i32)).product::<f64>())
            .sum();
        let phase = Complex64::new(0.0, b * sigma.iter().sum::<f64>()).exp();
        lhs += phase * fv * weight;
        let mut d = 0;
        while d < dim {
            idx[d] += 1;
            if idx[d] < order {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dim {
            break;
        }
    }
    // ⟨(σ + ib)^k⟩ = Σ_j C(k,j) (ib)^{k-j} ⟨σ^j⟩, ⟨σ^j⟩ = (j-1)!! for even j
    let shifted_moment = |k: u32| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut binom = 1.0;
        for j in 0..=k {
            if j % 2 == 0 {
                let dfact: f64 = (1..j).step_by(2).map(|t| t as f64).product();
                acc += Complex64::new(0.0, b).powu(k - j) * binom * dfact;
            }
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
        acc
    };
    let mut rhs = Complex64::new(0.0, 0.0);
    for (c, e) in f {
        let mut prod = Complex64::new(*c, 0.0);
        for &k in e {
            prod *= shifted_moment(k);
        }
        rhs += prod;
    }
    rhs *= (-0.5 * b * b * dim as f64).exp();
    Ok((lhs - rhs).norm())
}

/// Whether `x` is an exact zero of a big rational.
pub fn is_exact_zero(x: &BigRational) -> bool {
    x.is_zero() && !x.is_negative()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn model(c: &[f64], n: usize) -> QuarticModel {
        QuarticModel::new(DMatrix::from_row_slice(n, n, c)).unwrap()
    }

    #[test]
    fn order_one_pieces() {
        let m = model(&[0.8, 0.3, 0.3, 0.8], 2);
        let (s, t) = (2.0, 0.8);
        let single = DecoratedTree::undecorated(LabeledTree::single_vertex());
        let one = tree_amplitude_series(&single, &m, 1, DerivationConvention::SingleDerivation).unwrap();
        assert!((one[1] + s * t * t).abs() < 1e-14);
        assert!((constant_counterterm(&m) + one[1] - 2.0 * s * t * t).abs() < 1e-14);
        let ct = DecoratedTree::new(LabeledTree::new(2, [(0, 1)]).unwrap(), vec![true, true]).unwrap();
        let two = tree_amplitude_series(&ct, &m, 1, DerivationConvention::SingleDerivation).unwrap();
        assert!((two[1] / 2.0 + 2.0 * s * t * t).abs() < 1e-14);
    }

    #[test]
    fn chain_counts() {
        assert_eq!(derive_loop_vertex(1).unwrap().chains.len(), 1);
        assert_eq!(derive_loop_vertex(2).unwrap().chains.len(), 1);
        assert_eq!(derive_loop_vertex(3).unwrap().chains.len(), 2);
        assert_eq!(derive_loop_vertex(4).unwrap().chains.len(), 6);
        assert_eq!(derive_loop_vertex(2).unwrap().prefactor, "2");
    }

    #[test]
    fn planar_sum_examples() {
        let r = |x: i64| BigRational::from_integer(BigInt::from(x));
        assert!(renormalized_planar_sum(5, &r(7), &r(7), &r(3)).is_zero());
        assert_eq!(renormalized_planar_sum(2, &r(3), &r(1), &r(1)), r(4));
        assert_eq!(renormalized_planar_sum(3, &r(2), &r(0), &r(5)), r(40));
    }

    #[test]
    fn reexponentiation_examples() {
        let one: SigmaPolynomial = vec![(1.0, vec![0])];
        assert!(reexponentiation_identity(1, &one, 0.3, 0.7).unwrap() < 1e-12);
        let sq: SigmaPolynomial = vec![(1.0, vec![2])];
        assert!(reexponentiation_identity(1, &sq, 0.3, 0.7).unwrap() < 1e-10);
        assert!(reexponentiation_identity(1, &sq, 0.0, 0.7).unwrap() < 1e-13);
    }
}
