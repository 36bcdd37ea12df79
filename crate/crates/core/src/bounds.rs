//! Numerical instances of the bound chains: the tree-series majorant of the
//! pressure, the Nelson-type competition, cluster sums over `τ(Γ)`, Taylor
//! remainders with their factorial fit, and truncated Borel transforms.

use std::collections::{BTreeSet, HashSet};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::covariance::{square_root, ContinuumCovariance};
use crate::error::{LveError, Result};
use crate::quadrature::gauss_legendre_unit;
use crate::wick::{log_z_series, FieldGrid, QuarticModel};

fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PressureMajorant {
    /// `x = λ K log Λ`.
    pub ratio: f64,
    /// `n^{n-2}/n! 2^{n-1} (λ log Λ)^n`, the tree-counting terms.
    pub tree_terms: Vec<f64>,
    /// `x^n`, the geometric majorant.
    pub geometric_terms: Vec<f64>,
    pub partial_sum: f64,
    /// `x/(1-x)` when it exists.
    pub closed_form: Option<f64>,
    pub converges: bool,
}

/// Termwise majorant of the pressure series up to `n_terms`, with `log Λ = j_max log M`.
pub fn pressure_majorant(lambda: f64, k: f64, j_max: u32, slice_ratio: f64, n_terms: usize) -> Result<PressureMajorant> {
    if !(lambda > 0.0 && k > 0.0) {
        return Err(LveError::Domain(format!("λ and K must be positive, got {lambda}, {k}")));
    }
    let log_cutoff = j_max as f64 * slice_ratio.ln();
    let ratio = lambda * k * log_cutoff;
    let mut tree_terms = Vec::with_capacity(n_terms);
    let mut geometric_terms = Vec::with_capacity(n_terms);
    for n in 1..=n_terms as u64 {
        let nf = n as f64;
        let log_tree = (nf - 2.0) * nf.ln() - ln_factorial(n) + (nf - 1.0) * 2f64.ln() + nf * (lambda * log_cutoff).ln();
        tree_terms.push(log_tree.exp());
        geometric_terms.push(ratio.powi(n as i32));
    }
    let partial_sum = geometric_terms.iter().sum();
    let converges = ratio < 1.0;
    let closed_form = converges.then(|| ratio / (1.0 - ratio));
    Ok(PressureMajorant { ratio, tree_terms, geometric_terms, partial_sum, closed_form, converges })
}

/// `log( n^{n-2}/n! 2^{n-1} / (2e)^n )`, non-positive for every `n ≥ 1`.
pub fn tree_ratio_log(n: u64) -> f64 {
    let nf = n as f64;
    (nf - 2.0) * nf.ln() - ln_factorial(n) + (nf - 1.0) * 2f64.ln() - nf * (2.0 * std::f64::consts::E).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(LveError::Domain("linear fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit { slope, intercept, r_squared })
}

/// Slope of the cumulative tadpole `T_{≤j}` against `j` over `j_from..=j_max`.
pub fn tadpole_growth(cov: &ContinuumCovariance, j_from: u32) -> Result<LinearFit> {
    let table = cov.tadpole_table()?;
    let js: Vec<f64> = (j_from..=cov.j_max).map(|j| j as f64).collect();
    let ts: Vec<f64> = (j_from..=cov.j_max).map(|j| table.cumulative[j as usize]).collect();
    linear_fit(&js, &ts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NelsonValue {
    pub j: u32,
    pub log_value: f64,
    pub value: f64,
    pub below_one: bool,
}

/// `e^{-a j²} j! e^{2λ(s j)²}`.
pub fn nelson_check(a: f64, lambda: f64, j: u32, slope: f64) -> NelsonValue {
    let jf = j as f64;
    let log_value = -a * jf * jf + ln_factorial(j as u64) + 2.0 * lambda * (slope * jf).powi(2);
    NelsonValue { j, log_value, value: log_value.exp(), below_one: log_value < 0.0 }
}

pub fn nelson_scan(a: f64, lambda: f64, slope: f64, js: impl IntoIterator<Item = u32>) -> Vec<NelsonValue> {
    js.into_iter().map(|j| nelson_check(a, lambda, j, slope)).collect()
}

/// `a* = 2λs²`: above it the Gaussian factor eventually beats both `j!` and the tadpole growth.
pub fn nelson_critical_a(lambda: f64, slope: f64) -> f64 {
    2.0 * lambda * slope * slope
}

/// Largest `j` in the scan where the value is not below one, if any.
pub fn nelson_crossover(scan: &[NelsonValue]) -> Option<u32> {
    scan.iter().filter(|v| !v.below_one).map(|v| v.j).max()
}

pub const MAX_CLUSTER_TREE: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterSet {
    squares: BTreeSet<(i32, i32)>,
}

impl ClusterSet {
    pub fn new(squares: impl IntoIterator<Item = (i32, i32)>) -> Result<Self> {
        let squares: BTreeSet<(i32, i32)> = squares.into_iter().collect();
        if !squares.contains(&(0, 0)) {
            return Err(LveError::Domain("a cluster must contain the origin square".into()));
        }
        Ok(Self { squares })
    }

    pub fn squares(&self) -> &BTreeSet<(i32, i32)> {
        &self.squares
    }

    pub fn len(&self) -> usize {
        self.squares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squares.is_empty()
    }
}

fn mst_length(points: &[(i32, i32)]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let dist = |a: (i32, i32), b: (i32, i32)| (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..n {
        let u = (0..n).filter(|&i| !in_tree[i]).min_by(|&a, &b| best[a].total_cmp(&best[b])).expect("vertex left");
        in_tree[u] = true;
        total += best[u];
        for v in 0..n {
            if !in_tree[v] {
                best[v] = best[v].min(dist(points[u], points[v]));
            }
        }
    }
    total
}

/// `τ(Γ)`: Euclidean minimum spanning tree over the square centres.
pub fn cluster_tree_length(g: &ClusterSet) -> Result<f64> {
    if g.len() > MAX_CLUSTER_TREE {
        return Err(LveError::CostCap(format!("τ limited to {MAX_CLUSTER_TREE} squares, got {}", g.len())));
    }
    let pts: Vec<(i32, i32)> = g.squares.iter().copied().collect();
    Ok(mst_length(&pts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClusterMode {
    /// Edge-connected sets only.
    Connected,
    /// Every subset of the box containing the origin.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSumReport {
    pub c: f64,
    pub radius: i32,
    pub max_size: usize,
    pub mode: ClusterMode,
    /// `counts[k-1]`: number of clusters of size `k`.
    pub counts: Vec<u64>,
    pub increments: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Relative change of the partial sum at the last size.
    pub last_relative_change: f64,
}

pub const DEFAULT_CLUSTER_CAP: u64 = 10_000_000;

/// `Σ e^{-c τ(Γ)}` over clusters in the box `|x|,|y| ≤ radius`, grouped by size.
pub fn cluster_sum(c: f64, radius: i32, max_size: usize, mode: ClusterMode, cap: u64) -> Result<ClusterSumReport> {
    if !(c > 0.0) {
        return Err(LveError::Domain(format!("decay rate must be positive, got {c}")));
    }
    if max_size == 0 || max_size > MAX_CLUSTER_TREE || radius < 0 {
        return Err(LveError::Domain(format!("need 1 ≤ size ≤ {MAX_CLUSTER_TREE} and radius ≥ 0")));
    }
    let mut counts = vec![0u64; max_size];
    let mut increments = vec![0.0; max_size];
    let mut total = 0u64;
    let mut visit = |set: &[(i32, i32)]| -> Result<()> {
        total += 1;
        if total > cap {
            return Err(LveError::CostCap(format!("more than {cap} clusters")));
        }
        counts[set.len() - 1] += 1;
        increments[set.len() - 1] += (-c * mst_length(set)).exp();
        Ok(())
    };
    match mode {
        ClusterMode::Connected => {
            let mut seen = HashSet::from([(0, 0)]);
            let mut set = Vec::new();
            grow_connected(vec![(0, 0)], &mut set, &mut seen, radius, max_size, &mut visit)?;
        }
        ClusterMode::Exhaustive => {
            let cells: Vec<(i32, i32)> = (-radius..=radius)
                .flat_map(|x| (-radius..=radius).map(move |y| (x, y)))
                .filter(|&p| p != (0, 0))
                .collect();
            let mut set = vec![(0, 0)];
            visit(&set)?;
            choose_cells(&cells, 0, &mut set, max_size, &mut visit)?;
        }
    }
    let partial_sums: Vec<f64> = increments
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let n = partial_sums.len();
    let last_relative_change = if n >= 2 { increments[n - 1] / partial_sums[n - 2] } else { 0.0 };
    Ok(ClusterSumReport { c, radius, max_size, mode, counts, increments, partial_sums, last_relative_change })
}

fn grow_connected(
    mut untried: Vec<(i32, i32)>,
    set: &mut Vec<(i32, i32)>,
    seen: &mut HashSet<(i32, i32)>,
    radius: i32,
    max_size: usize,
    visit: &mut impl FnMut(&[(i32, i32)]) -> Result<()>,
) -> Result<()> {
    while let Some(cell) = untried.pop() {
        set.push(cell);
        visit(set)?;
        if set.len() < max_size {
            let mut added = Vec::new();
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let nb = (cell.0 + dx, cell.1 + dy);
                if nb.0.abs() <= radius && nb.1.abs() <= radius && seen.insert(nb) {
                    added.push(nb);
                }
            }
            let mut next = untried.clone();
            next.extend(&added);
            grow_connected(next, set, seen, radius, max_size, visit)?;
            for nb in added {
                seen.remove(&nb);
            }
        }
        set.pop();
    }
    Ok(())
}

fn choose_cells(
    cells: &[(i32, i32)],
    from: usize,
    set: &mut Vec<(i32, i32)>,
    max_size: usize,
    visit: &mut impl FnMut(&[(i32, i32)]) -> Result<()>,
) -> Result<()> {
    if set.len() == max_size {
        return Ok(());
    }
    for i in from..cells.len() {
        set.push(cells[i]);
        visit(set)?;
        choose_cells(cells, i + 1, set, max_size, visit)?;
        set.pop();
    }
    Ok(())
}

/// Smallest `c` of the grid whose size increments decrease strictly with ratio below one.
pub fn cluster_decay_threshold(c_grid: &[f64], radius: i32, max_size: usize) -> Result<Option<f64>> {
    for &c in c_grid {
        let r = cluster_sum(c, radius, max_size, ClusterMode::Connected, DEFAULT_CLUSTER_CAP)?;
        if r.increments.windows(2).all(|w| w[1] < w[0]) {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

/// A function of `λ` with exact Taylor coefficients at the origin and derivatives on `[0, λ]`.
pub trait RemainderTarget {
    fn value(&self, lambda: f64) -> f64;
    /// `f^{(k)}(λ)` for `k = 0..=max_order`.
    fn derivatives(&self, lambda: f64, max_order: usize) -> Vec<f64>;
    /// `f^{(n)}(0)/n!` for `n = 0..=order`.
    fn coefficients(&self, order: usize) -> Result<Vec<f64>>;
}

/// `log Z(λ)` of a small model on a Gauss–Hermite grid, with coefficients from the Wick oracle.
pub struct QuadratureTarget {
    grid: FieldGrid,
    model: QuarticModel,
}

impl QuadratureTarget {
    pub fn new(model: QuarticModel, order: usize) -> Result<Self> {
        Ok(Self { grid: FieldGrid::new(&model, order)?, model })
    }

    pub fn log_z_complex(&self, lambda: Complex64) -> Complex64 {
        self.grid.log_z(lambda)
    }
}

impl RemainderTarget for QuadratureTarget {
    fn value(&self, lambda: f64) -> f64 {
        self.grid.log_z(Complex64::new(lambda, 0.0)).re
    }

    fn derivatives(&self, lambda: f64, max_order: usize) -> Vec<f64> {
        self.grid.log_z_derivatives(lambda, max_order)
    }

    fn coefficients(&self, order: usize) -> Result<Vec<f64>> {
        Ok(log_z_series(&self.model, order)?.coefficients)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaylorRemainder {
    pub order: usize,
    pub lambda: f64,
    /// `f(λ) - Σ_{n ≤ N} a_n λ^n`.
    pub direct: f64,
    /// `λ^{N+1} ∫ (1-t)^N/N! f^{(N+1)}(tλ) dt` with exact derivatives.
    pub integral: f64,
    /// The same integral with `f^{(N+1)}` from central differences of `f^{(N)}`, step `10^{-3} λ`.
    pub integral_difference: f64,
    pub agreement: f64,
    /// Set when the difference quotient strays from the exact derivative by more than `1e-5` relative.
    pub derivative_warning: bool,
}

pub fn taylor_remainder(f: &dyn RemainderTarget, order: usize, lambda: f64) -> Result<TaylorRemainder> {
    if !(lambda > 0.0) {
        return Err(LveError::Domain(format!("λ must be positive, got {lambda}")));
    }
    let coeffs = f.coefficients(order)?;
    let partial: f64 = coeffs.iter().enumerate().map(|(n, a)| a * lambda.powi(n as i32)).sum();
    let direct = f.value(lambda) - partial;
    let (t, w) = gauss_legendre_unit(32);
    let h = 1e-3 * lambda;
    let fact = ln_factorial(order as u64).exp();
    let mut integral = 0.0;
    let mut integral_difference = 0.0;
    for (ti, wi) in t.iter().zip(&w) {
        let x = ti * lambda;
        let kernel = (1.0 - ti).powi(order as i32) / fact;
        integral += wi * kernel * f.derivatives(x, order + 1)[order + 1];
        let up = f.derivatives(x + h, order)[order];
        let down = f.derivatives(x - h, order)[order];
        integral_difference += wi * kernel * (up - down) / (2.0 * h);
    }
    let scale = lambda.powi(order as i32 + 1);
    integral *= scale;
    integral_difference *= scale;
    let agreement = (direct - integral).abs();
    let derivative_warning = (integral_difference - integral).abs() > 1e-5 * integral.abs().max(1e-300);
    Ok(TaylorRemainder { order, lambda, direct, integral, integral_difference, agreement, derivative_warning })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorialFit {
    /// Least-squares values.
    pub a_fit: f64,
    pub b_fit: f64,
    /// `A` raised until no point lies above `A B^N N! λ^{N+1}`.
    pub a_bound: f64,
    pub residuals: Vec<f64>,
    pub violations: usize,
}

/// Fits `|R^N| ≤ A B^N N! |λ|^{N+1}` on points `(N, λ, R^N)`.
pub fn factorial_bound_fit(points: &[(usize, f64, f64)]) -> Result<FactorialFit> {
    let orders: BTreeSet<usize> = points.iter().map(|p| p.0).collect();
    if orders.len() < 3 {
        return Err(LveError::Domain(format!("factorial fit needs at least 3 orders, got {}", orders.len())));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(n, lambda, r) in points {
        if !(r.is_finite() && r != 0.0) {
            return Err(LveError::Numeric(format!("remainder at N = {n}, λ = {lambda} is {r}")));
        }
        xs.push(n as f64);
        ys.push(r.abs().ln() - ln_factorial(n as u64) - (n as f64 + 1.0) * lambda.abs().ln());
    }
    let fit = linear_fit(&xs, &ys)?;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - fit.intercept - fit.slope * x).collect();
    let shift = residuals.iter().copied().fold(0.0f64, f64::max);
    let a_bound = (fit.intercept + shift).exp();
    let b = fit.slope.exp();
    let violations = points
        .iter()
        .filter(|&&(n, lambda, r)| {
            r.abs() > a_bound * b.powi(n as i32) * ln_factorial(n as u64).exp() * lambda.abs().powi(n as i32 + 1) * (1.0 + 1e-12)
        })
        .count();
    Ok(FactorialFit { a_fit: fit.intercept.exp(), b_fit: b, a_bound, residuals, violations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BorelTransform {
    pub u: Vec<f64>,
    pub values: Vec<f64>,
    /// Magnitude of the last retained term.
    pub truncation: Vec<f64>,
}

/// `Σ_N a_N u^N / N!` on a grid.
pub fn borel_partial_transform(coeffs: &[f64], u: &[f64]) -> Result<BorelTransform> {
    if coeffs.len() < 2 {
        return Err(LveError::Domain("Borel transform needs at least two coefficients".into()));
    }
    let mut values = Vec::with_capacity(u.len());
    let mut truncation = Vec::with_capacity(u.len());
    for &x in u {
        let mut sum = 0.0;
        let mut last = 0.0;
        for (n, a) in coeffs.iter().enumerate() {
            last = a * x.powi(n as i32) / ln_factorial(n as u64).exp();
            sum += last;
        }
        values.push(sum);
        truncation.push(last.abs());
    }
    Ok(BorelTransform { u: u.to_vec(), values, truncation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventNorm {
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub max_norm: f64,
}

/// Largest spectral norm of `(1 + 2i√λ C^{1/2} σ C^{1/2})^{-1}` over Gaussian draws of `σ`.
pub fn resolvent_norm_scan<R: Rng>(cov: &DMatrix<f64>, lambdas: &[Complex64], draws: usize, rng: &mut R) -> Result<Vec<ResolventNorm>> {
    let root = square_root(cov)?.map(|x| Complex64::new(x, 0.0));
    let n = cov.nrows();
    let id = DMatrix::<Complex64>::identity(n, n);
    let normal: Vec<f64> = (0..draws * n).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let coupling = Complex64::new(0.0, 2.0) * lambda.sqrt();
        let mut max_norm = 0.0f64;
        for d in 0..draws {
            let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                normal[d * n..(d + 1) * n].iter().map(|&x| Complex64::new(x, 0.0)),
            ));
            let m = &id + (&root * sigma * &root) * coupling;
            let inv = m
                .try_inverse()
                .ok_or_else(|| LveError::Numeric(format!("singular resolvent at λ = {lambda}")))?;
            let norm = inv.singular_values().max();
            max_norm = max_norm.max(norm);
        }
        out.push(ResolventNorm { lambda_re: lambda.re, lambda_im: lambda.im, max_norm });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majorant_closed_form() {
        let log_cutoff = 4.0 * crate::covariance::DEFAULT_SLICE_RATIO.ln();
        let m = pressure_majorant(0.5 / log_cutoff, 1.0, 4, crate::covariance::DEFAULT_SLICE_RATIO, 60).unwrap();
        assert!(m.converges);
        assert!((m.partial_sum - m.closed_form.unwrap()).abs() < 1e-12);
        let d = pressure_majorant(1.2 / log_cutoff, 1.0, 4, crate::covariance::DEFAULT_SLICE_RATIO, 10).unwrap();
        assert!(!d.converges && d.closed_form.is_none());
    }

    #[test]
    fn tree_terms_below_geometric() {
        for n in 1..=50 {
            assert!(tree_ratio_log(n) <= 1e-12, "n = {n}");
        }
    }

    #[test]
    fn nelson_values() {
        let s = crate::covariance::DEFAULT_SLICE_RATIO.ln() / (2.0 * std::f64::consts::PI);
        assert!(nelson_check(0.4, 0.1, 30, s).below_one);
        assert_eq!(nelson_check(0.4, 0.1, 0, s).value, 1.0);
        let a = nelson_critical_a(0.1, s);
        assert!(nelson_scan(a, 0.1, s, [50, 100, 200]).iter().all(|v| !v.below_one));
    }

    #[test]
    fn tree_lengths() {
        assert_eq!(cluster_tree_length(&ClusterSet::new([(0, 0)]).unwrap()).unwrap(), 0.0);
        assert_eq!(cluster_tree_length(&ClusterSet::new([(0, 0), (1, 0)]).unwrap()).unwrap(), 1.0);
        let block = ClusterSet::new([(0, 0), (1, 0), (0, 1), (1, 1)]).unwrap();
        assert!((cluster_tree_length(&block).unwrap() - 3.0).abs() < 1e-15);
        assert!(ClusterSet::new([(1, 0)]).is_err());
    }

    #[test]
    fn connected_counts() {
        // connected sets containing a fixed cell: k · (fixed polyominoes of size k)
        let r = cluster_sum(1.0, 6, 5, ClusterMode::Connected, DEFAULT_CLUSTER_CAP).unwrap();
        assert_eq!(r.counts, vec![1, 4, 18, 76, 315]);
        assert_eq!(r.partial_sums[0], 1.0);
    }

    #[test]
    fn exhaustive_counts() {
        let r = cluster_sum(1.0, 1, 3, ClusterMode::Exhaustive, DEFAULT_CLUSTER_CAP).unwrap();
        assert_eq!(r.counts, vec![1, 8, 28]);
    }

    #[test]
    fn huge_decay_leaves_origin() {
        let r = cluster_sum(200.0, 3, 4, ClusterMode::Connected, DEFAULT_CLUSTER_CAP).unwrap();
        assert!((r.partial_sums[3] - 1.0).abs() < 1e-80);
    }

    #[test]
    fn factorial_round_trip() {
        let mut pts = Vec::new();
        for n in 0..5usize {
            for lambda in [0.02, 0.05] {
                let r = 2.0 * 3f64.powi(n as i32) * ln_factorial(n as u64).exp() * f64::powi(lambda, n as i32 + 1);
                pts.push((n, lambda, r));
            }
        }
        let fit = factorial_bound_fit(&pts).unwrap();
        assert!((fit.a_fit - 2.0).abs() < 0.02 && (fit.b_fit - 3.0).abs() < 0.03);
        assert_eq!(fit.violations, 0);
        assert!(factorial_bound_fit(&pts[..2]).is_err());
    }

    #[test]
    fn borel_of_factorials_is_geometric() {
        let coeffs: Vec<f64> = (0..30u64).map(|n| ln_factorial(n).exp()).collect();
        let b = borel_partial_transform(&coeffs, &[0.5]).unwrap();
        assert!((b.values[0] - 2.0).abs() < 1e-8);
        let z = borel_partial_transform(&[0.0; 4], &[0.3]).unwrap();
        assert_eq!(z.values[0], 0.0);
    }

    #[test]
    fn remainder_of_polynomial_vanishes() {
        struct Cubic;
        impl RemainderTarget for Cubic {
            fn value(&self, x: f64) -> f64 {
                1.0 + 2.0 * x - x * x * x
            }
            fn derivatives(&self, x: f64, k: usize) -> Vec<f64> {
                let all = [self.value(x), 2.0 - 3.0 * x * x, -6.0 * x, -6.0, 0.0, 0.0];
                all[..=k].to_vec()
            }
            fn coefficients(&self, order: usize) -> Result<Vec<f64>> {
                Ok([1.0, 2.0, 0.0, -1.0, 0.0][..=order].to_vec())
            }
        }
        let r = taylor_remainder(&Cubic, 3, 0.3).unwrap();
        assert!(r.direct.abs() < 1e-15 && r.integral.abs() < 1e-15);
        let r0 = taylor_remainder(&Cubic, 0, 0.3).unwrap();
        assert!((r0.direct - (Cubic.value(0.3) - 1.0)).abs() < 1e-15);
        assert!((r0.integral - r0.direct).abs() < 1e-13);
    }

    #[test]
    fn one_site_remainder_agrees() {
        let model = QuarticModel::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let target = QuadratureTarget::new(model, 120).unwrap();
        let r = taylor_remainder(&target, 2, 0.05).unwrap();
        assert!(r.agreement < 1e-5, "{r:?}");
        assert!(!r.derivative_warning);
    }
}
