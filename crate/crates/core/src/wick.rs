//! Exact Gaussian moments and perturbative / quadrature values of `log Z`
//! for the Wick-ordered quartic interaction on a handful of sites.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::covariance::LatticeModel;
use crate::error::{LveError, Result};
use crate::quadrature::gauss_hermite;

pub const MAX_MOMENT_DEGREE: usize = 16;

/// Finite-dimensional model `Z = ∫ dμ_C e^{-(λ/2) Σ_x :φ_x⁴:}` with Wick ordering at `tadpole`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuarticModel {
    #[serde(serialize_with = "serialize_matrix")]
    pub covariance: DMatrix<f64>,
    pub tadpole: f64,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

impl QuarticModel {
    /// Wick ordering with respect to the covariance itself (`T = C(x, x)`), which must be constant.
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() == 0 || covariance.nrows() != covariance.ncols() {
            return Err(LveError::Domain("covariance must be a non-empty square matrix".into()));
        }
        let t = covariance[(0, 0)];
        if (0..covariance.nrows()).any(|i| (covariance[(i, i)] - t).abs() > 1e-12 * t.abs()) {
            return Err(LveError::Domain("diagonal of the covariance is not constant".into()));
        }
        Ok(Self { covariance, tadpole: t })
    }

    pub fn with_tadpole(covariance: DMatrix<f64>, tadpole: f64) -> Self {
        Self { covariance, tadpole }
    }

    pub fn from_lattice(model: &LatticeModel) -> Self {
        Self { covariance: model.covariance.clone(), tadpole: model.tadpole }
    }

    pub fn sites(&self) -> usize {
        self.covariance.nrows()
    }
}

/// Sum over pair partitions of products of covariance entries. Odd degree gives 0.
pub fn gaussian_moment(cov: &DMatrix<f64>, indices: &[usize]) -> Result<f64> {
    if indices.len() > MAX_MOMENT_DEGREE {
        return Err(LveError::EnumerationLimit { requested: indices.len(), cap: MAX_MOMENT_DEGREE });
    }
    if indices.iter().any(|&i| i >= cov.nrows()) {
        return Err(LveError::Domain("site index out of range".into()));
    }
    if indices.len() % 2 == 1 {
        return Ok(0.0);
    }
    fn pairings(cov: &DMatrix<f64>, rest: &mut Vec<usize>) -> f64 {
        if rest.is_empty() {
            return 1.0;
        }
        let first = rest.remove(0);
        let mut total = 0.0;
        for k in 0..rest.len() {
            let partner = rest.remove(k);
            total += cov[(first, partner)] * pairings(cov, rest);
            rest.insert(k, partner);
        }
        rest.insert(0, first);
        total
    }
    Ok(pairings(cov, &mut indices.to_vec()))
}

/// `⟨Π_k φ_{sites[k]}^{exps[k]}⟩` by the reduction `⟨φ_i X⟩ = Σ_j C_ij ⟨∂_j X⟩`, memoized on exponents.
pub struct WickReducer<'a> {
    cov: &'a DMatrix<f64>,
    sites: Vec<usize>,
    memo: HashMap<Vec<u8>, f64>,
}

impl<'a> WickReducer<'a> {
    pub fn new(cov: &'a DMatrix<f64>, sites: Vec<usize>) -> Self {
        Self { cov, sites, memo: HashMap::new() }
    }

    pub fn moment(&mut self, exps: &[u8]) -> f64 {
        let Some(i) = exps.iter().position(|&e| e > 0) else {
            return 1.0;
        };
        if exps.iter().map(|&e| e as usize).sum::<usize>() % 2 == 1 {
            return 0.0;
        }
        if let Some(&v) = self.memo.get(exps) {
            return v;
        }
        let mut rest = exps.to_vec();
        rest[i] -= 1;
        let mut total = 0.0;
        for j in 0..rest.len() {
            if rest[j] == 0 {
                continue;
            }
            let c = self.cov[(self.sites[i], self.sites[j])];
            let mult = rest[j] as f64;
            rest[j] -= 1;
            total += c * mult * self.moment(&rest);
            rest[j] += 1;
        }
        self.memo.insert(exps.to_vec(), total);
        total
    }
}

/// Moment of a multiset of site indices by recursive Wick reduction.
pub fn wick_reduction_moment(cov: &DMatrix<f64>, indices: &[usize]) -> f64 {
    let mut sites: Vec<usize> = indices.to_vec();
    sites.sort_unstable();
    sites.dedup();
    let exps: Vec<u8> = sites.iter().map(|s| indices.iter().filter(|&&i| i == *s).count() as u8).collect();
    WickReducer::new(cov, sites).moment(&exps)
}

/// Coefficients `(1, -6T, 3T²)` of `:φ⁴:` on `(φ⁴, φ², 1)`.
pub fn wick_order_quartic(tadpole: f64) -> [f64; 3] {
    [1.0, -6.0 * tadpole, 3.0 * tadpole * tadpole]
}

/// `⟨Π_k :φ_{x_k}⁴:⟩` for the listed sites (repetitions allowed).
pub fn wick_product_moment(model: &QuarticModel, sites: &[usize]) -> f64 {
    let mut distinct: Vec<usize> = sites.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let slot: Vec<usize> = sites.iter().map(|s| distinct.binary_search(s).expect("present")).collect();
    let coeffs = wick_order_quartic(model.tadpole);
    let mut expansion: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    let mut choice = vec![0usize; sites.len()];
    loop {
        let mut exps = vec![0u8; distinct.len()];
        let mut c = 1.0;
        for (k, &ch) in choice.iter().enumerate() {
            exps[slot[k]] += [4u8, 2, 0][ch];
            c *= coeffs[ch];
        }
        *expansion.entry(exps).or_insert(0.0) += c;
        let mut d = 0;
        loop {
            if d == choice.len() {
                let mut reducer = WickReducer::new(&model.covariance, distinct);
                return expansion.iter().map(|(e, c)| c * reducer.moment(e)).sum();
            }
            choice[d] += 1;
            if choice[d] < 3 {
                break;
            }
            choice[d] = 0;
            d += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesCoefficients {
    pub model: serde_json::Value,
    pub method: String,
    /// `a_0 … a_N`.
    pub coefficients: Vec<f64>,
    pub abs_err: Vec<f64>,
}

impl SeriesCoefficients {
    pub fn to_json(&self) -> serde_json::Value {
        let coeffs: Vec<serde_json::Value> = self
            .coefficients
            .iter()
            .zip(&self.abs_err)
            .enumerate()
            .map(|(n, (v, e))| serde_json::json!({"n": n, "value": v, "abs_err": e}))
            .collect();
        serde_json::json!({"model": self.model, "method": self.method, "coefficients": coeffs})
    }
}

pub fn model_descriptor(model: &QuarticModel) -> serde_json::Value {
    serde_json::json!({"sites": model.sites(), "tadpole": model.tadpole})
}

/// Maximum order supported by `log_z_series` for a model of this size.
pub fn max_series_order(sites: usize) -> usize {
    match sites {
        0..=4 => 4,
        5..=16 => 3,
        _ => 0,
    }
}

/// Moments `m_n = ⟨U^n⟩`, `U = Σ_x :φ_x⁴:`, for `n = 0..=order`.
pub fn interaction_moments(model: &QuarticModel, order: usize) -> Result<Vec<f64>> {
    let cap = max_series_order(model.sites());
    if order > cap {
        return Err(LveError::CostCap(format!(
            "order {order} on {} sites exceeds the supported order {cap}",
            model.sites()
        )));
    }
    let s = model.sites();
    let mut moments = vec![1.0];
    for n in 1..=order {
        // ordered tuples are summed through sorted multisets times their multiplicity
        let mut total = 0.0;
        for_each_multiset(s, n, &mut |tuple| total += multiplicity(tuple) * wick_product_moment(model, tuple));
        moments.push(total);
    }
    Ok(moments)
}

/// Calls `f` on every non-decreasing tuple of length `len` over `0..s`.
fn for_each_multiset(s: usize, len: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(s: usize, start: usize, tuple: &mut Vec<usize>, len: usize, f: &mut dyn FnMut(&[usize])) {
        if tuple.len() == len {
            f(tuple);
            return;
        }
        for x in start..s {
            tuple.push(x);
            rec(s, x, tuple, len, f);
            tuple.pop();
        }
    }
    rec(s, 0, &mut Vec::with_capacity(len), len, f);
}

/// Number of orderings of a sorted tuple.
fn multiplicity(sorted: &[usize]) -> f64 {
    let mut m = factorial(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&x| x == sorted[i]).count();
        m /= factorial(j);
        i += j;
    }
    m
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Cumulants from raw moments: `κ_n = m_n - Σ_{k<n} C(n-1, k-1) κ_k m_{n-k}`.
pub fn cumulants_from_moments(moments: &[f64]) -> Vec<f64> {
    let mut kappa = vec![0.0; moments.len()];
    for n in 1..moments.len() {
        let mut v = moments[n];
        for k in 1..n {
            v -= binomial(n - 1, k - 1) * kappa[k] * moments[n - k];
        }
        kappa[n] = v;
    }
    kappa
}

/// Taylor coefficients of `Z(λ)` and `log Z(λ)` through `order`.
pub fn z_and_log_z_series(model: &QuarticModel, order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = interaction_moments(model, order)?;
    let kappa = cumulants_from_moments(&m);
    let z: Vec<f64> = m.iter().enumerate().map(|(n, v)| v * (-0.5f64).powi(n as i32) / factorial(n)).collect();
    let mut log_z: Vec<f64> = kappa.iter().enumerate().map(|(n, v)| v * (-0.5f64).powi(n as i32) / factorial(n)).collect();
    log_z[0] = 0.0;
    Ok((z, log_z))
}

/// Perturbative coefficients `a_0 … a_N` of `log Z`.
pub fn log_z_series(model: &QuarticModel, order: usize) -> Result<SeriesCoefficients> {
    let (_, coefficients) = z_and_log_z_series(model, order)?;
    // floating-point roundoff of the exact moment sums
    let abs_err = coefficients.iter().map(|a| 1e-13 * a.abs()).collect();
    Ok(SeriesCoefficients { model: model_descriptor(model), method: "oracle".into(), coefficients, abs_err })
}

/// Truncated power-series exponential `exp(Σ c_n x^n)` with `c_0 = 0`.
pub fn series_exp(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    out[0] = c[0].exp();
    // e' = c' e  ⇒  k e_k = Σ_{j=1}^k j c_j e_{k-j}
    for k in 1..n {
        let mut acc = 0.0;
        for j in 1..=k {
            acc += j as f64 * c[j] * out[k - j];
        }
        out[k] = acc / k as f64;
    }
    out
}

/// Tensor Gauss–Hermite grid for `∫ dμ_C F(φ)`, storing `U(φ) = Σ_x :φ_x⁴:` at every node.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub weights: Vec<f64>,
    pub potential: Vec<f64>,
    pub order: usize,
}

pub const MAX_DIRECT_SITES: usize = 4;

impl FieldGrid {
    pub fn new(model: &QuarticModel, order: usize) -> Result<Self> {
        let n = model.sites();
        if n > MAX_DIRECT_SITES {
            return Err(LveError::CostCap(format!("direct quadrature limited to {MAX_DIRECT_SITES} sites, got {n}")));
        }
        let root = crate::covariance::square_root(&model.covariance)?;
        let (nodes, w) = gauss_hermite(order);
        let z: Vec<f64> = nodes.iter().map(|t| t * std::f64::consts::SQRT_2).collect();
        let w: Vec<f64> = w.iter().map(|t| t / std::f64::consts::PI.sqrt()).collect();
        let [_, c2, c0] = wick_order_quartic(model.tadpole);
        let total = order.pow(n as u32);
        let mut weights = Vec::with_capacity(total);
        let mut potential = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        let mut phi = vec![0.0; n];
        for _ in 0..total {
            let mut weight = 1.0;
            for &i in &idx {
                weight *= w[i];
            }
            let mut u = 0.0;
            for (x, p) in phi.iter_mut().enumerate() {
                *p = (0..n).map(|k| root[(x, k)] * z[idx[k]]).sum();
                let p2 = *p * *p;
                u += p2 * p2 + c2 * p2 + c0;
            }
            weights.push(weight);
            potential.push(u);
            for d in 0..n {
                idx[d] += 1;
                if idx[d] < order {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self { weights, potential, order })
    }

    /// `log Σ_i w_i e^{-(λ/2) U_i}`, principal branch.
    pub fn log_z(&self, lambda: Complex64) -> Complex64 {
        let shift = self
            .potential
            .iter()
            .map(|u| -0.5 * lambda.re * u)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: Complex64 = self
            .weights
            .iter()
            .zip(&self.potential)
            .map(|(w, u)| w * (-0.5 * lambda * u - shift).exp())
            .sum();
        sum.ln() + shift
    }

    /// `d^k/dλ^k log Z` for `k = 0..=max_order` at real `λ`: cumulants of `-U/2` under the tilted weights.
    pub fn log_z_derivatives(&self, lambda: f64, max_order: usize) -> Vec<f64> {
        let shift = self.potential.iter().map(|u| -0.5 * lambda * u).fold(f64::NEG_INFINITY, f64::max);
        let tilted: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.potential)
            .map(|(w, u)| w * (-0.5 * lambda * u - shift).exp())
            .collect();
        let z: f64 = tilted.iter().sum();
        let mean: f64 = tilted.iter().zip(&self.potential).map(|(p, u)| p * -0.5 * u).sum::<f64>() / z;
        let mut central = vec![0.0; max_order + 1];
        central[0] = 1.0;
        for (p, u) in tilted.iter().zip(&self.potential) {
            let d = -0.5 * u - mean;
            let mut pow = d;
            for c in central.iter_mut().skip(1) {
                *c += p * pow / z;
                pow *= d;
            }
        }
        if max_order >= 1 {
            central[1] = 0.0;
        }
        let mut out = cumulants_from_moments(&central);
        out[0] = z.ln() + shift;
        if max_order >= 1 {
            out[1] = mean;
        }
        out
    }
}

/// Nonperturbative `log Z(λ)` by tensor Gauss–Hermite quadrature, refined until two orders agree.
pub fn direct_log_z(model: &QuarticModel, lambda: Complex64) -> Result<Complex64> {
    direct_log_z_with_tolerance(model, lambda, 1e-8)
}

pub fn direct_log_z_with_tolerance(model: &QuarticModel, lambda: Complex64, rel_tol: f64) -> Result<Complex64> {
    if lambda.re < 0.0 {
        return Err(LveError::Domain(format!("Re λ must be non-negative, got {}", lambda.re)));
    }
    if lambda.norm() > 1.0 {
        return Err(LveError::Domain(format!("|λ| must be at most 1, got {}", lambda.norm())));
    }
    if lambda == Complex64::new(0.0, 0.0) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let orders: &[usize] = match model.sites() {
        1 => &[40, 60, 90, 140, 200],
        2 => &[40, 60, 90, 140],
        3 => &[40, 56, 80],
        _ => &[40, 50, 64],
    };
    let mut previous: Option<Complex64> = None;
    let mut last_diff = f64::INFINITY;
    for &order in orders {
        let value = FieldGrid::new(model, order)?.log_z(lambda);
        if let Some(p) = previous {
            last_diff = (value - p).norm();
            if last_diff <= rel_tol * value.norm().max(1e-300) || last_diff < 1e-15 {
                return Ok(value);
            }
        }
        previous = Some(value);
    }
    Err(LveError::Numeric(format!(
        "Gauss-Hermite refinement did not reach relative tolerance {rel_tol:e}: last change {last_diff:e}"
    )))
}
