//! Massive two-dimensional propagator with an ultraviolet cutoff, its
//! renormalization-group slices, and periodic lattice covariances.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{LveError, Result};
use crate::graph::trees::min_eigenvalue;
use crate::quadrature::adaptive_gk;

pub const DEFAULT_SLICE_RATIO: f64 = std::f64::consts::E * 1.01;
pub const MAX_LATTICE_SIDE: usize = 32;
const KERNEL_REL_TOL: f64 = 1e-10;
/// `α m²` beyond which the Schwinger integrand is negligible (`e^{-745}` underflows).
const EXPONENT_CUTOFF: f64 = 745.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuumCovariance {
    pub mass: f64,
    pub slice_ratio: f64,
    pub j_max: u32,
}

impl ContinuumCovariance {
    pub fn new(mass: f64, slice_ratio: f64, j_max: u32) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(LveError::Domain(format!("mass must be positive, got {mass}")));
        }
        if !(slice_ratio > 1.0) {
            return Err(LveError::Domain(format!("slice ratio must exceed 1, got {slice_ratio}")));
        }
        Ok(Self { mass, slice_ratio, j_max })
    }

    /// `Λ = M^{j_max}`.
    pub fn cutoff(&self) -> f64 {
        self.slice_ratio.powi(self.j_max as i32)
    }

    /// Schwinger parameter range `[lo, hi]` of slice `j` (`hi = ∞` for `j = 0`).
    pub fn slice_range(&self, j: u32) -> (f64, f64) {
        if j == 0 {
            (1.0, f64::INFINITY)
        } else {
            let m = self.slice_ratio;
            (m.powi(-2 * j as i32), m.powi(-2 * j as i32 + 2))
        }
    }

    /// `C_Λ(r)`.
    pub fn kernel(&self, r: f64) -> Result<f64> {
        check_separation(r)?;
        schwinger_integral(self.mass, r, self.cutoff().powi(-2), f64::INFINITY)
    }

    /// `C_j(r)`.
    pub fn slice_kernel(&self, j: u32, r: f64) -> Result<f64> {
        check_separation(r)?;
        if j > self.j_max {
            return Err(LveError::Domain(format!("slice {j} above j_max = {}", self.j_max)));
        }
        let (lo, hi) = self.slice_range(j);
        schwinger_integral(self.mass, r, lo, hi)
    }

    pub fn tadpole_table(&self) -> Result<TadpoleTable> {
        let slices: Vec<f64> = (0..=self.j_max).map(|j| self.slice_kernel(j, 0.0)).collect::<Result<_>>()?;
        let cumulative = slices
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect();
        Ok(TadpoleTable { slices, cumulative })
    }

    /// Radial table rows `(r, C_Λ(r), C_0(r), …, C_{j_max}(r))`.
    pub fn kernel_table(&self, radii: &[f64]) -> Result<Vec<Vec<f64>>> {
        radii
            .iter()
            .map(|&r| {
                let mut row = vec![r, self.kernel(r)?];
                for j in 0..=self.j_max {
                    row.push(self.slice_kernel(j, r)?);
                }
                Ok(row)
            })
            .collect()
    }

    /// Fits `C_j(r) ≤ K e^{-c M^j r}` on `r = s M^{-j}`, `s ∈ (0, s_max]`.
    pub fn fit_slice_decay(&self, j: u32, s_max: f64, samples: usize) -> Result<SliceDecayFit> {
        let scale = self.slice_ratio.powi(j as i32);
        let mut pts = Vec::with_capacity(samples);
        for i in 1..=samples {
            let r = s_max * i as f64 / samples as f64 / scale;
            let v = self.slice_kernel(j, r)?;
            if v > 0.0 {
                pts.push((r, v.ln()));
            }
        }
        if pts.len() < 2 {
            return Err(LveError::Numeric(format!("slice {j} kernel underflows on the fit grid")));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let rate = -sxy / sxx;
        let log_k = pts.iter().map(|&(r, y)| y + rate * r).fold(f64::NEG_INFINITY, f64::max);
        Ok(SliceDecayFit { j, k: log_k.exp(), c: rate / scale, rate })
    }
}

fn check_separation(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(LveError::Domain(format!("separation must be finite and non-negative, got {r}")))
    }
}

/// `(1/4π) ∫_lo^hi dα/α e^{-α m² - r²/(4α)}`, integrated in `t = ln α`.
fn schwinger_integral(mass: f64, r: f64, lo: f64, hi: f64) -> Result<f64> {
    let m2 = mass * mass;
    let t_lo = lo.ln();
    let mut t_hi = if hi.is_finite() { hi.ln() } else { (EXPONENT_CUTOFF / m2).ln() };
    if t_hi <= t_lo {
        if hi.is_finite() {
            return Err(LveError::Domain("empty Schwinger range".into()));
        }
        t_hi = t_lo + 1.0;
    }
    let r2 = r * r / 4.0;
    let f = |t: f64| {
        let a = t.exp();
        (-a * m2 - r2 / a).exp()
    };
    // unit-length panels keep the adaptive routine from missing a narrow peak
    let panels = ((t_hi - t_lo).ceil() as usize).max(1);
    let h = (t_hi - t_lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = t_lo + p as f64 * h;
        let res = adaptive_gk(f, a, a + h, KERNEL_REL_TOL * 1e-2, 0.0).or_else(|_| adaptive_gk(f, a, a + h, KERNEL_REL_TOL, 1e-300))?;
        total += res.value;
    }
    Ok(total / (4.0 * PI))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TadpoleTable {
    pub slices: Vec<f64>,
    pub cumulative: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceDecayFit {
    pub j: u32,
    pub k: f64,
    pub c: f64,
    /// Fitted decay rate `c M^j`.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CutoffMode {
    /// Sharp cutoff `|k| ≤ Λ` on lattice momenta.
    Momentum { cutoff: f64 },
    /// Heat-kernel regularization `∫_{M^{-2 j_max}}^∞ dα e^{-α λ_k}`.
    SliceSum { slice_ratio: f64, j_max: u32 },
    /// A single slice `j` of the heat-kernel decomposition.
    Slice { slice_ratio: f64, j: u32 },
    /// Slices `0..=j`, i.e. `C_{≤j}`.
    UpTo { slice_ratio: f64, j: u32 },
}

impl CutoffMode {
    fn symbol(&self, eigenvalue: f64, momentum2: f64) -> f64 {
        let l = eigenvalue;
        match *self {
            CutoffMode::Momentum { cutoff } => {
                if momentum2 <= cutoff * cutoff {
                    1.0 / l
                } else {
                    0.0
                }
            }
            CutoffMode::SliceSum { slice_ratio, j_max } => (-l * slice_ratio.powi(-2 * j_max as i32)).exp() / l,
            CutoffMode::UpTo { slice_ratio, j } => (-l * slice_ratio.powi(-2 * j as i32)).exp() / l,
            CutoffMode::Slice { slice_ratio, j } => {
                if j == 0 {
                    (-l).exp() / l
                } else {
                    let lo = slice_ratio.powi(-2 * j as i32);
                    let hi = slice_ratio.powi(-2 * j as i32 + 2);
                    // e^{-l lo} - e^{-l hi} without cancellation
                    (-l * lo).exp() * -(-(l * (hi - lo))).exp_m1() / l
                }
            }
        }
    }
}

/// Periodic `nx × ny` lattice with spacing `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatticeShape {
    pub nx: usize,
    pub ny: usize,
}

impl LatticeShape {
    pub fn square(n: usize) -> Self {
        Self { nx: n, ny: n }
    }

    /// `n` sites on a ring.
    pub fn chain(n: usize) -> Self {
        Self { nx: n, ny: 1 }
    }

    pub fn sites(&self) -> usize {
        self.nx * self.ny
    }

    fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.nx, s / self.nx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeModel {
    pub shape: LatticeShape,
    pub spacing: f64,
    pub mass: f64,
    pub mode: CutoffMode,
    /// Covariance between site 0 and every site; the full matrix is its circulant extension.
    pub generator: Vec<f64>,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
    pub tadpole: f64,
}

impl LatticeModel {
    pub fn sites(&self) -> usize {
        self.shape.sites()
    }

    pub fn generator_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nx": self.shape.nx,
            "ny": self.shape.ny,
            "spacing": self.spacing,
            "mass": self.mass,
            "mode": self.mode,
            "tadpole": self.tadpole,
            "generator": self.generator,
        })
    }
}

fn generator_row(shape: LatticeShape, a: f64, m: f64, mode: CutoffMode) -> Vec<f64> {
    let (nx, ny) = (shape.nx, shape.ny);
    let volume = (nx * ny) as f64 * a * a;
    let mut row = vec![0.0; nx * ny];
    for kx in 0..nx {
        for ky in 0..ny {
            let px = 2.0 * PI * kx as f64 / (nx as f64 * a);
            let py = 2.0 * PI * ky as f64 / (ny as f64 * a);
            let sx = (px * a / 2.0).sin();
            let sy = (py * a / 2.0).sin();
            let lap = 4.0 / (a * a) * (sx * sx + sy * sy);
            // momentum representative closest to zero, for the sharp cutoff
            let qx = 2.0 * PI * (kx.min(nx - kx)) as f64 / (nx as f64 * a);
            let qy = 2.0 * PI * (ky.min(ny - ky)) as f64 / (ny as f64 * a);
            let g = mode.symbol(lap + m * m, qx * qx + qy * qy);
            for (s, value) in row.iter_mut().enumerate() {
                let (x, y) = shape.coords(s);
                let phase = 2.0 * PI * (kx as f64 * x as f64 / nx as f64 + ky as f64 * y as f64 / ny as f64);
                *value += phase.cos() * g;
            }
        }
    }
    row.iter_mut().for_each(|v| *v /= volume);
    row
}

/// Covariance of `(-Δ + m²)^{-1}` on the periodic lattice with the given regularization.
pub fn lattice_covariance(shape: LatticeShape, a: f64, m: f64, mode: CutoffMode) -> Result<LatticeModel> {
    if shape.nx == 0 || shape.ny == 0 || shape.nx > MAX_LATTICE_SIDE || shape.ny > MAX_LATTICE_SIDE {
        return Err(LveError::Domain(format!("lattice sides must lie in 1..={MAX_LATTICE_SIDE}")));
    }
    if !(a > 0.0) || !(m > 0.0) {
        return Err(LveError::Domain("spacing and mass must be positive".into()));
    }
    let generator = generator_row(shape, a, m, mode);
    let n = shape.sites();
    let covariance = DMatrix::from_fn(n, n, |s, t| {
        let (x1, y1) = shape.coords(s);
        let (x2, y2) = shape.coords(t);
        let dx = (x2 + shape.nx - x1) % shape.nx;
        let dy = (y2 + shape.ny - y1) % shape.ny;
        generator[dx + dy * shape.nx]
    });
    let scale = generator.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = min_eigenvalue(&covariance);
    if min < -1e-12 * scale.max(1e-300) {
        return Err(LveError::NotPsd { min_eigenvalue: min });
    }
    Ok(LatticeModel { shape, spacing: a, mass: m, mode, tadpole: generator[0], generator, covariance })
}

/// Per-site tadpole `C(x, x)` without building the matrix.
pub fn lattice_tadpole(shape: LatticeShape, a: f64, m: f64, mode: CutoffMode) -> f64 {
    let (nx, ny) = (shape.nx, shape.ny);
    let mut t = 0.0;
    for kx in 0..nx {
        for ky in 0..ny {
            let sx = (PI * kx as f64 / nx as f64).sin();
            let sy = (PI * ky as f64 / ny as f64).sin();
            let lap = 4.0 / (a * a) * (sx * sx + sy * sy);
            let qx = 2.0 * PI * (kx.min(nx - kx)) as f64 / (nx as f64 * a);
            let qy = 2.0 * PI * (ky.min(ny - ky)) as f64 / (ny as f64 * a);
            t += mode.symbol(lap + m * m, qx * qx + qy * qy);
        }
    }
    t / ((nx * ny) as f64 * a * a)
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn square_root(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(LveError::Domain("square root of a non-square matrix".into()));
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(LveError::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}
