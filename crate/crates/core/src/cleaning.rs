//! Scale-by-scale rewriting of dual-cycle words: the resolvent cleaning step,
//! Gaussian integration by parts with its geometric classification, the
//! stopping rule, and the pairing of inner tadpoles with counterterms.
//!
//! A word is a cyclic product of operators on the lattice sites, traced and
//! integrated against the unit Gaussian field `σ`:
//!
//! * `Res(j)` is `R^j(σ) = (1 + σ A_{≤j})^{-1}` with `A = 2i√λ C`, and `R^{-1} = 1`;
//! * `Prop` is a bare covariance (one slice, or all slices up to `j`);
//! * `Delta(j)` / `DeltaBar(j)` are `A_j` / `A_{≤j}`;
//! * `Sigma` is `diag(σ)`; `Proj(l)` is `E_x`, summed over `x` jointly for both ends of label `l`;
//! * `Counter(j)` is `-2i√λ T_j · 1`, the counterterm of slice `j`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Rational64;
use num_traits::Zero;
use serde::Serialize;

use crate::covariance::{lattice_covariance, CutoffMode, LatticeShape};
use crate::error::{LveError, Result};
use crate::quadrature::gauss_hermite;

pub const DEFAULT_RECORD_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PropKind {
    Slice(i32),
    UpTo(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Factor {
    Res(i32),
    Prop(PropKind),
    Delta(i32),
    DeltaBar(i32),
    Sigma,
    Proj(u32),
    Counter(i32),
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Res(j) => write!(f, "R{j}"),
            Factor::Prop(PropKind::Slice(j)) => write!(f, "C{j}"),
            Factor::Prop(PropKind::UpTo(j)) => write!(f, "Cb{j}"),
            Factor::Delta(j) => write!(f, "D{j}"),
            Factor::DeltaBar(j) => write!(f, "Db{j}"),
            Factor::Sigma => write!(f, "s"),
            Factor::Proj(l) => write!(f, "P{l}"),
            Factor::Counter(j) => write!(f, "X{j}"),
        }
    }
}

pub fn word_to_string(word: &[Factor]) -> String {
    word.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Classification {
    InnerTadpole,
    Crossing,
    Nesting,
    LowerScale,
    /// Second term of the sandwich formula: a fresh `σ` awaiting its own integration by parts.
    Continuation,
    Remainder,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::InnerTadpole => "inner-tadpole",
            Classification::Crossing => "crossing",
            Classification::Nesting => "nesting",
            Classification::LowerScale => "lower-scale",
            Classification::Continuation => "continuation",
            Classification::Remainder => "remainder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermRecord {
    pub word: Vec<Factor>,
    pub scale: i32,
    pub classification: Classification,
    pub sign: i64,
    pub bound_factor: f64,
    /// Scale-`j` lines gathered so far, per scale.
    pub j_lines: BTreeMap<i32, u32>,
    /// Classifications met along the branch, oldest first.
    pub history: Vec<Classification>,
    /// Scale at which the branch stopped (`-1`: fully cleaned); only for remainders.
    pub stop_scale: Option<i32>,
    /// `true` for counterterm twins generated by `pair_tadpoles`.
    pub twin: bool,
}

impl TermRecord {
    pub fn new(word: Vec<Factor>, scale: i32) -> Self {
        Self {
            word,
            scale,
            classification: Classification::Remainder,
            sign: 1,
            bound_factor: 1.0,
            j_lines: BTreeMap::new(),
            history: Vec::new(),
            stop_scale: None,
            twin: false,
        }
    }

    pub fn word_string(&self) -> String {
        word_to_string(&self.word)
    }

    fn next_label(&self) -> u32 {
        self.word.iter().filter_map(|f| if let Factor::Proj(l) = f { Some(l + 1) } else { None }).max().unwrap_or(0)
    }

    fn lines_at(&self, j: i32) -> u32 {
        self.j_lines.get(&j).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "word": self.word_string(),
            "scale": self.scale,
            "classification": self.classification.name(),
            "sign": self.sign,
            "bound_factor": self.bound_factor,
            "j_lines": self.j_lines.iter().map(|(j, n)| serde_json::json!([j, n])).collect::<Vec<_>>(),
            "history": self.history.iter().map(|c| c.name()).collect::<Vec<_>>(),
            "stop_scale": self.stop_scale,
            "twin": self.twin,
        })
    }
}

/// `R^j → R^{j-1} - R^{j-1} σ A_j R^j` on the first (or last) `Res(j)` of the word.
/// A word without such a resolvent is returned unchanged.
pub fn cleaning_step(t: &TermRecord, j: i32) -> Vec<TermRecord> {
    cleaning_step_oriented(t, j, false)
}

fn cleaning_step_oriented(t: &TermRecord, j: i32, reverse: bool) -> Vec<TermRecord> {
    let pos = if reverse {
        t.word.iter().rposition(|f| *f == Factor::Res(j))
    } else {
        t.word.iter().position(|f| *f == Factor::Res(j))
    };
    let Some(q) = pos else {
        return vec![t.clone()];
    };
    let mut lower = t.clone();
    lower.word[q] = Factor::Res(j - 1);
    let mut expanded = t.clone();
    expanded.word.splice(q..=q, [Factor::Res(j - 1), Factor::Sigma, Factor::Delta(j), Factor::Res(j)]);
    expanded.sign = -t.sign;
    vec![lower, expanded]
}

fn chords(word: &[Factor]) -> Vec<(usize, usize)> {
    let mut first: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, f) in word.iter().enumerate() {
        if let Factor::Proj(l) = f {
            if let Some(a) = first.remove(l) {
                out.push((a, i));
            } else {
                first.insert(*l, i);
            }
        }
    }
    out
}

fn crosses(a: (usize, usize), b: (usize, usize)) -> bool {
    let inside = |x: usize| a.0 < x && x < a.1;
    inside(b.0) != inside(b.1)
}

/// Integration by parts of the single explicit `σ`: one branch per resolvent it can hit.
/// `scale` is the scale currently being cleaned.
pub fn integrate_by_parts(t: &TermRecord, scale: i32) -> Result<Vec<TermRecord>> {
    let sigmas: Vec<usize> = t.word.iter().enumerate().filter(|(_, f)| **f == Factor::Sigma).map(|(i, _)| i).collect();
    if sigmas.len() != 1 {
        return Err(LveError::ContractViolation(format!(
            "integration by parts needs exactly one explicit σ, word has {}",
            sigmas.len()
        )));
    }
    let p = sigmas[0];
    let label = t.next_label();
    let mut out = Vec::new();
    for (q, f) in t.word.iter().enumerate() {
        let Factor::Res(s) = *f else { continue };
        if s < 0 {
            continue;
        }
        let mut word = t.word.clone();
        word[p] = Factor::Proj(label);
        word.splice(q..=q, [Factor::Res(s), Factor::Proj(label), Factor::DeltaBar(s), Factor::Res(s)]);
        let new_proj = if q < p { q + 1 } else { q + 1 };
        let proj_positions = (p.min(new_proj), p.max(new_proj));
        let mut branch = t.clone();
        branch.word = word;
        branch.sign = -t.sign;
        let crossing = chords(&branch.word)
            .into_iter()
            .filter(|&c| c != proj_positions)
            .any(|c| crosses(proj_positions, c));
        let adjacent = q == p + 2 && t.word[p + 1] == Factor::Delta(scale);
        let class = if s < scale {
            Classification::LowerScale
        } else if crossing {
            Classification::Crossing
        } else if adjacent {
            // sandwich the hit resolvent: R = 1 - σ A_{≤s} R
            let mut tadpole = branch.clone();
            tadpole.word.remove(q);
            tadpole.classification = Classification::InnerTadpole;
            tadpole.history.push(Classification::InnerTadpole);
            out.push(tadpole);
            let mut cont = branch;
            cont.word.splice(q..=q, [Factor::Sigma, Factor::DeltaBar(s), Factor::Res(s)]);
            cont.sign = -cont.sign;
            cont.classification = Classification::Continuation;
            cont.history.push(Classification::Continuation);
            out.push(cont);
            continue;
        } else {
            Classification::Nesting
        };
        branch.classification = class;
        branch.history.push(class);
        out.push(branch);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CleaningOptions {
    pub a: f64,
    pub j_max: i32,
    pub cap: usize,
    /// Count nesting lines towards the stopping rule.
    pub count_nesting: bool,
    /// Traverse the cycle backwards.
    pub reverse: bool,
    pub slice_ratio: f64,
    /// Constant `K` of the per-line bound `K M^{-2j}`.
    pub line_constant: f64,
}

impl CleaningOptions {
    pub fn new(a: f64, j_max: i32) -> Self {
        Self {
            a,
            j_max,
            cap: DEFAULT_RECORD_CAP,
            count_nesting: true,
            reverse: false,
            slice_ratio: crate::covariance::DEFAULT_SLICE_RATIO,
            line_constant: 1.0,
        }
    }

    pub fn threshold(&self, j: i32) -> u32 {
        (self.a * j as f64).ceil().max(0.0) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermLedger {
    pub records: Vec<TermRecord>,
    /// Largest scale at which some branch stopped; `None` when nothing stopped.
    pub stop_scale: Option<i32>,
    pub truncated: bool,
    /// Number of branch nodes processed.
    pub processed: usize,
}

impl TermLedger {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_json().to_string());
            s.push('\n');
        }
        s
    }

    pub fn count(&self, class: Classification) -> usize {
        self.records.iter().filter(|r| r.classification == class).count()
    }

    /// `N_j` at scale `j` of every record.
    pub fn max_lines(&self, j: i32) -> u32 {
        self.records.iter().map(|r| r.lines_at(j)).max().unwrap_or(0)
    }
}

enum Pending {
    Clean(TermRecord),
    Integrate(TermRecord),
}

/// Breadth-first cleaning from `j_max` down, stopping a branch when its
/// `j`-line count reaches `ceil(a j)`.
pub fn run_cleaning(start: &[Factor], opts: &CleaningOptions) -> Result<TermLedger> {
    if !(opts.a > 0.0) {
        return Err(LveError::Domain(format!("a must be positive, got {}", opts.a)));
    }
    let mut queue = VecDeque::new();
    queue.push_back(Pending::Clean(TermRecord::new(start.to_vec(), opts.j_max)));
    let mut records = Vec::new();
    let mut processed = 0usize;
    let mut truncated = false;
    while let Some(item) = queue.pop_front() {
        if records.len() + queue.len() >= opts.cap {
            truncated = true;
            let mut rest = vec![item];
            rest.extend(queue.drain(..));
            for pending in rest {
                match pending {
                    Pending::Clean(mut r) | Pending::Integrate(mut r) => {
                        r.classification = Classification::Remainder;
                        r.stop_scale = Some(r.scale);
                        records.push(r);
                    }
                }
            }
            break;
        }
        processed += 1;
        match item {
            Pending::Clean(mut r) => {
                let j = r.scale;
                let has_any = r.word.iter().any(|f| matches!(f, Factor::Res(s) if *s >= 0 && *s <= j));
                if !has_any || j < 0 {
                    r.classification = Classification::Remainder;
                    r.stop_scale = Some(-1);
                    records.push(r);
                    continue;
                }
                if r.lines_at(j) >= opts.threshold(j) {
                    r.classification = Classification::Remainder;
                    r.stop_scale = Some(j);
                    records.push(r);
                    continue;
                }
                if r.word.contains(&Factor::Res(j)) {
                    let mut steps = cleaning_step_oriented(&r, j, opts.reverse).into_iter();
                    let lower = steps.next().expect("lower branch");
                    queue.push_back(Pending::Clean(lower));
                    if let Some(expanded) = steps.next() {
                        queue.push_back(Pending::Integrate(expanded));
                    }
                } else {
                    r.scale = j - 1;
                    queue.push_back(Pending::Clean(r));
                }
            }
            Pending::Integrate(r) => {
                let j = r.scale;
                for mut b in integrate_by_parts(&r, j)? {
                    match b.classification {
                        Classification::InnerTadpole => records.push(b),
                        Classification::Continuation => queue.push_back(Pending::Integrate(b)),
                        class => {
                            if class != Classification::Nesting || opts.count_nesting {
                                *b.j_lines.entry(j).or_insert(0) += 1;
                            }
                            b.bound_factor *= (opts.line_constant * opts.slice_ratio.powi(-2 * j)).min(1.0);
                            queue.push_back(Pending::Clean(b));
                        }
                    }
                }
            }
        }
    }
    let stop_scale = records.iter().filter_map(|r| r.stop_scale).max();
    Ok(TermLedger { records, stop_scale, truncated, processed })
}

/// The two-resolvent cycle of the worked example: both resolvents and both
/// propagators at scale `j_max`, the tree line identifying their first arguments.
pub fn two_resolvent_example(j_max: i32) -> Vec<Factor> {
    vec![
        Factor::Proj(0),
        Factor::Res(j_max),
        Factor::Prop(PropKind::Slice(j_max)),
        Factor::Proj(0),
        Factor::Res(j_max),
        Factor::Prop(PropKind::Slice(j_max)),
    ]
}

/// A single loop with `n` resolvent–propagator pairs at scale `j_max`.
pub fn single_loop_word(n: usize, j_max: i32) -> Vec<Factor> {
    (0..n).flat_map(|_| [Factor::Res(j_max), Factor::Prop(PropKind::Slice(j_max))]).collect()
}

/// Position of the `P_l Δ_j P_l` tadpole in an inner-tadpole word.
fn tadpole_site(word: &[Factor]) -> Option<(usize, i32)> {
    word.windows(3).position(|w| matches!(w, [Factor::Proj(a), Factor::Delta(_), Factor::Proj(b)] if a == b)).map(|i| {
        let Factor::Delta(j) = word[i + 1] else { unreachable!() };
        (i, j)
    })
}

/// Net exact tadpole coefficient per scale, in units of `2i√λ T_j`.
pub fn net_tadpole_coefficients(ledger: &TermLedger) -> BTreeMap<i32, Rational64> {
    let mut net: BTreeMap<i32, Rational64> = BTreeMap::new();
    for r in &ledger.records {
        if r.classification != Classification::InnerTadpole {
            continue;
        }
        let scale = if r.twin {
            r.word.iter().find_map(|f| if let Factor::Counter(j) = f { Some(*j) } else { None })
        } else {
            tadpole_site(&r.word).map(|(_, j)| j)
        };
        if let Some(j) = scale {
            let unit = if r.twin { -1 } else { 1 };
            *net.entry(j).or_insert_with(Rational64::zero) += Rational64::from_integer(unit * r.sign);
        }
    }
    net
}

/// Adds, for every inner tadpole, the twin carrying the counterterm `Counter(j)`
/// in place of the tadpole. Tadpoles only arise while their branch is still
/// above its own stop scale, so every one of them is compensated.
pub fn pair_tadpoles(ledger: &TermLedger) -> Result<TermLedger> {
    let mut out = ledger.clone();
    for r in &ledger.records {
        if r.classification != Classification::InnerTadpole || r.twin {
            continue;
        }
        let Some((i, j)) = tadpole_site(&r.word) else {
            return Err(LveError::CancellationFailure(format!("no tadpole found in {}", r.word_string())));
        };
        let mut twin = r.clone();
        twin.word.splice(i..i + 3, [Factor::Counter(j)]);
        twin.twin = true;
        out.records.push(twin);
    }
    for (j, c) in net_tadpole_coefficients(&out) {
        if !c.is_zero() {
            return Err(LveError::CancellationFailure(format!("scale {j} keeps net tadpole coefficient {c}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderBound {
    pub stop_scale: i32,
    /// `log(Π K M^{-2j} · Π_j N_j!)`.
    pub log_bound: f64,
    /// `-j0²`.
    pub log_target: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub remainders: Vec<RemainderBound>,
    pub all_within: bool,
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Bound of every remainder: its line factors times the `N_j!` combinatorics, compared with `e^{-j0²}`.
pub fn bound_product(ledger: &TermLedger, slice_ratio: f64, line_constant: f64) -> BoundReport {
    let mut remainders = Vec::new();
    for r in ledger.records.iter().filter(|r| r.classification == Classification::Remainder) {
        let j0 = r.stop_scale.unwrap_or(-1);
        if j0 < 0 {
            remainders.push(RemainderBound { stop_scale: j0, log_bound: 0.0, log_target: 0.0, within: true });
            continue;
        }
        let mut log_bound = 0.0;
        for (&j, &n) in &r.j_lines {
            log_bound += n as f64 * (line_constant.ln() - 2.0 * j as f64 * slice_ratio.ln()) + ln_factorial(n);
        }
        let log_target = -((j0 * j0) as f64);
        remainders.push(RemainderBound { stop_scale: j0, log_bound, log_target, within: log_bound <= log_target });
    }
    let all_within = remainders.iter().all(|b| b.within);
    BoundReport { remainders, all_within }
}

/// `(M^{-2j})^{aj} (aj)!` against `e^{-j²}`, in logarithms.
pub fn stopping_factor_check(a: f64, slice_ratio: f64, j: u32) -> (f64, f64, bool) {
    let n = (a * j as f64).ceil() as u32;
    let lhs = -2.0 * j as f64 * n as f64 * slice_ratio.ln() + ln_factorial(n);
    let rhs = -((j * j) as f64);
    (lhs, rhs, lhs < rhs)
}

/// Numerical value of words on a small periodic lattice.
pub struct WordEvaluator {
    sites: usize,
    lambda: f64,
    slices: Vec<DMatrix<f64>>,
    tadpoles: Vec<f64>,
    nodes: Vec<(Vec<f64>, f64)>,
}

impl WordEvaluator {
    /// Slices `0..=j_max` of the heat-kernel lattice covariance on an `n`-site ring.
    pub fn ring(n: usize, spacing: f64, mass: f64, slice_ratio: f64, j_max: i32, lambda: f64, gh_order: usize) -> Result<Self> {
        if n > 3 {
            return Err(LveError::CostCap(format!("word evaluation limited to 3 sites, got {n}")));
        }
        let mut slices = Vec::new();
        for j in 0..=j_max.max(0) {
            let mode = CutoffMode::Slice { slice_ratio, j: j as u32 };
            slices.push(lattice_covariance(LatticeShape::chain(n), spacing, mass, mode)?.covariance);
        }
        let tadpoles = slices.iter().map(|c| c[(0, 0)]).collect();
        let (x, w) = gauss_hermite(gh_order);
        let z: Vec<f64> = x.iter().map(|t| t * std::f64::consts::SQRT_2).collect();
        let w: Vec<f64> = w.iter().map(|t| t / std::f64::consts::PI.sqrt()).collect();
        let mut nodes = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            nodes.push((idx.iter().map(|&i| z[i]).collect(), idx.iter().map(|&i| w[i]).product()));
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] < gh_order {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        Ok(Self { sites: n, lambda, slices, tadpoles, nodes })
    }

    pub fn tadpole(&self, j: i32) -> f64 {
        self.tadpoles[j as usize]
    }

    fn up_to(&self, j: i32) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.sites, self.sites);
        for k in 0..=j {
            m += &self.slices[k as usize];
        }
        m
    }

    fn complex(m: &DMatrix<f64>, scale: Complex64) -> DMatrix<Complex64> {
        m.map(|x| scale * x)
    }

    /// `sign · ∫dν(σ) Σ_labels Tr Π factors` of a record.
    pub fn record_value(&self, r: &TermRecord) -> Result<Complex64> {
        Ok(self.value(&r.word)? * r.sign as f64)
    }

    pub fn value(&self, word: &[Factor]) -> Result<Complex64> {
        let max_j = self.slices.len() as i32 - 1;
        for f in word {
            let j = match *f {
                Factor::Res(j) | Factor::Delta(j) | Factor::DeltaBar(j) | Factor::Counter(j) => j,
                Factor::Prop(PropKind::Slice(j)) | Factor::Prop(PropKind::UpTo(j)) => j,
                _ => 0,
            };
            if j > max_j {
                return Err(LveError::Domain(format!("factor {f} above the evaluator's top scale {max_j}")));
            }
        }
        let i2 = Complex64::new(0.0, 2.0 * self.lambda.sqrt());
        let s = self.sites;
        let id = DMatrix::<Complex64>::identity(s, s);
        let constant = |f: &Factor| -> Option<DMatrix<Complex64>> {
            match *f {
                Factor::Prop(PropKind::Slice(j)) => Some(Self::complex(&self.slices[j as usize], Complex64::new(1.0, 0.0))),
                Factor::Prop(PropKind::UpTo(j)) => Some(Self::complex(&self.up_to(j), Complex64::new(1.0, 0.0))),
                Factor::Delta(j) => Some(Self::complex(&self.slices[j as usize], i2)),
                Factor::DeltaBar(j) => Some(Self::complex(&self.up_to(j), i2)),
                Factor::Counter(j) => Some(id.map(|x| x * -i2 * self.tadpoles[j as usize])),
                Factor::Res(j) if j < 0 => Some(id.clone()),
                _ => None,
            }
        };
        let fixed: Vec<Option<DMatrix<Complex64>>> = word.iter().map(constant).collect();
        let a_bar: BTreeMap<i32, DMatrix<Complex64>> = word
            .iter()
            .filter_map(|f| if let Factor::Res(j) = f { (*j >= 0).then_some(*j) } else { None })
            .map(|j| (j, Self::complex(&self.up_to(j), i2)))
            .collect();

        // rotate so that the word starts at a projection
        let proj: Vec<usize> = word.iter().enumerate().filter(|(_, f)| matches!(f, Factor::Proj(_))).map(|(i, _)| i).collect();
        let labels: Vec<u32> = {
            let mut l: Vec<u32> = proj.iter().map(|&i| if let Factor::Proj(l) = word[i] { l } else { 0 }).collect();
            l.sort_unstable();
            l.dedup();
            l
        };
        let mut total = Complex64::new(0.0, 0.0);
        for (sigma, weight) in &self.nodes {
            let sig = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(s, sigma.iter().map(|&x| Complex64::new(x, 0.0))));
            let res: BTreeMap<i32, DMatrix<Complex64>> = a_bar
                .iter()
                .map(|(&j, a)| {
                    let m = &id + &sig * a;
                    (j, m.try_inverse().expect("resolvent exists for real σ"))
                })
                .collect();
            let mat = |i: usize| -> DMatrix<Complex64> {
                if let Some(m) = &fixed[i] {
                    return m.clone();
                }
                match word[i] {
                    Factor::Res(j) => res[&j].clone(),
                    Factor::Sigma => sig.clone(),
                    _ => unreachable!("projections are handled separately"),
                }
            };
            let v = if proj.is_empty() {
                let mut m = id.clone();
                for i in 0..word.len() {
                    m *= mat(i);
                }
                m.trace()
            } else {
                let k = proj.len();
                let mut segments = Vec::with_capacity(k);
                for a in 0..k {
                    let start = proj[a];
                    let end = proj[(a + 1) % k];
                    let mut m = id.clone();
                    let mut i = (start + 1) % word.len();
                    while i != end {
                        m *= mat(i);
                        i = (i + 1) % word.len();
                    }
                    segments.push(m);
                }
                let label_of: Vec<usize> = proj
                    .iter()
                    .map(|&i| {
                        let Factor::Proj(l) = word[i] else { unreachable!() };
                        labels.binary_search(&l).expect("label")
                    })
                    .collect();
                let mut assign = vec![0usize; labels.len()];
                let mut acc = Complex64::new(0.0, 0.0);
                loop {
                    let mut prod = Complex64::new(1.0, 0.0);
                    for a in 0..k {
                        prod *= segments[a][(assign[label_of[a]], assign[label_of[(a + 1) % k]])];
                    }
                    acc += prod;
                    let mut d = 0;
                    while d < assign.len() {
                        assign[d] += 1;
                        if assign[d] < s {
                            break;
                        }
                        assign[d] = 0;
                        d += 1;
                    }
                    if d == assign.len() {
                        break;
                    }
                }
                acc
            };
            total += v * *weight;
        }
        Ok(total)
    }

    /// Sum of the values of every record of a ledger.
    pub fn ledger_value(&self, ledger: &TermLedger) -> Result<Complex64> {
        ledger.records.iter().map(|r| self.record_value(r)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cleaning_step_shape() {
        let r = TermRecord::new(vec![Factor::Res(3)], 3);
        let out = cleaning_step(&r, 3);
        assert_eq!(out[0].word, vec![Factor::Res(2)]);
        assert_eq!(out[1].word, vec![Factor::Res(2), Factor::Sigma, Factor::Delta(3), Factor::Res(3)]);
        assert_eq!(out[1].sign, -1);
        assert_eq!(cleaning_step(&r, 5), vec![r]);
    }

    #[test]
    fn first_integration_by_parts_branches() {
        let start = TermRecord::new(two_resolvent_example(3), 3);
        let expanded = cleaning_step(&start, 3).pop().unwrap();
        let branches = integrate_by_parts(&expanded, 3).unwrap();
        let classes: Vec<Classification> = branches.iter().map(|b| b.classification).collect();
        assert_eq!(
            classes,
            vec![
                Classification::LowerScale,
                Classification::InnerTadpole,
                Classification::Continuation,
                Classification::Crossing
            ]
        );
        assert_eq!(branches[1].word_string(), "P0 R2 P1 D3 P1 Db3 R3 C3 P0 R3 C3");
    }

    #[test]
    fn single_resolvent_cannot_cross() {
        let start = TermRecord::new(single_loop_word(1, 2), 2);
        let expanded = cleaning_step(&start, 2).pop().unwrap();
        for b in integrate_by_parts(&expanded, 2).unwrap() {
            assert_ne!(b.classification, Classification::Crossing);
        }
    }

    #[test]
    fn integration_by_parts_needs_sigma() {
        let r = TermRecord::new(vec![Factor::Res(1)], 1);
        assert!(matches!(integrate_by_parts(&r, 1), Err(LveError::ContractViolation(_))));
    }

    #[test]
    fn trivial_ledger_at_scale_zero() {
        let ledger = run_cleaning(&two_resolvent_example(0), &CleaningOptions::new(1.0, 0)).unwrap();
        assert_eq!(ledger.records.len(), 1);
        assert_eq!(ledger.stop_scale, Some(0));
    }

    #[test]
    fn stopping_factor() {
        let (lhs, rhs, ok) = stopping_factor_check(1.0, crate::covariance::DEFAULT_SLICE_RATIO, 12);
        assert!(ok && lhs < rhs);
    }
}

#[cfg(test)]
mod conservation_tests {
    use super::*;

    #[test]
    fn ledger_sums_to_start_value() {
        let ev = WordEvaluator::ring(2, 1.0, 1.0, crate::covariance::DEFAULT_SLICE_RATIO, 3, 0.05, 20).unwrap();
        for (start, j_max, a) in [(two_resolvent_example(3), 3, 0.5), (single_loop_word(2, 2), 2, 1.0)] {
            let ledger = run_cleaning(&start, &CleaningOptions::new(a, j_max)).unwrap();
            assert!(!ledger.truncated);
            let v0 = ev.value(&start).unwrap();
            let v = ev.ledger_value(&ledger).unwrap();
            assert!((v - v0).norm() < 1e-10 * v0.norm(), "{v} vs {v0}");
        }
    }

    #[test]
    fn twins_cancel_numerically() {
        let ev = WordEvaluator::ring(2, 1.0, 1.0, crate::covariance::DEFAULT_SLICE_RATIO, 2, 0.05, 12).unwrap();
        let ledger = run_cleaning(&single_loop_word(1, 2), &CleaningOptions::new(1.0, 2)).unwrap();
        let paired = pair_tadpoles(&ledger).unwrap();
        let twins: Vec<&TermRecord> = paired.records.iter().filter(|r| r.twin).collect();
        assert!(!twins.is_empty());
        let originals = &paired.records[..ledger.records.len()];
        let mut net = Complex64::new(0.0, 0.0);
        let mut scale = 0.0f64;
        for r in originals.iter().filter(|r| r.classification == Classification::InnerTadpole) {
            let v = ev.record_value(r).unwrap();
            net += v;
            scale = scale.max(v.norm());
        }
        for t in twins {
            net += ev.record_value(t).unwrap();
        }
        assert!(net.norm() < 1e-13 * scale.max(1e-300), "{net}");
    }

    #[test]
    fn larger_a_keeps_more_remainders() {
        let start = two_resolvent_example(3);
        let mut last = 0;
        for a in [0.25, 0.5, 0.75, 1.0] {
            let l = run_cleaning(&start, &CleaningOptions::new(a, 3)).unwrap();
            let n = l.count(Classification::Remainder);
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn cap_truncates_without_losing_terms() {
        let mut opts = CleaningOptions::new(1.0, 3);
        opts.cap = 500;
        let l = run_cleaning(&two_resolvent_example(3), &opts).unwrap();
        assert!(l.truncated);
        let ev = WordEvaluator::ring(2, 1.0, 1.0, crate::covariance::DEFAULT_SLICE_RATIO, 3, 0.05, 28).unwrap();
        let v0 = ev.value(&two_resolvent_example(3)).unwrap();
        let v = ev.ledger_value(&l).unwrap();
        assert!((v - v0).norm() < 1e-10 * v0.norm(), "{v} vs {v0}");
    }
}
