//! Counting and brute-force enumeration of planar tadpole / counterterm
//! decorations of a single loop vertex.
//!
//! A pattern places `n` objects around the loop; `k` of them are counterterms
//! (labeled `X1..Xk`), the rest are tadpoles `T`. The loop carries `2n - k`
//! resolvent lines. The marked-position convention: the word is read starting
//! at `X1`, and `X1` is attached to one marked line out of the `2n - k`.

use std::fmt;

use num_bigint::BigUint;
use num_traits::One;
use serde::Serialize;

use crate::error::{LveError, Result};

pub const MAX_ENUMERATION_ORDER: usize = 6;

/// Closed form `(2n - k) (n - 1)! / (n - k)!`.
pub fn count_planar_decorations(n: usize, k: usize) -> Result<BigUint> {
    if n == 0 {
        return Err(LveError::Domain("order must be at least 1".into()));
    }
    if k > n {
        return Err(LveError::Domain(format!("{k} counterterms exceed order {n}")));
    }
    // (n-1)!/(n-k)! = product over (n-k+1)..=(n-1); empty product when k <= 1
    let mut falling = BigUint::one();
    for f in (n - k + 1)..n {
        falling *= BigUint::from(f);
    }
    if k == 0 {
        // (n-1)!/n! = 1/n, so the formula gives 2n / n
        return Ok(BigUint::from(2u32));
    }
    Ok(BigUint::from(2 * n - k) * falling)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum LoopObject {
    Tadpole,
    Counterterm(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct DecorationPattern {
    /// Line (out of `2n - k`) carrying the first counterterm; `None` when `k = 0`.
    pub anchor: Option<usize>,
    pub objects: Vec<LoopObject>,
}

impl fmt::Display for DecorationPattern {
    /// `^` marker, anchor line, then the word, e.g. `^2:X1TX2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "^")?;
        if let Some(a) = self.anchor {
            write!(f, "{a}")?;
        }
        write!(f, ":")?;
        for o in &self.objects {
            match o {
                LoopObject::Tadpole => write!(f, "T")?,
                LoopObject::Counterterm(l) => write!(f, "X{l}")?,
            }
        }
        Ok(())
    }
}

/// Exhaustive enumeration: every word of `n` objects with `k` distinct labeled
/// counterterms, filtered to those read from `X1`, times every anchor line.
/// Words without counterterms are rotation invariant and are kept once.
pub fn enumerate_planar_decorations(n: usize, k: usize) -> Result<Vec<DecorationPattern>> {
    if n == 0 || k > n {
        return Err(LveError::Domain(format!("invalid (n, k) = ({n}, {k})")));
    }
    if n > MAX_ENUMERATION_ORDER {
        return Err(LveError::EnumerationLimit { requested: n, cap: MAX_ENUMERATION_ORDER });
    }
    let alphabet = k + 1; // 0 = tadpole, l = counterterm l
    let mut out = Vec::new();
    let mut word = vec![0usize; n];
    loop {
        if is_admissible(&word, k) {
            let objects: Vec<LoopObject> = word
                .iter()
                .map(|&s| if s == 0 { LoopObject::Tadpole } else { LoopObject::Counterterm(s as u8) })
                .collect();
            if k == 0 {
                out.push(DecorationPattern { anchor: None, objects });
            } else {
                for anchor in 0..(2 * n - k) {
                    out.push(DecorationPattern { anchor: Some(anchor), objects: objects.clone() });
                }
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            word[i] += 1;
            if word[i] < alphabet {
                break;
            }
            word[i] = 0;
        }
    }
}

fn is_admissible(word: &[usize], k: usize) -> bool {
    let mut seen = vec![0usize; k + 1];
    for &s in word {
        seen[s] += 1;
    }
    if (1..=k).any(|l| seen[l] != 1) {
        return false;
    }
    k == 0 || word[0] == 1
}

/// One row of the closed-form vs brute-force comparison.
#[derive(Debug, Clone, Serialize)]
pub struct DecorationCountRow {
    pub n: usize,
    pub k: usize,
    pub closed_form: String,
    pub enumerated: usize,
    pub agrees: bool,
}

pub fn decoration_count_report(max_n: usize) -> Result<Vec<DecorationCountRow>> {
    let mut rows = Vec::new();
    for n in 1..=max_n {
        for k in 0..=n {
            let closed = count_planar_decorations(n, k)?;
            let enumerated = enumerate_planar_decorations(n, k)?.len();
            rows.push(DecorationCountRow {
                n,
                k,
                agrees: closed == BigUint::from(enumerated),
                closed_form: closed.to_string(),
                enumerated,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(count_planar_decorations(2, 1).unwrap(), BigUint::from(3u32));
        assert_eq!(count_planar_decorations(2, 2).unwrap(), BigUint::from(2u32));
        assert_eq!(count_planar_decorations(1, 1).unwrap(), BigUint::from(1u32));
        assert_eq!(count_planar_decorations(3, 0).unwrap(), BigUint::from(2u32));
        assert!(matches!(count_planar_decorations(2, 3), Err(LveError::Domain(_))));
    }

    #[test]
    fn large_orders_do_not_overflow() {
        // (2*30 - 15) * 29!/15!
        let v = count_planar_decorations(30, 15).unwrap();
        let mut expect = BigUint::from(45u32);
        for f in 16u32..30 {
            expect *= f;
        }
        assert_eq!(v, expect);
    }

    #[test]
    fn enumeration_examples() {
        let one = enumerate_planar_decorations(1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].to_string(), "^:T");
        let p = enumerate_planar_decorations(2, 1).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[0].to_string(), "^0:X1T");
        assert!(matches!(enumerate_planar_decorations(7, 1), Err(LveError::EnumerationLimit { .. })));
    }

    #[test]
    fn tadpole_only_patterns_disagree_with_closed_form() {
        let n3 = enumerate_planar_decorations(3, 0).unwrap().len();
        assert_eq!(n3, 1);
        assert_eq!(count_planar_decorations(3, 0).unwrap(), BigUint::from(2u32));
    }
}
