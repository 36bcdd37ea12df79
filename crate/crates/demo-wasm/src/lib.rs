//! Browser bindings: every export takes plain numbers and returns a JSON string,
//! `{"error": "..."}` on invalid input.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use lve_core::bounds::{self, ClusterMode};
use lve_core::covariance::ContinuumCovariance;

fn finish(result: lve_core::Result<Value>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

/// Radial table of the full kernel and of every slice on `points` radii in `(0, r_max]`,
/// plus the slice tadpoles.
#[wasm_bindgen]
pub fn kernel_table(mass: f64, slice_ratio: f64, j_max: u32, r_max: f64, points: u32) -> String {
    finish((|| {
        if j_max > 12 || points == 0 || points > 400 || !(r_max > 0.0) {
            return Err(lve_core::LveError::Domain("need j_max ≤ 12, 1 ≤ points ≤ 400 and r_max > 0".into()));
        }
        let cov = ContinuumCovariance::new(mass, slice_ratio, j_max)?;
        let radii: Vec<f64> = (1..=points).map(|i| r_max * i as f64 / points as f64).collect();
        let rows = cov.kernel_table(&radii)?;
        let tadpoles = cov.tadpole_table()?;
        Ok(json!({ "rows": rows, "tadpoles": tadpoles.slices, "cumulative": tadpoles.cumulative }))
    })())
}

/// `log(e^{-a j²} j! e^{2λ(sj)²})` for `j = 0..=j_to`, with `s` the measured tadpole slope.
#[wasm_bindgen]
pub fn nelson_curve(a: f64, lambda: f64, mass: f64, slice_ratio: f64, j_to: u32) -> String {
    finish((|| {
        if j_to > 500 || !(a > 0.0 && lambda > 0.0) {
            return Err(lve_core::LveError::Domain("need a, λ > 0 and j_to ≤ 500".into()));
        }
        let cov = ContinuumCovariance::new(mass, slice_ratio, 20)?;
        let slope = bounds::tadpole_growth(&cov, 8)?.slope;
        let scan = bounds::nelson_scan(a, lambda, slope, 0..=j_to);
        Ok(json!({
            "slope": slope,
            "critical_a": bounds::nelson_critical_a(lambda, slope),
            "last_j_not_below_one": bounds::nelson_crossover(&scan),
            "j": scan.iter().map(|v| v.j).collect::<Vec<_>>(),
            "log_value": scan.iter().map(|v| v.log_value).collect::<Vec<_>>(),
        }))
    })())
}

/// Partial sums of `e^{-c τ(Γ)}` over edge-connected clusters around the origin.
#[wasm_bindgen]
pub fn cluster_sums(c: f64, radius: i32, size: u32) -> String {
    finish((|| {
        if size > 8 {
            return Err(lve_core::LveError::CostCap("the page stops at clusters of 8 squares".into()));
        }
        let r = bounds::cluster_sum(c, radius, size as usize, ClusterMode::Connected, 5_000_000)?;
        Ok(serde_json::to_value(r).expect("serializable"))
    })())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn kernel_rows_have_all_slices() {
        let v = parse(&kernel_table(1.0, 2.8, 3, 2.0, 5));
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].as_array().unwrap().len(), 2 + 4);
        assert_eq!(v["tadpoles"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn nelson_curve_starts_at_zero() {
        let v = parse(&nelson_curve(0.3, 0.1, 1.0, 2.8, 40));
        assert_eq!(v["log_value"][0], 0.0);
        assert_eq!(v["j"].as_array().unwrap().len(), 41);
    }

    #[test]
    fn cluster_sums_and_errors() {
        let v = parse(&cluster_sums(2.0, 3, 3));
        assert_eq!(v["counts"], json!([1, 4, 18]));
        assert!(parse(&cluster_sums(-1.0, 3, 3))["error"].is_string());
        assert!(parse(&kernel_table(1.0, 2.8, 3, 2.0, 0))["error"].is_string());
    }
}
