//! Central finite-difference verification of the recorded backward rules.
//! Always runs in f64; f32 nets are rebuilt in f64 by their constructors
//! when they need checking.

use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{backward, no_grad, Tensor};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-3;

/// Relative-error floor: keeps coordinates whose true derivative is ~0
/// from failing on finite-difference noise.
const DENOM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub numel: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub step: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.tol
    }

    pub fn failures(&self) -> Vec<&GradCheckEntry> {
        self.entries.iter().filter(|e| e.max_rel_err > self.tol).collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{} {:<48} rel_err={:.3e} ({} of {} coords)",
                if e.max_rel_err <= self.tol { "ok  " } else { "FAIL" },
                e.name,
                e.max_rel_err,
                e.checked,
                e.numel
            )?;
        }
        write!(
            f,
            "gradcheck {}: worst rel_err {:.3e} (step {:.1e}, tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.worst(),
            self.step,
            self.tol
        )
    }
}

/// Compares analytic gradients of `f` against central differences.
///
/// `f` must be a pure function of the listed parameter values (it may
/// capture and reuse the same tensors). When `max_coords_per_param` is
/// nonzero, at most that many coordinates per parameter are probed,
/// chosen by a seeded RNG.
pub fn grad_check(
    f: &dyn Fn() -> Result<Tensor<f64>>,
    params: &[(String, Tensor<f64>)],
    step: f64,
    tol: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = f()?;
    backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, p)) in params.iter().enumerate() {
        let numel = p.numel();
        let coords: Vec<usize> = if max_coords_per_param == 0 || numel <= max_coords_per_param {
            (0..numel).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(pi as u64));
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < max_coords_per_param {
                picked.insert(rng.random_range(0..numel));
            }
            picked.into_iter().collect()
        };

        let mut max_rel = 0.0f64;
        for &i in &coords {
            let orig = p.data()[i];
            let probe = |v: f64| -> Result<f64> {
                p.data_mut()[i] = v;
                let out = no_grad(|| f().map(|t| t.item()));
                p.data_mut()[i] = orig;
                out
            };
            let lp = probe(orig + step)?;
            let lm = probe(orig - step)?;
            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry { name: name.clone(), max_rel_err: max_rel, checked: coords.len(), numel });
    }
    Ok(GradCheckReport { entries, step, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn quadratic_gradient_exact() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0], Shape::new(1, 2, 1, 1));
        let xc = x.clone();
        let f = move || xc.mul(&xc)?.mean_all()?.scale(2.0);
        // loss = mean(x^2)*2 -> dL/dx = 2*x*2/2 = 2x -> [2, 4]
        let report = grad_check(&f, &[("x".into(), x.clone())], DEFAULT_STEP, DEFAULT_TOL, 0, 0).unwrap();
        assert!(report.passed(), "{report}");
        let g = x.grad().unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] - 4.0).abs() < 1e-12, "{g:?}");
    }

    #[test]
    fn zero_tolerance_fails() {
        let x = Tensor::<f64>::param(vec![0.3], Shape::new(1, 1, 1, 1));
        let xc = x.clone();
        let f = move || xc.gelu()?.mean_all();
        let report = grad_check(&f, &[("x".into(), x)], DEFAULT_STEP, 0.0, 0, 0).unwrap();
        assert!(!report.passed(), "tolerance 0 must fail on fp noise: {report}");
    }

    #[test]
    fn composite_graph_matches_differences() {
        let a = Tensor::<f64>::param(vec![0.5, -0.25, 1.5, 0.75], Shape::new(1, 1, 2, 2));
        let b = Tensor::<f64>::param(vec![0.9], Shape::new(1, 1, 1, 1));
        let (ac, bc) = (a.clone(), b.clone());
        let f = move || {
            let y = ac.mul(&bc)?.gelu()?.add(&ac)?;
            let z = y.sigmoid()?.mul(&y)?;
            z.mean_all()
        };
        let params = vec![("a".into(), a), ("b".into(), b)];
        let report = grad_check(&f, &params, DEFAULT_STEP, DEFAULT_TOL, 0, 0).unwrap();
        assert!(report.passed(), "{report}");
    }
}
