//! Finite-difference helpers for validating backward rules.
//!
//! These only evaluate forward passes, so they stay independent of the
//! backward implementation they are used to check.

/// Relative error with an absolute floor on the denominator, so gradients
/// that are essentially zero are compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], index: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[index] = x[index] + h;
    let up = f(&probe);
    probe[index] = x[index] - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares `analytic` against central differences of `f` at `indices`.
pub fn check_indices(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    floor: f64,
) -> GradCheck {
    let mut report = GradCheck {
        probes: indices.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for &i in indices {
        let numeric = central_difference(&mut f, x, i, h);
        let err = relative_error(analytic[i], numeric, floor);
        if err >= report.max_rel_error {
            report = GradCheck {
                probes: indices.len(),
                max_rel_error: err,
                worst_index: i,
                worst_analytic: analytic[i],
                worst_numeric: numeric,
            };
        }
    }
    report
}
