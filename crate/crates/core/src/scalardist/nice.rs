use serde::{Deserialize, Serialize};

use super::{Density, DistError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NicenessReport {
    pub is_even: bool,
    pub is_nonincreasing_on_ray: bool,
    pub is_continuous: bool,
    /// Largest increase of the density between consecutive grid points.
    pub max_violation: f64,
}

impl NicenessReport {
    pub fn is_nice(&self) -> bool {
        self.is_even && self.is_nonincreasing_on_ray && self.is_continuous
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub dominates: bool,
    /// `max_δ (tail_g(δ) − tail_f(δ))`; nonpositive when `f` dominates.
    pub worst_violation: f64,
    pub at: f64,
}

const DOMINATION_TOL: f64 = 1e-9;
const BISECTIONS: usize = 30;

/// Grid on `[0, q]` with `q` the density's `1e-6` quantile.
pub(crate) fn default_grid(d: &Density) -> Result<Vec<f64>, DistError> {
    let top = d.quantile(1e-6)?;
    Ok((0..=400).map(|i| top * i as f64 / 400.0).collect())
}

/// Evenness, monotonicity on the nonnegative ray and continuity of `d`,
/// probed on the nonnegative points of `grid`.
pub fn check_nice(d: &Density, grid: &[f64]) -> NicenessReport {
    let mut pts: Vec<f64> = grid.iter().map(|x| x.abs()).filter(|x| x.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let vals: Vec<f64> = pts.iter().map(|&s| d.pdf(s)).collect();
    let fmax = vals.iter().copied().fold(0.0, f64::max);
    let tol = 1e-9 * fmax.max(f64::MIN_POSITIVE);

    let is_even = pts.iter().zip(&vals).all(|(&s, &v)| (d.pdf(-s) - v).abs() <= 1e-10 * (1.0 + fmax));

    let max_violation = vals.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max);
    let is_nonincreasing_on_ray = vals.iter().all(|v| v.is_finite() && *v >= 0.0) && max_violation <= tol;

    // A cell whose variation stands out against its neighbours is bisected;
    // a jump keeps its size under refinement, a smooth change shrinks.
    let var: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mut is_continuous = true;
    for (i, &v) in var.iter().enumerate() {
        let left = if i > 0 { var[i - 1] } else { 0.0 };
        let right = var.get(i + 1).copied().unwrap_or(0.0);
        if v <= 1e-6 * fmax || v <= 4.0 * left.max(right) {
            continue;
        }
        let (mut a, mut b) = (pts[i], pts[i + 1]);
        let (mut fa, mut fb) = (vals[i], vals[i + 1]);
        for _ in 0..BISECTIONS {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = d.pdf(m);
            if (fm - fa).abs() >= (fb - fm).abs() {
                b = m;
                fb = fm;
            } else {
                a = m;
                fa = fm;
            }
        }
        if (fb - fa).abs() > 0.5 * v {
            is_continuous = false;
            break;
        }
    }

    NicenessReport { is_even, is_nonincreasing_on_ray, is_continuous, max_violation }
}

/// Whether `f` dominates `g`: `∫_δ^∞ f ≥ ∫_δ^∞ g − 1e-9` on an even grid of
/// `[0, grid_max]`.
pub fn dominates(f: &Density, g: &Density, grid_max: f64, grid_points: usize) -> DominationReport {
    let n = grid_points.max(2);
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0.0;
    for i in 0..n {
        let delta = grid_max * i as f64 / (n - 1) as f64;
        let v = g.upper(delta) - f.upper(delta);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > worst {
            worst = v;
            at = delta;
        }
    }
    DominationReport { dominates: worst <= DOMINATION_TOL, worst_violation: worst, at }
}
