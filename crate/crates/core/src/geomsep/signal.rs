use serde::{Deserialize, Serialize};

use super::solve::{closest_pair, feasible_point, min_distance, DistanceMethod, SeparatorCert};
use super::{ConvexSet, GeomError};
use crate::numkit::matrix::{dot, norm, sub};
use crate::numkit::{first_true, Matrix};

const RHO_REL_TOL: f64 = 1e-9;
const SUP_REL_TOL: f64 = 1e-7;

/// Signal set family `ρ ↦ {v + ρw : v ∈ drag, w ∈ shape, v + ρw ∈ cap}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalTemplate {
    pub drag: ConvexSet,
    pub shape: ConvexSet,
    pub cap: ConvexSet,
}

impl SignalTemplate {
    /// Zero drag, the ray `{c·direction : c ≥ 1}` and a box cap.
    pub fn ray(direction: Vec<f64>, cap_lower: Vec<f64>, cap_upper: Vec<f64>) -> Self {
        let n = direction.len();
        Self {
            drag: ConvexSet::origin(n),
            shape: ConvexSet::RayGenerated { direction, min_scale: 1.0, max_scale: None },
            cap: ConvexSet::Box { lower: cap_lower, upper: cap_upper },
        }
    }

    pub fn at(&self, rho: f64) -> ConvexSet {
        ConvexSet::SignalSet {
            drag: Box::new(self.drag.clone()),
            shape: Box::new(self.shape.clone()),
            rho,
            cap: Box::new(self.cap.clone()),
        }
    }

    /// `(w₀, s₀, ρ_max)` when the family is a scaled ray with zero drag inside
    /// a box cap containing the origin; `ρ_max` is where `ρ s₀ w₀` leaves the cap.
    fn ray_with_box_cap(&self) -> Option<(&[f64], f64, f64)> {
        if !self.drag.is_origin() {
            return None;
        }
        let ConvexSet::RayGenerated { direction, min_scale, .. } = &self.shape else {
            return None;
        };
        let ConvexSet::Box { lower, upper } = &self.cap else {
            return None;
        };
        if *min_scale <= 0.0
            || lower.len() != direction.len()
            || upper.len() != direction.len()
            || lower.iter().zip(upper).any(|(l, u)| *l > 0.0 || *u < 0.0)
        {
            return None;
        }
        let mut limit = f64::INFINITY;
        for ((w, l), u) in direction.iter().zip(lower).zip(upper) {
            let step = min_scale * w;
            if step > 0.0 {
                limit = limit.min(u / step);
            } else if step < 0.0 {
                limit = limit.min(l / step);
            }
        }
        Some((direction, *min_scale, limit))
    }

    fn fast_path(&self, nuisance: &ConvexSet) -> Option<(&[f64], f64, f64)> {
        if nuisance.is_origin() {
            self.ray_with_box_cap()
        } else {
            None
        }
    }
}

fn check_rho(rho: f64) -> Result<(), GeomError> {
    if rho.is_finite() && rho >= 0.0 {
        Ok(())
    } else {
        Err(GeomError::InvalidArgument(format!("magnitude must be finite and nonnegative, got {rho}")))
    }
}

/// `½ min ‖A(v′ − u)‖` over nuisance inputs `v′` and signals `u` of magnitude `ρ`.
pub fn opt_kj(a: &Matrix, nuisance: &ConvexSet, signal: &SignalTemplate, rho: f64) -> Result<f64, GeomError> {
    check_rho(rho)?;
    if let Some((w, s0, limit)) = signal.fast_path(nuisance) {
        if w.len() != a.cols() {
            return Err(GeomError::Dimension(format!("signal of length {} for a {}-column map", w.len(), a.cols())));
        }
        if rho > limit * (1.0 + 1e-12) {
            return Err(GeomError::Infeasible(format!("magnitude {rho} exceeds the cap limit {limit}")));
        }
        return Ok(0.5 * rho * s0 * norm(&a.matvec(w)));
    }
    opt_kj_generic(a, nuisance, signal, rho)
}

/// `opt_kj` through the generic distance program, without the ray shortcut.
pub fn opt_kj_generic(a: &Matrix, nuisance: &ConvexSet, signal: &SignalTemplate, rho: f64) -> Result<f64, GeomError> {
    check_rho(rho)?;
    let set = signal.at(rho);
    if feasible_point(&set)?.is_none() {
        return Err(GeomError::Infeasible(format!("no signal of magnitude {rho}")));
    }
    let (x1, x2) = closest_pair(&nuisance.clone().image(a.clone()), &set.image(a.clone()), DistanceMethod::JointQp)?;
    Ok(0.5 * norm(&sub(&x1, &x2)))
}

/// Separator between the images under `a` of the nuisance set and the signal
/// set of magnitude `ρ`, oriented toward the nuisance image.
pub fn separator_at(
    a: &Matrix,
    nuisance: &ConvexSet,
    signal: &SignalTemplate,
    rho: f64,
) -> Result<SeparatorCert, GeomError> {
    check_rho(rho)?;
    if let Some((w, s0, limit)) = signal.fast_path(nuisance) {
        if w.len() != a.cols() {
            return Err(GeomError::Dimension(format!("signal of length {} for a {}-column map", w.len(), a.cols())));
        }
        if rho > limit * (1.0 + 1e-12) {
            return Err(GeomError::Infeasible(format!("magnitude {rho} exceeds the cap limit {limit}")));
        }
        let x2: Vec<f64> = a.matvec(w).into_iter().map(|v| rho * s0 * v).collect();
        let opt = norm(&x2);
        if opt <= 0.0 {
            return Err(GeomError::IntersectingSets { distance: 0.0 });
        }
        let h: Vec<f64> = x2.iter().map(|v| -v / opt).collect();
        let c = 0.5 * dot(&h, &x2);
        return Ok(SeparatorCert {
            opt,
            x1_star: vec![0.0; x2.len()],
            x2_star: x2,
            h_star: h,
            c_star: c,
            delta: 0.5 * opt,
            kkt_residual: 0.0,
        });
    }
    let set = signal.at(rho);
    if feasible_point(&set)?.is_none() {
        return Err(GeomError::Infeasible(format!("no signal of magnitude {rho}")));
    }
    min_distance(&nuisance.clone().image(a.clone()), &set.image(a.clone()))
}

/// Largest magnitude in `bracket` for which the signal set is nonempty.
pub fn feasibility_sup(signal: &SignalTemplate, bracket: (f64, f64)) -> Result<f64, GeomError> {
    let (lo, hi) = bracket;
    if !(lo >= 0.0 && hi >= lo) {
        return Err(GeomError::InvalidArgument(format!("bad bracket [{lo}, {hi}]")));
    }
    if let Some((_, _, limit)) = signal.ray_with_box_cap() {
        if limit < lo {
            return Err(GeomError::Infeasible(format!("no signal with magnitude in [{lo}, {hi}]")));
        }
        return Ok(limit.min(hi));
    }
    let feasible = |rho: f64| feasible_point(&signal.at(rho)).map(|p| p.is_some());
    if !feasible(lo)? {
        return Err(GeomError::Infeasible(format!("no signal with magnitude {lo}")));
    }
    if feasible(hi)? {
        return Ok(hi);
    }
    // Largest feasible ρ: first infeasible point of the bracket, from below.
    let mut err = None;
    let first_bad = first_true(
        |rho| match feasible(rho) {
            Ok(f) => !f,
            Err(e) => {
                err.get_or_insert(e);
                true
            }
        },
        lo,
        hi,
        SUP_REL_TOL,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let bad = first_bad.unwrap_or(hi);
    Ok((bad * (1.0 - SUP_REL_TOL)).max(lo))
}

/// Smallest `ρ ≤ r_max` with `opt_kj(ρ) ≥ δ`, or `r_max` when even that
/// magnitude falls short.
pub fn rho_for_delta(
    a: &Matrix,
    nuisance: &ConvexSet,
    signal: &SignalTemplate,
    delta_target: f64,
    r_max: f64,
) -> Result<f64, GeomError> {
    if !(delta_target > 0.0) {
        return Err(GeomError::InvalidArgument(format!("target must be positive, got {delta_target}")));
    }
    if let Some((w, s0, limit)) = signal.fast_path(nuisance) {
        let slope = 0.5 * s0 * norm(&a.matvec(w));
        let cap = r_max.min(limit);
        if slope <= 0.0 {
            return Ok(cap);
        }
        return Ok((delta_target / slope).min(cap));
    }
    if opt_kj(a, nuisance, signal, r_max)? <= delta_target {
        return Ok(r_max);
    }
    let mut err = None;
    let rho = first_true(
        |rho| match opt_kj(a, nuisance, signal, rho) {
            Ok(v) => v >= delta_target,
            Err(e) => {
                err.get_or_insert(e);
                true
            }
        },
        0.0,
        r_max,
        RHO_REL_TOL,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(rho.unwrap_or(r_max))
}
