//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite and
//! semi-infinite ranges.

use serde::{Deserialize, Serialize};

use super::NumError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_refinements: usize,
    /// Subintervals whose mass and error estimates both fall below this are
    /// not refined further.
    pub tail_cut_mass: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-10, max_refinements: 2000, tail_cut_mass: 1e-12 }
    }
}

impl QuadratureSpec {
    /// Tighter settings used inside the density calculus.
    pub fn fine() -> Self {
        Self { abs_tol: 1e-14, rel_tol: 1e-12, max_refinements: 4000, tail_cut_mass: 1e-16 }
    }

    pub fn validate(&self) -> Result<(), NumError> {
        let ok = self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.tail_cut_mass > 0.0
            && self.tail_cut_mass <= 1e-6
            && self.max_refinements > 0;
        if ok {
            Ok(())
        } else {
            Err(NumError::InvalidArgument(format!("quadrature spec {self:?}")))
        }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Clone, Copy, Debug)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> Result<Piece, NumError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        k += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    if !k.is_finite() {
        return Err(NumError::NonFinite);
    }
    let mean = 0.5 * k;
    let mut asc = WGK[7] * (fc - mean).abs();
    let mut absk = WGK[7] * fc.abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
        absk += WGK[j] * (fv1[j].abs() + fv2[j].abs());
    }
    let value = k * h;
    let resasc = asc * h.abs();
    let resabs = absk * h.abs();
    let mut error = ((k - g) * h).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * resabs);
    }
    Ok(Piece { a, b, value, error })
}

fn adaptive(f: &mut dyn FnMut(f64) -> f64, edges: &[f64], spec: &QuadratureSpec) -> Result<f64, NumError> {
    spec.validate()?;
    let mut pieces = Vec::with_capacity(64);
    for w in edges.windows(2) {
        if w[1] > w[0] {
            pieces.push(gk15(f, w[0], w[1])?);
        }
    }
    let mut refinements = 0;
    loop {
        let total: f64 = pieces.iter().map(|p| p.value).sum();
        let err: f64 = pieces.iter().map(|p| p.error).sum();
        if err <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
            return Ok(total);
        }
        let worst = pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| !(p.value.abs() < spec.tail_cut_mass && p.error < spec.tail_cut_mass))
            .filter(|(_, p)| {
                let m = 0.5 * (p.a + p.b);
                m > p.a && m < p.b
            })
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i);
        let Some(i) = worst else {
            // Nothing left to refine: remaining error is below resolution.
            return Ok(total);
        };
        refinements += 1;
        if refinements > spec.max_refinements {
            return Err(NumError::NonConvergence(format!(
                "quadrature error {err:.3e} after {} refinements",
                spec.max_refinements
            )));
        }
        let p = pieces.swap_remove(i);
        let m = 0.5 * (p.a + p.b);
        pieces.push(gk15(f, p.a, m)?);
        pieces.push(gk15(f, m, p.b)?);
    }
}

/// `∫_a^b f`, split at the interior `breaks`.
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64, NumError> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(NumError::InvalidArgument("finite limits required".into()));
    }
    if b < a {
        return Ok(-integrate(f, b, a, breaks, spec)?);
    }
    let mut edges = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    edges.extend(inner);
    edges.push(b);
    adaptive(&mut f, &edges, spec)
}

/// `∫_lower^∞ f`, via the map `x = lower + (1−t)/t` on `t ∈ (0, 1]`.
pub fn quad_tail(mut f: impl FnMut(f64) -> f64, lower: f64, spec: &QuadratureSpec) -> Result<f64, NumError> {
    let mut g = |t: f64| {
        let x = lower + (1.0 - t) / t;
        let v = f(x);
        if v == 0.0 {
            0.0
        } else {
            v / (t * t)
        }
    };
    // Split the map so the first unit of x gets its own piece.
    adaptive(&mut g, &[0.0, 0.5, 1.0], spec)
}

/// `∫_{−∞}^∞ f`, split at `breaks` (at least one break is used, 0 if none).
pub fn quad_line(mut f: impl FnMut(f64) -> f64, breaks: &[f64], spec: &QuadratureSpec) -> Result<f64, NumError> {
    let mut pts: Vec<f64> = breaks.to_vec();
    if pts.is_empty() {
        pts.push(0.0);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let lo = pts[0];
    let hi = *pts.last().expect("nonempty");
    let left = quad_tail(|x| f(-x), -lo, spec)?;
    let mid = if hi > lo { integrate(&mut f, lo, hi, &pts[1..pts.len() - 1], spec)? } else { 0.0 };
    let right = quad_tail(&mut f, hi, spec)?;
    Ok(left + mid + right)
}
