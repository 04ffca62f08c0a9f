use super::NumError;

const MAX_ITER: usize = 400;

/// Solve `g(x) = target` for monotone `g` on `bracket`.
pub fn bisect_monotone(
    mut g: impl FnMut(f64) -> f64,
    target: f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64, NumError> {
    let (mut lo, mut hi) = bracket;
    let (glo, ghi) = (g(lo), g(hi));
    let increasing = ghi >= glo;
    let (min, max) = if increasing { (glo, ghi) } else { (ghi, glo) };
    if !(target >= min - tol && target <= max + tol) {
        return Err(NumError::OutOfBracket { target, lo: min, hi: max });
    }
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if (gm - target).abs() <= tol || (hi - lo) <= tol * 1f64.max(mid.abs()) {
            return Ok(mid);
        }
        if (gm < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest `x` in `[lo, hi]` where the monotone predicate flips to true,
/// to relative width `rel_tol`. The returned point satisfies `pred`.
/// Returns `None` when `pred(hi)` is false.
pub fn first_true(mut pred: impl FnMut(f64) -> bool, lo: f64, hi: f64, rel_tol: f64) -> Option<f64> {
    if !pred(hi) {
        return None;
    }
    if pred(lo) {
        return Some(lo);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..MAX_ITER {
        if b - a <= rel_tol * b.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if pred(m) {
            b = m;
        } else {
            a = m;
        }
    }
    Some(b)
}
