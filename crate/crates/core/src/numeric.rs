//! Bracketing root finders and one-dimensional minimizers shared by the solvers.

const MAX_BISECT_ITERS: usize = 200;

/// Width at which a bracket around `x` counts as collapsed.
#[inline]
pub(crate) fn bracket_tol(lo: f64, hi: f64, abs_tol: f64) -> f64 {
    abs_tol.max(4.0 * f64::EPSILON * lo.abs().max(hi.abs()))
}

/// Smallest `x` in `[lo, hi]` with `pred(x)` true, assuming `pred` is monotone
/// (false ... false true ... true). Returns `hi` if `pred` never flips.
pub(crate) fn bisect_first_true<P>(mut lo: f64, mut hi: f64, abs_tol: f64, pred: P) -> f64
where
    P: Fn(f64) -> bool,
{
    if pred(lo) {
        return lo;
    }
    for _ in 0..MAX_BISECT_ITERS {
        if hi - lo <= bracket_tol(lo, hi, abs_tol) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Root of `f` on `[lo, hi]` where `f(lo)` and `f(hi)` have opposite signs
/// (or one of them is zero).
pub(crate) fn bisect_root<F>(mut lo: f64, mut hi: f64, abs_tol: f64, f: F) -> f64
where
    F: Fn(f64) -> f64,
{
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return lo;
    }
    let f_hi = f(hi);
    if f_hi == 0.0 {
        return hi;
    }
    for _ in 0..MAX_BISECT_ITERS {
        if hi - lo <= bracket_tol(lo, hi, abs_tol) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`.
///
/// Ties between the two probes move the bracket right, so flat minima
/// resolve toward their right end.
pub(crate) fn golden_section_min<F>(mut lo: f64, mut hi: f64, abs_tol: f64, f: F) -> f64
where
    F: Fn(f64) -> f64,
{
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..MAX_BISECT_ITERS {
        if hi - lo <= bracket_tol(lo, hi, abs_tol) {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// `n` evenly spaced points covering `[lo, hi]` inclusive.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}
