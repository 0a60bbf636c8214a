//! Bisection on monotone brackets.

/// Finds a root of `f` in `[lo, hi]` given `f(lo) <= 0 <= f(hi)` (or the
/// reverse orientation). Halves the bracket until its width is at most `tol`
/// or it cannot be split further in floating point, then returns the midpoint.
///
/// With `tol = 0` the result is accurate to the last representable bit.
pub fn bisect<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    let f_lo = f(lo);
    let rising = f_lo <= 0.0;
    bisect_predicate(|x| (f(x) > 0.0) == rising, lo, hi, tol)
}

/// Locates the boundary of a predicate that is false on `[lo, b)` and true on
/// `(b, hi]`. Returns the midpoint of the final bracket.
///
/// The caller is responsible for the predicate being monotone; the bracket
/// endpoints are not evaluated.
pub fn bisect_predicate<P: Fn(f64) -> bool>(pred: P, lo: f64, hi: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..2100 {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if pred(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + b)
}
