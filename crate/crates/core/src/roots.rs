//! One-dimensional bracketing root finding.

/// Relative interval width at which bisection stops.
pub const BISECT_RTOL: f64 = 1e-10;
/// Iteration cap for bisection after the bracket is established.
pub const BISECT_MAX_ITER: usize = 200;

/// Bisection on a sign change of `f` over `[lo, hi]`.
///
/// The caller guarantees `f(lo)` and `f(hi)` differ in sign (zero counts as
/// either sign). Works for either orientation of the bracket and returns
/// the midpoint of the final interval.
pub fn bisect<F>(f: F, mut lo: f64, mut hi: f64, rtol: f64, max_iter: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let lo_positive = f(lo) > 0.0;
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if (f(mid) > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= rtol * hi.abs().max(lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}
