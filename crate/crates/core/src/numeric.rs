//! Small quadrature and interpolation helpers shared by the pipeline stages.

/// Composite trapezoid rule for samples on a uniform grid of spacing `step`.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let interior: f64 = values[1..n - 1].iter().sum();
            step * (0.5 * (values[0] + values[n - 1]) + interior)
        }
    }
}

/// Trapezoid rule on arbitrary (sorted) abscissae.
pub fn trapezoid_nonuniform(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]))
        .sum()
}

/// Piecewise-linear interpolation of uniform-grid samples on `[0, 1]`.
///
/// Arguments outside `[0, 1]` are clamped to the end values.
pub fn interpolate_uniform(values: &[f64], p: f64) -> f64 {
    let n = values.len();
    debug_assert!(n >= 2);
    if !(p > 0.0) {
        return values[0];
    }
    if p >= 1.0 {
        return values[n - 1];
    }
    let scaled = p * (n - 1) as f64;
    let k = (libm::floor(scaled) as usize).min(n - 2);
    let frac = scaled - k as f64;
    if frac == 0.0 {
        values[k]
    } else {
        values[k] + frac * (values[k + 1] - values[k])
    }
}

/// Piecewise-linear interpolation through sorted knots `(xs, ys)`.
///
/// Returns `None` outside `[xs[0], xs[last]]`.
pub fn interpolate_knots(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let n = xs.len();
    if n < 2 || !(x >= xs[0] && x <= xs[n - 1]) {
        return None;
    }
    let k = segment_index(xs, x);
    let (x0, x1) = (xs[k], xs[k + 1]);
    if x == x0 {
        return Some(ys[k]);
    }
    Some(ys[k] + (ys[k + 1] - ys[k]) * (x - x0) / (x1 - x0))
}

/// Index `k` of the segment `[xs[k], xs[k+1]]` containing `x` (right-continuous
/// at interior knots, last segment at the right end).
pub(crate) fn segment_index(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    let k = xs.partition_point(|&t| t <= x);
    k.saturating_sub(1).min(n - 2)
}

/// Bisection for the root of an increasing function on `[lo, hi]`.
///
/// Stops after `max_steps` or once the bracket is narrower than
/// `tol * (1 + |mid|)`.
pub(crate) fn bisect_increasing<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_steps: usize,
) -> f64 {
    for _ in 0..max_steps {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * (1.0 + libm::fabs(mid)) || mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
