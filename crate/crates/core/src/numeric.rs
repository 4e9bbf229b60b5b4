//! Small numerical helpers: grid lookup, interpolation, finite differences and
//! golden-section search.

/// Index `i` such that `xs[i] <= x <= xs[i+1]`, clamped to the valid cell
/// range. `xs` must be sorted with at least one element.
#[inline]
pub fn segment_index(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let k = xs.partition_point(|&v| v <= x);
    k.saturating_sub(1).min(n - 2)
}

/// Piecewise-linear interpolation with constant extension outside the range.
pub fn lerp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = segment_index(xs, x);
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Cubic Hermite interpolation of `(xs, ys)` with slopes `ds`.
pub fn hermite_eval(xs: &[f64], ys: &[f64], ds: &[f64], x: f64) -> f64 {
    if xs.len() == 1 {
        return ys[0];
    }
    let i = segment_index(xs, x);
    let h = xs[i + 1] - xs[i];
    let t = (x - xs[i]) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * ys[i] + h10 * h * ds[i] + h01 * ys[i + 1] + h11 * h * ds[i + 1]
}

/// Derivative of [`hermite_eval`].
pub fn hermite_slope(xs: &[f64], ys: &[f64], ds: &[f64], x: f64) -> f64 {
    if xs.len() == 1 {
        return ds[0];
    }
    let i = segment_index(xs, x);
    let h = xs[i + 1] - xs[i];
    let t = (x - xs[i]) / h;
    let t2 = t * t;
    let d00 = 6.0 * t2 - 6.0 * t;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = -6.0 * t2 + 6.0 * t;
    let d11 = 3.0 * t2 - 2.0 * t;
    (d00 * ys[i] + d01 * ys[i + 1]) / h + d10 * ds[i] + d11 * ds[i + 1]
}

/// Leftmost `x` where the piecewise-linear curve through `(xs, ys)` first
/// reaches `target`. Clamps to `xs[0]` / `xs[last]` when the target lies
/// below / above every sample.
pub fn invert_monotone(xs: &[f64], ys: &[f64], target: f64) -> f64 {
    let n = xs.len();
    if target <= ys[0] {
        return xs[0];
    }
    for k in 0..n.saturating_sub(1) {
        if ys[k + 1] >= target {
            let dy = ys[k + 1] - ys[k];
            if dy <= 0.0 {
                return xs[k + 1];
            }
            return xs[k] + (target - ys[k]) / dy * (xs[k + 1] - xs[k]);
        }
    }
    xs[n - 1]
}

/// Derivative samples on a uniform grid: central differences inside,
/// second-order one-sided stencils at both ends.
pub fn gradient(ys: &[f64], h: f64) -> Vec<f64> {
    let n = ys.len();
    match n {
        0 => vec![],
        1 => vec![0.0],
        2 => {
            let d = (ys[1] - ys[0]) / h;
            vec![d, d]
        }
        _ => {
            let mut d = vec![0.0; n];
            d[0] = (-3.0 * ys[0] + 4.0 * ys[1] - ys[2]) / (2.0 * h);
            for i in 1..n - 1 {
                d[i] = (ys[i + 1] - ys[i - 1]) / (2.0 * h);
            }
            d[n - 1] = (3.0 * ys[n - 1] - 4.0 * ys[n - 2] + ys[n - 3]) / (2.0 * h);
            d
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimum of `f` on `[lo, hi]`. Returns the
/// best point seen and its value once the bracket is narrower than `tol`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    if b - a <= tol {
        let m = 0.5 * (a + b);
        return (m, f(m));
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
