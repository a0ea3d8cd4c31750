//! Exact ray/pixel intersection lengths for parallel-beam rays.

/// Tolerance below which a direction component is treated as zero.
const AXIS_EPS: f64 = 1e-12;

/// Calls `visit(pixel, length)` for every pixel crossed by the line
/// `{x cosθ + y sinθ = s}` on an `n`×`n` grid of side `h` centered at the origin.
///
/// Pixel indices are row-major with row 0 at the top (largest y).
pub(crate) fn trace(n: usize, h: f64, cos: f64, sin: f64, s: f64, visit: &mut impl FnMut(usize, f64)) {
    let half = 0.5 * n as f64 * h;
    // point(t) = s (cos, sin) + t (−sin, cos)
    let (x0, y0) = (s * cos, s * sin);
    let (dx, dy) = (-sin, cos);
    let dx = if dx.abs() < AXIS_EPS { 0.0 } else { dx };
    let dy = if dy.abs() < AXIS_EPS { 0.0 } else { dy };

    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for (p0, d) in [(x0, dx), (y0, dy)] {
        if d == 0.0 {
            if p0 <= -half || p0 >= half {
                return;
            }
        } else {
            let a = (-half - p0) / d;
            let b = (half - p0) / d;
            t_lo = t_lo.max(a.min(b));
            t_hi = t_hi.min(a.max(b));
        }
    }
    if !(t_hi > t_lo) {
        return;
    }

    let mut ts = Vec::with_capacity(2 * n + 4);
    ts.push(t_lo);
    for (p0, d) in [(x0, dx), (y0, dy)] {
        if d == 0.0 {
            continue;
        }
        for i in 1..n {
            let t = (-half + i as f64 * h - p0) / d;
            if t > t_lo && t < t_hi {
                ts.push(t);
            }
        }
    }
    ts.push(t_hi);
    ts.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite crossing"));

    let last = n as isize - 1;
    for w in ts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let tm = 0.5 * (w[0] + w[1]);
        let xm = x0 + tm * dx;
        let ym = y0 + tm * dy;
        let col = (((xm + half) / h).floor() as isize).clamp(0, last) as usize;
        let row_from_bottom = (((ym + half) / h).floor() as isize).clamp(0, last) as usize;
        let row = n - 1 - row_from_bottom;
        visit(row * n + col, len);
    }
}
