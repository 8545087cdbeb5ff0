//! Small quadrature helpers shared by the density and kernel code.

/// 5-point Gauss–Legendre rule on [-1, 1].
const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Composite 5-point Gauss–Legendre rule on `[a, b]` with `panels` panels.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        let half = 0.5 * width;
        let mut s = 0.0;
        for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS.iter()) {
            s += w * f(mid + half * x);
        }
        total += s * half;
    }
    total
}

/// Composite tensor Gauss–Legendre rule over the unit square.
pub fn unit_square<F: Fn(f64, f64) -> f64>(f: F, panels: usize) -> f64 {
    let width = 1.0 / panels as f64;
    let half = 0.5 * width;
    let mut total = 0.0;
    for px in 0..panels {
        let mx = (px as f64 + 0.5) * width;
        for py in 0..panels {
            let my = (py as f64 + 0.5) * width;
            let mut s = 0.0;
            for (x, wx) in GL5_NODES.iter().zip(GL5_WEIGHTS.iter()) {
                for (y, wy) in GL5_NODES.iter().zip(GL5_WEIGHTS.iter()) {
                    s += wx * wy * f(mx + half * x, my + half * y);
                }
            }
            total += s * half * half;
        }
    }
    total
}

/// Adaptive Simpson quadrature on `[a, b]` to relative tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let scale = whole.abs().max(f64::MIN_POSITIVE);
    simpson_step(f, a, b, fa, fm, fb, whole, tol * scale, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
