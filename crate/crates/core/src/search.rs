//! Derivative-free minimizers used by the argmin refinement and the
//! brute-force oracles: sampled window halving followed by a Brent polish.

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Samples per axis in every window-halving round.
pub const WINDOW_SAMPLES: usize = 9;

/// Brent's method on `[a, b]`. Returns the best abscissa and value found.
pub fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, x0: f64, tol: f64) -> (f64, f64) {
    let mut x = x0.clamp(a, b);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Successive window halving in up to two dimensions around `center`,
/// `levels` rounds of `WINDOW_SAMPLES` samples per axis, then a coordinate-wise
/// Brent polish. Samples are clamped into `[lo, hi]`. Ties keep the earlier sample.
pub fn window_refine<F: Fn([f64; 2]) -> f64>(
    f: F,
    dim: usize,
    center: [f64; 2],
    half_width: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    levels: usize,
) -> ([f64; 2], f64) {
    let mut best = center;
    let mut best_val = f(center);
    let mut half = half_width;
    let offsets: Vec<f64> = (0..WINDOW_SAMPLES)
        .map(|k| k as f64 / (WINDOW_SAMPLES - 1) as f64 * 2.0 - 1.0)
        .collect();
    for _ in 0..levels {
        let c = best;
        let ys: &[f64] = if dim == 2 { &offsets } else { &[0.0] };
        for &ox in &offsets {
            for &oy in ys {
                let p = [
                    (c[0] + ox * half[0]).clamp(lo[0], hi[0]),
                    if dim == 2 { (c[1] + oy * half[1]).clamp(lo[1], hi[1]) } else { c[1] },
                ];
                let v = f(p);
                if v < best_val {
                    best = p;
                    best_val = v;
                }
            }
        }
        half = [half[0] * 0.5, half[1] * 0.5];
    }
    // `half / 2` is the last sample spacing; a unimodal minimizer lies within
    // one spacing of `best`.
    let spacing = [half[0] * 0.5, half[1] * 0.5];
    let sweeps = if dim == 2 { 3 } else { 1 };
    for _ in 0..sweeps {
        for axis in 0..dim {
            let a = (best[axis] - spacing[axis]).max(lo[axis]);
            let b = (best[axis] + spacing[axis]).min(hi[axis]);
            if !(b > a) || !best_val.is_finite() {
                continue;
            }
            let probe = |t: f64| {
                let mut p = best;
                p[axis] = t;
                f(p)
            };
            let (t, v) = brent(probe, a, b, best[axis], 1e-12);
            if v < best_val {
                best[axis] = t;
                best_val = v;
            }
        }
    }
    (best, best_val)
}

/// Minimizes `f` over `[lo, hi]` (a positive range) on a log-spaced grid of
/// `n` points, then refines `rounds` times in log coordinates and polishes.
pub fn minimize_log_grid<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize, rounds: usize) -> (f64, f64) {
    let (ulo, uhi) = (lo.ln(), hi.ln());
    let step = (uhi - ulo) / (n - 1) as f64;
    let g = |u: f64| f(u.exp());
    let mut best_u = ulo;
    let mut best_v = g(ulo);
    for k in 1..n {
        let u = ulo + k as f64 * step;
        let v = g(u);
        if v < best_v {
            best_u = u;
            best_v = v;
        }
    }
    let (p, v) = window_refine(
        |p| g(p[0]),
        1,
        [best_u, 0.0],
        [step, 0.0],
        [ulo, 0.0],
        [uhi, 0.0],
        rounds,
    );
    if v < best_v {
        (p[0].exp(), v)
    } else {
        (best_u.exp(), best_v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_on_parabola() {
        let (x, v) = brent(|x| (x - 0.3).powi(2) + 1.0, 0.0, 1.0, 0.5, 1e-12);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn window_refine_2d() {
        let f = |p: [f64; 2]| (p[0] - 0.123).powi(2) + 2.0 * (p[1] + 0.456).powi(2);
        let (p, v) = window_refine(f, 2, [0.0, 0.0], [1.0, 1.0], [-1.0, -1.0], [1.0, 1.0], 12);
        assert!((p[0] - 0.123).abs() < 1e-6 && (p[1] + 0.456).abs() < 1e-6, "{p:?}");
        assert!(v < 1e-12);
    }

    #[test]
    fn window_refine_tolerates_infinite_regions() {
        let f = |p: [f64; 2]| if p[0] > 0.5 { f64::INFINITY } else { (p[0] - 0.4).powi(2) };
        let (p, _) = window_refine(f, 1, [0.45, 0.0], [0.1, 0.0], [0.0, 0.0], [1.0, 0.0], 6);
        assert!((p[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn log_grid_minimum() {
        let (t, v) = minimize_log_grid(|t| t - 3.0 * t.ln(), 1e-4, 1e4, 200, 3);
        assert!((t - 3.0).abs() < 1e-6);
        assert!((v - (3.0 - 3.0 * 3f64.ln())).abs() < 1e-12);
    }
}
