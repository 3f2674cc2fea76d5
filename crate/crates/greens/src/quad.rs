//! Panel quadrature helpers.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Chebyshev points of the first kind on `[a, b]`, increasing.
pub fn chebyshev(n: usize, a: f64, b: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = -(PI * (2 * i + 1) as f64 / (2 * n) as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * t
        })
        .collect()
}

/// Panel edges on `[a, b]` refined geometrically toward both ends until
/// the smallest panel is below `min_width`.
pub fn two_sided_panels(a: f64, b: f64, min_width: f64) -> Vec<f64> {
    let mid = 0.5 * (a + b);
    let half = mid - a;
    let mut left = vec![a];
    let mut w = half;
    let mut inner = Vec::new();
    while w > min_width {
        w *= 0.5;
        inner.push(a + w);
    }
    inner.reverse();
    left.extend(inner);
    left.push(mid);
    let right: Vec<f64> = left.iter().rev().skip(1).map(|&x| a + b - x).collect();
    left.extend(right);
    left
}

/// Composite Gauss-Legendre rule over consecutive panel edges.
pub fn composite_rule(edges: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let mut xs = Vec::with_capacity(order * edges.len());
    let mut ws = Vec::with_capacity(order * edges.len());
    for e in edges.windows(2) {
        let (lo, hi) = (e[0], e[1]);
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(c + r * x);
            ws.push(r * w);
        }
    }
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1usize, 2, 5, 16, 24] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            for deg in 0..(2 * n) as i32 {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
                let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
                assert!((got - want).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn panels_resolve_boundary_layers() {
        let edges = two_sided_panels(0.0, 1.0, 1e-6);
        assert!(edges.windows(2).all(|e| e[1] > e[0]));
        assert!(edges[1] < 1e-6 && 1.0 - edges[edges.len() - 2] < 1e-6);
        let (x, w) = composite_rule(&edges, 16);
        let a = 1e5;
        let got: f64 = x.iter().zip(&w).map(|(x, w)| w * (-a * x).exp()).sum();
        assert!((got - (1.0 - (-a).exp()) / a).abs() < 1e-18);
    }

    #[test]
    fn chebyshev_points_lie_inside() {
        let c = chebyshev(24, -1.0, 3.0);
        assert!(c.windows(2).all(|p| p[1] > p[0]));
        assert!(c[0] > -1.0 && c[23] < 3.0);
    }
}
