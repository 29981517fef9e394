//! Independent reference computations used by the acceptance checks. Nothing
//! here calls into `paramequiv`.

/// `c*relu(a*x) + d*relu(b*x)` for `t = [a, b, c, d]`.
pub fn fcn_output(t: &[f64; 4], x: f64) -> f64 {
    t[2] * (t[0] * x).max(0.0) + t[3] * (t[1] * x).max(0.0)
}

/// Mean squared output difference of two four-parameter networks on `xs`.
pub fn fcn_loss(reference: &[f64; 4], other: &[f64; 4], xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| (fcn_output(reference, x) - fcn_output(other, x)).powi(2))
        .sum::<f64>()
        / xs.len() as f64
}

/// Loss on the plane through (1,1,1,1) spanned by the `a` and `c` axes:
/// the output difference is `((1+u)(1+v) - 1) relu(x)` when `1+u > 0`.
pub fn scaling_plane_loss(u: f64, v: f64, xs: &[f64]) -> f64 {
    fcn_loss(&[1.0, 1.0, 1.0, 1.0], &[1.0 + u, 1.0, 1.0 + v, 1.0], xs)
}

/// Euclidean distance from `(u, v)` to the curve `(alpha - 1, 1/alpha - 1)`
/// for `alpha` in `[lo, hi]`.
pub fn distance_to_scaling_curve(u: f64, v: f64, lo: f64, hi: f64) -> f64 {
    let dist = |alpha: f64| ((alpha - 1.0 - u).powi(2) + (1.0 / alpha - 1.0 - v).powi(2)).sqrt();
    let n = 4000;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let at = |k: usize| (llo + (lhi - llo) * k as f64 / n as f64).exp();
    let best = (0..=n)
        .min_by(|&i, &j| dist(at(i)).partial_cmp(&dist(at(j))).unwrap())
        .unwrap();
    // Golden-section refinement on the bracketing interval.
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(n)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if dist(c) < dist(d) {
            b = d;
        } else {
            a = c;
        }
    }
    dist(0.5 * (a + b)).min(dist(at(best)))
}

/// Central difference `(f(x + h e_k) - f(x - h e_k)) / 2h` for every `k`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_points_have_zero_distance() {
        for alpha in [0.4, 0.7, 1.0, 2.0, 3.0] {
            assert!(distance_to_scaling_curve(alpha - 1.0, 1.0 / alpha - 1.0, 0.4, 3.0) < 1e-9);
        }
        // Beyond the end of the curve the endpoint is nearest.
        let d = distance_to_scaling_curve(2.5, 1.0 / 3.0 - 1.0, 0.4, 3.0);
        assert!((d - 0.5).abs() < 1e-9);
    }

    #[test]
    fn scaling_plane_loss_is_zero_on_the_curve() {
        let xs: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
        assert!(scaling_plane_loss(1.0, -0.5, &xs) < 1e-30);
        assert!(scaling_plane_loss(1.0, 0.0, &xs) > 0.1);
    }

    #[test]
    fn central_differences_of_a_quadratic() {
        let g = central_differences(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
