//! Linear projection of high-dimensional point sets to a few principal
//! axes for plotting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection<T> {
    pub mean: Vec<T>,
    /// Orthonormal, by descending explained variance. The largest-magnitude
    /// entry of each axis is positive.
    pub axes: Vec<Vec<T>>,
    pub explained_variance: Vec<T>,
    /// Every covariance eigenvalue, descending.
    pub spectrum: Vec<T>,
}

impl<T: Scalar> Projection<T> {
    pub fn target_dim(&self) -> usize {
        self.axes.len()
    }

    pub fn total_variance(&self) -> T {
        self.spectrum.iter().copied().sum()
    }

    /// Variance not captured by the retained axes.
    pub fn residual_variance(&self) -> T {
        self.spectrum[self.axes.len()..].iter().copied().sum()
    }

    pub fn project(&self, point: &[T]) -> Result<Vec<T>> {
        if point.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: self.mean.len(),
                actual: point.len(),
            });
        }
        let centered: Vec<T> = point.iter().zip(&self.mean).map(|(&x, &m)| x - m).collect();
        Ok(self.axes.iter().map(|a| dot(a, &centered)).collect())
    }

    /// Maps projected coordinates back into the original space.
    pub fn reconstruct(&self, coords: &[T]) -> Vec<T> {
        let mut out = self.mean.clone();
        for (&c, a) in coords.iter().zip(&self.axes) {
            for (o, &v) in out.iter_mut().zip(a) {
                *o += c * v;
            }
        }
        out
    }
}

pub fn project<T: Scalar>(proj: &Projection<T>, point: &[T]) -> Result<Vec<T>> {
    proj.project(point)
}

/// Principal axes of `points` from the eigendecomposition of their
/// population covariance (divided by N).
pub fn pca_fit<T: Scalar>(points: &[Vec<T>], target_dim: usize) -> Result<Projection<T>> {
    if points.len() < 2 {
        return Err(Error::config(
            "points",
            format!("need at least 2 points, got {}", points.len()),
        ));
    }
    let d = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "point",
            expected: d,
            actual: bad.len(),
        });
    }
    if target_dim == 0 || d < target_dim {
        return Err(Error::config(
            "target_dim",
            format!("must be in 1..={d} for {d}-dimensional points, got {target_dim}"),
        ));
    }
    let n = T::of(points.len() as f64);
    let mut mean = vec![T::zero(); d];
    for p in points {
        for (m, &x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = vec![T::zero(); d * d];
    for p in points {
        let c: Vec<T> = p.iter().zip(&mean).map(|(&x, &m)| x - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / n;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let (values, vectors) = symmetric_eigen(cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let spectrum: Vec<T> = order.iter().map(|&k| values[k].max(T::zero())).collect();
    let axes: Vec<Vec<T>> = order[..target_dim]
        .iter()
        .map(|&k| {
            let mut axis: Vec<T> = (0..d).map(|r| vectors[r * d + k]).collect();
            let lead = axis
                .iter()
                .copied()
                .fold(T::zero(), |best, v| if v.abs() > best.abs() { v } else { best });
            if lead < T::zero() {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            axis
        })
        .collect();
    Ok(Projection {
        mean,
        explained_variance: spectrum[..target_dim].to_vec(),
        spectrum,
        axes,
    })
}

/// Cyclic Jacobi eigendecomposition of a dense symmetric `d x d` matrix.
/// Returns eigenvalues and a row-major matrix whose columns are the
/// corresponding eigenvectors.
fn symmetric_eigen<T: Scalar>(mut a: Vec<T>, d: usize) -> (Vec<T>, Vec<T>) {
    let mut v = vec![T::zero(); d * d];
    for i in 0..d {
        v[i * d + i] = T::one();
    }
    let scale: T = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let tiny = T::epsilon() * scale.max(T::min_positive_value()) * T::of(1e-3);
    for _sweep in 0..64 {
        let off: T = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<T>()
            .sqrt();
        if off <= tiny {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let two = T::of(2.0);
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i * d + i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_of_known_matrix() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let (vals, vecs) = symmetric_eigen(vec![2.0f64, 1.0, 1.0, 2.0], 2);
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((sorted[0] - 3.0).abs() < 1e-14 && (sorted[1] - 1.0).abs() < 1e-14);
        let col0 = [vecs[0], vecs[2]];
        assert!((col0[0].abs() - col0[1].abs()).abs() < 1e-14);
    }

    #[test]
    fn plane_in_four_dims_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let origin = [0.5, -1.0, 2.0, 0.25];
        let u = [1.0, 2.0, 0.0, -1.0];
        let w = [0.0, 1.0, 1.0, 1.0];
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let (s, t): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                (0..4).map(|k| origin[k] + s * u[k] + t * w[k]).collect()
            })
            .collect();
        let proj = pca_fit(&pts, 2).unwrap();
        assert!(proj.residual_variance() < 1e-10);
        for p in &pts {
            let back = proj.reconstruct(&proj.project(p).unwrap());
            let err: f64 = back.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-10);
        }
        assert!(proj.project(&proj.mean).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn isotropic_cloud_has_balanced_variances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..5000)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let proj = pca_fit(&pts, 3).unwrap();
        let v = &proj.explained_variance;
        assert!(v[0] / v[2] < 1.5, "{v:?}");
    }

    #[test]
    fn duplicating_points_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut doubled = pts.clone();
        doubled.extend(pts.iter().cloned());
        let a = pca_fit(&pts, 2).unwrap();
        let b = pca_fit(&doubled, 2).unwrap();
        for (x, y) in a.axes.iter().flatten().zip(b.axes.iter().flatten()) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in a.spectrum.iter().zip(&b.spectrum) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_contracts_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let proj = pca_fit(&pts, 2).unwrap();
        let low: Vec<Vec<f64>> = pts.iter().map(|p| proj.project(p).unwrap()).collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        for i in 0..pts.len() {
            for j in 0..i {
                assert!(dist(&low[i], &low[j]) <= dist(&pts[i], &pts[j]) + 1e-12);
            }
        }
    }

    #[test]
    fn sign_convention_and_errors() {
        let pts: Vec<Vec<f64>> = vec![vec![0.0, 0.0, 0.0], vec![-1.0, -3.0, 0.5], vec![2.0, 1.0, 0.0]];
        let proj = pca_fit(&pts, 2).unwrap();
        for axis in &proj.axes {
            let lead = axis
                .iter()
                .copied()
                .fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(lead > 0.0);
        }
        assert!(pca_fit(&pts, 4).is_err());
        assert!(pca_fit(&pts[..1], 1).is_err());
        assert!(pca_fit(&[vec![1.0], vec![1.0, 2.0]], 1).is_err());
    }
}
