//! Affine slices of parameter space through a set of equivalent
//! parameters, Cartesian coefficient grids on them, and the set of grid
//! points whose loss is below a threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelArch, Objective, ParamVector, SampleSet, SampleSpec};
use crate::scalar::{axpy, dot, norm, Scalar};

/// Residual norm below which a source offset is considered dependent.
pub const DROP_TOLERANCE: f64 = 1e-10;

/// Largest grid accepted by [`GridSpec::new`].
pub const MAX_GRID_POINTS: usize = 100_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane<T> {
    pub origin: ParamVector<T>,
    /// Orthonormal directions, one per plane dimension.
    pub basis: Vec<Vec<T>>,
    pub source_points: Vec<ParamVector<T>>,
    /// Indices into `source_points` whose offsets were dependent and dropped.
    pub dropped: Vec<usize>,
}

impl<T: Scalar> Hyperplane<T> {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.origin.len()
    }

    /// `origin + sum_i coeffs[i] * basis[i]`.
    pub fn embed(&self, coeffs: &[T]) -> Result<ParamVector<T>> {
        let mut out = vec![T::zero(); self.ambient_dim()];
        self.embed_into(coeffs, &mut out)?;
        Ok(ParamVector::from_vec_unchecked(out))
    }

    fn embed_into(&self, coeffs: &[T], out: &mut [T]) -> Result<()> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "plane coefficients",
                expected: self.dim(),
                actual: coeffs.len(),
            });
        }
        out.copy_from_slice(self.origin.as_slice());
        for (&c, b) in coeffs.iter().zip(&self.basis) {
            axpy(c, b, out);
        }
        Ok(())
    }

    /// Coefficients of the orthogonal projection of `point` onto the plane,
    /// plus the norm of the out-of-plane residual.
    pub fn project(&self, point: &ParamVector<T>) -> Result<(Vec<T>, T)> {
        if point.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: self.ambient_dim(),
                actual: point.len(),
            });
        }
        let mut r: Vec<T> = point
            .as_slice()
            .iter()
            .zip(self.origin.as_slice())
            .map(|(&a, &b)| a - b)
            .collect();
        let coeffs: Vec<T> = self.basis.iter().map(|b| dot(b, &r)).collect();
        for (&c, b) in coeffs.iter().zip(&self.basis) {
            axpy(-c, b, &mut r);
        }
        Ok((coeffs, norm(&r)))
    }
}

/// Orthonormal basis for the offsets `points[i] - origin`, by classical
/// Gram-Schmidt with one full reorthogonalization pass. Offsets whose
/// residual falls below [`DROP_TOLERANCE`] are dropped and reported.
pub fn gram_schmidt<T: Scalar>(origin: &ParamVector<T>, points: &[ParamVector<T>]) -> Result<Hyperplane<T>> {
    if points.is_empty() {
        return Err(Error::DegeneratePlane);
    }
    let drop_tol = T::of(DROP_TOLERANCE);
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut dropped = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if p.len() != origin.len() {
            return Err(Error::DimensionMismatch {
                what: "plane source point",
                expected: origin.len(),
                actual: p.len(),
            });
        }
        let mut v: Vec<T> = p
            .as_slice()
            .iter()
            .zip(origin.as_slice())
            .map(|(&a, &b)| a - b)
            .collect();
        for _ in 0..2 {
            let h: Vec<T> = basis.iter().map(|q| dot(q, &v)).collect();
            for (c, q) in h.into_iter().zip(&basis) {
                axpy(-c, q, &mut v);
            }
        }
        let n = norm(&v);
        if n < drop_tol {
            dropped.push(i);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    if basis.is_empty() {
        return Err(Error::DegeneratePlane);
    }
    Ok(Hyperplane {
        origin: origin.clone(),
        basis,
        source_points: points.to_vec(),
        dropped,
    })
}

pub fn embed<T: Scalar>(plane: &Hyperplane<T>, coeffs: &[T]) -> Result<ParamVector<T>> {
    plane.embed(coeffs)
}

/// The grid `X_m {a + (i-1)/(n-1) (b-a)}_{1<=i<=n}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn new(dim: usize, lo: f64, hi: f64, points_per_axis: usize) -> Result<Self> {
        let spec = Self {
            dim,
            lo,
            hi,
            points_per_axis,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("grid.dim", "must be at least 1"));
        }
        if self.points_per_axis < 2 {
            return Err(Error::config(
                "grid.points",
                format!("need at least 2 points per axis, got {}", self.points_per_axis),
            ));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::config(
                "grid.bound",
                format!("need finite lo < hi, got [{}, {}]", self.lo, self.hi),
            ));
        }
        let too_large = Error::GridTooLarge {
            dim: self.dim,
            points_per_axis: self.points_per_axis,
            limit: MAX_GRID_POINTS,
        };
        let dim = u32::try_from(self.dim).map_err(|_| too_large)?;
        match self.points_per_axis.checked_pow(dim) {
            Some(n) if n <= MAX_GRID_POINTS => Ok(()),
            _ => Err(Error::GridTooLarge {
                dim: self.dim,
                points_per_axis: self.points_per_axis,
                limit: MAX_GRID_POINTS,
            }),
        }
    }

    /// Total number of grid points, `n^m`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Axis value at zero-based position `i`; the last position is `hi`
    /// exactly.
    pub fn axis_value<T: Scalar>(&self, i: usize) -> T {
        let last = self.points_per_axis - 1;
        if i == last {
            return T::of(self.hi);
        }
        let (a, b) = (T::of(self.lo), T::of(self.hi));
        a + T::of(i as f64) / T::of(last as f64) * (b - a)
    }

    pub fn axis_values<T: Scalar>(&self) -> Vec<T> {
        (0..self.points_per_axis).map(|i| self.axis_value(i)).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points_per_axis - 1) as f64
    }

    /// Row-major: the last axis varies fastest.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let n = self.points_per_axis;
        let mut idx = vec![0; self.dim];
        for slot in idx.iter_mut().rev() {
            *slot = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.points_per_axis + i)
    }

    pub fn coords<T: Scalar>(&self, flat: usize) -> Vec<T> {
        self.unravel(flat).into_iter().map(|i| self.axis_value(i)).collect()
    }

    /// Nearest grid position of a coefficient on one axis, clamped to the grid.
    pub fn snap(&self, c: f64) -> usize {
        let t = ((c - self.lo) / self.spacing()).round();
        t.clamp(0.0, (self.points_per_axis - 1) as f64) as usize
    }
}

/// Iterator over `(multi-index, coefficients)` in row-major order.
#[derive(Clone, Debug)]
pub struct GridIter<T> {
    spec: GridSpec,
    values: Vec<T>,
    next: usize,
    len: usize,
}

impl<T: Scalar> Iterator for GridIter<T> {
    type Item = (Vec<usize>, Vec<T>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.len {
            return None;
        }
        let idx = self.spec.unravel(self.next);
        let coeffs = idx.iter().map(|&i| self.values[i]).collect();
        self.next += 1;
        Some((idx, coeffs))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = self.len - self.next;
        (rest, Some(rest))
    }
}

impl<T: Scalar> ExactSizeIterator for GridIter<T> {}

pub fn build_grid<T: Scalar>(spec: &GridSpec) -> Result<GridIter<T>> {
    spec.validate()?;
    Ok(GridIter {
        spec: *spec,
        values: spec.axis_values(),
        next: 0,
        len: spec.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridEvaluation<T> {
    pub spec: GridSpec,
    pub plane: Hyperplane<T>,
    /// One loss per grid point, row-major.
    pub losses: Vec<T>,
    pub samples_used: Option<SampleSpec>,
}

impl<T: Scalar> GridEvaluation<T> {
    pub fn loss_at(&self, idx: &[usize]) -> T {
        self.losses[self.spec.ravel(idx)]
    }

    pub fn min_loss(&self) -> T {
        self.losses.iter().copied().fold(T::infinity(), T::min)
    }
}

/// J at every embedded grid point. Points are evaluated independently, so
/// the result does not depend on the rayon pool the call runs in.
pub fn evaluate_grid<T: Scalar>(
    arch: &ModelArch,
    theta_ref: &ParamVector<T>,
    plane: &Hyperplane<T>,
    spec: &GridSpec,
    samples: &SampleSet<T>,
) -> Result<GridEvaluation<T>> {
    spec.validate()?;
    if plane.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            what: "grid dimension vs plane dimension",
            expected: plane.dim(),
            actual: spec.dim,
        });
    }
    arch.check_params("plane origin", plane.origin.as_slice())?;
    let obj = Objective::new(arch, theta_ref, samples)?;
    let axis: Vec<T> = spec.axis_values();
    let d = plane.ambient_dim();
    let losses = (0..spec.len())
        .into_par_iter()
        .map_init(
            || (obj.scratch(), vec![T::zero(); d], vec![T::zero(); spec.dim]),
            |(scratch, theta, coeffs), k| {
                for (c, i) in coeffs.iter_mut().zip(spec.unravel(k)) {
                    *c = axis[i];
                }
                plane.embed_into(coeffs, theta).expect("dimension checked above");
                obj.loss_with(theta, scratch)
            },
        )
        .collect();
    Ok(GridEvaluation {
        spec: *spec,
        plane: plane.clone(),
        losses,
        samples_used: samples.generation().copied(),
    })
}

/// Grid points with loss strictly below `epsilon`.
#[derive(Clone, Debug)]
pub struct EpsilonSet<'a, T> {
    pub evaluation: &'a GridEvaluation<T>,
    pub epsilon: T,
    /// Flat row-major indices, ascending (equivalently, multi-indices in
    /// lexicographic order).
    pub members: Vec<usize>,
}

impl<T: Scalar> EpsilonSet<'_, T> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, flat: usize) -> bool {
        self.members.binary_search(&flat).is_ok()
    }

    pub fn member_indices(&self) -> Vec<Vec<usize>> {
        self.members.iter().map(|&k| self.evaluation.spec.unravel(k)).collect()
    }

    pub fn member_coeffs(&self) -> Vec<Vec<T>> {
        self.members.iter().map(|&k| self.evaluation.spec.coords(k)).collect()
    }

    pub fn member_params(&self) -> Vec<ParamVector<T>> {
        self.member_coeffs()
            .iter()
            .map(|c| self.evaluation.plane.embed(c).expect("grid matches plane"))
            .collect()
    }
}

pub fn epsilon_filter<T: Scalar>(evaluation: &GridEvaluation<T>, epsilon: T) -> Result<EpsilonSet<'_, T>> {
    if epsilon.is_nan() || epsilon <= T::zero() {
        return Err(Error::config("epsilon", format!("must be positive, got {epsilon}")));
    }
    let members = evaluation
        .losses
        .iter()
        .enumerate()
        .filter(|(_, &l)| l < epsilon)
        .map(|(k, _)| k)
        .collect();
    Ok(EpsilonSet {
        evaluation,
        epsilon,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelArch;

    fn p(v: &[f64]) -> ParamVector<f64> {
        ParamVector::from_f64(v).unwrap()
    }

    #[test]
    fn textbook_gram_schmidt() {
        let plane = gram_schmidt(&p(&[0., 0.]), &[p(&[1., 0.]), p(&[1., 1.])]).unwrap();
        assert_eq!(plane.basis, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let plane = gram_schmidt(&p(&[0., 0.]), &[p(&[2., 0.])]).unwrap();
        assert_eq!(plane.basis, vec![vec![1.0, 0.0]]);
        let plane = gram_schmidt(&p(&[0., 0.]), &[p(&[1., 0.]), p(&[2., 0.])]).unwrap();
        assert_eq!(plane.basis, vec![vec![1.0, 0.0]]);
        assert_eq!(plane.dropped, vec![1]);
    }

    #[test]
    fn degenerate_plane() {
        let o = p(&[1., 2., 3.]);
        assert!(matches!(
            gram_schmidt(&o, std::slice::from_ref(&o)),
            Err(Error::DegeneratePlane)
        ));
        assert!(matches!(gram_schmidt(&o, &[]), Err(Error::DegeneratePlane)));
        assert!(gram_schmidt(&o, &[p(&[1., 2.])]).is_err());
    }

    #[test]
    fn ill_conditioned_inputs_stay_orthonormal() {
        // Nearly parallel vectors: plain classical GS loses orthogonality here.
        let o = p(&[0.; 5]);
        let pts: Vec<_> = (0..4)
            .map(|k| {
                let mut v = vec![1.0; 5];
                v[k] += 1e-7 * (k + 1) as f64;
                p(&v)
            })
            .collect();
        let plane = gram_schmidt(&o, &pts).unwrap();
        for (i, a) in plane.basis.iter().enumerate() {
            for (j, b) in plane.basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - target).abs() < 1e-10, "{i} {j} {}", dot(a, b));
            }
        }
    }

    #[test]
    fn embed_and_project() {
        let origin = p(&[1., 1., 1., 1.]);
        let plane = gram_schmidt(&origin, &[p(&[2., 1., 1., 1.])]).unwrap();
        assert_eq!(plane.embed(&[0.0]).unwrap(), origin);
        assert_eq!(plane.embed(&[1.5]).unwrap(), p(&[2.5, 1., 1., 1.]));
        assert!(plane.embed(&[1.0, 2.0]).is_err());
        let (c, r) = plane.project(&p(&[0., 1., 1., 4.])).unwrap();
        assert_eq!(c, vec![-1.0]);
        assert_eq!(r, 3.0);
    }

    #[test]
    fn grid_axis_formula() {
        let g = GridSpec::new(1, -2.0, 2.0, 5).unwrap();
        let pts: Vec<f64> = build_grid::<f64>(&g).unwrap().map(|(_, c)| c[0]).collect();
        assert_eq!(pts, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let g = GridSpec::new(2, 0.0, 1.0, 2).unwrap();
        let pts: Vec<Vec<f64>> = build_grid(&g).unwrap().map(|(_, c)| c).collect();
        assert_eq!(pts, vec![vec![0., 0.], vec![0., 1.], vec![1., 0.], vec![1., 1.]]);
        let g = GridSpec::new(3, -2.0, 2.0, 50).unwrap();
        assert_eq!(build_grid::<f64>(&g).unwrap().len(), 125_000);
    }

    #[test]
    fn grid_endpoints_are_exact() {
        for (lo, hi, n) in [
            (-2.0, 2.0, 100),
            (0.1, 0.7, 13),
            (-13.0, 13.0, 35),
            (-1.0 / 3.0, 2.0 / 7.0, 9),
        ] {
            let g = GridSpec::new(1, lo, hi, n).unwrap();
            assert_eq!(g.axis_value::<f64>(0), lo);
            assert_eq!(g.axis_value::<f64>(n - 1), hi);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(2, -2.0, 2.0, 1).is_err());
        assert!(GridSpec::new(0, -2.0, 2.0, 5).is_err());
        assert!(GridSpec::new(2, 2.0, -2.0, 5).is_err());
        assert!(matches!(
            GridSpec::new(5, -2.0, 2.0, 100),
            Err(Error::GridTooLarge { .. })
        ));
        assert!(matches!(
            GridSpec::new(64, -2.0, 2.0, 100),
            Err(Error::GridTooLarge { .. })
        ));
        assert!(GridSpec::new(4, -2.0, 2.0, 100).is_ok());
    }

    #[test]
    fn ravel_unravel() {
        let g = GridSpec::new(3, 0.0, 1.0, 7).unwrap();
        for k in [0, 1, 6, 7, 48, 49, 342] {
            assert_eq!(g.ravel(&g.unravel(k)), k);
        }
        assert_eq!(g.unravel(7), vec![0, 1, 0]);
    }

    fn axis_plane_eval(n: usize) -> GridEvaluation<f64> {
        let arch = ModelArch::relu(&[1, 2, 1]).unwrap();
        let r = p(&[1., 1., 1., 1.]);
        let plane = gram_schmidt(&r, &[p(&[2., 1., 1., 1.]), p(&[1., 1., 2., 1.])]).unwrap();
        let samples = SampleSet::generate(SampleSpec {
            seed: 0,
            count: 256,
            input_dim: 1,
            lo: -1.0,
            hi: 1.0,
        })
        .unwrap();
        let spec = GridSpec::new(2, -2.0, 2.0, n).unwrap();
        evaluate_grid(&arch, &r, &plane, &spec, &samples).unwrap()
    }

    #[test]
    fn scaling_curve_is_exactly_equivalent() {
        let arch = ModelArch::relu(&[1, 2, 1]).unwrap();
        let r = p(&[1., 1., 1., 1.]);
        let plane = gram_schmidt(&r, &[p(&[2., 1., 1., 1.]), p(&[1., 1., 2., 1.])]).unwrap();
        let samples = SampleSet::generate(SampleSpec {
            seed: 2,
            count: 256,
            input_dim: 1,
            lo: -1.0,
            hi: 1.0,
        })
        .unwrap();
        for k in 0..50 {
            let alpha = 0.4 + 2.6 * k as f64 / 49.0;
            let theta = plane.embed(&[alpha - 1.0, 1.0 / alpha - 1.0]).unwrap();
            let j = crate::model::aux_loss(&arch, &r, &theta, &samples).unwrap();
            assert!(j < 1e-10, "alpha {alpha}: {j}");
        }
    }

    #[test]
    fn grid_losses_match_direct_evaluation() {
        let eval = axis_plane_eval(21);
        let arch = ModelArch::relu(&[1, 2, 1]).unwrap();
        let samples = SampleSet::generate(eval.samples_used.unwrap()).unwrap();
        let r = p(&[1., 1., 1., 1.]);
        for k in [0, 5, 220, 440] {
            let theta = eval.plane.embed(&eval.spec.coords::<f64>(k)).unwrap();
            assert_eq!(
                eval.losses[k],
                crate::model::aux_loss(&arch, &r, &theta, &samples).unwrap()
            );
        }
    }

    #[test]
    fn epsilon_filter_extremes_and_monotonicity() {
        // n = 20 puts no grid point exactly on the scaling curve, so the
        // minimum loss is positive.
        let eval = axis_plane_eval(20);
        assert!(eval.min_loss() > 0.0);
        let all = epsilon_filter(&eval, f64::MAX).unwrap();
        assert_eq!(all.len(), eval.losses.len());
        let none = epsilon_filter(&eval, eval.min_loss()).unwrap();
        assert!(none.is_empty());
        assert!(epsilon_filter(&eval, 0.0).is_err());
        let small = epsilon_filter(&eval, 0.0025).unwrap();
        let large = epsilon_filter(&eval, 0.1).unwrap();
        assert!(small.members.iter().all(|k| large.contains(*k)));
        assert!(small.members.windows(2).all(|w| w[0] < w[1]));
    }
}
