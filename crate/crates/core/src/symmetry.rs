//! Exact function-preserving transforms of ReLU networks: positive rescaling
//! of a hidden unit and permutation of the units within a hidden layer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelArch, ParamVector};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TransformKind<T> {
    /// Incoming weights (and bias) of `unit` scaled by `alpha`, outgoing
    /// weights by `1 / alpha`.
    Scale { unit: usize, alpha: T },
    /// New unit `i` takes the weights of old unit `perm[i]`.
    Permute(Vec<usize>),
}

/// A transform acting on one hidden layer (`layer` counts hidden layers
/// from zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryTransform<T> {
    pub layer: usize,
    pub kind: TransformKind<T>,
}

impl<T: Scalar> SymmetryTransform<T> {
    pub fn scale(layer: usize, unit: usize, alpha: T) -> Self {
        Self {
            layer,
            kind: TransformKind::Scale { unit, alpha },
        }
    }

    pub fn permute(layer: usize, perm: Vec<usize>) -> Self {
        Self {
            layer,
            kind: TransformKind::Permute(perm),
        }
    }

    pub fn swap(layer: usize, width: usize, i: usize, j: usize) -> Self {
        let mut perm: Vec<usize> = (0..width).collect();
        perm.swap(i, j);
        Self::permute(layer, perm)
    }

    /// The transform undoing this one.
    pub fn inverse(&self) -> Self {
        let kind = match &self.kind {
            TransformKind::Scale { unit, alpha } => TransformKind::Scale {
                unit: *unit,
                alpha: T::one() / *alpha,
            },
            TransformKind::Permute(perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                TransformKind::Permute(inv)
            }
        };
        Self {
            layer: self.layer,
            kind,
        }
    }

    fn validate(&self, arch: &ModelArch) -> Result<usize> {
        let width = arch.hidden_width(self.layer).ok_or_else(|| {
            Error::InvalidTransform(format!(
                "hidden layer {} does not exist ({} hidden layers)",
                self.layer,
                arch.num_hidden_layers()
            ))
        })?;
        match &self.kind {
            TransformKind::Scale { unit, alpha } => {
                if *unit >= width {
                    return Err(Error::InvalidTransform(format!(
                        "unit {unit} out of range for width {width}"
                    )));
                }
                if !(*alpha > T::zero() && alpha.is_finite()) {
                    return Err(Error::InvalidTransform(format!(
                        "scale factor must be positive and finite, got {alpha}"
                    )));
                }
            }
            TransformKind::Permute(perm) => {
                let mut seen = vec![false; width];
                let valid = perm.len() == width
                    && perm
                        .iter()
                        .all(|&p| p < width && !std::mem::replace(&mut seen[p], true));
                if !valid {
                    return Err(Error::InvalidTransform(format!(
                        "{perm:?} is not a permutation of 0..{width}"
                    )));
                }
            }
        }
        Ok(width)
    }
}

pub fn apply_transform<T: Scalar>(
    arch: &ModelArch,
    theta: &ParamVector<T>,
    t: &SymmetryTransform<T>,
) -> Result<ParamVector<T>> {
    arch.check_params("parameter vector", theta.as_slice())?;
    t.validate(arch)?;
    let order = arch.ordering();
    let inc = order.slots()[t.layer];
    let out = order.slots()[t.layer + 1];
    let src = theta.as_slice();
    let mut v = src.to_vec();
    match &t.kind {
        TransformKind::Scale { unit, alpha } => {
            let (u, alpha) = (*unit, *alpha);
            let inv = T::one() / alpha;
            for c in 0..inc.in_width {
                v[inc.weight_index(u, c)] *= alpha;
            }
            if let Some(b) = inc.bias_offset {
                v[b + u] *= alpha;
            }
            for r in 0..out.out_width {
                v[out.weight_index(r, u)] *= inv;
            }
        }
        TransformKind::Permute(perm) => {
            for (i, &p) in perm.iter().enumerate() {
                for c in 0..inc.in_width {
                    v[inc.weight_index(i, c)] = src[inc.weight_index(p, c)];
                }
                if let Some(b) = inc.bias_offset {
                    v[b + i] = src[b + p];
                }
                for r in 0..out.out_width {
                    v[out.weight_index(r, i)] = src[out.weight_index(r, p)];
                }
            }
        }
    }
    Ok(ParamVector::from_vec_unchecked(v))
}

/// Range of the log-uniform scale factors drawn by [`random_transform`].
pub const SCALE_RANGE: (f64, f64) = (0.25, 4.0);

/// Draws one transform on a random hidden layer: a scale with factor
/// log-uniform in [`SCALE_RANGE`] or a uniformly random permutation, each
/// with probability one half.
pub fn random_transform<T: Scalar, R: Rng + ?Sized>(arch: &ModelArch, rng: &mut R) -> Option<SymmetryTransform<T>> {
    let hidden = arch.num_hidden_layers();
    if hidden == 0 {
        return None;
    }
    let layer = rng.gen_range(0..hidden);
    let width = arch.hidden_width(layer)?;
    Some(if rng.gen_bool(0.5) {
        let (lo, hi) = (SCALE_RANGE.0.ln(), SCALE_RANGE.1.ln());
        let alpha = rng.gen_range(lo..hi).exp();
        SymmetryTransform::scale(layer, rng.gen_range(0..width), T::of(alpha))
    } else {
        let mut perm: Vec<usize> = (0..width).collect();
        perm.shuffle(rng);
        SymmetryTransform::permute(layer, perm)
    })
}

/// `n` exact equivalents of `theta`, each a composition of one to four
/// random transforms. Networks without hidden layers have no such
/// symmetries and get copies of `theta`.
pub fn random_equivalent<T: Scalar>(
    arch: &ModelArch,
    theta: &ParamVector<T>,
    seed: u64,
    n: usize,
) -> Result<Vec<ParamVector<T>>> {
    arch.check_params("parameter vector", theta.as_slice())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=4);
            let mut out = theta.clone();
            for _ in 0..k {
                if let Some(t) = random_transform(arch, &mut rng) {
                    out = apply_transform(arch, &out, &t)?;
                }
            }
            Ok(out)
        })
        .collect()
}
