//! Partitioning parameter populations into epsilon-quotient bins by
//! function distance.
//!
//! Binning is sequential first-fit: each vector joins the first existing
//! bin whose representative lies strictly within `epsilon`, otherwise it
//! founds a new bin. The anchor variant precomputes distances `c[i][l]`
//! from every vector to a few anchor functions and skips the exact
//! comparison with representative `j` as soon as `|c[i][l] - c[j][l]| >=
//! epsilon` for some `l`; by the triangle inequality such a pair is at
//! least `epsilon` apart, so the partition is unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mean_sq_diff, outputs_on, ModelArch, ParamVector, SampleSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub representative: usize,
    /// Ascending; the representative comes first.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSet<T> {
    pub bins: Vec<Bin>,
    pub epsilon: T,
    pub comparisons_made: usize,
    pub comparisons_pruned: usize,
}

impl<T> BinSet<T> {
    pub fn same_partition(&self, other: &Self) -> bool {
        self.bins == other.bins
    }

    pub fn population_size(&self) -> usize {
        self.bins.iter().map(|b| b.members.len()).sum()
    }

    /// Fraction of candidate comparisons skipped by anchor pruning.
    pub fn pruned_fraction(&self) -> f64 {
        let total = self.comparisons_made + self.comparisons_pruned;
        if total == 0 {
            0.0
        } else {
            self.comparisons_pruned as f64 / total as f64
        }
    }
}

/// Precomputed outputs of a population on a sample set.
struct OutputTable<T> {
    rows: Vec<Vec<T>>,
    out_dim: usize,
}

impl<T: Scalar> OutputTable<T> {
    fn new(arch: &ModelArch, population: &[ParamVector<T>], samples: &SampleSet<T>) -> Result<Self> {
        let rows = population
            .par_iter()
            .map(|theta| outputs_on(arch, theta, samples))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows,
            out_dim: arch.output_dim(),
        })
    }

    fn distance(&self, i: usize, j: usize) -> T {
        distance_between(&self.rows[i], &self.rows[j], self.out_dim)
    }
}

#[inline]
fn distance_between<T: Scalar>(a: &[T], b: &[T], out_dim: usize) -> T {
    mean_sq_diff(b, a, out_dim).sqrt()
}

/// Distances from every population member to every anchor, row-major
/// `N x M`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTable<T> {
    pub num_anchors: usize,
    pub distances: Vec<T>,
}

impl<T: Scalar> AnchorTable<T> {
    pub fn compute(
        arch: &ModelArch,
        population: &[ParamVector<T>],
        anchors: &[ParamVector<T>],
        samples: &SampleSet<T>,
    ) -> Result<Self> {
        let pop = OutputTable::new(arch, population, samples)?;
        let anc = OutputTable::new(arch, anchors, samples)?;
        Ok(Self::from_tables(&pop, &anc))
    }

    fn from_tables(pop: &OutputTable<T>, anc: &OutputTable<T>) -> Self {
        let m = anc.rows.len();
        let distances = (0..pop.rows.len() * m)
            .into_par_iter()
            .map(|k| distance_between(&pop.rows[k / m], &anc.rows[k % m], pop.out_dim))
            .collect();
        Self {
            num_anchors: m,
            distances,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> T {
        self.distances[i * self.num_anchors + l]
    }

    fn row(&self, i: usize) -> &[T] {
        &self.distances[i * self.num_anchors..(i + 1) * self.num_anchors]
    }
}

fn first_fit<T: Scalar>(
    table: &OutputTable<T>,
    epsilon: T,
    anchors: Option<&AnchorTable<T>>,
    mut pruned_pairs: Option<&mut Vec<(usize, usize)>>,
) -> BinSet<T> {
    let mut bins: Vec<Bin> = Vec::new();
    let mut made = 0;
    let mut pruned = 0;
    for i in 0..table.rows.len() {
        let mut home = None;
        for (b, bin) in bins.iter().enumerate() {
            let j = bin.representative;
            if let Some(at) = anchors {
                let skip = at
                    .row(i)
                    .iter()
                    .zip(at.row(j))
                    .any(|(&ci, &cj)| (ci - cj).abs() >= epsilon);
                if skip {
                    pruned += 1;
                    if let Some(pairs) = pruned_pairs.as_deref_mut() {
                        pairs.push((i, j));
                    }
                    continue;
                }
            }
            made += 1;
            if table.distance(j, i) < epsilon {
                home = Some(b);
                break;
            }
        }
        match home {
            Some(b) => bins[b].members.push(i),
            None => bins.push(Bin {
                representative: i,
                members: vec![i],
            }),
        }
    }
    BinSet {
        bins,
        epsilon,
        comparisons_made: made,
        comparisons_pruned: pruned,
    }
}

fn check_epsilon<T: Scalar>(epsilon: T) -> Result<()> {
    if epsilon < T::zero() || epsilon.is_nan() {
        return Err(Error::config("epsilon", format!("must be non-negative, got {epsilon}")));
    }
    Ok(())
}

/// Sequential first-fit binning with an exact distance for every
/// candidate bin. O(N^2 |C|) in the worst case.
pub fn naive_binning<T: Scalar>(
    arch: &ModelArch,
    population: &[ParamVector<T>],
    samples: &SampleSet<T>,
    epsilon: T,
) -> Result<BinSet<T>> {
    check_epsilon(epsilon)?;
    let table = OutputTable::new(arch, population, samples)?;
    Ok(first_fit(&table, epsilon, None, None))
}

/// First-fit binning with triangle-inequality pruning against `anchors`.
/// Produces the same bins as [`naive_binning`].
pub fn anchor_binning<T: Scalar>(
    arch: &ModelArch,
    population: &[ParamVector<T>],
    samples: &SampleSet<T>,
    epsilon: T,
    anchors: &[ParamVector<T>],
) -> Result<BinSet<T>> {
    anchor_binning_traced(arch, population, samples, epsilon, anchors).map(|(b, _)| b)
}

/// `(vector, representative)` index pairs skipped by anchor pruning.
pub type PrunedPairs = Vec<(usize, usize)>;

/// [`anchor_binning`] that also returns every pruned `(vector, representative)` pair.
pub fn anchor_binning_traced<T: Scalar>(
    arch: &ModelArch,
    population: &[ParamVector<T>],
    samples: &SampleSet<T>,
    epsilon: T,
    anchors: &[ParamVector<T>],
) -> Result<(BinSet<T>, PrunedPairs)> {
    check_epsilon(epsilon)?;
    if anchors.is_empty() {
        return Err(Error::config("anchors", "need at least one anchor"));
    }
    let table = OutputTable::new(arch, population, samples)?;
    let anc = OutputTable::new(arch, anchors, samples)?;
    let at = AnchorTable::from_tables(&table, &anc);
    let mut pairs = Vec::new();
    let bins = first_fit(&table, epsilon, Some(&at), Some(&mut pairs));
    Ok((bins, pairs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrefilterVerdict {
    MustCompare,
    ProvablyFar,
}

/// Lower bound on the unnormalized distance `sqrt(sum_D |f - g|^2)` from two
/// mean squared training losses on the same labeled data `D`:
/// `| sqrt(|D| l_f) - sqrt(|D| l_g) |`. `epsilon` is in the same
/// unnormalized units.
pub fn loss_prefilter(loss_f: f64, loss_g: f64, num_samples: usize, epsilon: f64) -> Result<PrefilterVerdict> {
    for l in [loss_f, loss_g] {
        if l < 0.0 || l.is_nan() {
            return Err(Error::NegativeLoss(l));
        }
    }
    let n = num_samples as f64;
    let bound = ((n * loss_f).sqrt() - (n * loss_g).sqrt()).abs();
    Ok(if bound >= epsilon {
        PrefilterVerdict::ProvablyFar
    } else {
        PrefilterVerdict::MustCompare
    })
}

/// A reference function for [`classify_against_targets`].
#[derive(Clone, Debug, PartialEq)]
pub enum Target<T> {
    Model {
        arch: ModelArch,
        theta: ParamVector<T>,
    },
    /// Outputs on the shared sample set, row-major `len x output_dim`.
    Table(Vec<T>),
}

/// For each target, the population members within (strictly less than)
/// `epsilon` of it.
pub fn classify_against_targets<T: Scalar>(
    arch: &ModelArch,
    population: &[ParamVector<T>],
    targets: &[Target<T>],
    samples: &SampleSet<T>,
    epsilon: T,
) -> Result<Vec<Vec<usize>>> {
    check_epsilon(epsilon)?;
    if targets.is_empty() {
        return Err(Error::config("targets", "need at least one target"));
    }
    let od = arch.output_dim();
    let expected = samples.len() * od;
    let target_outputs = targets
        .iter()
        .map(|t| match t {
            Target::Model { arch: tarch, theta } => {
                if tarch.input_dim() != arch.input_dim() || tarch.output_dim() != od {
                    return Err(Error::DimensionMismatch {
                        what: "target model output dimension",
                        expected: od,
                        actual: tarch.output_dim(),
                    });
                }
                outputs_on(tarch, theta, samples)
            }
            Target::Table(values) => {
                if values.len() != expected {
                    return Err(Error::DimensionMismatch {
                        what: "target table",
                        expected,
                        actual: values.len(),
                    });
                }
                Ok(values.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let pop = OutputTable::new(arch, population, samples)?;
    Ok(target_outputs
        .par_iter()
        .map(|t| {
            (0..pop.rows.len())
                .filter(|&i| distance_between(t, &pop.rows[i], od) < epsilon)
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{function_distance, SampleSpec};
    use crate::symmetry::{apply_transform, SymmetryTransform};

    fn fcn() -> ModelArch {
        ModelArch::relu(&[1, 2, 1]).unwrap()
    }

    fn p(v: &[f64]) -> ParamVector<f64> {
        ParamVector::from_f64(v).unwrap()
    }

    fn samples() -> SampleSet<f64> {
        SampleSet::generate(SampleSpec {
            seed: 8,
            count: 256,
            input_dim: 1,
            lo: -1.0,
            hi: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn exact_equivalents_share_one_bin() {
        let arch = fcn();
        let theta = p(&[0.7, -1.2, 1.5, 0.3]);
        let scaled = apply_transform(&arch, &theta, &SymmetryTransform::scale(0, 1, 2.5)).unwrap();
        let permuted = apply_transform(&arch, &theta, &SymmetryTransform::swap(0, 2, 0, 1)).unwrap();
        let bins = naive_binning(&arch, &[theta, scaled, permuted], &samples(), 1e-9).unwrap();
        assert_eq!(bins.bins.len(), 1);
        assert_eq!(bins.bins[0].members, vec![0, 1, 2]);
    }

    #[test]
    fn far_apart_vectors_get_own_bins() {
        let arch = fcn();
        let pop = vec![p(&[1., 1., 1., 1.]), p(&[1., 1., -1., -1.]), p(&[-1., -1., 1., 1.])];
        let s = samples();
        let bins = naive_binning(&arch, &pop, &s, 0.05).unwrap();
        assert_eq!(bins.bins.len(), 3);
        assert_eq!(bins.comparisons_made, 3);
    }

    #[test]
    fn zero_epsilon_separates_everything() {
        let arch = fcn();
        let theta = p(&[1., 1., 1., 1.]);
        let bins = naive_binning(&arch, &[theta.clone(), theta], &samples(), 0.0).unwrap();
        assert_eq!(bins.bins.len(), 2);
    }

    #[test]
    fn self_anchors_and_distant_anchor_keep_partition() {
        let arch = fcn();
        let s = samples();
        let pop: Vec<_> = (0..40)
            .map(|i| {
                let t = i as f64 / 40.0;
                p(&[1.0 + t, (3.0 * t).sin(), 1.0 - t, (5.0 * t).cos()])
            })
            .collect();
        let naive = naive_binning(&arch, &pop, &s, 0.1).unwrap();
        let selfish = anchor_binning(&arch, &pop, &s, 0.1, &pop).unwrap();
        assert!(naive.same_partition(&selfish));
        assert!(selfish.comparisons_pruned > 0);
        let far = anchor_binning(&arch, &pop, &s, 0.1, &[p(&[100., 100., 100., 100.])]).unwrap();
        assert!(naive.same_partition(&far));
        assert_eq!(
            far.comparisons_made + far.comparisons_pruned,
            naive.comparisons_made + naive.comparisons_pruned
        );
    }

    #[test]
    fn pruned_pairs_are_far() {
        let arch = fcn();
        let s = samples();
        let pop: Vec<_> = (0..60)
            .map(|i| {
                let t = i as f64;
                p(&[
                    (0.3 * t).sin() * 2.0,
                    (0.7 * t).cos() * 2.0,
                    (1.1 * t).sin(),
                    (1.3 * t).cos(),
                ])
            })
            .collect();
        let (bins, pairs) = anchor_binning_traced(&arch, &pop, &s, 0.2, &pop[..5]).unwrap();
        assert_eq!(pairs.len(), bins.comparisons_pruned);
        for (i, j) in pairs {
            assert!(function_distance(&arch, &pop[i], &pop[j], &s).unwrap() >= 0.2);
        }
    }

    #[test]
    fn anchors_required() {
        let arch = fcn();
        assert!(anchor_binning(&arch, &[p(&[1., 1., 1., 1.])], &samples(), 0.1, &[]).is_err());
    }

    #[test]
    fn prefilter_examples() {
        assert_eq!(
            loss_prefilter(0.3, 0.3, 100, 1e-9).unwrap(),
            PrefilterVerdict::MustCompare
        );
        assert_eq!(
            loss_prefilter(0.0, 1.0, 100, 5.0).unwrap(),
            PrefilterVerdict::ProvablyFar
        );
        assert_eq!(
            loss_prefilter(0.0, 1.0, 100, 10.5).unwrap(),
            PrefilterVerdict::MustCompare
        );
        assert!(matches!(
            loss_prefilter(-0.1, 1.0, 10, 1.0),
            Err(Error::NegativeLoss(_))
        ));
    }

    #[test]
    fn classification_examples() {
        let arch = fcn();
        let s = samples();
        let theta = p(&[1., 1., 1., 1.]);
        let line: Vec<f64> = s.iter().map(|x| 2.0 * x[0]).collect();
        let targets = vec![
            Target::Model {
                arch: arch.clone(),
                theta: theta.clone(),
            },
            Target::Table(line),
        ];
        let got = classify_against_targets(&arch, &[theta], &targets, &s, 0.05).unwrap();
        assert_eq!(got, vec![vec![0], vec![]]);
        assert!(classify_against_targets(&arch, &[p(&[1.; 4])], &[Target::Table(vec![0.0; 3])], &s, 0.1).is_err());
        assert!(classify_against_targets(&arch, &[p(&[1.; 4])], &[], &s, 0.1).is_err());
    }

    #[test]
    fn target_with_other_hidden_width() {
        let arch = fcn();
        let wide = ModelArch::relu(&[1, 3, 1]).unwrap();
        // relu(x) + relu(x) + 0 * relu(-x) == 2 relu(x)
        let target = Target::Model {
            arch: wide,
            theta: p(&[1., 1., -1., 1., 1., 0.]),
        };
        let got = classify_against_targets(&arch, &[p(&[1., 1., 1., 1.])], &[target], &samples(), 1e-9).unwrap();
        assert_eq!(got, vec![vec![0]]);
    }
}
