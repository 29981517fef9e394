//! SGD search for parameters functionally equivalent to a reference.
//!
//! Each start is drawn uniformly from `init_range^d` and minimizes the
//! output-matching loss J with plain minibatch SGD. Minibatches are taken
//! without replacement from a per-epoch shuffle; after every full epoch J is
//! re-evaluated on the whole sample set and the start is accepted once it
//! falls below `accept_threshold`. Every start owns a ChaCha stream keyed by
//! `(seed, start index)`, so results do not depend on how starts are
//! scheduled across threads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelArch, Objective, ParamVector, SampleSet};
use crate::scalar::{axpy, dot, norm, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub num_starts: usize,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub accept_threshold: f64,
    pub init_range: [f64; 2],
    pub seed: u64,
}

impl Default for SearchConfig {
    /// Settings used for the four-parameter network.
    fn default() -> Self {
        Self {
            num_starts: 20,
            max_steps: 30_000,
            learning_rate: 0.015,
            batch_size: 256,
            accept_threshold: 1e-3,
            init_range: [-2.0, 2.0],
            seed: 10,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, num_samples: usize) -> Result<()> {
        if self.num_starts == 0 {
            return Err(Error::config("search.num_starts", "must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("search.max_steps", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("search.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > num_samples {
            return Err(Error::config(
                "search.batch_size",
                format!("must be in 1..={num_samples}, got {}", self.batch_size),
            ));
        }
        if self.accept_threshold.is_nan() || self.accept_threshold <= 0.0 {
            return Err(Error::config("search.accept_threshold", "must be positive"));
        }
        let [lo, hi] = self.init_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config(
                "search.init_range",
                format!("need lo < hi, got [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }

    fn rng_for(&self, start: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(start as u64);
        rng
    }
}

/// An accepted start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Found<T> {
    pub theta: ParamVector<T>,
    pub loss: T,
    pub steps: usize,
    pub start: usize,
}

/// A start that never got below the threshold (or diverged).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejected<T> {
    pub start: usize,
    pub loss: T,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<T> {
    /// Sorted by loss ascending, ties by start index.
    pub found: Vec<Found<T>>,
    pub rejected: Vec<Rejected<T>>,
}

impl<T> SearchResult<T> {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

enum Outcome<T> {
    Accepted(Found<T>),
    Rejected(Rejected<T>),
}

pub fn sgd_search<T: Scalar>(
    arch: &ModelArch,
    theta_ref: &ParamVector<T>,
    samples: &SampleSet<T>,
    cfg: &SearchConfig,
) -> Result<SearchResult<T>> {
    cfg.validate(samples.len())?;
    let d = arch.param_count();
    let [lo, hi] = cfg.init_range;
    let starts = (0..cfg.num_starts)
        .map(|s| {
            let mut rng = cfg.rng_for(s);
            let v = (0..d).map(|_| T::of(rng.gen_range(lo..hi))).collect();
            ParamVector::new(v)
        })
        .collect::<Result<Vec<_>>>()?;
    run(arch, theta_ref, samples, cfg, &starts, true)
}

/// Like [`sgd_search`] but with caller-chosen starting points; start `i`
/// uses the minibatch stream of index `i`. `cfg.num_starts` is ignored.
pub fn sgd_search_from<T: Scalar>(
    arch: &ModelArch,
    theta_ref: &ParamVector<T>,
    samples: &SampleSet<T>,
    cfg: &SearchConfig,
    starts: &[ParamVector<T>],
) -> Result<SearchResult<T>> {
    cfg.validate(samples.len())?;
    for s in starts {
        arch.check_params("start point", s.as_slice())?;
    }
    run(arch, theta_ref, samples, cfg, starts, false)
}

fn run<T: Scalar>(
    arch: &ModelArch,
    theta_ref: &ParamVector<T>,
    samples: &SampleSet<T>,
    cfg: &SearchConfig,
    starts: &[ParamVector<T>],
    drawn: bool,
) -> Result<SearchResult<T>> {
    let obj = Objective::new(arch, theta_ref, samples)?;
    let outcomes: Vec<Outcome<T>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let mut rng = cfg.rng_for(i);
            if drawn {
                // Skip the draws that produced the start point.
                for _ in 0..start.len() {
                    let _: f64 = rng.gen_range(cfg.init_range[0]..cfg.init_range[1]);
                }
            }
            trajectory(&obj, cfg, i, start, &mut rng)
        })
        .collect();

    let mut found = Vec::new();
    let mut rejected = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Accepted(f) => found.push(f),
            Outcome::Rejected(r) => rejected.push(r),
        }
    }
    found.sort_by(|a, b| a.loss.partial_cmp(&b.loss).unwrap().then(a.start.cmp(&b.start)));
    Ok(SearchResult { found, rejected })
}

fn trajectory<T: Scalar>(
    obj: &Objective<'_, T>,
    cfg: &SearchConfig,
    start_index: usize,
    start: &ParamVector<T>,
    rng: &mut ChaCha8Rng,
) -> Outcome<T> {
    let eps = T::of(cfg.accept_threshold);
    let lr = T::of(cfg.learning_rate);
    let mut scratch = obj.scratch();
    let mut theta = start.as_slice().to_vec();
    let mut grad = vec![T::zero(); theta.len()];
    let mut order: Vec<usize> = (0..obj.samples().len()).collect();

    let mut steps = 0;
    let mut loss = obj.loss_with(&theta, &mut scratch);
    while loss.is_finite() && loss >= eps && steps < cfg.max_steps {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            obj.grad_with(&theta, batch, &mut scratch, &mut grad);
            axpy(-lr, &grad, &mut theta);
            steps += 1;
            if steps == cfg.max_steps {
                break;
            }
        }
        loss = if theta.iter().all(|v| v.is_finite()) {
            obj.loss_with(&theta, &mut scratch)
        } else {
            T::infinity()
        };
    }

    if loss.is_finite() && loss < eps {
        Outcome::Accepted(Found {
            theta: ParamVector::from_vec_unchecked(theta),
            loss,
            steps,
            start: start_index,
        })
    } else {
        Outcome::Rejected(Rejected {
            start: start_index,
            loss,
            steps,
        })
    }
}

/// Greedily picks accepted parameters (in the result's ascending-loss
/// order) whose offset from `base` is not in the span of the offsets
/// picked so far, with residual norm above `tol`.
pub fn collect_independent<T: Scalar>(
    base: &ParamVector<T>,
    result: &SearchResult<T>,
    m_needed: usize,
    tol: T,
) -> Result<Vec<ParamVector<T>>> {
    let candidates: Vec<&ParamVector<T>> = result.found.iter().map(|f| &f.theta).collect();
    select_independent(base, &candidates, m_needed, tol)
}

pub fn select_independent<T: Scalar>(
    base: &ParamVector<T>,
    candidates: &[&ParamVector<T>],
    m_needed: usize,
    tol: T,
) -> Result<Vec<ParamVector<T>>> {
    if m_needed == 0 {
        return Err(Error::config("m_needed", "must be at least 1"));
    }
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut picked = Vec::new();
    for cand in candidates {
        if cand.len() != base.len() {
            return Err(Error::DimensionMismatch {
                what: "candidate vector",
                expected: base.len(),
                actual: cand.len(),
            });
        }
        let mut r: Vec<T> = cand
            .as_slice()
            .iter()
            .zip(base.as_slice())
            .map(|(&a, &b)| a - b)
            .collect();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &r);
                axpy(-c, q, &mut r);
            }
        }
        let n = norm(&r);
        if n > tol {
            r.iter_mut().for_each(|v| *v /= n);
            basis.push(r);
            picked.push((*cand).clone());
            if picked.len() == m_needed {
                return Ok(picked);
            }
        }
    }
    Err(Error::InsufficientIndependent {
        needed: m_needed,
        found: picked.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{aux_loss, SampleSpec};

    fn fcn() -> ModelArch {
        ModelArch::relu(&[1, 2, 1]).unwrap()
    }

    fn p(v: &[f64]) -> ParamVector<f64> {
        ParamVector::from_f64(v).unwrap()
    }

    fn samples(count: usize) -> SampleSet<f64> {
        SampleSet::generate(SampleSpec {
            seed: 10,
            count,
            input_dim: 1,
            lo: -1.0,
            hi: 1.0,
        })
        .unwrap()
    }

    fn small_cfg() -> SearchConfig {
        SearchConfig {
            num_starts: 6,
            max_steps: 3000,
            batch_size: 64,
            ..SearchConfig::default()
        }
    }

    fn result_of(points: Vec<(ParamVector<f64>, f64)>) -> SearchResult<f64> {
        SearchResult {
            found: points
                .into_iter()
                .enumerate()
                .map(|(i, (theta, loss))| Found {
                    theta,
                    loss,
                    steps: 0,
                    start: i,
                })
                .collect(),
            rejected: vec![],
        }
    }

    #[test]
    fn reference_as_start_is_accepted_immediately() {
        let arch = fcn();
        let s = samples(512);
        let r = p(&[1., 1., 1., 1.]);
        let res = sgd_search_from(&arch, &r, &s, &small_cfg(), std::slice::from_ref(&r)).unwrap();
        assert_eq!(res.found.len(), 1);
        assert_eq!(res.found[0].steps, 0);
        assert_eq!(res.found[0].loss, 0.0);
    }

    #[test]
    fn config_validation() {
        let s = 100;
        assert!(SearchConfig {
            num_starts: 0,
            ..small_cfg()
        }
        .validate(s)
        .is_err());
        assert!(SearchConfig {
            max_steps: 0,
            ..small_cfg()
        }
        .validate(s)
        .is_err());
        assert!(SearchConfig {
            learning_rate: 0.0,
            ..small_cfg()
        }
        .validate(s)
        .is_err());
        assert!(SearchConfig {
            batch_size: 101,
            ..small_cfg()
        }
        .validate(s)
        .is_err());
        assert!(SearchConfig {
            init_range: [1.0, 1.0],
            ..small_cfg()
        }
        .validate(s)
        .is_err());
        assert!(small_cfg().validate(s).is_ok());
    }

    #[test]
    fn search_is_deterministic_sorted_and_sound() {
        let arch = fcn();
        let s = samples(1024);
        let r = p(&[1., 1., 1., 1.]);
        let cfg = small_cfg();
        let a = sgd_search(&arch, &r, &s, &cfg).unwrap();
        let b = sgd_search(&arch, &r, &s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.found.len() + a.rejected_count(), cfg.num_starts);
        assert!(a.found.windows(2).all(|w| w[0].loss <= w[1].loss));
        for f in &a.found {
            let j = aux_loss(&arch, &r, &f.theta, &s).unwrap();
            assert_eq!(j, f.loss);
            assert!(j < cfg.accept_threshold);
        }
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let arch = fcn();
        let s = samples(512);
        let r = p(&[1., 1., 1., 1.]);
        let cfg = small_cfg();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sgd_search(&arch, &r, &s, &cfg).unwrap());
        let b = four.install(|| sgd_search(&arch, &r, &s, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn collinear_differences_are_insufficient() {
        let base = p(&[1., 1., 1., 1.]);
        let res = result_of(vec![(p(&[2., 1., 1., 1.]), 0.0), (p(&[3., 1., 1., 1.]), 0.0)]);
        let err = collect_independent(&base, &res, 2, 1e-6).unwrap_err();
        assert!(matches!(err, Error::InsufficientIndependent { needed: 2, found: 1 }));
    }

    #[test]
    fn orthogonal_differences_are_selected() {
        let base = p(&[1., 1., 1., 1.]);
        let res = result_of(vec![(p(&[2., 1., 1., 1.]), 0.0), (p(&[1., 2., 1., 1.]), 0.0)]);
        let got = collect_independent(&base, &res, 2, 1e-6).unwrap();
        assert_eq!(got, vec![p(&[2., 1., 1., 1.]), p(&[1., 2., 1., 1.])]);
    }

    #[test]
    fn picks_lowest_loss_independent_vectors() {
        // Offsets: e1, 2e1 (dependent), e2, e1+e2 (dependent), e3.
        let base = p(&[0., 0., 0., 0.]);
        let res = result_of(vec![
            (p(&[1., 0., 0., 0.]), 1e-6),
            (p(&[2., 0., 0., 0.]), 2e-6),
            (p(&[0., 1., 0., 0.]), 3e-6),
            (p(&[1., 1., 0., 0.]), 4e-6),
            (p(&[0., 0., 1., 0.]), 5e-6),
        ]);
        let got = collect_independent(&base, &res, 3, 1e-6).unwrap();
        assert_eq!(
            got,
            vec![p(&[1., 0., 0., 0.]), p(&[0., 1., 0., 0.]), p(&[0., 0., 1., 0.])]
        );
    }
}
