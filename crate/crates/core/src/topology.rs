//! Connected components of an epsilon set on its grid, and the location
//! of marker parameters relative to it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperplane::EpsilonSet;
use crate::model::ParamVector;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    /// Neighbors differ by one step along exactly one axis (2m neighbors).
    #[default]
    Orthogonal,
    /// Neighbors differ by at most one step along every axis (3^m - 1).
    Moore,
}

impl Adjacency {
    fn offsets(self, dim: usize) -> Vec<Vec<isize>> {
        match self {
            Adjacency::Orthogonal => (0..dim)
                .flat_map(|a| {
                    [-1, 1].into_iter().map(move |s| {
                        let mut o = vec![0; dim];
                        o[a] = s;
                        o
                    })
                })
                .collect(),
            Adjacency::Moore => {
                let total = 3usize.pow(dim as u32);
                (0..total)
                    .map(|mut k| {
                        let mut o = vec![0isize; dim];
                        for slot in o.iter_mut() {
                            *slot = (k % 3) as isize - 1;
                            k /= 3;
                        }
                        o
                    })
                    .filter(|o| o.iter().any(|&v| v != 0))
                    .collect()
            }
        }
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component<T> {
    pub size: usize,
    /// Smallest flat grid index in the component.
    pub first_member: usize,
    pub bbox_index_lo: Vec<usize>,
    pub bbox_index_hi: Vec<usize>,
    pub bbox_lo: Vec<T>,
    pub bbox_hi: Vec<T>,
    pub min_loss: T,
    pub min_loss_index: Vec<usize>,
    pub min_loss_coeffs: Vec<T>,
    /// Positions in the marker list whose snapped grid point lies here.
    pub markers: Vec<usize>,
    /// Grid points inside the bounding box that are not in the epsilon
    /// set. A rough hole indicator only.
    pub bbox_non_members: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport<T> {
    pub epsilon: T,
    pub adjacency: Adjacency,
    pub num_members: usize,
    pub num_components: usize,
    pub components: Vec<Component<T>>,
    pub bbox_non_members_note: String,
    /// Component label of each epsilon-set member, aligned with its
    /// ascending flat indices.
    #[serde(skip)]
    pub labels: Vec<usize>,
    #[serde(skip)]
    members: Vec<usize>,
}

const BBOX_NOTE: &str = "heuristic: bbox_non_members counts non-member grid points inside each \
component's bounding box; it is a crude proxy for holes, not a homology computation";

impl<T: Scalar> ComponentReport<T> {
    /// Component holding grid point `flat`, if it is a member.
    pub fn component_of(&self, flat: usize) -> Option<usize> {
        self.members.binary_search(&flat).ok().map(|p| self.labels[p])
    }

    /// Records which component each located marker fell into.
    pub fn attach_markers(&mut self, markers: &mut [MarkerLocation<T>]) {
        for c in &mut self.components {
            c.markers.clear();
        }
        for (i, m) in markers.iter_mut().enumerate() {
            m.component = self.component_of(m.flat_index);
            if let Some(c) = m.component {
                self.components[c].markers.push(i);
            }
        }
    }
}

/// Labels the epsilon set's grid points by connectivity. Components are
/// numbered in order of their smallest member index.
pub fn connected_components<T: Scalar>(eset: &EpsilonSet<'_, T>, adjacency: Adjacency) -> ComponentReport<T> {
    let spec = &eset.evaluation.spec;
    let n = spec.points_per_axis as isize;
    let members = &eset.members;
    let offsets = adjacency.offsets(spec.dim);
    let mut dsu = DisjointSet::new(members.len());

    let mut neighbor = vec![0isize; spec.dim];
    for (pos, &flat) in members.iter().enumerate() {
        let idx = spec.unravel(flat);
        for off in &offsets {
            let mut inside = true;
            for ((nb, &i), &o) in neighbor.iter_mut().zip(&idx).zip(off) {
                *nb = i as isize + o;
                inside &= (0..n).contains(nb);
            }
            if !inside {
                continue;
            }
            let nflat = neighbor
                .iter()
                .fold(0usize, |acc, &v| acc * spec.points_per_axis + v as usize);
            if nflat > flat {
                if let Ok(npos) = members.binary_search(&nflat) {
                    dsu.union(pos, npos);
                }
            }
        }
    }

    let mut root_label = vec![usize::MAX; members.len()];
    let mut labels = vec![0; members.len()];
    let mut components: Vec<Component<T>> = Vec::new();
    for (pos, &flat) in members.iter().enumerate() {
        let root = dsu.find(pos);
        let idx = spec.unravel(flat);
        let loss = eset.evaluation.losses[flat];
        if root_label[root] == usize::MAX {
            root_label[root] = components.len();
            components.push(Component {
                size: 0,
                first_member: flat,
                bbox_index_lo: idx.clone(),
                bbox_index_hi: idx.clone(),
                bbox_lo: vec![],
                bbox_hi: vec![],
                min_loss: loss,
                min_loss_index: idx.clone(),
                min_loss_coeffs: vec![],
                markers: vec![],
                bbox_non_members: 0,
            });
        }
        let label = root_label[root];
        labels[pos] = label;
        let c = &mut components[label];
        c.size += 1;
        for (a, &i) in idx.iter().enumerate() {
            c.bbox_index_lo[a] = c.bbox_index_lo[a].min(i);
            c.bbox_index_hi[a] = c.bbox_index_hi[a].max(i);
        }
        if loss < c.min_loss {
            c.min_loss = loss;
            c.min_loss_index = idx;
        }
    }

    for c in &mut components {
        c.bbox_lo = c.bbox_index_lo.iter().map(|&i| spec.axis_value(i)).collect();
        c.bbox_hi = c.bbox_index_hi.iter().map(|&i| spec.axis_value(i)).collect();
        c.min_loss_coeffs = c.min_loss_index.iter().map(|&i| spec.axis_value(i)).collect();
        let volume: usize = c
            .bbox_index_lo
            .iter()
            .zip(&c.bbox_index_hi)
            .map(|(&lo, &hi)| hi - lo + 1)
            .product();
        let inside = members
            .iter()
            .filter(|&&flat| {
                spec.unravel(flat)
                    .iter()
                    .zip(c.bbox_index_lo.iter().zip(&c.bbox_index_hi))
                    .all(|(&i, (&lo, &hi))| lo <= i && i <= hi)
            })
            .count();
        c.bbox_non_members = volume - inside;
    }

    ComponentReport {
        epsilon: eset.epsilon,
        adjacency,
        num_members: members.len(),
        num_components: components.len(),
        components,
        bbox_non_members_note: BBOX_NOTE.to_string(),
        labels,
        members: members.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerLocation<T> {
    pub marker: usize,
    /// Exact plane coefficients of the projection.
    pub coeffs: Vec<T>,
    /// Norm of the component orthogonal to the plane.
    pub residual: T,
    pub off_plane: bool,
    pub grid_index: Vec<usize>,
    pub flat_index: usize,
    /// Loss at the snapped grid point.
    pub grid_loss: T,
    pub in_set: bool,
    pub component: Option<usize>,
}

/// Projects each marker onto the plane, snaps to the nearest grid point and
/// reports that point's membership. `off_plane` is set when the residual
/// exceeds `tol`.
pub fn locate_markers<T: Scalar>(
    eset: &EpsilonSet<'_, T>,
    markers: &[ParamVector<T>],
    tol: T,
) -> Result<Vec<MarkerLocation<T>>> {
    if markers.is_empty() {
        return Err(Error::config("markers", "need at least one marker"));
    }
    let eval = eset.evaluation;
    let spec = &eval.spec;
    markers
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (coeffs, residual) = eval.plane.project(m)?;
            let grid_index: Vec<usize> = coeffs.iter().map(|c| spec.snap(c.as_f64())).collect();
            let flat_index = spec.ravel(&grid_index);
            Ok(MarkerLocation {
                marker: i,
                coeffs,
                residual,
                off_plane: residual > tol,
                grid_index,
                flat_index,
                grid_loss: eval.losses[flat_index],
                in_set: eset.contains(flat_index),
                component: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperplane::{epsilon_filter, gram_schmidt, GridEvaluation, GridSpec};

    /// Evaluation with hand-placed losses: 0 where `members` says so, 1 elsewhere.
    fn synthetic(dim: usize, n: usize, members: &[Vec<usize>]) -> GridEvaluation<f64> {
        let spec = GridSpec::new(dim, -1.0, 1.0, n).unwrap();
        let mut losses = vec![1.0; spec.len()];
        for m in members {
            losses[spec.ravel(m)] = 0.0;
        }
        let origin = ParamVector::new(vec![0.0; dim]).unwrap();
        let pts: Vec<_> = (0..dim)
            .map(|a| {
                let mut v = vec![0.0; dim];
                v[a] = 1.0;
                ParamVector::new(v).unwrap()
            })
            .collect();
        GridEvaluation {
            spec,
            plane: gram_schmidt(&origin, &pts).unwrap(),
            losses,
            samples_used: None,
        }
    }

    #[test]
    fn single_member() {
        let eval = synthetic(2, 5, &[vec![2, 3]]);
        let eset = epsilon_filter(&eval, 0.5).unwrap();
        let r = connected_components(&eset, Adjacency::Orthogonal);
        assert_eq!(r.num_components, 1);
        assert_eq!(r.components[0].size, 1);
        assert_eq!(r.components[0].bbox_non_members, 0);
    }

    #[test]
    fn opposite_corners_are_separate() {
        let eval = synthetic(2, 5, &[vec![0, 0], vec![4, 4]]);
        let eset = epsilon_filter(&eval, 0.5).unwrap();
        assert_eq!(connected_components(&eset, Adjacency::Orthogonal).num_components, 2);
        assert_eq!(connected_components(&eset, Adjacency::Moore).num_components, 2);
    }

    #[test]
    fn diagonal_touch_depends_on_adjacency() {
        let eval = synthetic(2, 4, &[vec![1, 1], vec![2, 2]]);
        let eset = epsilon_filter(&eval, 0.5).unwrap();
        assert_eq!(connected_components(&eset, Adjacency::Orthogonal).num_components, 2);
        assert_eq!(connected_components(&eset, Adjacency::Moore).num_components, 1);
    }

    #[test]
    fn ring_reports_enclosed_hole() {
        let ring: Vec<Vec<usize>> = (0..3)
            .flat_map(|i| (0..3).map(move |j| vec![i + 1, j + 1]))
            .filter(|v| v != &vec![2, 2])
            .collect();
        let eval = synthetic(2, 5, &ring);
        let eset = epsilon_filter(&eval, 0.5).unwrap();
        let r = connected_components(&eset, Adjacency::Orthogonal);
        assert_eq!(r.num_components, 1);
        assert_eq!(r.components[0].size, 8);
        assert_eq!(r.components[0].bbox_non_members, 1);
        assert_eq!(r.components[0].bbox_lo, vec![-0.5, -0.5]);
        assert_eq!(r.components[0].bbox_hi, vec![0.5, 0.5]);
    }

    #[test]
    fn components_ordered_by_smallest_member_and_partition() {
        let members = vec![vec![0, 4], vec![1, 4], vec![0, 0], vec![3, 1], vec![3, 2], vec![4, 4]];
        let eval = synthetic(2, 5, &members);
        let eset = epsilon_filter(&eval, 0.5).unwrap();
        let r = connected_components(&eset, Adjacency::Orthogonal);
        let firsts: Vec<usize> = r.components.iter().map(|c| c.first_member).collect();
        assert!(firsts.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(r.components.iter().map(|c| c.size).sum::<usize>(), eset.len());
        assert_eq!(r.num_components, 4);
    }

    #[test]
    fn empty_set_has_no_components() {
        let eval = synthetic(3, 4, &[]);
        let eset = epsilon_filter(&eval, 0.5).unwrap();
        let r = connected_components(&eset, Adjacency::Moore);
        assert_eq!(r.num_components, 0);
    }

    #[test]
    fn markers_snap_and_report_residual() {
        let eval = synthetic(2, 5, &[vec![1, 3]]);
        let eset = epsilon_filter(&eval, 0.5).unwrap();
        let on = eval.plane.embed(&[-0.5, 0.5]).unwrap();
        let near = ParamVector::new(vec![-0.45, 0.6]).unwrap();
        let elsewhere = ParamVector::new(vec![0.9, 0.9]).unwrap();
        let locs = locate_markers(&eset, &[on, near, elsewhere], 1e-9).unwrap();
        assert_eq!(locs[0].grid_index, vec![1, 3]);
        assert!(locs[0].in_set && locs[1].in_set && !locs[2].in_set);
        assert!(locs.iter().all(|l| !l.off_plane));
        assert!(locate_markers(&eset, &[], 1e-9).is_err());
        assert!(locate_markers(&eset, &[ParamVector::new(vec![0.0; 3]).unwrap()], 1e-9).is_err());
    }

    #[test]
    fn off_plane_marker_judged_at_projection() {
        // 1-D line in 3-D parameter space.
        let spec = GridSpec::new(1, -1.0, 1.0, 3).unwrap();
        let origin = ParamVector::new(vec![0.0; 3]).unwrap();
        let plane = gram_schmidt(&origin, &[ParamVector::new(vec![1.0, 0.0, 0.0]).unwrap()]).unwrap();
        let eval = GridEvaluation {
            spec,
            plane,
            losses: vec![1.0, 0.0, 1.0],
            samples_used: None,
        };
        let eset = epsilon_filter(&eval, 0.5).unwrap();
        let far = ParamVector::new(vec![0.1, 30.0, 40.0]).unwrap();
        let mut locs = locate_markers(&eset, &[far], 1e-6).unwrap();
        assert!(locs[0].off_plane);
        assert_eq!(locs[0].residual, 50.0);
        assert!(locs[0].in_set);
        let mut report = connected_components(&eset, Adjacency::Orthogonal);
        report.attach_markers(&mut locs);
        assert_eq!(locs[0].component, Some(0));
        assert_eq!(report.components[0].markers, vec![0]);
    }
}
