//! Exact single-nearest-neighbor search over a static cloud.
//!
//! Every Chamfer-style term in the crate goes through [`NearestNeighborIndex`].
//! Results are bit-identical to [`brute_force_nearest`]: both compare squared
//! distances computed by the same expression, and exact ties resolve to the
//! lowest point index.

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// Result of a nearest-neighbor query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Copy)]
struct Best {
    index: usize,
    dist_sq: f64,
}

impl Best {
    #[inline]
    fn offer(&mut self, index: usize, dist_sq: f64) {
        if dist_sq < self.dist_sq || (dist_sq == self.dist_sq && index < self.index) {
            self.index = index;
            self.dist_sq = dist_sq;
        }
    }
}

/// Balanced kd-tree with axis-median splits.
///
/// The tree is stored implicitly: the node covering `[lo, hi)` splits at
/// `mid = (lo + hi) / 2`, and `split_axis[mid]`, `split_value[mid]` record
/// its splitting plane.
#[derive(Clone, Debug)]
pub struct NearestNeighborIndex {
    points: Vec<Point3>,
    ids: Vec<u32>,
    split_axis: Vec<u8>,
    split_value: Vec<f64>,
}

impl NearestNeighborIndex {
    pub fn build(target: &PointCloud) -> Self {
        Self::from_points(target.points()).expect("PointCloud is never empty")
    }

    pub fn from_points(target: &[Point3]) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::EmptyCloud);
        }
        assert!(target.len() <= u32::MAX as usize);
        let mut order: Vec<u32> = (0..target.len() as u32).collect();
        let mut split_axis = vec![0u8; target.len()];
        let mut split_value = vec![0.0; target.len()];
        build_range(target, &mut order, 0, &mut split_axis, &mut split_value);
        let points = order.iter().map(|&i| target[i as usize]).collect();
        Ok(NearestNeighborIndex {
            points,
            ids: order,
            split_axis,
            split_value,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn query(&self, q: Point3) -> Nearest {
        let mut best = Best {
            index: usize::MAX,
            dist_sq: f64::INFINITY,
        };
        self.search(q, 0, self.points.len(), &mut best);
        Nearest {
            index: best.index,
            distance: best.dist_sq.sqrt(),
        }
    }

    fn search(&self, q: Point3, lo: usize, hi: usize, best: &mut Best) {
        if hi - lo <= LEAF_SIZE {
            for k in lo..hi {
                best.offer(self.ids[k] as usize, q.distance_squared(self.points[k]));
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = self.split_axis[mid] as usize;
        let diff = q.coord(axis) - self.split_value[mid];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid, hi))
        } else {
            ((mid, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        // `<=` keeps equal-distance candidates reachable for the tie rule.
        if diff * diff <= best.dist_sq {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build_range(
    points: &[Point3],
    order: &mut [u32],
    offset: usize,
    split_axis: &mut [u8],
    split_value: &mut [f64],
) {
    let n = order.len();
    if n <= LEAF_SIZE {
        return;
    }
    let axis = widest_axis(points, order);
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize]
            .coord(axis)
            .total_cmp(&points[b as usize].coord(axis))
            .then(a.cmp(&b))
    });
    split_axis[offset + mid] = axis as u8;
    split_value[offset + mid] = points[order[mid] as usize].coord(axis);
    let (left, right) = order.split_at_mut(mid);
    build_range(points, left, offset, split_axis, split_value);
    build_range(points, right, offset + mid, split_axis, split_value);
}

fn widest_axis(points: &[Point3], order: &[u32]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order {
        let c = points[i as usize].to_array();
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let spread = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut axis = 0;
    for a in 1..3 {
        if spread[a] > spread[axis] {
            axis = a;
        }
    }
    axis
}

pub fn build_index(target: &PointCloud) -> NearestNeighborIndex {
    NearestNeighborIndex::build(target)
}

pub fn query_nearest(index: &NearestNeighborIndex, q: Point3) -> Nearest {
    index.query(q)
}

/// Exhaustive scan with the same tie rule as the kd-tree.
pub fn brute_force_nearest(target: &[Point3], q: Point3) -> Result<Nearest> {
    if target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut best = Best {
        index: usize::MAX,
        dist_sq: f64::INFINITY,
    };
    for (i, &p) in target.iter().enumerate() {
        best.offer(i, q.distance_squared(p));
    }
    Ok(Nearest {
        index: best.index,
        distance: best.dist_sq.sqrt(),
    })
}
