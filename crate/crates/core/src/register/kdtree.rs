use crate::scalar::Scalar;

/// Static 2-d tree over a point set for nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KdTree<T> {
    points: Vec<[T; 2]>,
    /// Point indices arranged so each subtree is a contiguous slice whose
    /// median element is the splitting node.
    order: Vec<usize>,
}

impl<T: Scalar> KdTree<T> {
    pub fn new(points: &[[T; 2]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        KdTree {
            points: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point; ties go to the lower index.
    pub fn nearest(&self, q: [T; 2]) -> Option<(usize, T)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, T::infinity());
        self.search(q, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn search(&self, q: [T; 2], lo: usize, hi: usize, depth: usize, best: &mut (usize, T)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = depth % 2;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build<T: Scalar>(points: &[[T; 2]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng as _;

    #[test]
    fn matches_brute_force() {
        let mut rng = rng_for(5, 0);
        let pts: Vec<[f64; 2]> = (0..500)
            .map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0])
            .collect();
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q = [rng.random::<f64>() * 12.0 - 1.0, rng.random::<f64>() * 12.0 - 1.0];
            let brute = pts
                .iter()
                .map(|p| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest(q).unwrap().1, brute);
        }
    }
}
