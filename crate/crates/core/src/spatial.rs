//! Uniform-grid nearest-neighbour index over a static point set.
//!
//! Queries return neighbours ordered by `(distance, index)`, which makes the
//! results identical to an exhaustive scan using the same ordering.

use crate::math::Vec3;

#[derive(Debug, Clone)]
pub struct UniformGrid {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [i64; 3],
    /// CSR offsets into `order`, one slot per cell plus one.
    starts: Vec<u32>,
    order: Vec<u32>,
}

impl UniformGrid {
    pub fn new(points: &[Vec3]) -> Self {
        let n = points.len().max(1);
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if points.is_empty() {
            lo = Vec3::zeros();
            hi = Vec3::zeros();
        }
        let extent = hi - lo;
        let max_extent = extent.max();
        // roughly two points per cell on surfaces, bounded grid size
        let mut cell = if max_extent > 0.0 {
            let area_like =
                (extent.x * extent.y + extent.y * extent.z + extent.x * extent.z).max(max_extent * max_extent * 1e-6);
            (2.0 * area_like / n as f64).sqrt()
        } else {
            1.0
        };
        cell = cell.max(max_extent / 256.0).max(1e-12);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as i64 + 1).max(1));
        let cells = (dims[0] * dims[1] * dims[2]) as usize;

        let mut grid = UniformGrid {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            starts: vec![0; cells + 1],
            order: Vec::with_capacity(points.len()),
        };
        let ids: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        for &c in &ids {
            grid.starts[c + 1] += 1;
        }
        for c in 0..cells {
            grid.starts[c + 1] += grid.starts[c];
        }
        let mut fill = grid.starts.clone();
        grid.order = vec![0; points.len()];
        for (i, &c) in ids.iter().enumerate() {
            grid.order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn cell_of(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            if c.is_finite() {
                c as i64
            } else {
                0
            }
        })
    }

    fn clamp_cell(&self, c: [i64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|a| c[a].clamp(0, self.dims[a] - 1))
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        let c = self.clamp_cell(c);
        ((c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]) as usize
    }

    /// The `k` nearest points to `q` as `(index, distance)`, nearest first.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return best;
        }
        let home = self.cell_of(q);
        let max_ring = (0..3)
            .map(|a| (home[a]).abs().max((self.dims[a] - 1 - home[a]).abs()))
            .max()
            .unwrap_or(0);
        let worse = |a: &(usize, f64), b: &(usize, f64)| a.1 > b.1 || (a.1 == b.1 && a.0 > b.0);
        for r in 0..=max_ring {
            self.visit_ring(home, r, |i| {
                let d = (self.points[i] - q).norm();
                let cand = (i, d);
                if best.len() < k || worse(best.last().unwrap(), &cand) {
                    let pos = best.partition_point(|b| !worse(b, &cand));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            });
            // every point beyond ring r is at least r·cell away
            if best.len() == k && best[k - 1].1 < r as f64 * self.cell * (1.0 - 1e-9) {
                break;
            }
        }
        best
    }

    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    fn visit_ring(&self, home: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        let lo = [0, 1, 2].map(|a| (home[a] - r).max(0));
        let hi = [0, 1, 2].map(|a| (home[a] + r).min(self.dims[a] - 1));
        if (0..3).any(|a| lo[a] > hi[a]) {
            return;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let on_shell = (x - home[0]).abs() == r || (y - home[1]).abs() == r || (z - home[2]).abs() == r;
                    if !on_shell {
                        continue;
                    }
                    let c = ((z * self.dims[1] + y) * self.dims[0] + x) as usize;
                    for &i in &self.order[self.starts[c] as usize..self.starts[c + 1] as usize] {
                        f(i as usize);
                    }
                }
            }
        }
    }
}

/// Exhaustive `k`-nearest search with the same `(distance, index)` ordering.
pub fn brute_force_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, (p - q).norm())).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let n = rng.gen_range(1..300);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-0.1..0.1),
                    )
                })
                .collect();
            let grid = UniformGrid::new(&pts);
            for _ in 0..50 {
                let q = Vec3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                );
                let k = rng.gen_range(1..6);
                assert_eq!(grid.knn(&q, k), brute_force_knn(&pts, &q, k), "trial {trial}");
            }
        }
    }

    #[test]
    fn duplicate_points_tie_on_index() {
        let pts = vec![Vec3::x(); 4];
        let g = UniformGrid::new(&pts);
        let r = g.knn(&Vec3::zeros(), 2);
        assert_eq!(r, vec![(0, 1.0), (1, 1.0)]);
    }

    #[test]
    fn empty_grid() {
        let g = UniformGrid::new(&[]);
        assert!(g.nearest(&Vec3::zeros()).is_none());
    }
}
