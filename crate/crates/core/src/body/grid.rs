use crate::math::Vec3;

use super::point_bounds;

const MAX_DIM: usize = 64;

/// Uniform-grid accelerator for k-nearest-neighbor queries over a point set.
#[derive(Clone, Debug)]
pub struct VertexGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: points of cell `c` are `items[starts[c]..starts[c + 1]]`.
    starts: Vec<usize>,
    items: Vec<usize>,
    points: Vec<Vec3>,
}

impl VertexGrid {
    pub fn build(points: &[Vec3]) -> Self {
        if points.is_empty() {
            return Self { origin: Vec3::zeros(), cell: 1.0, dims: [1, 1, 1], starts: vec![0, 0], items: vec![], points: vec![] };
        }
        let (lo, hi) = point_bounds(points);
        let extent = (hi - lo).map(|e| e.max(1e-6));
        // about two points per occupied cell
        let volume = extent.x * extent.y * extent.z;
        let mut cell = (2.0 * volume / points.len() as f64).cbrt();
        let max_extent = extent.max();
        cell = cell.max(max_extent / MAX_DIM as f64);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).min(MAX_DIM));
        let mut grid = Self { origin: lo, cell, dims, starts: vec![], items: vec![], points: points.to_vec() };
        let ncells = dims[0] * dims[1] * dims[2];
        let cell_of: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_coords(p))).collect();
        let mut counts = vec![0usize; ncells + 1];
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for c in 0..ncells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cell_coords(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            c.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// The `k` nearest points as `(index, distance)` sorted by distance.
    /// Points tied with the k-th distance are all included.
    pub fn nearest(&self, p: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let center = self.cell_coords(p);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut found: Vec<(usize, f64)> = Vec::with_capacity(4 * k + 8);
        let mut bound = f64::INFINITY;
        for ring in 0..=max_ring {
            self.visit_shell(center, ring, |i| {
                let d = (self.points[i] - p).norm();
                if d <= bound {
                    found.push((i, d));
                }
            });
            if found.len() >= k {
                bound = kth_smallest(&mut found, k);
                found.retain(|&(_, d)| d <= bound);
                if bound < self.unvisited_distance(p, center, ring) {
                    break;
                }
            }
        }
        finish(found, k)
    }

    /// Lower bound on the distance from `p` to any cell outside the cube of
    /// radius `ring` around `c`. Faces flush with the grid border have nothing beyond.
    fn unvisited_distance(&self, p: &Vec3, c: [usize; 3], ring: usize) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..3 {
            if c[a] >= ring + 1 {
                best = best.min(p[a] - (self.origin[a] + (c[a] - ring) as f64 * self.cell));
            }
            if c[a] + ring + 1 < self.dims[a] {
                best = best.min(self.origin[a] + (c[a] + ring + 1) as f64 * self.cell - p[a]);
            }
        }
        best
    }

    /// Exhaustive search with the same tie rule as [`VertexGrid::nearest`].
    pub fn nearest_brute_force(&self, p: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let found = self.points.iter().enumerate().map(|(i, q)| (i, (q - p).norm())).collect();
        finish(found, k)
    }

    /// Calls `f` on every point in cells at Chebyshev distance exactly `ring` from `c`.
    fn visit_shell(&self, c: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let lo = |a: usize| (c[a] as isize - r).max(0);
        let hi = |a: usize| (c[a] as isize + r).min(self.dims[a] as isize - 1);
        let mut visit = |x: isize, y: isize, z: isize| {
            let cell = self.flat([x as usize, y as usize, z as usize]);
            for &i in &self.items[self.starts[cell]..self.starts[cell + 1]] {
                f(i);
            }
        };
        let (cx, cy, cz) = (c[0] as isize, c[1] as isize, c[2] as isize);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                if (z - cz).abs() == r || (y - cy).abs() == r {
                    for x in lo(0)..=hi(0) {
                        visit(x, y, z);
                    }
                } else {
                    // interior row: only its two end cells lie on the shell
                    if cx - r >= 0 {
                        visit(cx - r, y, z);
                    }
                    if r > 0 && cx + r < self.dims[0] as isize {
                        visit(cx + r, y, z);
                    }
                }
            }
        }
    }
}

fn kth_smallest(found: &mut [(usize, f64)], k: usize) -> f64 {
    found.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1));
    found[k - 1].1
}

fn finish(mut found: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    if found.len() > k {
        let kth = found[k - 1].1;
        let keep = found.iter().take_while(|(_, d)| *d <= kth).count();
        found.truncate(keep);
    }
    found
}
