use std::collections::HashMap;

use crate::error::{bad_data, invalid, Result};
use crate::geometry::PartBox;
use crate::math::Vec3;

pub const DEFAULT_GRID_RESOLUTION: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Feature {
    Face,
    Edge(usize, usize),
    Vertex(usize),
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0, 1));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

/// Unsigned distance from `p` to triangle `abc`.
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (p - closest_on_triangle(p, a, b, c).0).norm()
}

fn box_distance_sq(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    (0..3)
        .map(|a| {
            let d = (lo[a] - p[a]).max(p[a] - hi[a]).max(0.0);
            d * d
        })
        .sum()
}

#[derive(Clone, Debug)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    /// Triangles `start..end` in tree order.
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// One closed, edge-manifold piece of the template with its own bounding-volume tree.
#[derive(Clone, Debug)]
struct Component {
    lo: Vec3,
    hi: Vec3,
    tris: Vec<[usize; 3]>,
    face_normals: Vec<Vec3>,
    edge_normals: HashMap<(usize, usize), Vec3>,
    nodes: Vec<BvhNode>,
}

const LEAF_SIZE: usize = 4;

impl Component {
    fn build(vertices: &[Vec3], tris: Vec<[usize; 3]>, vertex_normals: &mut [Vec3]) -> Result<Self> {
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_normals: HashMap<(usize, usize), Vec3> = HashMap::new();
        let mut face_normals = Vec::with_capacity(tris.len());
        for t in &tris {
            let [a, b, c] = t.map(|i| vertices[i]);
            let n = (b - a).cross(&(c - a));
            if n.norm() == 0.0 {
                bad_data!("template has a degenerate triangle {t:?}");
            }
            let n = n.normalize();
            face_normals.push(n);
            for e in 0..3 {
                let (i, j) = (t[e], t[(e + 1) % 3]);
                let key = (i.min(j), i.max(j));
                *edge_count.entry(key).or_insert(0) += 1;
                *edge_normals.entry(key).or_insert_with(Vec3::zeros) += n;
                // angle-weighted vertex pseudonormal
                let k = t[(e + 2) % 3];
                let (u, v) = (vertices[j] - vertices[i], vertices[k] - vertices[i]);
                let angle = (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos();
                vertex_normals[i] += n * angle;
            }
        }
        if let Some((e, c)) = edge_count.iter().find(|(_, &c)| c != 2) {
            bad_data!("template is not watertight: edge {e:?} has {c} faces");
        }
        let (lo, hi) = crate::body::point_bounds(&tris.iter().flat_map(|t| t.map(|i| vertices[i])).collect::<Vec<_>>());
        let mut comp = Self { lo, hi, tris, face_normals, edge_normals, nodes: Vec::new() };
        comp.build_bvh(vertices);
        Ok(comp)
    }

    fn build_bvh(&mut self, vertices: &[Vec3]) {
        let centroids: Vec<Vec3> =
            self.tris.iter().map(|t| (vertices[t[0]] + vertices[t[1]] + vertices[t[2]]) / 3.0).collect();
        let mut order: Vec<usize> = (0..self.tris.len()).collect();
        let mut nodes = Vec::new();
        fn recurse(
            nodes: &mut Vec<BvhNode>,
            order: &mut [usize],
            offset: usize,
            tris: &[[usize; 3]],
            centroids: &[Vec3],
            vertices: &[Vec3],
        ) -> usize {
            let (lo, hi) = crate::body::point_bounds(
                &order.iter().flat_map(|&t| tris[t].map(|i| vertices[i])).collect::<Vec<_>>(),
            );
            let id = nodes.len();
            nodes.push(BvhNode { lo, hi, start: offset, end: offset + order.len(), children: None });
            if order.len() > LEAF_SIZE {
                let (clo, chi) = crate::body::point_bounds(&order.iter().map(|&t| centroids[t]).collect::<Vec<_>>());
                let axis = (chi - clo).imax();
                let mid = order.len() / 2;
                order.select_nth_unstable_by(mid, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
                let (l, r) = order.split_at_mut(mid);
                let left = recurse(nodes, l, offset, tris, centroids, vertices);
                let right = recurse(nodes, r, offset + mid, tris, centroids, vertices);
                nodes[id].children = Some((left, right));
            }
            id
        }
        recurse(&mut nodes, &mut order, 0, &self.tris, &centroids, vertices);
        self.tris = order.iter().map(|&t| self.tris[t]).collect();
        self.face_normals = order.iter().map(|&t| self.face_normals[t]).collect();
        self.nodes = nodes;
    }

    /// Nearest point on this component: (distance, triangle, feature, closest point).
    fn nearest(&self, p: &Vec3, vertices: &[Vec3]) -> (f64, usize, Feature, Vec3) {
        let mut best = (f64::INFINITY, 0, Feature::Face, Vec3::zeros());
        let mut best_sq = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if box_distance_sq(p, &node.lo, &node.hi) >= best_sq {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    let dl = box_distance_sq(p, &self.nodes[l].lo, &self.nodes[l].hi);
                    let dr = box_distance_sq(p, &self.nodes[r].lo, &self.nodes[r].hi);
                    // visit the nearer child first
                    if dl < dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
                None => {
                    for t in node.start..node.end {
                        let [a, b, c] = self.tris[t].map(|i| vertices[i]);
                        let (q, f) = closest_on_triangle(p, &a, &b, &c);
                        let d2 = (p - q).norm_squared();
                        if d2 < best_sq {
                            best_sq = d2;
                            best = (d2.sqrt(), t, f, q);
                        }
                    }
                }
            }
        }
        best
    }

    fn signed(&self, p: &Vec3, vertices: &[Vec3], vertex_normals: &[Vec3]) -> f64 {
        let (d, t, feature, q) = self.nearest(p, vertices);
        let tri = self.tris[t];
        let normal = match feature {
            Feature::Face => self.face_normals[t],
            Feature::Edge(i, j) => {
                let (a, b) = (tri[i], tri[j]);
                self.edge_normals[&(a.min(b), a.max(b))]
            }
            Feature::Vertex(i) => vertex_normals[tri[i]],
        };
        if (p - q).dot(&normal) < 0.0 {
            -d
        } else {
            d
        }
    }
}

/// Exact signed distance to a triangle mesh made of closed pieces. Overlapping
/// pieces are combined as a solid union (minimum of the per-piece distances).
#[derive(Clone, Debug)]
pub struct MeshSdf {
    vertices: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    components: Vec<Component>,
}

impl MeshSdf {
    pub fn new(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Self> {
        if faces.is_empty() {
            invalid!("template mesh has no faces");
        }
        if faces.iter().flatten().any(|&i| i >= vertices.len()) {
            bad_data!("face index out of range");
        }
        // union-find over vertices shared by faces
        let mut parent: Vec<usize> = (0..vertices.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for f in faces {
            let r0 = find(&mut parent, f[0]);
            for &v in &f[1..] {
                let r = find(&mut parent, v);
                parent[r] = r0;
            }
        }
        let mut groups: Vec<(usize, Vec<[usize; 3]>)> = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        for f in faces {
            let root = find(&mut parent, f[0]);
            let s = *slot.entry(root).or_insert_with(|| {
                groups.push((root, Vec::new()));
                groups.len() - 1
            });
            groups[s].1.push(*f);
        }
        let mut vertex_normals = vec![Vec3::zeros(); vertices.len()];
        let components = groups
            .into_iter()
            .map(|(_, tris)| Component::build(vertices, tris, &mut vertex_normals))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { vertices: vertices.to_vec(), vertex_normals, components })
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Signed distance, negative inside.
    pub fn eval(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for c in &self.components {
            // outside this piece's bounds its distance is at least the box distance
            if box_distance_sq(p, &c.lo, &c.hi).sqrt() >= best {
                continue;
            }
            best = best.min(c.signed(p, &self.vertices, &self.vertex_normals));
        }
        best
    }

    /// Unsigned distance to the nearest triangle of any piece.
    pub fn unsigned(&self, p: &Vec3) -> f64 {
        self.components.iter().map(|c| c.nearest(p, &self.vertices).0).fold(f64::INFINITY, f64::min)
    }
}

/// Regular grid of SDF samples with trilinear lookup.
#[derive(Clone, Debug)]
pub struct SdfGrid {
    origin: Vec3,
    step: Vec3,
    dims: [usize; 3],
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn build(sdf: &MeshSdf, bounds: &PartBox, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            invalid!("grid resolution {resolution} must be at least 2");
        }
        let dims = [resolution; 3];
        let step = bounds.extent() / (resolution - 1) as f64;
        let mut values = Vec::with_capacity(resolution.pow(3));
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    let p = bounds.min + step.component_mul(&Vec3::new(i as f64, j as f64, k as f64));
                    values.push(sdf.eval(&p));
                }
            }
        }
        Ok(Self { origin: bounds.min, step, dims, values })
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.step.norm()
    }

    fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= self.origin[a] + self.step[a] * (self.dims[a] - 1) as f64)
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.dims[1] + j) * self.dims[0] + i]
    }

    /// Trilinear interpolation; `None` outside the grid.
    pub fn sample(&self, p: &Vec3) -> Option<f64> {
        if !self.contains(p) {
            return None;
        }
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.step[a];
            let i = (u.floor() as usize).min(self.dims[a] - 2);
            idx[a] = i;
            frac[a] = u - i as f64;
        }
        let [i, j, k] = idx;
        let [fx, fy, fz] = frac;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(self.at(i, j, k), self.at(i + 1, j, k), fx);
        let c10 = lerp(self.at(i, j + 1, k), self.at(i + 1, j + 1, k), fx);
        let c01 = lerp(self.at(i, j, k + 1), self.at(i + 1, j, k + 1), fx);
        let c11 = lerp(self.at(i, j + 1, k + 1), self.at(i + 1, j + 1, k + 1), fx);
        Some(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz))
    }
}

/// Template geometry in canonical space: exact mesh distance plus an optional
/// cached grid that is used wherever it covers the query.
#[derive(Clone, Debug)]
pub struct TemplateSdf {
    pub exact: MeshSdf,
    pub grid: Option<SdfGrid>,
}

impl TemplateSdf {
    pub fn new(vertices: &[Vec3], faces: &[[usize; 3]], bounds: &PartBox, resolution: Option<usize>) -> Result<Self> {
        let exact = MeshSdf::new(vertices, faces)?;
        let grid = resolution.map(|r| SdfGrid::build(&exact, bounds, r)).transpose()?;
        Ok(Self { exact, grid })
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        self.grid.as_ref().and_then(|g| g.sample(p)).unwrap_or_else(|| self.exact.eval(p))
    }
}
