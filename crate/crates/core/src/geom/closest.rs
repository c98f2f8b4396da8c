use super::{GeomError, TriangleMesh, Vec3};

/// Globally nearest point on a mesh surface for one query.
#[derive(Clone, Copy, Debug)]
pub struct ClosestPointResult {
    pub point: Vec3,
    /// Barycentric interpolation of the vertex normals at `point`, renormalized.
    pub normal: Vec3,
    pub distance: f64,
    pub triangle_id: usize,
}

/// Axis-aligned bounding-box tree over triangles for exact closest-point
/// queries.
///
/// Pruning only discards boxes strictly farther than the incumbent, and ties
/// resolve to the lowest triangle id, so query results are identical to a
/// brute-force scan over all triangles. The tree owns the mesh and is
/// immutable after construction; concurrent read-only queries are safe.
pub struct SpatialIndex {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    /// Triangle ids, permuted so each leaf covers a contiguous range.
    order: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn of_triangle(v: &[Vec3; 3]) -> Self {
        Self {
            lo: v[0].inf(&v[1]).inf(&v[2]),
            hi: v[0].sup(&v[1]).sup(&v[2]),
        }
    }

    fn union(&self, other: &Self) -> Self {
        Self {
            lo: self.lo.inf(&other.lo),
            hi: self.hi.sup(&other.hi),
        }
    }

    fn dist_sq(&self, p: &Vec3) -> f64 {
        let clamped = Vec3::new(
            p.x.clamp(self.lo.x, self.hi.x),
            p.y.clamp(self.lo.y, self.hi.y),
            p.z.clamp(self.lo.z, self.hi.z),
        );
        (p - clamped).norm_squared()
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    aabb: Aabb,
    kind: NodeKind,
}

#[derive(Clone, Copy, Debug)]
enum NodeKind {
    Leaf { start: usize, count: usize },
    Internal { left: usize, right: usize },
}

const LEAF_SIZE: usize = 4;

impl SpatialIndex {
    pub fn build(mesh: TriangleMesh) -> Result<Self, GeomError> {
        if mesh.triangles.is_empty() {
            return Err(GeomError::EmptyMesh);
        }
        let centroids: Vec<Vec3> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.triangle_vertices(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut order: Vec<usize> = (0..mesh.triangles.len()).collect();
        let mut nodes = Vec::new();
        let n = order.len();
        build_node(&mesh, &centroids, &mut order, 0, n, &mut nodes);
        Ok(Self { mesh, nodes, order })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// Exact globally nearest point on the mesh.
    pub fn closest_point(&self, query: &Vec3) -> ClosestPointResult {
        let mut best = Candidate {
            dist_sq: f64::INFINITY,
            triangle_id: usize::MAX,
            point: Vec3::zeros(),
            bary: [0.0; 3],
        };
        self.visit(0, query, &mut best);
        finish(&self.mesh, &best, query)
    }

    fn visit(&self, node: usize, query: &Vec3, best: &mut Candidate) {
        match self.nodes[node].kind {
            NodeKind::Leaf { start, count } => {
                for &t in &self.order[start..start + count] {
                    let verts = self.mesh.triangle_vertices(t);
                    consider(t, &verts, query, best);
                }
            }
            NodeKind::Internal { left, right } => {
                let dl = self.nodes[left].aabb.dist_sq(query);
                let dr = self.nodes[right].aabb.dist_sq(query);
                let (first, d_first, second, d_second) = if dl <= dr {
                    (left, dl, right, dr)
                } else {
                    (right, dr, left, dl)
                };
                if d_first <= best.dist_sq {
                    self.visit(first, query, best);
                }
                if d_second <= best.dist_sq {
                    self.visit(second, query, best);
                }
            }
        }
    }
}

struct Candidate {
    dist_sq: f64,
    triangle_id: usize,
    point: Vec3,
    bary: [f64; 3],
}

fn consider(t: usize, verts: &[Vec3; 3], query: &Vec3, best: &mut Candidate) {
    let (point, bary) = closest_point_on_triangle(query, &verts[0], &verts[1], &verts[2]);
    let d = (query - point).norm_squared();
    if d < best.dist_sq || (d == best.dist_sq && t < best.triangle_id) {
        *best = Candidate {
            dist_sq: d,
            triangle_id: t,
            point,
            bary,
        };
    }
}

fn finish(mesh: &TriangleMesh, best: &Candidate, query: &Vec3) -> ClosestPointResult {
    let [a, b, c] = mesh.triangles[best.triangle_id];
    let n = mesh.vertex_normals[a] * best.bary[0]
        + mesh.vertex_normals[b] * best.bary[1]
        + mesh.vertex_normals[c] * best.bary[2];
    let len = n.norm();
    // Interpolated normals can cancel at non-manifold junctions; fall back
    // to the face normal there.
    let normal = if len > 1e-12 {
        n / len
    } else {
        mesh.face_normal(best.triangle_id)
    };
    ClosestPointResult {
        point: best.point,
        normal,
        distance: (query - best.point).norm(),
        triangle_id: best.triangle_id,
    }
}

/// Reference linear scan with the same tie-break rule as the tree.
pub fn closest_point_brute_force(mesh: &TriangleMesh, query: &Vec3) -> ClosestPointResult {
    let mut best = Candidate {
        dist_sq: f64::INFINITY,
        triangle_id: usize::MAX,
        point: Vec3::zeros(),
        bary: [0.0; 3],
    };
    for t in 0..mesh.triangles.len() {
        let verts = mesh.triangle_vertices(t);
        consider(t, &verts, query, &mut best);
    }
    finish(mesh, &best, query)
}

fn build_node(
    mesh: &TriangleMesh,
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    count: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let slice = start..start + count;
    let aabb = order[slice.clone()]
        .iter()
        .map(|&t| Aabb::of_triangle(&mesh.triangle_vertices(t)))
        .reduce(|a, b| a.union(&b))
        .expect("non-empty node");
    let id = nodes.len();
    nodes.push(Node {
        aabb,
        kind: NodeKind::Leaf { start, count },
    });
    if count <= LEAF_SIZE {
        return id;
    }

    let lo = order[slice.clone()]
        .iter()
        .map(|&t| centroids[t])
        .reduce(|a, b| a.inf(&b))
        .unwrap();
    let hi = order[slice.clone()]
        .iter()
        .map(|&t| centroids[t])
        .reduce(|a, b| a.sup(&b))
        .unwrap();
    let extent = hi - lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = count / 2;
    order[slice].select_nth_unstable_by(mid, |&a, &b| {
        centroids[a][axis]
            .partial_cmp(&centroids[b][axis])
            .expect("finite centroid")
    });
    let left = build_node(mesh, centroids, order, start, mid, nodes);
    let right = build_node(mesh, centroids, order, start + mid, count - mid, nodes);
    nodes[id].kind = NodeKind::Internal { left, right };
    id
}

/// Closest point on triangle `(a, b, c)` to `p` with its barycentric
/// coordinates, by classifying `p` against the vertex/edge/face regions.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;

    fn unit_quad() -> TriangleMesh {
        let vertices = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        TriangleMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
    }

    /// Triangle soup with no shared vertices; every triangle gets a
    /// guaranteed non-degenerate shape by construction.
    fn random_soup(rng: &mut impl Rng, count: usize) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        while triangles.len() < count {
            let a = Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            );
            let b = a + Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let c = a + Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            if (b - a).cross(&(c - a)).norm() < 1e-3 {
                continue;
            }
            let i = vertices.len();
            vertices.extend_from_slice(&[a, b, c]);
            triangles.push([i, i + 1, i + 2]);
        }
        TriangleMesh::new(vertices, triangles).unwrap()
    }

    #[test]
    fn perpendicular_projection_on_quad() {
        let index = SpatialIndex::build(unit_quad()).unwrap();
        let hit = index.closest_point(&Vec3::new(0.5, 0.5, 1.0));
        assert_relative_eq!(hit.point, Vec3::new(0.5, 0.5, 0.0), epsilon = 1e-12);
        assert_relative_eq!(hit.distance, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mesh_vertex_query_has_zero_distance() {
        let index = SpatialIndex::build(unit_quad()).unwrap();
        let hit = index.closest_point(&Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(hit.distance, 0.0);
        assert_eq!(hit.point, Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn on_surface_query_returns_itself() {
        let index = SpatialIndex::build(unit_quad()).unwrap();
        let q = Vec3::new(0.25, 0.7, 0.0);
        let hit = index.closest_point(&q);
        assert!(hit.distance < 1e-12);
        assert_relative_eq!(hit.point, q, epsilon = 1e-12);
    }

    #[test]
    fn interpolated_normal_on_flat_mesh_is_face_normal() {
        let index = SpatialIndex::build(unit_quad()).unwrap();
        let hit = index.closest_point(&Vec3::new(0.6, 0.3, 2.0));
        assert_relative_eq!(hit.normal, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        assert_relative_eq!(
            hit.normal,
            index.mesh().face_normal(hit.triangle_id),
            epsilon = 1e-12
        );
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let mesh = unit_quad();
        let empty = TriangleMesh {
            vertices: mesh.vertices.clone(),
            triangles: vec![],
            vertex_normals: mesh.vertex_normals.clone(),
        };
        assert!(matches!(
            SpatialIndex::build(empty),
            Err(GeomError::EmptyMesh)
        ));
    }

    #[test]
    fn index_matches_brute_force_on_random_mesh() {
        let mut rng = StdRng::seed_from_u64(7);
        let mesh = random_soup(&mut rng, 500);
        let index = SpatialIndex::build(mesh.clone()).unwrap();
        for _ in 0..200 {
            let q = Vec3::new(
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
            );
            let tree = index.closest_point(&q);
            let brute = closest_point_brute_force(&mesh, &q);
            assert_eq!(tree.triangle_id, brute.triangle_id);
            assert_eq!(tree.distance, brute.distance);
            assert_eq!(tree.point, brute.point);
        }
    }

    #[test]
    fn distance_field_matches_point_norm() {
        let mut rng = StdRng::seed_from_u64(11);
        let mesh = random_soup(&mut rng, 60);
        let index = SpatialIndex::build(mesh).unwrap();
        for _ in 0..50 {
            let q = Vec3::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
            );
            let hit = index.closest_point(&q);
            assert!((hit.distance - (q - hit.point).norm()).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn tree_equals_brute_force(seed in 0u64..1000, qx in -60.0f64..60.0, qy in -60.0f64..60.0, qz in -60.0f64..60.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let mesh = random_soup(&mut rng, 40);
            let index = SpatialIndex::build(mesh.clone()).unwrap();
            let q = Vec3::new(qx, qy, qz);
            let tree = index.closest_point(&q);
            let brute = closest_point_brute_force(&mesh, &q);
            prop_assert_eq!(tree.triangle_id, brute.triangle_id);
            prop_assert_eq!(tree.distance, brute.distance);
        }
    }
}
