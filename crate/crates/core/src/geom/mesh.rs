use super::{GeomError, Vec3};

/// Triangle mesh with per-vertex normals.
///
/// Normals are always recomputed from the geometry as the area-weighted
/// average of incident face normals, so their orientation follows the
/// triangle winding. Construction rejects out-of-range indices, zero-area
/// triangles and isolated vertices, which keeps every downstream query
/// well defined.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vec3>,
}

const DEGENERATE_AREA: f64 = 1e-12;

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, GeomError> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(GeomError::EmptyMesh);
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= vertices.len() {
                    return Err(GeomError::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        count: vertices.len(),
                    });
                }
            }
        }
        let vertex_normals = compute_vertex_normals(&vertices, &triangles)?;
        Ok(Self {
            vertices,
            triangles,
            vertex_normals,
        })
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unit normal of one face, following the winding order.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle_vertices(t);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Axis-aligned bounds of all vertices as (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    /// Rigidly moved copy; windings are untouched so normals rotate with
    /// the geometry.
    pub fn transformed(&self, tf: &super::RigidTransform) -> Self {
        Self {
            vertices: tf.apply_points(&self.vertices),
            triangles: self.triangles.clone(),
            vertex_normals: self
                .vertex_normals
                .iter()
                .map(|n| tf.apply_normal(n))
                .collect(),
        }
    }
}

/// Area-weighted vertex normals: unnormalized face cross products (whose
/// magnitude is twice the face area) accumulated per vertex, then normalized.
pub fn compute_vertex_normals(
    vertices: &[Vec3],
    triangles: &[[usize; 3]],
) -> Result<Vec<Vec3>, GeomError> {
    let mut accum = vec![Vec3::zeros(); vertices.len()];
    for (t, &[a, b, c]) in triangles.iter().enumerate() {
        let cross = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        if cross.norm() <= DEGENERATE_AREA {
            return Err(GeomError::DegenerateTriangle { triangle: t });
        }
        accum[a] += cross;
        accum[b] += cross;
        accum[c] += cross;
    }
    accum
        .into_iter()
        .enumerate()
        .map(|(v, n)| {
            let len = n.norm();
            if len <= DEGENERATE_AREA {
                Err(GeomError::IsolatedVertex { vertex: v })
            } else {
                Ok(n / len)
            }
        })
        .collect()
}
