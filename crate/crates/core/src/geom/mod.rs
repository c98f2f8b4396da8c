//! Meshes, rigid transforms, and exact closest-point queries.
//!
//! Everything downstream (fitting, registration, the objective) works on the
//! types defined here. Units are millimeters throughout.

mod closest;
mod io;
mod mesh;
mod transform;

pub use closest::{closest_point_brute_force, ClosestPointResult, SpatialIndex};
pub use io::{load_mesh, load_obj, load_ply, save_obj, save_ply};
pub use mesh::TriangleMesh;
pub use transform::RigidTransform;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum GeomError {
    #[error("empty mesh")]
    EmptyMesh,
    #[error("triangle {triangle} references vertex {index} out of range ({count} vertices)")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("degenerate (zero-area) triangle {triangle}")]
    DegenerateTriangle { triangle: usize },
    #[error("isolated vertex {vertex} has no incident triangle")]
    IsolatedVertex { vertex: usize },
    #[error("rotation matrix is not orthonormal with det +1")]
    InvalidRotation,
    #[error("non-triangle face with {count} vertices at line {line}")]
    NonTriangleFace { count: usize, line: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
