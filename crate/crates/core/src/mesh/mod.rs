//! Global data model: connectivity, nodal fields, gather and scatter-add.

mod generate;
mod io;

use std::fmt;

use thiserror::Error;

use crate::reference::ElementResult;
use crate::scalar::Real;

pub use generate::{generate_synthetic_mesh, BenchmarkPreset};
pub use io::{
    decode_mesh, encode_mesh, load_mesh, read_outputs_csv, save_mesh, write_outputs_csv,
    OUTPUTS_CSV_HEADER,
};

pub const NUM_DIMS: usize = 3;
pub const NODES_PER_ELEM: usize = 4;
/// Velocity degrees of freedom per element (`NODES_PER_ELEM * NUM_DIMS`).
pub const ELEM_DOFS: usize = NODES_PER_ELEM * NUM_DIMS;

/// Determinant threshold below which an element counts as degenerate.
pub const DEGENERATE_DET: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("bad magic: expected \"AFM1\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(u64),
    #[error("invalid connectivity: element {elem} node {node} references point {point} (num_points = {num_points})")]
    InvalidConnectivity { elem: usize, node: usize, point: u64, num_points: usize },
    #[error("element {elem} repeats a node: {nodes:?}")]
    DuplicateNode { elem: usize, nodes: [u32; NODES_PER_ELEM] },
    #[error("element {elem} has non-positive volume (det J = {det:e})")]
    NonPositiveVolume { elem: usize, det: f64 },
    #[error("field arrays disagree on point count")]
    ShapeMismatch,
    #[error("no valid connectivity exists for {num_points} points (need at least 4)")]
    TooFewPoints { num_points: usize },
    #[error("mesh must contain at least one element")]
    NoElements,
    #[error("malformed outputs CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tetrahedral mesh with nodal coordinates and velocities.
///
/// `lnods` is element-major and 0-based; `coord` and `veloc` are stored
/// dimension-major (`coord[d][p]`).
#[derive(Clone, PartialEq)]
pub struct Mesh<T> {
    lnods: Vec<[u32; NODES_PER_ELEM]>,
    coord: [Vec<T>; NUM_DIMS],
    veloc: [Vec<T>; NUM_DIMS],
}

impl<T: Real> fmt::Debug for Mesh<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mesh")
            .field("num_elements", &self.num_elements())
            .field("num_points", &self.num_points())
            .finish()
    }
}

impl<T: Real> Mesh<T> {
    /// Builds a mesh, checking index range and per-element node distinctness.
    ///
    /// Orientation is not checked here; see [`Mesh::validate_orientation`].
    pub fn new(
        lnods: Vec<[u32; NODES_PER_ELEM]>,
        coord: [Vec<T>; NUM_DIMS],
        veloc: [Vec<T>; NUM_DIMS],
    ) -> Result<Self, MeshError> {
        let np = coord[0].len();
        if coord.iter().chain(veloc.iter()).any(|v| v.len() != np) {
            return Err(MeshError::ShapeMismatch);
        }
        for (e, nodes) in lnods.iter().enumerate() {
            for (i, &p) in nodes.iter().enumerate() {
                if p as usize >= np {
                    return Err(MeshError::InvalidConnectivity {
                        elem: e,
                        node: i,
                        point: p as u64,
                        num_points: np,
                    });
                }
                if nodes[..i].contains(&p) {
                    return Err(MeshError::DuplicateNode { elem: e, nodes: *nodes });
                }
            }
        }
        Ok(Mesh { lnods, coord, veloc })
    }

    pub fn num_elements(&self) -> usize {
        self.lnods.len()
    }

    pub fn num_points(&self) -> usize {
        self.coord[0].len()
    }

    pub fn lnods(&self) -> &[[u32; NODES_PER_ELEM]] {
        &self.lnods
    }

    pub fn coord(&self) -> &[Vec<T>; NUM_DIMS] {
        &self.coord
    }

    pub fn veloc(&self) -> &[Vec<T>; NUM_DIMS] {
        &self.veloc
    }

    /// Copies the per-element inputs out of the global arrays.
    ///
    /// Panics if `e` is out of range.
    pub fn gather_element(&self, e: usize) -> ElementInput<T> {
        assert!(e < self.num_elements(), "element {e} out of range");
        let nodes = &self.lnods[e];
        let mut elvel = [[T::zero(); NODES_PER_ELEM]; NUM_DIMS];
        let mut elcod = [[T::zero(); NODES_PER_ELEM]; NUM_DIMS];
        for (i, &p) in nodes.iter().enumerate() {
            let p = p as usize;
            for j in 0..NUM_DIMS {
                elvel[j][i] = self.veloc[j][p];
                elcod[j][i] = self.coord[j][p];
            }
        }
        ElementInput { elem_id: e, elvel, elcod }
    }

    /// Signed Jacobian determinant of element `e` (six times its volume).
    pub fn element_det(&self, e: usize) -> f64 {
        let input = self.gather_element(e);
        signed_det(&input.elcod)
    }

    /// Checks that every element has det J above [`DEGENERATE_DET`].
    pub fn validate_orientation(&self) -> Result<(), MeshError> {
        for e in 0..self.num_elements() {
            let det = self.element_det(e);
            if det.is_nan() || det <= DEGENERATE_DET {
                return Err(MeshError::NonPositiveVolume { elem: e, det });
            }
        }
        Ok(())
    }

    /// Converts the nodal fields to another scalar type.
    pub fn cast<U: Real>(&self) -> Mesh<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        Mesh {
            lnods: self.lnods.clone(),
            coord: [conv(&self.coord[0]), conv(&self.coord[1]), conv(&self.coord[2])],
            veloc: [conv(&self.veloc[0]), conv(&self.veloc[1]), conv(&self.veloc[2])],
        }
    }

    /// Replaces the velocity field (used by tests and scenario builders).
    pub fn with_veloc(mut self, veloc: [Vec<T>; NUM_DIMS]) -> Result<Self, MeshError> {
        if veloc.iter().any(|v| v.len() != self.num_points()) {
            return Err(MeshError::ShapeMismatch);
        }
        self.veloc = veloc;
        Ok(self)
    }
}

/// `det([x1-x0, x2-x0, x3-x0])` for columns of `elcod`.
pub fn signed_det<T: Real>(elcod: &[[T; NODES_PER_ELEM]; NUM_DIMS]) -> f64 {
    let mut j = [[0.0f64; 3]; 3];
    for (i, row) in j.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = elcod[i][k + 1].as_f64() - elcod[i][0].as_f64();
        }
    }
    j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
}

/// Per-element gathered inputs (`elvel[d][n]`, `elcod[d][n]`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementInput<T> {
    pub elem_id: usize,
    pub elvel: [[T; NODES_PER_ELEM]; NUM_DIMS],
    pub elcod: [[T; NODES_PER_ELEM]; NUM_DIMS],
}

/// Assembled nodal outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalOutputs<T> {
    pub rhsid: [Vec<T>; NUM_DIMS],
    pub dt_rho_nsi: Vec<T>,
    pub mass_rho_nsi: Vec<T>,
}

impl<T: Real> GlobalOutputs<T> {
    pub fn zeros(num_points: usize) -> Self {
        let z = vec![T::zero(); num_points];
        GlobalOutputs { rhsid: [z.clone(), z.clone(), z.clone()], dt_rho_nsi: z.clone(), mass_rho_nsi: z }
    }

    pub fn num_points(&self) -> usize {
        self.dt_rho_nsi.len()
    }

    /// The five output columns in CSV order.
    pub fn columns(&self) -> [&[T]; 5] {
        [&self.rhsid[0], &self.rhsid[1], &self.rhsid[2], &self.dt_rho_nsi, &self.mass_rho_nsi]
    }

    pub fn all_finite(&self) -> bool {
        self.columns().iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Bitwise equality, distinguishing `+0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.num_points() == other.num_points()
            && self
                .columns()
                .iter()
                .zip(other.columns().iter())
                .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits()))
    }
}

/// Adds one element's results into the global arrays.
pub fn scatter_add<T: Real>(outputs: &mut GlobalOutputs<T>, mesh: &Mesh<T>, result: &ElementResult<T>) {
    let nodes = &mesh.lnods()[result.elem_id];
    for (i, &p) in nodes.iter().enumerate() {
        let p = p as usize;
        for j in 0..NUM_DIMS {
            outputs.rhsid[j][p] += result.elrbu[j][i];
        }
        outputs.dt_rho_nsi[p] += result.eldtrho[i];
        outputs.mass_rho_nsi[p] += result.elmurho[i];
    }
}

/// Largest elementwise relative deviation `|a-b| / max(|a|,|b|)` over all
/// output entries (0 where both are exactly zero).
pub fn max_rel_deviation<T: Real>(a: &GlobalOutputs<T>, b: &GlobalOutputs<T>) -> f64 {
    assert_eq!(a.num_points(), b.num_points(), "outputs differ in size");
    a.columns()
        .iter()
        .zip(b.columns().iter())
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(x, y)| rel_dev(x.as_f64(), y.as_f64()))
        .fold(0.0, f64::max)
}

/// Relative deviation of two scalars; 0 when both are zero.
pub fn rel_dev(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let scale = a.abs().max(b.abs());
    if !scale.is_finite() {
        return f64::INFINITY;
    }
    (a - b).abs() / scale
}
