//! Finite-element matrix assembly for incompressible flow, executed as a
//! sequential oracle, a staged dataflow pipeline, and a chunked host/device
//! streaming emulation, together with a cycle-level cost model.

pub mod dataflow;
pub mod mesh;
pub mod perfmodel;
pub mod reference;
pub mod scalar;
pub mod streaming;

pub use mesh::{ElementInput, GlobalOutputs, Mesh, ELEM_DOFS, NODES_PER_ELEM, NUM_DIMS};
pub use reference::{assemble_all, assemble_element, AssemblyError, ElementResult, PhysParams, Quadrature};
pub use scalar::{Counted, Real};

pub type Mesh64 = Mesh<f64>;
pub type Mesh32 = Mesh<f32>;
pub type PhysParams64 = PhysParams<f64>;
pub type Quadrature64 = Quadrature<f64>;
pub type GlobalOutputs64 = GlobalOutputs<f64>;
pub type ElementInput64 = ElementInput<f64>;
pub type ElementResult64 = ElementResult<f64>;
