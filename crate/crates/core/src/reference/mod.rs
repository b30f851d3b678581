//! Sequential per-element assembly. Every other execution mode is checked
//! against [`assemble_all`].

mod quadrature;
mod stages;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{scatter_add, ElementInput, GlobalOutputs, Mesh, ELEM_DOFS, NODES_PER_ELEM, NUM_DIMS};
use crate::scalar::Real;

pub use quadrature::{Quadrature, FOUR_POINT_A, FOUR_POINT_B};
pub use stages::*;

/// Physical constants used by the stage formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysParams<T> {
    pub rho: T,
    pub mu: T,
    pub dt: T,
    pub grav: [T; NUM_DIMS],
    pub c1: T,
    pub c2: T,
}

impl<T: Real> Default for PhysParams<T> {
    fn default() -> Self {
        PhysParams {
            rho: T::one(),
            mu: T::lit(0.01),
            dt: T::lit(0.05),
            grav: [T::zero(), T::zero(), T::lit(-9.81)],
            c1: T::lit(4.0),
            c2: T::lit(2.0),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid physical parameter {name} = {value} (requires {rule})")]
pub struct ParamError {
    pub name: &'static str,
    pub value: f64,
    pub rule: &'static str,
}

impl<T: Real> PhysParams<T> {
    pub fn validate(&self) -> Result<(), ParamError> {
        let checks = [
            ("rho", self.rho, "> 0", self.rho > T::zero()),
            ("mu", self.mu, ">= 0", self.mu >= T::zero()),
            ("dt", self.dt, "> 0", self.dt > T::zero()),
            ("c1", self.c1, "> 0", self.c1 > T::zero()),
            ("c2", self.c2, ">= 0", self.c2 >= T::zero()),
        ];
        for (name, value, rule, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(ParamError { name, value: value.as_f64(), rule });
            }
        }
        if let Some(g) = self.grav.iter().find(|g| !g.is_finite()) {
            return Err(ParamError { name: "grav", value: g.as_f64(), rule: "finite" });
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> PhysParams<U> {
        let c = |v: T| U::lit(v.as_f64());
        PhysParams {
            rho: c(self.rho),
            mu: c(self.mu),
            dt: c(self.dt),
            grav: self.grav.map(c),
            c1: c(self.c1),
            c2: c(self.c2),
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum AssemblyError {
    #[error("element {elem_id} is degenerate (det J = {det:e})")]
    DegenerateElement { elem_id: usize, det: f64 },
}

/// Per-element outputs that leave the engine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementResult<T> {
    pub elem_id: usize,
    pub elrbu: [[T; NODES_PER_ELEM]; NUM_DIMS],
    pub eldtrho: [T; NODES_PER_ELEM],
    pub elmurho: [T; NODES_PER_ELEM],
}

impl<T: Real> ElementResult<T> {
    pub fn bit_eq(&self, other: &Self) -> bool {
        let bits = |r: &Self| {
            r.elrbu.iter().flatten().chain(&r.eldtrho).chain(&r.elmurho).map(|v| v.as_f64().to_bits()).collect::<Vec<_>>()
        };
        self.elem_id == other.elem_id && bits(self) == bits(other)
    }

    /// Largest elementwise relative deviation over all output values.
    pub fn max_rel_deviation(&self, other: &Self) -> f64 {
        let a = self.elrbu.iter().flatten().chain(&self.eldtrho).chain(&self.elmurho);
        let b = other.elrbu.iter().flatten().chain(&other.eldtrho).chain(&other.elmurho);
        a.zip(b).map(|(x, y)| crate::mesh::rel_dev(x.as_f64(), y.as_f64())).fold(0.0, f64::max)
    }
}

/// Gauss-point data produced by the first three stages.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussData<T> {
    pub geometry: Geometry<T>,
    pub values: Vec<GaussPointValues<T>>,
    pub tau: Vec<T>,
}

/// Element-level work arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementWork<T> {
    pub matrices: Vec<GaussMatrices<T>>,
    pub elauu: Box<[[T; ELEM_DOFS]; ELEM_DOFS]>,
    pub elrbu: [[T; NODES_PER_ELEM]; NUM_DIMS],
    pub eldtrho: [T; NODES_PER_ELEM],
    pub elmurho: [T; NODES_PER_ELEM],
}

/// Runs all stages on one element and returns the intermediate state.
///
/// The convective stage uses the per-Gauss streamed form followed by the
/// accumulation stage, the same order the dataflow engine executes.
pub fn assemble_element_work<T: Real>(
    input: &ElementInput<T>,
    phys: &PhysParams<T>,
    quad: &Quadrature<T>,
) -> Result<(GaussData<T>, ElementWork<T>), AssemblyError> {
    let geometry = cartesian_derivatives(&input.elcod, quad)
        .map_err(|d| AssemblyError::DegenerateElement { elem_id: input.elem_id, det: d.det })?;
    let values = gauss_point_values(&input.elvel, &geometry, quad, phys);
    let stab = tau_and_tim(&geometry, &values, quad, phys);
    let matrices = element_matrices(&geometry, &values, phys);
    let gauss = GaussData { geometry, values, tau: stab.tau };
    let partials = convective_term_and_rhs_streamed(&gauss, &matrices, quad, phys);
    let visc = viscous_coefficients(&gauss.geometry, &matrices, phys);
    let total = add_stage(&partials);
    let mut elauu = total.elauu;
    let mut elrbu = total.elrbu;
    apply_viscous_and_fold(&mut elauu, &mut elrbu, &visc, &input.elvel);
    let work = ElementWork { matrices, elauu, elrbu, eldtrho: stab.eldtrho, elmurho: stab.elmurho };
    Ok((gauss, work))
}

pub fn assemble_element<T: Real>(
    input: &ElementInput<T>,
    phys: &PhysParams<T>,
    quad: &Quadrature<T>,
) -> Result<ElementResult<T>, AssemblyError> {
    let (_, work) = assemble_element_work(input, phys, quad)?;
    Ok(ElementResult { elem_id: input.elem_id, elrbu: work.elrbu, eldtrho: work.eldtrho, elmurho: work.elmurho })
}

/// Gather, assemble and scatter every element in ascending order.
pub fn assemble_all<T: Real>(
    mesh: &Mesh<T>,
    phys: &PhysParams<T>,
    quad: &Quadrature<T>,
) -> Result<GlobalOutputs<T>, AssemblyError> {
    let mut out = GlobalOutputs::zeros(mesh.num_points());
    for e in 0..mesh.num_elements() {
        let r = assemble_element(&mesh.gather_element(e), phys, quad)?;
        scatter_add(&mut out, mesh, &r);
    }
    Ok(out)
}
