//! FLOP accounting of one element, stage by stage.

use serde::Serialize;

use crate::mesh::{generate_synthetic_mesh, scatter_add, GlobalOutputs};
use crate::reference::{
    add_stage, apply_viscous_and_fold, cartesian_derivatives, convective_term_and_rhs_streamed, element_matrices,
    gauss_point_values, tau_and_tim, viscous_coefficients, ElementResult, GaussData, PhysParams, Quadrature,
};
use crate::scalar::{take_flops, Counted};

/// Per-element FLOP counts of the original kernel routines.
pub const KERNEL_FLOPS: [(&str, u64); 8] = [
    ("calculate_transients", 0),
    ("calculate_cartesian_derivatives", 664),
    ("calculate_gauss_point_values", 400),
    ("calculate_tau_and_tim", 76),
    ("calculate_element_matricies", 416),
    ("calculate_convective_term_and_RHS", 3936),
    ("calculate_viscous_term", 1540),
    ("perform_assembly_in_global_system", 20),
];

pub const KERNEL_FLOPS_TOTAL: u64 = 7052;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopStage {
    pub routine: &'static str,
    pub measured: u64,
    pub kernel: u64,
}

impl FlopStage {
    pub fn delta(&self) -> i64 {
        self.measured as i64 - self.kernel as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopReport {
    pub num_gauss: usize,
    pub stages: Vec<FlopStage>,
    pub measured_total: u64,
    pub kernel_total: u64,
}

impl FlopReport {
    pub fn stage(&self, routine: &str) -> Option<&FlopStage> {
        self.stages.iter().find(|s| s.routine == routine)
    }

    pub fn delta(&self) -> i64 {
        self.measured_total as i64 - self.kernel_total as i64
    }
}

/// Runs one element through the oracle with counted arithmetic
/// (`+ - * /`, `sqrt`, `cbrt` each one FLOP) and reports the count of each
/// routine beside the original kernel's figures.
pub fn count_flops(phys: &PhysParams<f64>, quad: &Quadrature<f64>) -> FlopReport {
    let mesh = generate_synthetic_mesh(1, 4, 0).expect("single element mesh").cast::<Counted>();
    let phys: PhysParams<Counted> = phys.cast();
    let quad: Quadrature<Counted> = quad.cast();
    let mut outputs = GlobalOutputs::<Counted>::zeros(mesh.num_points());

    let mut measured = [0u64; 8];
    take_flops();
    let input = mesh.gather_element(0);
    measured[0] = take_flops();
    let geometry = cartesian_derivatives(&input.elcod, &quad).expect("generated element is not degenerate");
    measured[1] = take_flops();
    let values = gauss_point_values(&input.elvel, &geometry, &quad, &phys);
    measured[2] = take_flops();
    let stab = tau_and_tim(&geometry, &values, &quad, &phys);
    measured[3] = take_flops();
    let matrices = element_matrices(&geometry, &values, &phys);
    measured[4] = take_flops();
    let gauss = GaussData { geometry, values, tau: stab.tau };
    let total = add_stage(&convective_term_and_rhs_streamed(&gauss, &matrices, &quad, &phys));
    measured[5] = take_flops();
    let (mut elauu, mut elrbu) = (total.elauu, total.elrbu);
    let visc = viscous_coefficients(&gauss.geometry, &matrices, &phys);
    apply_viscous_and_fold(&mut elauu, &mut elrbu, &visc, &input.elvel);
    measured[6] = take_flops();
    let result = ElementResult { elem_id: 0, elrbu, eldtrho: stab.eldtrho, elmurho: stab.elmurho };
    scatter_add(&mut outputs, &mesh, &result);
    measured[7] = take_flops();

    let stages: Vec<FlopStage> = KERNEL_FLOPS
        .iter()
        .zip(measured)
        .map(|(&(routine, kernel), measured)| FlopStage { routine, measured, kernel })
        .collect();
    FlopReport {
        num_gauss: quad.num_gauss(),
        measured_total: stages.iter().map(|s| s.measured).sum(),
        kernel_total: stages.iter().map(|s| s.kernel).sum(),
        stages,
    }
}

/// Rate in GFLOPS; 0 when there is no work or no elapsed time.
pub fn gflops(flops_per_element: f64, num_elements: usize, wall_seconds: f64) -> f64 {
    if num_elements == 0 || wall_seconds <= 0.0 {
        return 0.0;
    }
    flops_per_element * num_elements as f64 / wall_seconds / 1e9
}
