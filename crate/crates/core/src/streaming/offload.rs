use rayon::prelude::*;
use rayon::ThreadPool;

use super::accumulate::worker_pool;
use super::lanes::{unpack_element, PackedLanes};
use crate::reference::{cartesian_derivatives, AssemblyError, Geometry, Quadrature};
use crate::scalar::Real;

pub(crate) fn offload_in<T: Real>(
    packed: &PackedLanes<T>,
    quad: &Quadrature<T>,
    pool: &ThreadPool,
) -> Result<Vec<Geometry<T>>, AssemblyError> {
    let all: Vec<_> = pool.install(|| {
        (0..packed.len())
            .into_par_iter()
            .map(|l| {
                let e = unpack_element(packed, l);
                cartesian_derivatives(&e.elcod, quad)
                    .map_err(|d| AssemblyError::DegenerateElement { elem_id: e.elem_id, det: d.det })
            })
            .collect()
    });
    // First failure in element order, independent of scheduling.
    all.into_iter().collect()
}

/// Computes shape-function gradients for every element of a packed chunk on
/// `workers` host threads. Output order matches the chunk.
pub fn host_cartesian_offload<T: Real>(
    packed: &PackedLanes<T>,
    quad: &Quadrature<T>,
    workers: usize,
) -> Result<Vec<Geometry<T>>, AssemblyError> {
    offload_in(packed, quad, &worker_pool(workers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_synthetic_mesh;
    use crate::streaming::pack_chunk;

    #[test]
    fn matches_in_line_stage_for_any_worker_count() {
        let m = generate_synthetic_mesh(300, 100, 2).unwrap();
        let p = pack_chunk(&m, 0..300);
        let q = Quadrature::four_point();
        let one = host_cartesian_offload(&p, &q, 1).unwrap();
        let many = host_cartesian_offload(&p, &q, 8).unwrap();
        assert_eq!(one, many);
        for (e, g) in one.iter().enumerate() {
            assert_eq!(*g, cartesian_derivatives(&m.gather_element(e).elcod, &q).unwrap());
        }
    }

    #[test]
    fn reports_first_degenerate_element() {
        let m = generate_synthetic_mesh(20, 12, 2).unwrap();
        let mut p = pack_chunk(&m, 5..20);
        for l in [3, 9] {
            p.elcod[0][l] = [0.0; 8];
            p.elcod[1][l] = [0.0; 8];
        }
        let err = host_cartesian_offload(&p, &Quadrature::four_point(), 4).unwrap_err();
        assert_eq!(err, AssemblyError::DegenerateElement { elem_id: 8, det: 0.0 });
    }
}
