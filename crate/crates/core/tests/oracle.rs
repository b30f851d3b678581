mod common;

use common::*;
use flowforge_core::mesh::{generate_synthetic_mesh, max_rel_deviation, scatter_add};
use flowforge_core::reference::{
    add_stage, apply_viscous_and_fold, cartesian_derivatives, convective_term_and_rhs_accum,
    convective_term_and_rhs_streamed, element_matrices, gauss_point_values, tau_and_tim, viscous_coefficients,
    ConvectivePartial, GaussData,
};
use flowforge_core::streaming::{
    accumulate_results, host_cartesian_offload, lane_dump_bytes, pack_chunk, plan_chunks, run_streamed,
    AccumulationMode, ChunkSize, StreamScheduleConfig,
};
use flowforge_core::dataflow::{build_pipeline, run_pipeline, PipelineConfig};
use flowforge_core::{assemble_all, assemble_element, ElementResult, GlobalOutputs, Mesh, PhysParams, Quadrature};
use rand::Rng;

const ELEMENTS: usize = 200;

fn quads() -> [Quadrature<f64>; 2] {
    [Quadrature::four_point(), Quadrature::centroid()]
}

#[test]
fn gather_matches_double_loop_indexing() {
    let mesh = generate_synthetic_mesh(500, 150, 11).unwrap();
    for e in 0..mesh.num_elements() {
        let got = mesh.gather_element(e);
        assert_eq!(got.elem_id, e);
        for i in 0..4 {
            let p = mesh.lnods()[e][i] as usize;
            for j in 0..3 {
                assert_eq!(got.elcod[j][i].to_bits(), mesh.coord()[j][p].to_bits());
                assert_eq!(got.elvel[j][i].to_bits(), mesh.veloc()[j][p].to_bits());
            }
        }
    }
}

#[test]
fn scatter_matches_brute_force_incidence_sum() {
    let mesh = generate_synthetic_mesh(400, 90, 5).unwrap();
    let (phys, quad) = (PhysParams::default(), Quadrature::four_point());
    let results: Vec<_> = (0..mesh.num_elements()).map(|e| assemble_element(&mesh.gather_element(e), &phys, &quad).unwrap()).collect();
    let mut got = GlobalOutputs::zeros(mesh.num_points());
    for r in &results {
        scatter_add(&mut got, &mesh, r);
    }
    // outputs[p] = sum over all (e, i) with lnods[e][i] == p, in element order.
    let mut want = GlobalOutputs::<f64>::zeros(mesh.num_points());
    for p in 0..mesh.num_points() {
        for (e, r) in results.iter().enumerate() {
            for i in 0..4 {
                if mesh.lnods()[e][i] as usize == p {
                    for d in 0..3 {
                        want.rhsid[d][p] += r.elrbu[d][i];
                    }
                    want.dt_rho_nsi[p] += r.eldtrho[i];
                    want.mass_rho_nsi[p] += r.elmurho[i];
                }
            }
        }
    }
    assert!(got.bit_eq(&want));
    assert!(assemble_all(&mesh, &phys, &quad).unwrap().bit_eq(&want));
}

#[test]
fn gpcar_matches_finite_differences_of_the_map() {
    let mut rng = rng(1);
    let quad = Quadrature::four_point();
    let step = 1e-5;
    for _ in 0..ELEMENTS {
        let el = random_element(&mut rng, 0);
        let geo = cartesian_derivatives(&el.elcod, &quad).unwrap();
        for (g, xi) in quad.points.iter().enumerate() {
            // dx_d/dxi_k by central differences of x(xi) = sum_n N_n(xi) x_n.
            let map = |xi: [f64; 3], d: usize| -> f64 { (0..4).map(|n| shape(xi)[n] * el.elcod[d][n]).sum() };
            let mut jac = [[0.0; 3]; 3];
            for k in 0..3 {
                let (mut hi, mut lo) = (*xi, *xi);
                hi[k] += step;
                lo[k] -= step;
                for d in 0..3 {
                    jac[d][k] = (map(hi, d) - map(lo, d)) / (2.0 * step);
                }
            }
            // Chain rule: dN_n/dxi_k = sum_d dN_n/dx_d dx_d/dxi_k.
            let gpcar = geo.points[g].gpcar;
            for n in 0..4 {
                for k in 0..3 {
                    let chained: f64 = (0..3).map(|d| gpcar[d][n] * jac[d][k]).sum();
                    assert!((chained - REF_GRAD[n][k]).abs() < 1e-6, "n={n} k={k}: {chained}");
                }
            }
        }
    }
}

#[test]
fn gpcar_and_volume_match_linear_solve() {
    let mut rng = rng(2);
    for quad in quads() {
        for _ in 0..ELEMENTS {
            let el = random_element(&mut rng, 0);
            let geo = cartesian_derivatives(&el.elcod, &quad).unwrap();
            let want = gradients(&el.elcod);
            for p in &geo.points {
                assert!(norm_rel(p.gpcar.iter().flatten().copied(), want.iter().flatten().copied()) < 1e-12);
            }
            let det = det3(&jacobian(&el.elcod));
            assert!((geo.volume() - det / 6.0).abs() <= 1e-14 * det);
        }
    }
}

#[test]
fn gauss_point_values_match_direct_sums() {
    let mut rng = rng(3);
    let phys = PhysParams::default();
    for quad in quads() {
        for _ in 0..ELEMENTS {
            let el = random_element(&mut rng, 0);
            let oracle = element(&el, &phys, &quad);
            let geo = cartesian_derivatives(&el.elcod, &quad).unwrap();
            let values = gauss_point_values(&el.elvel, &geo, &quad, &phys);
            for (v, p) in values.iter().zip(&oracle.points) {
                assert!(norm_rel(v.gpvel, p.vel) < 1e-13);
                assert_eq!(v.gpadv, v.gpvel);
                assert!(norm_rel(v.gpgve.iter().flatten().copied(), p.dvel.iter().flatten().copied()) < 1e-13);
                assert_eq!(v.gprhs, phys.grav.map(|g| phys.rho * g));
            }
        }
    }
}

#[test]
fn tau_and_lumped_masses_match_formula() {
    let mut rng = rng(4);
    let phys = PhysParams { mu: 0.3, rho: 1.7, dt: 0.02, ..PhysParams::default() };
    for quad in quads() {
        for _ in 0..ELEMENTS {
            let el = random_element(&mut rng, 0);
            let oracle = element(&el, &phys, &quad);
            let geo = cartesian_derivatives(&el.elcod, &quad).unwrap();
            let values = gauss_point_values(&el.elvel, &geo, &quad, &phys);
            let stab = tau_and_tim(&geo, &values, &quad, &phys);
            for (t, p) in stab.tau.iter().zip(&oracle.points) {
                assert!((t - p.tau).abs() <= 1e-13 * p.tau);
            }
            assert!(norm_rel(stab.eldtrho, oracle.result.eldtrho) < 1e-13);
            assert!(norm_rel(stab.elmurho, oracle.result.elmurho) < 1e-13);
        }
    }
}

#[test]
fn element_matrices_match_triple_loop() {
    let mut rng = rng(5);
    let phys = PhysParams { rho: 1.3, ..PhysParams::default() };
    let quad = Quadrature::four_point();
    for _ in 0..ELEMENTS {
        let el = random_element(&mut rng, 0);
        let oracle = element(&el, &phys, &quad);
        let geo = cartesian_derivatives(&el.elcod, &quad).unwrap();
        let values = gauss_point_values(&el.elvel, &geo, &quad, &phys);
        let mats = element_matrices(&geo, &values, &phys);
        for (m, p) in mats.iter().zip(&oracle.points) {
            let mut agrau = [0.0; 4];
            let mut wgrgr = [[0.0; 4]; 4];
            for a in 0..4 {
                for d in 0..3 {
                    agrau[a] += phys.rho * p.vel[d] * oracle.grad[d][a];
                    for b in 0..4 {
                        wgrgr[a][b] += oracle.grad[d][a] * oracle.grad[d][b];
                    }
                }
            }
            assert!(norm_rel(m.agrau, agrau) < 1e-12);
            assert!(norm_rel(m.wgrgr.iter().flatten().copied(), wgrgr.iter().flatten().copied()) < 1e-12);
        }
    }
}

struct Staged {
    gauss: GaussData<f64>,
    matrices: Vec<flowforge_core::reference::GaussMatrices<f64>>,
}

fn staged(el: &flowforge_core::ElementInput<f64>, phys: &PhysParams<f64>, quad: &Quadrature<f64>) -> Staged {
    let geometry = cartesian_derivatives(&el.elcod, quad).unwrap();
    let values = gauss_point_values(&el.elvel, &geometry, quad, phys);
    let stab = tau_and_tim(&geometry, &values, quad, phys);
    let matrices = element_matrices(&geometry, &values, phys);
    Staged { gauss: GaussData { geometry, values, tau: stab.tau }, matrices }
}

#[test]
fn convective_term_matches_six_loop_oracle() {
    let mut rng = rng(6);
    let phys = PhysParams::default();
    for quad in quads() {
        for _ in 0..ELEMENTS {
            let el = random_element(&mut rng, 0);
            let oracle = element(&el, &phys, &quad);
            let s = staged(&el, &phys, &quad);
            let (elauu, elrbu) = convective_term_and_rhs_accum(&s.gauss, &s.matrices, &quad, &phys);
            let streamed = add_stage(&convective_term_and_rhs_streamed(&s.gauss, &s.matrices, &quad, &phys));
            let want = oracle.conv.iter().flatten().copied();
            assert!(norm_rel(elauu.iter().flatten().copied(), want.clone()) < 1e-12);
            assert!(norm_rel(streamed.elauu.iter().flatten().copied(), want) < 1e-12);
            let rhs: Vec<f64> = (0..12).map(|b| oracle.conv_rhs[b]).collect();
            let got: Vec<f64> = (0..12).map(|b| elrbu[b % 3][b / 3]).collect();
            assert!(norm_rel(got, rhs) < 1e-12);
        }
    }
}

#[test]
fn streamed_partials_match_accumulating_form() {
    let mut rng = rng(7);
    let phys = PhysParams::default();
    for quad in quads() {
        for _ in 0..ELEMENTS {
            let el = random_element(&mut rng, 0);
            let s = staged(&el, &phys, &quad);
            let (elauu, elrbu) = convective_term_and_rhs_accum(&s.gauss, &s.matrices, &quad, &phys);
            let total = add_stage(&convective_term_and_rhs_streamed(&s.gauss, &s.matrices, &quad, &phys));
            assert!(norm_rel(total.elauu.iter().flatten().copied(), elauu.iter().flatten().copied()) < 1e-12);
            assert!(norm_rel(total.elrbu.iter().flatten().copied(), elrbu.iter().flatten().copied()) < 1e-12);
        }
    }
}

#[test]
fn viscous_fold_matches_dense_matvec() {
    let mut rng = rng(8);
    let phys = PhysParams { mu: 0.5, ..PhysParams::default() };
    let quad = Quadrature::four_point();
    for _ in 0..ELEMENTS {
        let el = random_element(&mut rng, 0);
        let oracle = element(&el, &phys, &quad);
        let s = staged(&el, &phys, &quad);
        let visc = viscous_coefficients(&s.gauss.geometry, &s.matrices, &phys);
        assert!(norm_rel(visc.iter().flatten().copied(), oracle.visc.iter().flatten().copied()) < 1e-12);
        // Feed the oracle's convective block so only the fold is under test.
        let mut elauu = Box::new([[0.0; 12]; 12]);
        for a in 0..12 {
            elauu[a].copy_from_slice(&oracle.conv[a]);
        }
        let mut elrbu = [[0.0; 4]; 3];
        for b in 0..12 {
            elrbu[b % 3][b / 3] = oracle.conv_rhs[b];
        }
        apply_viscous_and_fold(&mut elauu, &mut elrbu, &oracle.visc, &el.elvel);
        assert!(norm_rel(elrbu.iter().flatten().copied(), oracle.result.elrbu.iter().flatten().copied()) < 1e-12);
    }
}

#[test]
fn whole_element_matches_oracle() {
    let mut rng = rng(9);
    let phys = PhysParams::default();
    for quad in quads() {
        for e in 0..ELEMENTS {
            let el = random_element(&mut rng, e);
            let want = element(&el, &phys, &quad).result;
            let got = assemble_element(&el, &phys, &quad).unwrap();
            assert_eq!(got.elem_id, e);
            assert!(norm_rel(got.elrbu.iter().flatten().copied(), want.elrbu.iter().flatten().copied()) < 1e-12);
            assert!(norm_rel(got.eldtrho, want.eldtrho) < 1e-13);
            assert!(norm_rel(got.elmurho, want.elmurho) < 1e-13);
        }
    }
}

fn random_partial(rng: &mut rand_chacha::ChaCha8Rng) -> ConvectivePartial<f64> {
    let mut p = ConvectivePartial::zero();
    for row in p.elauu.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(-1e3..1e3);
        }
    }
    for row in p.elrbu.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(-1e3..1e3);
        }
    }
    p
}

#[test]
fn add_stage_is_a_left_fold() {
    let mut rng = rng(10);
    for n in [1, 2, 4, 7] {
        let partials: Vec<_> = (0..n).map(|_| random_partial(&mut rng)).collect();
        let total = add_stage(&partials);
        for a in 0..12 {
            for b in 0..12 {
                let want = partials.iter().fold(0.0, |acc, p| acc + p.elauu[a][b]);
                assert_eq!(total.elauu[a][b].to_bits(), want.to_bits());
            }
        }
        for d in 0..3 {
            for i in 0..4 {
                let want = partials.iter().fold(0.0, |acc, p| acc + p.elrbu[d][i]);
                assert_eq!(total.elrbu[d][i].to_bits(), want.to_bits());
            }
        }
    }
}

/// Second packer: per variable, bank 0 holds flattened values 0..6 of every
/// element, bank 1 values 6..12, each lane padded with two zeros.
fn independent_dump(mesh: &Mesh<f64>, range: std::ops::Range<usize>) -> Vec<u8> {
    let mut out = Vec::new();
    for var in 0..2 {
        for bank in 0..2 {
            for e in range.clone() {
                for slot in 0..8 {
                    let v = if slot < 6 {
                        let k = bank * 6 + slot;
                        let (node, dim) = (k / 3, k % 3);
                        let p = mesh.lnods()[e][node] as usize;
                        if var == 0 { mesh.veloc()[dim][p] } else { mesh.coord()[dim][p] }
                    } else {
                        0.0
                    };
                    out.extend(v.to_le_bytes());
                }
            }
        }
    }
    out
}

#[test]
fn lane_dump_matches_independent_packer() {
    let mesh = generate_synthetic_mesh(1000, 300, 12).unwrap();
    for chunk in plan_chunks(mesh.num_elements(), 96) {
        let packed = pack_chunk(&mesh, chunk.range());
        assert_eq!(lane_dump_bytes(&packed), independent_dump(&mesh, chunk.range()));
    }
}

#[test]
fn offload_is_pure_per_element() {
    let mesh = generate_synthetic_mesh(10_000, 2500, 13).unwrap();
    let quad = Quadrature::four_point();
    let packed = pack_chunk(&mesh, 0..mesh.num_elements());
    let geo = host_cartesian_offload(&packed, &quad, 8).unwrap();
    assert_eq!(geo.len(), mesh.num_elements());
    for (e, g) in geo.iter().enumerate() {
        let want = cartesian_derivatives(&mesh.gather_element(e).elcod, &quad).unwrap();
        assert_eq!(g.det_j.to_bits(), want.det_j.to_bits());
        for (a, b) in g.points.iter().zip(&want.points) {
            assert_eq!(a.gpvol.to_bits(), b.gpvol.to_bits());
            assert!(a.gpcar.iter().flatten().zip(b.gpcar.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

/// `num_elements` elements over `num_points` points, every element drawn
/// from the same small pool so updates collide constantly.
fn adversarial(num_elements: usize, num_points: usize, seed: u64) -> (Mesh<f64>, Vec<ElementResult<f64>>) {
    let mut rng = rng(seed);
    let lnods: Vec<[u32; 4]> = (0..num_elements)
        .map(|_| {
            let mut nodes = [0u32; 4];
            let mut k = 0;
            while k < 4 {
                let p = rng.gen_range(0..num_points as u32);
                if !nodes[..k].contains(&p) {
                    nodes[k] = p;
                    k += 1;
                }
            }
            nodes
        })
        .collect();
    let zeros = || vec![0.0; num_points];
    let mesh = Mesh::new(lnods, [zeros(), zeros(), zeros()], [zeros(), zeros(), zeros()]).unwrap();
    let results = (0..num_elements)
        .map(|e| {
            let mut v = || rng.gen_range(-1.0..1.0);
            ElementResult {
                elem_id: e,
                elrbu: std::array::from_fn(|_| std::array::from_fn(|_| v())),
                eldtrho: std::array::from_fn(|_| v()),
                elmurho: std::array::from_fn(|_| v()),
            }
        })
        .collect();
    (mesh, results)
}

#[test]
fn locked_accumulation_matches_serial_under_contention() {
    let (mesh, results) = adversarial(2000, 6, 14);
    let mut serial = GlobalOutputs::zeros(mesh.num_points());
    accumulate_results(&mut serial, &mesh, &results, AccumulationMode::Serial, 1);
    for _ in 0..100 {
        let mut locked = GlobalOutputs::zeros(mesh.num_points());
        accumulate_results(&mut locked, &mesh, &results, AccumulationMode::Locked, 8);
        // Sums over ~1300 terms of magnitude 1 each; compare against the scale.
        let scale = serial.columns().iter().flat_map(|c| c.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in locked.columns().iter().zip(serial.columns().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12 * scale.max(y.abs()), "{x} vs {y}");
            }
        }
    }
}

#[test]
fn sharded_matches_serial_across_chunk_boundaries() {
    let (mesh, results) = adversarial(3000, 40, 15);
    let mut serial = GlobalOutputs::zeros(mesh.num_points());
    accumulate_results(&mut serial, &mesh, &results, AccumulationMode::Serial, 1);
    let mut sharded = GlobalOutputs::zeros(mesh.num_points());
    for chunk in plan_chunks(results.len(), 64) {
        accumulate_results(&mut sharded, &mesh, &results[chunk.range()], AccumulationMode::Sharded, 8);
    }
    assert!(sharded.bit_eq(&serial));

    // Same property end to end: a dense mesh where consecutive chunks share points.
    let mesh = generate_synthetic_mesh(3000, 60, 15).unwrap();
    let (phys, quad) = (PhysParams::default(), Quadrature::four_point());
    let reference = assemble_all(&mesh, &phys, &quad).unwrap();
    let run = |mode| {
        let sc = StreamScheduleConfig {
            chunk_size: ChunkSize::Fixed(100),
            accumulation_mode: mode,
            worker_count: 8,
            ..StreamScheduleConfig::default()
        };
        run_streamed(&mesh, &phys, &quad, &PipelineConfig::default(), &sc).unwrap().0
    };
    let serial = run(AccumulationMode::Serial);
    let sharded = run(AccumulationMode::Sharded);
    assert!(max_rel_deviation(&sharded, &serial) <= 1e-12);
    assert!(max_rel_deviation(&serial, &reference) <= 1e-12);
}

#[test]
fn pipeline_matches_oracle_on_random_elements() {
    let mut rng = rng(16);
    let (phys, quad) = (PhysParams::default(), Quadrature::four_point());
    let elements: Vec<_> = (0..1000).map(|e| random_element(&mut rng, e)).collect();
    let graph = build_pipeline(&PipelineConfig::default()).unwrap();
    let results = run_pipeline(&graph, &elements, &phys, &quad).unwrap();
    for (r, el) in results.iter().zip(&elements) {
        let want = element(el, &phys, &quad).result;
        assert_eq!(r.elem_id, el.elem_id);
        assert!(norm_rel(r.elrbu.iter().flatten().copied(), want.elrbu.iter().flatten().copied()) < 1e-12);
        assert!(norm_rel(result_values(r), result_values(&want)) < 1e-12);
    }
}
