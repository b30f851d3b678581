//! The assembly stages. Per-Gauss-point kernels are public so the dataflow
//! engine can run them one point at a time and stay bit-identical to the
//! whole-element wrappers.

use thiserror::Error;

use super::{GaussData, PhysParams, Quadrature};
use crate::mesh::{DEGENERATE_DET, ELEM_DOFS, NODES_PER_ELEM, NUM_DIMS};
use crate::scalar::Real;

pub type NodalVec<T> = [[T; NODES_PER_ELEM]; NUM_DIMS];
pub type ElemMatrix<T> = [[T; ELEM_DOFS]; ELEM_DOFS];

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("degenerate element (det J = {det:e})")]
pub struct DegenerateElement {
    pub det: f64,
}

/// Shape-function gradients and integration weight at one Gauss point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussGeometry<T> {
    /// `gpcar[d][n]` = dN_n/dx_d.
    pub gpcar: NodalVec<T>,
    pub gpvol: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry<T> {
    pub points: Vec<GaussGeometry<T>>,
    pub det_j: T,
}

impl<T: Real> Geometry<T> {
    pub fn volume(&self) -> T {
        self.points.iter().fold(T::zero(), |acc, p| acc + p.gpvol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussPointValues<T> {
    pub gpvel: [T; NUM_DIMS],
    pub gpadv: [T; NUM_DIMS],
    pub gprhs: [T; NUM_DIMS],
    /// `gpgve[j][i]` = du_i/dx_j.
    pub gpgve: [[T; NUM_DIMS]; NUM_DIMS],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stabilization<T> {
    pub tau: Vec<T>,
    pub eldtrho: [T; NODES_PER_ELEM],
    pub elmurho: [T; NODES_PER_ELEM],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussMatrices<T> {
    pub agrau: [T; NODES_PER_ELEM],
    pub wgrgr: [[T; NODES_PER_ELEM]; NODES_PER_ELEM],
}

/// One Gauss point's contribution to `elauu` and `elrbu`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvectivePartial<T> {
    pub elauu: Box<ElemMatrix<T>>,
    pub elrbu: NodalVec<T>,
}

impl<T: Real> ConvectivePartial<T> {
    pub fn zero() -> Self {
        ConvectivePartial { elauu: Box::new([[T::zero(); ELEM_DOFS]; ELEM_DOFS]), elrbu: [[T::zero(); NODES_PER_ELEM]; NUM_DIMS] }
    }

    /// `self += other`, entry by entry.
    pub fn add_assign(&mut self, other: &Self) {
        for (row, orow) in self.elauu.iter_mut().zip(other.elauu.iter()) {
            for (a, b) in row.iter_mut().zip(orow) {
                *a += *b;
            }
        }
        for (row, orow) in self.elrbu.iter_mut().zip(&other.elrbu) {
            for (a, b) in row.iter_mut().zip(orow) {
                *a += *b;
            }
        }
    }
}

fn jacobian<T: Real>(elcod: &NodalVec<T>) -> [[T; 3]; 3] {
    let mut j = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            j[i][k] = elcod[i][k + 1] - elcod[i][0];
        }
    }
    j
}

/// Stage 1: shape-function gradients and weights at every Gauss point.
pub fn cartesian_derivatives<T: Real>(elcod: &NodalVec<T>, quad: &Quadrature<T>) -> Result<Geometry<T>, DegenerateElement> {
    let j = jacobian(elcod);
    let c00 = j[1][1] * j[2][2] - j[1][2] * j[2][1];
    let c01 = j[1][2] * j[2][0] - j[1][0] * j[2][2];
    let c02 = j[1][0] * j[2][1] - j[1][1] * j[2][0];
    let det = j[0][0] * c00 + j[0][1] * c01 + j[0][2] * c02;
    if !(det.as_f64() > DEGENERATE_DET) {
        return Err(DegenerateElement { det: det.as_f64() });
    }
    let inv = [
        [c00 / det, (j[0][2] * j[2][1] - j[0][1] * j[2][2]) / det, (j[0][1] * j[1][2] - j[0][2] * j[1][1]) / det],
        [c01 / det, (j[0][0] * j[2][2] - j[0][2] * j[2][0]) / det, (j[0][2] * j[1][0] - j[0][0] * j[1][2]) / det],
        [c02 / det, (j[0][1] * j[2][0] - j[0][0] * j[2][1]) / det, (j[0][0] * j[1][1] - j[0][1] * j[1][0]) / det],
    ];
    let mut gpcar = [[T::zero(); NODES_PER_ELEM]; NUM_DIMS];
    for d in 0..NUM_DIMS {
        for n in 0..NODES_PER_ELEM {
            let mut s = T::zero();
            for k in 0..NUM_DIMS {
                s += inv[k][d] * quad.refgrad[n][k];
            }
            gpcar[d][n] = s;
        }
    }
    // P1 gradients are constant over the element; one copy per point.
    let points = quad.weights.iter().map(|&w| GaussGeometry { gpcar, gpvol: w * det }).collect();
    Ok(Geometry { points, det_j: det })
}

/// Stage 2 at one Gauss point.
pub fn gauss_point_value<T: Real>(
    elvel: &NodalVec<T>,
    geo: &GaussGeometry<T>,
    shape: &[T; NODES_PER_ELEM],
    phys: &PhysParams<T>,
) -> GaussPointValues<T> {
    let mut gpvel = [T::zero(); NUM_DIMS];
    for d in 0..NUM_DIMS {
        for n in 0..NODES_PER_ELEM {
            gpvel[d] += shape[n] * elvel[d][n];
        }
    }
    let mut gpgve = [[T::zero(); NUM_DIMS]; NUM_DIMS];
    for j in 0..NUM_DIMS {
        for i in 0..NUM_DIMS {
            for n in 0..NODES_PER_ELEM {
                gpgve[j][i] += geo.gpcar[j][n] * elvel[i][n];
            }
        }
    }
    let gprhs = phys.grav.map(|g| phys.rho * g);
    GaussPointValues { gpvel, gpadv: gpvel, gprhs, gpgve }
}

/// Stage 2: velocity, advection, body force and velocity gradient.
pub fn gauss_point_values<T: Real>(
    elvel: &NodalVec<T>,
    geometry: &Geometry<T>,
    quad: &Quadrature<T>,
    phys: &PhysParams<T>,
) -> Vec<GaussPointValues<T>> {
    geometry.points.iter().zip(&quad.shape).map(|(geo, shape)| gauss_point_value(elvel, geo, shape, phys)).collect()
}

/// Element size used by the stabilization parameter.
pub fn element_length<T: Real>(det_j: T) -> T {
    det_j.cbrt()
}

/// Stabilization parameter at one Gauss point.
pub fn tau_point<T: Real>(h: T, gpadv: &[T; NUM_DIMS], phys: &PhysParams<T>) -> T {
    let speed = (gpadv[0] * gpadv[0] + gpadv[1] * gpadv[1] + gpadv[2] * gpadv[2]).sqrt();
    let denom = phys.c1 * phys.mu / (h * h) + phys.c2 * phys.rho * speed / h + phys.rho / phys.dt;
    T::one() / denom
}

/// Adds one Gauss point's lumped mass terms.
pub fn accumulate_lumped<T: Real>(
    eldtrho: &mut [T; NODES_PER_ELEM],
    elmurho: &mut [T; NODES_PER_ELEM],
    gpvol: T,
    shape: &[T; NODES_PER_ELEM],
    phys: &PhysParams<T>,
) {
    for n in 0..NODES_PER_ELEM {
        let vs = gpvol * shape[n];
        eldtrho[n] += vs * phys.rho / phys.dt;
        elmurho[n] += vs * phys.mu;
    }
}

/// Stage 3: `tau` per point plus lumped `rho/dt` and `mu` masses.
pub fn tau_and_tim<T: Real>(
    geometry: &Geometry<T>,
    values: &[GaussPointValues<T>],
    quad: &Quadrature<T>,
    phys: &PhysParams<T>,
) -> Stabilization<T> {
    let h = element_length(geometry.det_j);
    let mut eldtrho = [T::zero(); NODES_PER_ELEM];
    let mut elmurho = [T::zero(); NODES_PER_ELEM];
    let mut tau = Vec::with_capacity(values.len());
    for ((geo, gv), shape) in geometry.points.iter().zip(values).zip(&quad.shape) {
        tau.push(tau_point(h, &gv.gpadv, phys));
        accumulate_lumped(&mut eldtrho, &mut elmurho, geo.gpvol, shape, phys);
    }
    Stabilization { tau, eldtrho, elmurho }
}

/// Stage 4 at one Gauss point.
pub fn gauss_matrices<T: Real>(geo: &GaussGeometry<T>, gv: &GaussPointValues<T>, phys: &PhysParams<T>) -> GaussMatrices<T> {
    let mut agrau = [T::zero(); NODES_PER_ELEM];
    for n in 0..NODES_PER_ELEM {
        let mut s = T::zero();
        for d in 0..NUM_DIMS {
            s += gv.gpadv[d] * geo.gpcar[d][n];
        }
        agrau[n] = phys.rho * s;
    }
    let mut wgrgr = [[T::zero(); NODES_PER_ELEM]; NODES_PER_ELEM];
    for i in 0..NODES_PER_ELEM {
        for j in 0..NODES_PER_ELEM {
            for d in 0..NUM_DIMS {
                wgrgr[i][j] += geo.gpcar[d][i] * geo.gpcar[d][j];
            }
        }
    }
    GaussMatrices { agrau, wgrgr }
}

/// Stage 4: advective derivative `agrau` and gradient products `wgrgr`.
pub fn element_matrices<T: Real>(
    geometry: &Geometry<T>,
    values: &[GaussPointValues<T>],
    phys: &PhysParams<T>,
) -> Vec<GaussMatrices<T>> {
    geometry.points.iter().zip(values).map(|(geo, gv)| gauss_matrices(geo, gv, phys)).collect()
}

/// Inputs of the convective kernel at one Gauss point.
#[derive(Clone, Copy)]
pub struct ConvectiveInputs<'a, T> {
    pub gpvol: T,
    pub tau: T,
    pub shape: &'a [T; NODES_PER_ELEM],
    pub gv: &'a GaussPointValues<T>,
    pub mat: &'a GaussMatrices<T>,
}

impl<T: Real> ConvectiveInputs<'_, T> {
    #[inline]
    fn c0(&self, rho: T, inode: usize, idime: usize, jnode: usize, jdime: usize) -> T {
        self.gpvol * self.tau * self.mat.agrau[inode] * rho * self.gv.gpgve[jdime][idime] * self.shape[jnode]
    }

    /// Test function weight `gpvol * (N_i + tau * agrau_i)`.
    #[inline]
    fn weight(&self, inode: usize) -> T {
        self.gpvol * (self.shape[inode] + self.tau * self.mat.agrau[inode])
    }
}

/// Convective kernel at one Gauss point, written without any
/// read-modify-write of `elauu`: every entry is produced exactly once.
pub fn convective_partial<T: Real>(inp: &ConvectiveInputs<'_, T>, phys: &PhysParams<T>) -> ConvectivePartial<T> {
    let mut p = ConvectivePartial::zero();
    for inode in 0..NODES_PER_ELEM {
        let w = inp.weight(inode);
        for idime in 0..NUM_DIMS {
            let idofv = inode * NUM_DIMS + idime;
            for jnode in 0..NODES_PER_ELEM {
                let special = jnode * NUM_DIMS + idime;
                for jdime in 0..NUM_DIMS {
                    let jdofv = jnode * NUM_DIMS + jdime;
                    let c0 = inp.c0(phys.rho, inode, idime, jnode, jdime);
                    p.elauu[jdofv][idofv] = if jdofv == special { c0 + w * inp.mat.agrau[jnode] } else { c0 };
                }
            }
            p.elrbu[idime][inode] = w * inp.gv.gprhs[idime];
        }
    }
    p
}

fn convective_inputs<'a, T: Real>(
    gauss: &'a GaussData<T>,
    matrices: &'a [GaussMatrices<T>],
    quad: &'a Quadrature<T>,
    g: usize,
) -> ConvectiveInputs<'a, T> {
    ConvectiveInputs {
        gpvol: gauss.geometry.points[g].gpvol,
        tau: gauss.tau[g],
        shape: &quad.shape[g],
        gv: &gauss.values[g],
        mat: &matrices[g],
    }
}

/// Stage 5, accumulating form: one `elauu`/`elrbu` updated in place across
/// all Gauss points.
pub fn convective_term_and_rhs_accum<T: Real>(
    gauss: &GaussData<T>,
    matrices: &[GaussMatrices<T>],
    quad: &Quadrature<T>,
    phys: &PhysParams<T>,
) -> (Box<ElemMatrix<T>>, NodalVec<T>) {
    let mut elauu = Box::new([[T::zero(); ELEM_DOFS]; ELEM_DOFS]);
    let mut elrbu = [[T::zero(); NODES_PER_ELEM]; NUM_DIMS];
    for g in 0..quad.num_gauss() {
        let inp = convective_inputs(gauss, matrices, quad, g);
        for inode in 0..NODES_PER_ELEM {
            let w = inp.weight(inode);
            for idime in 0..NUM_DIMS {
                let idofv = inode * NUM_DIMS + idime;
                elrbu[idime][inode] += w * inp.gv.gprhs[idime];
                for jnode in 0..NODES_PER_ELEM {
                    elauu[jnode * NUM_DIMS + idime][idofv] += w * inp.mat.agrau[jnode];
                    for jdime in 0..NUM_DIMS {
                        elauu[jnode * NUM_DIMS + jdime][idofv] += inp.c0(phys.rho, inode, idime, jnode, jdime);
                    }
                }
            }
        }
    }
    (elauu, elrbu)
}

/// Stage 5, streamed form: one partial per Gauss point.
pub fn convective_term_and_rhs_streamed<T: Real>(
    gauss: &GaussData<T>,
    matrices: &[GaussMatrices<T>],
    quad: &Quadrature<T>,
    phys: &PhysParams<T>,
) -> Vec<ConvectivePartial<T>> {
    (0..quad.num_gauss()).map(|g| convective_partial(&convective_inputs(gauss, matrices, quad, g), phys)).collect()
}

/// Sums partials as a left fold from zero in ascending Gauss-point order.
pub fn add_stage<T: Real>(partials: &[ConvectivePartial<T>]) -> ConvectivePartial<T> {
    let mut acc = ConvectivePartial::zero();
    for p in partials {
        acc.add_assign(p);
    }
    acc
}

/// Adds one Gauss point's viscous coefficients `gpvol * mu * wgrgr`.
pub fn accumulate_viscous<T: Real>(
    visc: &mut [[T; NODES_PER_ELEM]; NODES_PER_ELEM],
    gpvol: T,
    mat: &GaussMatrices<T>,
    phys: &PhysParams<T>,
) {
    let vm = gpvol * phys.mu;
    for i in 0..NODES_PER_ELEM {
        for j in 0..NODES_PER_ELEM {
            visc[i][j] += vm * mat.wgrgr[i][j];
        }
    }
}

/// Viscous coefficients summed over all Gauss points.
pub fn viscous_coefficients<T: Real>(
    geometry: &Geometry<T>,
    matrices: &[GaussMatrices<T>],
    phys: &PhysParams<T>,
) -> [[T; NODES_PER_ELEM]; NODES_PER_ELEM] {
    let mut visc = [[T::zero(); NODES_PER_ELEM]; NODES_PER_ELEM];
    for (geo, mat) in geometry.points.iter().zip(matrices) {
        accumulate_viscous(&mut visc, geo.gpvol, mat, phys);
    }
    visc
}

/// Adds the viscous block to `elauu`, then contracts `elauu` with the nodal
/// velocities into `elrbu`.
pub fn apply_viscous_and_fold<T: Real>(
    elauu: &mut ElemMatrix<T>,
    elrbu: &mut NodalVec<T>,
    visc: &[[T; NODES_PER_ELEM]; NODES_PER_ELEM],
    elvel: &NodalVec<T>,
) {
    for inode in 0..NODES_PER_ELEM {
        for jnode in 0..NODES_PER_ELEM {
            for idime in 0..NUM_DIMS {
                elauu[jnode * NUM_DIMS + idime][inode * NUM_DIMS + idime] += visc[inode][jnode];
            }
        }
    }
    for idime in 0..NUM_DIMS {
        for inode in 0..NODES_PER_ELEM {
            let idofv = inode * NUM_DIMS + idime;
            let mut s = T::zero();
            for jnode in 0..NODES_PER_ELEM {
                for jdime in 0..NUM_DIMS {
                    s += elauu[jnode * NUM_DIMS + jdime][idofv] * elvel[jdime][jnode];
                }
            }
            elrbu[idime][inode] -= s;
        }
    }
}

/// Stage 6: viscous term and fold, applied after the convective stage.
pub fn viscous_term<T: Real>(
    elauu: &mut ElemMatrix<T>,
    elrbu: &mut NodalVec<T>,
    geometry: &Geometry<T>,
    matrices: &[GaussMatrices<T>],
    elvel: &NodalVec<T>,
    phys: &PhysParams<T>,
) {
    let visc = viscous_coefficients(geometry, matrices, phys);
    apply_viscous_and_fold(elauu, elrbu, &visc, elvel);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tet() -> NodalVec<f64> {
        [[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    }

    fn phys() -> PhysParams<f64> {
        PhysParams::default()
    }

    #[test]
    fn unit_tet_geometry() {
        let q = Quadrature::four_point();
        let geo = cartesian_derivatives(&unit_tet(), &q).unwrap();
        assert_eq!(geo.det_j, 1.0);
        assert!((geo.volume() - 1.0 / 6.0).abs() <= 1e-15);
        let expect = [[-1.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 1.0, 0.0], [-1.0, 0.0, 0.0, 1.0]];
        for p in &geo.points {
            assert_eq!(p.gpcar, expect);
        }
    }

    #[test]
    fn scaled_tet_geometry() {
        let q = Quadrature::four_point();
        let s = 2.5;
        let el = unit_tet().map(|r| r.map(|x| x * s));
        let a = cartesian_derivatives(&unit_tet(), &q).unwrap();
        let b = cartesian_derivatives(&el, &q).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert!((pb.gpvol - pa.gpvol * s * s * s).abs() < 1e-14);
            for d in 0..3 {
                for n in 0..4 {
                    assert!((pb.gpcar[d][n] - pa.gpcar[d][n] / s).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn coplanar_is_degenerate() {
        let el = [[0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]];
        assert!(cartesian_derivatives(&el, &Quadrature::four_point()).is_err());
    }

    #[test]
    fn constant_and_linear_fields() {
        let q = Quadrature::four_point();
        let geo = cartesian_derivatives(&unit_tet(), &q).unwrap();
        let c = [[0.7; 4], [-1.2; 4], [3.0; 4]];
        for gv in gauss_point_values(&c, &geo, &q, &phys()) {
            for d in 0..3 {
                assert!((gv.gpvel[d] - c[d][0]).abs() < 1e-15);
            }
            assert!(gv.gpgve.iter().flatten().all(|v| *v == 0.0));
        }
        for gv in gauss_point_values(&unit_tet(), &geo, &q, &phys()) {
            for j in 0..3 {
                for i in 0..3 {
                    assert_eq!(gv.gpgve[j][i], if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn tau_limits() {
        let p = PhysParams { mu: 0.0, ..phys() };
        assert!((tau_point(0.3, &[0.0; 3], &p) - p.dt / p.rho).abs() < 1e-17);
        let p = PhysParams { dt: 1e300, ..phys() };
        let h = 0.2;
        assert!((tau_point(h, &[0.0; 3], &p) - h * h / (p.c1 * p.mu)).abs() < 1e-15);
    }

    #[test]
    fn wgrgr_symmetric_and_zero_advection() {
        let q = Quadrature::four_point();
        let el = [[0.1, 1.3, -0.2, 0.3], [0.0, 0.2, 0.9, 0.1], [0.05, -0.1, 0.2, 1.1]];
        let geo = cartesian_derivatives(&el, &q).unwrap();
        let vals = gauss_point_values(&[[0.0; 4]; 3], &geo, &q, &phys());
        for (m, p) in element_matrices(&geo, &vals, &phys()).iter().zip(&geo.points) {
            assert_eq!(m.agrau, [0.0; 4]);
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(m.wgrgr[i][j].to_bits(), m.wgrgr[j][i].to_bits());
                }
                let norm2: f64 = (0..3).map(|d| p.gpcar[d][i] * p.gpcar[d][i]).sum();
                assert!((m.wgrgr[i][i] - norm2).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn add_stage_single_partial_passes_through() {
        let mut p = ConvectivePartial::<f64>::zero();
        p.elauu[3][4] = 1.5;
        p.elrbu[2][1] = -0.25;
        assert_eq!(add_stage(std::slice::from_ref(&p)), p);
        assert_eq!(add_stage::<f64>(&[ConvectivePartial::zero(), ConvectivePartial::zero()]), ConvectivePartial::zero());
    }
}
