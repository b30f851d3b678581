//! Brute-force oracles written independently of the library kernels.
#![allow(dead_code)]

use flowforge_core::mesh::signed_det;
use flowforge_core::{ElementInput, ElementResult, PhysParams, Quadrature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Nodal = [[f64; 4]; 3];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random positively oriented tetrahedron with unit-scale edges and
/// velocities in [-2, 2].
pub fn random_element(rng: &mut ChaCha8Rng, elem_id: usize) -> ElementInput<f64> {
    loop {
        let mut elcod = [[0.0; 4]; 3];
        for row in elcod.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let det = signed_det(&elcod);
        if det.abs() < 0.05 {
            continue;
        }
        if det < 0.0 {
            for row in elcod.iter_mut() {
                row.swap(1, 2);
            }
        }
        let mut elvel = [[0.0; 4]; 3];
        for row in elvel.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
        }
        return ElementInput { elem_id, elvel, elcod };
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn shape(xi: [f64; 3]) -> [f64; 4] {
    [1.0 - xi[0] - xi[1] - xi[2], xi[0], xi[1], xi[2]]
}

pub const REF_GRAD: [[f64; 3]; 4] = [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// `dx_d/dxi_k` of the isoparametric map.
pub fn jacobian(elcod: &Nodal) -> [[f64; 3]; 3] {
    let mut j = [[0.0; 3]; 3];
    for d in 0..3 {
        for k in 0..3 {
            j[d][k] = (0..4).map(|n| elcod[d][n] * REF_GRAD[n][k]).sum();
        }
    }
    j
}

/// `grad[d][n]` from `J^T grad_x N_n = grad_xi N_n`.
pub fn gradients(elcod: &Nodal) -> Nodal {
    let j = jacobian(elcod);
    let jt = [[j[0][0], j[1][0], j[2][0]], [j[0][1], j[1][1], j[2][1]], [j[0][2], j[1][2], j[2][2]]];
    let mut g = [[0.0; 4]; 3];
    for n in 0..4 {
        let x = solve3(jt, REF_GRAD[n]);
        for d in 0..3 {
            g[d][n] = x[d];
        }
    }
    g
}

pub fn det3(j: &[[f64; 3]; 3]) -> f64 {
    j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
}

#[derive(Clone, Debug)]
pub struct OraclePoint {
    pub n: [f64; 4],
    pub vol: f64,
    pub vel: [f64; 3],
    /// `dvel[j][i]` = du_i/dx_j.
    pub dvel: [[f64; 3]; 3],
    pub tau: f64,
}

#[derive(Clone, Debug)]
pub struct OracleElement {
    pub grad: Nodal,
    pub det: f64,
    pub points: Vec<OraclePoint>,
    pub conv: Vec<Vec<f64>>,
    pub conv_rhs: [f64; 12],
    pub visc: [[f64; 4]; 4],
    pub result: ElementResult<f64>,
}

pub fn tau(h: f64, vel: [f64; 3], p: &PhysParams<f64>) -> f64 {
    let speed = vel.iter().map(|v| v * v).sum::<f64>().sqrt();
    1.0 / (p.c1 * p.mu / (h * h) + p.c2 * p.rho * speed / h + p.rho / p.dt)
}

/// Whole-element oracle. Dofs are `node * 3 + dim`; `conv[a][b]` couples
/// trial dof `a` to test dof `b`.
pub fn element(input: &ElementInput<f64>, phys: &PhysParams<f64>, quad: &Quadrature<f64>) -> OracleElement {
    let grad = gradients(&input.elcod);
    let det = det3(&jacobian(&input.elcod));
    let h = det.cbrt();
    let points: Vec<OraclePoint> = quad
        .points
        .iter()
        .zip(&quad.weights)
        .map(|(xi, w)| {
            let n = shape(*xi);
            let mut vel = [0.0; 3];
            let mut dvel = [[0.0; 3]; 3];
            for i in 0..3 {
                vel[i] = (0..4).map(|a| n[a] * input.elvel[i][a]).sum();
                for j in 0..3 {
                    dvel[j][i] = (0..4).map(|a| grad[j][a] * input.elvel[i][a]).sum();
                }
            }
            OraclePoint { n, vol: w * det, vel, dvel, tau: tau(h, vel, phys) }
        })
        .collect();

    // Six nested loops: point, test node, test dim, trial node, trial dim, and
    // the contraction inside the advective derivative.
    let mut conv = vec![vec![0.0; 12]; 12];
    let mut conv_rhs = [0.0; 12];
    for p in &points {
        let adv = |a: usize| {
            let mut s = 0.0;
            for d in 0..3 {
                s += p.vel[d] * grad[d][a];
            }
            phys.rho * s
        };
        for i in 0..4 {
            let test = p.vol * (p.n[i] + p.tau * adv(i));
            for id in 0..3 {
                conv_rhs[i * 3 + id] += test * phys.rho * phys.grav[id];
                for j in 0..4 {
                    for jd in 0..3 {
                        let mut v = p.vol * p.tau * adv(i) * phys.rho * p.dvel[jd][id] * p.n[j];
                        if jd == id {
                            v += test * adv(j);
                        }
                        conv[j * 3 + jd][i * 3 + id] += v;
                    }
                }
            }
        }
    }

    let mut visc = [[0.0; 4]; 4];
    for p in &points {
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..3).map(|d| grad[d][i] * grad[d][j]).sum();
                visc[i][j] += p.vol * phys.mu * dot;
            }
        }
    }

    // Dense 12x12 system matrix and matrix-vector fold.
    let mut k = conv.clone();
    for i in 0..4 {
        for j in 0..4 {
            for d in 0..3 {
                k[j * 3 + d][i * 3 + d] += visc[i][j];
            }
        }
    }
    let u: Vec<f64> = (0..12).map(|a| input.elvel[a % 3][a / 3]).collect();
    let mut elrbu = [[0.0; 4]; 3];
    for b in 0..12 {
        let ku: f64 = (0..12).map(|a| k[a][b] * u[a]).sum();
        elrbu[b % 3][b / 3] = conv_rhs[b] - ku;
    }

    let mut eldtrho = [0.0; 4];
    let mut elmurho = [0.0; 4];
    for p in &points {
        for a in 0..4 {
            eldtrho[a] += p.vol * p.n[a] * phys.rho / phys.dt;
            elmurho[a] += p.vol * p.n[a] * phys.mu;
        }
    }
    OracleElement {
        grad,
        det,
        points,
        conv,
        conv_rhs,
        visc,
        result: ElementResult { elem_id: input.elem_id, elrbu, eldtrho, elmurho },
    }
}

/// `max |a - b| / max |b|`, 0 when both are all zero.
pub fn norm_rel(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (x, y) in a.into_iter().zip(b) {
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn result_values(r: &ElementResult<f64>) -> Vec<f64> {
    r.elrbu.iter().flatten().chain(&r.eldtrho).chain(&r.elmurho).copied().collect()
}
