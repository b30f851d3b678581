//! Synthetic tetrahedral meshes at benchmark scale.
//!
//! Points lie on a jittered structured grid inside the unit cube. Elements
//! are Kuhn tetrahedra of the grid cells; when more elements are requested
//! than one cell decomposition provides, further decompositions along the
//! other three cube diagonals are layered on top, so elements overlap but
//! every one stays well shaped. Point ids are shuffled inside small windows
//! to give the gather a realistic, mostly-local but irregular access pattern.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mesh, MeshError, NODES_PER_ELEM, NUM_DIMS};

const JITTER_FRACTION: f64 = 0.08;
const VELOCITY_JITTER: f64 = 1e-3;
const SHUFFLE_WINDOW: usize = 64;

/// Named mesh sizes from the benchmark suite.
///
/// The 2D-named presets still produce 3D tetrahedral meshes of the listed
/// element and point counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkPreset {
    Cylinder2d,
    Venturi2d,
    Elbow,
    Sphere100k,
    Sphere16m,
    Sphere32m,
}

impl BenchmarkPreset {
    pub const ALL: [BenchmarkPreset; 6] = [
        BenchmarkPreset::Cylinder2d,
        BenchmarkPreset::Venturi2d,
        BenchmarkPreset::Elbow,
        BenchmarkPreset::Sphere100k,
        BenchmarkPreset::Sphere16m,
        BenchmarkPreset::Sphere32m,
    ];

    /// `(num_elements, num_points)`.
    pub fn sizes(self) -> (usize, usize) {
        match self {
            BenchmarkPreset::Cylinder2d => (1200, 1280),
            BenchmarkPreset::Venturi2d => (4200, 4371),
            BenchmarkPreset::Elbow => (26410, 5682),
            BenchmarkPreset::Sphere100k => (100_000, 15768),
            BenchmarkPreset::Sphere16m => (16_677_400, 2_876_880),
            BenchmarkPreset::Sphere32m => (32_677_400, 5_753_760),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkPreset::Cylinder2d => "cylinder2d",
            BenchmarkPreset::Venturi2d => "venturi2d",
            BenchmarkPreset::Elbow => "elbow",
            BenchmarkPreset::Sphere100k => "sphere100k",
            BenchmarkPreset::Sphere16m => "sphere16m",
            BenchmarkPreset::Sphere32m => "sphere32m",
        }
    }
}

impl FromStr for BenchmarkPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchmarkPreset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset {s:?}"))
    }
}

/// Deterministic synthetic mesh with exactly the requested counts.
pub fn generate_synthetic_mesh(num_elements: usize, num_points: usize, seed: u64) -> Result<Mesh<f64>, MeshError> {
    if num_points < 4 {
        return Err(MeshError::TooFewPoints { num_points });
    }
    if num_elements == 0 {
        return Err(MeshError::NoElements);
    }
    assert!(num_points <= u32::MAX as usize, "point ids must fit in u32");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let grid = Grid::for_points(num_points);
    let cells = grid.complete_cells();
    let (coord, lnods) = if cells.is_empty() {
        moment_curve_mesh(num_elements, num_points)
    } else {
        grid_mesh(&grid, &cells, num_elements, &mut rng)
    };

    let mut veloc: [Vec<f64>; NUM_DIMS] = std::array::from_fn(|_| Vec::with_capacity(num_points));
    for p in 0..num_points {
        let (x, y, z) = (coord[0][p], coord[1][p], coord[2][p]);
        let u = [x.sin() * y.cos(), z * z, x * y];
        for d in 0..NUM_DIMS {
            veloc[d].push(u[d] + rng.gen_range(-VELOCITY_JITTER..=VELOCITY_JITTER));
        }
    }
    Mesh::new(lnods, coord, veloc)
}

struct Grid {
    nx: usize,
    ny: usize,
    nz: usize,
    num_points: usize,
}

impl Grid {
    fn for_points(num_points: usize) -> Grid {
        let m = ((num_points as f64).cbrt().round() as usize).max(2);
        let nz = num_points.div_ceil(m * m);
        Grid { nx: m, ny: m, nz, num_points }
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    /// Cells whose eight corners all exist.
    fn complete_cells(&self) -> Vec<(usize, usize, usize)> {
        let mut cells = Vec::new();
        if self.nz < 2 {
            return cells;
        }
        for k in 0..self.nz - 1 {
            for j in 0..self.ny - 1 {
                for i in 0..self.nx - 1 {
                    if self.index(i + 1, j + 1, k + 1) < self.num_points {
                        cells.push((i, j, k));
                    }
                }
            }
        }
        cells
    }
}

/// The six Kuhn tetrahedra of the unit cube along the 000-111 diagonal, as
/// local corner bit patterns `(a,b,c)`, each listed with positive orientation.
fn kuhn_tets() -> Vec<[[usize; 3]; NODES_PER_ELEM]> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    PERMS
        .iter()
        .map(|perm| {
            let mut corners = [[0usize; 3]; NODES_PER_ELEM];
            let mut cur = [0usize; 3];
            for (step, &axis) in perm.iter().enumerate() {
                cur[axis] = 1;
                corners[step + 1] = cur;
            }
            orient(corners)
        })
        .collect()
}

fn corner_det(c: &[[usize; 3]; NODES_PER_ELEM]) -> f64 {
    let mut elcod = [[0.0; NODES_PER_ELEM]; NUM_DIMS];
    for (n, corner) in c.iter().enumerate() {
        for d in 0..NUM_DIMS {
            elcod[d][n] = corner[d] as f64;
        }
    }
    super::signed_det(&elcod)
}

fn orient(mut c: [[usize; 3]; NODES_PER_ELEM]) -> [[usize; 3]; NODES_PER_ELEM] {
    if corner_det(&c) < 0.0 {
        c.swap(1, 2);
    }
    c
}

/// Decomposition `d` reflects the Kuhn template across axis `d - 1`.
fn decomposition(d: usize) -> Vec<[[usize; 3]; NODES_PER_ELEM]> {
    kuhn_tets()
        .into_iter()
        .map(|tet| {
            let mut t = tet;
            if d > 0 {
                for corner in t.iter_mut() {
                    corner[d - 1] = 1 - corner[d - 1];
                }
            }
            orient(t)
        })
        .collect()
}

fn grid_mesh(
    grid: &Grid,
    cells: &[(usize, usize, usize)],
    num_elements: usize,
    rng: &mut ChaCha8Rng,
) -> ([Vec<f64>; NUM_DIMS], Vec<[u32; NODES_PER_ELEM]>) {
    let np = grid.num_points;
    let spacing = [1.0 / (grid.nx - 1) as f64, 1.0 / (grid.ny - 1) as f64, 1.0 / (grid.nz - 1) as f64];
    let jitter = JITTER_FRACTION * spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let dims = [grid.nx, grid.ny, grid.nz];

    let mut coord: [Vec<f64>; NUM_DIMS] = std::array::from_fn(|_| vec![0.0; np]);
    for p in 0..np {
        let idx = [p % grid.nx, (p / grid.nx) % grid.ny, p / (grid.nx * grid.ny)];
        for d in 0..NUM_DIMS {
            let base = idx[d] as f64 * spacing[d];
            let interior = idx[d] > 0 && idx[d] + 1 < dims[d];
            coord[d][p] = if interior { base + rng.gen_range(-jitter..=jitter) } else { base };
        }
    }

    let per_decomp = cells.len() * 6;
    let mut lnods = Vec::with_capacity(num_elements);
    let mut d = 0;
    while lnods.len() < num_elements {
        let take = (num_elements - lnods.len()).min(per_decomp);
        let tets = decomposition(d % 4);
        for s in 0..take {
            // Evenly strided selection spreads partial decompositions over the domain.
            let idx = s * per_decomp / take;
            let (i, j, k) = cells[idx / 6];
            let tet = &tets[idx % 6];
            let mut nodes = [0u32; NODES_PER_ELEM];
            for (n, c) in tet.iter().enumerate() {
                nodes[n] = grid.index(i + c[0], j + c[1], k + c[2]) as u32;
            }
            lnods.push(nodes);
        }
        d += 1;
    }

    // Window-local renumbering of point ids.
    let mut perm: Vec<u32> = (0..np as u32).collect();
    for window in perm.chunks_mut(SHUFFLE_WINDOW) {
        window.shuffle(rng);
    }
    let mut shuffled: [Vec<f64>; NUM_DIMS] = std::array::from_fn(|_| vec![0.0; np]);
    for (old, &new) in perm.iter().enumerate() {
        for d in 0..NUM_DIMS {
            shuffled[d][new as usize] = coord[d][old];
        }
    }
    for nodes in lnods.iter_mut() {
        for n in nodes.iter_mut() {
            *n = perm[*n as usize];
        }
    }
    (shuffled, lnods)
}

/// Fallback for point counts too small to form a grid cell: points on the
/// moment curve `(t, t^2, t^3)` are in general position, and any ascending
/// 4-subset is positively oriented.
fn moment_curve_mesh(num_elements: usize, num_points: usize) -> ([Vec<f64>; NUM_DIMS], Vec<[u32; NODES_PER_ELEM]>) {
    let mut coord: [Vec<f64>; NUM_DIMS] = std::array::from_fn(|_| Vec::with_capacity(num_points));
    for p in 0..num_points {
        let t = (p + 1) as f64 / (num_points + 1) as f64;
        coord[0].push(t);
        coord[1].push(t * t);
        coord[2].push(t * t * t);
    }
    let n = num_points as u32;
    let mut combos = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    combos.push([a, b, c, d]);
                }
            }
        }
    }
    let lnods = (0..num_elements).map(|e| combos[e % combos.len()]).collect();
    (coord, lnods)
}
