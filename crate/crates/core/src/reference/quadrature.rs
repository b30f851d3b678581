use crate::mesh::{NODES_PER_ELEM, NUM_DIMS};
use crate::scalar::Real;

/// Interior point of the symmetric 4-point rule (barycentric weight of the
/// "near" vertex) and the matching far weight.
pub const FOUR_POINT_A: f64 = 0.5854101966249685;
pub const FOUR_POINT_B: f64 = 0.1381966011250105;

/// Reference-tetrahedron quadrature with P1 shape functions.
///
/// Reference coordinates are `(xi, eta, zeta)` with `N0 = 1 - xi - eta - zeta`,
/// `N1 = xi`, `N2 = eta`, `N3 = zeta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature<T> {
    pub points: Vec<[T; NUM_DIMS]>,
    pub weights: Vec<T>,
    /// `shape[g][n]`: value of `N_n` at point `g`.
    pub shape: Vec<[T; NODES_PER_ELEM]>,
    /// `refgrad[n][k]`: derivative of `N_n` along reference axis `k`.
    pub refgrad: [[T; NUM_DIMS]; NODES_PER_ELEM],
}

impl<T: Real> Quadrature<T> {
    /// Builds a rule from reference points and weights.
    ///
    /// Returns `None` if the rule is empty or the weights do not sum to the
    /// reference volume 1/6.
    pub fn new(points: Vec<[T; NUM_DIMS]>, weights: Vec<T>) -> Option<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return None;
        }
        let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if (total - 1.0 / 6.0).abs() > 1e-12_f64.max(8.0 * T::epsilon().as_f64()) {
            return None;
        }
        let shape = points.iter().map(|p| [T::one() - p[0] - p[1] - p[2], p[0], p[1], p[2]]).collect();
        let (o, z, m) = (T::one(), T::zero(), -T::one());
        let refgrad = [[m, m, m], [o, z, z], [z, o, z], [z, z, o]];
        Some(Quadrature { points, weights, shape, refgrad })
    }

    /// Symmetric 4-point rule, exact for quadratics, weights 1/24.
    pub fn four_point() -> Self {
        let (a, b) = (T::lit(FOUR_POINT_A), T::lit(FOUR_POINT_B));
        let w = T::lit(1.0 / 24.0);
        Self::new(vec![[b, b, b], [a, b, b], [b, a, b], [b, b, a]], vec![w; 4]).expect("valid rule")
    }

    /// One point at the centroid, weight 1/6.
    pub fn centroid() -> Self {
        let q = T::lit(0.25);
        Self::new(vec![[q, q, q]], vec![T::lit(1.0 / 6.0)]).expect("valid rule")
    }

    /// Rule with `n` points; supported sizes are 1 and 4.
    pub fn with_points(n: usize) -> Option<Self> {
        match n {
            1 => Some(Self::centroid()),
            4 => Some(Self::four_point()),
            _ => None,
        }
    }

    pub fn num_gauss(&self) -> usize {
        self.points.len()
    }

    pub fn cast<U: Real>(&self) -> Quadrature<U> {
        let c = |v: T| U::lit(v.as_f64());
        Quadrature {
            points: self.points.iter().map(|p| p.map(c)).collect(),
            weights: self.weights.iter().map(|&w| c(w)).collect(),
            shape: self.shape.iter().map(|s| s.map(c)).collect(),
            refgrad: self.refgrad.map(|r| r.map(c)),
        }
    }
}

impl<T: Real> Default for Quadrature<T> {
    fn default() -> Self {
        Self::four_point()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_invariants() {
        for q in [Quadrature::<f64>::four_point(), Quadrature::centroid()] {
            let wsum: f64 = q.weights.iter().sum();
            assert!((wsum - 1.0 / 6.0).abs() < 1e-16);
            for s in &q.shape {
                assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
            for k in 0..3 {
                assert_eq!((0..4).map(|n| q.refgrad[n][k]).sum::<f64>(), 0.0);
            }
        }
    }

    #[test]
    fn four_point_integrates_quadratics() {
        // Integral of xi^2 over the reference tetrahedron is 1/60.
        let q = Quadrature::<f64>::four_point();
        let v: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((v - 1.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_nodal_shares() {
        let q = Quadrature::<f64>::four_point();
        for n in 0..4 {
            let share: f64 = (0..4).map(|g| q.weights[g] * q.shape[g][n]).sum();
            assert!((share - 1.0 / 24.0).abs() < 1e-17);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(Quadrature::<f64>::new(vec![[0.25; 3]], vec![0.1]).is_none());
        assert!(Quadrature::<f64>::with_points(3).is_none());
    }
}
