//! The state space `H = ℝ × L²([-d, 0])`.
//!
//! A point of `H` is a scalar *head* (the current goodwill level) together
//! with a *tail* function on the delay segment `[-d, 0]`. Tails are sampled
//! on a uniform grid and integrated with the composite trapezoidal rule, so
//! the inner product
//!
//! ```text
//! <x, y> = x0 * y0 + ∫_{-d}^0 x1(ξ) y1(ξ) dξ
//! ```
//!
//! is exact for piecewise-linear tails whose breakpoints sit on grid nodes
//! and second-order accurate for smooth ones. Off-node values are obtained
//! by linear interpolation; asking for a value outside `[-d, 0]` is an error.

use crate::error::{Error, Result};

/// Relative tolerance (in units of the grid spacing) used to decide that a
/// coordinate coincides with a grid node.
pub(crate) const NODE_EPS: f64 = 1e-9;

/// Uniform grid `ξ_j = -d + j·d/(n-1)` on the delay segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentGrid {
    delay: f64,
    n_nodes: usize,
}

impl SegmentGrid {
    pub fn new(delay: f64, n_nodes: usize) -> Result<Self> {
        if !(delay.is_finite() && delay > 0.0) {
            return Err(Error::invalid("d", format!("delay must be positive and finite, got {delay}")));
        }
        if n_nodes < 2 {
            return Err(Error::invalid("n_nodes", format!("need at least 2 nodes, got {n_nodes}")));
        }
        Ok(Self { delay, n_nodes })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn spacing(&self) -> f64 {
        self.delay / (self.n_nodes - 1) as f64
    }

    /// The `j`-th node. The last node is exactly `0.0`.
    pub fn node(&self, j: usize) -> f64 {
        debug_assert!(j < self.n_nodes);
        if j + 1 == self.n_nodes {
            0.0
        } else {
            -self.delay + j as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n_nodes).map(move |j| self.node(j))
    }

    /// Index of the node within `NODE_EPS` spacings of `xi`, if any.
    pub fn node_at(&self, xi: f64) -> Option<usize> {
        let h = self.spacing();
        let pos = (xi + self.delay) / h;
        let j = pos.round();
        if j < 0.0 || j > (self.n_nodes - 1) as f64 {
            return None;
        }
        ((pos - j).abs() <= NODE_EPS).then_some(j as usize)
    }

    /// Cell index `j` and fraction `w ∈ [0, 1]` with `xi = ξ_j + w·h`.
    ///
    /// Points within `NODE_EPS` spacings outside the segment are clamped.
    pub fn locate(&self, xi: f64) -> Result<(usize, f64)> {
        let h = self.spacing();
        let pos = (xi + self.delay) / h;
        let last = (self.n_nodes - 1) as f64;
        if !pos.is_finite() || pos < -NODE_EPS || pos > last + NODE_EPS {
            return Err(Error::OutOfSegment {
                point: xi,
                delay: self.delay,
            });
        }
        let pos = pos.clamp(0.0, last);
        let nearest = pos.round();
        let pos = if (pos - nearest).abs() <= NODE_EPS { nearest } else { pos };
        let j = (pos.floor() as usize).min(self.n_nodes - 2);
        Ok((j, pos - j as f64))
    }

    /// Composite trapezoidal rule over the whole segment.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_nodes);
        let n = values.len();
        let interior: f64 = values[1..n - 1].iter().sum();
        self.spacing() * (0.5 * (values[0] + values[n - 1]) + interior)
    }

    /// Trapezoidal rule for `∫_{lower}^0 f(ξ) dξ`, `lower ∈ [-d, 0]`.
    ///
    /// Nodes at or above `lower` carry the usual weights; when `lower` falls
    /// strictly inside a cell, the partial cell `[lower, ξ_k]` is added as a
    /// single trapezoid using `f(lower)`.
    pub fn trapezoid_from(&self, lower: f64, f: impl Fn(f64) -> f64) -> f64 {
        let h = self.spacing();
        let last = self.n_nodes - 1;
        let pos = ((lower + self.delay) / h).clamp(0.0, last as f64);
        let nearest = pos.round();
        let (first, partial) = if (pos - nearest).abs() <= NODE_EPS {
            (nearest as usize, None)
        } else {
            let k = pos.ceil() as usize;
            (k, Some(self.node(k) - lower))
        };
        let mut acc = 0.0;
        if first < last {
            let mut interior = 0.0;
            for j in first + 1..last {
                interior += f(self.node(j));
            }
            acc = h * (0.5 * (f(self.node(first)) + f(0.0)) + interior);
        }
        if let Some(width) = partial {
            acc += 0.5 * width * (f(lower) + f(self.node(first)));
        }
        acc
    }
}

/// Grid samples of a square-integrable function on `[-d, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFunction {
    grid: SegmentGrid,
    values: Vec<f64>,
}

impl TailFunction {
    pub fn new(grid: SegmentGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("tail", format!("sample {j} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: SegmentGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: SegmentGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: SegmentGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_nodes()],
        }
    }

    pub fn grid(&self) -> &SegmentGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation at `xi ∈ [-d, 0]`.
    pub fn eval(&self, xi: f64) -> Result<f64> {
        let (j, w) = self.grid.locate(xi)?;
        Ok(self.values[j] + w * (self.values[j + 1] - self.values[j]))
    }

    pub(crate) fn eval_unchecked(&self, xi: f64) -> f64 {
        self.eval(xi).expect("evaluation point inside the delay segment")
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| k * v).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "(d = {}, n = {}) vs (d = {}, n = {})",
                self.grid.delay(),
                self.grid.n_nodes(),
                other.grid.delay(),
                other.grid.n_nodes()
            )));
        }
        Ok(())
    }

    /// `∫ self · other` by the trapezoidal rule.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_grid(other)?;
        let prod: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(self.grid.trapezoid(&prod))
    }
}

/// A point `(x0, x1) ∈ H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertPoint {
    pub head: f64,
    pub tail: TailFunction,
}

impl HilbertPoint {
    pub fn new(head: f64, tail: TailFunction) -> Self {
        Self { head, tail }
    }

    pub fn zero(grid: SegmentGrid) -> Self {
        Self::new(0.0, TailFunction::zeros(grid))
    }

    /// `(head, 0)`.
    pub fn head_only(head: f64, grid: SegmentGrid) -> Self {
        Self::new(head, TailFunction::zeros(grid))
    }

    pub fn grid(&self) -> &SegmentGrid {
        self.tail.grid()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(k * self.head, self.tail.scaled(k))
    }

    /// `self + k·other`.
    pub fn axpy(&self, k: f64, other: &Self) -> Result<Self> {
        self.tail.check_grid(&other.tail)?;
        let values = self
            .tail
            .values
            .iter()
            .zip(&other.tail.values)
            .map(|(a, b)| a + k * b)
            .collect();
        Ok(Self::new(
            self.head + k * other.head,
            TailFunction {
                grid: *self.grid(),
                values,
            },
        ))
    }
}

pub fn inner_product(x: &HilbertPoint, y: &HilbertPoint) -> Result<f64> {
    Ok(x.head * y.head + x.tail.dot(&y.tail)?)
}

pub fn norm(x: &HilbertPoint) -> f64 {
    let tail_sq = x.tail.grid.trapezoid(&x.tail.values.iter().map(|v| v * v).collect::<Vec<_>>());
    (x.head * x.head + tail_sq).sqrt()
}

/// Lifts a scalar goodwill level and a past spending profile into `H`.
///
/// The tail carries the pending carryover effect of past advertising,
/// `x1(ζ) = ∫_{-d}^{ζ} b1(ξ) δ(ξ - ζ) dξ`, so `x1(-d) = 0`.
pub fn embed_initial_state(x: f64, b1: &TailFunction, delta: &TailFunction) -> Result<HilbertPoint> {
    b1.check_grid(delta)?;
    let grid = *b1.grid();
    let h = grid.spacing();
    let mut tail = vec![0.0; grid.n_nodes()];
    let mut integrand = Vec::with_capacity(grid.n_nodes());
    for (j, slot) in tail.iter_mut().enumerate().skip(1) {
        let zeta = grid.node(j);
        integrand.clear();
        for i in 0..=j {
            let xi = grid.node(i);
            integrand.push(b1.values[i] * delta.eval_unchecked((xi - zeta).max(-grid.delay())));
        }
        let interior: f64 = integrand[1..j].iter().sum();
        *slot = h * (0.5 * (integrand[0] + integrand[j]) + interior);
    }
    Ok(HilbertPoint::new(x, TailFunction { grid, values: tail }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use approx::assert_abs_diff_eq;

    fn grid(d: f64, n: usize) -> SegmentGrid {
        SegmentGrid::new(d, n).unwrap()
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = grid(1.3, 7);
        assert_eq!(g.node(0), -1.3);
        assert_eq!(g.node(6), 0.0);
        let h = g.spacing();
        for j in 1..7 {
            assert_abs_diff_eq!(g.node(j) - g.node(j - 1), h, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SegmentGrid::new(0.0, 10).is_err());
        assert!(SegmentGrid::new(1.0, 1).is_err());
        assert!(SegmentGrid::new(f64::NAN, 10).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let g = grid(1.0, 11);
        let x = HilbertPoint::head_only(1.0, g);
        let y = HilbertPoint::head_only(2.0, g);
        assert_eq!(inner_product(&x, &y).unwrap(), 2.0);

        let ones = HilbertPoint::new(0.0, TailFunction::constant(g, 1.0));
        assert_abs_diff_eq!(inner_product(&ones, &ones).unwrap(), 1.0, epsilon = 1e-14);

        let g = grid(1.0, 101);
        let x = HilbertPoint::new(0.0, TailFunction::from_fn(g, |xi| xi));
        let y = HilbertPoint::new(0.0, TailFunction::constant(g, 1.0));
        assert_abs_diff_eq!(inner_product(&x, &y).unwrap(), -0.5, epsilon = 1e-4);
    }

    #[test]
    fn inner_product_rejects_mismatched_grids() {
        let x = HilbertPoint::zero(grid(1.0, 11));
        let y = HilbertPoint::zero(grid(1.0, 12));
        assert!(matches!(inner_product(&x, &y), Err(Error::GridMismatch(_))));
        let y = HilbertPoint::zero(grid(2.0, 11));
        assert!(inner_product(&x, &y).is_err());
    }

    #[test]
    fn norm_examples() {
        let g = grid(1.0, 21);
        assert_eq!(norm(&HilbertPoint::zero(g)), 0.0);
        assert_eq!(norm(&HilbertPoint::head_only(3.0, g)), 3.0);
        let twos = HilbertPoint::new(0.0, TailFunction::constant(g, 2.0));
        assert_abs_diff_eq!(norm(&twos), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn quadrature_is_second_order() {
        // ∫_{-1}^0 sin(3ξ) e^ξ dξ, closed form.
        let exact = {
            let f = |x: f64| x.exp() * ((3.0 * x).sin() - 3.0 * (3.0 * x).cos()) / 10.0;
            f(0.0) - f(-1.0)
        };
        let err = |n: usize| {
            let g = grid(1.0, n);
            let x = HilbertPoint::new(0.0, TailFunction::from_fn(g, |xi| (3.0 * xi).sin()));
            let y = HilbertPoint::new(0.0, TailFunction::from_fn(g, f64::exp));
            (inner_product(&x, &y).unwrap() - exact).abs()
        };
        let (e1, e2, e3) = (err(41), err(81), err(161));
        assert!((e1 / e2).log2() > 1.9, "{e1} {e2}");
        assert!((e2 / e3).log2() > 1.9, "{e2} {e3}");
    }

    #[test]
    fn trapezoid_from_matches_analytic_partial_integrals() {
        let g = grid(1.0, 201);
        // On a node.
        assert_abs_diff_eq!(g.trapezoid_from(-0.5, |_| 1.0), 0.5, epsilon = 1e-13);
        // Inside a cell; linear integrand is integrated exactly.
        assert_abs_diff_eq!(g.trapezoid_from(-0.3217, |xi| 2.0 * xi + 1.0), 0.3217 - 0.3217 * 0.3217, epsilon = 1e-13);
        assert_eq!(g.trapezoid_from(0.0, |_| 5.0), 0.0);
        assert_abs_diff_eq!(g.trapezoid_from(-1.0, |_| 1.0), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn eval_interpolates_and_refuses_extrapolation() {
        let g = grid(2.0, 5);
        let f = TailFunction::from_fn(g, |xi| 3.0 * xi + 1.0);
        assert_abs_diff_eq!(f.eval(-1.3).unwrap(), -2.9, epsilon = 1e-14);
        assert!(matches!(f.eval(0.1), Err(Error::OutOfSegment { .. })));
        assert!(f.eval(-2.01).is_err());
    }

    #[test]
    fn embedding_examples() {
        let g = grid(1.0, 201);
        let b1 = TailFunction::from_fn(g, |xi| 1.0 + xi);
        let zero = TailFunction::zeros(g);
        assert!(embed_initial_state(0.7, &b1, &zero).unwrap().tail.is_zero());
        assert!(embed_initial_state(0.7, &zero, &TailFunction::constant(g, 2.0)).unwrap().tail.is_zero());

        let ones = TailFunction::constant(g, 1.0);
        let x = embed_initial_state(0.7, &ones, &ones).unwrap();
        assert_eq!(x.head, 0.7);
        assert_abs_diff_eq!(x.tail.eval(0.0).unwrap(), 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(x.tail.eval(-0.5).unwrap(), 0.5, epsilon = 1e-4);
        assert_eq!(x.tail.values()[0], 0.0);
    }

    #[test]
    fn embedding_rejects_mismatched_grids() {
        let b1 = TailFunction::zeros(grid(1.0, 11));
        let delta = TailFunction::zeros(grid(1.0, 21));
        assert!(embed_initial_state(0.0, &b1, &delta).is_err());
    }

    fn point_from(g: SegmentGrid, head: f64, c: [f64; 3]) -> HilbertPoint {
        HilbertPoint::new(head, TailFunction::from_fn(g, |xi| c[0] + c[1] * (4.0 * xi).cos() + c[2] * xi.powi(3)))
    }

    fn coeffs() -> impl Strategy<Value = (f64, [f64; 3])> {
        (-3.0..3.0f64, proptest::array::uniform3(-3.0..3.0f64))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn grid_endpoints_and_spacing(d in 0.01..50.0f64, n in 2usize..2000) {
            let g = grid(d, n);
            prop_assert_eq!(g.node(0), -d);
            prop_assert_eq!(g.node(n - 1), 0.0);
            let h = g.spacing();
            for j in 1..n {
                prop_assert!(((g.node(j) - g.node(j - 1)) - h).abs() <= 1e-12 * d.max(1.0));
            }
        }

        #[test]
        fn inner_product_is_bilinear(
            x in coeffs(), y in coeffs(), z in coeffs(),
            k in -5.0..5.0f64, m in -5.0..5.0f64, d in 0.2..3.0f64,
        ) {
            let g = grid(d, 57);
            let (x, y, z) = (point_from(g, x.0, x.1), point_from(g, y.0, y.1), point_from(g, z.0, z.1));
            let combo = x.scaled(k).axpy(m, &y).unwrap();
            let lhs = inner_product(&combo, &z).unwrap();
            let rhs = k * inner_product(&x, &z).unwrap() + m * inner_product(&y, &z).unwrap();
            let scale = (k.abs() * norm(&x) + m.abs() * norm(&y)) * norm(&z);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn cauchy_schwarz(x in coeffs(), y in coeffs(), d in 0.2..3.0f64, n in 2usize..300) {
            let g = grid(d, n);
            let (x, y) = (point_from(g, x.0, x.1), point_from(g, y.0, y.1));
            prop_assert!(inner_product(&x, &y).unwrap().abs() <= norm(&x) * norm(&y) + 1e-12);
        }

        #[test]
        fn embedding_vanishes_at_the_far_end(b in coeffs(), p in coeffs(), n in 2usize..200) {
            let g = grid(1.0, n);
            let b1 = TailFunction::from_fn(g, |xi| (b.1[0] + b.1[1] * xi).abs());
            let delta = TailFunction::from_fn(g, |xi| p.1[0] + p.1[2] * xi);
            let x = embed_initial_state(b.0, &b1, &delta).unwrap();
            prop_assert_eq!(x.tail.values()[0], 0.0);
            prop_assert_eq!(x.head, b.0);
        }
    }
}
