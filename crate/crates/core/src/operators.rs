//! Closed-form semigroups of the delay generator and its adjoint.
//!
//! `A x = (a·x0 + x1(0), -x1')` transports the tail towards `ξ = 0`, where
//! it is absorbed into the head; `A*` does the converse, spreading the head
//! backwards into the tail. Both semigroups have explicit formulas, applied
//! here node by node. Tails shifted off-grid are linearly interpolated.
//!
//! Indicator functions are sampled by dual-cell coverage: node `j` carries
//! the fraction of `[ξ_j - h/2, ξ_j + h/2]` (clipped to the segment) where the
//! indicator is one. A jump exactly on an interior node therefore gives the
//! mean of the one-sided limits, a jump on an endpoint gives the limit from
//! inside the segment, and trapezoidal sums over discontinuous tails stay
//! second-order accurate wherever the jump falls.

use crate::error::{Error, Result};
use crate::hilbert::{inner_product, HilbertPoint, SegmentGrid, TailFunction, NODE_EPS};

/// Parameters of the drift operator a semigroup is generated from.
///
/// The plain generator is `A` with rate `a`. [`DriftSpec::with_coupling`]
/// gives `A + Γ0`, which is the same operator with `a` replaced by `a + γ0`;
/// [`DriftSpec::with_discount`] gives `A - r` (resp. `A* - r`), whose
/// semigroup is `e^{-rt}` times the undiscounted one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec {
    a: f64,
    gamma0: f64,
    discount: f64,
}

impl DriftSpec {
    pub fn new(a: f64) -> Self {
        Self {
            a,
            gamma0: 0.0,
            discount: 0.0,
        }
    }

    pub fn with_coupling(self, gamma0: f64) -> Self {
        Self { gamma0, ..self }
    }

    pub fn with_discount(self, r: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::invalid("r", format!("discount rate must be >= 0, got {r}")));
        }
        Ok(Self { discount: r, ..self })
    }

    /// `a + γ0`: the head growth rate actually used by the semigroup.
    pub fn rate(&self) -> f64 {
        self.a + self.gamma0
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    fn discount_factor(&self, t: f64) -> f64 {
        (-self.discount * t).exp()
    }
}

/// The control operator `B u = u·(b0, b1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInjection {
    b0: f64,
    b1: TailFunction,
}

impl ControlInjection {
    pub fn new(b0: f64, b1: TailFunction) -> Result<Self> {
        if !(b0 >= 0.0 && b0.is_finite()) {
            return Err(Error::invalid("b0", format!("must be >= 0 (standing sign assumption on b0, b1, r), got {b0}")));
        }
        if let Some(j) = b1.values().iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(
                "b1",
                format!("must be nonnegative (standing sign assumption on b0, b1, r); sample {j} is {}", b1.values()[j]),
            ));
        }
        Ok(Self { b0, b1 })
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn b1(&self) -> &TailFunction {
        &self.b1
    }

    /// The vector `b = (b0, b1) ∈ H`.
    pub fn as_point(&self) -> HilbertPoint {
        HilbertPoint::new(self.b0, self.b1.clone())
    }
}

/// Sample of `1{ξ >= boundary}` at node `j`: the fraction of the node's
/// dual cell (`[ξ_j - h/2, ξ_j + h/2]` clipped to `[-d, 0]`) lying at or
/// above `boundary`.
pub(crate) fn step_up(grid: &SegmentGrid, j: usize, boundary: f64) -> f64 {
    let h = grid.spacing();
    let xi = grid.node(j);
    let (lo, hi) = if j == 0 {
        (xi, xi + 0.5 * h)
    } else if j + 1 == grid.n_nodes() {
        (xi - 0.5 * h, xi)
    } else {
        (xi - 0.5 * h, xi + 0.5 * h)
    };
    coverage(lo, hi, boundary)
}

/// Fraction of `[lo, hi]` at or above `boundary`.
pub(crate) fn coverage(lo: f64, hi: f64, boundary: f64) -> f64 {
    let frac = ((hi - boundary) / (hi - lo)).clamp(0.0, 1.0);
    // Snap roundoff so that boundaries on cell edges give exact 0, 1/2, 1.
    let snapped = (2.0 * frac).round() / 2.0;
    if (frac - snapped).abs() <= NODE_EPS {
        snapped
    } else {
        frac
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NegativeTime(t))
    }
}

/// `e^{tA} x`.
///
/// Head: `e^{at} x0 + ∫_{-min(t,d)}^0 e^{a(t+s)} x1(s) ds`.
/// Tail: `x1(ξ - t)` for `ξ >= t - d`, zero before.
pub fn semigroup_a(t: f64, x: &HilbertPoint, spec: &DriftSpec) -> Result<HilbertPoint> {
    let head = semigroup_a_head(t, x, spec)?;
    let grid = *x.grid();
    let d = grid.delay();
    let disc = spec.discount_factor(t);

    let boundary = t - d;
    let tail = (0..grid.n_nodes())
        .map(|j| {
            let w = step_up(&grid, j, boundary);
            if w == 0.0 {
                0.0
            } else {
                let src = (grid.node(j) - t).max(-d);
                disc * w * x.tail.eval_unchecked(src)
            }
        })
        .collect();
    Ok(HilbertPoint::new(head, TailFunction::new(grid, tail)?))
}

/// Head component of [`semigroup_a`], without building the shifted tail.
pub fn semigroup_a_head(t: f64, x: &HilbertPoint, spec: &DriftSpec) -> Result<f64> {
    check_time(t)?;
    let grid = x.grid();
    let a = spec.rate();
    let absorbed = grid.trapezoid_from(-t.min(grid.delay()), |s| (a * (t + s)).exp() * x.tail.eval_unchecked(s));
    Ok(spec.discount_factor(t) * ((a * t).exp() * x.head + absorbed))
}

/// `e^{tA*} x`.
///
/// Head: `e^{at} x0`. Tail: `e^{a(ξ+t)} x0` for `ξ >= -t`, plus `x1(ξ + t)`
/// for `ξ <= -t`.
pub fn semigroup_a_star(t: f64, x: &HilbertPoint, spec: &DriftSpec) -> Result<HilbertPoint> {
    check_time(t)?;
    let grid = *x.grid();
    let a = spec.rate();
    let disc = spec.discount_factor(t);

    let head = disc * (a * t).exp() * x.head;
    let tail = (0..grid.n_nodes())
        .map(|j| {
            let xi = grid.node(j);
            let spread = step_up(&grid, j, -t);
            let shifted = 1.0 - spread;
            let mut v = 0.0;
            if spread > 0.0 {
                v += spread * (a * (xi + t)).exp() * x.head;
            }
            if shifted > 0.0 {
                v += shifted * x.tail.eval_unchecked((xi + t).min(0.0));
            }
            disc * v
        })
        .collect();
    Ok(HilbertPoint::new(head, TailFunction::new(grid, tail)?))
}

/// `B* x = <b, x> = b0 x0 + ∫ b1 x1`.
pub fn b_pairing(x: &HilbertPoint, inj: &ControlInjection) -> Result<f64> {
    Ok(inj.b0 * x.head + inj.b1.dot(&x.tail)?)
}

/// `|<e^{tA} x, y> - <x, e^{tA*} y>|`.
pub fn adjoint_residual(t: f64, x: &HilbertPoint, y: &HilbertPoint, spec: &DriftSpec) -> Result<f64> {
    let lhs = inner_product(&semigroup_a(t, x, spec)?, y)?;
    let rhs = inner_product(x, &semigroup_a_star(t, y, spec)?)?;
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::norm;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(d: f64, n: usize) -> SegmentGrid {
        SegmentGrid::new(d, n).unwrap()
    }

    fn smooth_point(g: SegmentGrid, head: f64, c: [f64; 3]) -> HilbertPoint {
        HilbertPoint::new(
            head,
            TailFunction::from_fn(g, |xi| c[0] + c[1] * (2.0 * xi).sin() + c[2] * xi * xi),
        )
    }

    fn assert_points_close(x: &HilbertPoint, y: &HilbertPoint, tol: f64) {
        assert_abs_diff_eq!(x.head, y.head, epsilon = tol);
        for (a, b) in x.tail.values().iter().zip(y.tail.values()) {
            assert_abs_diff_eq!(a, b, epsilon = tol);
        }
    }

    #[test]
    fn time_zero_is_identity() {
        let g = grid(1.0, 51);
        let x = smooth_point(g, 0.7, [0.3, -1.1, 0.4]);
        let spec = DriftSpec::new(-0.4).with_discount(0.1).unwrap();
        assert_eq!(semigroup_a(0.0, &x, &spec).unwrap(), x);
        assert_eq!(semigroup_a_star(0.0, &x, &spec).unwrap(), x);
        assert_eq!(adjoint_residual(0.0, &x, &x, &spec).unwrap(), 0.0);
    }

    #[test]
    fn negative_time_is_rejected() {
        let x = HilbertPoint::zero(grid(1.0, 5));
        let spec = DriftSpec::new(0.0);
        assert!(matches!(semigroup_a(-0.1, &x, &spec), Err(Error::NegativeTime(_))));
        assert!(semigroup_a_star(-1e-3, &x, &spec).is_err());
    }

    #[test]
    fn head_only_points_grow_exponentially_under_a() {
        let g = grid(1.0, 41);
        let spec = DriftSpec::new(0.3);
        for t in [0.2, 1.0, 2.5] {
            let y = semigroup_a(t, &HilbertPoint::head_only(2.0, g), &spec).unwrap();
            assert_abs_diff_eq!(y.head, 2.0 * (0.3 * t).exp(), epsilon = 1e-14);
            assert!(y.tail.is_zero());
        }
    }

    #[test]
    fn transport_example() {
        // a = 0, d = 1, t = 0.5, x = (1, 1): head 1.5, tail the indicator of [-0.5, 0].
        let g = grid(1.0, 201);
        let x = HilbertPoint::new(1.0, TailFunction::constant(g, 1.0));
        let y = semigroup_a(0.5, &x, &DriftSpec::new(0.0)).unwrap();
        assert_abs_diff_eq!(y.head, 1.5, epsilon = 1e-12);
        for (j, xi) in g.nodes().enumerate() {
            let v = y.tail.values()[j];
            if (xi + 0.5).abs() < 1e-12 {
                // Jump node: mean of the one-sided limits.
                assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
            } else {
                assert_abs_diff_eq!(v, if xi > -0.5 { 1.0 } else { 0.0 }, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn adjoint_spreads_head_over_whole_segment_after_delay() {
        let g = grid(1.0, 101);
        let spec = DriftSpec::new(0.0);
        for t in [1.0, 1.7] {
            let y = semigroup_a_star(t, &HilbertPoint::head_only(1.0, g), &spec).unwrap();
            assert_eq!(y.head, 1.0);
            assert!(y.tail.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        }
        let x = HilbertPoint::new(0.0, TailFunction::from_fn(g, |xi| xi.cos()));
        for t in [1.0, 1.2] {
            let y = semigroup_a_star(t, &x, &spec).unwrap();
            assert_eq!(y.head, 0.0);
            assert!(y.tail.is_zero());
        }
    }

    #[test]
    fn discount_is_a_scalar_factor() {
        let g = grid(1.0, 31);
        let x = smooth_point(g, 1.2, [0.5, 0.2, -0.3]);
        let plain = DriftSpec::new(0.2);
        let disc = plain.with_discount(0.3).unwrap();
        let t = 0.37;
        let expect = semigroup_a_star(t, &x, &plain).unwrap().scaled((-0.3f64 * t).exp());
        assert_points_close(&semigroup_a_star(t, &x, &disc).unwrap(), &expect, 1e-14);
        let expect = semigroup_a(t, &x, &plain).unwrap().scaled((-0.3f64 * t).exp());
        assert_points_close(&semigroup_a(t, &x, &disc).unwrap(), &expect, 1e-14);
    }

    #[test]
    fn shifted_generator_is_rate_substitution() {
        let g = grid(1.0, 31);
        let x = smooth_point(g, -0.4, [1.0, 0.5, 0.1]);
        let shifted = DriftSpec::new(-0.5).with_coupling(0.2);
        let substituted = DriftSpec::new(-0.3);
        assert_eq!(shifted.rate(), substituted.rate());
        assert_eq!(semigroup_a(0.8, &x, &shifted).unwrap(), semigroup_a(0.8, &x, &substituted).unwrap());
        assert_eq!(semigroup_a_star(0.8, &x, &shifted).unwrap(), semigroup_a_star(0.8, &x, &substituted).unwrap());
    }

    #[test]
    fn semigroup_law_on_smooth_tails() {
        let g = grid(1.0, 401);
        let spec = DriftSpec::new(-0.3);
        // Tail vanishing at -d keeps e^{tA} x continuous.
        let x = HilbertPoint::new(0.8, TailFunction::from_fn(g, |xi| (xi + 1.0) * (1.5 * xi).cos()));
        let (s, t) = (0.23, 0.41);
        let once = semigroup_a(s + t, &x, &spec).unwrap();
        let twice = semigroup_a(t, &semigroup_a(s, &x, &spec).unwrap(), &spec).unwrap();
        let scale = norm(&once).max(1.0);
        assert!(norm(&once.axpy(-1.0, &twice).unwrap()) <= 1e-3 * scale);

        let y = smooth_point(g, 0.6, [0.6, 0.0, 0.0]);
        let y = HilbertPoint::new(y.head, TailFunction::from_fn(g, |xi| 0.6 * (0.3 * xi).exp()));
        let once = semigroup_a_star(s + t, &y, &spec).unwrap();
        let twice = semigroup_a_star(t, &semigroup_a_star(s, &y, &spec).unwrap(), &spec).unwrap();
        assert!(norm(&once.axpy(-1.0, &twice).unwrap()) <= 1e-3 * norm(&once).max(1.0));
    }

    #[test]
    fn b_pairing_examples() {
        let g = grid(1.0, 11);
        let inj = ControlInjection::new(2.0, TailFunction::zeros(g)).unwrap();
        assert_eq!(b_pairing(&HilbertPoint::head_only(1.0, g), &inj).unwrap(), 2.0);
        let inj = ControlInjection::new(0.0, TailFunction::constant(g, 1.0)).unwrap();
        let x = HilbertPoint::new(0.0, TailFunction::constant(g, 1.0));
        assert_abs_diff_eq!(b_pairing(&x, &inj).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn injection_enforces_sign_constraints() {
        let g = grid(1.0, 11);
        let err = ControlInjection::new(-0.1, TailFunction::zeros(g)).unwrap_err();
        assert!(err.to_string().contains("b0"));
        let err = ControlInjection::new(1.0, TailFunction::from_fn(g, |xi| xi + 0.5)).unwrap_err();
        assert!(err.to_string().contains("b1"));
    }

    #[test]
    fn aligned_adjoint_residual_is_roundoff() {
        // When t is a multiple of the spacing both sides are the same trapezoidal sum.
        let g = grid(1.0, 201);
        let x = smooth_point(g, 0.9, [0.4, 1.0, -0.7]);
        let y = smooth_point(g, -1.3, [1.1, -0.2, 0.5]);
        let spec = DriftSpec::new(-0.2).with_coupling(0.1);
        for t in [0.1, 0.5, 1.0, 1.5] {
            assert!(adjoint_residual(t, &x, &y, &spec).unwrap() < 1e-12);
        }
    }

    fn point_strategy() -> impl Strategy<Value = (f64, [f64; 3], f64, [f64; 3], f64, f64)> {
        (
            -2.0..2.0f64,
            prop::array::uniform3(-2.0..2.0f64),
            -2.0..2.0f64,
            prop::array::uniform3(-2.0..2.0f64),
            0.0..2.0f64,
            -1.0..1.0f64,
        )
    }

    proptest! {
        #[test]
        fn operators_are_linear((h1, c1, h2, c2, t, a) in point_strategy(), k in -3.0..3.0f64) {
            let g = grid(1.0, 41);
            let x = smooth_point(g, h1, c1);
            let y = smooth_point(g, h2, c2);
            let spec = DriftSpec::new(a).with_discount(0.1).unwrap();
            let combo = x.axpy(k, &y).unwrap();
            for op in [semigroup_a, semigroup_a_star] {
                let lhs = op(t, &combo, &spec).unwrap();
                let rhs = op(t, &x, &spec).unwrap().axpy(k, &op(t, &y, &spec).unwrap()).unwrap();
                let scale = 1.0 + norm(&lhs);
                prop_assert!(norm(&lhs.axpy(-1.0, &rhs).unwrap()) <= 1e-12 * scale);
            }
        }

        #[test]
        fn adjoint_residual_small_on_smooth_points((h1, c1, h2, c2, t, a) in point_strategy(), d in 0.5..2.0f64) {
            let g = grid(d, 201);
            let x = smooth_point(g, h1, c1);
            let y = smooth_point(g, h2, c2);
            let spec = DriftSpec::new(a);
            let res = adjoint_residual(t, &x, &y, &spec).unwrap();
            prop_assert!(res <= 1e-3 * norm(&x) * norm(&y) + 1e-14, "residual {res}");
        }

        #[test]
        fn pairing_is_inner_product_with_b((h1, c1, h2, c2, _t, _a) in point_strategy()) {
            let g = grid(1.0, 21);
            let b = smooth_point(g, h1.abs(), [c1[0].abs() + 2.0, 0.0, c1[2].abs()]);
            let inj = ControlInjection::new(b.head, b.tail.clone()).unwrap();
            let x = smooth_point(g, h2, c2);
            prop_assert_eq!(b_pairing(&x, &inj).unwrap(), inner_product(&inj.as_point(), &x).unwrap());
        }
    }
}
