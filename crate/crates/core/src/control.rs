//! Deterministic advertising schedules and the delayed convolution they feed.

use crate::error::{Error, Result};
use crate::hilbert::{HilbertPoint, SegmentGrid, TailFunction};
use crate::operators::{coverage, step_up};
use crate::params::TimeGrid;

/// An open-loop spending schedule: the given past `δ` on `[-d, 0]` and the
/// chosen spend on `[0, T]`, sampled on a time grid.
///
/// The path may jump at `s = 0`; `δ(0)` is the left limit and
/// `future[0]` the right limit.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    past: TailFunction,
    time: TimeGrid,
    future: Vec<f64>,
}

impl ControlPath {
    pub fn new(past: TailFunction, time: TimeGrid, future: Vec<f64>) -> Result<Self> {
        if future.len() != time.len() {
            return Err(Error::GridMismatch(format!(
                "control has {} samples but the time grid has {} points",
                future.len(),
                time.len()
            )));
        }
        if let Some(i) = future.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("control", format!("sample {i} is not finite")));
        }
        Ok(Self { past, time, future })
    }

    pub fn constant(past: TailFunction, time: TimeGrid, value: f64) -> Result<Self> {
        Self::new(past, time, vec![value; time.len()])
    }

    pub fn from_fn(past: TailFunction, time: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let future = time.times().map(f).collect();
        Self::new(past, time, future)
    }

    pub fn past(&self) -> &TailFunction {
        &self.past
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn future(&self) -> &[f64] {
        &self.future
    }

    /// `u(s)` for `s ∈ [-d, T]`, right-continuous at `0`.
    pub fn value(&self, s: f64) -> Result<f64> {
        if s < 0.0 {
            self.past.eval(s)
        } else {
            self.time.interpolate(&self.future, s)
        }
    }

    /// `u(t + ξ_j)` as seen by node `j` of `grid`.
    ///
    /// The jump at `s = 0` is sampled with the same dual-cell coverage as
    /// the semigroup indicators, so a convolution over the nodes keeps
    /// second-order accuracy.
    pub fn delayed_sample(&self, t: f64, grid: &SegmentGrid, j: usize) -> f64 {
        let d = grid.delay();
        let s = t + grid.node(j);
        let w = step_up(grid, j, -t);
        let mut v = 0.0;
        if w > 0.0 {
            let s = s.clamp(0.0, self.time.horizon());
            v += w * self.time.interpolate(&self.future, s).unwrap_or(0.0);
        }
        if w < 1.0 {
            v += (1.0 - w) * self.past.eval_unchecked(s.clamp(-d, 0.0));
        }
        v
    }

    /// The same schedule sampled on another time grid and past grid.
    pub fn resampled(&self, time: TimeGrid, past_grid: SegmentGrid) -> Result<Self> {
        if time.horizon() != self.time.horizon() {
            return Err(Error::GridMismatch(format!(
                "cannot resample a control on [0, {}] onto [0, {}]",
                self.time.horizon(),
                time.horizon()
            )));
        }
        let past = TailFunction::from_fn(past_grid, |xi| self.past.eval_unchecked(xi));
        let future = self.time.resample(&self.future, &time)?;
        Self::new(past, time, future)
    }
}

/// `∫_{-d}^0 b1(ξ) u(t + ξ) dξ` by the trapezoidal rule on `b1`'s grid.
pub fn delay_convolution(b1: &TailFunction, control: &ControlPath, t: f64) -> f64 {
    let grid = *b1.grid();
    let values: Vec<f64> = b1
        .values()
        .iter()
        .enumerate()
        .map(|(j, &b)| if b == 0.0 { 0.0 } else { b * control.delayed_sample(t, &grid, j) })
        .collect();
    grid.trapezoid(&values)
}

/// State lifted into `H` at time `t0` under `control`:
/// `x1(ζ) = ∫_{-d}^{ζ} b1(ξ) u(t0 + ξ - ζ) dξ`.
///
/// At `t0 = 0` this is the embedding of the past spend `δ`.
pub fn embed_state(x: f64, b1: &TailFunction, control: &ControlPath, t0: f64) -> Result<HilbertPoint> {
    if !(0.0..=control.time().horizon()).contains(&t0) {
        return Err(Error::OutOfHorizon {
            time: t0,
            horizon: control.time().horizon(),
        });
    }
    let grid = *b1.grid();
    let h = grid.spacing();
    let mut tail = vec![0.0; grid.n_nodes()];
    let mut integrand = Vec::with_capacity(grid.n_nodes());
    for (j, slot) in tail.iter_mut().enumerate().skip(1) {
        let zeta = grid.node(j);
        // The spend jumps where t0 + ξ - ζ = 0; nodes straddling that point
        // blend both sides by how much of their dual cell lies past it.
        let jump = zeta - t0;
        integrand.clear();
        for i in 0..=j {
            let xi = grid.node(i);
            let lo = if i == 0 { xi } else { xi - 0.5 * h };
            let hi = if i == j { xi } else { xi + 0.5 * h };
            let w = coverage(lo, hi, jump);
            let s = t0 + xi - zeta;
            let mut u = 0.0;
            if w > 0.0 {
                u += w * control.time.interpolate(&control.future, s.max(0.0))?;
            }
            if w < 1.0 {
                u += (1.0 - w) * control.past.eval_unchecked(s.clamp(-grid.delay(), 0.0));
            }
            integrand.push(b1.values()[i] * u);
        }
        let interior: f64 = integrand[1..j].iter().sum();
        *slot = h * (0.5 * (integrand[0] + integrand[j]) + interior);
    }
    Ok(HilbertPoint::new(x, TailFunction::new(grid, tail)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::embed_initial_state;
    use approx::assert_abs_diff_eq;

    fn setup(n_nodes: usize, n_steps: usize) -> (SegmentGrid, TimeGrid) {
        (SegmentGrid::new(1.0, n_nodes).unwrap(), TimeGrid::new(2.0, n_steps).unwrap())
    }

    #[test]
    fn value_reads_past_then_future() {
        let (g, tg) = setup(11, 20);
        let c = ControlPath::from_fn(TailFunction::constant(g, 0.5), tg, |t| 1.0 + t).unwrap();
        assert_eq!(c.value(-0.3).unwrap(), 0.5);
        assert_eq!(c.value(0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(c.value(1.5).unwrap(), 2.5, epsilon = 1e-14);
        assert!(c.value(-1.5).is_err());
        assert!(c.value(2.5).is_err());
    }

    #[test]
    fn rejects_wrong_length() {
        let (g, tg) = setup(11, 20);
        assert!(ControlPath::new(TailFunction::zeros(g), tg, vec![0.0; 5]).is_err());
    }

    #[test]
    fn convolution_of_constants() {
        // b1 ≡ 1, δ ≡ 2, u ≡ 3 on [0, T]: ∫ = 2·max(d - t, 0) + 3·min(t, d).
        let (g, tg) = setup(101, 200);
        let b1 = TailFunction::constant(g, 1.0);
        let c = ControlPath::constant(TailFunction::constant(g, 2.0), tg, 3.0).unwrap();
        for t in [0.0f64, 0.25, 0.333, 0.5, 1.0, 1.7] {
            let exact = 2.0 * (1.0 - t).max(0.0) + 3.0 * t.min(1.0);
            assert_abs_diff_eq!(delay_convolution(&b1, &c, t), exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn convolution_is_second_order_across_the_junction() {
        let exact = |t: f64| {
            // b1(ξ) = 1 + ξ, δ ≡ 0.5, u(s) = cos s, at t = 0.3.
            let past = 0.5 * (0.5 * (1.0f64 - t).powi(2));
            let future = {
                // ∫_{-t}^0 (1+ξ) cos(t+ξ) dξ = ∫_0^t (1 + s - t) cos s ds
                let f = |s: f64| (1.0 - t) * s.sin() + s * s.sin() + s.cos();
                f(t) - f(0.0)
            };
            past + future
        };
        let err = |n: usize| {
            let g = SegmentGrid::new(1.0, n).unwrap();
            let tg = TimeGrid::new(2.0, 4000).unwrap();
            let b1 = TailFunction::from_fn(g, |xi| 1.0 + xi);
            let c = ControlPath::from_fn(TailFunction::constant(g, 0.5), tg, f64::cos).unwrap();
            (delay_convolution(&b1, &c, 0.3) - exact(0.3)).abs()
        };
        let (e1, e2) = (err(37), err(73));
        assert!(e1 < 1e-3, "{e1}");
        assert!(e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn embed_state_at_zero_is_initial_embedding() {
        let (g, tg) = setup(41, 40);
        let b1 = TailFunction::from_fn(g, |xi| 1.0 + xi);
        let delta = TailFunction::from_fn(g, |xi| 0.5 - xi);
        let c = ControlPath::constant(delta.clone(), tg, 7.0).unwrap();
        let lhs = embed_state(1.5, &b1, &c, 0.0).unwrap();
        let rhs = embed_initial_state(1.5, &b1, &delta).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn embed_state_after_delay_only_sees_future() {
        // b1 ≡ 1, u ≡ 3 on [0, T], t0 ≥ d: x1(ζ) = 3(ζ + d).
        let (g, tg) = setup(21, 40);
        let b1 = TailFunction::constant(g, 1.0);
        let c = ControlPath::constant(TailFunction::constant(g, -4.0), tg, 3.0).unwrap();
        let x = embed_state(0.0, &b1, &c, 1.5).unwrap();
        for (j, zeta) in g.nodes().enumerate() {
            assert_abs_diff_eq!(x.tail.values()[j], 3.0 * (zeta + 1.0), epsilon = 1e-12);
        }
    }
}
