//! Model coefficients and their validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{SegmentGrid, TailFunction};

/// A continuous piecewise-linear function of one variable.
///
/// Used both for time schedules on `[0, T]` (`c`, `σ0`, `θ`) and for
/// profiles on the delay segment `[-d, 0]` (`b1`, `δ`). In config files a
/// bare number is a constant; a table gives knots and values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PiecewiseLinear {
    Constant(f64),
    Knots { knots: Vec<f64>, values: Vec<f64> },
}

impl PiecewiseLinear {
    pub fn constant(v: f64) -> Self {
        PiecewiseLinear::Constant(v)
    }

    pub fn knots(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = PiecewiseLinear::Knots { knots, values };
        f.check_shape("schedule")?;
        Ok(f)
    }

    fn check_shape(&self, field: &str) -> Result<()> {
        match self {
            PiecewiseLinear::Constant(v) => {
                if !v.is_finite() {
                    return Err(Error::invalid(field, "value is not finite"));
                }
            }
            PiecewiseLinear::Knots { knots, values } => {
                if knots.is_empty() || knots.len() != values.len() {
                    return Err(Error::invalid(
                        field,
                        format!("need matching nonempty knots/values, got {} and {}", knots.len(), values.len()),
                    ));
                }
                if knots.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::invalid(field, "knots and values must be finite"));
                }
                if knots.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid(field, "knots must be strictly ascending"));
                }
            }
        }
        Ok(())
    }

    fn check_covers(&self, field: &str, lo: f64, hi: f64) -> Result<()> {
        self.check_shape(field)?;
        if let PiecewiseLinear::Knots { knots, .. } = self {
            let tol = 1e-9 * (hi - lo).abs().max(1.0);
            if knots[0] > lo + tol || knots[knots.len() - 1] < hi - tol {
                return Err(Error::invalid(
                    field,
                    format!(
                        "knots [{}, {}] do not cover [{lo}, {hi}]",
                        knots[0],
                        knots[knots.len() - 1]
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            PiecewiseLinear::Constant(v) => *v,
            PiecewiseLinear::Knots { knots, values } => {
                let n = knots.len();
                if n == 1 || x <= knots[0] {
                    return values[0];
                }
                if x >= knots[n - 1] {
                    return values[n - 1];
                }
                let i = knots.partition_point(|&k| k <= x);
                let (k0, k1) = (knots[i - 1], knots[i]);
                let w = (x - k0) / (k1 - k0);
                values[i - 1] + w * (values[i] - values[i - 1])
            }
        }
    }

    /// Smallest value taken (attained at a knot).
    pub fn min_value(&self) -> f64 {
        match self {
            PiecewiseLinear::Constant(v) => *v,
            PiecewiseLinear::Knots { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        match self {
            PiecewiseLinear::Constant(v) => PiecewiseLinear::Constant(k * v),
            PiecewiseLinear::Knots { knots, values } => PiecewiseLinear::Knots {
                knots: knots.clone(),
                values: values.iter().map(|v| k * v).collect(),
            },
        }
    }

    pub fn sample_on(&self, grid: SegmentGrid) -> TailFunction {
        TailFunction::from_fn(grid, |xi| self.eval(xi))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PiecewiseLinear::Constant(v) => *v == 0.0,
            PiecewiseLinear::Knots { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }
}

impl From<f64> for PiecewiseLinear {
    fn from(v: f64) -> Self {
        PiecewiseLinear::Constant(v)
    }
}

/// Every coefficient of the linear-quadratic advertising game.
///
/// Dynamics: `dX = [a X + γ0 E[X] + b0 u + ∫ b1(ξ) u(s+ξ) dξ] ds + σ dW`,
/// with `u = δ` on `[-d, 0]`. Running reward `c + σ0 X + θ E[X] - (α u + β u²)`,
/// terminal reward `c_T + σ_T X(T) + θ_T E[X(T)]`, discount rate `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub a: f64,
    pub b0: f64,
    pub b1: PiecewiseLinear,
    pub d: f64,
    pub sigma: f64,
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma0: f64,
    pub c: PiecewiseLinear,
    pub sigma0: PiecewiseLinear,
    pub theta: PiecewiseLinear,
    pub c_terminal: f64,
    pub sigma_terminal: f64,
    pub theta_terminal: f64,
    pub delta: PiecewiseLinear,
    pub horizon: f64,
    pub init_head_mean: f64,
    pub init_head_sd: f64,
}

impl ModelParams {
    /// A model with every reward and cost coefficient zero except `β = 1/2`.
    pub fn zero_data(a: f64, d: f64, horizon: f64) -> Self {
        Self {
            a,
            b0: 1.0,
            b1: 0.0.into(),
            d,
            sigma: 0.0,
            r: 0.0,
            alpha: 0.0,
            beta: 0.5,
            gamma0: 0.0,
            c: 0.0.into(),
            sigma0: 0.0.into(),
            theta: 0.0.into(),
            c_terminal: 0.0,
            sigma_terminal: 0.0,
            theta_terminal: 0.0,
            delta: 0.0.into(),
            horizon,
            init_head_mean: 0.0,
            init_head_sd: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("a", self.a),
            ("b0", self.b0),
            ("d", self.d),
            ("sigma", self.sigma),
            ("r", self.r),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma0", self.gamma0),
            ("c_terminal", self.c_terminal),
            ("sigma_terminal", self.sigma_terminal),
            ("theta_terminal", self.theta_terminal),
            ("horizon", self.horizon),
            ("init_head_mean", self.init_head_mean),
            ("init_head_sd", self.init_head_sd),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite, got {v}")));
            }
        }
        if self.beta <= 0.0 {
            return Err(Error::invalid(
                "beta",
                format!("must be > 0 so that the cost is strictly convex, got {}", self.beta),
            ));
        }
        if self.b0 < 0.0 {
            return Err(Error::invalid("b0", format!("must be >= 0 (standing sign assumption on b0, b1, r), got {}", self.b0)));
        }
        if self.r < 0.0 {
            return Err(Error::invalid("r", format!("must be >= 0 (standing sign assumption on b0, b1, r), got {}", self.r)));
        }
        if self.d <= 0.0 {
            return Err(Error::invalid("d", format!("delay must be > 0, got {}", self.d)));
        }
        if self.horizon <= 0.0 {
            return Err(Error::invalid("horizon", format!("must be > 0, got {}", self.horizon)));
        }
        if self.init_head_sd < 0.0 {
            return Err(Error::invalid("init_head_sd", format!("must be >= 0, got {}", self.init_head_sd)));
        }
        self.b1.check_covers("b1", -self.d, 0.0)?;
        if self.b1.min_value() < 0.0 {
            return Err(Error::invalid(
                "b1",
                format!(
                    "carryover kernel must be nonnegative (standing sign assumption on b0, b1, r), minimum is {}",
                    self.b1.min_value()
                ),
            ));
        }
        self.delta.check_covers("delta", -self.d, 0.0)?;
        for (name, s) in [("c", &self.c), ("sigma0", &self.sigma0), ("theta", &self.theta)] {
            s.check_covers(name, 0.0, self.horizon)?;
        }
        Ok(())
    }

    /// Multiplies every reward coefficient (`c`, `σ0`, `θ` and their
    /// terminal counterparts) by `k`.
    pub fn scale_rewards(&self, k: f64) -> Self {
        Self {
            c: self.c.scaled(k),
            sigma0: self.sigma0.scaled(k),
            theta: self.theta.scaled(k),
            c_terminal: k * self.c_terminal,
            sigma_terminal: k * self.sigma_terminal,
            theta_terminal: k * self.theta_terminal,
            ..self.clone()
        }
    }
}

/// Uniform grid `t_i = i·T/n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon", format!("must be > 0, got {horizon}")));
        }
        if n_steps < 2 {
            return Err(Error::invalid("n_steps", format!("need at least 2 steps, got {n_steps}")));
        }
        Ok(Self { horizon, n_steps })
    }

    /// The grid with spacing `dt`, which must divide the horizon.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        let n = steps_per(horizon, dt).ok_or_else(|| {
            Error::invalid("dt", format!("step {dt} does not divide the horizon {horizon}"))
        })?;
        Self::new(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_i`; the last point is exactly `T`.
    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n_steps + 1).map(move |i| self.t(i))
    }

    /// Cell index and fraction for `t ∈ [0, T]`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let pos = t / self.dt();
        let last = self.n_steps as f64;
        if !pos.is_finite() || pos < -1e-9 || pos > last + 1e-9 {
            return Err(Error::OutOfHorizon {
                time: t,
                horizon: self.horizon,
            });
        }
        let pos = pos.clamp(0.0, last);
        let nearest = pos.round();
        let pos = if (pos - nearest).abs() <= 1e-9 { nearest } else { pos };
        let i = (pos.floor() as usize).min(self.n_steps - 1);
        Ok((i, pos - i as f64))
    }

    /// Linear interpolation of grid values at `t`.
    pub fn interpolate(&self, values: &[f64], t: f64) -> Result<f64> {
        debug_assert_eq!(values.len(), self.len());
        let (i, w) = self.locate(t)?;
        Ok(values[i] + w * (values[i + 1] - values[i]))
    }

    /// Samples `values` (given on `self`) onto `other`.
    pub fn resample(&self, values: &[f64], other: &TimeGrid) -> Result<Vec<f64>> {
        other.times().map(|t| self.interpolate(values, t.min(self.horizon))).collect()
    }

    pub fn sample(&self, f: &PiecewiseLinear) -> Vec<f64> {
        self.times().map(|t| f.eval(t)).collect()
    }

    /// Composite trapezoidal weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut w = vec![dt; self.len()];
        w[0] = 0.5 * dt;
        w[self.n_steps] = 0.5 * dt;
        w
    }
}

/// `length / dt` if it is an integer within `1e-9` relative.
pub(crate) fn steps_per(length: f64, dt: f64) -> Option<usize> {
    if !(dt > 0.0 && dt.is_finite() && length > 0.0) {
        return None;
    }
    let ratio = length / dt;
    let n = ratio.round();
    ((ratio - n).abs() <= 1e-9 * ratio.max(1.0) && n >= 1.0).then_some(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn sample_params() -> ModelParams {
        ModelParams {
            a: -0.5,
            b0: 1.0,
            b1: PiecewiseLinear::knots(vec![-1.0, 0.0], vec![0.0, 1.0]).unwrap(),
            d: 1.0,
            sigma: 0.3,
            r: 0.05,
            alpha: 0.1,
            beta: 0.5,
            gamma0: 0.1,
            c: 0.2.into(),
            sigma0: PiecewiseLinear::knots(vec![0.0, 2.0], vec![1.0, 0.5]).unwrap(),
            theta: (-0.3).into(),
            c_terminal: 0.0,
            sigma_terminal: 0.5,
            theta_terminal: -0.2,
            delta: 0.5.into(),
            horizon: 2.0,
            init_head_mean: 1.0,
            init_head_sd: 0.2,
        }
    }

    #[test]
    fn piecewise_linear_eval() {
        let f = PiecewiseLinear::knots(vec![0.0, 1.0, 3.0], vec![1.0, 3.0, -1.0]).unwrap();
        assert_eq!(f.eval(-1.0), 1.0);
        assert_abs_diff_eq!(f.eval(0.25), 1.5, epsilon = 1e-15);
        assert_eq!(f.eval(1.0), 3.0);
        assert_abs_diff_eq!(f.eval(2.0), 1.0, epsilon = 1e-15);
        assert_eq!(f.eval(5.0), -1.0);
        assert_eq!(f.min_value(), -1.0);
        assert!(PiecewiseLinear::knots(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(PiecewiseLinear::knots(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn sample_params_are_valid() {
        sample_params().validate().unwrap();
    }

    #[test]
    fn validation_names_the_offending_field() {
        let cases: Vec<(ModelParams, &str)> = vec![
            (ModelParams { beta: 0.0, ..sample_params() }, "beta"),
            (ModelParams { b0: -1.0, ..sample_params() }, "b0"),
            (ModelParams { r: -0.1, ..sample_params() }, "r"),
            (ModelParams { d: 0.0, ..sample_params() }, "d"),
            (ModelParams { init_head_sd: -1.0, ..sample_params() }, "init_head_sd"),
            (ModelParams { a: f64::NAN, ..sample_params() }, "a"),
            (
                ModelParams {
                    b1: PiecewiseLinear::knots(vec![-1.0, 0.0], vec![-0.5, 1.0]).unwrap(),
                    ..sample_params()
                },
                "b1",
            ),
            (
                ModelParams {
                    sigma0: PiecewiseLinear::knots(vec![0.0, 1.5], vec![1.0, 0.5]).unwrap(),
                    ..sample_params()
                },
                "sigma0",
            ),
            (
                ModelParams {
                    delta: PiecewiseLinear::knots(vec![-0.5, 0.0], vec![1.0, 0.5]).unwrap(),
                    ..sample_params()
                },
                "delta",
            ),
        ];
        for (p, field) in cases {
            match p.validate() {
                Err(Error::InvalidParameter { field: f, constraint }) => {
                    assert_eq!(f, field, "{constraint}");
                }
                other => panic!("expected rejection of {field}, got {other:?}"),
            }
        }
        let err = ModelParams { b0: -1.0, ..sample_params() }.validate().unwrap_err();
        assert!(err.to_string().contains("standing sign assumption"));
    }

    #[test]
    fn time_grid_basics() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.t(4), 2.0);
        assert_eq!(g.dt(), 0.5);
        assert_abs_diff_eq!(g.interpolate(&[0.0, 1.0, 2.0, 3.0, 4.0], 1.25).unwrap(), 2.5, epsilon = 1e-15);
        assert!(g.locate(2.1).is_err());
        assert_eq!(TimeGrid::with_step(2.0, 1e-3).unwrap().n_steps(), 2000);
        assert!(TimeGrid::with_step(2.0, 0.3).is_err());
        let w = g.trapezoid_weights();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-15);
    }
}
