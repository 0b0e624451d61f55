//! System models on ℝⁿ and flat tori, and fixed-step integration of the
//! plain, prolonged (variational) and normalized projective flows.
//!
//! Everything here is deterministic: classical RK4 with a fixed step, no
//! adaptivity, so certification sweeps reproduce bit-for-bit across runs.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Error;
use crate::report::{CheckReport, Verdict, Witness};
use crate::sweep;
use crate::Result;

/// State vectors and tangent vectors are dense `f64` columns.
pub type State = DVector<f64>;

pub type VectorFieldFn = Arc<dyn Fn(&State) -> State + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;
pub type MetricFn = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;

/// Wrap an angle to the principal interval [-π, π).
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a - two_pi * (a / two_pi).round();
    if w >= PI {
        w -= two_pi;
    } else if w < -PI {
        w += two_pi;
    }
    w
}

/// Flat Riemannian metric G(x); `Identity` is the common fast path.
#[derive(Clone)]
pub enum Metric {
    Identity,
    Constant(DMatrix<f64>),
    StateDependent(MetricFn),
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Identity => write!(f, "Metric::Identity"),
            Metric::Constant(_) => write!(f, "Metric::Constant"),
            Metric::StateDependent(_) => write!(f, "Metric::StateDependent"),
        }
    }
}

impl Metric {
    pub fn is_identity(&self) -> bool {
        matches!(self, Metric::Identity)
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, Metric::StateDependent(_))
    }

    pub fn at(&self, x: &State) -> DMatrix<f64> {
        match self {
            Metric::Identity => DMatrix::identity(x.len(), x.len()),
            Metric::Constant(g) => g.clone(),
            Metric::StateDependent(f) => f(x),
        }
    }

    pub fn inner(&self, x: &State, u: &State, v: &State) -> f64 {
        match self {
            Metric::Identity => u.dot(v),
            Metric::Constant(g) => (u.transpose() * g * v)[(0, 0)],
            Metric::StateDependent(f) => {
                let g = f(x);
                (u.transpose() * g * v)[(0, 0)]
            }
        }
    }

    pub fn norm(&self, x: &State, v: &State) -> f64 {
        self.inner(x, v, v).max(0.0).sqrt()
    }

    /// ∂G/∂x_i by central differences; zero for constant metrics.
    pub fn partial(&self, x: &State, i: usize) -> DMatrix<f64> {
        let n = x.len();
        match self {
            Metric::Identity | Metric::Constant(_) => DMatrix::zeros(n, n),
            Metric::StateDependent(f) => {
                let h = 1e-6 * (1.0 + x.norm());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            }
        }
    }

    /// Symmetric-positive-definite screen at a sample point.
    pub fn check_spd(&self, x: &State) -> Result<()> {
        if self.is_identity() {
            return Ok(());
        }
        let g = self.at(x);
        let asym = (&g - g.transpose()).norm() / (1.0 + g.norm());
        if asym > 1e-10 {
            return Err(Error::Precondition(format!(
                "metric not symmetric at sample (asymmetry {asym:.3e})"
            )));
        }
        let eigs = g.symmetric_eigenvalues();
        if eigs.iter().any(|&e| e <= 0.0) {
            return Err(Error::Precondition(
                "metric not positive definite at sample".into(),
            ));
        }
        Ok(())
    }
}

/// A system `ẋ = f(x)` on ℝⁿ or a flat torus factor, together with its
/// Jacobian (analytic or finite-difference) and a flat metric tensor.
///
/// `wrap[i] = true` marks coordinate `i` as an angle on the circle; it is
/// reduced to [-π, π) after every integration step and differenced along the
/// shortest arc.
#[derive(Clone)]
pub struct SystemModel {
    dim: usize,
    field: VectorFieldFn,
    jacobian: Option<JacobianFn>,
    metric: Metric,
    wrap: Vec<bool>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("dim", &self.dim)
            .field("wrap", &self.wrap)
            .field("metric", &self.metric)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl SystemModel {
    pub fn new<F>(dim: usize, field: F) -> Self
    where
        F: Fn(&State) -> State + Send + Sync + 'static,
    {
        Self {
            dim,
            field: Arc::new(field),
            jacobian: None,
            metric: Metric::Identity,
            wrap: vec![false; dim],
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_wrap(mut self, wrap: Vec<bool>) -> Self {
        assert_eq!(wrap.len(), self.dim);
        self.wrap = wrap;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn wrap_flags(&self) -> &[bool] {
        &self.wrap
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Evaluate f(x), rejecting non-finite output.
    pub fn f_at(&self, x: &State) -> Result<State> {
        let v = (self.field)(x);
        if let Some(i) = v.iter().position(|c| !c.is_finite()) {
            return Err(Error::Evaluation {
                context: "vector field".into(),
                coordinate: i,
            });
        }
        Ok(v)
    }

    /// Analytic Jacobian when supplied, otherwise central finite differences
    /// with step `1e-6 * (1 + |x|)`. Both routes are used identically downstream.
    pub fn jacobian_at(&self, x: &State) -> Result<DMatrix<f64>> {
        let j = match &self.jacobian {
            Some(jac) => jac(x),
            None => self.fd_jacobian(x),
        };
        if let Some(i) = j.iter().position(|c| !c.is_finite()) {
            return Err(Error::Evaluation {
                context: "jacobian".into(),
                coordinate: i,
            });
        }
        Ok(j)
    }

    /// Central finite-difference Jacobian (also the cross-check oracle for
    /// analytic Jacobians).
    pub fn fd_jacobian(&self, x: &State) -> DMatrix<f64> {
        let n = self.dim;
        let h = 1e-6 * (1.0 + x.norm());
        let mut j = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            self.wrap_state(&mut xp);
            self.wrap_state(&mut xm);
            let col = ((self.field)(&xp) - (self.field)(&xm)) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }

    /// Relative disagreement between the analytic and finite-difference
    /// Jacobians at `x`; zero when no analytic Jacobian is present.
    pub fn jacobian_residual(&self, x: &State) -> f64 {
        match &self.jacobian {
            None => 0.0,
            Some(jac) => {
                let a = jac(x);
                let fd = self.fd_jacobian(x);
                (&a - &fd).norm() / (1.0 + a.norm())
            }
        }
    }

    /// Reduce wrapped coordinates to [-π, π).
    pub fn wrap_state(&self, x: &mut State) {
        for (i, &w) in self.wrap.iter().enumerate() {
            if w {
                x[i] = wrap_angle(x[i]);
            }
        }
    }

    /// Difference `a - b` taking the shortest arc on wrapped axes.
    pub fn wrapped_diff(&self, a: &State, b: &State) -> State {
        let mut d = a - b;
        for (i, &w) in self.wrap.iter().enumerate() {
            if w {
                d[i] = wrap_angle(d[i]);
            }
        }
        d
    }

    /// Distance respecting wrapped axes.
    pub fn wrapped_dist(&self, a: &State, b: &State) -> f64 {
        self.wrapped_diff(a, b).norm()
    }

    /// Metric norm |v|_x.
    pub fn norm_at(&self, x: &State, v: &State) -> f64 {
        self.metric.norm(x, v)
    }

    /// Normalization rate λ(x, θ) of the projective flow:
    /// `λ = ½ θᵀ (G ∂f + ∂fᵀ G + Σ_i ∂G/∂x_i f_i) θ` for unit θ.
    ///
    /// With the identity metric this reduces to `θᵀ ∂f(x) θ`.
    pub fn lambda(&self, x: &State, theta: &State) -> Result<f64> {
        let nrm = self.norm_at(x, theta);
        if (nrm - 1.0).abs() > 1e-8 {
            return Err(Error::Precondition(format!(
                "lambda requires unit |theta|_x, got {nrm}"
            )));
        }
        let j = self.jacobian_at(x)?;
        if self.metric.is_identity() {
            return Ok((theta.transpose() * &j * theta)[(0, 0)]);
        }
        let g = self.metric.at(x);
        let mut m = &g * &j + j.transpose() * &g;
        if !self.metric.is_constant() {
            let f = self.f_at(x)?;
            for i in 0..self.dim {
                m += self.metric.partial(x, i) * f[i];
            }
        }
        Ok(0.5 * (theta.transpose() * m * theta)[(0, 0)])
    }
}

/// One RK4 step of `ẏ = rhs(y)` with step `h`.
fn rk4_step<F: Fn(&State) -> State>(rhs: F, y: &State, h: f64) -> State {
    let k1 = rhs(y);
    let k2 = rhs(&(y + &k1 * (h / 2.0)));
    let k3 = rhs(&(y + &k2 * (h / 2.0)));
    let k4 = rhs(&(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// A discretized solution of `ẋ = f(x)`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory has at least x0")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// A discretized solution of the prolonged system `(ẋ, δẋ) = (f, ∂f δx)`.
///
/// Directions are stored unit-normalized with the accumulated log-magnitude
/// kept separately, so exponentially growing and decaying tangents stay
/// representable over long horizons.
#[derive(Debug, Clone)]
pub struct TangentTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Unit tangent directions θ(t_k), |θ|_{x(t_k)} = 1.
    pub directions: Vec<State>,
    /// Accumulated log |δx(t_k)|.
    pub log_mags: Vec<f64>,
    /// Steps on which the normalized flow needed a hard renormalization.
    pub renorm_events: usize,
}

impl TangentTrajectory {
    /// Reconstruct the full tangent vector δx(t_k) = exp(log_mags[k]) θ(t_k).
    pub fn tangent_at(&self, k: usize) -> State {
        &self.directions[k] * self.log_mags[k].exp()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check_finite_state(x: &State, t: f64) -> Result<()> {
    if x.iter().any(|c| !c.is_finite()) {
        Err(Error::Divergence { time: t })
    } else {
        Ok(())
    }
}

/// Number of fixed steps covering [0, T]; the last step is shortened to land
/// exactly on T.
fn step_schedule(t_final: f64, h: f64) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::Precondition("step size must be positive".into()));
    }
    if t_final < 0.0 {
        return Err(Error::Precondition("horizon must be nonnegative".into()));
    }
    let n_full = (t_final / h).floor() as usize;
    let mut steps = vec![h; n_full];
    let rem = t_final - n_full as f64 * h;
    if rem > 1e-12 * (1.0 + t_final) {
        steps.push(rem);
    }
    Ok(steps)
}

/// Integrate `ẋ = f(x)` from `x0` over `[0, T]` with fixed-step RK4.
///
/// Wrapped coordinates are reduced to [-π, π) after every step.
pub fn integrate_trajectory(model: &SystemModel, x0: &State, t_final: f64, h: f64) -> Result<Trajectory> {
    let steps = step_schedule(t_final, h)?;
    let mut x = x0.clone();
    model.wrap_state(&mut x);
    let mut t = 0.0;
    let mut times = Vec::with_capacity(steps.len() + 1);
    let mut states = Vec::with_capacity(steps.len() + 1);
    times.push(t);
    states.push(x.clone());
    let f = |y: &State| (model.field)(y);
    for &dt in &steps {
        x = rk4_step(f, &x, dt);
        model.wrap_state(&mut x);
        t += dt;
        check_finite_state(&x, t)?;
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Integrate the prolonged system from `(x0, dx0)`, renormalizing the tangent
/// after every step and accumulating its log-magnitude.
///
/// The tangent dynamics is linear in δx given the base trajectory, so
/// propagating the unit direction and the log norm separately reconstructs
/// `∂ψ_t(x0) dx0` up to integration error.
pub fn integrate_prolonged(
    model: &SystemModel,
    x0: &State,
    dx0: &State,
    t_final: f64,
    h: f64,
) -> Result<TangentTrajectory> {
    let n = model.dim();
    if dx0.iter().all(|&c| c == 0.0) {
        return Err(Error::DegenerateVector);
    }
    let steps = step_schedule(t_final, h)?;
    let mut x = x0.clone();
    model.wrap_state(&mut x);
    let mag0 = model.norm_at(&x, dx0);
    let mut theta = dx0 / mag0;
    let mut log_mag = mag0.ln();
    let mut t = 0.0;

    let cap = steps.len() + 1;
    let mut times = Vec::with_capacity(cap);
    let mut states = Vec::with_capacity(cap);
    let mut directions = Vec::with_capacity(cap);
    let mut log_mags = Vec::with_capacity(cap);
    times.push(t);
    states.push(x.clone());
    directions.push(theta.clone());
    log_mags.push(log_mag);

    for &dt in &steps {
        // Joint RK4 on (x, δx); δx enters linearly so one joint step of the
        // unit direction carries the exact magnitude factor for this step.
        let joint = |y: &State| {
            let (xs, ds) = (y.rows(0, n).into_owned(), y.rows(n, n).into_owned());
            let fx = (model.field)(&xs);
            let jd = match &model.jacobian {
                Some(j) => j(&xs) * ds,
                None => model.fd_jacobian(&xs) * ds,
            };
            let mut out = State::zeros(2 * n);
            out.rows_mut(0, n).copy_from(&fx);
            out.rows_mut(n, n).copy_from(&jd);
            out
        };
        let mut y = State::zeros(2 * n);
        y.rows_mut(0, n).copy_from(&x);
        y.rows_mut(n, n).copy_from(&theta);
        let y_next = rk4_step(joint, &y, dt);
        x = y_next.rows(0, n).into_owned();
        model.wrap_state(&mut x);
        let d_next = y_next.rows(n, n).into_owned();
        t += dt;
        check_finite_state(&x, t)?;
        check_finite_state(&d_next, t)?;
        let mag = model.norm_at(&x, &d_next);
        if mag == 0.0 || !mag.is_finite() {
            return Err(Error::Divergence { time: t });
        }
        theta = d_next / mag;
        log_mag += mag.ln();
        times.push(t);
        states.push(x.clone());
        directions.push(theta.clone());
        log_mags.push(log_mag);
    }
    Ok(TangentTrajectory {
        times,
        states,
        directions,
        log_mags,
        renorm_events: 0,
    })
}

/// Integrate the normalized projective flow
/// `θ̇ = (∂f(x) - λ(x, θ)) θ` together with `ẋ = f(x)` and the
/// log-magnitude `ℓ̇ = λ(x, θ)`.
///
/// The flow preserves |θ|_x = 1 exactly in continuous time; the integrator
/// renormalizes (and counts the event) when discretization drift exceeds
/// 1e-8, and fails with [`Error::Normalization`] past 1e-6.
pub fn integrate_normalized(
    model: &SystemModel,
    x0: &State,
    theta0: &State,
    t_final: f64,
    h: f64,
) -> Result<TangentTrajectory> {
    let n = model.dim();
    let mut x = x0.clone();
    model.wrap_state(&mut x);
    let nrm0 = model.norm_at(&x, theta0);
    if (nrm0 - 1.0).abs() > 1e-8 {
        return Err(Error::Precondition(format!(
            "theta0 must be unit length in the metric, got |theta0| = {nrm0}"
        )));
    }
    let steps = step_schedule(t_final, h)?;
    let mut theta = theta0 / nrm0;
    let mut log_mag = 0.0;
    let mut t = 0.0;
    let mut renorm_events = 0usize;

    let cap = steps.len() + 1;
    let mut times = Vec::with_capacity(cap);
    let mut states = Vec::with_capacity(cap);
    let mut directions = Vec::with_capacity(cap);
    let mut log_mags = Vec::with_capacity(cap);
    times.push(t);
    states.push(x.clone());
    directions.push(theta.clone());
    log_mags.push(log_mag);

    let lambda_raw = |xs: &State, th: &State| -> f64 {
        // Same quadratic form as SystemModel::lambda, without the unit-norm
        // gate: RK4 stages evaluate it slightly off the sphere.
        let j = match &model.jacobian {
            Some(jac) => jac(xs),
            None => model.fd_jacobian(xs),
        };
        if model.metric.is_identity() {
            (th.transpose() * &j * th)[(0, 0)]
        } else {
            let g = model.metric.at(xs);
            let mut m = &g * &j + j.transpose() * &g;
            if !model.metric.is_constant() {
                let f = (model.field)(xs);
                for i in 0..n {
                    m += model.metric.partial(xs, i) * f[i];
                }
            }
            0.5 * (th.transpose() * m * th)[(0, 0)]
        }
    };

    for &dt in &steps {
        let joint = |y: &State| {
            let xs = y.rows(0, n).into_owned();
            let th = y.rows(n, n).into_owned();
            let fx = (model.field)(&xs);
            let j = match &model.jacobian {
                Some(jac) => jac(&xs),
                None => model.fd_jacobian(&xs),
            };
            let lam = lambda_raw(&xs, &th);
            let dth = &j * &th - &th * lam;
            let mut out = State::zeros(2 * n + 1);
            out.rows_mut(0, n).copy_from(&fx);
            out.rows_mut(n, n).copy_from(&dth);
            out[2 * n] = lam;
            out
        };
        let mut y = State::zeros(2 * n + 1);
        y.rows_mut(0, n).copy_from(&x);
        y.rows_mut(n, n).copy_from(&theta);
        y[2 * n] = log_mag;
        let y_next = rk4_step(joint, &y, dt);
        x = y_next.rows(0, n).into_owned();
        model.wrap_state(&mut x);
        theta = y_next.rows(n, n).into_owned();
        log_mag = y_next[2 * n];
        t += dt;
        check_finite_state(&x, t)?;
        check_finite_state(&theta, t)?;

        let nrm = model.norm_at(&x, &theta);
        let drift = (nrm - 1.0).abs();
        if drift > 1e-6 {
            return Err(Error::Normalization { time: t, drift });
        }
        if drift > 1e-8 {
            theta /= nrm;
            renorm_events += 1;
        }
        times.push(t);
        states.push(x.clone());
        directions.push(theta.clone());
        log_mags.push(log_mag);
    }
    Ok(TangentTrajectory {
        times,
        states,
        directions,
        log_mags,
        renorm_events,
    })
}

/// Final state only (no storage) — for long horizons and large IC batches.
pub fn integrate_to_final(model: &SystemModel, x0: &State, t_final: f64, h: f64) -> Result<State> {
    let steps = step_schedule(t_final, h)?;
    let mut x = x0.clone();
    model.wrap_state(&mut x);
    let mut t = 0.0;
    let f = |y: &State| (model.field)(y);
    for &dt in &steps {
        x = rk4_step(f, &x, dt);
        model.wrap_state(&mut x);
        t += dt;
        check_finite_state(&x, t)?;
    }
    Ok(x)
}

/// Integrate storing only every `stride`-th step (plus the first and last).
pub fn integrate_sampled(
    model: &SystemModel,
    x0: &State,
    t_final: f64,
    h: f64,
    stride: usize,
) -> Result<Trajectory> {
    let stride = stride.max(1);
    let steps = step_schedule(t_final, h)?;
    let mut x = x0.clone();
    model.wrap_state(&mut x);
    let mut t = 0.0;
    let mut times = vec![t];
    let mut states = vec![x.clone()];
    let f = |y: &State| (model.field)(y);
    for (k, &dt) in steps.iter().enumerate() {
        x = rk4_step(f, &x, dt);
        model.wrap_state(&mut x);
        t += dt;
        check_finite_state(&x, t)?;
        if (k + 1) % stride == 0 || k + 1 == steps.len() {
            times.push(t);
            states.push(x.clone());
        }
    }
    Ok(Trajectory { times, states })
}

/// An axis-aligned box (with optional wrapped axes and an optional pairwise
/// phase-gap bound) standing in for the candidate compact forward-invariant
/// set.
#[derive(Debug, Clone)]
pub struct CompactRegion {
    pub lo: State,
    pub hi: State,
    pub wrap: Vec<bool>,
    /// Default grid samples per axis.
    pub grid_density: usize,
    /// For wrapped phase regions: keep only states whose pairwise shortest-arc
    /// gaps stay below this bound.
    pub max_pairwise_gap: Option<f64>,
}

impl CompactRegion {
    pub fn new_box(lo: State, hi: State) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension("region bounds differ in length".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| a >= b) {
            return Err(Error::Precondition("region requires lo < hi per axis".into()));
        }
        let n = lo.len();
        Ok(Self {
            lo,
            hi,
            wrap: vec![false; n],
            grid_density: 15,
            max_pairwise_gap: None,
        })
    }

    /// Phase region for `n` oscillators: all phases within a window of width
    /// `max_gap` (every axis wrapped). By rotation invariance the window is
    /// centered at zero.
    pub fn phase_gap(n: usize, max_gap: f64) -> Result<Self> {
        if !(0.0 < max_gap && max_gap < 2.0 * PI) {
            return Err(Error::Precondition("max_gap must lie in (0, 2π)".into()));
        }
        let half = max_gap / 2.0;
        let mut r = Self::new_box(
            State::from_element(n, -half),
            State::from_element(n, half),
        )?;
        r.wrap = vec![true; n];
        r.max_pairwise_gap = Some(max_gap);
        Ok(r)
    }

    pub fn with_wrap(mut self, wrap: Vec<bool>) -> Self {
        assert_eq!(wrap.len(), self.lo.len());
        self.wrap = wrap;
        self
    }

    pub fn with_grid_density(mut self, density: usize) -> Self {
        self.grid_density = density.max(2);
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Wrapped axes spanning the full circle have no boundary faces.
    pub fn axis_full_circle(&self, i: usize) -> bool {
        self.wrap[i] && self.hi[i] - self.lo[i] >= 2.0 * PI - 1e-9
    }

    /// How far `x` lies outside the region (0 inside); wrapped axes measure
    /// arc distance from the allowed window, and the pairwise-gap constraint
    /// contributes its own excess.
    pub fn excess(&self, x: &State) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            let e = if self.axis_full_circle(i) {
                0.0
            } else if self.wrap[i] {
                let span = self.hi[i] - self.lo[i];
                let two_pi = 2.0 * PI;
                let mut w = (x[i] - self.lo[i]) % two_pi;
                if w < 0.0 {
                    w += two_pi;
                }
                if w <= span {
                    0.0
                } else {
                    (w - span).min(two_pi - w)
                }
            } else {
                (self.lo[i] - x[i]).max(x[i] - self.hi[i]).max(0.0)
            };
            worst = worst.max(e);
        }
        if let Some(gap) = self.max_pairwise_gap {
            let mut max_gap: f64 = 0.0;
            for k in 0..self.dim() {
                for j in (k + 1)..self.dim() {
                    max_gap = max_gap.max(wrap_angle(x[k] - x[j]).abs());
                }
            }
            worst = worst.max((max_gap - gap).max(0.0));
        }
        worst
    }

    pub fn contains(&self, x: &State, tol: f64) -> bool {
        self.excess(x) <= tol
    }

    pub fn center(&self) -> State {
        (&self.lo + &self.hi) / 2.0
    }

    fn axis_points(&self, i: usize, count: usize) -> Vec<f64> {
        let count = count.max(2);
        if self.axis_full_circle(i) {
            // Uniform over the circle, seam point not duplicated.
            (0..count)
                .map(|k| self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / count as f64)
                .collect()
        } else {
            (0..count)
                .map(|k| {
                    self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (count - 1) as f64
                })
                .collect()
        }
    }

    /// Regular grid over the region, at most `max_total` points (the per-axis
    /// density is reduced uniformly as needed). Gap-filtered when applicable.
    pub fn grid(&self, per_axis: usize, max_total: usize) -> Vec<State> {
        let n = self.dim();
        let mut count = per_axis.max(2);
        while count > 2 && (count as f64).powi(n as i32) > max_total as f64 {
            count -= 1;
        }
        let axes: Vec<Vec<f64>> = (0..n).map(|i| self.axis_points(i, count)).collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            let x = State::from_iterator(n, idx.iter().enumerate().map(|(i, &k)| axes[i][k]));
            if self.contains(&x, 1e-12) {
                out.push(x);
            }
            // odometer increment
            let mut i = 0;
            loop {
                idx[i] += 1;
                if idx[i] < axes[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
                if i == n {
                    return out;
                }
            }
        }
    }

    /// Grid over the boundary faces (full-circle axes contribute no faces).
    pub fn boundary_grid(&self, per_axis: usize) -> Vec<State> {
        let n = self.dim();
        let mut out = Vec::new();
        for axis in 0..n {
            if self.axis_full_circle(axis) {
                continue;
            }
            for &val in &[self.lo[axis], self.hi[axis]] {
                // grid over the remaining axes
                let others: Vec<usize> = (0..n).filter(|&i| i != axis).collect();
                if others.is_empty() {
                    let mut x = State::zeros(1);
                    x[0] = val;
                    out.push(x);
                    continue;
                }
                let axes: Vec<Vec<f64>> = others
                    .iter()
                    .map(|&i| self.axis_points(i, per_axis))
                    .collect();
                let mut idx = vec![0usize; others.len()];
                'outer: loop {
                    let mut x = State::zeros(n);
                    x[axis] = val;
                    for (pos, &i) in others.iter().enumerate() {
                        x[i] = axes[pos][idx[pos]];
                    }
                    if self.contains(&x, 1e-9) {
                        out.push(x);
                    }
                    let mut i = 0;
                    loop {
                        idx[i] += 1;
                        if idx[i] < axes[i].len() {
                            break;
                        }
                        idx[i] = 0;
                        i += 1;
                        if i == others.len() {
                            break 'outer;
                        }
                    }
                }
            }
        }
        out
    }

    /// Uniform sample (rejection-sampled against the gap constraint).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> State {
        loop {
            let x = State::from_iterator(
                self.dim(),
                (0..self.dim()).map(|i| rng.random_range(self.lo[i]..self.hi[i])),
            );
            if self.contains(&x, 0.0) {
                return x;
            }
        }
    }
}

/// Numerically screen forward invariance of `region` by integrating a grid of
/// boundary points for horizon `t_final`.
///
/// Interior trajectories cannot exit before a boundary trajectory does (by
/// uniqueness of solutions), so only the boundary is sampled. Exits are
/// verdicts, not errors; a grazing tolerance of 1e-9 is allowed.
pub fn check_forward_invariance(
    model: &SystemModel,
    region: &CompactRegion,
    t_final: f64,
    h: f64,
    boundary_samples: usize,
) -> Result<CheckReport> {
    let starts = region.boundary_grid(boundary_samples);
    if starts.is_empty() {
        return Err(Error::Precondition(
            "region has no boundary faces to sample".into(),
        ));
    }
    let results = sweep::map_collect(&starts, |x0| -> Result<(f64, Option<(State, f64)>)> {
        let traj = integrate_trajectory(model, x0, t_final, h)?;
        let mut worst = 0.0f64;
        let mut witness = None;
        for (k, x) in traj.states.iter().enumerate() {
            let e = region.excess(x);
            if e > worst {
                worst = e;
                witness = Some((x.clone(), traj.times[k]));
            }
        }
        Ok((worst, witness))
    });

    let mut worst_excess = 0.0f64;
    let mut witness: Option<Witness> = None;
    let mut samples = 0usize;
    for (i, r) in results.into_iter().enumerate() {
        samples += 1;
        match r {
            Ok((e, w)) => {
                if e > worst_excess {
                    worst_excess = e;
                    witness = w.map(|(x, t)| Witness {
                        x: x.iter().copied().collect(),
                        theta: None,
                        constraint: None,
                        time: Some(t),
                    });
                }
            }
            Err(Error::Divergence { time }) => {
                // Divergence is a hard exit: report the start point.
                return Ok(CheckReport::new(
                    Verdict::Fail,
                    f64::NEG_INFINITY,
                    Some(Witness {
                        x: starts[i].iter().copied().collect(),
                        theta: None,
                        constraint: None,
                        time: Some(time),
                    }),
                    samples,
                    0,
                ));
            }
            Err(e) => return Err(e),
        }
    }

    let verdict = if worst_excess <= 1e-9 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(CheckReport::new(verdict, -worst_excess, witness, samples, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_model(a: DMatrix<f64>) -> SystemModel {
        let a2 = a.clone();
        SystemModel::new(a.nrows(), move |x: &State| &a * x)
            .with_jacobian(move |_x: &State| a2.clone())
    }

    #[test]
    fn zero_field_constant_trajectory() {
        let m = SystemModel::new(2, |_x: &State| State::zeros(2));
        let x0 = State::from_vec(vec![0.3, -0.7]);
        let traj = integrate_trajectory(&m, &x0, 1.0, 1e-2).unwrap();
        for x in &traj.states {
            assert_eq!(x, &x0);
        }
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let m = linear_model(DMatrix::from_row_slice(1, 1, &[-1.0]));
        let traj = integrate_trajectory(&m, &State::from_vec(vec![1.0]), 1.0, 1e-3).unwrap();
        assert_relative_eq!(traj.final_state()[0], (-1.0f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn pendulum_jacobian_at_origin() {
        // ẋ = (v, -sin θ - 3 v), analytic Jacobian [[0,1],[-1,-3]] at (0,0)
        let m = SystemModel::new(2, |x: &State| {
            State::from_vec(vec![x[1], -x[0].sin() - 3.0 * x[1]])
        });
        let j = m.jacobian_at(&State::zeros(2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -3.0]);
        assert!((j - expected).norm() < 1e-6);
    }

    #[test]
    fn linear_jacobian_is_matrix_everywhere() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -1.25, 2.0, 0.75]);
        let m = linear_model(a.clone());
        for x in [State::zeros(2), State::from_vec(vec![3.0, -4.0])] {
            assert!((m.jacobian_at(&x).unwrap() - &a).norm() < 1e-12);
            assert!(m.jacobian_residual(&x) < 1e-5);
        }
    }

    #[test]
    fn prolonged_matches_matrix_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let m = linear_model(a);
        let tt = integrate_prolonged(
            &m,
            &State::zeros(2),
            &State::from_vec(vec![1.0, 1.0]),
            1.0,
            1e-3,
        )
        .unwrap();
        let dx = tt.tangent_at(tt.len() - 1);
        assert_relative_eq!(dx[0], (-1.0f64).exp(), epsilon = 1e-6);
        assert_relative_eq!(dx[1], (-2.0f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn prolonged_scaling_shifts_log_mags() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.3, 0.9, 0.2, -1.1]);
        let m = linear_model(a);
        let x0 = State::from_vec(vec![0.1, 0.2]);
        let d = State::from_vec(vec![0.4, -0.3]);
        let t1 = integrate_prolonged(&m, &x0, &d, 2.0, 1e-3).unwrap();
        let t2 = integrate_prolonged(&m, &x0, &(&d * 5.0), 2.0, 1e-3).unwrap();
        for k in [0, t1.len() / 2, t1.len() - 1] {
            assert!((&t1.directions[k] - &t2.directions[k]).norm() < 1e-12);
            assert_relative_eq!(t2.log_mags[k] - t1.log_mags[k], 5.0f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn lambda_values_for_diagonal_and_skew() {
        let diag = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]));
        let e1 = State::from_vec(vec![1.0, 0.0]);
        let e2 = State::from_vec(vec![0.0, 1.0]);
        assert_relative_eq!(diag.lambda(&State::zeros(2), &e1).unwrap(), -1.0);
        assert_relative_eq!(diag.lambda(&State::zeros(2), &e2).unwrap(), -2.0);

        let skew = linear_model(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        for t in [0.0f64, 0.4, 1.3, 2.2] {
            let th = State::from_vec(vec![t.cos(), t.sin()]);
            assert!(skew.lambda(&State::zeros(2), &th).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_rotation_preserves_norm_and_rotates() {
        let skew = linear_model(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        let th0 = State::from_vec(vec![1.0, 0.0]);
        let tt = integrate_normalized(&skew, &State::zeros(2), &th0, 3.0, 1e-3).unwrap();
        let last = &tt.directions[tt.len() - 1];
        assert_relative_eq!(last[0], 3.0f64.cos(), epsilon = 1e-8);
        assert_relative_eq!(last[1], 3.0f64.sin(), epsilon = 1e-8);
        for th in &tt.directions {
            assert!((th.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalized_diagonal_eigenvector_is_fixed() {
        let diag = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]));
        let th0 = State::from_vec(vec![1.0, 0.0]);
        let tt = integrate_normalized(&diag, &State::zeros(2), &th0, 5.0, 1e-3).unwrap();
        for th in &tt.directions {
            assert!((th - &th0).norm() < 1e-9);
        }
    }

    #[test]
    fn normalized_converges_to_dominant_direction() {
        let diag = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]));
        let th0 = State::from_vec(vec![0.6, 0.8]);
        let tt = integrate_normalized(&diag, &State::zeros(2), &th0, 15.0, 1e-3).unwrap();
        let last = &tt.directions[tt.len() - 1];
        assert!(last[0].abs() > 1.0 - 1e-6);
        assert!(last[1].abs() < 1e-5);
    }

    #[test]
    fn normalized_preserves_state_dependent_metric_norm() {
        // Non-constant SPD metric: the ∂G·f term in λ is exercised because
        // |θ|_{G(x(t))} must stay at 1 along the flow.
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 0.3, -0.2, -0.8]);
        let a2 = a.clone();
        let m = SystemModel::new(2, move |x: &State| &a * x)
            .with_jacobian(move |_x: &State| a2.clone())
            .with_metric(Metric::StateDependent(Arc::new(|x: &State| {
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[1.0 + 0.3 * x[0] * x[0], 0.1 * x[0], 0.1 * x[0], 1.0 + 0.2 * x[1] * x[1]],
                )
            })));
        let x0 = State::from_vec(vec![0.8, -0.5]);
        let g0 = m.metric().at(&x0);
        let raw = State::from_vec(vec![1.0, 1.0]);
        let nrm = ((raw.transpose() * &g0 * &raw)[(0, 0)]).sqrt();
        let th0 = raw / nrm;
        let tt = integrate_normalized(&m, &x0, &th0, 4.0, 1e-3).unwrap();
        for (x, th) in tt.states.iter().zip(&tt.directions) {
            assert!((m.norm_at(x, th) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrapping_reduces_to_principal_interval() {
        let m = SystemModel::new(1, |_x: &State| State::from_vec(vec![1.0]))
            .with_wrap(vec![true]);
        let traj = integrate_trajectory(&m, &State::from_vec(vec![3.0]), 4.0, 1e-3).unwrap();
        for x in &traj.states {
            assert!(x[0] >= -PI && x[0] < PI);
        }
        // constant-speed rotation returns to start after 2π
        let traj = integrate_trajectory(&m, &State::from_vec(vec![0.5]), 2.0 * PI, 1e-3).unwrap();
        assert!(wrap_angle(traj.final_state()[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn forward_invariance_contraction_passes_expansion_fails() {
        let stable = linear_model(DMatrix::from_row_slice(1, 1, &[-1.0]));
        let unstable = linear_model(DMatrix::from_row_slice(1, 1, &[1.0]));
        let region = CompactRegion::new_box(
            State::from_vec(vec![-1.0]),
            State::from_vec(vec![1.0]),
        )
        .unwrap();
        let r = check_forward_invariance(&stable, &region, 2.0, 1e-3, 5).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        let r = check_forward_invariance(&unstable, &region, 2.0, 1e-3, 5).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.witness.is_some());
    }

    #[test]
    fn step_schedule_lands_exactly_on_horizon() {
        let steps = step_schedule(1.0, 0.3).unwrap();
        let total: f64 = steps.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        assert!(step_schedule(-1.0, 0.1).is_err());
        assert!(step_schedule(1.0, 0.0).is_err());
    }
}
