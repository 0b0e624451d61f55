//! Cone fields represented by smooth constraint functions.
//!
//! A tangent vector δx ≠ 0 belongs to the ε-cone at x iff
//! `K_i(x, δx/|δx|_x) ≥ ε` for every constraint `K_i`. Polyhedral cones use
//! `K_i = ⟨F_i(x), δx⟩_x` (degree 1); quadratic cones use
//! `K_1 = ⟨F_1, δx⟩` and `K_2 = ⟨F_1, δx⟩² − Σ_{i≥2} ⟨F_i, δx⟩²` (degree 2),
//! the double cone refined to a pointed one by `K_1 ≥ 0`.
//!
//! The Hilbert projective metric between cone rays is computed by bisection
//! on the membership predicate, which keeps it uniform across polyhedral,
//! quadratic and custom cones; closed forms exist only as test oracles.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::dynamics::{Metric, State};
use crate::error::Error;
use crate::Result;

/// Classification tolerance on normalized constraint values: well above
/// accumulated RK4/roundoff noise, well below meaningful margins.
pub const TOL_BOUNDARY: f64 = 1e-9;

/// Bisection stops at this relative tolerance on the ratio λ.
const TOL_BISECT: f64 = 1e-10;

/// Brackets beyond this bound are treated as +∞ (empty constraint set).
const RATIO_INF: f64 = 1e12;

/// One smooth constraint K_i(x, δx) with gradients in both arguments.
///
/// Gradients default to central finite differences; analytic implementations
/// override them.
pub trait ConeConstraint: Send + Sync {
    fn eval(&self, x: &State, dx: &State) -> f64;

    /// ∂K_i/∂x (zero for state-independent constraints).
    fn grad_x(&self, x: &State, dx: &State) -> State {
        if self.state_independent() {
            return State::zeros(x.len());
        }
        let h = 1e-6 * (1.0 + x.norm());
        let mut g = State::zeros(x.len());
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            g[k] = (self.eval(&xp, dx) - self.eval(&xm, dx)) / (2.0 * h);
        }
        g
    }

    /// ∂K_i/∂δx.
    fn grad_dx(&self, x: &State, dx: &State) -> State {
        let h = 1e-6 * (1.0 + dx.norm());
        let mut g = State::zeros(dx.len());
        for k in 0..dx.len() {
            let mut dp = dx.clone();
            let mut dm = dx.clone();
            dp[k] += h;
            dm[k] -= h;
            g[k] = (self.eval(x, &dp) - self.eval(x, &dm)) / (2.0 * h);
        }
        g
    }

    /// True when K_i does not depend on the base point x.
    fn state_independent(&self) -> bool {
        false
    }

    /// Positive homogeneity degree in δx (1 for linear, 2 for quadratic).
    fn degree(&self) -> u32;
}

/// ⟨F, δx⟩_x with a constant generator and constant metric.
struct LinearConstraint {
    /// Precomputed G·F so eval is a single dot product.
    gf: State,
}

impl ConeConstraint for LinearConstraint {
    fn eval(&self, _x: &State, dx: &State) -> f64 {
        self.gf.dot(dx)
    }

    fn grad_x(&self, x: &State, _dx: &State) -> State {
        State::zeros(x.len())
    }

    fn grad_dx(&self, _x: &State, _dx: &State) -> State {
        self.gf.clone()
    }

    fn state_independent(&self) -> bool {
        true
    }

    fn degree(&self) -> u32 {
        1
    }
}

/// ⟨F₁, δx⟩² − Σ_{i≥2} ⟨F_i, δx⟩² with constant generators.
struct QuadraticConstraint {
    gf: Vec<State>,
}

impl ConeConstraint for QuadraticConstraint {
    fn eval(&self, _x: &State, dx: &State) -> f64 {
        let a0 = self.gf[0].dot(dx);
        let mut v = a0 * a0;
        for f in &self.gf[1..] {
            let a = f.dot(dx);
            v -= a * a;
        }
        v
    }

    fn grad_x(&self, x: &State, _dx: &State) -> State {
        State::zeros(x.len())
    }

    fn grad_dx(&self, _x: &State, dx: &State) -> State {
        let mut g = &self.gf[0] * (2.0 * self.gf[0].dot(dx));
        for f in &self.gf[1..] {
            g -= f * (2.0 * f.dot(dx));
        }
        g
    }

    fn state_independent(&self) -> bool {
        true
    }

    fn degree(&self) -> u32 {
        2
    }
}

/// State-dependent linear constraint ⟨F(x), δx⟩_x.
struct FrameConstraint {
    frame: Arc<dyn Fn(&State) -> State + Send + Sync>,
    metric: Metric,
}

impl ConeConstraint for FrameConstraint {
    fn eval(&self, x: &State, dx: &State) -> f64 {
        self.metric.inner(x, &(self.frame)(x), dx)
    }

    fn grad_dx(&self, x: &State, _dx: &State) -> State {
        let f = (self.frame)(x);
        match &self.metric {
            Metric::Identity => f,
            m => m.at(x) * f,
        }
    }

    fn degree(&self) -> u32 {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Polyhedral,
    Quadratic,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipStatus {
    Interior,
    Boundary,
    Outside,
}

/// Membership classification of a normalized tangent vector.
#[derive(Debug, Clone)]
pub struct MembershipVerdict {
    pub status: MembershipStatus,
    /// min_i K_i(x, δx/|δx|_x); compared against ε.
    pub margin: f64,
    /// Constraints achieving the minimum within [`TOL_BOUNDARY`].
    pub active: Vec<usize>,
}

/// Result of the Hilbert projective distance between two cone rays.
#[derive(Debug, Clone, Copy)]
pub struct HilbertResult {
    /// M = inf{λ ≥ 0 | λ δy − δx ∈ 𝒦(x)}, +∞ when the set is empty.
    pub max_ratio: f64,
    /// m = sup{λ ≥ 0 | δx − λ δy ∈ 𝒦(x)}.
    pub min_ratio: f64,
    /// log(M/m), +∞ when M = ∞ or m = 0.
    pub distance: f64,
}

/// Samples returned by the boundary sampler.
#[derive(Debug, Clone)]
pub struct BoundarySamples {
    pub directions: Vec<State>,
    /// True when the sampler could not reach the requested count because
    /// member candidates were scarce (reported, not fatal). Saturating a
    /// low-dimensional facet with duplicates is NOT starvation.
    pub starved: bool,
}

/// A cone field 𝒦_ε(x) given by smooth constraints.
#[derive(Clone)]
pub struct ConeField {
    pub kind: ConeKind,
    constraints: Vec<Arc<dyn ConeConstraint>>,
    metric: Metric,
    /// Estimated maximal strict feasibility margin ε̄ (assumption A3).
    pub feasibility_eps: f64,
    /// Constraints forming samplable boundary facets. For quadratic cones the
    /// linear refinement K₁ touches the cone only at the origin, so only the
    /// mantle K₂ is listed.
    facets: Vec<usize>,
    /// Constant generator frame when available (polyhedral fast paths).
    frame: Option<Vec<State>>,
    dim: usize,
}

impl fmt::Debug for ConeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConeField")
            .field("kind", &self.kind)
            .field("constraints", &self.constraints.len())
            .field("feasibility_eps", &self.feasibility_eps)
            .field("dim", &self.dim)
            .finish()
    }
}

/// Maximize `objective` over the unit sphere by seeded multi-start compass
/// search (the maximin objectives here are non-smooth).
fn sphere_maximin<F>(dim: usize, starts: usize, seed: u64, objective: F) -> (State, f64)
where
    F: Fn(&State) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_u = State::zeros(dim);
    best_u[0] = 1.0;
    let mut best_v = objective(&best_u);
    for _ in 0..starts {
        let mut u = random_unit(dim, &mut rng);
        let mut v = objective(&u);
        let mut sigma = 0.5;
        while sigma > 1e-9 {
            let mut improved = false;
            for _ in 0..2 * dim {
                let cand = {
                    let step = random_unit(dim, &mut rng) * sigma;
                    let raw = &u + step;
                    let n = raw.norm();
                    raw / n
                };
                let cv = objective(&cand);
                if cv > v {
                    u = cand;
                    v = cv;
                    improved = true;
                }
            }
            if !improved {
                sigma *= 0.5;
            }
        }
        if v > best_v {
            best_v = v;
            best_u = u;
        }
    }
    (best_u, best_v)
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> State {
    loop {
        // Box-Muller via sum of uniforms would bias; use polar normal draws.
        let v = State::from_iterator(dim, (0..dim).map(|_| standard_normal(rng)));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Marsaglia polar method.
    loop {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        let s = a * a + b * b;
        if s > 0.0 && s < 1.0 {
            return a * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

impl ConeField {
    /// Polyhedral cone field with a constant generator frame (Assumption A1's
    /// isometry is the identity, so regularity is automatic).
    ///
    /// Checks A2 (full rank) and A3 (strict feasibility) at construction.
    pub fn polyhedral(generators: Vec<State>, metric: Metric) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::ConeConstruction("no generators supplied".into()));
        }
        let dim = generators[0].len();
        if generators.iter().any(|g| g.len() != dim) {
            return Err(Error::ConeConstruction("generators differ in length".into()));
        }
        if generators.len() < dim {
            return Err(Error::ConeConstruction(format!(
                "polyhedral cone needs m >= n generators (got {} < {dim})",
                generators.len()
            )));
        }
        if generators.iter().any(|g| g.norm() < 1e-12) {
            return Err(Error::ConeConstruction("zero generator".into()));
        }
        // A2: frame is full rank.
        let mat = nalgebra::DMatrix::from_columns(&generators.iter().cloned().collect::<Vec<_>>());
        if mat.rank(1e-10) < dim {
            return Err(Error::ConeConstruction(
                "generator frame is rank deficient".into(),
            ));
        }
        let origin = State::zeros(dim);
        let g0 = metric.at(&origin);
        metric.check_spd(&origin)?;
        let constraints: Vec<Arc<dyn ConeConstraint>> = generators
            .iter()
            .map(|f| {
                Arc::new(LinearConstraint { gf: &g0 * f }) as Arc<dyn ConeConstraint>
            })
            .collect();
        let facets = (0..constraints.len()).collect();
        let mut cone = Self {
            kind: ConeKind::Polyhedral,
            constraints,
            metric,
            feasibility_eps: 0.0,
            facets,
            frame: Some(generators),
            dim,
        };
        cone.feasibility_eps = cone.estimate_feasibility(&origin, 64, 7)?;
        Ok(cone)
    }

    /// Quadratic cone field with a constant frame: `K₁ = ⟨F₁, δx⟩`,
    /// `K₂ = ⟨F₁, δx⟩² − Σ_{i≥2} ⟨F_i, δx⟩²`.
    ///
    /// Checks A4 (⟨F₁, F_i⟩ = 0 for i > 1) to 1e-8 besides A2/A3.
    pub fn quadratic(generators: Vec<State>, metric: Metric) -> Result<Self> {
        if generators.len() < 2 {
            return Err(Error::ConeConstruction(
                "quadratic cone needs at least two generators".into(),
            ));
        }
        let dim = generators[0].len();
        if generators.iter().any(|g| g.len() != dim) {
            return Err(Error::ConeConstruction("generators differ in length".into()));
        }
        let origin = State::zeros(dim);
        metric.check_spd(&origin)?;
        for (i, f) in generators.iter().enumerate().skip(1) {
            let ip = metric.inner(&origin, &generators[0], f);
            if ip.abs() > 1e-8 {
                return Err(Error::ConeConstruction(format!(
                    "A4 violated: <F_1, F_{}> = {ip:.3e}",
                    i + 1
                )));
            }
        }
        let g0 = metric.at(&origin);
        let gf: Vec<State> = generators.iter().map(|f| &g0 * f).collect();
        let constraints: Vec<Arc<dyn ConeConstraint>> = vec![
            Arc::new(LinearConstraint { gf: gf[0].clone() }),
            Arc::new(QuadraticConstraint { gf }),
        ];
        let mut cone = Self {
            kind: ConeKind::Quadratic,
            constraints,
            metric,
            feasibility_eps: 0.0,
            // K₁ = 0 ∧ K₂ ≥ 0 forces δx = 0, so only the mantle is a facet.
            facets: vec![1],
            frame: Some(generators),
            dim,
        };
        cone.feasibility_eps = cone.estimate_feasibility(&origin, 64, 7)?;
        Ok(cone)
    }

    /// Polyhedral cone field with a state-dependent frame. A1/A2/A3 are
    /// screened at the supplied sample points only (reported, not certified).
    pub fn polyhedral_field(
        frames: Vec<Arc<dyn Fn(&State) -> State + Send + Sync>>,
        dim: usize,
        metric: Metric,
        screen_at: &[State],
    ) -> Result<Self> {
        if frames.len() < dim {
            return Err(Error::ConeConstruction(
                "polyhedral cone needs m >= n generators".into(),
            ));
        }
        for x in screen_at {
            let cols: Vec<State> = frames.iter().map(|f| f(x)).collect();
            if cols.iter().any(|c| c.norm() < 1e-12) {
                return Err(Error::ConeConstruction(
                    "zero generator at a screening sample".into(),
                ));
            }
            let mat = nalgebra::DMatrix::from_columns(&cols);
            if mat.rank(1e-10) < dim {
                return Err(Error::ConeConstruction(
                    "generator frame rank-deficient at a screening sample".into(),
                ));
            }
        }
        let constraints: Vec<Arc<dyn ConeConstraint>> = frames
            .into_iter()
            .map(|f| {
                Arc::new(FrameConstraint {
                    frame: f,
                    metric: metric.clone(),
                }) as Arc<dyn ConeConstraint>
            })
            .collect();
        let facets = (0..constraints.len()).collect();
        let mut cone = Self {
            kind: ConeKind::Polyhedral,
            constraints,
            metric,
            feasibility_eps: 0.0,
            facets,
            frame: None,
            dim,
        };
        let mut eps = f64::INFINITY;
        for x in screen_at {
            eps = eps.min(cone.estimate_feasibility(x, 64, 7)?);
        }
        cone.feasibility_eps = if eps.is_finite() { eps } else { 0.0 };
        Ok(cone)
    }

    /// Custom cone field from explicit constraints (used by the Kuramoto
    /// order-parameter cone). `facets` lists the samplable boundary
    /// constraints; feasibility is estimated at `reference_x`.
    pub fn custom(
        constraints: Vec<Arc<dyn ConeConstraint>>,
        dim: usize,
        metric: Metric,
        facets: Vec<usize>,
        reference_x: &State,
    ) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::ConeConstruction("no constraints supplied".into()));
        }
        let mut cone = Self {
            kind: ConeKind::Custom,
            constraints,
            metric,
            feasibility_eps: 0.0,
            facets,
            frame: None,
            dim,
        };
        cone.feasibility_eps = cone.estimate_feasibility(reference_x, 64, 7)?;
        Ok(cone)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn facet_indices(&self) -> &[usize] {
        &self.facets
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Constant generator frame when the cone was built from one.
    pub fn generators(&self) -> Option<&[State]> {
        self.frame.as_deref()
    }

    pub fn constraint(&self, i: usize) -> &dyn ConeConstraint {
        self.constraints[i].as_ref()
    }

    /// Evaluate all constraints on the metric-normalized vector.
    pub fn constraint_values(&self, x: &State, dx: &State) -> Result<Vec<f64>> {
        let n = self.metric.norm(x, dx);
        if n < 1e-300 {
            return Err(Error::DegenerateVector);
        }
        let u = dx / n;
        Ok(self.constraints.iter().map(|k| k.eval(x, &u)).collect())
    }

    /// Classify `dx` against 𝒦_ε(x). The vector is normalized first, so the
    /// verdict is independent of its length.
    pub fn membership(&self, x: &State, dx: &State, eps: f64) -> Result<MembershipVerdict> {
        let vals = self.constraint_values(x, dx)?;
        let margin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let rel = margin - eps;
        let status = if rel > TOL_BOUNDARY {
            MembershipStatus::Interior
        } else if rel >= -TOL_BOUNDARY {
            MembershipStatus::Boundary
        } else {
            MembershipStatus::Outside
        };
        let active = vals
            .iter()
            .enumerate()
            .filter(|(_, &v)| v - margin <= TOL_BOUNDARY)
            .map(|(i, _)| i)
            .collect();
        Ok(MembershipVerdict {
            status,
            margin,
            active,
        })
    }

    /// Closed-cone membership for the Hilbert bisection: the zero vector is
    /// the apex and counts as a member.
    fn in_closed_cone(&self, x: &State, v: &State) -> bool {
        let n = self.metric.norm(x, v);
        if n < 1e-300 {
            return true;
        }
        let u = v / n;
        self.constraints
            .iter()
            .all(|k| k.eval(x, &u) >= -TOL_BOUNDARY)
    }

    fn require_member(&self, x: &State, v: &State, name: &str) -> Result<()> {
        let m = self.membership(x, v, 0.0)?;
        if m.status == MembershipStatus::Outside {
            return Err(Error::Precondition(format!(
                "{name} is outside the cone (margin {:.3e})",
                m.margin
            )));
        }
        Ok(())
    }

    /// M = inf{λ ≥ 0 | λ δy − δx ∈ 𝒦(x)}, by geometric bracket growth and
    /// bisection; +∞ when no bracket below 1e12 exists.
    pub fn hilbert_max_ratio(&self, x: &State, dx: &State, dy: &State) -> Result<f64> {
        self.require_member(x, dx, "dx")?;
        self.require_member(x, dy, "dy")?;
        let member = |lam: f64| self.in_closed_cone(x, &(dy * lam - dx));
        // For a convex cone the member set is a half-line [M, ∞).
        let scale = self.metric.norm(x, dx) / self.metric.norm(x, dy);
        let mut hi = scale;
        while !member(hi) {
            hi *= 2.0;
            if hi > RATIO_INF * scale.max(1.0) {
                return Ok(f64::INFINITY);
            }
        }
        let mut lo = 0.0;
        if member(lo) {
            return Ok(0.0);
        }
        for _ in 0..300 {
            if hi - lo <= TOL_BISECT * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if member(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// m = sup{λ ≥ 0 | δx − λ δy ∈ 𝒦(x)} (finite for pointed cones;
    /// 0 when δx sits on a facet that δy does not share).
    pub fn hilbert_min_ratio(&self, x: &State, dx: &State, dy: &State) -> Result<f64> {
        self.require_member(x, dx, "dx")?;
        self.require_member(x, dy, "dy")?;
        let member = |lam: f64| self.in_closed_cone(x, &(dx - dy * lam));
        // Member set is the interval [0, m].
        let scale = self.metric.norm(x, dx) / self.metric.norm(x, dy);
        let mut hi = scale;
        while member(hi) {
            hi *= 2.0;
            if hi > RATIO_INF * scale.max(1.0) {
                return Err(Error::Precondition(
                    "min-ratio bracket unbounded; cone appears non-pointed".into(),
                ));
            }
        }
        let mut lo = 0.0;
        for _ in 0..300 {
            if hi - lo <= TOL_BISECT * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if member(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let m = 0.5 * (lo + hi);
        // Below bisection resolution the ratio is numerically zero.
        if m < 1e-11 * scale {
            return Ok(0.0);
        }
        Ok(m)
    }

    /// Hilbert projective distance log(M/m) between the rays of δx and δy.
    pub fn hilbert_distance(&self, x: &State, dx: &State, dy: &State) -> Result<HilbertResult> {
        let max_ratio = self.hilbert_max_ratio(x, dx, dy)?;
        let min_ratio = self.hilbert_min_ratio(x, dx, dy)?;
        let distance = if !max_ratio.is_finite() || min_ratio <= 0.0 {
            f64::INFINITY
        } else {
            let d = (max_ratio / min_ratio).ln();
            // Bisection resolution: clamp the tiny negative values that
            // appear when dx and dy are the same ray.
            d.max(0.0)
        };
        Ok(HilbertResult {
            max_ratio,
            min_ratio,
            distance,
        })
    }

    /// Estimated maximal strict margin ε̄ = max_{|u|=1} min_i K_i(x, u)
    /// (assumption A3), by multi-start compass search.
    pub fn estimate_feasibility(&self, x: &State, starts: usize, seed: u64) -> Result<f64> {
        let obj = |u: &State| {
            let nu = self.metric.norm(x, u);
            let un = u / nu;
            self.constraints
                .iter()
                .map(|k| k.eval(x, &un))
                .fold(f64::INFINITY, f64::min)
        };
        let (_, best) = sphere_maximin(self.dim, starts, seed, obj);
        if best <= 0.0 {
            return Err(Error::InfeasibleCone { margin: best });
        }
        Ok(best)
    }

    /// Direction maximizing the gradient-normalized margin
    /// min_i K_i(x,u)/|∂K_i/∂δx| over the unit sphere — the analytic center
    /// used for conal curves.
    pub fn center_direction(&self, x: &State, seed: u64) -> State {
        let obj = |u: &State| {
            let nu = self.metric.norm(x, u);
            let un = u / nu;
            self.constraints
                .iter()
                .map(|k| {
                    let g = k.grad_dx(x, &un).norm().max(1e-12);
                    k.eval(x, &un) / g
                })
                .fold(f64::INFINITY, f64::min)
        };
        let (u, _) = sphere_maximin(self.dim, 32, seed, obj);
        &u / self.metric.norm(x, &u)
    }

    /// Cheap warm-started refinement of [`Self::center_direction`], for
    /// marching conal curves of state-dependent cone fields. Constant cones
    /// return `warm` unchanged.
    pub fn refine_center(&self, x: &State, warm: &State, seed: u64) -> State {
        if self.constraints.iter().all(|k| k.state_independent()) {
            return warm.clone();
        }
        let obj = |u: &State| {
            let nu = self.metric.norm(x, u);
            let un = u / nu;
            self.constraints
                .iter()
                .map(|k| {
                    let g = k.grad_dx(x, &un).norm().max(1e-12);
                    k.eval(x, &un) / g
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = warm / self.metric.norm(x, warm);
        let mut v = obj(&u);
        let mut sigma = 0.1;
        while sigma > 1e-7 {
            let mut improved = false;
            for _ in 0..2 * self.dim {
                let cand = {
                    let raw = &u + random_unit(self.dim, &mut rng) * sigma;
                    let n = raw.norm();
                    raw / n
                };
                let cv = obj(&cand);
                if cv > v {
                    u = cand;
                    v = cv;
                    improved = true;
                }
            }
            if !improved {
                sigma *= 0.5;
            }
        }
        &u / self.metric.norm(x, &u)
    }

    /// Sample `count` unit tangents on facet `i`: cone members with
    /// `K_i(x, θ) = 0 ± 1e-10`, obtained by keeping uniformly-drawn cone
    /// members and projecting them onto {K_i = 0} with damped Newton steps
    /// along ∂K_i/∂δx. Near-duplicates (angular distance < 1e-3) are pruned.
    pub fn boundary_sampler<R: Rng>(
        &self,
        x: &State,
        facet: usize,
        count: usize,
        rng: &mut R,
    ) -> BoundarySamples {
        let budget = 200 * count.max(1);
        let mut kept: Vec<State> = Vec::new();
        let mut accepted = 0usize;
        for _ in 0..budget {
            if kept.len() >= count {
                break;
            }
            let u = random_unit(self.dim, rng);
            let nu = self.metric.norm(x, &u);
            let mut v = &u / nu;
            // keep cone members only
            if !self
                .constraints
                .iter()
                .all(|k| k.eval(x, &v) >= -TOL_BOUNDARY)
            {
                continue;
            }
            // damped Newton projection onto {K_facet = 0}, staying on the sphere
            let k = &self.constraints[facet];
            let mut ok = false;
            for _ in 0..60 {
                let val = k.eval(x, &v);
                if val.abs() <= 1e-10 {
                    ok = true;
                    break;
                }
                let g = k.grad_dx(x, &v);
                let g2 = g.norm_squared();
                if g2 < 1e-20 {
                    break;
                }
                let mut step = val / g2;
                // damping keeps the iterate in the vicinity of the sphere
                let max_step = 0.5 / g.norm().max(1e-12);
                step = step.clamp(-max_step, max_step);
                v -= g * step;
                let n = self.metric.norm(x, &v);
                if n < 1e-12 {
                    break;
                }
                v /= n;
            }
            if !ok {
                continue;
            }
            // other constraints must remain satisfied after projection
            if !self
                .constraints
                .iter()
                .enumerate()
                .all(|(j, kc)| j == facet || kc.eval(x, &v) >= -TOL_BOUNDARY)
            {
                continue;
            }
            accepted += 1;
            let dup = kept
                .iter()
                .any(|w| (w - &v).norm() < 1e-3 || (w + &v).norm() < 1e-3);
            if !dup {
                kept.push(v);
            }
        }
        // Saturating a low-dimensional facet (many accepted, few unique rays)
        // is complete coverage, not starvation.
        let starved = kept.len() < count && accepted < count;
        BoundarySamples {
            directions: kept,
            starved,
        }
    }

    /// Draw a uniformly-oriented member of 𝒦_ε(x) by rejection; None when the
    /// budget is exhausted.
    pub fn sample_member<R: Rng>(
        &self,
        x: &State,
        eps: f64,
        rng: &mut R,
        budget: usize,
    ) -> Option<State> {
        for _ in 0..budget {
            let u = random_unit(self.dim, rng);
            let v = &u / self.metric.norm(x, &u);
            if self.constraints.iter().all(|k| k.eval(x, &v) >= eps) {
                return Some(v);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn orthant(n: usize) -> ConeField {
        let gens = (0..n)
            .map(|i| {
                let mut e = State::zeros(n);
                e[i] = 1.0;
                e
            })
            .collect();
        ConeField::polyhedral(gens, Metric::Identity).unwrap()
    }

    /// Closed-form orthant Hilbert data (independent oracle).
    fn orthant_oracle(dx: &State, dy: &State) -> (f64, f64) {
        let mut mx: f64 = 0.0;
        let mut mn = f64::INFINITY;
        for i in 0..dx.len() {
            if dy[i] > 0.0 {
                mx = mx.max(dx[i] / dy[i]);
                mn = mn.min(dx[i] / dy[i]);
            } else if dx[i] > 0.0 {
                mx = f64::INFINITY;
            }
        }
        (mx, mn)
    }

    #[test]
    fn orthant_membership_cases() {
        let cone = orthant(2);
        let x = State::zeros(2);
        let m = cone
            .membership(&x, &State::from_vec(vec![1.0, 2.0]), 0.0)
            .unwrap();
        assert_eq!(m.status, MembershipStatus::Interior);
        assert_relative_eq!(m.margin, 1.0 / 5.0f64.sqrt(), epsilon = 1e-12);

        let m = cone
            .membership(&x, &State::from_vec(vec![0.0, 1.0]), 0.0)
            .unwrap();
        assert_eq!(m.status, MembershipStatus::Boundary);
        assert_eq!(m.active, vec![0]);

        let m = cone
            .membership(&x, &State::from_vec(vec![-1.0, 1.0]), 0.0)
            .unwrap();
        assert_eq!(m.status, MembershipStatus::Outside);

        assert!(matches!(
            cone.membership(&x, &State::zeros(2), 0.0),
            Err(Error::DegenerateVector)
        ));
    }

    #[test]
    fn membership_is_scale_invariant() {
        let cone = orthant(3);
        let x = State::zeros(3);
        let v = State::from_vec(vec![0.3, 1.1, 0.01]);
        let base = cone.membership(&x, &v, 0.0).unwrap();
        for rho in [1e-6, 1.0, 1e6] {
            let m = cone.membership(&x, &(&v * rho), 0.0).unwrap();
            assert_eq!(m.status, base.status);
            assert_relative_eq!(m.margin, base.margin, epsilon = 1e-12);
        }
    }

    #[test]
    fn pendulum_cone_constraints() {
        let cone = ConeField::polyhedral(
            vec![
                State::from_vec(vec![1.0, 0.0]),
                State::from_vec(vec![1.0, 1.0]),
            ],
            Metric::Identity,
        )
        .unwrap();
        let x = State::zeros(2);
        // δθ ≥ 0 and δθ + δv ≥ 0
        let vals = cone
            .constraint_values(&x, &State::from_vec(vec![1.0, -0.5]))
            .unwrap();
        assert!(vals[0] > 0.0 && vals[1] > 0.0);
        let m = cone
            .membership(&x, &State::from_vec(vec![1.0, -1.5]), 0.0)
            .unwrap();
        assert_eq!(m.status, MembershipStatus::Outside);
    }

    #[test]
    fn contradictory_half_spaces_are_infeasible() {
        let r = ConeField::polyhedral(
            vec![
                State::from_vec(vec![1.0, 0.0]),
                State::from_vec(vec![-1.0, 0.0]),
            ],
            Metric::Identity,
        );
        assert!(matches!(r, Err(Error::InfeasibleCone { .. })));
    }

    #[test]
    fn rank_deficient_frame_rejected() {
        let r = ConeField::polyhedral(
            vec![
                State::from_vec(vec![1.0, 0.0]),
                State::from_vec(vec![2.0, 0.0]),
            ],
            Metric::Identity,
        );
        assert!(matches!(r, Err(Error::ConeConstruction(_))));
    }

    #[test]
    fn quadratic_ice_cream_membership() {
        let e = |i: usize| {
            let mut v = State::zeros(3);
            v[i] = 1.0;
            v
        };
        let cone = ConeField::quadratic(vec![e(0), e(1), e(2)], Metric::Identity).unwrap();
        let x = State::zeros(3);
        // axis ray is interior
        let m = cone.membership(&x, &e(0), 0.0).unwrap();
        assert_eq!(m.status, MembershipStatus::Interior);
        // equatorial direction is outside
        let m = cone.membership(&x, &e(1), 0.0).unwrap();
        assert_eq!(m.status, MembershipStatus::Outside);
        // 45° mantle ray: δx₁² = δx₂² + δx₃²
        let m = cone
            .membership(&x, &State::from_vec(vec![1.0, 0.6, 0.8]), 0.0)
            .unwrap();
        assert_eq!(m.status, MembershipStatus::Boundary);
        // interior: δx₁² > δx₂² + δx₃²
        let m = cone
            .membership(&x, &State::from_vec(vec![2.0, 0.6, 0.8]), 0.0)
            .unwrap();
        assert_eq!(m.status, MembershipStatus::Interior);
    }

    #[test]
    fn quadratic_requires_orthogonal_frame() {
        let r = ConeField::quadratic(
            vec![
                State::from_vec(vec![1.0, 0.0]),
                State::from_vec(vec![0.5, 1.0]),
            ],
            Metric::Identity,
        );
        assert!(matches!(r, Err(Error::ConeConstruction(_))));
    }

    #[test]
    fn hilbert_orthant_closed_form_case() {
        let cone = orthant(2);
        let x = State::zeros(2);
        let dx = State::from_vec(vec![2.0, 1.0]);
        let dy = State::from_vec(vec![1.0, 1.0]);
        let r = cone.hilbert_distance(&x, &dx, &dy).unwrap();
        assert_relative_eq!(r.max_ratio, 2.0, epsilon = 1e-8);
        assert_relative_eq!(r.min_ratio, 1.0, epsilon = 1e-8);
        assert_relative_eq!(r.distance, 2.0f64.ln(), epsilon = 1e-8);
    }

    #[test]
    fn hilbert_identical_rays_zero_distance() {
        let cone = orthant(3);
        let x = State::zeros(3);
        let dx = State::from_vec(vec![0.7, 0.2, 1.3]);
        let r = cone.hilbert_distance(&x, &dx, &(&dx * 3.5)).unwrap();
        assert_relative_eq!(r.distance, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn hilbert_boundary_cases() {
        let cone = orthant(2);
        let x = State::zeros(2);
        // δy on the boundary, δx interior and non-parallel: m = 0 → distance ∞
        let dx = State::from_vec(vec![1.0, 1.0]);
        let dy = State::from_vec(vec![0.0, 1.0]);
        let r = cone.hilbert_distance(&x, &dx, &dy).unwrap();
        assert!(r.max_ratio.is_infinite());
        assert!(r.distance.is_infinite());
        // swapped: M finite, m = 0 → distance ∞
        let r = cone.hilbert_distance(&x, &dy, &dx).unwrap();
        assert!(r.max_ratio.is_finite());
        assert!(r.min_ratio.abs() < 1e-9);
        assert!(r.distance.is_infinite());
    }

    #[test]
    fn hilbert_matches_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 3, 4] {
            let cone = orthant(n);
            let x = State::zeros(n);
            for _ in 0..50 {
                let dx = State::from_iterator(n, (0..n).map(|_| rng.random_range(0.05..2.0)));
                let dy = State::from_iterator(n, (0..n).map(|_| rng.random_range(0.05..2.0)));
                let (mx, mn) = orthant_oracle(&dx, &dy);
                let d_expect = (mx / mn).ln();
                let r = cone.hilbert_distance(&x, &dx, &dy).unwrap();
                assert_relative_eq!(r.distance, d_expect, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn hilbert_scaling_and_symmetry() {
        let cone = orthant(3);
        let x = State::zeros(3);
        let dx = State::from_vec(vec![1.0, 0.4, 2.2]);
        let dy = State::from_vec(vec![0.3, 1.8, 0.9]);
        let d0 = cone.hilbert_distance(&x, &dx, &dy).unwrap().distance;
        for a in [0.1, 1.0, 10.0] {
            for b in [0.1, 1.0, 10.0] {
                let d = cone
                    .hilbert_distance(&x, &(&dx * a), &(&dy * b))
                    .unwrap()
                    .distance;
                assert_relative_eq!(d, d0, epsilon = 1e-8);
            }
        }
        let dswap = cone.hilbert_distance(&x, &dy, &dx).unwrap().distance;
        assert_relative_eq!(dswap, d0, epsilon = 1e-8);
    }

    #[test]
    fn hilbert_rejects_outside_inputs() {
        let cone = orthant(2);
        let x = State::zeros(2);
        let r = cone.hilbert_distance(
            &x,
            &State::from_vec(vec![-1.0, 1.0]),
            &State::from_vec(vec![1.0, 1.0]),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn boundary_sampler_facet_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // ℝ² orthant, facet 0 (δx₁ = 0): the single ray (0, 1)
        let cone = orthant(2);
        let x = State::zeros(2);
        let s = cone.boundary_sampler(&x, 0, 50, &mut rng);
        assert!(!s.starved);
        assert_eq!(s.directions.len(), 1);
        assert!((s.directions[0][0]).abs() < 1e-9);
        assert_relative_eq!(s.directions[0][1], 1.0, epsilon = 1e-9);

        // ℝ³ orthant, facet 0: quarter circle {(0, a, b) : a, b ≥ 0}
        let cone = orthant(3);
        let x = State::zeros(3);
        let s = cone.boundary_sampler(&x, 0, 40, &mut rng);
        assert!(s.directions.len() > 5);
        for v in &s.directions {
            assert!(v[0].abs() < 1e-9);
            assert!(v[1] >= -1e-9 && v[2] >= -1e-9);
            assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn boundary_sampler_quadratic_mantle() {
        let e = |i: usize| {
            let mut v = State::zeros(3);
            v[i] = 1.0;
            v
        };
        let cone = ConeField::quadratic(vec![e(0), e(1), e(2)], Metric::Identity).unwrap();
        let x = State::zeros(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = cone.boundary_sampler(&x, 1, 30, &mut rng);
        assert!(s.directions.len() > 5, "got {}", s.directions.len());
        for v in &s.directions {
            let k2 = cone.constraint(1).eval(&x, v);
            assert!(k2.abs() <= 1e-10, "mantle residual {k2:.3e}");
            assert!(cone.constraint(0).eval(&x, v) >= -1e-9);
        }
    }

    #[test]
    fn feasibility_margin_orthant() {
        // max over the sphere of min_i u_i is 1/√n at the diagonal
        for n in [2usize, 3] {
            let cone = orthant(n);
            assert_relative_eq!(
                cone.feasibility_eps,
                1.0 / (n as f64).sqrt(),
                epsilon = 1e-4
            );
        }
    }

    #[test]
    fn center_direction_uses_normalized_constraints() {
        // pendulum cone: center of min(u₁, (u₁+u₂)/√2) is (1, √2−1)/|·|
        let cone = ConeField::polyhedral(
            vec![
                State::from_vec(vec![1.0, 0.0]),
                State::from_vec(vec![1.0, 1.0]),
            ],
            Metric::Identity,
        )
        .unwrap();
        let c = cone.center_direction(&State::zeros(2), 9);
        let expected = State::from_vec(vec![1.0, 2.0f64.sqrt() - 1.0]);
        let expected = &expected / expected.norm();
        assert!((c - expected).norm() < 1e-3);
    }

    #[test]
    fn nesting_interior_at_larger_eps_implies_smaller() {
        let cone = orthant(3);
        let x = State::zeros(3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let grid = [0.0, 0.01, 0.1];
        for _ in 0..200 {
            let v = random_unit(3, &mut rng);
            for w in [1usize, 2] {
                let a = cone.membership(&x, &v, grid[w]).unwrap();
                if a.status == MembershipStatus::Interior {
                    let b = cone.membership(&x, &v, grid[w - 1]).unwrap();
                    assert_eq!(b.status, MembershipStatus::Interior);
                }
            }
        }
    }

    #[test]
    fn pointedness_on_samples() {
        let cone = orthant(3);
        let x = State::zeros(3);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let v = random_unit(3, &mut rng);
            let a = cone.membership(&x, &v, 0.0).unwrap();
            let b = cone.membership(&x, &(-&v), 0.0).unwrap();
            assert!(
                !(a.status == MembershipStatus::Interior && b.status == MembershipStatus::Interior)
            );
        }
    }

    #[test]
    fn declared_homogeneity_degrees_hold_on_samples() {
        let e = |i: usize| {
            let mut v = State::zeros(3);
            v[i] = 1.0;
            v
        };
        let cone = ConeField::quadratic(vec![e(0), e(1), e(2)], Metric::Identity).unwrap();
        let x = State::zeros(3);
        let v = State::from_vec(vec![1.3, 0.4, -0.2]);
        for rho in [0.5, 2.0, 7.0] {
            for i in 0..cone.n_constraints() {
                let k = cone.constraint(i);
                let scaled = k.eval(&x, &(&v * rho));
                let expect = k.eval(&x, &v) * rho.powi(k.degree() as i32);
                assert_relative_eq!(scaled, expect, epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }
}
