//! Ready-made model + cone + region bundles, registered by name for the CLI.
//!
//! Every bundle carries an analytic Jacobian (cross-checked against finite
//! differences in tests) and the cone/region pair its expected verdicts refer
//! to.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::cones::{ConeConstraint, ConeField};
use crate::dynamics::{CompactRegion, Metric, State, SystemModel};
use crate::error::Error;
use crate::Result;

/// A named system/cone/region package with its expected check outcomes.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub name: String,
    pub model: SystemModel,
    pub cone: ConeField,
    pub default_region: CompactRegion,
    /// Named expected verdicts reproduced by the test suite, e.g.
    /// ("theorem3", "PASS").
    pub expected: Vec<(String, String)>,
}

/// Damped pendulum `θ̇ = v, v̇ = -sin θ - k v + u` on the cylinder 𝕊 × ℝ.
///
/// For `u ≤ 1` the bundle uses the wedge `δθ ≥ 0, δθ + δv ≥ 0` on a box
/// around the hanging equilibrium; strict positivity holds at sample
/// resolution exactly when `k > 2` (facet margin (k-2)/√2 at θ = 0).
///
/// For `u > 1` there is no equilibrium and the attractor is a rotation. The
/// bundle then switches to the wedge `δθ ≥ 0, δθ + c δv ≥ 0` with `c = 0.39`
/// on the band `v ∈ [0.1, 0.95]`: strict positivity needs `k > c + 1/c`, and
/// the shallower second edge keeps the vector field itself inside the cone on
/// the band, which the unique-periodic-orbit test requires. With the steep
/// `c = 1` edge no forward-invariant band satisfies that containment.
pub fn pendulum(k: f64, u: f64) -> Result<ModelBundle> {
    let model = SystemModel::new(2, move |x: &State| {
        State::from_vec(vec![x[1], -x[0].sin() - k * x[1] + u])
    })
    .with_jacobian(move |x: &State| {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -x[0].cos(), -k])
    })
    .with_wrap(vec![true, false]);

    let rotating = u > 1.0;
    let slope = if rotating { 0.39 } else { 1.0 };
    let cone = ConeField::polyhedral(
        vec![
            State::from_vec(vec![1.0, 0.0]),
            State::from_vec(vec![1.0, slope]),
        ],
        Metric::Identity,
    )?;
    let default_region = if rotating {
        CompactRegion::new_box(
            State::from_vec(vec![-PI, 0.1]),
            State::from_vec(vec![PI, 0.95]),
        )?
        .with_wrap(vec![true, false])
    } else {
        CompactRegion::new_box(
            State::from_vec(vec![-1.0, -1.0]),
            State::from_vec(vec![1.0, 1.0]),
        )?
        .with_wrap(vec![true, false])
    };
    let strict = if rotating {
        k > slope + 1.0 / slope
    } else {
        k > 2.0
    };
    let mut expected = vec![(
        "theorem3".to_string(),
        if strict { "PASS" } else { "FAIL" }.to_string(),
    )];
    if rotating {
        expected.push(("limit_cycle".into(), "limit_cycle".into()));
    }
    Ok(ModelBundle {
        name: format!("pendulum(k={k}, u={u})"),
        model,
        cone,
        default_region,
        expected,
    })
}

/// Two-node cooperative network `ẋ₁ = -x₁ + c tanh(x₂), ẋ₂ = -x₂ + c tanh(x₁)`
/// with the positive-orthant cone on [-2, 2]².
///
/// Off-diagonal Jacobian entries are `c sech²`, strictly positive for c > 0.
/// For c > 1 the network is bistable with equilibria at 0 and ±x*, where x*
/// solves x = c tanh x.
pub fn cooperative_demo(c: f64) -> Result<ModelBundle> {
    let model = SystemModel::new(2, move |x: &State| {
        State::from_vec(vec![-x[0] + c * x[1].tanh(), -x[1] + c * x[0].tanh()])
    })
    .with_jacobian(move |x: &State| {
        let s1 = c / x[1].cosh().powi(2);
        let s2 = c / x[0].cosh().powi(2);
        DMatrix::from_row_slice(2, 2, &[-1.0, s1, s2, -1.0])
    });
    let cone = orthant_cone(2)?;
    let default_region = CompactRegion::new_box(
        State::from_vec(vec![-2.0, -2.0]),
        State::from_vec(vec![2.0, 2.0]),
    )?;
    let verdict = if c > 0.0 { "PASS" } else { "FAIL" };
    Ok(ModelBundle {
        name: format!("cooperative_demo(c={c})"),
        model,
        cone,
        default_region,
        expected: vec![
            ("theorem1".into(), verdict.into()),
            ("theorem3".into(), verdict.into()),
        ],
    })
}

/// Linear system `ẋ = Ax` with the positive-orthant cone on [-1, 1]ⁿ.
///
/// Cone invariance of the flow is equivalent to A having nonnegative
/// off-diagonal entries (and to e^{At} being entrywise nonnegative, the
/// oracle used in tests).
pub fn metzler_linear(a: DMatrix<f64>) -> Result<ModelBundle> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension("matrix must be square".into()));
    }
    let n = a.nrows();
    let is_metzler = (0..n)
        .all(|i| (0..n).all(|j| i == j || a[(i, j)] >= 0.0));
    let a_f = a.clone();
    let a_j = a.clone();
    let model = SystemModel::new(n, move |x: &State| &a_f * x)
        .with_jacobian(move |_x: &State| a_j.clone());
    let cone = orthant_cone(n)?;
    let default_region =
        CompactRegion::new_box(State::from_element(n, -1.0), State::from_element(n, 1.0))?;
    Ok(ModelBundle {
        name: "metzler_linear".into(),
        model,
        cone,
        default_region,
        expected: vec![(
            "invariance".into(),
            if is_metzler { "PASS" } else { "FAIL" }.to_string(),
        )],
    })
}

/// The positive orthant as a polyhedral cone field (canonical basis frame).
pub fn orthant_cone(n: usize) -> Result<ConeField> {
    let gens = (0..n)
        .map(|i| {
            let mut e = State::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    ConeField::polyhedral(gens, Metric::Identity)
}

/// Phase centroid `ρ e^{iφ} = (1/n) Σ_k e^{iθ_k}`.
///
/// `phi` is the principal value in (-π, π]; it is `None` when ρ < 1e-12
/// (balanced phases), where the mean phase is meaningless.
#[derive(Debug, Clone, Copy)]
pub struct Centroid {
    pub rho: f64,
    pub phi: Option<f64>,
}

pub fn centroid(theta: &State) -> Centroid {
    let n = theta.len() as f64;
    let c = theta.iter().map(|t| t.cos()).sum::<f64>() / n;
    let s = theta.iter().map(|t| t.sin()).sum::<f64>() / n;
    let rho = (c * c + s * s).sqrt();
    let phi = if rho < 1e-12 { None } else { Some(s.atan2(c)) };
    Centroid { rho, phi }
}

/// Mean phase, failing on balanced configurations.
pub fn mean_phase(theta: &State) -> Result<f64> {
    let c = centroid(theta);
    c.phi.ok_or(Error::PhaseBalanced { rho: c.rho })
}

/// Kuramoto coupling matrix C(θ): off-diagonal cos(θ_i − θ_k), diagonal
/// −Σ_{i≠k} cos(θ_i − θ_k). The Jacobian of the flow is (1/n) C(θ), and
/// C(θ)𝟙 = 0 captures the invariance of the synchronization manifold.
pub fn kuramoto_coupling(theta: &State) -> DMatrix<f64> {
    let n = theta.len();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut diag = 0.0;
        for i in 0..n {
            if i == k {
                continue;
            }
            let w = (theta[i] - theta[k]).cos();
            c[(k, i)] = w;
            diag -= w;
        }
        c[(k, k)] = diag;
    }
    c
}

/// Orthogonal projector Π = I − 𝟙𝟙ᵀ/n onto the zero-mean subspace.
pub fn consensus_projector(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)
}

/// Order-parameter cone for the all-to-all Kuramoto model:
/// `K₁ = 𝟙ᵀδθ`, `K₂ = e^{2λρ(θ)} (𝟙ᵀδθ)² − δθᵀ Π δθ`.
///
/// The e^{2λρ} factor widens the cone as the phases synchronize; λ is the
/// design parameter that lets the ρ̇ term dominate outside the π/2 gap
/// region.
struct KuramotoMantle {
    n: usize,
    lambda: f64,
    pi: DMatrix<f64>,
}

impl ConeConstraint for KuramotoMantle {
    fn eval(&self, x: &State, dx: &State) -> f64 {
        let rho = centroid(x).rho;
        let ones_dot = dx.sum();
        let quad = (dx.transpose() * &self.pi * dx)[(0, 0)];
        (2.0 * self.lambda * rho).exp() * ones_dot * ones_dot - quad
    }

    fn grad_x(&self, x: &State, dx: &State) -> State {
        let c = centroid(x);
        let ones_dot = dx.sum();
        let Some(phi) = c.phi else {
            return State::zeros(self.n);
        };
        // ∂ρ/∂θ_k = -(1/n) sin(θ_k − φ)
        let coeff = 2.0 * self.lambda * (2.0 * self.lambda * c.rho).exp() * ones_dot * ones_dot;
        State::from_iterator(
            self.n,
            x.iter()
                .map(|&t| coeff * (-(t - phi).sin() / self.n as f64)),
        )
    }

    fn grad_dx(&self, x: &State, dx: &State) -> State {
        let rho = centroid(x).rho;
        let ones_dot = dx.sum();
        let mut g = State::from_element(self.n, 2.0 * (2.0 * self.lambda * rho).exp() * ones_dot);
        g -= (&self.pi * dx) * 2.0;
        g
    }

    fn degree(&self) -> u32 {
        2
    }
}

struct ConsensusHalfSpace {
    n: usize,
}

impl ConeConstraint for ConsensusHalfSpace {
    fn eval(&self, _x: &State, dx: &State) -> f64 {
        dx.sum()
    }

    fn grad_x(&self, x: &State, _dx: &State) -> State {
        State::zeros(x.len())
    }

    fn grad_dx(&self, _x: &State, _dx: &State) -> State {
        State::from_element(self.n, 1.0)
    }

    fn state_independent(&self) -> bool {
        true
    }

    fn degree(&self) -> u32 {
        1
    }
}

/// Build the Kuramoto order-parameter cone field for `n` oscillators.
pub fn kuramoto_rho_cone(n: usize, lambda_param: f64) -> Result<ConeField> {
    if n < 2 {
        return Err(Error::Precondition("kuramoto needs n >= 2".into()));
    }
    if lambda_param <= 0.0 {
        return Err(Error::Precondition("lambda_param must be > 0".into()));
    }
    let constraints: Vec<Arc<dyn ConeConstraint>> = vec![
        Arc::new(ConsensusHalfSpace { n }),
        Arc::new(KuramotoMantle {
            n,
            lambda: lambda_param,
            pi: consensus_projector(n),
        }),
    ];
    // K₁ = 0 with K₂ ≥ 0 forces δθ = 0, so only the mantle is a facet.
    ConeField::custom(
        constraints,
        n,
        Metric::Identity,
        vec![1],
        &State::zeros(n),
    )
}

/// All-to-all Kuramoto with zero natural frequencies:
/// `θ̇_k = (1/n) Σ_i sin(θ_i − θ_k)` on the torus, with the order-parameter
/// cone and the pairwise-gap default region (gaps ≤ π/2 − 0.1).
pub fn kuramoto(n: usize, lambda_param: f64) -> Result<ModelBundle> {
    if n < 2 {
        return Err(Error::Precondition("kuramoto needs n >= 2".into()));
    }
    let model = SystemModel::new(n, move |theta: &State| {
        let nn = theta.len();
        State::from_iterator(
            nn,
            (0..nn).map(|k| {
                theta.iter().map(|&ti| (ti - theta[k]).sin()).sum::<f64>() / nn as f64
            }),
        )
    })
    .with_jacobian(move |theta: &State| kuramoto_coupling(theta) / theta.len() as f64)
    .with_wrap(vec![true; n]);
    let cone = kuramoto_rho_cone(n, lambda_param)?;
    let default_region = CompactRegion::phase_gap(n, PI / 2.0 - 0.1)?.with_grid_density(5);
    Ok(ModelBundle {
        name: format!("kuramoto(n={n})"),
        model,
        cone,
        default_region,
        expected: vec![
            ("theorem3".into(), "PASS".into()),
            ("attractor".into(), "synchronization".into()),
        ],
    })
}

/// Scalar parameters accepted by the registry builders.
pub type ParamMap = std::collections::BTreeMap<String, f64>;

/// One registry entry: name, parameter names with defaults, and a builder.
pub struct RegistryEntry {
    pub name: &'static str,
    pub params: &'static [(&'static str, f64)],
    pub needs_matrix: bool,
    pub build: fn(&ParamMap, Option<&DMatrix<f64>>) -> Result<ModelBundle>,
}

fn param(map: &ParamMap, key: &str, default: f64) -> f64 {
    map.get(key).copied().unwrap_or(default)
}

/// Model registry for the CLI: look up by name, build with a parameter map.
pub fn registry() -> Vec<RegistryEntry> {
    vec![
        RegistryEntry {
            name: "pendulum",
            params: &[("k", 3.0), ("u", 0.0)],
            needs_matrix: false,
            build: |p, _| pendulum(param(p, "k", 3.0), param(p, "u", 0.0)),
        },
        RegistryEntry {
            name: "cooperative_demo",
            params: &[("c", 2.0)],
            needs_matrix: false,
            build: |p, _| cooperative_demo(param(p, "c", 2.0)),
        },
        RegistryEntry {
            name: "metzler_linear",
            params: &[],
            needs_matrix: true,
            build: |_, m| {
                let m = m.ok_or_else(|| {
                    Error::Precondition("metzler_linear needs an inline matrix".into())
                })?;
                metzler_linear(m.clone())
            },
        },
        RegistryEntry {
            name: "kuramoto",
            params: &[("n", 5.0), ("lambda", 1.0)],
            needs_matrix: false,
            build: |p, _| {
                let n = param(p, "n", 5.0);
                if n < 2.0 || n.fract() != 0.0 {
                    return Err(Error::Precondition(
                        "kuramoto parameter n must be an integer >= 2".into(),
                    ));
                }
                kuramoto(n as usize, param(p, "lambda", 1.0))
            },
        },
    ]
}

/// Build a registered bundle by name.
pub fn build_bundle(
    name: &str,
    params: &ParamMap,
    matrix: Option<&DMatrix<f64>>,
) -> Result<ModelBundle> {
    for entry in registry() {
        if entry.name == name {
            return (entry.build)(params, matrix);
        }
    }
    Err(Error::Precondition(format!(
        "unknown model '{name}'; known: {}",
        registry()
            .iter()
            .map(|e| e.name)
            .collect::<Vec<_>>()
            .join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundle_jacobians_pass_fd_cross_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bundles = vec![
            pendulum(3.0, 0.0).unwrap(),
            pendulum(3.0, 1.5).unwrap(),
            cooperative_demo(2.0).unwrap(),
            metzler_linear(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap(),
            kuramoto(4, 1.0).unwrap(),
        ];
        for b in bundles {
            for _ in 0..20 {
                let x = b.default_region.sample(&mut rng);
                assert!(
                    b.model.jacobian_residual(&x) < 1e-5,
                    "{} fails the Jacobian cross-check",
                    b.name
                );
            }
        }
    }

    #[test]
    fn kuramoto_jacobian_at_sync_is_scaled_coupling() {
        // at equal phases: C_kk = -(n-1), C_ki = 1, Jacobian = C/n
        let b = kuramoto(3, 1.0).unwrap();
        let j = b.model.jacobian_at(&State::zeros(3)).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                let expect = if k == i { -2.0 / 3.0 } else { 1.0 / 3.0 };
                assert_relative_eq!(j[(k, i)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn kuramoto_field_vanishes_on_sync_manifold() {
        let b = kuramoto(5, 1.0).unwrap();
        for c in [-2.0, 0.0, 0.7] {
            let f = b.model.f_at(&State::from_element(5, c)).unwrap();
            assert_eq!(f.norm(), 0.0);
        }
    }

    #[test]
    fn coupling_annihilates_consensus_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 2..=8 {
            let ones = State::from_element(n, 1.0);
            for _ in 0..50 {
                let theta =
                    State::from_iterator(n, (0..n).map(|_| rng.random_range(-PI..PI)));
                let c = kuramoto_coupling(&theta);
                assert!((c * &ones).norm() < 1e-13 * n as f64);
            }
        }
    }

    #[test]
    fn projector_identities_are_exact() {
        for n in [2usize, 5, 8] {
            let pi = consensus_projector(n);
            let ones = State::from_element(n, 1.0);
            assert!(((&pi * &pi) - &pi).norm() < 1e-14);
            assert!((&pi * ones).norm() < 1e-14);
        }
    }

    #[test]
    fn centroid_examples() {
        // θ = (0, π/2): ρ = √2/2, φ = π/4
        let c = centroid(&State::from_vec(vec![0.0, PI / 2.0]));
        assert_relative_eq!(c.rho, 2.0f64.sqrt() / 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.phi.unwrap(), PI / 4.0, epsilon = 1e-12);
        // aligned phasors: ρ = 1 for any n
        for n in [2usize, 5] {
            let c = centroid(&State::from_element(n, 0.8));
            assert_relative_eq!(c.rho, 1.0, epsilon = 1e-12);
            assert_relative_eq!(c.phi.unwrap(), 0.8, epsilon = 1e-12);
        }
        // balanced phases: φ undefined
        let c = centroid(&State::from_vec(vec![0.0, PI]));
        assert!(c.rho < 1e-12);
        assert!(c.phi.is_none());
        assert!(matches!(
            mean_phase(&State::from_vec(vec![0.0, PI])),
            Err(Error::PhaseBalanced { .. })
        ));
    }

    #[test]
    fn kuramoto_n2_rho_rate() {
        // θ = (-a, a): ρ = cos a and ρ̇ = ρ sin² a
        let a = 0.6f64;
        let theta = State::from_vec(vec![-a, a]);
        let c = centroid(&theta);
        assert_relative_eq!(c.rho, a.cos(), epsilon = 1e-12);
        let b = kuramoto(2, 1.0).unwrap();
        let f = b.model.f_at(&theta).unwrap();
        let phi = c.phi.unwrap();
        // ρ̇ = Σ_k ∂ρ/∂θ_k θ̇_k with ∂ρ/∂θ_k = -(1/n) sin(θ_k − φ)
        let rho_dot: f64 = (0..2)
            .map(|k| -(theta[k] - phi).sin() / 2.0 * f[k])
            .sum();
        assert_relative_eq!(rho_dot, c.rho * a.sin().powi(2), epsilon = 1e-12);
    }

    #[test]
    fn consensus_direction_is_interior_for_every_rho() {
        // K₂(θ, 𝟙) = e^{2λρ} n² > 0
        for lambda in [0.5, 1.0, 4.0] {
            let cone = kuramoto_rho_cone(5, lambda).unwrap();
            let ones = State::from_element(5, 1.0);
            for spread in [0.0, 0.4, 1.2] {
                let theta = State::from_iterator(5, (0..5).map(|k| spread * k as f64 / 4.0));
                let k2 = cone.constraint(1).eval(&theta, &ones);
                let rho = centroid(&theta).rho;
                assert_relative_eq!(
                    k2,
                    (2.0 * lambda * rho).exp() * 25.0,
                    epsilon = 1e-10,
                    max_relative = 1e-12
                );
                let m = cone.membership(&theta, &ones, 0.0).unwrap();
                assert_eq!(m.status, crate::cones::MembershipStatus::Interior);
            }
        }
    }

    #[test]
    fn cone_widens_with_rho() {
        // K₂ nondecreasing in ρ for a fixed off-consensus direction
        let cone = kuramoto_rho_cone(3, 1.0).unwrap();
        let dx = State::from_vec(vec![1.0, 0.6, 0.2]);
        let spreads = [1.4, 0.9, 0.5, 0.1];
        let mut last = f64::NEG_INFINITY;
        let mut last_rho = 0.0;
        for s in spreads {
            let theta = State::from_vec(vec![-s, 0.0, s]);
            let rho = centroid(&theta).rho;
            assert!(rho > last_rho);
            last_rho = rho;
            let k2 = cone.constraint(1).eval(&theta, &dx);
            assert!(k2 >= last);
            last = k2;
        }
    }

    #[test]
    fn kuramoto_mantle_gradients_match_finite_differences() {
        let cone = kuramoto_rho_cone(4, 2.0).unwrap();
        let theta = State::from_vec(vec![0.3, -0.2, 0.5, 0.1]);
        let dx = State::from_vec(vec![0.9, 0.2, -0.1, 0.4]);
        let k = cone.constraint(1);
        // compare analytic gradients against the trait's FD defaults
        struct Fd<'a>(&'a dyn ConeConstraint);
        impl ConeConstraint for Fd<'_> {
            fn eval(&self, x: &State, dx: &State) -> f64 {
                self.0.eval(x, dx)
            }
            fn degree(&self) -> u32 {
                self.0.degree()
            }
        }
        let fd = Fd(k);
        assert!((k.grad_x(&theta, &dx) - fd.grad_x(&theta, &dx)).norm() < 1e-5);
        assert!((k.grad_dx(&theta, &dx) - fd.grad_dx(&theta, &dx)).norm() < 1e-6);
    }

    #[test]
    fn registry_builds_and_rejects() {
        let mut p = ParamMap::new();
        p.insert("k".into(), 3.0);
        assert!(build_bundle("pendulum", &p, None).is_ok());
        assert!(build_bundle("nope", &p, None).is_err());
        assert!(build_bundle("metzler_linear", &ParamMap::new(), None).is_err());
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.5, -1.0]);
        assert!(build_bundle("metzler_linear", &ParamMap::new(), Some(&a)).is_ok());
    }
}
