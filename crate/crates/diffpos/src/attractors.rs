//! Numerical detectors for the asymptotic behavior of strictly differentially
//! positive systems: fixed-point convergence, invariant vector fields,
//! unique attractive limit cycles, and Kuramoto synchronization.
//!
//! These are detectors, not proofs: every report lists the hypotheses that
//! were checked (or assumed, for metric-space completeness) and the verdict
//! of each. A report's kind stays `Undetermined` unless all listed
//! hypotheses pass and the evidence thresholds are met.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checker::{check_theorem3, CheckerConfig};
use crate::cones::ConeField;
use crate::dynamics::{
    integrate_prolonged, integrate_sampled, integrate_to_final, integrate_trajectory, wrap_angle,
    CompactRegion, State, SystemModel,
};
use crate::error::Error;
use crate::report::{
    AttractorKind, AttractorReport, CheckReport, CycleReport, EquilibriumReport,
    HypothesisRecord, HypothesisVerdict, Stability, Verdict, Witness, SCHEMA_VERSION,
};
use crate::sweep;
use crate::zoo;
use crate::Result;

/// Knobs for the attractor detectors; echoed into reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttractorConfig {
    pub seed: u64,
    /// |f| below this counts as an equilibrium.
    pub equilibrium_tol: f64,
    /// Newton refinements closer than this are the same equilibrium.
    pub dedup_radius: f64,
    /// Endpoint displacement over the last 10% of the horizon must stay below
    /// this for a trajectory to count as converged.
    pub settle_tol: f64,
    /// Required converged fraction before a kind is asserted.
    pub basin_threshold: f64,
    /// Conal curves must exit the region within this arclength.
    pub max_arclen: f64,
    /// Arclength step for conal curves.
    pub arc_step: f64,
    /// Section-crossing localization tolerance (on the section functional).
    pub section_tol: f64,
    /// Pairwise orbit Hausdorff bound for "one orbit".
    pub hausdorff_tol: f64,
    /// One-period re-integration closure bound.
    pub closure_tol: f64,
    /// Tangent growth cap factor for the invariant-vector-field check.
    pub growth_cap: f64,
    /// Angular deviation bound for directional invariance.
    pub angle_tol: f64,
    /// Final phase spread bound for synchronization.
    pub spread_tol: f64,
}

impl Default for AttractorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            equilibrium_tol: 1e-8,
            dedup_radius: 1e-6,
            settle_tol: 1e-8,
            basin_threshold: 0.99,
            max_arclen: 50.0,
            arc_step: 1e-2,
            section_tol: 1e-12,
            hausdorff_tol: 1e-4,
            closure_tol: 1e-4,
            growth_cap: 1e3,
            angle_tol: 1e-6,
            spread_tol: 1e-6,
        }
    }
}

impl AttractorConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn echo(&self, extra: &[(&str, f64)]) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut v {
            for (k, x) in extra {
                map.insert((*k).into(), serde_json::json!(x));
            }
        }
        v
    }
}

/// A refined equilibrium with its linearization summary.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub x: State,
    pub eigenvalues: Vec<(f64, f64)>,
    pub stability: Stability,
}

fn classify(eigs: &[(f64, f64)]) -> Stability {
    const TOL: f64 = 1e-7;
    let n_pos = eigs.iter().filter(|(re, _)| *re > TOL).count();
    let n_neg = eigs.iter().filter(|(re, _)| *re < -TOL).count();
    if n_pos + n_neg < eigs.len() {
        Stability::Marginal
    } else if n_pos == 0 {
        Stability::Stable
    } else if n_neg == 0 {
        Stability::Unstable
    } else {
        Stability::Saddle
    }
}

/// Newton refinement of `f(x) = 0` from grid seeds, deduplicated and
/// classified by Jacobian eigenvalues. Non-convergent seeds are skipped.
pub fn find_fixed_points(
    model: &SystemModel,
    region: &CompactRegion,
    grid_per_axis: Option<usize>,
    cfg: &AttractorConfig,
) -> Result<Vec<Equilibrium>> {
    let per_axis = grid_per_axis.unwrap_or(region.grid_density);
    let seeds = region.grid(per_axis, 4096);
    let refined: Vec<Option<State>> = sweep::map_collect(&seeds, |seed| {
        let mut x = seed.clone();
        for _ in 0..80 {
            let f = match model.f_at(&x) {
                Ok(f) => f,
                Err(_) => return None,
            };
            if f.norm() < 1e-12 {
                break;
            }
            let j = match model.jacobian_at(&x) {
                Ok(j) => j,
                Err(_) => return None,
            };
            // SVD least-squares handles singular Jacobians (equilibrium
            // families) with a minimal-norm step.
            let svd = j.svd(true, true);
            let Ok(step) = svd.solve(&f, 1e-10) else {
                return None;
            };
            let fnorm = f.norm();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let mut cand = &x - &step * alpha;
                model.wrap_state(&mut cand);
                if let Ok(fc) = model.f_at(&cand) {
                    if fc.norm() < fnorm {
                        x = cand;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
        match model.f_at(&x) {
            Ok(f) if f.norm() < 1e-10 => Some(x),
            _ => None,
        }
    });

    let mut eqs: Vec<State> = Vec::new();
    for x in refined.into_iter().flatten() {
        if !region.contains(&x, 1e-6) {
            continue;
        }
        if eqs.iter().all(|e| model.wrapped_dist(e, &x) > cfg.dedup_radius) {
            eqs.push(x);
        }
    }

    eqs.into_iter()
        .map(|x| {
            let j = model.jacobian_at(&x)?;
            let eigs: Vec<(f64, f64)> = j
                .complex_eigenvalues()
                .iter()
                .map(|c| (c.re, c.im))
                .collect();
            let stability = classify(&eigs);
            Ok(Equilibrium {
                x,
                eigenvalues: eigs,
                stability,
            })
        })
        .collect()
}

/// March a conal curve `γ̇(s) = dir(γ(s))`, |γ̇| = 1, until it leaves the
/// region or the arclength budget runs out. Returns the arclength at exit.
fn march_until_exit(
    cone: &ConeField,
    region: &CompactRegion,
    start: &State,
    initial_dir: &State,
    backward: bool,
    cfg: &AttractorConfig,
) -> Option<f64> {
    let mut x = start.clone();
    let mut dir = initial_dir.clone();
    let mut s = 0.0;
    let sign = if backward { -1.0 } else { 1.0 };
    while s <= cfg.max_arclen {
        if region.excess(&x) > 1e-9 {
            return Some(s);
        }
        dir = cone.refine_center(&x, &dir, cfg.seed ^ 0xCE17);
        x += &dir * (sign * cfg.arc_step);
        s += cfg.arc_step;
    }
    None
}

/// Check that conal curves intersect the region boundary twice, using the
/// analytic-center curve plus the extreme-ray curves (for simplicial
/// polyhedral frames) as the tested family.
///
/// The hypothesis quantifies over *all* conal curves, which is untestable;
/// center and extreme rays bracket the cone, and the report's config echo
/// records this restriction.
pub fn check_conal_exit(
    cone: &ConeField,
    region: &CompactRegion,
    n_curves: usize,
    cfg: &AttractorConfig,
) -> Result<CheckReport> {
    let mut starts = region.grid(region.grid_density, n_curves.max(1));
    if starts.is_empty() {
        starts.push(region.center());
    }
    // family of initial directions: analytic center, plus extreme rays when
    // the frame is simplicial (m == n)
    let mut dirs: Vec<State> = vec![cone.center_direction(&region.center(), cfg.seed ^ 0xCE17)];
    if let Some(frame) = cone.generators() {
        if frame.len() == cone.dim() {
            let cols: Vec<State> = frame.to_vec();
            let a = DMatrix::from_columns(&cols).transpose();
            if let Some(inv) = a.try_inverse() {
                for j in 0..cone.dim() {
                    let ray = inv.column(j).into_owned();
                    let n = ray.norm();
                    if n > 1e-12 {
                        dirs.push(ray / n);
                    }
                }
            }
        }
    }

    let mut worst: f64 = f64::INFINITY;
    let mut witness = None;
    let mut samples = 0;
    for x0 in &starts {
        for dir in &dirs {
            samples += 1;
            let fwd = march_until_exit(cone, region, x0, dir, false, cfg);
            let bwd = march_until_exit(cone, region, x0, dir, true, cfg);
            match (fwd, bwd) {
                (Some(sf), Some(sb)) => worst = worst.min(cfg.max_arclen - sf.max(sb)),
                _ => {
                    let report = CheckReport::new(
                        Verdict::Fail,
                        -1.0,
                        Some(Witness {
                            x: x0.iter().copied().collect(),
                            theta: Some(dir.iter().copied().collect()),
                            constraint: None,
                            time: None,
                        }),
                        samples,
                        0,
                    )
                    .with_config_echo(cfg.echo(&[("n_curves", n_curves as f64)]));
                    return Ok(report);
                }
            }
            witness = witness.or_else(|| {
                Some(Witness {
                    x: x0.iter().copied().collect(),
                    theta: Some(dir.iter().copied().collect()),
                    constraint: None,
                    time: None,
                })
            });
        }
    }
    Ok(
        CheckReport::new(Verdict::Pass, worst, witness, samples, 0)
            .with_config_echo(cfg.echo(&[("n_curves", n_curves as f64)])),
    )
}

fn hypothesis(name: &str, verdict: HypothesisVerdict, detail: Option<String>) -> HypothesisRecord {
    HypothesisRecord {
        name: name.into(),
        verdict,
        detail,
    }
}

fn verdict_of(report: &CheckReport) -> HypothesisVerdict {
    if report.verdict == Verdict::Pass {
        HypothesisVerdict::Pass
    } else {
        HypothesisVerdict::Fail
    }
}

/// Fixed-point convergence detector: after checking strict positivity and
/// conal exit, simulate random initial conditions and classify their
/// endpoints by nearest equilibrium.
///
/// A trajectory converges when its final |f| < equilibrium_tol and it moved
/// less than settle_tol over the last 10% of the horizon. Non-convergent
/// trajectories count against the basin fraction, never raise.
pub fn detect_bistable_convergence(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    n_ic: usize,
    horizon: f64,
    step: f64,
    checker_cfg: &CheckerConfig,
    cfg: &AttractorConfig,
) -> Result<AttractorReport> {
    let th3 = check_theorem3(model, cone, region, checker_cfg)?;
    let exit = check_conal_exit(cone, region, 32, cfg)?;
    let hypotheses = vec![
        hypothesis(
            "strict_positivity",
            verdict_of(&th3.report),
            Some(format!("worst margin {:.3e}", th3.report.worst_margin)),
        ),
        hypothesis("conal_exit", verdict_of(&exit), None),
        hypothesis("completeness", HypothesisVerdict::Assumed, None),
    ];

    let equilibria = find_fixed_points(model, region, None, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xB157AB1E));
    let ics: Vec<State> = (0..n_ic).map(|_| region.sample(&mut rng)).collect();
    // endpoint at 0.9 T, then at T: settle displacement + |f| test
    let endpoints: Vec<Result<Option<State>>> = sweep::map_collect(&ics, |x0| {
        let x_a = integrate_to_final(model, x0, 0.9 * horizon, step)?;
        let x_b = integrate_to_final(model, &x_a, 0.1 * horizon, step)?;
        let moved = model.wrapped_dist(&x_b, &x_a);
        let speed = model.f_at(&x_b)?.norm();
        if moved < cfg.settle_tol && speed < cfg.equilibrium_tol {
            Ok(Some(x_b))
        } else {
            Ok(None)
        }
    });

    let mut basin_counts = vec![0usize; equilibria.len()];
    let mut converged = 0usize;
    for e in endpoints {
        let Some(x) = e? else { continue };
        let nearest = equilibria
            .iter()
            .enumerate()
            .map(|(i, eq)| (i, model.wrapped_dist(&eq.x, &x)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, d)) = nearest {
            // endpoint must actually sit at the equilibrium, not merely near it
            if d < 1e-4 {
                basin_counts[i] += 1;
                converged += 1;
            }
        }
    }
    let basin_fraction = converged as f64 / n_ic.max(1) as f64;

    let fixed_points: Vec<EquilibriumReport> = equilibria
        .iter()
        .zip(&basin_counts)
        .map(|(eq, &c)| EquilibriumReport {
            x: eq.x.iter().copied().collect(),
            eigenvalues: eq.eigenvalues.clone(),
            stability: eq.stability,
            basin_fraction: c as f64 / n_ic.max(1) as f64,
        })
        .collect();

    let all_pass = hypotheses
        .iter()
        .all(|h| h.verdict != HypothesisVerdict::Fail);
    let kind = if all_pass && basin_fraction >= cfg.basin_threshold && !fixed_points.is_empty() {
        AttractorKind::FixedPoints
    } else {
        AttractorKind::Undetermined
    };
    Ok(AttractorReport {
        schema_version: SCHEMA_VERSION,
        kind,
        fixed_points,
        cycle: None,
        basin_fraction,
        hypotheses_checked: hypotheses,
        diagnostics: vec![
            ("n_ic".into(), n_ic as f64),
            ("horizon".into(), horizon),
            ("converged".into(), converged as f64),
        ],
        config_echo: Some(cfg.echo(&[("horizon", horizon), ("step", step)])),
    })
}

/// Verify the invariant-vector-field hypotheses for a candidate `v(x)`:
/// (a) v(x) lies in the ε-interior of the cone at every grid point;
/// (b) |∂ψ_t(x) v(x)| stays below growth_cap·|v(x)| over the horizon
///     (finite-horizon proxy for bounded growth);
/// (c) the propagated direction stays within angle_tol of v(ψ_t(x)).
///
/// On failure the witness's `constraint` field carries the sub-check index
/// (0 = interior, 1 = boundedness, 2 = directional invariance).
pub fn check_invariant_vector_field(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    v: &(dyn Fn(&State) -> State + Sync),
    eps: f64,
    horizon: f64,
    step: f64,
    n_ic: usize,
    cfg: &AttractorConfig,
) -> Result<CheckReport> {
    let grid = region.grid(region.grid_density, 2048);
    let mut samples = 0usize;
    let mut worst = f64::INFINITY;
    // (a) ε-interior at grid points
    for x in &grid {
        samples += 1;
        let vx = v(x);
        if vx.norm() < 1e-12 {
            return Ok(CheckReport::new(
                Verdict::Fail,
                f64::NEG_INFINITY,
                Some(Witness {
                    x: x.iter().copied().collect(),
                    theta: None,
                    constraint: Some(0),
                    time: None,
                }),
                samples,
                0,
            ));
        }
        let m = cone.membership(x, &vx, eps)?;
        let margin = m.margin - eps;
        worst = worst.min(margin);
        if margin <= 0.0 {
            return Ok(CheckReport::new(
                Verdict::Fail,
                margin,
                Some(Witness {
                    x: x.iter().copied().collect(),
                    theta: Some((&vx / vx.norm()).iter().copied().collect()),
                    constraint: Some(0),
                    time: None,
                }),
                samples,
                0,
            ));
        }
    }

    // (b) + (c) along sampled trajectories
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x1F1E1D));
    let ics: Vec<State> = (0..n_ic).map(|_| region.sample(&mut rng)).collect();
    let log_cap = cfg.growth_cap.ln();
    let runs: Vec<Result<(usize, f64, f64, Option<(State, f64)>)>> =
        sweep::map_collect(&ics, |x0| {
            let vx0 = v(x0);
            let tt = integrate_prolonged(model, x0, &vx0, horizon, step)?;
            let log0 = tt.log_mags[0];
            let mut max_growth = f64::NEG_INFINITY;
            let mut max_angle = 0.0f64;
            let mut worst_at = None;
            for k in 0..tt.len() {
                let growth = tt.log_mags[k] - log0;
                max_growth = max_growth.max(growth);
                let vk = v(&tt.states[k]);
                let nk = model.norm_at(&tt.states[k], &vk);
                if nk < 1e-300 {
                    max_angle = f64::INFINITY;
                    worst_at = Some((tt.states[k].clone(), tt.times[k]));
                    break;
                }
                let dev = (&tt.directions[k] - vk / nk).norm();
                if dev > max_angle {
                    max_angle = dev;
                    worst_at = Some((tt.states[k].clone(), tt.times[k]));
                }
            }
            Ok((tt.len(), max_growth, max_angle, worst_at))
        });

    let mut max_growth = f64::NEG_INFINITY;
    let mut max_angle = 0.0f64;
    let mut angle_witness = None;
    for r in runs {
        let (n, g, a, w) = r?;
        samples += n;
        max_growth = max_growth.max(g);
        if a > max_angle {
            max_angle = a;
            angle_witness = w;
        }
    }
    if max_growth > log_cap {
        return Ok(CheckReport::new(
            Verdict::Fail,
            log_cap - max_growth,
            Some(Witness {
                x: vec![],
                theta: None,
                constraint: Some(1),
                time: None,
            }),
            samples,
            0,
        ));
    }
    if max_angle > cfg.angle_tol {
        return Ok(CheckReport::new(
            Verdict::Fail,
            cfg.angle_tol - max_angle,
            angle_witness.map(|(x, t)| Witness {
                x: x.iter().copied().collect(),
                theta: None,
                constraint: Some(2),
                time: Some(t),
            }),
            samples,
            0,
        ));
    }
    Ok(
        CheckReport::new(Verdict::Pass, worst.min(cfg.angle_tol - max_angle), None, samples, 0)
            .with_config_echo(cfg.echo(&[("eps", eps), ("horizon", horizon)])),
    )
}

/// Section-crossing record.
struct Crossing {
    t: f64,
    x: State,
}

/// Localize same-direction crossings of the hyperplane section
/// `⟨normal, x − anchor⟩ = 0` along a trajectory, bisecting each bracketing
/// step to the section tolerance.
fn collect_crossings(
    model: &SystemModel,
    x_start: &State,
    normal: &State,
    anchor: &State,
    horizon: f64,
    step: f64,
    tol: f64,
) -> Result<Vec<Crossing>> {
    let traj = integrate_trajectory(model, x_start, horizon, step)?;
    let s_of = |x: &State| normal.dot(&model.wrapped_diff(x, anchor));
    let mut crossings = Vec::new();
    for k in 0..traj.len() - 1 {
        let s0 = s_of(&traj.states[k]);
        let s1 = s_of(&traj.states[k + 1]);
        if !(s0 < 0.0 && s1 >= 0.0) {
            continue;
        }
        // positive-direction crossing only
        let f_mid = model.f_at(&traj.states[k])?;
        if normal.dot(&f_mid) <= 0.0 {
            continue;
        }
        // bisect the sub-step time
        let mut lo = 0.0;
        let mut hi = step;
        let mut x_hit = traj.states[k + 1].clone();
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let xm = integrate_to_final(model, &traj.states[k], mid, mid.max(1e-12))?;
            let sm = s_of(&xm);
            if sm.abs() <= tol {
                x_hit = xm;
                lo = mid;
                break;
            }
            if sm < 0.0 {
                lo = mid;
            } else {
                hi = mid;
                x_hit = xm;
            }
        }
        crossings.push(Crossing {
            t: traj.times[k] + 0.5 * (lo + hi),
            x: x_hit,
        });
    }
    Ok(crossings)
}

/// Directed distance from each point of `a` to the polyline `b` (segments,
/// wrap-aware), maximized over points.
fn directed_polyline_distance(model: &SystemModel, a: &[State], b: &[State]) -> f64 {
    let dists = sweep::map_collect(a, |p| {
        let mut best = f64::INFINITY;
        for w in b.windows(2) {
            // shift p into the chart of the segment base
            let d0 = model.wrapped_diff(p, &w[0]);
            let seg = model.wrapped_diff(&w[1], &w[0]);
            let len2 = seg.norm_squared();
            let t = if len2 > 0.0 {
                (d0.dot(&seg) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let closest = &seg * t;
            best = best.min((d0 - closest).norm());
        }
        best
    });
    dists.into_iter().fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two sampled closed orbits.
fn orbit_hausdorff(model: &SystemModel, a: &[State], b: &[State]) -> f64 {
    directed_polyline_distance(model, a, b).max(directed_polyline_distance(model, b, a))
}

fn subsample(points: &[State], target: usize) -> Vec<State> {
    if points.len() <= target {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(target);
    let mut out: Vec<State> = points.iter().step_by(stride).cloned().collect();
    if let Some(last) = points.last() {
        out.push(last.clone());
    }
    out
}

/// Detected cycle data for one initial condition.
struct OrbitCandidate {
    period: f64,
    orbit: Vec<State>,
    closure: f64,
    return_distances: Vec<f64>,
    fit_r2: f64,
    contracting: bool,
    section_residual: f64,
}

fn detect_orbit_from(
    model: &SystemModel,
    x0: &State,
    horizon: f64,
    step: f64,
    cfg: &AttractorConfig,
) -> Result<Option<OrbitCandidate>> {
    // transient
    let p_star = integrate_to_final(model, x0, 0.5 * horizon, step)?;
    let f_star = model.f_at(&p_star)?;
    let speed = f_star.norm();
    if speed < cfg.equilibrium_tol {
        return Ok(None); // settled on a fixed point, no cycle here
    }

    if model.dim() == 1 {
        // On the circle the section is the point p*, crossings are full
        // revolutions and there is no transversal direction to contract.
        let normal = State::from_vec(vec![1.0]);
        let crossings =
            collect_crossings(model, &p_star, &normal, &p_star, 0.5 * horizon, step, cfg.section_tol)?;
        if crossings.len() < 2 {
            return Ok(None);
        }
        let period = crossings[1].t - crossings[0].t;
        let orbit_traj = integrate_trajectory(model, &crossings[0].x, period, step)?;
        let closure = model.wrapped_dist(orbit_traj.final_state(), &crossings[0].x);
        return Ok(Some(OrbitCandidate {
            period,
            orbit: orbit_traj.states,
            closure,
            return_distances: vec![],
            fit_r2: 1.0,
            contracting: true,
            section_residual: 0.0,
        }));
    }

    let normal = &f_star / speed;
    let crossings = collect_crossings(
        model,
        &p_star,
        &normal,
        &p_star,
        0.5 * horizon,
        step,
        cfg.section_tol,
    )?;
    if crossings.len() < 3 {
        return Ok(None);
    }

    // successive return distances; below 1e-12 the sequence is noise
    let mut distances = Vec::new();
    for w in crossings.windows(2) {
        distances.push(model.wrapped_dist(&w[1].x, &w[0].x));
    }
    let resolvable: Vec<f64> = distances
        .iter()
        .copied()
        .take_while(|&d| d > 1e-12)
        .collect();
    // Geometric contraction: strictly decreasing with ratio ≤ 0.9. Strongly
    // damped cycles may collapse in a single return, leaving one resolvable
    // distance; that single collapse is accepted as contraction evidence.
    let contracting = match resolvable.len() {
        0 => true, // already on the cycle to machine precision
        1 => distances.len() > 1,
        _ => resolvable.windows(2).all(|w| w[1] / w[0] <= 0.9),
    };
    let fit_r2 = if resolvable.len() >= 3 {
        let js: Vec<f64> = (0..resolvable.len()).map(|j| j as f64).collect();
        let ys: Vec<f64> = resolvable.iter().map(|d| d.ln()).collect();
        let n = js.len() as f64;
        let jm = js.iter().sum::<f64>() / n;
        let ym = ys.iter().sum::<f64>() / n;
        let (mut sjj, mut sjy, mut syy) = (0.0, 0.0, 0.0);
        for (j, y) in js.iter().zip(&ys) {
            sjj += (j - jm) * (j - jm);
            sjy += (j - jm) * (y - ym);
            syy += (y - ym) * (y - ym);
        }
        if syy == 0.0 {
            1.0
        } else {
            (sjy * sjy) / (sjj * syy)
        }
    } else {
        1.0
    };

    // period from the converged tail of return times
    let n_cross = crossings.len();
    let tail = (n_cross / 2).max(1);
    let period = (crossings[n_cross - 1].t - crossings[n_cross - 1 - tail].t) / tail as f64;

    let start = &crossings[n_cross - 1].x;
    let orbit_traj = integrate_trajectory(model, start, period, step)?;
    let closure = model.wrapped_dist(orbit_traj.final_state(), start);
    let s_res = normal
        .dot(&model.wrapped_diff(orbit_traj.final_state(), &p_star))
        .abs();

    Ok(Some(OrbitCandidate {
        period,
        orbit: orbit_traj.states,
        closure,
        return_distances: resolvable,
        fit_r2,
        contracting,
        section_residual: s_res,
    }))
}

/// Unique-limit-cycle detector: hypotheses (no fixed points, vector field in
/// the ε-cone, strict positivity) then Poincaré-section evidence from
/// dispersed initial conditions.
pub fn detect_limit_cycle(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    horizon: f64,
    step: f64,
    checker_cfg: &CheckerConfig,
    cfg: &AttractorConfig,
) -> Result<AttractorReport> {
    let equilibria = find_fixed_points(model, region, None, cfg)?;
    let no_fp = equilibria.is_empty();

    // vector field inside the ε-cone on the grid: the minimum normalized
    // margin over the grid IS the best ε the sweep can certify
    let grid = region.grid(region.grid_density, 2048);
    let mut f_margin = f64::INFINITY;
    for x in &grid {
        let f = model.f_at(x)?;
        if f.norm() < 1e-12 {
            f_margin = f64::NEG_INFINITY;
            break;
        }
        let m = cone.membership(x, &f, 0.0)?;
        f_margin = f_margin.min(m.margin);
    }
    let field_in_cone = f_margin > 0.0;

    let th3 = check_theorem3(model, cone, region, checker_cfg)?;

    let hypotheses = vec![
        hypothesis(
            "no_fixed_points",
            if no_fp {
                HypothesisVerdict::Pass
            } else {
                HypothesisVerdict::Fail
            },
            Some(format!("{} equilibria in region", equilibria.len())),
        ),
        hypothesis(
            "field_in_cone",
            if field_in_cone {
                HypothesisVerdict::Pass
            } else {
                HypothesisVerdict::Fail
            },
            Some(format!("certified eps {f_margin:.4e}")),
        ),
        hypothesis(
            "strict_positivity",
            verdict_of(&th3.report),
            Some(format!("worst margin {:.3e}", th3.report.worst_margin)),
        ),
        hypothesis("completeness", HypothesisVerdict::Assumed, None),
    ];
    if hypotheses.iter().any(|h| h.verdict == HypothesisVerdict::Fail) {
        let mut rep = AttractorReport::undetermined(hypotheses);
        rep.fixed_points = equilibria
            .iter()
            .map(|eq| EquilibriumReport {
                x: eq.x.iter().copied().collect(),
                eigenvalues: eq.eigenvalues.clone(),
                stability: eq.stability,
                basin_fraction: 0.0,
            })
            .collect();
        rep.config_echo = Some(cfg.echo(&[("horizon", horizon), ("step", step)]));
        return Ok(rep);
    }

    // ten dispersed initial conditions
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x0CC1E));
    let ics: Vec<State> = (0..10).map(|_| region.sample(&mut rng)).collect();
    let candidates: Vec<Result<Option<OrbitCandidate>>> =
        sweep::map_collect(&ics, |x0| detect_orbit_from(model, x0, horizon, step, cfg));

    let mut orbits = Vec::new();
    for c in candidates {
        if let Some(o) = c? {
            orbits.push(o);
        }
    }
    if orbits.is_empty() {
        let mut rep = AttractorReport::undetermined(hypotheses);
        rep.diagnostics = vec![("orbits_found".into(), 0.0)];
        rep.config_echo = Some(cfg.echo(&[("horizon", horizon), ("step", step)]));
        return Ok(rep);
    }

    let converged = orbits.len();
    let contracting = orbits.iter().all(|o| o.contracting);
    let closure_ok = orbits.iter().all(|o| o.closure < cfg.closure_tol);

    // pairwise orbit Hausdorff distances (subsampled polylines)
    let sampled: Vec<Vec<State>> = orbits.iter().map(|o| subsample(&o.orbit, 3200)).collect();
    let mut max_hausdorff = 0.0f64;
    for i in 0..sampled.len() {
        for j in (i + 1)..sampled.len() {
            max_hausdorff = max_hausdorff.max(orbit_hausdorff(model, &sampled[i], &sampled[j]));
        }
    }
    let unique = max_hausdorff < cfg.hausdorff_tol;

    let best = orbits
        .iter()
        .min_by(|a, b| a.closure.total_cmp(&b.closure))
        .expect("nonempty");
    let kind = if contracting && closure_ok && unique && converged == ics.len() {
        AttractorKind::LimitCycle
    } else {
        AttractorKind::Undetermined
    };
    let min_r2 = orbits.iter().map(|o| o.fit_r2).fold(f64::INFINITY, f64::min);
    Ok(AttractorReport {
        schema_version: SCHEMA_VERSION,
        kind,
        fixed_points: Vec::new(),
        cycle: Some(CycleReport {
            period: best.period,
            points: subsample(&best.orbit, 2000)
                .iter()
                .map(|x| x.iter().copied().collect())
                .collect(),
            closure_residual: best.closure,
            return_distances: best.return_distances.clone(),
            return_fit_r_squared: min_r2,
        }),
        basin_fraction: converged as f64 / ics.len() as f64,
        hypotheses_checked: hypotheses,
        diagnostics: vec![
            ("max_pairwise_hausdorff".into(), max_hausdorff),
            ("certified_eps".into(), f_margin),
            ("orbits_found".into(), converged as f64),
            ("section_residual".into(), best.section_residual),
        ],
        config_echo: Some(cfg.echo(&[("horizon", horizon), ("step", step)])),
    })
}

/// Kuramoto synchronization pipeline: order-parameter cone verification
/// (with a geometric λ sweep), consensus-field invariance, and measured
/// phase-spread decay from random initial conditions.
pub fn kuramoto_sync_analysis(
    n: usize,
    region: &CompactRegion,
    lambda_param: f64,
    horizon: f64,
    step: f64,
    n_ic: usize,
    checker_cfg: &CheckerConfig,
    cfg: &AttractorConfig,
) -> Result<AttractorReport> {
    if region.dim() != n {
        return Err(Error::Dimension("region dimension must equal n".into()));
    }
    // the region must avoid balanced phases and the antipodal saddle family
    let grid = region.grid(region.grid_density, 2048);
    let mut saddle_free = true;
    for x in &grid {
        let c = zoo::centroid(x);
        if c.rho < 1e-6 {
            saddle_free = false;
            break;
        }
        // saddles have some phases antipodal to the centroid: the sin² sum
        // vanishes with ρ < 1; at full synchrony (ρ → 1) it vanishes too but
        // that is the attractor itself, not a saddle
        if let Some(phi) = c.phi {
            let s2: f64 = x.iter().map(|&t| (t - phi).sin().powi(2)).sum();
            if s2 <= 1e-3 && c.rho < 0.99 {
                saddle_free = false;
                break;
            }
        }
    }
    if !saddle_free {
        return Err(Error::Precondition(
            "region contains balanced or saddle phase configurations".into(),
        ));
    }

    // λ sweep: geometric growth until the mantle-derivative margin is positive
    let mut lambda = lambda_param;
    let mut bundle = zoo::kuramoto(n, lambda)?;
    let mut th3 = check_theorem3(&bundle.model, &bundle.cone, region, checker_cfg)?;
    let mut sweep_steps = 0;
    while th3.report.verdict != Verdict::Pass && sweep_steps < 9 {
        lambda *= 2.0;
        sweep_steps += 1;
        bundle = zoo::kuramoto(n, lambda)?;
        th3 = check_theorem3(&bundle.model, &bundle.cone, region, checker_cfg)?;
    }
    let model = &bundle.model;
    let cone = &bundle.cone;

    // consensus field invariance
    let sqrt_n = (n as f64).sqrt();
    let v = move |_x: &State| State::from_element(n, 1.0 / sqrt_n);
    let inv = check_invariant_vector_field(
        model,
        cone,
        region,
        &v,
        0.5 * cone.feasibility_eps,
        horizon.min(20.0),
        step,
        5,
        cfg,
    )?;

    // simulate and measure the phase spread
    let spread_of = |x: &State| -> f64 {
        let mut worst = 0.0f64;
        for k in 0..n {
            for j in (k + 1)..n {
                worst = worst.max(wrap_angle(x[k] - x[j]).abs());
            }
        }
        worst
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5CA1E));
    let ics: Vec<State> = (0..n_ic).map(|_| region.sample(&mut rng)).collect();
    let stride = ((0.5 / step) as usize).max(1);
    let spreads: Vec<Result<(f64, bool)>> = sweep::map_collect(&ics, |x0| {
        let traj = integrate_sampled(model, x0, horizon, step, stride)?;
        let series: Vec<f64> = traj.states.iter().map(&spread_of).collect();
        let final_spread = *series.last().expect("nonempty");
        // monotone decay after the initial fifth of the horizon
        let start = series.len() / 5;
        let monotone = series[start..]
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9);
        Ok((final_spread, monotone))
    });
    let mut max_final = 0.0f64;
    let mut all_monotone = true;
    for s in spreads {
        let (f, m) = s?;
        max_final = max_final.max(f);
        all_monotone &= m;
    }

    let hypotheses = vec![
        hypothesis(
            "strict_positivity",
            verdict_of(&th3.report),
            Some(format!(
                "mantle margin {:.3e} at lambda {lambda}",
                th3.report.worst_margin
            )),
        ),
        hypothesis(
            "consensus_invariance",
            verdict_of(&inv),
            None,
        ),
        hypothesis("saddle_free_region", HypothesisVerdict::Pass, None),
        hypothesis("completeness", HypothesisVerdict::Assumed, None),
    ];
    let all_pass = hypotheses
        .iter()
        .all(|h| h.verdict != HypothesisVerdict::Fail);
    let synced = max_final < cfg.spread_tol;
    let kind = if all_pass && synced {
        AttractorKind::Synchronization
    } else {
        AttractorKind::Undetermined
    };
    Ok(AttractorReport {
        schema_version: SCHEMA_VERSION,
        kind,
        fixed_points: Vec::new(),
        cycle: None,
        basin_fraction: if synced { 1.0 } else { 0.0 },
        hypotheses_checked: hypotheses,
        diagnostics: vec![
            ("lambda_param".into(), lambda),
            ("mantle_margin".into(), th3.report.worst_margin),
            ("max_final_spread".into(), max_final),
            ("monotone_decay".into(), if all_monotone { 1.0 } else { 0.0 }),
        ],
        config_echo: Some(cfg.echo(&[("horizon", horizon), ("step", step), ("n_ic", n_ic as f64)])),
    })
}
