//! Sampling-based verification of the pointwise geometric positivity
//! conditions, direct invariance testing along the flow, and Hilbert
//! contraction-rate estimation.
//!
//! All verdicts are "certified at sample resolution": a PASS means the tested
//! inequality held at every (grid point × constraint × direction) sample, at
//! the densities echoed in the report. Sweeps are parallel over grid points
//! and reduced in index order, so witnesses are deterministic for a fixed
//! seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cones::ConeField;
use crate::dynamics::{
    integrate_prolonged, CompactRegion, State, SystemModel,
};
use crate::error::Error;
use crate::report::{
    CheckReport, ContractionReport, MarginSample, Verdict, Witness, SCHEMA_VERSION,
};
use crate::sweep;
use crate::Result;

/// Densities and tolerances for the pointwise checks. Everything here is
/// echoed into reports; there are no silent defaults downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckerConfig {
    /// Grid samples per state axis (region default when None).
    pub grid_per_axis: Option<usize>,
    /// Cap on the total number of grid points (per-axis density is reduced
    /// uniformly to respect it).
    pub max_grid_points: usize,
    /// Boundary directions per constraint per grid point.
    pub boundary_directions: usize,
    /// FAIL when a margin drops below -tol_fail.
    pub tol_fail: f64,
    /// Strict-positivity PASS threshold for the compact-set condition.
    pub strict_margin: f64,
    pub seed: u64,
    /// Cap on retained per-sample margin rows (evenly strided beyond it).
    pub max_margin_rows: usize,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        Self {
            grid_per_axis: None,
            max_grid_points: 4096,
            boundary_directions: 200,
            tol_fail: 1e-9,
            strict_margin: 1e-6,
            seed: 0,
            max_margin_rows: 100_000,
        }
    }
}

impl CheckerConfig {
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

/// Outcome of a pointwise sweep including the per-sample margins (CSV fodder).
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: CheckReport,
    pub margins: Vec<MarginSample>,
}

/// Which flow the constraint derivative is taken along.
#[derive(Clone, Copy, PartialEq)]
enum DerivativeFlow {
    /// Prolonged flow (f, ∂f θ): theorems on the plain cone condition.
    Prolonged,
    /// Normalized flow (f, (∂f − λ)θ): the ε-band condition.
    Normalized,
}

/// d/dt K_i(x(t), θ(t)) along the chosen flow at the sample (x, θ).
fn constraint_derivative(
    model: &SystemModel,
    cone: &ConeField,
    i: usize,
    x: &State,
    theta: &State,
    flow: DerivativeFlow,
) -> Result<f64> {
    let f = model.f_at(x)?;
    let j = model.jacobian_at(x)?;
    let k = cone.constraint(i);
    let gx = k.grad_x(x, theta);
    let gd = k.grad_dx(x, theta);
    let mut dtheta = &j * theta;
    if flow == DerivativeFlow::Normalized {
        let lam = model.lambda(x, theta)?;
        dtheta -= theta * lam;
    }
    Ok(gx.dot(&f) + gd.dot(&dtheta))
}

struct GridPointResult {
    worst: f64,
    witness: Option<(State, State, usize)>,
    samples: usize,
    starved: bool,
    margins: Vec<MarginSample>,
    error: Option<Error>,
}

fn empty_grid_report(cfg: &CheckerConfig) -> CheckReport {
    CheckReport::new(Verdict::Inconclusive, f64::INFINITY, None, 0, 1)
        .with_config_echo(cfg.echo(&[]))
}

/// Shared sweep: for each grid x, each samplable facet i, each boundary
/// direction θ with K(x,θ) ≥ 0 and K_i(x,θ) = 0, evaluate the derivative of
/// K_i along the chosen flow and reduce the minimum.
fn boundary_sweep(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    cfg: &CheckerConfig,
    flow: DerivativeFlow,
    pass_threshold: f64,
    echo_extra: &[(&str, f64)],
) -> Result<SweepOutcome> {
    if model.dim() != cone.dim() || model.dim() != region.dim() {
        return Err(Error::Dimension(
            "model, cone and region dimensions differ".into(),
        ));
    }
    let per_axis = cfg.grid_per_axis.unwrap_or(region.grid_density);
    let grid = region.grid(per_axis, cfg.max_grid_points);
    if grid.is_empty() {
        return Ok(SweepOutcome {
            report: empty_grid_report(cfg),
            margins: Vec::new(),
        });
    }

    let results: Vec<GridPointResult> = sweep::map_indices(grid.len(), |gi| {
        let x = &grid[gi];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (gi as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut out = GridPointResult {
            worst: f64::INFINITY,
            witness: None,
            samples: 0,
            starved: false,
            margins: Vec::new(),
            error: None,
        };
        for &facet in cone.facet_indices() {
            let bs = cone.boundary_sampler(x, facet, cfg.boundary_directions, &mut rng);
            out.starved |= bs.starved;
            for theta in &bs.directions {
                match constraint_derivative(model, cone, facet, x, theta, flow) {
                    Ok(d) => {
                        out.samples += 1;
                        out.margins.push(MarginSample {
                            index: gi,
                            constraint: facet,
                            margin: d,
                            x: x.iter().copied().collect(),
                            theta: theta.iter().copied().collect(),
                        });
                        if d < out.worst {
                            out.worst = d;
                            out.witness = Some((x.clone(), theta.clone(), facet));
                        }
                    }
                    Err(e) => {
                        out.error = Some(e);
                        return out;
                    }
                }
            }
        }
        out
    });

    reduce_sweep(results, cfg, pass_threshold, echo_extra)
}

fn reduce_sweep(
    results: Vec<GridPointResult>,
    cfg: &CheckerConfig,
    pass_threshold: f64,
    echo_extra: &[(&str, f64)],
) -> Result<SweepOutcome> {
    let mut worst = f64::INFINITY;
    let mut witness: Option<Witness> = None;
    let mut samples = 0usize;
    let mut warnings = 0usize;
    let mut margins = Vec::new();
    for r in results {
        if let Some(e) = r.error {
            return Err(e);
        }
        samples += r.samples;
        warnings += r.starved as usize;
        if r.worst < worst {
            worst = r.worst;
            witness = r.witness.map(|(x, theta, c)| Witness {
                x: x.iter().copied().collect(),
                theta: Some(theta.iter().copied().collect()),
                constraint: Some(c),
                time: None,
            });
        }
        margins.extend(r.margins);
    }
    if margins.len() > cfg.max_margin_rows {
        let stride = margins.len().div_ceil(cfg.max_margin_rows);
        margins = margins
            .into_iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0)
            .map(|(_, m)| m)
            .collect();
    }
    let verdict = if samples == 0 {
        Verdict::Inconclusive
    } else if worst < -cfg.tol_fail {
        Verdict::Fail
    } else if warnings > 0 || worst < pass_threshold {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    let report = CheckReport::new(verdict, worst, witness, samples, warnings)
        .with_config_echo(cfg.echo(echo_extra));
    Ok(SweepOutcome { report, margins })
}

/// Cone-invariance condition on the boundary of the cone field: at every
/// sample with K_i(x, θ) = 0 and K(x, θ) ≥ 0, the derivative of K_i along the
/// prolonged flow must be ≥ 0 (within tolerance).
pub fn check_theorem1(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    cfg: &CheckerConfig,
) -> Result<SweepOutcome> {
    boundary_sweep(
        model,
        cone,
        region,
        cfg,
        DerivativeFlow::Prolonged,
        -cfg.tol_fail,
        &[],
    )
}

/// ε-band contraction condition: on samples with 0 ≤ K_i(x, θ) ≤ ε the
/// derivative of K_i along the *normalized* flow must reach ε/T.
///
/// T and ε are caller inputs; the existential pair can be searched with
/// [`theorem2_sweep`].
pub fn check_theorem2(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    horizon: f64,
    eps: f64,
    cfg: &CheckerConfig,
) -> Result<SweepOutcome> {
    if horizon <= 0.0 {
        return Err(Error::Precondition("theorem-2 horizon must be > 0".into()));
    }
    if eps <= 0.0 || eps > cone.feasibility_eps {
        return Err(Error::Precondition(format!(
            "theorem-2 band eps must lie in (0, estimated feasibility {:.3e}]",
            cone.feasibility_eps
        )));
    }
    if model.dim() != cone.dim() || model.dim() != region.dim() {
        return Err(Error::Dimension(
            "model, cone and region dimensions differ".into(),
        ));
    }
    let per_axis = cfg.grid_per_axis.unwrap_or(region.grid_density);
    let grid = region.grid(per_axis, cfg.max_grid_points);
    if grid.is_empty() {
        return Ok(SweepOutcome {
            report: empty_grid_report(cfg),
            margins: Vec::new(),
        });
    }
    let required = eps / horizon;

    let results: Vec<GridPointResult> = sweep::map_indices(grid.len(), |gi| {
        let x = &grid[gi];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (gi as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut out = GridPointResult {
            worst: f64::INFINITY,
            witness: None,
            samples: 0,
            starved: false,
            margins: Vec::new(),
            error: None,
        };
        let center = cone.center_direction(x, cfg.seed ^ 0xC0FFEE);
        for &facet in cone.facet_indices() {
            let bs = cone.boundary_sampler(x, facet, cfg.boundary_directions, &mut rng);
            out.starved |= bs.starved;
            for boundary_theta in &bs.directions {
                // Band samples: boundary directions nudged toward the cone
                // center until K_i crosses the band (0, ε].
                for blend in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    let raw = boundary_theta * (1.0 - blend) + &center * blend;
                    let nrm = cone.metric().norm(x, &raw);
                    if nrm < 1e-12 {
                        continue;
                    }
                    let theta = raw / nrm;
                    let ki = cone.constraint(facet).eval(x, &theta);
                    if !(0.0..=eps).contains(&ki) {
                        continue;
                    }
                    match constraint_derivative(
                        model,
                        cone,
                        facet,
                        x,
                        &theta,
                        DerivativeFlow::Normalized,
                    ) {
                        Ok(d) => {
                            let margin = d - required;
                            out.samples += 1;
                            out.margins.push(MarginSample {
                                index: gi,
                                constraint: facet,
                                margin,
                                x: x.iter().copied().collect(),
                                theta: theta.iter().copied().collect(),
                            });
                            if margin < out.worst {
                                out.worst = margin;
                                out.witness = Some((x.clone(), theta.clone(), facet));
                            }
                        }
                        Err(e) => {
                            out.error = Some(e);
                            return out;
                        }
                    }
                }
            }
        }
        out
    });

    reduce_sweep(
        results,
        cfg,
        -cfg.tol_fail,
        &[("theorem2_horizon", horizon), ("theorem2_eps", eps)],
    )
}

/// Coarse existential search over (T, ε) for [`check_theorem2`]: returns the
/// first passing pair with its outcome, or the last failure.
pub fn theorem2_sweep(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    horizons: &[f64],
    eps_grid: &[f64],
    cfg: &CheckerConfig,
) -> Result<(Option<(f64, f64)>, SweepOutcome)> {
    let mut last = None;
    for &t in horizons {
        for &e in eps_grid {
            if e > cone.feasibility_eps {
                continue;
            }
            let out = check_theorem2(model, cone, region, t, e, cfg)?;
            if out.report.verdict == Verdict::Pass {
                return Ok((Some((t, e)), out));
            }
            last = Some(out);
        }
    }
    match last {
        Some(out) => Ok((None, out)),
        None => Err(Error::Precondition(
            "no (T, eps) candidates below the feasibility margin".into(),
        )),
    }
}

/// Compact-set strict-positivity condition: boundary derivatives along the
/// prolonged flow must be strictly positive; the report's `worst_margin` is
/// the certified minimum.
pub fn check_theorem3(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    cfg: &CheckerConfig,
) -> Result<SweepOutcome> {
    boundary_sweep(
        model,
        cone,
        region,
        cfg,
        DerivativeFlow::Prolonged,
        cfg.strict_margin,
        &[],
    )
}

/// Directly test the definition of differential positivity: propagate random
/// cone members through the variational flow and check membership at every
/// stored step (tolerance 1e-6 on the normalized margin).
///
/// Draws mix extreme rays / generators, boundary samples and interior
/// members, so facet-grazing violations are caught, and the test stays
/// independent of the pointwise sufficient conditions.
pub fn verify_invariance_along_flow(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    horizon: f64,
    step: f64,
    n_pairs: usize,
    cfg: &CheckerConfig,
) -> Result<SweepOutcome> {
    const MEMBERSHIP_TOL: f64 = 1e-6;
    let mut starts: Vec<(State, State)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut starved = 0usize;
    for _ in 0..n_pairs {
        let x0 = region.sample(&mut rng);
        // generators are the extreme rays for simplicial polyhedral cones
        if let Some(frame) = cone.generators() {
            for g in frame {
                starts.push((x0.clone(), g.clone()));
            }
        }
        for &facet in cone.facet_indices() {
            let bs = cone.boundary_sampler(&x0, facet, 2, &mut rng);
            for d in bs.directions {
                starts.push((x0.clone(), d));
            }
        }
        match cone.sample_member(&x0, 0.0, &mut rng, 2000) {
            Some(d) => starts.push((x0, d)),
            None => starved += 1,
        }
    }

    let results = sweep::map_collect(&starts, |(x0, d0)| -> Result<(f64, Option<(State, State, f64)>, usize)> {
        let tt = integrate_prolonged(model, x0, d0, horizon, step)?;
        let mut worst = f64::INFINITY;
        let mut witness = None;
        for k in 0..tt.len() {
            let m = cone.membership(&tt.states[k], &tt.directions[k], 0.0)?;
            if m.margin < worst {
                worst = m.margin;
                witness = Some((tt.states[k].clone(), tt.directions[k].clone(), tt.times[k]));
            }
        }
        Ok((worst, witness, tt.len()))
    });

    let mut worst = f64::INFINITY;
    let mut witness: Option<Witness> = None;
    let mut samples = 0usize;
    for r in results {
        match r {
            Ok((w, wit, n)) => {
                samples += n;
                if w < worst {
                    worst = w;
                    witness = wit.map(|(x, th, t)| Witness {
                        x: x.iter().copied().collect(),
                        theta: Some(th.iter().copied().collect()),
                        constraint: None,
                        time: Some(t),
                    });
                }
            }
            Err(Error::Divergence { time }) => {
                let report = CheckReport::new(
                    Verdict::Fail,
                    f64::NEG_INFINITY,
                    Some(Witness {
                        x: vec![],
                        theta: None,
                        constraint: None,
                        time: Some(time),
                    }),
                    samples,
                    starved,
                )
                .with_config_echo(cfg.echo(&[("horizon", horizon), ("step", step)]));
                return Ok(SweepOutcome {
                    report,
                    margins: Vec::new(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let verdict = if worst < -MEMBERSHIP_TOL {
        Verdict::Fail
    } else if starved > 0 || samples == 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    let report = CheckReport::new(verdict, worst, witness, samples, starved)
        .with_config_echo(cfg.echo(&[("horizon", horizon), ("step", step)]));
    Ok(SweepOutcome {
        report,
        margins: Vec::new(),
    })
}

/// Least squares fit of y = a + b t; returns (a, b, r²).
fn linear_fit(ts: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for (t, y) in ts.iter().zip(ys) {
        stt += (t - tm) * (t - tm);
        sty += (t - tm) * (y - ym);
        syy += (y - ym) * (y - ym);
    }
    if stt == 0.0 {
        return (ym, 0.0, 1.0);
    }
    let b = sty / stt;
    let a = ym - b * tm;
    let r2 = if syy == 0.0 { 1.0 } else { (sty * sty) / (stt * syy) };
    (a, b, r2)
}

/// Hilbert distances of one propagated pair at each step.
pub type DistanceSeries = Vec<(f64, f64)>;

/// Propagate interior tangent pairs through the variational flow and fit the
/// exponential decay rate of their Hilbert distance.
///
/// The log-linear fit uses the last 60% of the *resolvable* horizon of each
/// pair: measured distances below 1e-9 sit at the bisection resolution and
/// would only add noise, and (per the contraction bound) only t ≥ T is
/// uniformly contracting. The reported rate/offset/ r² come from the pair
/// with the slowest fitted rate.
pub fn estimate_contraction(
    model: &SystemModel,
    cone: &ConeField,
    region: &CompactRegion,
    horizon: f64,
    step: f64,
    n_pairs: usize,
    cfg: &CheckerConfig,
) -> Result<(ContractionReport, Vec<(usize, DistanceSeries)>)> {
    const DIST_FLOOR: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xD157));
    let mut pairs: Vec<(State, State, State)> = Vec::new();
    let mut attempts = 0usize;
    while pairs.len() < n_pairs && attempts < 20 * n_pairs {
        attempts += 1;
        let x0 = region.sample(&mut rng);
        let eps = 0.05 * cone.feasibility_eps;
        let (Some(d1), Some(d2)) = (
            cone.sample_member(&x0, eps, &mut rng, 4000),
            cone.sample_member(&x0, eps, &mut rng, 4000),
        ) else {
            continue;
        };
        if let Ok(h) = cone.hilbert_distance(&x0, &d1, &d2) {
            if h.distance.is_finite() && h.distance > 1e-6 {
                pairs.push((x0, d1, d2));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Precondition(
            "no interior pairs with finite initial Hilbert distance found".into(),
        ));
    }

    struct PairFit {
        rate: f64,
        offset: f64,
        r2: f64,
        tail_start: f64,
        d0: f64,
        series: DistanceSeries,
        discarded: bool,
    }

    let fits: Vec<Result<PairFit>> = sweep::map_collect(&pairs, |(x0, d1, d2)| {
        let t1 = integrate_prolonged(model, x0, d1, horizon, step)?;
        let t2 = integrate_prolonged(model, x0, d2, horizon, step)?;
        let mut series = DistanceSeries::new();
        let mut discarded = false;
        for k in 0..t1.len() {
            let h = cone.hilbert_distance(&t1.states[k], &t1.directions[k], &t2.directions[k]);
            match h {
                Ok(r) if r.distance.is_finite() => series.push((t1.times[k], r.distance)),
                // +∞ or a precondition failure means boundary contact
                _ => {
                    discarded = true;
                    break;
                }
            }
        }
        if discarded || series.len() < 8 {
            return Ok(PairFit {
                rate: 0.0,
                offset: 1.0,
                r2: 0.0,
                tail_start: 0.0,
                d0: series.first().map_or(0.0, |p| p.1),
                series,
                discarded: true,
            });
        }
        let d0 = series[0].1;
        // resolvable horizon, then its last 60%
        let t_res = series
            .iter()
            .rev()
            .find(|(_, d)| *d > DIST_FLOOR)
            .map_or(series.last().unwrap().0, |(t, _)| *t);
        let tail_start = 0.4 * t_res;
        let window: Vec<(f64, f64)> = series
            .iter()
            .filter(|(t, d)| *t >= tail_start && *t <= t_res && *d > DIST_FLOOR)
            .cloned()
            .collect();
        if window.len() < 8 {
            return Ok(PairFit {
                rate: 0.0,
                offset: 1.0,
                r2: 0.0,
                tail_start,
                d0,
                series,
                discarded: true,
            });
        }
        let ts: Vec<f64> = window.iter().map(|(t, _)| *t).collect();
        let ys: Vec<f64> = window.iter().map(|(_, d)| d.ln()).collect();
        let (a, b, r2) = linear_fit(&ts, &ys);
        Ok(PairFit {
            rate: -b,
            offset: (a + b * tail_start).exp(),
            r2,
            tail_start,
            d0,
            series,
            discarded: false,
        })
    });

    let mut worst_rate = f64::INFINITY;
    let mut worst = None;
    let mut delta_bound = 0.0f64;
    let mut used = 0usize;
    let mut dropped = 0usize;
    let mut all_series = Vec::new();
    for (i, f) in fits.into_iter().enumerate() {
        let f = f?;
        all_series.push((i, f.series.clone()));
        if f.discarded {
            dropped += 1;
            continue;
        }
        used += 1;
        delta_bound = delta_bound.max(f.d0);
        if f.rate < worst_rate {
            worst_rate = f.rate;
            worst = Some((f.rate, f.offset, f.r2, f.tail_start));
        }
    }
    let (rate, offset_raw, r2, tail_start) = worst.unwrap_or((0.0, 1.0, 0.0, 0.0));
    let offset = if delta_bound > 0.0 {
        (offset_raw / delta_bound).max(1.0)
    } else {
        1.0
    };
    let report = ContractionReport {
        schema_version: SCHEMA_VERSION,
        fitted_rate: rate,
        fitted_offset: offset,
        r_squared: r2,
        horizon_t: tail_start,
        delta_bound,
        pairs_used: used,
        pairs_discarded: dropped,
        contraction_asserted: rate > 0.0 && r2 >= 0.9 && used > 0,
        config_echo: Some(cfg.echo(&[("horizon", horizon), ("step", step)])),
    };
    Ok((report, all_series))
}

/// Monotone-order screen for cooperative PASS systems: componentwise order of
/// initial conditions must be preserved by the flow (used as a property test).
pub fn order_preserved(
    model: &SystemModel,
    region: &CompactRegion,
    horizon: f64,
    step: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_pairs {
        let a = region.sample(&mut rng);
        let b = region.sample(&mut rng);
        let lo = a.zip_map(&b, f64::min);
        let hi = a.zip_map(&b, f64::max);
        let ta = integrate_trajectory(model, &lo, horizon, step)?;
        let tb = integrate_trajectory(model, &hi, horizon, step)?;
        for k in 0..ta.len() {
            let xa = &ta.states[k];
            let xb = &tb.states[k];
            if (0..xa.len()).any(|i| xa[i] > xb[i] + 1e-7) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

use crate::dynamics::integrate_trajectory;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::ConeField;
    use crate::dynamics::Metric;
    use nalgebra::DMatrix;

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

    fn linear_model(a: DMatrix<f64>) -> SystemModel {
        let a2 = a.clone();
        SystemModel::new(a.nrows(), move |x: &State| &a * x)
            .with_jacobian(move |_x: &State| a2.clone())
    }

    fn unit_box(n: usize) -> CompactRegion {
        CompactRegion::new_box(State::from_element(n, -1.0), State::from_element(n, 1.0))
            .unwrap()
            .with_grid_density(5)
    }

    #[test]
    fn theorem1_metzler_passes_negative_offdiag_fails() {
        let cfg = CheckerConfig {
            boundary_directions: 40,
            ..Default::default()
        };
        let metzler = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let out = check_theorem1(&metzler, &orthant(2), &unit_box(2), &cfg).unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass);
        // at θ = e₁ the facet-2 derivative is e₂ᵀ A e₁ = 1
        assert!((out.report.worst_margin - 1.0).abs() < 1e-6);

        let hostile = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, -1.0]));
        let out = check_theorem1(&hostile, &orthant(2), &unit_box(2), &cfg).unwrap();
        assert_eq!(out.report.verdict, Verdict::Fail);
        assert!((out.report.worst_margin + 1.0).abs() < 1e-6);
        let w = out.report.witness.unwrap();
        assert!(w.constraint.is_some());
    }

    #[test]
    fn theorem1_matches_cooperative_criterion() {
        // off-diagonal signs decide the verdict for the orthant cone
        for (a12, a21, expect_pass) in [(0.5, 0.25, true), (0.5, -0.25, false)] {
            let m = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, a12, a21, -1.0]));
            let out = check_theorem1(
                &m,
                &orthant(2),
                &unit_box(2),
                &CheckerConfig {
                    boundary_directions: 20,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(out.report.verdict == Verdict::Pass, expect_pass);
        }
    }

    #[test]
    fn theorem2_metzler_band_passes_zero_field_fails() {
        let cfg = CheckerConfig {
            boundary_directions: 30,
            ..Default::default()
        };
        let metzler = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let out = check_theorem2(&metzler, &orthant(2), &unit_box(2), 1.0, 0.05, &cfg).unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass);
        assert!(out.report.worst_margin > 0.5);

        let zero = SystemModel::new(2, |_x: &State| State::zeros(2))
            .with_jacobian(|_x: &State| DMatrix::zeros(2, 2));
        let out = check_theorem2(&zero, &orthant(2), &unit_box(2), 1.0, 0.05, &cfg).unwrap();
        assert_eq!(out.report.verdict, Verdict::Fail);
    }

    #[test]
    fn theorem2_rejects_eps_above_feasibility() {
        let metzler = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let r = check_theorem2(
            &metzler,
            &orthant(2),
            &unit_box(2),
            1.0,
            10.0,
            &CheckerConfig::default(),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn theorem3_strict_verdicts() {
        let cfg = CheckerConfig {
            boundary_directions: 40,
            ..Default::default()
        };
        let strict = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let out = check_theorem3(&strict, &orthant(2), &unit_box(2), &cfg).unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass);

        // nonnegative but not strict off-diagonal: derivative 0 at the facet
        let weak = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]));
        let out = check_theorem3(&weak, &orthant(2), &unit_box(2), &cfg).unwrap();
        assert_eq!(out.report.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn invariance_metzler_passes_rotation_fails() {
        let cfg = CheckerConfig::default();
        let metzler = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let out =
            verify_invariance_along_flow(&metzler, &orthant(2), &unit_box(2), 3.0, 1e-3, 5, &cfg)
                .unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass);

        let rotation = linear_model(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        let out =
            verify_invariance_along_flow(&rotation, &orthant(2), &unit_box(2), 3.0, 1e-3, 5, &cfg)
                .unwrap();
        assert_eq!(out.report.verdict, Verdict::Fail);
        assert!(out.report.witness.unwrap().time.is_some());
    }

    #[test]
    fn contraction_metzler_positive_conformal_zero() {
        let cfg = CheckerConfig::default();
        let region = unit_box(2);
        let metzler = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let (rep, series) =
            estimate_contraction(&metzler, &orthant(2), &region, 8.0, 1e-3, 4, &cfg).unwrap();
        assert!(rep.contraction_asserted, "rate {}", rep.fitted_rate);
        // eigengap of [[-1,1],[1,-1]] is 2
        assert!((rep.fitted_rate - 2.0).abs() < 0.1, "rate {}", rep.fitted_rate);
        assert!(rep.fitted_offset >= 1.0);
        assert!(!series.is_empty());

        // conformal flow preserves ratios: rate ≈ 0, not asserted
        let conformal = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]));
        let (rep, _) =
            estimate_contraction(&conformal, &orthant(2), &region, 8.0, 1e-3, 4, &cfg).unwrap();
        assert!(rep.fitted_rate.abs() < 1e-6);
        assert!(!rep.contraction_asserted);
    }

    #[test]
    fn identical_rays_have_zero_distance_along_flow() {
        let cone = orthant(2);
        let x = State::from_vec(vec![0.3, 0.4]);
        let d = State::from_vec(vec![1.0, 2.0]);
        let h = cone.hilbert_distance(&x, &d, &d).unwrap();
        assert_eq!(h.distance, 0.0);
    }

    #[test]
    fn reports_are_deterministic_for_fixed_seed() {
        let metzler = linear_model(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let cfg = CheckerConfig {
            boundary_directions: 25,
            seed: 42,
            ..Default::default()
        };
        let a = check_theorem3(&metzler, &orthant(2), &unit_box(2), &cfg).unwrap();
        let b = check_theorem3(&metzler, &orthant(2), &unit_box(2), &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.margins.len(), b.margins.len());
    }

    #[test]
    fn linear_fit_recovers_slope() {
        let ts: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 - 2.0 * t).collect();
        let (a, b, r2) = linear_fit(&ts, &ys);
        assert!((a - 3.0).abs() < 1e-12);
        assert!((b + 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }
}
