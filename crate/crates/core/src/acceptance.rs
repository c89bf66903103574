//! The acceptance battery: thirteen end-to-end checks of the physics.
//!
//! Each criterion runs its own simulations and reports a measured value
//! next to the target. Quick mode uses a quarter of the time steps and
//! half the sweep points; its verdicts are indicative only.

use std::time::Instant;

use crate::bands::{solve_bands, time_scales, BlochProblem};
use crate::error::{Error, Result};
use crate::experiments::{
    branch_probabilities, eps_point, gpe_point, mzi_point, sweep, SweepPoint, SPLIT_T2_PACKETS, GPE_PACKET_WIDTH,
    LOWER_BRANCH, PACKET_WIDTH, TRACKING_HALF_WIDTH, UPPER_BRANCH,
};
use crate::model::{make_gaussian, ControlSchedule, Preset, ScaledParams, Segment, SpatialGrid, WaveFunction, LATTICE_PERIOD};
use crate::observables::{
    autocorrelation_period, fit_occupation_law, fringe_fit, interval_probability, moments, state_moments,
    tracked_moments, BandProjector,
};
use crate::parallel::Execution;
use crate::propagate::{evolve, run, run_observed, PropagationConfig};
use crate::tight_binding::{lie_moments, tb_oracle, TBGaussian, TBModel};

/// Settings of a battery run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceOptions {
    pub quick: bool,
    pub execution: Execution,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        Self { quick: false, execution: Execution::default() }
    }
}

impl AcceptanceOptions {
    fn steps_per_bloch(&self) -> usize {
        if self.quick {
            2048
        } else {
            PropagationConfig::DEFAULT_STEPS_PER_BLOCH
        }
    }

    fn sweep_points(&self, full: usize) -> usize {
        if self.quick {
            full.div_ceil(2)
        } else {
            full
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    /// `PASS  3 shuttle velocity: ...`
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {}: {} [{:.1}s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

pub const CRITERIA: [(usize, &str); 13] = [
    (1, "bloch period"),
    (2, "bloch amplitude"),
    (3, "shuttle velocity"),
    (4, "shuttle dispersion"),
    (5, "tight-binding exactness"),
    (6, "free spreading"),
    (7, "band folding"),
    (8, "bloch-zener reconstruction"),
    (9, "occupation law"),
    (10, "beam splitter"),
    (11, "mach-zehnder"),
    (12, "gross-pitaevskii"),
    (13, "numerics hygiene"),
];

type Verdict = Result<(bool, String)>;

/// Runs criterion `id` (1..=13); errors are reported as failures.
pub fn run_criterion(id: usize, opts: &AcceptanceOptions) -> CriterionResult {
    let start = Instant::now();
    let name = CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1);
    let verdict = match id {
        1 => bloch_period(opts),
        2 => bloch_amplitude(opts),
        3 => shuttle_velocity(opts),
        4 => shuttle_dispersion(opts),
        5 => tight_binding_exactness(opts),
        6 => free_spreading(opts),
        7 => band_folding(opts),
        8 => reconstruction(opts),
        9 => occupation_law(opts),
        10 => beam_splitter(opts),
        11 => mach_zehnder(opts),
        12 => gross_pitaevskii(opts),
        13 => numerics_hygiene(opts),
        _ => Err(Error::InvalidParameter(format!("no criterion {id}"))),
    };
    let (passed, detail) = verdict.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Runs all criteria in order, handing each result to `report` as soon as
/// it is available.
pub fn run_battery<F: FnMut(&CriterionResult)>(opts: &AcceptanceOptions, mut report: F) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .map(|&(id, _)| {
            let r = run_criterion(id, opts);
            report(&r);
            r
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn ground_band_width(params: &ScaledParams, opts: &AcceptanceOptions) -> Result<f64> {
    let table = solve_bands(&BlochProblem::new(params.with_eps(0.0)).with_execution(opts.execution), 2)?;
    Ok(table.ground_band_span())
}

/// Tracked `⟨x⟩` and `Δ_x²` of a Gaussian run through `schedule`.
fn tracked_run(params: &ScaledParams, schedule: &ControlSchedule, stride: usize, opts: &AcceptanceOptions) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let grid = SpatialGrid::default();
    let psi0 = make_gaussian(&grid, PACKET_WIDTH, 0.0, 0.0)?;
    let cfg = PropagationConfig::for_params(params, opts.steps_per_bloch())?.with_stride(stride);
    let traj = run(&psi0, schedule, &cfg, params)?;
    let tracked = tracked_moments(&traj, TRACKING_HALF_WIDTH)?;
    let plain = moments(&traj)?;
    Ok((tracked.times, tracked.mean_x, tracked.var_x, plain.mean_x))
}

fn bloch_series(opts: &AcceptanceOptions) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let p = ScaledParams::default();
    let stride = opts.steps_per_bloch() / 256;
    let schedule = ControlSchedule::from_preset(Preset::Bloch, &p, 3)?;
    let (times, mean, _, plain) = tracked_run(&p, &schedule, stride, opts)?;
    Ok((times[1] - times[0], times, mean, plain))
}

fn bloch_period(opts: &AcceptanceOptions) -> Verdict {
    let tb = ScaledParams::default().bloch_time()?;
    let (dt, _, mean, plain) = bloch_series(opts)?;
    let period = autocorrelation_period(dt, &mean)?;
    let plain_period = autocorrelation_period(dt, &plain).unwrap_or(f64::NAN);
    let err = rel(period, tb);
    Ok((
        err < 0.01,
        format!(
            "period {period:.2} vs T_B {tb:.2} (rel {err:.2e}, tol 1e-2); untracked <x> gives {plain_period:.2}"
        ),
    ))
}

fn bloch_amplitude(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default();
    let delta = ground_band_width(&p, opts)?;
    let (_, _, mean, plain) = bloch_series(opts)?;
    let one_period = mean.len() / 3 + 1;
    let span = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
    let amp = span(&mean[..one_period]);
    let target = delta / p.force;
    let err = rel(amp, target);
    Ok((
        err < 0.05,
        format!(
            "max-min <x> {amp:.1} vs Δ/F {target:.1} (Δ = {delta:.5}, rel {err:.2e}, tol 5e-2); untracked {:.1}",
            span(&plain[..one_period])
        ),
    ))
}

/// `(velocity, tracked variances at n T_B for n = 0..=4)` for a 4-period
/// shuttle at field `force`.
fn shuttle_run(force: f64, opts: &AcceptanceOptions) -> Result<(f64, Vec<f64>)> {
    let p = ScaledParams::default().with_force(force);
    let schedule = ControlSchedule::from_preset(Preset::Shuttle, &p, 4)?;
    let stride = opts.steps_per_bloch() / 8;
    let (times, mean, var, _) = tracked_run(&p, &schedule, stride, opts)?;
    let last = times.len() - 1;
    let v = (mean[last] - mean[0]) / (times[last] - times[0]);
    let per_period: Vec<f64> = (0..=4).map(|n| var[n * 8]).collect();
    Ok((v, per_period))
}

fn shuttle_velocity(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default();
    let delta = ground_band_width(&p, opts)?;
    let target = LATTICE_PERIOD * delta / (std::f64::consts::PI * p.hbar);
    let (v1, _) = shuttle_run(p.force, opts)?;
    let (v2, _) = shuttle_run(2.0 * p.force, opts)?;
    let err = rel(v1.abs(), target);
    let change = rel(v2, v1);
    Ok((
        err < 0.05 && change < 0.02,
        format!(
            "|v| {:.5} vs dΔ/(πħ) {target:.5} (rel {err:.2e}, tol 5e-2); v(2F0)/v(F0) - 1 = {change:.2e} (tol 2e-2)",
            v1.abs()
        ),
    ))
}

fn shuttle_dispersion(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default();
    let delta = ground_band_width(&p, opts)?;
    let (_, var) = shuttle_run(p.force, opts)?;
    // σ_x is the standard deviation of |ψ|², w/2 for e^{−(x/w)²}
    let sigma = PACKET_WIDTH / 2.0;
    let d = LATTICE_PERIOD;
    let mut ok = true;
    let mut parts = Vec::new();
    let mut logs = Vec::new();
    for n in 1..=4 {
        let growth = var[n] - var[0];
        let law = delta.powi(2) * d.powi(4) * (n * n) as f64 / (8.0 * p.force.powi(2) * sigma.powi(4));
        let ratio = growth / law;
        ok &= ratio > 0.5 && ratio < 2.0;
        parts.push(format!("n={n}: {growth:.1}/{law:.1}={ratio:.2}"));
        logs.push(((n as f64).ln(), growth.max(1e-300).ln()));
    }
    let slope = slope_of(&logs);
    ok &= (slope - 2.0).abs() <= 0.2;
    Ok((ok, format!("{}; n-exponent {slope:.3} (2 ± 0.2)", parts.join(", "))))
}

fn slope_of(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Relative disagreement of closed form and oracle; `⟨N⟩` is compared on
/// the scale `√⟨N²⟩` because it vanishes at whole periods.
pub fn tb_relative_error(model: &TBModel, state: &TBGaussian, t: f64) -> Result<f64> {
    let (m1, m2) = lie_moments(model, state, t)?;
    let (o1, o2) = tb_oracle(model, state, t)?.moments();
    Ok(((m1 - o1).abs() / m2.sqrt()).max((m2 - o2).abs() / m2))
}

fn tight_binding_exactness(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default();
    let delta = ground_band_width(&p, opts)?;
    let (hbar, f0) = (p.hbar, p.force);
    let tb = p.bloch_time()?;
    let state = TBGaussian::new(10.0)?;
    let profiles = [
        ("constant", TBModel::constant(delta, hbar, f0, 3.0 * tb)?),
        ("single-flip", TBModel::single_flip(delta, hbar, f0, 0.5 * tb, 3.0 * tb)?),
        ("shuttle", TBModel::shuttle(delta, hbar, f0, 3)?),
    ];
    let mut cases = Vec::new();
    for (name, model) in &profiles {
        for t in [0.5 * tb, tb, 3.0 * tb] {
            cases.push((*name, model, t));
        }
    }
    let errors = crate::parallel::try_map(opts.execution, &cases, |&(_, m, t)| tb_relative_error(m, &state, t))?;
    let worst = errors.iter().cloned().fold(0.0, f64::max);

    // σ_n scaling of the two-period shuttle dispersion, from the oracle
    let sigmas = [10.0, 20.0, 40.0];
    let model = TBModel::shuttle(delta, hbar, f0, 2)?;
    let growth = crate::parallel::try_map(opts.execution, &sigmas, |&s| -> Result<f64> {
        let st = TBGaussian::new(s)?;
        let (o1, o2) = tb_oracle(&model, &st, model.t_end())?.moments();
        Ok(o2 - o1 * o1 - st.second_moment())
    })?;
    let logs: Vec<(f64, f64)> = sigmas.iter().zip(&growth).map(|(s, g)| (s.ln(), g.ln())).collect();
    let slope = slope_of(&logs);
    Ok((
        worst <= 1e-8 && (slope + 4.0).abs() <= 0.2,
        format!("max rel error {worst:.2e} over 9 cases (tol 1e-8); σ_n slope {slope:.3} (-4 ± 0.2)"),
    ))
}

fn free_spreading(_opts: &AcceptanceOptions) -> Verdict {
    let grid = SpatialGrid::default();
    let p = ScaledParams { force: 0.0, eps: 0.0, amplitude: 0.0, g: 0.0, ..ScaledParams::default() };
    let t_end = 2000.0;
    let dt = t_end / 6400.0;
    let psi0 = make_gaussian(&grid, PACKET_WIDTH, 0.0, 0.0)?;
    let schedule = ControlSchedule::constant(&p, t_end)?;
    let out = evolve(&psi0, &schedule, &PropagationConfig::new(dt), &p)?;
    let (_, v0) = state_moments(&psi0);
    let (_, v1) = state_moments(&out);
    let sigma = PACKET_WIDTH / 2.0;
    let target = p.hbar.powi(2) * t_end.powi(2) / (4.0 * sigma * sigma);
    let err = rel(v1 - v0, target);
    Ok((err < 0.005, format!("Δvar {:.3} vs ħ²t²/(4σ²) {target:.3} (rel {err:.2e}, tol 5e-3)", v1 - v0)))
}

fn band_folding(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default();
    let t0 = solve_bands(&BlochProblem::new(p).with_execution(opts.execution), 3)?;
    let t1 = solve_bands(&BlochProblem::new(p.with_eps(0.121)).with_execution(opts.execution), 3)?;
    let edge0 = t0.edge_gap_01();
    let edge1 = t1.edge_gap_01();
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let span1 = max(t1.energies(1)) - min(t1.energies(0));
    let span_ratio = span1 / t0.ground_band_span();
    let gap12 = min(t1.energies(2)) - max(t1.energies(1));
    let ok = edge0 < 1e-8 && edge1 > 0.0 && (span_ratio - 1.0).abs() < 0.1 && gap12 > 10.0 * edge1;
    Ok((
        ok,
        format!(
            "ε=0 edge gap {edge0:.1e} (tol 1e-8); ε=0.121 edge gap {edge1:.4}, miniband span/folded width {span_ratio:.4}, gap to band 2 {gap12:.3}"
        ),
    ))
}

/// States at the requested multiples of `T_B` of a constant-field run.
fn states_at(params: &ScaledParams, multiples: &[usize], opts: &AcceptanceOptions) -> Result<(WaveFunction, Vec<WaveFunction>)> {
    let grid = SpatialGrid::default();
    let n = opts.steps_per_bloch();
    let psi0 = make_gaussian(&grid, PACKET_WIDTH, 0.0, 0.0)?;
    let last = *multiples.iter().max().unwrap_or(&1);
    let schedule = ControlSchedule::from_preset(Preset::Bloch, params, last)?;
    let cfg = PropagationConfig::for_params(params, n)?.with_stride(n);
    let mut found = Vec::new();
    run_observed(&psi0, &schedule, &cfg, params, |info, psi| {
        if multiples.contains(&(info.step / n)) && info.step > 0 {
            found.push(psi.clone());
        }
    })?;
    Ok((psi0, found))
}

fn reconstruction(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default();
    let (psi0, a) = states_at(&p.with_eps(0.0825), &[1], opts)?;
    let (_, b) = states_at(&p.with_eps(0.121), &[1, 2], opts)?;
    let fa = psi0.fidelity(&a[0]);
    let (fb1, fb2) = (psi0.fidelity(&b[0]), psi0.fidelity(&b[1]));
    Ok((
        fa >= 0.9 && fb2 >= 0.9 && fb1 < 0.7,
        format!(
            "ε=0.0825: F(T_B) {fa:.4} (≥ 0.9); ε=0.121: F(2T_B) {fb2:.4} (≥ 0.9), F(T_B) {fb1:.4} (< 0.7)"
        ),
    ))
}

fn occupation_law(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default().with_eps(0.0825);
    let grid = SpatialGrid::default();
    let n = opts.steps_per_bloch();
    let table = solve_bands(&BlochProblem::for_grid(p, &grid).with_execution(opts.execution), 2)?;
    let ts = time_scales(&table, &p)?;
    let projector = BandProjector::new(table, &grid)?;
    let psi0 = make_gaussian(&grid, PACKET_WIDTH, 0.0, 0.0)?;
    let schedule = ControlSchedule::from_preset(Preset::Bloch, &p, 4)?;
    let cfg = PropagationConfig::for_params(&p, n)?.with_stride(n / 2);
    let mut p0 = Vec::new();
    let mut err = None;
    run_observed(&psi0, &schedule, &cfg, &p, |_, psi| match projector.occupations(psi) {
        Ok(v) => p0.push(v[0]),
        Err(e) => {
            err.get_or_insert(e);
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let fit = fit_occupation_law(&p0)?;
    let values = p0.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ");
    Ok((
        fit.rms < 0.02,
        format!(
            "p0(nT_1) = [{values}]; fit X {:.3} Y {:.3} ν {:.4} φ {:.3}, rms {:.2e} (tol 2e-2); T_1/T_2 = {:.3}",
            fit.x, fit.y, fit.nu, fit.phase, fit.rms, ts.ratio()
        ),
    ))
}

fn beam_splitter(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default().with_eps(0.0825);
    let grid = SpatialGrid::default();
    let psi0 = make_gaussian(&grid, PACKET_WIDTH, 0.0, 0.0)?;
    let schedule = ControlSchedule::from_preset(Preset::SplitT2, &p, 1)?;
    let cfg = PropagationConfig::for_params(&p, opts.steps_per_bloch())?;
    let out = evolve(&psi0, &schedule, &cfg, &p)?;
    let [a, b] = SPLIT_T2_PACKETS;
    let pa = interval_probability(&out, a.0, a.1)?;
    let pb = interval_probability(&out, b.0, b.1)?;
    let between = interval_probability(&out, a.1, b.0)?;
    let split_ok = pa + pb > 0.9 && pa > 0.05 && pb > 0.05 && between < 0.02;

    let n = opts.sweep_points(25);
    let values: Vec<f64> = (0..n).map(|i| -0.3 + 0.6 * i as f64 / (n - 1) as f64).collect();
    let points = sweep(opts.execution, &values, |eps| {
        let psi = eps_point(&p.with_eps(eps), &grid, opts.steps_per_bloch())?;
        let (lower, upper) = branch_probabilities(&psi)?;
        Ok(SweepPoint { value: eps, lower, upper, absorbed: psi.absorbed_norm() })
    })?;
    let inside: Vec<&SweepPoint> = points.iter().filter(|q| q.value.abs() <= 0.2 + 1e-12).collect();
    let rising: Vec<f64> = inside.iter().filter(|q| q.value >= -1e-12).map(|q| q.upper).collect();
    let falling: Vec<f64> = inside.iter().filter(|q| q.value <= 1e-12).map(|q| q.upper).collect();
    let monotone = rising.windows(2).all(|w| w[1] >= w[0]) && falling.windows(2).all(|w| w[1] <= w[0]);
    let swing = |v: &[f64]| v.last().unwrap_or(&0.0) - v.first().unwrap_or(&0.0);
    let curve = inside.iter().map(|q| format!("{:+.3}:{:.3}", q.value, q.upper)).collect::<Vec<_>>().join(" ");
    Ok((
        split_ok && monotone,
        format!(
            "T2 at 3T_B: {pa:.3} + {pb:.3} = {:.3} (> 0.9), between {between:.1e}; upper branch [{}, {}] at T_B/2 \
             monotone in |ε| ≤ 0.2: {monotone} (rise {:.3}, fall {:.3}); {curve}",
            pa + pb,
            UPPER_BRANCH.0,
            UPPER_BRANCH.1,
            swing(&rising),
            -swing(&falling)
        ),
    ))
}

fn mach_zehnder(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default().with_eps(0.0825);
    let grid = SpatialGrid::default();
    let n = opts.sweep_points(32);
    let values: Vec<f64> = (0..n).map(|i| 0.21 * i as f64 / (n - 1) as f64).collect();
    let points = sweep(opts.execution, &values, |v0| {
        let psi = mzi_point(&p, &grid, opts.steps_per_bloch(), v0)?;
        let (lower, upper) = branch_probabilities(&psi)?;
        Ok(SweepPoint { value: v0, lower, upper, absorbed: psi.absorbed_norm() })
    })?;
    let data: Vec<(f64, f64)> = points.iter().map(|q| (q.value, q.upper)).collect();
    let fit = fringe_fit(&data)?;
    let target_period = 10.0 * std::f64::consts::TAU * p.force;
    let perr = rel(fit.period, target_period);
    let cerr = (fit.contrast - 0.977).abs();
    Ok((
        perr < 0.03 && cerr <= 0.02,
        format!(
            "period {:.5} vs {target_period:.5} (rel {perr:.2e}, tol 3e-2); contrast {:.4} vs 0.977 ± 0.02 \
             (raw max-min {:.4}, fit rms {:.1e}); lower branch [{}, {}] mean {:.3}",
            fit.period,
            fit.contrast,
            fit.raw_contrast,
            fit.rms_residual,
            LOWER_BRANCH.0,
            LOWER_BRANCH.1,
            points.iter().map(|q| q.lower).sum::<f64>() / points.len() as f64
        ),
    ))
}

fn gross_pitaevskii(opts: &AcceptanceOptions) -> Verdict {
    let p = ScaledParams::default().with_eps(0.104);
    let grid = SpatialGrid::default();
    let steps = opts.steps_per_bloch();
    // linear reference through the plain schedule path
    let psi0 = make_gaussian(&grid, GPE_PACKET_WIDTH, 0.0, 0.0)?;
    let linear = evolve(
        &psi0,
        &ControlSchedule::new(
            vec![Segment { t_start: 0.0, t_end: p.bloch_time()?, force: p.force, eps: p.eps, amplitude: p.amplitude }],
            Vec::new(),
        )?,
        &PropagationConfig::for_params(&p, steps)?,
        &p,
    )?;
    let g0 = gpe_point(&p.with_g(0.0), &grid, steps)?;
    let tiny = gpe_point(&p.with_g(1e-12), &grid, steps)?;
    let d0 = g0.distance(&linear);
    let dtiny = tiny.distance(&g0);

    let n = opts.sweep_points(24);
    let values: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 / (n - 1) as f64).collect();
    let points = sweep(opts.execution, &values, |g| {
        let psi = gpe_point(&p.with_g(g), &grid, steps)?;
        let (lower, upper) = branch_probabilities(&psi)?;
        Ok(SweepPoint { value: g, lower, upper, absorbed: psi.absorbed_norm() })
    })?;
    let range = |f: &dyn Fn(&SweepPoint) -> f64| {
        let v: Vec<f64> = points.iter().map(f).collect();
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let var_upper = range(&|q| q.upper);
    let var_lower = range(&|q| q.lower);
    Ok((
        d0 < 1e-8 && dtiny < 1e-8 && var_upper.max(var_lower) > 0.2,
        format!(
            "‖ψ_g=0 − ψ_linear‖ {d0:.1e}, ‖ψ_g=1e-12 − ψ_g=0‖ {dtiny:.1e} (tol 1e-8); branch variation over g ∈ [0, 0.3]: \
             upper {var_upper:.3}, lower {var_lower:.3} (> 0.2)"
        ),
    ))
}

/// Ratio of successive end-state differences under step halving.
pub fn strang_convergence_factor(grid: &SpatialGrid, params: &ScaledParams, t_end: f64, dt: f64) -> Result<f64> {
    let psi0 = make_gaussian(grid, PACKET_WIDTH, 0.0, 0.0)?;
    let schedule = ControlSchedule::constant(params, t_end)?;
    let end = |h: f64| evolve(&psi0, &schedule, &PropagationConfig::new(h).without_absorber(), params);
    let (a, b, c) = (end(dt)?, end(dt / 2.0)?, end(dt / 4.0)?);
    Ok(a.distance(&b) / b.distance(&c))
}

/// Fidelity after running `schedule` forward and then backward.
pub fn time_reversal_fidelity(psi0: &WaveFunction, schedule: &ControlSchedule, params: &ScaledParams, dt: f64) -> Result<f64> {
    let cfg = PropagationConfig::new(dt).without_absorber();
    let p = params.with_g(0.0);
    let forward = evolve(psi0, schedule, &cfg, &p)?;
    let back = evolve(&forward.conjugated(), &schedule.reversed(), &cfg, &p)?.conjugated();
    Ok(psi0.fidelity(&back))
}

fn numerics_hygiene(opts: &AcceptanceOptions) -> Verdict {
    let grid = SpatialGrid::default();
    let p = ScaledParams::default().with_eps(0.0825);
    let tb = p.bloch_time()?;
    let dt = tb / opts.steps_per_bloch() as f64;
    let psi0 = make_gaussian(&grid, PACKET_WIDTH, 0.0, 0.0)?;
    let schedule = ControlSchedule::constant(&p, 10_000.0 * dt)?;
    let out = evolve(&psi0, &schedule, &PropagationConfig::new(dt).without_absorber(), &p)?;
    let drift = (out.norm_sq() - 1.0).abs();

    let bz = ControlSchedule::from_preset(Preset::BzTransport, &p, 1)?;
    let first = ControlSchedule::new(
        bz.segments().iter().filter(|s| s.t_end <= tb * (1.0 + 1e-12)).cloned().collect(),
        Vec::new(),
    )?;
    let fid = time_reversal_fidelity(&psi0, &first, &p, dt)?;

    let factor = strang_convergence_factor(&grid, &p, 200.0, 0.5)?;
    Ok((
        drift < 1e-9 && fid > 1.0 - 1e-6 && factor >= 3.9,
        format!("norm drift {drift:.1e} over 1e4 steps (tol 1e-9); time-reversal 1-F {:.1e} (tol 1e-6); Strang factor {factor:.3} (≥ 3.9)", 1.0 - fid),
    ))
}
