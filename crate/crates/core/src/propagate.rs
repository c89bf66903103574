//! Split-operator time evolution with a boundary absorber.
//!
//! One step is the symmetric (Strang) product
//! `exp(-iV dt/2ħ) · exp(-iT dt/ħ) · exp(-iV dt/2ħ)` with the kinetic factor
//! applied in momentum space, followed by a multiplicative edge mask. `V`
//! holds the lattice, the tilt `F x`, active probe windows and, for the
//! Gross-Pitaevskii case, `g|ψ|²` evaluated at the start of each half step.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::{ControlSchedule, ScaledParams, SpatialGrid, WaveFunction};

/// Step size, absorber and snapshot settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub dt: f64,
    /// Fraction of the domain covered by the absorber at each edge.
    pub absorber_width: f64,
    pub absorber_strength: f64,
    pub snapshot_stride: usize,
    /// Keep complex snapshots in the trajectory, not just `|ψ|`.
    pub store_complex: bool,
}

impl PropagationConfig {
    pub const DEFAULT_STEPS_PER_BLOCH: usize = 8192;

    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            absorber_width: 0.05,
            absorber_strength: 1.0,
            snapshot_stride: 256,
            store_complex: false,
        }
    }

    /// `dt = T_B / steps_per_bloch`.
    pub fn for_params(params: &ScaledParams, steps_per_bloch: usize) -> Result<Self> {
        if steps_per_bloch == 0 {
            return Err(Error::InvalidParameter("steps per Bloch time must be positive".into()));
        }
        Ok(Self::new(params.bloch_time()? / steps_per_bloch as f64))
    }

    pub fn without_absorber(mut self) -> Self {
        self.absorber_width = 0.0;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    pub fn with_complex_snapshots(mut self) -> Self {
        self.store_complex = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..0.25).contains(&self.absorber_width) {
            return Err(Error::InvalidParameter(format!(
                "absorber width {} outside [0, 0.25)",
                self.absorber_width
            )));
        }
        if self.absorber_width > 0.0 && !(self.absorber_strength > 0.0) {
            return Err(Error::InvalidParameter("absorber strength must be positive".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidParameter("snapshot stride must be positive".into()));
        }
        Ok(())
    }
}

/// Static part of the potential during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPotential {
    pub force: f64,
    pub eps: f64,
    pub amplitude: f64,
    /// `(x_left, x_right, v0)` flat wells.
    pub probes: Vec<(f64, f64, f64)>,
}

impl LocalPotential {
    pub fn from_params(params: &ScaledParams) -> Self {
        Self {
            force: params.force,
            eps: params.eps,
            amplitude: params.amplitude,
            probes: Vec::new(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let mut v = self.amplitude * x.cos() + self.eps * (0.5 * x).cos() + self.force * x;
        for &(a, b, v0) in &self.probes {
            if x >= a && x <= b {
                v += v0;
            }
        }
        v
    }
}

/// Split-operator stepper owning its FFT plans and scratch space.
pub struct Propagator {
    grid: SpatialGrid,
    hbar: f64,
    dt: f64,
    x: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    /// `exp(-iħk²dt/2) / N`
    kinetic: Vec<Complex64>,
    /// `(index, mask)` for grid points inside the absorbing layers
    absorber: Vec<(usize, f64)>,
    potential: Option<LocalPotential>,
    /// `exp(-iV dt/2ħ)`
    half_phase: Vec<Complex64>,
}

impl Propagator {
    pub fn new(grid: &SpatialGrid, hbar: f64, config: &PropagationConfig) -> Result<Self> {
        config.validate()?;
        if !(hbar > 0.0) {
            return Err(Error::InvalidParameter("hbar must be positive".into()));
        }
        let n = grid.n_points();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let scratch_len = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());
        let dt = config.dt;
        let inv_n = 1.0 / n as f64;
        let kinetic = grid
            .wavenumbers()
            .iter()
            .map(|k| Complex64::from_polar(inv_n, -0.5 * hbar * k * k * dt))
            .collect();

        let mut absorber = Vec::new();
        let width = config.absorber_width * grid.length();
        if width > 0.0 {
            for i in 0..n {
                let x = grid.x(i);
                let depth = if x < grid.x_min() + width {
                    (grid.x_min() + width - x) / width
                } else if x > grid.x_max() - width {
                    (x - (grid.x_max() - width)) / width
                } else {
                    continue;
                };
                // cos² ramp: 0 at the inner edge of the layer, 1 at the boundary
                let s = (0.5 * std::f64::consts::PI * (1.0 - depth)).cos().powi(2);
                absorber.push((i, (-config.absorber_strength * dt * s).exp()));
            }
        }

        Ok(Self {
            grid: grid.clone(),
            hbar,
            dt,
            x: grid.positions(),
            fft,
            ifft,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            kinetic,
            absorber,
            potential: None,
            half_phase: vec![Complex64::new(1.0, 0.0); n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn set_potential(&mut self, potential: &LocalPotential) {
        if self.potential.as_ref() == Some(potential) {
            return;
        }
        let c = -0.5 * self.dt / self.hbar;
        for (p, &x) in self.half_phase.iter_mut().zip(&self.x) {
            *p = Complex64::from_polar(1.0, c * potential.value(x));
        }
        self.potential = Some(potential.clone());
    }

    fn potential_half_step(&self, psi: &mut [Complex64], g: f64) {
        if g == 0.0 {
            for (z, p) in psi.iter_mut().zip(&self.half_phase) {
                *z *= p;
            }
        } else {
            let c = -0.5 * self.dt * g / self.hbar;
            for (z, p) in psi.iter_mut().zip(&self.half_phase) {
                *z *= p * Complex64::from_polar(1.0, c * z.norm_sqr());
            }
        }
    }

    /// Advances `psi` by one step of the current potential. `step_index` is
    /// only used to label a non-finite failure.
    pub fn step(&mut self, psi: &mut WaveFunction, g: f64, step_index: usize) -> Result<()> {
        if psi.grid() != &self.grid {
            return Err(Error::Mismatch("wave function lives on another grid".into()));
        }
        let amps = psi.amplitudes_mut();
        self.potential_half_step(amps, g);
        self.fft.process_with_scratch(amps, &mut self.scratch);
        for (z, k) in amps.iter_mut().zip(&self.kinetic) {
            *z *= k;
        }
        self.ifft.process_with_scratch(amps, &mut self.scratch);
        self.potential_half_step(amps, g);

        let mut removed = 0.0;
        for &(i, m) in &self.absorber {
            let before = amps[i].norm_sqr();
            amps[i] *= m;
            removed += before * (1.0 - m * m);
        }
        if self.absorber.is_empty() {
            // cheap sentinel for overflow without an absorber
            let probe = amps[amps.len() / 2];
            if !(probe.re.is_finite() && probe.im.is_finite()) {
                return Err(Error::NonFinite { step: step_index });
            }
        } else if !removed.is_finite() {
            return Err(Error::NonFinite { step: step_index });
        }
        psi.add_absorbed(removed * self.grid.dx());
        Ok(())
    }
}

/// Position of the run handed to observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub time: f64,
}

/// Snapshot series of a run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: SpatialGrid,
    pub times: Vec<f64>,
    /// `|ψ|` per snapshot.
    pub abs_psi: Vec<Vec<f64>>,
    pub states: Option<Vec<Vec<Complex64>>>,
    pub absorbed: Vec<f64>,
    pub final_state: WaveFunction,
    pub n_steps: usize,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `|ψ|²` of snapshot `i`.
    pub fn density(&self, i: usize) -> Vec<f64> {
        self.abs_psi[i].iter().map(|a| a * a).collect()
    }

    /// Writes `<stem>.bin` (little-endian f64, row-major time × space, `|ψ|`)
    /// and a `<stem>.txt` sidecar describing the layout. Returns both paths.
    pub fn write_binary(&self, dir: &Path, stem: &str, params: &ScaledParams) -> std::io::Result<Vec<PathBuf>> {
        let bin = dir.join(format!("{stem}.bin"));
        let mut w = BufWriter::new(fs::File::create(&bin)?);
        for row in &self.abs_psi {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        let txt = dir.join(format!("{stem}.txt"));
        let mut s = BufWriter::new(fs::File::create(&txt)?);
        write_sidecar(&mut s, &self.grid, params, "abs_psi", &self.times)?;
        writeln!(s, "dt = {}", self.dt)?;
        writeln!(s, "absorbed = {}", join(&self.absorbed))?;
        s.flush()?;
        Ok(vec![bin, txt])
    }

    /// Small-run alternative: `time,x,abs_psi` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,x,abs_psi")?;
        for (t, row) in self.times.iter().zip(&self.abs_psi) {
            for (i, v) in row.iter().enumerate() {
                writeln!(out, "{t:.10e},{:.10e},{v:.10e}", self.grid.x(i))?;
            }
        }
        Ok(())
    }
}

pub(crate) fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

/// Plain-text description of a binary row-major map.
pub fn write_sidecar<W: Write>(
    mut w: W,
    grid: &SpatialGrid,
    params: &ScaledParams,
    quantity: &str,
    rows: &[f64],
) -> std::io::Result<()> {
    writeln!(w, "format = f64le row-major")?;
    writeln!(w, "quantity = {quantity}")?;
    writeln!(w, "n_rows = {}", rows.len())?;
    writeln!(w, "n_points = {}", grid.n_points())?;
    writeln!(w, "x_min = {}", grid.x_min())?;
    writeln!(w, "x_max = {}", grid.x_max())?;
    writeln!(w, "hbar = {}", params.hbar)?;
    writeln!(w, "F = {}", params.force)?;
    writeln!(w, "eps = {}", params.eps)?;
    writeln!(w, "A = {}", params.amplitude)?;
    writeln!(w, "g = {}", params.g)?;
    writeln!(w, "rows = {}", join(rows))?;
    Ok(())
}

struct StepPlan {
    n_steps: usize,
    /// `(first step, segment index)` in ascending order
    seg_starts: Vec<(usize, usize)>,
    /// `(on step, off step, probe index)`
    probes: Vec<(usize, usize, usize)>,
}

fn plan_steps(schedule: &ControlSchedule, dt: f64) -> Result<StepPlan> {
    let to_step = |t: f64| -> Result<usize> {
        let s = t / dt;
        let r = s.round();
        if (s - r).abs() > 1e-9 * s.abs().max(1.0) {
            return Err(Error::InvalidSchedule(format!(
                "boundary t = {t} is not a multiple of dt = {dt}"
            )));
        }
        Ok(r as usize)
    };
    let n_steps = to_step(schedule.t_final())?;
    let mut seg_starts = Vec::new();
    for (i, seg) in schedule.segments().iter().enumerate() {
        seg_starts.push((to_step(seg.t_start)?, i));
    }
    let probes = schedule
        .probes()
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.t_start / dt).round() as usize, (p.t_end / dt).round() as usize, i))
        .collect();
    Ok(StepPlan {
        n_steps,
        seg_starts,
        probes,
    })
}

/// Runs `schedule` from `psi0`, calling `observer` at step 0 and every
/// `snapshot_stride` steps. Returns the final state.
pub fn run_observed<F>(
    psi0: &WaveFunction,
    schedule: &ControlSchedule,
    config: &PropagationConfig,
    params: &ScaledParams,
    mut observer: F,
) -> Result<WaveFunction>
where
    F: FnMut(StepInfo, &WaveFunction),
{
    params.validate()?;
    config.validate()?;
    let plan = plan_steps(schedule, config.dt)?;
    let mut prop = Propagator::new(psi0.grid(), params.hbar, config)?;
    let mut psi = psi0.clone();
    let mut seg_cursor = 0;
    let segments = schedule.segments();

    observer(StepInfo { step: 0, time: 0.0 }, &psi);
    for step in 0..plan.n_steps {
        while seg_cursor + 1 < plan.seg_starts.len() && plan.seg_starts[seg_cursor + 1].0 <= step {
            seg_cursor += 1;
        }
        let seg = &segments[plan.seg_starts[seg_cursor].1];
        let mut pot = LocalPotential {
            force: seg.force,
            eps: seg.eps,
            amplitude: seg.amplitude,
            probes: Vec::new(),
        };
        for &(on, off, i) in &plan.probes {
            if step >= on && step < off {
                let p = &schedule.probes()[i];
                pot.probes.push((p.x_left, p.x_right, p.v0));
            }
        }
        prop.set_potential(&pot);
        prop.step(&mut psi, params.g, step)?;
        let done = step + 1;
        if done % config.snapshot_stride == 0 {
            observer(
                StepInfo {
                    step: done,
                    time: done as f64 * config.dt,
                },
                &psi,
            );
        }
    }
    Ok(psi)
}

/// Runs `schedule` and records a [`Trajectory`].
pub fn run(
    psi0: &WaveFunction,
    schedule: &ControlSchedule,
    config: &PropagationConfig,
    params: &ScaledParams,
) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut abs_psi = Vec::new();
    let mut states = config.store_complex.then(Vec::new);
    let mut absorbed = Vec::new();
    let final_state = run_observed(psi0, schedule, config, params, |info, psi| {
        times.push(info.time);
        abs_psi.push(psi.amplitudes().iter().map(|z| z.norm()).collect());
        if let Some(s) = states.as_mut() {
            s.push(psi.amplitudes().to_vec());
        }
        absorbed.push(psi.absorbed_norm());
    })?;
    let n_steps = (schedule.t_final() / config.dt).round() as usize;
    Ok(Trajectory {
        grid: psi0.grid().clone(),
        times,
        abs_psi,
        states,
        absorbed,
        final_state,
        n_steps,
        dt: config.dt,
    })
}

/// Evolves to the end of `schedule` and returns only the final state.
pub fn evolve(
    psi0: &WaveFunction,
    schedule: &ControlSchedule,
    config: &PropagationConfig,
    params: &ScaledParams,
) -> Result<WaveFunction> {
    let cfg = PropagationConfig {
        snapshot_stride: usize::MAX,
        ..*config
    };
    run_observed(psi0, schedule, &cfg, params, |_, _| {})
}
