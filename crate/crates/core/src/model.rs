//! Scaled model constants, position grids, wave functions and control
//! schedules shared by the rest of the crate.
//!
//! Units are the dimensionless lattice units in which the fundamental
//! lattice period is `2π` and the deep lattice has unit amplitude:
//!
//! ```text
//! iħ ∂ψ/∂t = [ -ħ²/2 ∂²/∂x² + A cos x + ε cos(x/2) + F x + g|ψ|² ] ψ
//! ```

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Fundamental lattice period `d`.
pub const LATTICE_PERIOD: f64 = TAU;

/// Period of the double-periodic (`ε`) lattice, `2d`.
pub const DOUBLE_PERIOD: f64 = 2.0 * TAU;

/// Dimensionless model constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledParams {
    pub hbar: f64,
    /// Static field strength `F` (signed).
    pub force: f64,
    /// Amplitude of the double-periodic lattice `ε` (signed).
    pub eps: f64,
    /// Amplitude `A` of the single-periodic lattice.
    pub amplitude: f64,
    /// Mean-field interaction strength.
    pub g: f64,
}

impl Default for ScaledParams {
    fn default() -> Self {
        Self {
            hbar: 2.828,
            force: 0.0011,
            eps: 0.0,
            amplitude: 1.0,
            g: 0.0,
        }
    }
}

impl ScaledParams {
    pub fn with_eps(self, eps: f64) -> Self {
        Self { eps, ..self }
    }

    pub fn with_force(self, force: f64) -> Self {
        Self { force, ..self }
    }

    pub fn with_g(self, g: f64) -> Self {
        Self { g, ..self }
    }

    /// The lattice period `d`; fixed by the choice of units.
    pub fn period(&self) -> f64 {
        LATTICE_PERIOD
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.hbar, self.force, self.eps, self.amplitude, self.g]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite model constant".into()));
        }
        if self.hbar <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "hbar must be positive, got {}",
                self.hbar
            )));
        }
        if self.amplitude < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lattice amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    /// Bloch time `T_B = 2πħ/(d|F|)`.
    pub fn bloch_time(&self) -> Result<f64> {
        if self.force == 0.0 {
            return Err(Error::InvalidParameter(
                "Bloch time is undefined for F = 0".into(),
            ));
        }
        Ok(TAU * self.hbar / (LATTICE_PERIOD * self.force.abs()))
    }
}

/// Uniform periodic position grid on `[x_min, x_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    n_points: usize,
    x_min: f64,
    x_max: f64,
}

impl SpatialGrid {
    /// Number of points and domain used by the experiment presets.
    pub const DEFAULT_POINTS: usize = 16384;
    pub const DEFAULT_CELLS_PER_SIDE: usize = 1024;

    pub fn new(n_points: usize, x_min: f64, x_max: f64) -> Result<Self> {
        if n_points < 2 || !n_points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "point count must be a power of two, got {n_points}"
            )));
        }
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::InvalidGrid(format!(
                "empty or non-finite domain [{x_min}, {x_max})"
            )));
        }
        let cells = (x_max - x_min) / DOUBLE_PERIOD;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) || cells.round() < 1.0 {
            return Err(Error::InvalidGrid(format!(
                "domain length {} is not a multiple of 4π",
                x_max - x_min
            )));
        }
        Ok(Self {
            n_points,
            x_min,
            x_max,
        })
    }

    /// Grid on `[-2π·cells, 2π·cells)`, i.e. `cells` lattice periods per side.
    pub fn symmetric(n_points: usize, cells_per_side: usize) -> Result<Self> {
        let half = cells_per_side as f64 * LATTICE_PERIOD;
        Self::new(n_points, -half, half)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n_points as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = TAU / self.length();
        (0..n)
            .map(|i| {
                let j = if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
                j as f64 * dk
            })
            .collect()
    }

    pub fn k_spacing(&self) -> f64 {
        TAU / self.length()
    }

    pub fn k_nyquist(&self) -> f64 {
        PI / self.dx()
    }

    /// Number of lattice cells of length `4π`; equals the number of distinct
    /// quasimomentum channels of the reduced zone that the grid resolves.
    pub fn n_double_cells(&self) -> usize {
        (self.length() / DOUBLE_PERIOD).round() as usize
    }

    /// Checks that the largest grid momentum `ħ·k_nyq` exceeds four times
    /// the momentum bound (default `4/ħ`).
    pub fn validate_resolution(&self, hbar: f64, momentum_bound: Option<f64>) -> Result<()> {
        let bound = momentum_bound.unwrap_or(4.0 / hbar);
        let p_max = hbar * self.k_nyquist();
        if p_max <= 4.0 * bound {
            return Err(Error::InvalidGrid(format!(
                "grid momentum {p_max:.3} does not exceed 4 x momentum bound {bound:.3}"
            )));
        }
        Ok(())
    }
}

impl Default for SpatialGrid {
    fn default() -> Self {
        Self::symmetric(Self::DEFAULT_POINTS, Self::DEFAULT_CELLS_PER_SIDE)
            .expect("default grid is valid")
    }
}

/// Complex amplitudes on a grid plus the probability already removed by the
/// boundary absorber.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: SpatialGrid,
    psi: Vec<Complex64>,
    absorbed_norm: f64,
}

impl WaveFunction {
    pub fn from_amplitudes(grid: SpatialGrid, psi: Vec<Complex64>) -> Result<Self> {
        if psi.len() != grid.n_points() {
            return Err(Error::Mismatch(format!(
                "{} amplitudes for a grid of {} points",
                psi.len(),
                grid.n_points()
            )));
        }
        Ok(Self {
            grid,
            psi,
            absorbed_norm: 0.0,
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.psi
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.psi
    }

    pub fn absorbed_norm(&self) -> f64 {
        self.absorbed_norm
    }

    pub(crate) fn add_absorbed(&mut self, p: f64) {
        self.absorbed_norm += p;
    }

    /// `Σ|ψ|² dx` over the grid.
    pub fn norm_sq(&self) -> f64 {
        self.psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// On-grid norm plus absorbed probability; stays at one for a
    /// normalized initial state.
    pub fn total_probability(&self) -> f64 {
        self.norm_sq() + self.absorbed_norm
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            let s = 1.0 / n;
            self.psi.iter_mut().for_each(|z| *z *= s);
        }
    }

    pub fn density(&self) -> Vec<f64> {
        self.psi.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `⟨self|other⟩ = Σ conj(self)·other dx`.
    pub fn overlap(&self, other: &WaveFunction) -> Complex64 {
        self.psi
            .iter()
            .zip(&other.psi)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.dx()
    }

    /// `|⟨self|other⟩|`.
    pub fn fidelity(&self, other: &WaveFunction) -> f64 {
        self.overlap(other).norm()
    }

    /// `‖self − other‖`.
    pub fn distance(&self, other: &WaveFunction) -> f64 {
        (self
            .psi
            .iter()
            .zip(&other.psi)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * self.grid.dx())
        .sqrt()
    }

    /// Complex conjugate state (time reversal for a real Hamiltonian).
    pub fn conjugated(&self) -> WaveFunction {
        WaveFunction {
            grid: self.grid.clone(),
            psi: self.psi.iter().map(|z| z.conj()).collect(),
            absorbed_norm: self.absorbed_norm,
        }
    }
}

/// Normalized Gaussian `exp(-((x-x0)/σ)²)·exp(iκ₀x)`.
///
/// `sigma_x` is the denominator of the exponent, so the position variance
/// of the density is `sigma_x²/4`.
pub fn make_gaussian(grid: &SpatialGrid, sigma_x: f64, x0: f64, kappa0: f64) -> Result<WaveFunction> {
    if !(sigma_x > 0.0 && sigma_x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gaussian width must be positive, got {sigma_x}"
        )));
    }
    let (lo, hi) = (x0 - 6.0 * sigma_x, x0 + 6.0 * sigma_x);
    if lo < grid.x_min() || hi > grid.x_max() {
        return Err(Error::PacketOutsideGrid(format!(
            "6-sigma margin [{lo:.1}, {hi:.1}] leaves [{:.1}, {:.1})",
            grid.x_min(),
            grid.x_max()
        )));
    }
    let psi = (0..grid.n_points())
        .map(|i| {
            let x = grid.x(i);
            let u = (x - x0) / sigma_x;
            Complex64::from_polar((-u * u).exp(), kappa0 * x)
        })
        .collect();
    let mut wf = WaveFunction::from_amplitudes(grid.clone(), psi)?;
    wf.normalize();
    Ok(wf)
}

/// One piece of a piecewise-constant control sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub force: f64,
    pub eps: f64,
    pub amplitude: f64,
}

/// Flat additive potential `v0` on `[x_left, x_right]` while
/// `t_start ≤ t ≤ t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub x_left: f64,
    pub x_right: f64,
    pub v0: f64,
}

/// Named control sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Bloch,
    Shuttle,
    BzTransport,
    SplitT2,
    SplitT3,
    SplitT4,
    MziT5,
    FreeSplit,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Bloch,
        Preset::Shuttle,
        Preset::BzTransport,
        Preset::SplitT2,
        Preset::SplitT3,
        Preset::SplitT4,
        Preset::MziT5,
        Preset::FreeSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Bloch => "bloch",
            Preset::Shuttle => "shuttle",
            Preset::BzTransport => "bz_transport",
            Preset::SplitT2 => "split_t2",
            Preset::SplitT3 => "split_t3",
            Preset::SplitT4 => "split_t4",
            Preset::MziT5 => "mzi_t5",
            Preset::FreeSplit => "free_split",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::Bloch => "constant field and lattice",
            Preset::Shuttle => "field flipped every half Bloch period",
            Preset::BzTransport => "eps and F flipped on quarters of 2 T_B (directed transport)",
            Preset::SplitT2 => "beam splitter, eps switched off after T_B/2, two field flips",
            Preset::SplitT3 => "beam splitter with constant eps",
            Preset::SplitT4 => "beam splitter followed by shuttle separation up to 9 T_B",
            Preset::MziT5 => "repeated splitting, F = +,-,-,+ on half periods",
            Preset::FreeSplit => "lattice and field switched off at T_B/2",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

#[derive(Clone, Copy)]
enum Sign {
    Plus,
    Minus,
    Zero,
}

impl Sign {
    fn apply(self, magnitude: f64) -> f64 {
        match self {
            Sign::Plus => magnitude.abs(),
            Sign::Minus => -magnitude.abs(),
            Sign::Zero => 0.0,
        }
    }
}

/// Piecewise-constant time courses of `F`, `ε` and `A` plus probe windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    segments: Vec<Segment>,
    probes: Vec<ProbeWindow>,
    t_final: f64,
}

impl ControlSchedule {
    pub fn new(segments: Vec<Segment>, probes: Vec<ProbeWindow>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidSchedule("no segments".into()))?;
        if first.t_start != 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "first segment starts at {} instead of 0",
                first.t_start
            )));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.t_end > s.t_start) {
                return Err(Error::InvalidSchedule(format!("segment {i} is empty")));
            }
            if s.amplitude < 0.0 || ![s.force, s.eps, s.amplitude].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidSchedule(format!(
                    "segment {i} has invalid parameters"
                )));
            }
        }
        for (i, w) in segments.windows(2).enumerate() {
            if w[0].t_end != w[1].t_start {
                return Err(Error::InvalidSchedule(format!(
                    "gap or overlap between segments {i} and {}",
                    i + 1
                )));
            }
        }
        let t_final = segments.last().unwrap().t_end;
        for (i, p) in probes.iter().enumerate() {
            if p.t_start < 0.0 || p.t_end > t_final || p.t_end < p.t_start {
                return Err(Error::InvalidSchedule(format!(
                    "probe {i} window [{}, {}] outside [0, {t_final}]",
                    p.t_start, p.t_end
                )));
            }
            if !(p.x_right > p.x_left) {
                return Err(Error::InvalidSchedule(format!("probe {i} has an empty range")));
            }
        }
        Ok(Self {
            segments,
            probes,
            t_final,
        })
    }

    /// Single segment with the parameters of `params`.
    pub fn constant(params: &ScaledParams, t_final: f64) -> Result<Self> {
        Self::new(
            vec![Segment {
                t_start: 0.0,
                t_end: t_final,
                force: params.force,
                eps: params.eps,
                amplitude: params.amplitude,
            }],
            Vec::new(),
        )
    }

    /// Builds one of the tabulated control sequences. Boundaries are
    /// multiples of `T_B` computed from `|F|`; signs apply to `|F|` and `|ε|`.
    /// `n_repeats` repeats the periodic presets (bloch, shuttle,
    /// bz_transport), sets the length of free_split in `T_B`, and is ignored
    /// by the one-shot splitting tables.
    pub fn from_preset(preset: Preset, params: &ScaledParams, n_repeats: usize) -> Result<Self> {
        use Sign::*;
        params.validate()?;
        if n_repeats == 0 {
            return Err(Error::InvalidSchedule("n_repeats must be at least 1".into()));
        }
        let tb = params.bloch_time()?;
        let (f, e, a) = (params.force, params.eps, params.amplitude);

        // (boundaries in T_B, eps signs, F signs) for a single block
        let table: (Vec<f64>, Vec<Sign>, Vec<Sign>) = match preset {
            Preset::Bloch => {
                let seg = Segment {
                    t_start: 0.0,
                    t_end: n_repeats as f64 * tb,
                    force: f,
                    eps: e,
                    amplitude: a,
                };
                return Self::new(vec![seg], Vec::new());
            }
            Preset::FreeSplit => {
                let half = 0.5 * tb;
                let segs = vec![
                    Segment {
                        t_start: 0.0,
                        t_end: half,
                        force: f,
                        eps: e,
                        amplitude: a,
                    },
                    Segment {
                        t_start: half,
                        t_end: n_repeats as f64 * tb,
                        force: 0.0,
                        eps: 0.0,
                        amplitude: 0.0,
                    },
                ];
                return Self::new(segs, Vec::new());
            }
            Preset::Shuttle => (vec![0.0, 0.5, 1.0], vec![Plus, Plus], vec![Plus, Minus]),
            Preset::BzTransport => (
                vec![0.0, 0.5, 1.0, 1.5, 2.0],
                vec![Plus, Minus, Minus, Plus],
                vec![Plus, Plus, Minus, Minus],
            ),
            Preset::SplitT2 => (
                vec![0.0, 0.5, 1.0, 1.5, 3.0],
                vec![Plus, Zero, Zero, Zero],
                vec![Plus, Minus, Plus, Plus],
            ),
            Preset::SplitT3 => (
                vec![0.0, 0.5, 1.0, 1.5, 3.0],
                vec![Plus, Plus, Plus, Plus],
                vec![Plus, Minus, Minus, Minus],
            ),
            Preset::SplitT4 => {
                let mut bounds = vec![0.0, 0.5, 1.0, 1.5, 2.0];
                let mut eps = vec![Plus, Zero, Zero, Zero];
                let mut force = vec![Plus, Minus, Plus, Minus];
                // eight half periods on [2, 6], starting opposite to [1.5, 2]
                for i in 0..8 {
                    bounds.push(2.0 + 0.5 * (i + 1) as f64);
                    eps.push(Zero);
                    force.push(if i % 2 == 0 { Plus } else { Minus });
                }
                bounds.push(9.0);
                eps.push(Zero);
                force.push(Plus);
                (bounds, eps, force)
            }
            Preset::MziT5 => (
                vec![0.0, 0.5, 1.0, 1.5, 2.0],
                vec![Plus, Plus, Plus, Plus],
                vec![Plus, Minus, Minus, Plus],
            ),
        };

        let repeats = match preset {
            Preset::Shuttle | Preset::BzTransport => n_repeats,
            _ => 1,
        };
        let (bounds, eps_signs, force_signs) = table;
        let block = *bounds.last().unwrap();
        let mut segments = Vec::with_capacity(repeats * eps_signs.len());
        for r in 0..repeats {
            let offset = r as f64 * block;
            for i in 0..eps_signs.len() {
                segments.push(Segment {
                    t_start: (offset + bounds[i]) * tb,
                    t_end: (offset + bounds[i + 1]) * tb,
                    force: force_signs[i].apply(f),
                    eps: eps_signs[i].apply(e),
                    amplitude: a,
                });
            }
        }
        // enforce exact tiling against rounding in the products above
        for i in 1..segments.len() {
            segments[i].t_start = segments[i - 1].t_end;
        }
        Self::new(segments, Vec::new())
    }

    pub fn with_probe(self, probe: ProbeWindow) -> Result<Self> {
        let mut probes = self.probes;
        probes.push(probe);
        Self::new(self.segments, probes)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn probes(&self) -> &[ProbeWindow] {
        &self.probes
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Segment active at time `t` (the later one at a shared boundary).
    pub fn segment_at(&self, t: f64) -> &Segment {
        let idx = self.segments.partition_point(|s| s.t_end <= t);
        &self.segments[idx.min(self.segments.len() - 1)]
    }

    /// Same controls played backwards in time, `t -> t_final - t`.
    pub fn reversed(&self) -> ControlSchedule {
        let t_final = self.t_final;
        let mut segments: Vec<Segment> = self
            .segments
            .iter()
            .rev()
            .map(|s| Segment {
                t_start: t_final - s.t_end,
                t_end: t_final - s.t_start,
                ..*s
            })
            .collect();
        segments[0].t_start = 0.0;
        for i in 1..segments.len() {
            segments[i].t_start = segments[i - 1].t_end;
        }
        let last = segments.len() - 1;
        segments[last].t_end = t_final;
        let probes = self
            .probes
            .iter()
            .map(|p| ProbeWindow {
                t_start: t_final - p.t_end,
                t_end: t_final - p.t_start,
                ..*p
            })
            .collect();
        ControlSchedule {
            segments,
            probes,
            t_final,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad_moments(wf: &WaveFunction) -> (f64, f64, f64) {
        let g = wf.grid();
        let rho = wf.density();
        let dx = g.dx();
        let norm: f64 = rho.iter().sum::<f64>() * dx;
        let mean: f64 = rho.iter().enumerate().map(|(i, r)| g.x(i) * r).sum::<f64>() * dx / norm;
        let var: f64 = rho
            .iter()
            .enumerate()
            .map(|(i, r)| (g.x(i) - mean).powi(2) * r)
            .sum::<f64>()
            * dx
            / norm;
        (norm, mean, var)
    }

    #[test]
    fn default_params() {
        let p = ScaledParams::default();
        assert_eq!(p.hbar, 2.828);
        assert_eq!(p.force, 0.0011);
        assert_eq!(p.period(), TAU);
        assert_relative_eq!(p.bloch_time().unwrap(), 2.828 / 0.0011, max_relative = 1e-14);
        assert!(p.with_force(0.0).bloch_time().is_err());
    }

    #[test]
    fn grid_divisibility() {
        let g = SpatialGrid::default();
        assert_eq!(g.n_double_cells(), 1024);
        assert_eq!(g.length() / DOUBLE_PERIOD, 1024.0);
        assert!(SpatialGrid::new(1024, 0.0, 10.0).is_err());
        assert!(SpatialGrid::new(1000, -2.0 * PI, 2.0 * PI).is_err());
        assert!(SpatialGrid::new(1024, -2.0 * PI, 2.0 * PI).is_ok());
        assert!(g.validate_resolution(2.828, None).is_ok());
        assert!(SpatialGrid::symmetric(1024, 1024)
            .unwrap()
            .validate_resolution(2.828, None)
            .is_err());
    }

    #[test]
    fn gaussian_on_default_grid() {
        let g = SpatialGrid::default();
        let wf = make_gaussian(&g, 60.0, 0.0, 0.0).unwrap();
        let (norm, mean, var) = quad_moments(&wf);
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(mean.abs() < 1e-9);
        // w²/4 for an amplitude exp(-(x/w)²)
        assert!((var - 900.0).abs() / 900.0 < 1e-3);
        assert_eq!(wf.absorbed_norm(), 0.0);
    }

    #[test]
    fn gaussian_margin_error() {
        let g = SpatialGrid::symmetric(1024, 16).unwrap();
        let err = make_gaussian(&g, 60.0, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::PacketOutsideGrid(_)));
        assert!(err.to_string().contains("6-sigma"));
    }

    #[test]
    fn bz_transport_table() {
        let p = ScaledParams::default().with_eps(0.0825);
        let s = ControlSchedule::from_preset(Preset::BzTransport, &p, 1).unwrap();
        let tb = p.bloch_time().unwrap();
        let signs: Vec<(f64, f64)> = s
            .segments()
            .iter()
            .map(|s| (s.eps.signum(), s.force.signum()))
            .collect();
        assert_eq!(signs, vec![(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]);
        for (i, seg) in s.segments().iter().enumerate() {
            assert_relative_eq!(seg.t_start, 0.5 * i as f64 * tb, max_relative = 1e-14);
        }
        assert_relative_eq!(s.t_final(), 2.0 * tb, max_relative = 1e-14);
    }

    #[test]
    fn split_t2_table() {
        let p = ScaledParams::default().with_eps(0.0825);
        let s = ControlSchedule::from_preset(Preset::SplitT2, &p, 1).unwrap();
        let tb = p.bloch_time().unwrap();
        let eps: Vec<f64> = s.segments().iter().map(|s| s.eps).collect();
        let f: Vec<f64> = s.segments().iter().map(|s| s.force.signum()).collect();
        assert_eq!(eps, vec![0.0825, 0.0, 0.0, 0.0]);
        assert_eq!(f, vec![1.0, -1.0, 1.0, 1.0]);
        let bounds: Vec<f64> = s.segments().iter().map(|s| s.t_start / tb).collect();
        for (b, want) in bounds.iter().zip([0.0, 0.5, 1.0, 1.5]) {
            assert_relative_eq!(*b, want, epsilon = 1e-14);
        }
        assert_relative_eq!(s.t_final() / tb, 3.0, max_relative = 1e-14);
    }

    #[test]
    fn split_t4_alternation() {
        let p = ScaledParams::default().with_eps(0.0825);
        let s = ControlSchedule::from_preset(Preset::SplitT4, &p, 1).unwrap();
        let f: Vec<f64> = s.segments().iter().map(|s| s.force.signum()).collect();
        assert_eq!(
            f,
            vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0]
        );
        assert!(s.segments()[1..].iter().all(|s| s.eps == 0.0));
        let tb = p.bloch_time().unwrap();
        assert_relative_eq!(s.t_final() / tb, 9.0, max_relative = 1e-14);
    }

    #[test]
    fn bloch_and_free_split() {
        let p = ScaledParams::default().with_eps(0.1);
        let s = ControlSchedule::from_preset(Preset::Bloch, &p, 1).unwrap();
        assert_eq!(s.segments().len(), 1);
        assert_eq!(s.segments()[0].force, p.force);
        assert_eq!(s.segments()[0].eps, 0.1);

        let s = ControlSchedule::from_preset(Preset::FreeSplit, &p, 2).unwrap();
        let last = s.segments()[1];
        assert_eq!((last.force, last.eps, last.amplitude), (0.0, 0.0, 0.0));
        assert_relative_eq!(last.t_start, 0.5 * p.bloch_time().unwrap());
    }

    #[test]
    fn presets_tile_exactly() {
        let p = ScaledParams::default().with_eps(0.0825);
        for preset in Preset::ALL {
            let s = ControlSchedule::from_preset(preset, &p, 3).unwrap();
            assert_eq!(s.segments()[0].t_start, 0.0);
            for w in s.segments().windows(2) {
                assert_eq!(w[0].t_end, w[1].t_start, "{preset}");
            }
            assert_eq!(s.segments().last().unwrap().t_end, s.t_final());
            let r = s.reversed();
            assert_eq!(r.t_final(), s.t_final());
            for w in r.segments().windows(2) {
                assert_eq!(w[0].t_end, w[1].t_start);
            }
        }
    }

    #[test]
    fn preset_names_roundtrip() {
        for preset in Preset::ALL {
            assert_eq!(preset.name().parse::<Preset>().unwrap(), preset);
        }
        assert!(matches!("nope".parse::<Preset>(), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn schedule_validation() {
        let seg = |a: f64, b: f64| Segment {
            t_start: a,
            t_end: b,
            force: 1e-3,
            eps: 0.0,
            amplitude: 1.0,
        };
        assert!(ControlSchedule::new(vec![seg(0.0, 1.0), seg(1.5, 2.0)], vec![]).is_err());
        assert!(ControlSchedule::new(vec![seg(0.0, 1.0), seg(0.5, 2.0)], vec![]).is_err());
        let ok = ControlSchedule::new(vec![seg(0.0, 1.0), seg(1.0, 2.0)], vec![]).unwrap();
        let probe = ProbeWindow {
            t_start: 1.5,
            t_end: 2.5,
            x_left: -1.0,
            x_right: 1.0,
            v0: 0.1,
        };
        assert!(ok.clone().with_probe(probe).is_err());
        assert_eq!(ok.segment_at(1.0).t_start, 1.0);
        assert_eq!(ok.segment_at(0.99).t_start, 0.0);
        assert_eq!(ok.segment_at(2.0).t_start, 1.0);
    }
}
