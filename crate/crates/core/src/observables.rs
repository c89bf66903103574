//! Measured quantities: moments, band occupations, interval probabilities
//! and least-squares fringe fits.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::bands::{grid_channels, BandTable};
use crate::error::{Error, Result};
use crate::model::{SpatialGrid, WaveFunction};
use crate::propagate::Trajectory;

/// Position moments of a trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub var_x: Vec<f64>,
    /// `1 − absorbed`.
    pub norm_inside: Vec<f64>,
}

impl MomentSeries {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,mean_x,var_x,norm_inside")?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{:.10e},{:.12e},{:.12e},{:.12e}",
                self.times[i], self.mean_x[i], self.var_x[i], self.norm_inside[i]
            )?;
        }
        Ok(())
    }
}

/// Mean and variance of a density restricted to index range `lo..hi`
/// (wrapping is not applied), normalized by the mass in the range.
fn density_moments(grid: &SpatialGrid, rho: &[f64], lo: usize, hi: usize) -> (f64, f64, f64) {
    let dx = grid.dx();
    let mass: f64 = rho[lo..hi].iter().sum::<f64>();
    if mass <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = rho[lo..hi]
        .iter()
        .enumerate()
        .map(|(j, r)| grid.x(lo + j) * r)
        .sum::<f64>()
        / mass;
    let var = rho[lo..hi]
        .iter()
        .enumerate()
        .map(|(j, r)| (grid.x(lo + j) - mean).powi(2) * r)
        .sum::<f64>()
        / mass;
    (mass * dx, mean, var.max(0.0))
}

/// `⟨x⟩` and `Δ_x²` of a state, normalized by its on-grid norm.
pub fn state_moments(psi: &WaveFunction) -> (f64, f64) {
    let rho = psi.density();
    let (_, mean, var) = density_moments(psi.grid(), &rho, 0, rho.len());
    (mean, var)
}

/// Moments of every snapshot over the whole grid, normalized by the
/// probability still on the grid.
pub fn moments(traj: &Trajectory) -> Result<MomentSeries> {
    if traj.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    let mut out = MomentSeries::default();
    for i in 0..traj.len() {
        let rho = traj.density(i);
        let (_, mean, var) = density_moments(&traj.grid, &rho, 0, rho.len());
        out.times.push(traj.times[i]);
        out.mean_x.push(mean);
        out.var_x.push(var);
        out.norm_inside.push(1.0 - traj.absorbed[i]);
    }
    Ok(out)
}

/// Moments of the main packet: each snapshot is restricted to a window of
/// `±half_width` that follows the packet, starting from the full-grid mean
/// of the first snapshot. Fractions that have left the window (escaping
/// higher-band components) do not contribute.
pub fn tracked_moments(traj: &Trajectory, half_width: f64) -> Result<MomentSeries> {
    if traj.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    let grid = &traj.grid;
    let n = grid.n_points();
    let index = |x: f64| -> usize {
        (((x - grid.x_min()) / grid.dx()).round().max(0.0) as usize).min(n)
    };
    let mut out = MomentSeries::default();
    let rho0 = traj.density(0);
    let (_, mut center, _) = density_moments(grid, &rho0, 0, n);
    for i in 0..traj.len() {
        let rho = traj.density(i);
        let mut stats = (0.0, center, 0.0);
        for _ in 0..3 {
            let (lo, hi) = (index(stats.1 - half_width), index(stats.1 + half_width));
            stats = density_moments(grid, &rho, lo, hi);
        }
        center = stats.1;
        out.times.push(traj.times[i]);
        out.mean_x.push(stats.1);
        out.var_x.push(stats.2);
        out.norm_inside.push(1.0 - traj.absorbed[i]);
    }
    Ok(out)
}

/// Expectation of the momentum `ħk` from the Fourier transform.
pub fn mean_momentum(psi: &WaveFunction, hbar: f64) -> f64 {
    let (k, w) = momentum_density(psi);
    let total: f64 = w.iter().sum();
    hbar * k.iter().zip(&w).map(|(k, w)| k * w).sum::<f64>() / total
}

fn momentum_density(psi: &WaveFunction) -> (Vec<f64>, Vec<f64>) {
    let mut buf = psi.amplitudes().to_vec();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let w = buf.iter().map(|z| z.norm_sqr()).collect();
    (psi.grid().wavenumbers(), w)
}

/// Circular mean of the momentum density folded into the zone of a lattice
/// with the given period, returned in `[-G/2, G/2)` with `G = 2π/period`.
pub fn quasimomentum_centroid(psi: &WaveFunction, period: f64) -> f64 {
    let g = TAU / period;
    let (k, w) = momentum_density(psi);
    let z: Complex64 = k
        .iter()
        .zip(&w)
        .map(|(k, w)| Complex64::from_polar(*w, TAU * k / g))
        .sum();
    z.arg() / TAU * g
}

/// Occupations of the bands of a [`BandTable`] built on the grid's
/// quasimomentum channels.
pub struct BandProjector {
    grid: SpatialGrid,
    table: BandTable,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    /// per channel: `(fft bin, e^{-ik x_min}·√(dx/N), coefficient index)`
    terms: Vec<Vec<(usize, Complex64, usize)>>,
}

impl BandProjector {
    pub fn new(table: BandTable, grid: &SpatialGrid) -> Result<Self> {
        let channels = grid_channels(grid);
        let mismatch = channels.len() != table.kappa().len()
            || channels
                .iter()
                .zip(table.kappa())
                .any(|(a, b)| (a - b).abs() > 1e-12);
        if mismatch {
            return Err(Error::Mismatch(
                "band table mesh is not the grid's quasimomentum channels".into(),
            ));
        }
        let n = grid.n_points() as i64;
        let p = grid.n_double_cells() as i64;
        let dk = grid.k_spacing();
        let m_cut = table.cutoff() as i64;
        let scale = (grid.dx() / grid.n_points() as f64).sqrt();
        let lo = -(p / 2);
        let terms = (0..channels.len())
            .map(|ik| {
                let j = lo + ik as i64;
                (-m_cut..=m_cut)
                    .filter_map(|m| {
                        let bin = j + m * p;
                        if 2 * bin.abs() >= n {
                            return None;
                        }
                        let k = bin as f64 * dk;
                        let idx = bin.rem_euclid(n) as usize;
                        let phase = Complex64::from_polar(scale, -k * grid.x_min());
                        Some((idx, phase, (m + m_cut) as usize))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            fft: FftPlanner::new().plan_fft_forward(grid.n_points()),
            table,
            terms,
        })
    }

    pub fn table(&self) -> &BandTable {
        &self.table
    }

    /// `p_α = Σ_κ |⟨χ_{α,κ}|ψ⟩|²` for every band in the table.
    pub fn occupations(&self, psi: &WaveFunction) -> Result<Vec<f64>> {
        if psi.grid() != &self.grid {
            return Err(Error::Mismatch("wave function lives on another grid".into()));
        }
        let mut buf = psi.amplitudes().to_vec();
        self.fft.process(&mut buf);
        let mut p = vec![0.0; self.table.n_bands()];
        for (ik, terms) in self.terms.iter().enumerate() {
            for (alpha, pa) in p.iter_mut().enumerate() {
                let c = self.table.coefficients(alpha, ik);
                let amp: Complex64 = terms.iter().map(|&(bin, ph, ci)| c[ci] * ph * buf[bin]).sum();
                *pa += amp.norm_sqr();
            }
        }
        Ok(p)
    }
}

/// `(p0, p1)` of `psi` in the two lowest bands of `table`.
pub fn band_occupations(psi: &WaveFunction, table: &BandTable) -> Result<(f64, f64)> {
    if table.n_bands() < 2 {
        return Err(Error::InvalidParameter("need at least two bands".into()));
    }
    let p = BandProjector::new(table.clone(), psi.grid())?.occupations(psi)?;
    Ok((p[0], p[1]))
}

/// Miniband occupations sampled at multiples of `T_1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BandOccupationSeries {
    pub times: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    /// `1 − p0 − p1 − absorbed`.
    pub residual: Vec<f64>,
}

impl BandOccupationSeries {
    pub fn push(&mut self, time: f64, p0: f64, p1: f64, absorbed: f64) {
        self.times.push(time);
        self.p0.push(p0);
        self.p1.push(p1);
        self.residual.push(1.0 - p0 - p1 - absorbed);
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,p0,p1,residual")?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{:.10e},{:.12e},{:.12e},{:.12e}",
                self.times[i], self.p0[i], self.p1[i], self.residual[i]
            )?;
        }
        Ok(())
    }
}

/// `∫_a^b ρ dx` for samples `rho` on `grid`, integrating the periodic
/// piecewise-linear interpolant exactly.
pub fn interval_probability_density(grid: &SpatialGrid, rho: &[f64], a: f64, b: f64) -> Result<f64> {
    if !(a < b) || a < grid.x_min() || b > grid.x_max() {
        return Err(Error::InvalidParameter(format!(
            "interval [{a}, {b}] not inside [{}, {}]",
            grid.x_min(),
            grid.x_max()
        )));
    }
    let n = rho.len();
    let dx = grid.dx();
    let cumulative = |x: f64| -> f64 {
        let s = (x - grid.x_min()) / dx;
        let i = (s.floor() as usize).min(n - 1);
        let frac = s - i as f64;
        let whole: f64 = (0..i).map(|j| 0.5 * (rho[j] + rho[(j + 1) % n])).sum();
        let (r0, r1) = (rho[i], rho[(i + 1) % n]);
        dx * (whole + r0 * frac + 0.5 * (r1 - r0) * frac * frac)
    };
    Ok(cumulative(b) - cumulative(a))
}

/// `∫_a^b |ψ|² dx`.
pub fn interval_probability(psi: &WaveFunction, a: f64, b: f64) -> Result<f64> {
    interval_probability_density(psi.grid(), &psi.density(), a, b)
}

/// Result of a least-squares fit of `A + B cos(2π v / period + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub period: f64,
    pub offset: f64,
    /// Non-negative amplitude `B`.
    pub amplitude: f64,
    pub phase: f64,
    /// `max − min` of the fitted curve over the sweep range.
    pub contrast: f64,
    /// `max − min` of the raw samples.
    pub raw_contrast: f64,
    pub rms_residual: f64,
}

/// Linear least squares for `A + C cos(ωv) + S sin(ωv)`; returns
/// `(A, C, S, sum of squared residuals)`. When the sine column vanishes on
/// the samples (integer `v` with `ω` a multiple of `π`) it is dropped.
fn linear_cosine_fit(points: &[(f64, f64)], omega: f64) -> Option<(f64, f64, f64, f64)> {
    let sin_weight: f64 = points.iter().map(|&(v, _)| (omega * v).sin().powi(2)).sum();
    let use_sin = sin_weight > 1e-12 * points.len() as f64;
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for &(v, y) in points {
        let s = if use_sin { (omega * v).sin() } else { 0.0 };
        let row = Vector3::new(1.0, (omega * v).cos(), s);
        ata += row * row.transpose();
        aty += row * y;
    }
    if !use_sin {
        ata[(2, 2)] = 1.0;
    }
    let sol = ata.cholesky()?.solve(&aty);
    let sse = points
        .iter()
        .map(|&(v, y)| {
            let f = sol[0] + sol[1] * (omega * v).cos() + sol[2] * (omega * v).sin();
            (y - f).powi(2)
        })
        .sum();
    Some((sol[0], sol[1], sol[2], sse))
}

/// Scans frequencies on `[f_lo, f_hi]` and refines the best one by golden
/// section. Returns `(frequency, A, C, S, sse)`.
fn scan_frequency(points: &[(f64, f64)], f_lo: f64, f_hi: f64) -> Option<(f64, f64, f64, f64, f64)> {
    const SCAN: usize = 4000;
    let sse = |f: f64| linear_cosine_fit(points, TAU * f).map_or(f64::INFINITY, |r| r.3);
    let step = (f_hi - f_lo) / SCAN as f64;
    let best = (0..=SCAN)
        .map(|i| f_lo + step * i as f64)
        .map(|f| (f, sse(f)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let (mut a, mut b) = ((best.0 - step).max(f_lo), (best.0 + step).min(f_hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = sse(d);
        }
    }
    let f = 0.5 * (a + b);
    let (a0, cc, ss, e) = linear_cosine_fit(points, TAU * f)?;
    Some((f, a0, cc, ss, e))
}

/// Fits `A + B cos(2π v/period + phase)` to `(v, probability)` samples.
pub fn fringe_fit(points: &[(f64, f64)]) -> Result<FringeFit> {
    if points.len() < 12 {
        return Err(Error::Fit(format!("need at least 12 points, got {}", points.len())));
    }
    let v_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let v_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let span = v_max - v_min;
    if !(span > 0.0) {
        return Err(Error::Fit("sweep has zero span".into()));
    }
    // at least 1.5 periods in the span, at most the sampling Nyquist rate
    let f_lo = 1.5 / span;
    let f_hi = (points.len() - 1) as f64 / (2.0 * span);
    if f_hi <= f_lo {
        return Err(Error::Fit("too few points for 1.5 periods".into()));
    }
    let (f, a, c, s, sse) =
        scan_frequency(points, f_lo, f_hi).ok_or_else(|| Error::Fit("singular normal equations".into()))?;
    let rms = (sse / points.len() as f64).sqrt();
    if !rms.is_finite() {
        return Err(Error::Fit("non-finite residual".into()));
    }
    let amplitude = c.hypot(s);
    // A + C cos + S sin = A + B cos(ωv + φ) with φ = atan2(-S, C)
    let phase = (-s).atan2(c);
    let omega = TAU * f;
    let curve = |v: f64| a + amplitude * (omega * v + phase).cos();
    const DENSE: usize = 20_000;
    let (lo, hi) = (0..=DENSE)
        .map(|i| curve(v_min + span * i as f64 / DENSE as f64))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let raw_max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let raw_min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(FringeFit {
        period: 1.0 / f,
        offset: a,
        amplitude,
        phase,
        contrast: hi - lo,
        raw_contrast: raw_max - raw_min,
        rms_residual: rms,
    })
}

/// Fit of `X + Y cos(2πνn + φ)` to values sampled at integer `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineLawFit {
    pub x: f64,
    pub y: f64,
    /// Frequency per sample, folded into `[0, 1/2]`.
    pub nu: f64,
    pub phase: f64,
    pub rms: f64,
}

fn cosine_law_from(values: &[f64], nu: f64, a: f64, c: f64, s: f64, sse: f64) -> CosineLawFit {
    CosineLawFit {
        x: a,
        y: c.hypot(s),
        nu,
        phase: (-s).atan2(c),
        rms: (sse / values.len() as f64).sqrt(),
    }
}

/// Fits the occupation law with the frequency as a free parameter.
pub fn fit_occupation_law(values: &[f64]) -> Result<CosineLawFit> {
    if values.len() < 5 {
        return Err(Error::Fit("need at least five samples".into()));
    }
    let points: Vec<(f64, f64)> = values.iter().enumerate().map(|(n, &p)| (n as f64, p)).collect();
    // ν = 0 and ν = 1/2 make the sine column vanish; keep just inside
    let (nu, a, c, s, sse) = scan_frequency(&points, 1e-6, 0.5 - 1e-6)
        .ok_or_else(|| Error::Fit("singular normal equations".into()))?;
    Ok(cosine_law_from(values, nu, a, c, s, sse))
}

/// Fits the occupation law with a prescribed frequency `nu` (per sample).
pub fn fit_occupation_law_fixed(values: &[f64], nu: f64) -> Result<CosineLawFit> {
    let points: Vec<(f64, f64)> = values.iter().enumerate().map(|(n, &p)| (n as f64, p)).collect();
    let folded = nu.rem_euclid(1.0);
    let folded = if folded > 0.5 { 1.0 - folded } else { folded };
    let (a, c, s, sse) = linear_cosine_fit(&points, TAU * folded)
        .ok_or_else(|| Error::Fit("singular normal equations".into()))?;
    Ok(cosine_law_from(values, folded, a, c, s, sse))
}

/// Period of an evenly sampled signal from the first autocorrelation peak
/// after the first zero crossing, refined by a parabola through the peak.
pub fn autocorrelation_period(sample_dt: f64, series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 8 {
        return Err(Error::Fit("series too short".into()));
    }
    // Pearson correlation of the overlapping parts, which is exactly 1 at
    // the period of a pure sinusoid whatever the record length
    let correlation = |lag: usize| -> f64 {
        let (a, b) = (&series[..n - lag], &series[lag..]);
        let m = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / m, b.iter().sum::<f64>() / m);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    };
    let acf: Vec<f64> = (0..n * 3 / 4).map(correlation).collect();
    let zero = acf
        .iter()
        .position(|&r| r < 0.0)
        .ok_or_else(|| Error::Fit("autocorrelation never crosses zero".into()))?;
    let peak = (zero + 1..acf.len() - 1)
        .find(|&i| acf[i] >= acf[i - 1] && acf[i] >= acf[i + 1] && acf[i] > 0.0)
        .ok_or_else(|| Error::Fit("no autocorrelation peak".into()))?;
    let (a, b, c) = (acf[peak - 1], acf[peak], acf[peak + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Ok((peak as f64 + shift) * sample_dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_gaussian;

    #[test]
    fn interval_total_and_additivity() {
        let grid = SpatialGrid::symmetric(4096, 256).unwrap();
        let psi = make_gaussian(&grid, 60.0, 100.0, 0.3).unwrap();
        let all = interval_probability(&psi, grid.x_min(), grid.x_max()).unwrap();
        assert!((all - 1.0).abs() < 1e-9);
        let a = interval_probability(&psi, -300.0, 87.3).unwrap();
        let b = interval_probability(&psi, 87.3, 200.0).unwrap();
        let ab = interval_probability(&psi, -300.0, 200.0).unwrap();
        assert!((a + b - ab).abs() < 1e-12);
        assert!(interval_probability(&psi, 10.0, 5.0).is_err());
        assert!(interval_probability(&psi, -1e6, 5.0).is_err());
    }

    #[test]
    fn fringe_fit_recovers_synthetic_cosine() {
        let pts: Vec<(f64, f64)> = (0..32)
            .map(|i| {
                let v = 0.21 * i as f64 / 31.0;
                (v, 0.5 + 0.45 * (TAU * v / 0.069 + 0.3).cos())
            })
            .collect();
        let fit = fringe_fit(&pts).unwrap();
        assert!((fit.period - 0.069).abs() < 1e-4, "{fit:?}");
        assert!((fit.contrast - 0.9).abs() < 1e-3);
        assert!(fit.rms_residual < 1e-8);
        assert!(fringe_fit(&pts[..10]).is_err());
    }

    #[test]
    fn occupation_law_fit() {
        let vals: Vec<f64> = (0..9).map(|n| 0.6 + 0.3 * (TAU * 0.37 * n as f64).cos()).collect();
        let fit = fit_occupation_law(&vals).unwrap();
        assert!((fit.nu - 0.37).abs() < 1e-6, "{fit:?}");
        assert!(fit.phase.abs() < 1e-5);
        assert!(fit.rms < 1e-9);
        let fixed = fit_occupation_law_fixed(&vals, 0.37 + 3.0).unwrap();
        assert!(fixed.rms < 1e-9);
        let alt: Vec<f64> = (0..9).map(|n| 0.5 + 0.2 * (-1f64).powi(n)).collect();
        let fit = fit_occupation_law_fixed(&alt, 0.5).unwrap();
        assert!(fit.rms < 1e-12 && (fit.y - 0.2).abs() < 1e-12);
    }

    #[test]
    fn autocorrelation_finds_period() {
        let dt = 0.1;
        let s: Vec<f64> = (0..600).map(|i| (TAU * i as f64 * dt / 17.3).sin()).collect();
        let p = autocorrelation_period(dt, &s).unwrap();
        assert!((p - 17.3).abs() / 17.3 < 2e-3, "{p}");
    }

    #[test]
    fn gaussian_momentum_and_translation() {
        let grid = SpatialGrid::symmetric(4096, 256).unwrap();
        let hbar = 2.828;
        let psi = make_gaussian(&grid, 60.0, 0.0, 0.05).unwrap();
        assert!((mean_momentum(&psi, hbar) - hbar * 0.05).abs() < 1e-9);
        let (m0, v0) = state_moments(&psi);
        let shifted = make_gaussian(&grid, 60.0, 123.0, 0.05).unwrap();
        let (m1, v1) = state_moments(&shifted);
        assert!((m1 - m0 - 123.0).abs() < 1e-9);
        assert!((v1 - v0).abs() < 1e-8);
    }

    #[test]
    fn quasimomentum_of_boosted_packet() {
        let grid = SpatialGrid::symmetric(4096, 256).unwrap();
        let psi = make_gaussian(&grid, 60.0, 0.0, 0.1).unwrap();
        let c = quasimomentum_centroid(&psi, crate::model::DOUBLE_PERIOD);
        assert!((c - 0.1).abs() < 1e-6);
        let psi = make_gaussian(&grid, 60.0, 0.0, 0.3).unwrap();
        let c = quasimomentum_centroid(&psi, crate::model::DOUBLE_PERIOD);
        assert!((c + 0.2).abs() < 1e-6, "folded into [-1/4, 1/4): {c}");
    }
}
