//! Field-free band structure of the double-periodic lattice.
//!
//! The Hamiltonian at `F = 0` is diagonalized in the plane-wave basis
//! `exp(i(κ + m/2)x)`, `m = -M..=M`, over the reduced zone
//! `κ ∈ [-1/4, 1/4)` of the period-`4π` lattice. `cos x` couples `m` to
//! `m ± 2`, `ε cos(x/2)` couples `m` to `m ± 1`.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ScaledParams, SpatialGrid, LATTICE_PERIOD};
use crate::parallel::{self, Execution};

/// Plane-wave eigenproblem for a set of quasimomenta.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochProblem {
    params: ScaledParams,
    cutoff: usize,
    kappa: Vec<f64>,
    execution: Execution,
}

impl BlochProblem {
    pub const DEFAULT_CUTOFF: usize = 64;
    pub const DEFAULT_MESH: usize = 128;
    pub const MIN_CUTOFF: usize = 32;

    pub fn new(params: ScaledParams) -> Self {
        Self {
            params,
            cutoff: Self::DEFAULT_CUTOFF,
            kappa: uniform_mesh(Self::DEFAULT_MESH),
            execution: Execution::default(),
        }
    }

    /// Mesh made of exactly the reduced-zone quasimomenta that a grid
    /// resolves, so projections onto the resulting Bloch states are exact.
    pub fn for_grid(params: ScaledParams, grid: &SpatialGrid) -> Self {
        Self {
            params,
            cutoff: Self::MIN_CUTOFF,
            kappa: grid_channels(grid),
            execution: Execution::default(),
        }
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_mesh_size(mut self, n: usize) -> Self {
        self.kappa = uniform_mesh(n);
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.params.eps = eps;
        self
    }

    pub fn params(&self) -> &ScaledParams {
        &self.params
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.cutoff < Self::MIN_CUTOFF {
            return Err(Error::InvalidParameter(format!(
                "plane-wave cutoff {} below {}",
                self.cutoff,
                Self::MIN_CUTOFF
            )));
        }
        if self.kappa.len() < Self::DEFAULT_MESH {
            return Err(Error::InvalidParameter(format!(
                "kappa mesh of {} points is below {}",
                self.kappa.len(),
                Self::DEFAULT_MESH
            )));
        }
        Ok(())
    }
}

/// `n` points `-1/4 + i/(2n)` covering `[-1/4, 1/4)`.
pub fn uniform_mesh(n: usize) -> Vec<f64> {
    (0..n).map(|i| -0.25 + 0.5 * i as f64 / n as f64).collect()
}

/// Reduced-zone quasimomenta resolved by `grid`, ascending.
pub fn grid_channels(grid: &SpatialGrid) -> Vec<f64> {
    let p = grid.n_double_cells() as i64;
    let dk = grid.k_spacing();
    let lo = -(p / 2);
    (lo..lo + p).map(|j| j as f64 * dk).collect()
}

/// Eigenpairs for one quasimomentum: energies ascending and real
/// plane-wave coefficients indexed by `m + M`.
fn solve_kappa(params: &ScaledParams, cutoff: usize, kappa: f64, n_bands: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dim = 2 * cutoff + 1;
    let kinetic = |i: usize| {
        let k = kappa + 0.5 * (i as f64 - cutoff as f64);
        0.5 * params.hbar * params.hbar * k * k
    };

    // (energy, vector, parity under x -> x + 2π: even m first on ties)
    let mut pairs: Vec<(f64, Vec<f64>, u8)> = Vec::with_capacity(dim);
    if params.eps == 0.0 {
        // even and odd m decouple; solving them apart keeps the folded
        // bands labelled by parity at the zone-edge degeneracy
        for parity in 0..2u8 {
            let idx: Vec<usize> = (0..dim)
                .filter(|&i| ((i as i64 - cutoff as i64).rem_euclid(2)) as u8 == parity)
                .collect();
            let n = idx.len();
            let mut h = DMatrix::<f64>::zeros(n, n);
            for (a, &i) in idx.iter().enumerate() {
                h[(a, a)] = kinetic(i);
                if a + 1 < n {
                    h[(a, a + 1)] = 0.5 * params.amplitude;
                    h[(a + 1, a)] = 0.5 * params.amplitude;
                }
            }
            let eig = SymmetricEigen::new(h);
            for j in 0..n {
                let mut v = vec![0.0; dim];
                for (a, &i) in idx.iter().enumerate() {
                    v[i] = eig.eigenvectors[(a, j)];
                }
                pairs.push((eig.eigenvalues[j], v, parity));
            }
        }
    } else {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            h[(i, i)] = kinetic(i);
            if i + 1 < dim {
                h[(i, i + 1)] = 0.5 * params.eps;
                h[(i + 1, i)] = 0.5 * params.eps;
            }
            if i + 2 < dim {
                h[(i, i + 2)] = 0.5 * params.amplitude;
                h[(i + 2, i)] = 0.5 * params.amplitude;
            }
        }
        let eig = SymmetricEigen::new(h);
        for j in 0..dim {
            let v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            pairs.push((eig.eigenvalues[j], v, 0));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for i in 0..pairs.len().saturating_sub(1) {
        if (pairs[i + 1].0 - pairs[i].0).abs() < 1e-10 && pairs[i].2 > pairs[i + 1].2 {
            pairs.swap(i, i + 1);
        }
    }
    pairs.truncate(n_bands);

    let mut energies = Vec::with_capacity(n_bands);
    let mut vectors = Vec::with_capacity(n_bands);
    for (e, mut v, _) in pairs {
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let s = pivot.signum() / norm;
        v.iter_mut().for_each(|c| *c *= s);
        energies.push(e);
        vectors.push(v);
    }
    (energies, vectors)
}

/// Sampled dispersion relations and Bloch eigenvectors.
#[derive(Debug, Clone)]
pub struct BandTable {
    params: ScaledParams,
    cutoff: usize,
    kappa: Vec<f64>,
    /// `energies[alpha][ik]`
    energies: Vec<Vec<f64>>,
    /// `vectors[ik][alpha][m + M]`
    vectors: Vec<Vec<Vec<f64>>>,
}

/// Diagonalizes the field-free Hamiltonian on every mesh point, keeping the
/// lowest `n_bands` bands.
pub fn solve_bands(problem: &BlochProblem, n_bands: usize) -> Result<BandTable> {
    problem.validate()?;
    let m = problem.cutoff;
    if n_bands == 0 || n_bands > 2 * m {
        return Err(Error::InvalidParameter(format!(
            "n_bands = {n_bands} must lie in 1..={}",
            2 * m
        )));
    }
    let params = problem.params;
    let per_kappa = parallel::map(problem.execution, &problem.kappa, |&k| {
        solve_kappa(&params, m, k, n_bands)
    });

    // cutoff convergence probe at the zone centre and edge
    let top = n_bands - 1;
    for &k in &[0.0, -0.25] {
        let (coarse, _) = solve_kappa(&params, m, k, n_bands);
        let (fine, _) = solve_kappa(&params, m + 8, k, n_bands);
        let shift = (fine[top] - coarse[top]).abs();
        if shift > 1e-8 {
            return Err(Error::CutoffTooSmall { band: top, shift });
        }
    }

    let mut energies = vec![Vec::with_capacity(problem.kappa.len()); n_bands];
    let mut vectors = Vec::with_capacity(problem.kappa.len());
    for (e, v) in per_kappa {
        for (alpha, ea) in e.into_iter().enumerate() {
            energies[alpha].push(ea);
        }
        vectors.push(v);
    }
    Ok(BandTable {
        params,
        cutoff: m,
        kappa: problem.kappa.clone(),
        energies,
        vectors,
    })
}

impl BandTable {
    pub fn params(&self) -> &ScaledParams {
        &self.params
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn n_bands(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self, alpha: usize) -> &[f64] {
        &self.energies[alpha]
    }

    /// Plane-wave coefficients of band `alpha` at mesh index `ik`, indexed
    /// by `m + M`.
    pub fn coefficients(&self, alpha: usize, ik: usize) -> &[f64] {
        &self.vectors[ik][alpha]
    }

    pub fn band_width(&self, alpha: usize) -> f64 {
        let e = &self.energies[alpha];
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = e.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    pub fn mean_energy(&self, alpha: usize) -> f64 {
        let e = &self.energies[alpha];
        e.iter().sum::<f64>() / e.len() as f64
    }

    /// `min_κ (E_1 − E_0)`.
    pub fn gap_01(&self) -> f64 {
        self.energies[0]
            .iter()
            .zip(&self.energies[1])
            .map(|(a, b)| b - a)
            .fold(f64::INFINITY, f64::min)
    }

    /// `E_1 − E_0` at the mesh point closest to the zone edge `κ = -1/4`.
    pub fn edge_gap_01(&self) -> f64 {
        let (ik, _) = self.nearest_kappa(-0.25);
        self.energies[1][ik] - self.energies[0][ik]
    }

    /// `max_κ E_1 − min_κ E_0`: the span of the two lowest folded bands.
    /// For `ε = 0` this is the width Δ of the single-period ground band.
    pub fn ground_band_span(&self) -> f64 {
        let max1 = self.energies[1].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min0 = self.energies[0].iter().copied().fold(f64::INFINITY, f64::min);
        max1 - min0
    }

    /// Index of the mesh point nearest to `kappa` (folded into the reduced
    /// zone) and the offset `kappa_mesh − kappa`.
    pub fn nearest_kappa(&self, kappa: f64) -> (usize, f64) {
        let folded = (kappa + 0.25).rem_euclid(0.5) - 0.25;
        let (ik, d) = self
            .kappa
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut d = k - folded;
                d -= 0.5 * (d / 0.5).round();
                (i, d)
            })
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty mesh");
        (ik, d)
    }

    /// Writes `kappa,E_0,E_1,...` with a commented header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# field-free bands: hbar={} eps={} A={} cutoff={}",
            self.params.hbar, self.params.eps, self.params.amplitude, self.cutoff
        )?;
        let header: Vec<String> = std::iter::once("kappa".to_string())
            .chain((0..self.n_bands()).map(|a| format!("E_{a}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (ik, k) in self.kappa.iter().enumerate() {
            let mut row = format!("{k:.10e}");
            for a in 0..self.n_bands() {
                row.push_str(&format!(",{:.12e}", self.energies[a][ik]));
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    }
}

/// A Bloch state sampled on a grid.
#[derive(Debug, Clone)]
pub struct BlochWave {
    /// Mesh quasimomentum actually used.
    pub kappa: f64,
    /// `kappa − requested kappa` after snapping to the mesh.
    pub offset: f64,
    pub energy: f64,
    /// Unit norm on the grid.
    pub values: Vec<Complex64>,
}

/// Samples `χ_{α,κ}(x)` on `grid`, keeping only plane waves below the grid
/// Nyquist wavenumber.
pub fn bloch_state_on_grid(table: &BandTable, alpha: usize, kappa: f64, grid: &SpatialGrid) -> Result<BlochWave> {
    if alpha >= table.n_bands() {
        return Err(Error::InvalidParameter(format!(
            "band {alpha} not in table of {} bands",
            table.n_bands()
        )));
    }
    let (ik, offset) = table.nearest_kappa(kappa);
    let k0 = table.kappa[ik];
    let coeffs = table.coefficients(alpha, ik);
    let m = table.cutoff as i64;
    let k_nyq = grid.k_nyquist();
    let terms: Vec<(f64, f64)> = coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| (k0 + 0.5 * (i as i64 - m) as f64, c))
        .filter(|(k, c)| k.abs() < k_nyq * (1.0 - 1e-12) && *c != 0.0)
        .collect();
    let mut values: Vec<Complex64> = (0..grid.n_points())
        .map(|j| {
            let x = grid.x(j);
            terms
                .iter()
                .map(|&(k, c)| Complex64::from_polar(c, k * x))
                .sum()
        })
        .collect();
    let norm = (values.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.dx()).sqrt();
    values.iter_mut().for_each(|z| *z /= norm);
    Ok(BlochWave {
        kappa: k0,
        offset,
        energy: table.energies[alpha][ik],
        values,
    })
}

/// Bloch time and the two Bloch-Zener periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeScales {
    pub bloch: f64,
    /// `T_1 = πħ/(d|F|)`, half the Bloch time.
    pub t1: f64,
    /// `T_2 = 2πħ/(Ē_1 − Ē_0)`.
    pub t2: f64,
}

impl TimeScales {
    pub fn ratio(&self) -> f64 {
        self.t1 / self.t2
    }
}

pub fn time_scales(table: &BandTable, params: &ScaledParams) -> Result<TimeScales> {
    let bloch = params.bloch_time()?;
    let split = table.mean_energy(1) - table.mean_energy(0);
    if !(split > 0.0) {
        return Err(Error::InvalidParameter(
            "miniband offsets are degenerate".into(),
        ));
    }
    Ok(TimeScales {
        bloch,
        t1: 0.5 * bloch,
        t2: TAU * params.hbar / split,
    })
}

/// `T_1/T_2 = (Ē_1 − Ē_0)/(2d|F|)`.
pub fn commensurability_ratio(table: &BandTable, force: f64) -> f64 {
    (table.mean_energy(1) - table.mean_energy(0)) / (2.0 * LATTICE_PERIOD * force.abs())
}

/// Finds `ε` in `bracket` with `T_1/T_2 = target` to within `1e-4` by
/// bisection. The ratio must be monotone on the bracket.
pub fn find_commensurate_eps(template: &BlochProblem, target: f64, bracket: (f64, f64)) -> Result<f64> {
    let (lo, hi) = bracket;
    let fail = |reason: &str| Error::NoCommensurability {
        lo,
        hi,
        reason: reason.to_string(),
    };
    if !(hi > lo) {
        return Err(fail("empty bracket"));
    }
    let force = template.params.force;
    if force == 0.0 {
        return Err(Error::InvalidParameter("F = 0 has no Bloch time".into()));
    }
    let ratio = |eps: f64| -> Result<f64> {
        let table = solve_bands(&template.clone().with_eps(eps), 2)?;
        Ok(commensurability_ratio(&table, force) - target)
    };

    const SAMPLES: usize = 9;
    let grid: Vec<f64> = (0..SAMPLES)
        .map(|i| lo + (hi - lo) * i as f64 / (SAMPLES - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&e| ratio(e)).collect::<Result<_>>()?;
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(fail("ratio is not monotone in eps on the bracket"));
    }
    if values[0].signum() == values[SAMPLES - 1].signum() {
        return Err(fail(&format!(
            "ratio - target keeps sign ({:.4} .. {:.4})",
            values[0],
            values[SAMPLES - 1]
        )));
    }
    let i = values
        .windows(2)
        .position(|w| w[0].signum() != w[1].signum())
        .expect("sign change exists");
    let (mut a, mut b) = (grid[i], grid[i + 1]);
    let mut fa = values[i];
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        let fm = ratio(mid)?;
        if fm.abs() < 1e-4 && (b - a) < 1e-6 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
        if b - a < 1e-12 {
            return if fm.abs() < 1e-4 {
                Ok(mid)
            } else {
                Err(Error::Convergence(format!("bisection stalled at residual {fm:e}")))
            };
        }
    }
    Err(Error::Convergence("bisection did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(eps: f64) -> BandTable {
        let p = ScaledParams::default().with_eps(eps);
        solve_bands(&BlochProblem::new(p).with_cutoff(32), 4).unwrap()
    }

    #[test]
    fn folded_bands_touch_at_edge() {
        let t = table(0.0);
        assert!(t.edge_gap_01() < 1e-8);
        assert_eq!(t.kappa()[0], -0.25);
    }

    #[test]
    fn double_period_opens_gap() {
        let t0 = table(0.0);
        let t = table(0.121);
        assert!(t.edge_gap_01() > 0.01);
        let rel = (t.ground_band_span() - t0.ground_band_span()).abs() / t0.ground_band_span();
        assert!(rel < 0.1, "{rel}");
        // two minibands well below band 2
        let band2_min = t.energies(2).iter().copied().fold(f64::INFINITY, f64::min);
        let band1_max = t.energies(1).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(band2_min - band1_max > 5.0 * t.edge_gap_01());
    }

    #[test]
    fn energies_are_even_in_kappa() {
        let t = table(0.0825);
        let n = t.kappa().len();
        for alpha in 0..4 {
            for ik in 1..n {
                // mesh point -1/4 + i/(2n) pairs with -1/4 + (n-i)/(2n)
                let e = t.energies(alpha);
                assert!((e[ik] - e[n - ik]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eigenvectors_phase_fixed() {
        let t = table(0.05);
        for ik in [0, 10, 64] {
            for alpha in 0..2 {
                let c = t.coefficients(alpha, ik);
                let norm: f64 = c.iter().map(|x| x * x).sum();
                assert!((norm - 1.0).abs() < 1e-12);
                let pivot = c.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
                assert!(pivot > 0.0);
            }
        }
    }

    #[test]
    fn rejects_small_inputs() {
        let p = ScaledParams::default();
        assert!(solve_bands(&BlochProblem::new(p).with_cutoff(16), 2).is_err());
        assert!(solve_bands(&BlochProblem::new(p).with_mesh_size(64), 2).is_err());
        assert!(solve_bands(&BlochProblem::new(p).with_cutoff(32), 65).is_err());
    }

    #[test]
    fn time_scale_identities() {
        let p = ScaledParams::default().with_eps(0.0825);
        let t = table(0.0825);
        let ts = time_scales(&t, &p).unwrap();
        assert!((ts.bloch - 2570.9091).abs() < 1e-3);
        assert_eq!(ts.t1 / ts.bloch, 0.5);
        let ratio = (t.mean_energy(1) - t.mean_energy(0)) / (2.0 * LATTICE_PERIOD * p.force);
        assert!((ts.ratio() - ratio).abs() < 1e-12 * ratio);
        assert!(time_scales(&t, &p.with_force(0.0)).is_err());
    }

    #[test]
    fn nearest_kappa_snaps_and_folds() {
        let t = table(0.0);
        let (ik, off) = t.nearest_kappa(0.0);
        assert_eq!(t.kappa()[ik], 0.0);
        assert_eq!(off, 0.0);
        let (ik, _) = t.nearest_kappa(0.25);
        assert_eq!(t.kappa()[ik], -0.25);
    }

    #[test]
    fn csv_header() {
        let t = table(0.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        assert_eq!(lines.next().unwrap(), "kappa,E_0,E_1,E_2,E_3");
        assert_eq!(s.lines().count(), 2 + 128);
    }
}
