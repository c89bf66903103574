//! Single-band tight-binding model in a time-dependent tilt.
//!
//! `H(t) = −Δ/4 Σ (|n+1⟩⟨n| + |n−1⟩⟨n|) + d F(t) Σ n |n⟩⟨n|`
//!
//! For real, mirror-symmetric initial states the site moments follow from
//! two numbers: `η_t = ∫ dF/ħ` and `χ_t = −Δ/(4ħ) ∫ e^{−iη}`, written as
//! `χ_t = |χ_t| e^{−iφ_t}`. [`tb_oracle`] integrates the Schrödinger
//! equation directly and serves as a check of [`lie_moments`].

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::LATTICE_PERIOD;

/// A constant-force interval of the tilt profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TBModel {
    pub delta: f64,
    pub hbar: f64,
    /// Lattice constant, `2π` in scaled units.
    pub d: f64,
    /// Odd number of sites centred at 0; chosen per call when `None`.
    pub n_sites: Option<usize>,
    profile: Vec<ForceSegment>,
}

impl TBModel {
    /// Builds a model from segments that must tile `[0, t_end]`.
    pub fn new(delta: f64, hbar: f64, profile: Vec<ForceSegment>) -> Result<Self> {
        if !(delta > 0.0) || !(hbar > 0.0) {
            return Err(Error::InvalidParameter("Δ and ħ must be positive".into()));
        }
        if profile.is_empty() || profile[0].t_start != 0.0 {
            return Err(Error::InvalidSchedule("force profile must start at t = 0".into()));
        }
        for w in profile.windows(2) {
            if (w[0].t_end - w[1].t_start).abs() > 1e-9 * w[0].t_end.abs().max(1.0) {
                return Err(Error::InvalidSchedule("force profile has a gap".into()));
            }
        }
        if profile.iter().any(|s| !(s.t_end > s.t_start) || !s.force.is_finite()) {
            return Err(Error::InvalidSchedule("empty or non-finite force segment".into()));
        }
        Ok(Self { delta, hbar, d: LATTICE_PERIOD, n_sites: None, profile })
    }

    fn bloch_time_of(hbar: f64, f0: f64) -> f64 {
        std::f64::consts::TAU * hbar / (LATTICE_PERIOD * f0.abs())
    }

    /// Constant force `f0` over `[0, t_end]`.
    pub fn constant(delta: f64, hbar: f64, f0: f64, t_end: f64) -> Result<Self> {
        Self::new(delta, hbar, vec![ForceSegment { t_start: 0.0, t_end, force: f0 }])
    }

    /// Force `f0` until `t_flip`, then `−f0` until `t_end`.
    pub fn single_flip(delta: f64, hbar: f64, f0: f64, t_flip: f64, t_end: f64) -> Result<Self> {
        Self::new(
            delta,
            hbar,
            vec![
                ForceSegment { t_start: 0.0, t_end: t_flip, force: f0 },
                ForceSegment { t_start: t_flip, t_end, force: -f0 },
            ],
        )
    }

    /// Bloch shuttle: the sign of `f0` flips every half Bloch period.
    pub fn shuttle(delta: f64, hbar: f64, f0: f64, n_periods: usize) -> Result<Self> {
        if f0 == 0.0 {
            return Err(Error::InvalidParameter("shuttle needs F ≠ 0".into()));
        }
        let half = 0.5 * Self::bloch_time_of(hbar, f0);
        let profile = (0..2 * n_periods.max(1))
            .map(|i| ForceSegment {
                t_start: half * i as f64,
                t_end: half * (i + 1) as f64,
                force: if i % 2 == 0 { f0 } else { -f0 },
            })
            .collect();
        Self::new(delta, hbar, profile)
    }

    pub fn with_n_sites(mut self, n: usize) -> Self {
        self.n_sites = Some(n);
        self
    }

    pub fn profile(&self) -> &[ForceSegment] {
        &self.profile
    }

    pub fn t_end(&self) -> f64 {
        self.profile.last().map_or(0.0, |s| s.t_end)
    }

    /// `T_B` of the first segment's force.
    pub fn bloch_time(&self) -> f64 {
        Self::bloch_time_of(self.hbar, self.profile[0].force)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_end() * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::InvalidParameter(format!(
                "time {t} outside the force profile [0, {}]",
                self.t_end()
            )));
        }
        Ok(())
    }

    /// `(η_t, χ_t)` from the closed-form segment integrals.
    pub fn eta_chi(&self, t: f64) -> Result<(f64, Complex64)> {
        self.check_time(t)?;
        let mut eta = 0.0;
        let mut integral = Complex64::new(0.0, 0.0);
        for seg in &self.profile {
            if t <= seg.t_start {
                break;
            }
            let tau = t.min(seg.t_end) - seg.t_start;
            let rate = self.d * seg.force / self.hbar;
            let theta = rate * tau;
            let piece = if rate == 0.0 {
                Complex64::new(tau, 0.0)
            } else {
                // ∫_0^τ e^{−i rate s} ds = i (e^{−iθ} − 1) / rate
                Complex64::i() * (Complex64::from_polar(1.0, -theta) - 1.0) / rate
            };
            integral += Complex64::from_polar(1.0, -eta) * piece;
            eta += theta;
        }
        Ok((eta, -self.delta / (4.0 * self.hbar) * integral))
    }
}

/// Real site amplitudes `c_n` on sites `−h..=h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TBGaussian {
    /// Width parameter; `NaN` for states not built as Gaussians.
    pub sigma_n: f64,
    coeffs: Vec<f64>,
}

impl TBGaussian {
    /// `c_n ∝ e^{−n²/4σ_n²}`, normalized, truncated where `c_n < 1e−17`.
    pub fn new(sigma_n: f64) -> Result<Self> {
        if !(sigma_n > 0.0) {
            return Err(Error::InvalidParameter("σ_n must be positive".into()));
        }
        let h = (12.0 * sigma_n).ceil().max(2.0) as i64;
        let mut coeffs: Vec<f64> =
            (-h..=h).map(|n| (-((n * n) as f64) / (4.0 * sigma_n * sigma_n)).exp()).collect();
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        coeffs.iter_mut().for_each(|c| *c /= norm);
        Ok(Self { sigma_n, coeffs })
    }

    /// `c_0 = 1`.
    pub fn single_site() -> Self {
        Self { sigma_n: f64::NAN, coeffs: vec![1.0] }
    }

    /// Arbitrary real amplitudes centred on site 0 (odd length), normalized.
    pub fn from_coefficients(mut coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() % 2 == 0 {
            return Err(Error::InvalidParameter("need an odd number of sites".into()));
        }
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter("zero or non-finite state".into()));
        }
        coeffs.iter_mut().for_each(|c| *c /= norm);
        Ok(Self { sigma_n: f64::NAN, coeffs })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Largest occupied site index `h` (sites run over `−h..=h`).
    pub fn half_width(&self) -> usize {
        self.coeffs.len() / 2
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.coeffs.len();
        (0..n / 2).all(|i| (self.coeffs[i] - self.coeffs[n - 1 - i]).abs() <= 1e-14)
    }

    /// `⟨N²⟩` of the state.
    pub fn second_moment(&self) -> f64 {
        let h = self.half_width() as f64;
        self.coeffs.iter().enumerate().map(|(i, c)| (i as f64 - h).powi(2) * c * c).sum()
    }
}

/// `K = Σ c_{n−1} c_n` and `L = Σ c_{n−2} c_n`.
pub fn coherence_params(state: &TBGaussian) -> (f64, f64) {
    let c = state.coefficients();
    let lag = |k: usize| c.iter().skip(k).zip(c).map(|(a, b)| a * b).sum::<f64>();
    (lag(1), lag(2))
}

/// `(⟨N⟩_t, ⟨N²⟩_t)` from the exact Lie-algebraic expressions.
pub fn lie_moments(model: &TBModel, state: &TBGaussian, t: f64) -> Result<(f64, f64)> {
    if !state.is_symmetric() {
        return Err(Error::InvalidParameter("state must be real and mirror symmetric".into()));
    }
    let (k, l) = coherence_params(state);
    let (_, chi) = model.eta_chi(t)?;
    let (abs, phi) = (chi.norm(), -chi.arg());
    let mean = 2.0 * k * abs * phi.sin();
    let second = state.second_moment() + 2.0 * abs * abs * (1.0 - l * (2.0 * phi).cos());
    Ok((mean, second))
}

/// Site amplitudes produced by [`tb_oracle`].
#[derive(Debug, Clone)]
pub struct TBOracleState {
    /// Index of site 0 in `coeffs`.
    pub center: usize,
    pub coeffs: Vec<Complex64>,
    /// `|Σ|c_n|² − 1|` at the end of the run.
    pub norm_error: f64,
    /// Probability found in the outermost 5% of sites on either side.
    pub edge_weight: f64,
}

impl TBOracleState {
    pub fn moments(&self) -> (f64, f64) {
        let c = self.center as f64;
        self.coeffs.iter().enumerate().fold((0.0, 0.0), |(m1, m2), (i, z)| {
            let n = i as f64 - c;
            let p = z.norm_sqr();
            (m1 + n * p, m2 + n * n * p)
        })
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Sites on either side of the origin needed to hold the evolution up to
/// `t`: the ballistic light cone `Δt/2ħ` plus `20σ_n`.
fn default_half_sites(model: &TBModel, state: &TBGaussian, t: f64) -> usize {
    let sigma = if state.sigma_n.is_finite() { state.sigma_n } else { 1.0 };
    let cone = model.delta * t / (2.0 * model.hbar);
    ((cone + 20.0 * sigma + 60.0).ceil() as usize).max(state.half_width() + 60)
}

/// Applies `H` (without the `1/ħ`) to `v` on sites `−h..=h`.
fn apply_h(delta: f64, tilt: f64, h: usize, v: &[Complex64], out: &mut [Complex64]) {
    let hop = -0.25 * delta;
    let n = v.len();
    for i in 0..n {
        let mut acc = v[i] * (tilt * (i as f64 - h as f64));
        if i > 0 {
            acc += v[i - 1] * hop;
        }
        if i + 1 < n {
            acc += v[i + 1] * hop;
        }
        out[i] = acc;
    }
}

/// Direct propagation of the site amplitudes by a Taylor series of the
/// propagator on substeps with `‖H‖τ/ħ ≤ 1/2`, so each series converges
/// to machine precision.
pub fn tb_oracle(model: &TBModel, state: &TBGaussian, t: f64) -> Result<TBOracleState> {
    model.check_time(t)?;
    let half = match model.n_sites {
        Some(n) => {
            if n % 2 == 0 || n / 2 < state.half_width() {
                return Err(Error::InvalidParameter(format!("n_sites {n} must be odd and hold the state")));
            }
            n / 2
        }
        None => default_half_sites(model, state, t),
    };
    if 2 * half + 1 > 4097 {
        return Err(Error::InvalidParameter(format!(
            "oracle needs {} sites, above the 4096 limit",
            2 * half + 1
        )));
    }
    let n = 2 * half + 1;
    let mut psi = vec![Complex64::new(0.0, 0.0); n];
    let h0 = state.half_width();
    for (i, c) in state.coefficients().iter().enumerate() {
        psi[half - h0 + i] = Complex64::new(*c, 0.0);
    }
    let mut term = vec![Complex64::new(0.0, 0.0); n];
    let mut next = vec![Complex64::new(0.0, 0.0); n];
    let mut acc = vec![Complex64::new(0.0, 0.0); n];

    for seg in model.profile() {
        if t <= seg.t_start {
            break;
        }
        let span = t.min(seg.t_end) - seg.t_start;
        let tilt = model.d * seg.force;
        let h_norm = 0.5 * model.delta + tilt.abs() * half as f64;
        let substeps = ((2.0 * h_norm * span / model.hbar).ceil() as usize).max(1);
        let tau = span / substeps as f64;
        let factor = Complex64::new(0.0, -tau / model.hbar);
        for _ in 0..substeps {
            term.copy_from_slice(&psi);
            acc.copy_from_slice(&psi);
            let mut converged = false;
            for k in 1..=60 {
                apply_h(model.delta, tilt, half, &term, &mut next);
                let scale = factor / k as f64;
                let mut size = 0.0;
                for (tn, nx) in term.iter_mut().zip(&next) {
                    *tn = nx * scale;
                    size += tn.norm_sqr();
                }
                for (a, tn) in acc.iter_mut().zip(&term) {
                    *a += tn;
                }
                if size < 1e-36 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Convergence("Taylor series did not converge in 60 terms".into()));
            }
            psi.copy_from_slice(&acc);
        }
    }

    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    let edge = (n / 20).max(1);
    let edge_weight = psi[..edge].iter().chain(&psi[n - edge..]).map(|z| z.norm_sqr()).sum();
    let out = TBOracleState { center: half, coeffs: psi, norm_error: (norm - 1.0).abs(), edge_weight };
    if out.norm_error > 1e-10 {
        return Err(Error::Convergence(format!("oracle norm drifted by {:e}", out.norm_error)));
    }
    if out.edge_weight > 1e-20 {
        return Err(Error::Convergence(format!(
            "probability {:e} reached the lattice edge; increase n_sites",
            out.edge_weight
        )));
    }
    Ok(out)
}

/// Leading-order growth of the position variance after `n_periods` shuttle
/// periods, `Δ²d⁴n²/(8F₀²σ_x⁴)`, with `F₀` the first segment's force.
pub fn dispersion_law(model: &TBModel, sigma_x: f64, n_periods: usize) -> f64 {
    let f0 = model.profile()[0].force;
    let n = n_periods as f64;
    model.delta.powi(2) * model.d.powi(4) * n * n / (8.0 * f0 * f0 * sigma_x.powi(4))
}
