//! Observables on synthetic data with known answers.

use std::f64::consts::TAU;

use bloch_zener::model::DOUBLE_PERIOD;
use bloch_zener::observables::{
    autocorrelation_period, band_occupations, fit_occupation_law, fringe_fit, interval_probability, mean_momentum,
    quasimomentum_centroid, state_moments, BandProjector,
};
use bloch_zener::{make_gaussian, solve_bands, BlochProblem, ScaledParams, SpatialGrid, WaveFunction};
use num_complex::Complex64;
use proptest::prelude::*;

fn grid() -> SpatialGrid {
    SpatialGrid::symmetric(4096, 256).unwrap()
}

#[test]
fn whole_domain_holds_the_norm() {
    let grid = grid();
    let psi = make_gaussian(&grid, 60.0, 100.0, 0.0).unwrap();
    let p = interval_probability(&psi, grid.x_min(), grid.x_max()).unwrap();
    assert!((p - 1.0).abs() < 1e-12);
    assert!(interval_probability(&psi, -10.0, grid.x_max() + 1.0).is_err());
}

#[test]
fn gaussian_moments_and_momenta() {
    let grid = grid();
    let kappa = 0.1;
    let psi = make_gaussian(&grid, 60.0, -40.0, kappa).unwrap();
    let (m, v) = state_moments(&psi);
    assert!((m + 40.0).abs() < 1e-9);
    assert!((v - 900.0).abs() < 1e-6);
    assert!((mean_momentum(&psi, 2.828) - 2.828 * kappa).abs() < 1e-9);
    assert!((quasimomentum_centroid(&psi, DOUBLE_PERIOD) - kappa).abs() < 1e-9);
}

#[test]
fn projector_rejects_a_foreign_mesh() {
    let table = solve_bands(&BlochProblem::new(ScaledParams::default().with_eps(0.0825)), 2).unwrap();
    assert!(BandProjector::new(table, &grid()).is_err());
}

#[test]
fn occupation_law_recovers_its_frequency() {
    let values: Vec<f64> = (0..40).map(|n| 0.6 + 0.3 * (TAU * 0.137 * n as f64 + 0.4).cos()).collect();
    let fit = fit_occupation_law(&values).unwrap();
    assert!((fit.nu - 0.137).abs() < 1e-6, "{}", fit.nu);
    assert!((fit.x - 0.6).abs() < 1e-6 && (fit.y - 0.3).abs() < 1e-6);
    assert!(fit.rms < 1e-9);
}

#[test]
fn autocorrelation_finds_a_sine_period() {
    let dt = 0.25;
    let series: Vec<f64> = (0..2000).map(|i| (TAU * i as f64 * dt / 17.3).sin() + 0.2).collect();
    let period = autocorrelation_period(dt, &series).unwrap();
    assert!((period / 17.3 - 1.0).abs() < 0.01, "{period}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interval_probability_is_additive(
        x0 in -400.0f64..400.0,
        w in 20.0f64..100.0,
        cuts in prop::collection::vec(-1500.0f64..1500.0, 3),
    ) {
        let psi = make_gaussian(&grid(), w, x0, 0.0).unwrap();
        let mut c = cuts.clone();
        c.sort_by(f64::total_cmp);
        prop_assume!(c[1] - c[0] > 1e-6 && c[2] - c[1] > 1e-6);
        let ab = interval_probability(&psi, c[0], c[1]).unwrap();
        let bc = interval_probability(&psi, c[1], c[2]).unwrap();
        let ac = interval_probability(&psi, c[0], c[2]).unwrap();
        prop_assert!((ab + bc - ac).abs() < 1e-12);
        prop_assert!(ab >= -1e-15 && ac <= 1.0 + 1e-12);
    }

    #[test]
    fn fringe_fit_recovers_synthetic_fringes(
        period in 0.03f64..0.12,
        phase in -3.0f64..3.0,
        offset in 0.3f64..0.6,
        amp in 0.05f64..0.3,
    ) {
        let pts: Vec<(f64, f64)> = (0..32)
            .map(|i| {
                let v = 0.21 * i as f64 / 31.0;
                (v, offset + amp * (TAU * v / period + phase).cos())
            })
            .collect();
        let fit = fringe_fit(&pts).unwrap();
        prop_assert!((fit.period / period - 1.0).abs() < 1e-4, "period {} vs {}", fit.period, period);
        prop_assert!((fit.amplitude - amp).abs() < 1e-6);
        prop_assert!(fit.rms_residual < 1e-8);
        prop_assert!(fit.contrast <= 2.0 * fit.amplitude + 1e-12);
    }

    #[test]
    fn band_occupations_never_exceed_the_norm(
        x0 in -300.0f64..300.0,
        w in 10.0f64..80.0,
        kappa in -0.5f64..0.5,
        phase in 0.0f64..TAU,
    ) {
        let grid = grid();
        let table = solve_bands(&BlochProblem::for_grid(ScaledParams::default().with_eps(0.0825), &grid), 2).unwrap();
        let mut psi = make_gaussian(&grid, w, x0, kappa).unwrap();
        let rot = Complex64::from_polar(1.0, phase);
        psi.amplitudes_mut().iter_mut().for_each(|z| *z *= rot);
        let psi = WaveFunction::from_amplitudes(grid, psi.amplitudes().to_vec()).unwrap();
        let (p0, p1) = band_occupations(&psi, &table).unwrap();
        prop_assert!(p0 >= 0.0 && p1 >= 0.0);
        prop_assert!(p0 + p1 <= 1.0 + 1e-10, "p0 + p1 = {}", p0 + p1);
    }
}
