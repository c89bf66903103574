//! Closed-form tight-binding moments against direct propagation of the
//! site amplitudes.

use std::f64::consts::TAU;

use bloch_zener::acceptance::tb_relative_error;
use bloch_zener::tight_binding::{coherence_params, dispersion_law, lie_moments, tb_oracle, ForceSegment, TBGaussian, TBModel};
use proptest::prelude::*;

const DELTA: f64 = 0.59214;
const HBAR: f64 = 2.828;
const F0: f64 = 0.0011;

fn profile(pieces: &[(f64, f64)]) -> Vec<ForceSegment> {
    let mut t = 0.0;
    pieces
        .iter()
        .map(|&(duration, force)| {
            let s = ForceSegment { t_start: t, t_end: t + duration, force };
            t += duration;
            s
        })
        .collect()
}

fn force_strategy() -> impl Strategy<Value = f64> {
    (0.0005f64..0.002, any::<bool>()).prop_map(|(f, neg)| if neg { -f } else { f })
}

#[test]
fn constant_field_returns_after_a_bloch_period() {
    let model = TBModel::constant(DELTA, HBAR, F0, 2.0 * HBAR / F0).unwrap();
    let (_, chi) = model.eta_chi(model.bloch_time()).unwrap();
    assert!(chi.norm() < 1e-12);
    let state = TBGaussian::new(5.0).unwrap();
    let (m, m2) = lie_moments(&model, &state, model.bloch_time()).unwrap();
    assert!(m.abs() < 1e-10);
    assert!((m2 - state.second_moment()).abs() < 1e-9);
}

#[test]
fn shuttle_moves_a_fixed_distance_per_period() {
    // one shuttle period: χ = iΔ/(dF₀)
    let model = TBModel::shuttle(DELTA, HBAR, F0, 1).unwrap();
    let (_, chi) = model.eta_chi(model.t_end()).unwrap();
    let expected = DELTA / (TAU * F0);
    assert!((chi.re).abs() < 1e-9 * expected);
    assert!((chi.im.abs() - expected).abs() < 1e-9 * expected, "{chi} vs ±i{expected}");
}

#[test]
fn shuttle_variance_grows_quadratically_in_periods() {
    let state = TBGaussian::new(5.0).unwrap();
    let base = state.second_moment();
    let growth = |n: usize| {
        let model = TBModel::shuttle(DELTA, HBAR, F0, n).unwrap();
        let (m, m2) = lie_moments(&model, &state, model.t_end()).unwrap();
        m2 - m * m - base
    };
    let g1 = growth(1);
    for n in 2..=4 {
        let r = growth(n) / g1;
        assert!((r - (n * n) as f64).abs() < 1e-9 * (n * n) as f64, "n = {n}: {r}");
    }
    let model = TBModel::shuttle(DELTA, HBAR, F0, 2).unwrap();
    let (o1, o2) = tb_oracle(&model, &state, model.t_end()).unwrap().moments();
    let ratio = (o2 - o1 * o1 - base) / g1;
    assert!((ratio - 4.0).abs() < 1e-6, "{ratio}");
}

#[test]
fn leading_order_dispersion_law_converges_with_width() {
    let model = TBModel::shuttle(DELTA, HBAR, F0, 2).unwrap();
    let rel = |sigma_n: f64| {
        let state = TBGaussian::new(sigma_n).unwrap();
        let (m, m2) = lie_moments(&model, &state, model.t_end()).unwrap();
        let growth = (m2 - m * m - state.second_moment()) * TAU * TAU;
        let law = dispersion_law(&model, TAU * sigma_n, 2);
        (growth / law - 1.0).abs()
    };
    let (a, b) = (rel(10.0), rel(20.0));
    assert!(b < 1e-2, "{b}");
    let order = (a / b).log2();
    assert!((order - 2.0).abs() < 0.2, "correction falls off as σ^-{order}");
}

#[test]
fn oracle_conserves_norm_and_stays_inside_its_lattice() {
    let model = TBModel::shuttle(DELTA, HBAR, F0, 3).unwrap();
    let out = tb_oracle(&model, &TBGaussian::new(4.0).unwrap(), model.t_end()).unwrap();
    assert!(out.norm_error < 1e-10);
    assert!((out.norm() - 1.0).abs() < 1e-10);
    assert!(out.edge_weight < 1e-20);
}

#[test]
fn single_site_mean_matches_the_oracle() {
    // for c_0 = 1, K = 0 and ⟨N⟩ stays zero while ⟨N²⟩ = 2|χ|²
    let model = TBModel::single_flip(DELTA, HBAR, F0, 600.0, 2000.0).unwrap();
    let state = TBGaussian::single_site();
    assert_eq!(coherence_params(&state), (0.0, 0.0));
    for t in [300.0, 1200.0, 2000.0] {
        let (_, chi) = model.eta_chi(t).unwrap();
        let (o1, o2) = tb_oracle(&model, &state, t).unwrap().moments();
        assert!(o1.abs() < 1e-9);
        assert!((o2 - 2.0 * chi.norm_sqr()).abs() < 1e-8 * o2.max(1.0), "t {t}: {o2}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn closed_form_matches_oracle_on_random_profiles(
        pieces in prop::collection::vec((100.0f64..800.0, force_strategy()), 1..4),
        sigma in 2.0f64..12.0,
        frac in 0.05f64..1.0,
    ) {
        let model = TBModel::new(DELTA, HBAR, profile(&pieces)).unwrap();
        let t = frac * model.t_end();
        let err = tb_relative_error(&model, &TBGaussian::new(sigma).unwrap(), t).unwrap();
        prop_assert!(err < 1e-8, "relative error {:e}", err);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn variance_growth_is_non_negative(
        pieces in prop::collection::vec((10.0f64..5000.0, force_strategy()), 1..6),
        sigma in 0.5f64..40.0,
        frac in 0.0f64..1.0,
    ) {
        let model = TBModel::new(DELTA, HBAR, profile(&pieces)).unwrap();
        let state = TBGaussian::new(sigma).unwrap();
        let (k, l) = coherence_params(&state);
        let (_, chi) = model.eta_chi(frac * model.t_end()).unwrap();
        let phi = -chi.arg();
        let growth = 2.0 * chi.norm_sqr() * (1.0 - l * (2.0 * phi).cos());
        prop_assert!(growth >= -1e-12);
        let (m, m2) = lie_moments(&model, &state, frac * model.t_end()).unwrap();
        prop_assert!(m.abs() <= 2.0 * k * chi.norm() + 1e-12);
        prop_assert!(m2 - m * m >= state.second_moment() - 1e-9 * m2.max(1.0));
    }

    #[test]
    fn profiles_must_tile(
        pieces in prop::collection::vec((10.0f64..5000.0, force_strategy()), 2..6),
        gap in 0.1f64..10.0,
    ) {
        let mut p = profile(&pieces);
        prop_assert!(TBModel::new(DELTA, HBAR, p.clone()).is_ok());
        p[1].t_start += gap;
        prop_assert!(TBModel::new(DELTA, HBAR, p).is_err());
    }
}
