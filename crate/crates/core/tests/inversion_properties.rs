use proptest::prelude::*;
use rsf_core::cli::observation_times;
use rsf_core::data_io::{add_noise, generate_synthetic};
use rsf_core::inversion::{
    estimate_noise_std, grid_posterior, least_squares_fit, log_likelihood, log_likelihood_from_sse, make_grid,
    metropolis, normalize_posterior, resolve_noise, sse, trapezoid, FitSettings, ForwardModel, GridSettings,
    GridSpacing, McmcSettings, NoiseMode, NoiseModel, ObservationSet, PriorConfig,
};
use rsf_core::ode_solver::{integrate, SolverConfig};
use rsf_core::rsf_model::{Forcing, RsfParams};
use statrs::distribution::{Continuous, Normal};

fn model() -> ForwardModel {
    ForwardModel::default()
}

fn times(n: usize) -> Vec<f64> {
    observation_times(&SolverConfig::default(), Some(n))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn forward_response_matches_default_trajectory() {
    let p = RsfParams::default();
    let traj = integrate(&p, &Forcing::default(), p.steady_state(), &SolverConfig::default()).unwrap();
    let resp = model().response(20.0, &traj.times).unwrap();
    assert_eq!(resp, traj.accelerations());
    assert_eq!(resp, model().response(20.0, &traj.times).unwrap());
}

#[test]
fn sse_cases() {
    let m = model();
    let t = times(1000);
    let clean = m.response(20.0, &t).unwrap();
    let obs = ObservationSet::new(t.clone(), clean.clone()).unwrap();
    assert!(sse(&obs, 20.0, &m).unwrap() < 1e-10 * t.len() as f64);

    let c = 0.003;
    let shifted = ObservationSet::new(t.clone(), clean.iter().map(|a| a + c).collect()).unwrap();
    let s = sse(&shifted, 20.0, &m).unwrap();
    let expected = t.len() as f64 * c * c;
    assert!((s - expected).abs() < 1e-9 * expected, "{s} vs {expected}");

    // continuity sweep
    let noisy = add_noise(&clean, &t, 0.01, 1, 20.0).to_observations().unwrap();
    let base = sse(&noisy, 20.0, &m).unwrap();
    let jumps: Vec<f64> = [1e-1, 1e-3, 1e-5]
        .iter()
        .map(|h| (sse(&noisy, 20.0 + h, &m).unwrap() - base).abs())
        .collect();
    assert!(jumps[0] > jumps[1] && jumps[1] > jumps[2], "{jumps:?}");
    assert!(jumps[2] < 1e-6 * base);
}

#[test]
fn least_squares_edge_cases() {
    let m = model();
    let t = times(500);
    let clean = m.response(20.0, &t).unwrap();
    let obs = ObservationSet::new(t.clone(), clean).unwrap();
    let narrow = PriorConfig::new(19.9, 20.1).unwrap();
    let fit = least_squares_fit(&obs, &narrow, &m, &FitSettings::default()).unwrap();
    assert!(fit.d_c_hat >= 19.9 && fit.d_c_hat <= 20.1);
    assert!((fit.d_c_hat - 20.0).abs() < 0.1);

    // steady forcing never excites the slider: every d_c fits zero data
    let steady = ForwardModel {
        forcing: Forcing::constant(1.0),
        ..model()
    };
    let zeros = ObservationSet::new(t.clone(), vec![0.0; t.len()]).unwrap();
    let bounds = PriorConfig::new(5.0, 50.0).unwrap();
    let fit = least_squares_fit(&zeros, &bounds, &steady, &FitSettings::default()).unwrap();
    assert_eq!(fit.sse, 0.0);
    assert_eq!(fit.d_c_hat, 5.0);
    assert!(fit.boundary_flag && fit.degenerate);
}

#[test]
fn likelihood_factorizes_over_disjoint_sets() {
    let m = model();
    let t = times(400);
    let data = add_noise(&m.response(20.0, &t).unwrap(), &t, 0.01, 4, 20.0);
    let full = data.to_observations().unwrap();
    let (t1, t2) = t.split_at(200);
    let (a1, a2) = full.accels().split_at(200);
    let first = ObservationSet::new(t1.to_vec(), a1.to_vec()).unwrap();
    let second = ObservationSet::new(t2.to_vec(), a2.to_vec()).unwrap();
    let noise = NoiseModel::fixed(0.01);
    for d_c in [12.0, 20.0, 31.0] {
        let whole = log_likelihood(&full, d_c, &noise, &m).unwrap();
        let parts =
            log_likelihood(&first, d_c, &noise, &m).unwrap() + log_likelihood(&second, d_c, &noise, &m).unwrap();
        assert!((whole - parts).abs() <= 1e-9 * whole.abs(), "{whole} vs {parts}");
    }
}

#[test]
fn grid_mode_agrees_with_least_squares() {
    let m = model();
    let t = times(2000);
    let clean = m.response(20.0, &t).unwrap();
    let obs = add_noise(&clean, &t, 0.01 * max_abs(&clean), 2, 20.0)
        .to_observations()
        .unwrap();
    let prior = PriorConfig::new(5.0, 50.0).unwrap();
    let settings = GridSettings::default();
    let sigma = 0.01 * max_abs(&clean);
    let post = grid_posterior(&obs, prior, &settings, &NoiseModel::fixed(sigma), &m).unwrap();
    assert!((trapezoid(&post.grid, &post.normalized_density) - 1.0).abs() < 1e-8);
    let k = (0..post.grid.len())
        .max_by(|&i, &j| post.log_likelihoods[i].total_cmp(&post.log_likelihoods[j]))
        .unwrap();
    let fit = least_squares_fit(&obs, &prior, &m, &FitSettings::default()).unwrap();
    let lo = post.grid[k.saturating_sub(1)];
    let hi = post.grid[(k + 1).min(post.grid.len() - 1)];
    assert!(
        fit.d_c_hat >= lo && fit.d_c_hat <= hi,
        "{} not in [{lo}, {hi}]",
        fit.d_c_hat
    );
}

#[test]
fn near_gaussian_interval_matches_moments() {
    let m = model();
    let t = times(5000);
    let clean = m.response(20.0, &t).unwrap();
    let sigma = 1e-3 * max_abs(&clean);
    let obs = add_noise(&clean, &t, sigma, 8, 20.0).to_observations().unwrap();
    let prior = PriorConfig::new(15.0, 25.0).unwrap();
    let settings = GridSettings {
        n_grid: 200,
        spacing: GridSpacing::Linear,
    };
    let s = grid_posterior(&obs, prior, &settings, &NoiseModel::fixed(sigma), &m)
        .unwrap()
        .summary(0.95);
    let half = 1.96 * s.std;
    for (got, want) in [
        (s.credible_interval.0, s.mean - half),
        (s.credible_interval.1, s.mean + half),
    ] {
        assert!((got - want).abs() <= 0.05 * half, "{got} vs {want} (half-width {half})");
    }
}

#[test]
fn estimated_noise_is_close_to_truth() {
    let m = model();
    let t = times(1000);
    let data = generate_synthetic(20.0, &m, &t, 0.05, 6).unwrap();
    let obs = data.to_observations().unwrap();
    let prior = PriorConfig::new(5.0, 50.0).unwrap();
    let fit = least_squares_fit(&obs, &prior, &m, &FitSettings::default()).unwrap();
    let estimated = NoiseModel {
        sigma_noise: f64::NAN,
        mode: NoiseMode::Estimated,
    };
    let sigma_hat = resolve_noise(&obs, &estimated, fit.d_c_hat, &m).unwrap();
    assert!((0.04..=0.06).contains(&sigma_hat), "{sigma_hat}");
    assert_eq!(sigma_hat, estimate_noise_std(fit.sse, obs.len()).unwrap());
}

#[test]
fn synthetic_generation_contract() {
    let m = model();
    let t = observation_times(&SolverConfig::default(), Some(10_000));
    let clean = m.response(20.0, &t).unwrap();
    let exact = generate_synthetic(20.0, &m, &t, 0.0, 1).unwrap();
    assert_eq!(exact.values, clean);
    let a = generate_synthetic(20.0, &m, &t, 0.02, 9).unwrap();
    let b = generate_synthetic(20.0, &m, &t, 0.02, 9).unwrap();
    assert_eq!(a, b);
    let resid: Vec<f64> = a.values.iter().zip(&clean).map(|(x, c)| x - c).collect();
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std - 0.02).abs() <= 0.03 * 0.02, "{std}");
}

fn gaussian_log_sum(resid: &[f64], sigma: f64) -> f64 {
    let normal = Normal::new(0.0, sigma).unwrap();
    resid.iter().map(|r| normal.ln_pdf(*r)).sum()
}

proptest! {
    #[test]
    fn log_likelihood_matches_pointwise_sum(
        resid in prop::collection::vec(-5.0f64..5.0, 2..200),
        sigma in 0.01f64..10.0,
    ) {
        let s: f64 = resid.iter().map(|r| r * r).sum();
        let ours = log_likelihood_from_sse(s, resid.len(), sigma);
        let oracle = gaussian_log_sum(&resid, sigma);
        prop_assert!((ours - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{} vs {}", ours, oracle);
    }

    #[test]
    fn normalized_density_integrates_to_one(
        sses in prop::collection::vec(0.0f64..1e6, 8..120),
        height in 1e-6f64..1e6,
    ) {
        let prior = PriorConfig::new(5.0, 50.0).unwrap();
        let grid = make_grid(&prior, sses.len(), GridSpacing::Log);
        let lls: Vec<Option<f64>> = sses.iter().map(|s| Some(log_likelihood_from_sse(*s, 100, 0.01))).collect();
        let post = normalize_posterior(&grid, &lls, prior, prior.density(), 0.01).unwrap();
        prop_assert!((trapezoid(&post.grid, &post.normalized_density) - 1.0).abs() <= 1e-8);
        prop_assert!(post.normalized_density.iter().all(|d| d.is_finite() && *d >= 0.0));
        let scaled = normalize_posterior(&grid, &lls, prior, height, 0.01).unwrap();
        prop_assert_eq!(scaled.normalized_density, post.normalized_density);
    }

    #[test]
    fn chain_stays_in_support(seed in any::<u64>(), centre in 6.0f64..49.0) {
        let prior = PriorConfig::new(5.0, 50.0).unwrap();
        let settings = McmcSettings::defaults_for(&prior, 400, seed);
        let chain = metropolis(|d| Ok(-0.5 * ((d - centre) / 3.0).powi(2)), &prior, &settings).unwrap();
        prop_assert!(chain.samples.iter().all(|x| prior.contains(*x)));
        prop_assert!(chain.acceptance_rate > 0.0 && chain.acceptance_rate < 1.0);
    }
}
