use mlpf::dynamics::LevelGrid;
use mlpf::filtering::{run_coupled_pf, run_pf, FilterStreams, ResamplePolicy};
use mlpf::girsanov::{run_coupled_pf_com, SpringConfig};
use mlpf::harness::data::synthesize_data;
use mlpf::reference::run_kalman;
use mlpf::resampling::Coupler;
use mlpf::rng::{Purpose, RandomStream};
use mlpf::{ModelSpec, Observation};

fn ou_data(t: f64, seed: u64) -> Vec<Observation> {
    synthesize_data(
        &ModelSpec::ou(),
        t,
        0.5,
        10,
        &RandomStream::from_seed(seed, Purpose::Data),
    )
    .unwrap()
    .observations
}

fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn fine_level_filter_tracks_the_kalman_filter() {
    let model = ModelSpec::ou();
    let obs = ou_data(50.0, 21);
    let kalman = run_kalman(&model, &obs).unwrap();
    let grid = LevelGrid::for_model(&model, 6, 0.5).unwrap();
    let policy = ResamplePolicy::for_model(model.kind, Coupler::Wasserstein);
    let out = run_pf(
        &model,
        &obs,
        &grid,
        1 << 14,
        &policy,
        &|x| x,
        &FilterStreams::from_seed(5),
    )
    .unwrap();
    let err: f64 = out
        .filter_estimates()
        .iter()
        .zip(&kalman)
        .map(|(e, k)| (e - k.mean).abs())
        .sum::<f64>()
        / obs.len() as f64;
    assert!(err <= 0.05, "time-averaged error {err}");
}

/// The mean coupled difference equals the difference of the mean
/// single-level estimates at both levels.
fn check_difference_is_unbiased(
    model: &ModelSpec,
    obs: &[Observation],
    level: u32,
    com: bool,
    coupler: Coupler,
) {
    let grid = LevelGrid::for_model(model, level, 0.5).unwrap();
    let coarse = grid.coarser().unwrap();
    let policy = ResamplePolicy::for_model(model.kind, coupler);
    let spring = SpringConfig::for_model(model);
    let (n, repeats) = (256, 200);
    let mut diffs = Vec::new();
    let mut singles = Vec::new();
    for r in 0..repeats {
        let streams = FilterStreams::from_seed(1000 + r);
        let out = if com {
            run_coupled_pf_com(model, obs, &grid, n, &policy, &|x| x, &spring, &streams).unwrap()
        } else {
            run_coupled_pf(model, obs, &grid, n, &policy, &|x| x, &streams).unwrap()
        };
        diffs.push(*out.difference_filters().unwrap().last().unwrap());
        let f = run_pf(
            model,
            obs,
            &grid,
            n,
            &policy,
            &|x| x,
            &FilterStreams::from_seed(5000 + r),
        )
        .unwrap();
        let c = run_pf(
            model,
            obs,
            &coarse,
            n,
            &policy,
            &|x| x,
            &FilterStreams::from_seed(9000 + r),
        )
        .unwrap();
        singles.push(f.filter_estimates().last().unwrap() - c.filter_estimates().last().unwrap());
    }
    let (md, sd) = mean_and_se(&diffs);
    let (ms, ss) = mean_and_se(&singles);
    let se = (sd * sd + ss * ss).sqrt();
    // both sides also carry O(1/N) self-normalisation bias
    assert!((md - ms).abs() < 4.0 * se + 2e-3, "{md} vs {ms} (se {se})");
}

#[test]
fn coupled_differences_match_independent_filters() {
    let obs = ou_data(5.0, 3);
    check_difference_is_unbiased(&ModelSpec::ou(), &obs, 1, false, Coupler::Wasserstein);
    check_difference_is_unbiased(&ModelSpec::ou(), &obs, 1, false, Coupler::MaximalIndex);
}

#[test]
fn spring_coupled_differences_match_independent_filters() {
    let model = ModelSpec::double_well();
    let obs = synthesize_data(
        &model,
        3.0,
        0.5,
        8,
        &RandomStream::from_seed(4, Purpose::Data),
    )
    .unwrap()
    .observations;
    check_difference_is_unbiased(&model, &obs, 1, true, Coupler::Wasserstein);
}
