use mscf_core::cashflow::{
    bootstrap_band, complete_data_cashflow, estimate_cashflow, mc_standard_error, CashFlowOptions,
    Method,
};
use mscf_core::model::{JumpConvention, Model};
use mscf_core::simulate::{
    read_dataset_file, simulate_dataset, simulate_paths, write_dataset_file, Censoring, Jump,
    StatePath,
};
use mscf_core::timegrid::EventGrid;

const CENSORING: Censoring = Censoring::Uniform { lo: 20.0, hi: 80.0 };

fn model() -> Model {
    Model::freepolicy6().unwrap()
}

#[test]
fn file_round_trip_preserves_estimates() {
    let model = model();
    let ds = simulate_dataset(&model, 2000, 21, CENSORING).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    write_dataset_file(&ds, &model.states, &path).unwrap();
    let back = read_dataset_file(&path, &model.states).unwrap();
    let opts = CashFlowOptions::default();
    for method in [Method::Saj, Method::Cmaj { aux_seed: 3 }, Method::TwoDim] {
        let a = estimate_cashflow(&ds, &model, method, &opts).unwrap();
        let b = estimate_cashflow(&back, &model, method, &opts).unwrap();
        assert_eq!(a, b, "{method}");
    }
}

#[test]
fn censored_fraction_matches_oracle() {
    let model = model();
    let ds = simulate_dataset(&model, 2000, 22, CENSORING).unwrap();
    let observed = ds.iter().filter(|o| !o.absorbed).count() as f64 / ds.len() as f64;
    // P(R < eta) given the path, with R ~ Unif(20, 80)
    let paths = simulate_paths(&model, 100_000, 23).unwrap();
    let oracle = paths
        .iter()
        .map(|p| match p.absorption {
            Some(eta) => ((eta - 20.0) / 60.0).clamp(0.0, 1.0),
            None => 1.0,
        })
        .sum::<f64>()
        / paths.len() as f64;
    assert!((observed - oracle).abs() < 0.02, "{observed} vs {oracle}");
}

#[test]
fn duration_bump_raises_free_policy_surrender() {
    let model = model();
    let (fp, surr) = (model.state("2").unwrap(), model.state("5").unwrap());
    let paths = simulate_paths(&model, 20_000, 24).unwrap();
    // occurrence and exposure for t < 25, split at the duration window [0.5, 2.5)
    let (mut exp_in, mut exp_out, mut n_in, mut n_out) = (0.0, 0.0, 0.0, 0.0);
    for p in &paths {
        let Some(pos) = p.jumps.iter().position(|j| j.to == fp) else {
            continue;
        };
        let entry = p.jumps[pos].time;
        let exit = p.jumps.get(pos + 1).map_or(p.horizon, |j| j.time);
        let end = exit.min(25.0);
        if end <= entry {
            continue;
        }
        let w0 = (entry + 0.5).min(end);
        let w1 = (entry + 2.5).min(end);
        exp_in += w1 - w0;
        exp_out += (w0 - entry) + (end - w1);
        if let Some(j) = p.jumps.get(pos + 1) {
            if j.to == surr && j.time < 25.0 {
                let u = j.time - entry;
                if (0.5..2.5).contains(&u) {
                    n_in += 1.0;
                } else {
                    n_out += 1.0;
                }
            }
        }
    }
    let (r_in, r_out) = (n_in / exp_in, n_out / exp_out);
    assert!(r_in > r_out);
    assert!((r_in - 0.25).abs() < 3.0 * n_in.sqrt() / exp_in, "{r_in}");
    assert!(
        (r_out - 0.05).abs() < 3.0 * n_out.sqrt() / exp_out,
        "{r_out}"
    );
}

#[test]
fn oracle_sizes_agree_within_standard_errors() {
    let model = model();
    let small = simulate_paths(&model, 10_000, 25).unwrap();
    let large = simulate_paths(&model, 100_000, 26).unwrap();
    let view = |ps: &[StatePath]| -> Vec<(usize, Vec<Jump>)> {
        ps.iter().map(|p| (p.initial, p.jumps.clone())).collect()
    };
    let (rs, rl) = (view(&small), view(&large));
    let vs: Vec<(usize, &[Jump])> = rs.iter().map(|(z, j)| (*z, j.as_slice())).collect();
    let vl: Vec<(usize, &[Jump])> = rl.iter().map(|(z, j)| (*z, j.as_slice())).collect();
    let conv = JumpConvention::Right;
    let (ms, ses) = mc_standard_error(&vs, &model.payments, &model.states, conv, 20.0);
    let (ml, sel) = mc_standard_error(&vl, &model.payments, &model.states, conv, 20.0);
    assert!((ms - ml).abs() < 3.0 * (ses * ses + sel * sel).sqrt());
    let grid = EventGrid::new(vec![0.0, 10.0, 20.0, 40.0]).unwrap();
    let cf = complete_data_cashflow(&vs, &model.payments, &model.states, conv, &grid).unwrap();
    assert!((cf.at(20.0).unwrap() - ms).abs() < 1e-6 * (1.0 + ms.abs()));
}

fn band_width_median(model: &Model, n: usize, seed: u64) -> f64 {
    let ds = simulate_dataset(model, n, seed, CENSORING).unwrap();
    let times: Vec<f64> = (1..=25).map(f64::from).collect();
    let opts = CashFlowOptions::default();
    let band = bootstrap_band(
        &ds,
        |s| estimate_cashflow(s, model, Method::Saj, &opts),
        &times,
        100,
        0.9,
        seed,
    )
    .unwrap();
    let mut widths: Vec<f64> = band
        .upper
        .iter()
        .zip(&band.lower)
        .map(|(u, l)| u - l)
        .collect();
    widths.sort_by(f64::total_cmp);
    widths[widths.len() / 2]
}

#[test]
fn bootstrap_band_shrinks_at_root_n() {
    let model = model();
    let ratio = band_width_median(&model, 500, 27) / band_width_median(&model, 2000, 28);
    assert!((1.5..=2.7).contains(&ratio), "{ratio}");
}

#[test]
fn bootstrap_band_covers_oracle() {
    let model = model();
    let paths = simulate_paths(&model, 100_000, 29).unwrap();
    let refs: Vec<(usize, &[Jump])> = paths
        .iter()
        .map(|p| (p.initial, p.jumps.as_slice()))
        .collect();
    let (target, _) = mc_standard_error(
        &refs,
        &model.payments,
        &model.states,
        JumpConvention::Right,
        20.0,
    );
    let opts = CashFlowOptions::default();
    let covered = (0..100u64)
        .filter(|&r| {
            let ds = simulate_dataset(&model, 2000, 3000 + r, CENSORING).unwrap();
            let band = bootstrap_band(
                &ds,
                |s| estimate_cashflow(s, &model, Method::Saj, &opts),
                &[20.0],
                100,
                0.9,
                r,
            )
            .unwrap();
            band.lower[0] <= target && target <= band.upper[0]
        })
        .count();
    assert!(covered >= 80, "{covered}");
}
