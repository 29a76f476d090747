//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the run.

use std::fs;
use std::path::Path;
use std::time::Instant;

use mscf_cli::{cmd_bench, sup_errors, Cli, Command};
use mscf_core::cashflow::{
    complete_data_cashflow, estimate_cashflow, saj_cashflow, twodim_cashflow, CashFlowCurve,
    CashFlowOptions, Method, TwoDimPlan,
};
use mscf_core::empirical::{check_links, Empirical1D, Empirical2D, IndexedData, Weight};
use mscf_core::estimate1d::{aalen_johansen, cmaj_transform, saj};
use mscf_core::estimate2d::{aalen_johansen_2d, nelson_aalen_2d, SweepMode};
use mscf_core::extension::{bar_estimators, forward_solve, AdaptedScaler};
use mscf_core::model::{
    solve_equivalence_benefit, HazardSet, JumpConvention, Model, PaymentSpec, Rate, RateSegment,
    Scaling, SojournMeasure, StateSpace, TechnicalBasis,
};
use mscf_core::simulate::{
    simulate_dataset, simulate_paths, CensoredObservation, Censoring, Jump, StatePath,
};
use mscf_core::timegrid::EventGrid;

const KNOWN_RED: &[u32] = &[1, 7];

const CENSORING: Censoring = Censoring::Uniform { lo: 20.0, hi: 80.0 };

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn preset() -> Model {
    Model::freepolicy6().expect("preset model")
}

fn indexed(ds: &[CensoredObservation], model: &Model) -> IndexedData {
    IndexedData::new(
        ds,
        &model.states,
        &model.payments.scaling,
        model.horizon,
        &[],
    )
    .expect("indexed data")
}

fn oracle_on(paths: &[StatePath], model: &Model, grid: &EventGrid) -> CashFlowCurve {
    let refs: Vec<(usize, &[Jump])> = paths
        .iter()
        .map(|p| (p.initial, p.jumps.as_slice()))
        .collect();
    complete_data_cashflow(
        &refs,
        &model.payments,
        &model.states,
        JumpConvention::Right,
        grid,
    )
    .expect("oracle")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let beta = solve_equivalence_benefit(&TechnicalBasis::freepolicy6());
    let secs = start.elapsed().as_secs_f64();
    match beta {
        Ok(b) => outcome(
            (b - 22_658.67).abs() <= 2.0 && secs < 1.0,
            format!("benefit {b:.2}, target 22658.67 +/- 2.0, {secs:.3}s"),
        ),
        Err(e) => outcome(false, format!("solver error: {e}")),
    }
}

fn direct_average(ds: &[CensoredObservation], model: &Model, j: usize, t: f64) -> f64 {
    let total: f64 = ds
        .iter()
        .filter(|o| o.state_at(t) == j)
        .map(|o| match o.exercise(&model.states) {
            Some(x) if x.time <= t => model.payments.scaling.rho(x.time, x.from, x.to),
            _ => 1.0,
        })
        .sum();
    total / ds.len() as f64
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let model = preset();
    let ds = simulate_dataset(&model, 500, 2, Censoring::None).expect("dataset");
    let data = indexed(&ds, &model);
    let e1 = Empirical1D::build(&data).expect("empirical");
    let (bundle, p) = saj(&e1, 0.0).expect("saj");
    let mut occ_dev: f64 = 0.0;
    for (m, &t) in data.grid().times().iter().enumerate() {
        for j in 0..model.n_states() {
            occ_dev = occ_dev.max((p.state(j).value(m) - direct_average(&ds, &model, j, t)).abs());
        }
    }
    let e2 = Empirical2D::build(&data).expect("empirical 2d");
    let (bundle1, boundary) = aalen_johansen(&e1, 0.0).expect("aj");
    let bundle2 = nelson_aalen_2d(&e2, model.n_states(), 0.0).expect("na 2d");
    let pairs = [
        (0, 0),
        (0, 1),
        (0, 2),
        (0, 3),
        (1, 1),
        (1, 4),
        (1, 5),
        (2, 2),
    ];
    let surfaces =
        aalen_johansen_2d(&bundle2, &boundary, 0, &pairs, SweepMode::Parallel).expect("2daj");
    let mut surf_dev: f64 = 0.0;
    for pair in pairs {
        let d = surfaces
            .get(pair)
            .unwrap()
            .sup_norm_diff(&e2.at_risk(pair))
            .unwrap();
        surf_dev = surf_dev.max(d);
    }
    let pay = &model.payments;
    let cf_saj =
        saj_cashflow(&p, &bundle, pay, &model.states, JumpConvention::Right).expect("saj cf");
    let plan = TwoDimPlan::generic(&bundle2, pay, &model.states);
    let cf_2d = twodim_cashflow(
        &bundle2,
        &boundary,
        &bundle1,
        pay,
        &model.states,
        &plan,
        JumpConvention::Right,
        SweepMode::Parallel,
    )
    .expect("2daj cf");
    let cf_dev = cf_saj
        .curve
        .values()
        .iter()
        .zip(cf_2d.curve.values())
        .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        occ_dev <= 1e-10 && surf_dev <= 1e-10 && cf_dev <= 1e-8 && secs < 30.0,
        format!(
            "occupation {occ_dev:.2e}, surfaces {surf_dev:.2e}, cash flows (relative) {cf_dev:.2e}, {secs:.1}s"
        ),
    )
}

fn criterion_3() -> Outcome {
    let model = preset();
    let mut worst: f64 = 0.0;
    for seed in [3, 4] {
        let ds = simulate_dataset(&model, 2000, seed, CENSORING).expect("dataset");
        let data = indexed(&ds, &model);
        let e1 = Empirical1D::build(&data).expect("empirical");
        let e2 = Empirical2D::build(&data).expect("empirical 2d");
        worst = worst.max(check_links(&e1, &e2).expect("links").max_deviation());
    }
    outcome(
        worst <= 1e-12,
        format!("max link deviation {worst:.2e} over two datasets"),
    )
}

fn three_individuals() -> (Vec<CensoredObservation>, [f64; 6]) {
    let times = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let [tau3, tau1, tau2, sigma1, r2, sigma3] = times;
    let obs = |id, jumps: &[(f64, usize, usize)], r: f64, absorbed| CensoredObservation {
        id,
        initial: 0,
        jumps: jumps
            .iter()
            .map(|&(time, from, to)| Jump { time, from, to })
            .collect(),
        censoring: r,
        absorbed,
    };
    let ds = vec![
        obs(1, &[(tau1, 0, 1), (sigma1, 1, 3)], f64::INFINITY, true),
        obs(2, &[(tau2, 0, 1)], r2, false),
        obs(3, &[(tau3, 0, 1), (sigma3, 1, 3)], f64::INFINITY, true),
    ];
    (ds, times)
}

fn criterion_4() -> Outcome {
    let (ds, [tau3, tau1, tau2, sigma1, r2, sigma3]) = three_individuals();
    let states = StateSpace::numbered(4, &[0], &[2, 3]).expect("states");
    let scaling = Scaling::custom(|t, _, _| 0.5 + 0.1 * t);
    let rho = |t: f64| 0.5 + 0.1 * t;
    let mut pay = PaymentSpec::new(4, 0.0, scaling.clone());
    pay.sojourn[1] = SojournMeasure {
        segments: vec![RateSegment {
            start: 0.0,
            end: 10.0,
            rate: 1.0,
        }],
        lumps: vec![],
    };
    let db2 = pay.sojourn[1].cumulative(sigma3) - pay.sojourn[1].cumulative(r2);
    let data = IndexedData::new(&ds, &states, &scaling, 10.0, &[]).expect("indexed");
    let grid = data.grid().clone();
    let ix = |t: f64| grid.index_of(t).expect("grid point");
    let prev = |t: f64| ix(t) - 1;

    let e1 = Empirical1D::build(&data).expect("empirical");
    let (bundle, p) = saj(&e1, 0.0).expect("saj");
    let (p1, p2) = (p.state(0), p.state(1));
    let (i1, i2) = (e1.at_risk(Weight::Scaled, 0), e1.at_risk(Weight::Scaled, 1));
    let saj_terms = [
        rho(tau3) * p1.value(0) / i1.value(0) / 3.0,
        rho(tau1) * p1.value(prev(tau1)) / i1.value(prev(tau1)) / 3.0,
        rho(tau2) * p1.value(prev(tau2)) / i1.value(prev(tau2)) / 3.0,
        -rho(tau1) * p2.value(prev(sigma1)) / i2.value(prev(sigma1)) / 3.0,
    ];
    let saj_display: f64 = saj_terms.iter().sum();
    let saj_value = p2.at(r2).expect("p2");
    let cf_saj = saj_cashflow(&p, &bundle, &pay, &states, JumpConvention::Right).expect("saj cf");
    let saj_increment = cf_saj.at(sigma3).unwrap() - cf_saj.at(r2).unwrap();

    let e2 = Empirical2D::build(&data).expect("empirical 2d");
    let (bundle1, boundary) = aalen_johansen(&e1, 0.0).expect("aj");
    let bundle2 = nelson_aalen_2d(&e2, 4, 0.0).expect("na 2d");
    let surf = aalen_johansen_2d(
        &bundle2,
        &boundary,
        0,
        &[(0, 0), (0, 1)],
        SweepMode::Sequential,
    )
    .expect("2daj");
    let (p11, p12) = (surf.get((0, 0)).unwrap(), surf.get((0, 1)).unwrap());
    let (i11, i12) = (e2.at_risk((0, 0)), e2.at_risk((0, 1)));
    let two_terms = [
        rho(tau3) * p11.value(0, 0) / i11.value(0, 0) / 3.0,
        rho(tau1) * p11.value(prev(tau1), prev(tau1)) / i11.value(prev(tau1), prev(tau1)) / 3.0,
        rho(tau2) * p11.value(prev(tau2), prev(tau2)) / i11.value(prev(tau2), prev(tau2)) / 3.0,
        -rho(tau1) * p12.value(prev(tau1), prev(sigma1))
            / i12.value(prev(tau1), prev(sigma1))
            / 3.0,
    ];
    let two_display: f64 = two_terms.iter().sum();
    let plan = TwoDimPlan::generic(&bundle2, &pay, &states);
    let cf_2d = twodim_cashflow(
        &bundle2,
        &boundary,
        &bundle1,
        &pay,
        &states,
        &plan,
        JumpConvention::Right,
        SweepMode::Sequential,
    )
    .expect("2daj cf");
    let two_increment = cf_2d.at(sigma3).unwrap() - cf_2d.at(r2).unwrap();

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let first_three_agree = (0..3).all(|i| close(saj_terms[i], two_terms[i]));
    let pass = close(saj_value, saj_display)
        && close(saj_increment, saj_display * db2)
        && close(two_increment, two_display * db2)
        && first_three_agree;
    outcome(
        pass,
        format!(
            "SAJ p2(R2) {saj_value:.6} vs four-term {saj_display:.6}; 2dAJ increment {two_increment:.6} vs {:.6}; \
             first three summands agree: {first_three_agree}; last summands {:.6} and {:.6}",
            two_display * db2,
            saj_terms[3],
            two_terms[3]
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let model = preset();
    let ds = simulate_dataset(&model, 5000, 5, CENSORING).expect("dataset");
    let opts = CashFlowOptions::default();
    let cf = estimate_cashflow(&ds, &model, Method::Saj, &opts).expect("saj");
    let cf2 = estimate_cashflow(&ds, &model, Method::TwoDim, &opts).expect("2daj");
    let paths = simulate_paths(&model, 10_000, 55).expect("oracle paths");
    let (_, rel) = sup_errors(&cf, &oracle_on(&paths, &model, cf.grid()), 35.0);
    let (_, rel2) = sup_errors(&cf2, &oracle_on(&paths, &model, cf2.grid()), 35.0);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rel <= 0.05 && secs < 300.0,
        format!("SAJ sup relative deviation {rel:.4} (2dAJ {rel2:.4}, reported), {secs:.1}s"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_6() -> Outcome {
    let model = preset();
    let paths = simulate_paths(&model, 200_000, 66).expect("oracle paths");
    let opts = CashFlowOptions::default();
    let sup_err = |n: usize, seed: u64| {
        let ds = simulate_dataset(&model, n, seed, CENSORING).expect("dataset");
        let cf = estimate_cashflow(&ds, &model, Method::Saj, &opts).expect("saj");
        sup_errors(&cf, &oracle_on(&paths, &model, cf.grid()), 25.0).0
    };
    let small = median((0..20).map(|r| sup_err(2000, 600 + r)).collect());
    let large = median((0..20).map(|r| sup_err(8000, 700 + r)).collect());
    let ratio = small / large;
    outcome(
        (1.4..=2.9).contains(&ratio),
        format!("median sup error {small:.1} (n=2000) / {large:.1} (n=8000) = {ratio:.3}, band [1.4, 2.9]"),
    )
}

fn criterion_7() -> Outcome {
    let model = preset();
    let ds = simulate_dataset(&model, 2000, 7, CENSORING).expect("dataset");
    let data = indexed(&ds, &model);
    let (_, p) = saj(&Empirical1D::build(&data).expect("empirical"), 0.0).expect("saj");
    let target = p.state(1).at(20.0).expect("p2");
    let draws: Vec<f64> = (0..100)
        .map(|aux| {
            let (thinned, extended) =
                cmaj_transform(&ds, &model.states, &model.payments.scaling, aux).expect("cmaj");
            let d = IndexedData::new(
                &thinned,
                &extended,
                &model.payments.scaling,
                model.horizon,
                &[],
            )
            .expect("indexed");
            let (_, q) =
                aalen_johansen(&Empirical1D::build(&d).expect("empirical"), 0.0).expect("aj");
            q.state(1).at(20.0).expect("p2")
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / 100.0;
    let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    let se = sd / 10.0;
    outcome(
        sd > 0.0 && (mean - target).abs() <= 2.0 * se,
        format!(
            "CMAJ p2(20) mean {mean:.5}, sd {sd:.2e}; SAJ {target:.5}; |diff| / se = {:.2}",
            (mean - target).abs() / se
        ),
    )
}

fn criterion_8() -> Outcome {
    let cli = <Cli as clap::Parser>::try_parse_from([
        "mscf",
        "bench",
        "--sizes",
        "500,1000,2000",
        "--methods",
        "saj,2daj",
        "--repeats",
        "7",
        "--seed",
        "8",
    ])
    .expect("bench args");
    let Command::Bench(args) = &cli.command else {
        unreachable!()
    };
    let rows = cmd_bench(&cli, &preset(), args).expect("bench");
    let ratios = |m: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.method == m)
            .filter_map(|r| r.ratio)
            .collect()
    };
    let (saj_r, two_r) = (ratios("saj"), ratios("2daj"));
    let pass = saj_r.iter().all(|r| (1.5..=3.0).contains(r))
        && two_r.iter().all(|r| (3.0..=6.0).contains(r));
    outcome(
        pass,
        format!("SAJ ratios {saj_r:.2?} in [1.5, 3]; 2dAJ ratios {two_r:.2?} in [3, 6]"),
    )
}

fn criterion_9() -> Outcome {
    let states = StateSpace::numbered(2, &[0, 1], &[1]).expect("states");
    let hazards = HazardSet::new(&states, vec![(0, 1, Rate::Constant { value: 0.04 })], 40.0)
        .expect("hazards");
    let toy = Model::new(
        "alive-dead",
        states,
        hazards,
        PaymentSpec::new(2, 0.0, Scaling::One),
        40.0,
    )
    .expect("model");
    let ds = simulate_dataset(&toy, 1000, 9, Censoring::None).expect("dataset");
    let yearly: Vec<f64> = (1..40).map(f64::from).collect();
    let data = IndexedData::new(
        &ds,
        &toy.states,
        &toy.payments.scaling,
        toy.horizon,
        &yearly,
    )
    .expect("indexed");
    let scaler = AdaptedScaler::parse("discount:delta=0.03", &toy).expect("scaler");
    let bar = forward_solve(&bar_estimators(&data, &scaler, 0.0).expect("bar")).expect("forward");
    let mut disc_dev: f64 = 0.0;
    for (m, &t) in data.grid().times().iter().enumerate() {
        let alive = ds.iter().filter(|o| o.state_at(t) == 0).count() as f64 / ds.len() as f64;
        disc_dev = disc_dev.max((bar.state(0).value(m) - (-0.03 * t).exp() * alive).abs());
    }

    let model = preset();
    let ds = simulate_dataset(&model, 2000, 10, CENSORING).expect("dataset");
    let data = indexed(&ds, &model);
    let scaler = AdaptedScaler::Exercise(model.payments.scaling.clone());
    let bar = forward_solve(&bar_estimators(&data, &scaler, 0.0).expect("bar")).expect("forward");
    let (_, p) = saj(&Empirical1D::build(&data).expect("empirical"), 0.0).expect("saj");
    let ex_dev = (0..model.n_states())
        .map(|j| bar.state(j).sup_norm_diff(p.state(j)).unwrap())
        .fold(0.0, f64::max);
    outcome(
        disc_dev <= 1e-10 && ex_dev <= 1e-12,
        format!("discount factorization {disc_dev:.2e}; exercise scaler vs scaled pipeline {ex_dev:.2e}"),
    )
}

fn run_cli(args: &[&str]) {
    let cli =
        <Cli as clap::Parser>::try_parse_from(std::iter::once("mscf").chain(args.iter().copied()))
            .expect("cli args");
    mscf_cli::run(&cli).expect("cli run");
}

fn collect_csv(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("read dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv")
                && path.file_name().unwrap() != "timings.csv"
            {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path).expect("read")));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Outcome {
    let root = tempfile::tempdir().expect("tempdir");
    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        let dir = root.path().join(threads);
        let s = |p: &str| dir.join(p).to_string_lossy().into_owned();
        let data = s("data.csv");
        run_cli(&[
            "--threads",
            threads,
            "simulate",
            "--n",
            "1000",
            "--seed",
            "10",
            "--out",
            &data,
        ]);
        run_cli(&[
            "--threads",
            threads,
            "compare",
            "--in",
            &data,
            "--methods",
            "saj,cmaj,2daj",
            "--oracle",
            "mc:2000",
            "--bootstrap",
            "20",
            "--out",
            &s("report"),
        ]);
        run_cli(&[
            "--threads",
            threads,
            "estimate",
            "--method",
            "2daj",
            "--surfaces",
            "1,1;1,2",
            "--dump-empirical",
            &s("empirical"),
            "--in",
            &data,
            "--out",
            &s("2daj"),
        ]);
        run_cli(&[
            "--threads",
            threads,
            "estimate",
            "--method",
            "barsaj",
            "--scaler",
            "discount:delta=0.03",
            "--in",
            &data,
            "--out",
            &s("barsaj"),
        ]);
        runs.push(collect_csv(&dir));
    }
    let files = runs[0].len();
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    outcome(
        files > 10 && runs[0].len() == runs[1].len() && differing.is_empty(),
        format!("{files} CSV files compared across 1 and 4 threads; differing: {differing:?}"),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "equivalence benefit", criterion_1),
        (2, "NPMLE identity", criterion_2),
        (3, "link identities", criterion_3),
        (4, "three-individual example", criterion_4),
        (5, "oracle consistency", criterion_5),
        (6, "root-n rate", criterion_6),
        (7, "CMAJ excess noise", criterion_7),
        (8, "complexity", criterion_8),
        (9, "extension correctness", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut unexpected = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|x| name.contains(x.as_str()) || *x == id.to_string())
        {
            continue;
        }
        let o = f();
        let known = KNOWN_RED.contains(&id);
        let status = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known red)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {id:>2} {status}: {name}: {}", o.detail);
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
