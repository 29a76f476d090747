//! Plug-in expected accumulated cash flows, prospective reserves, the Monte
//! Carlo oracle and bootstrap bands.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::empirical::{chunked_sum, Empirical1D, Empirical2D, IndexedData, Sink};
use crate::error::{Error, Result};
use crate::estimate1d::{aalen_johansen, cmaj_transform, saj, HazardBundle1D, OccupationCurve};
use crate::estimate2d::{nelson_aalen_2d, sweep, Accumulator, HazardBundle2D, SweepMode};
use crate::model::{JumpConvention, Model, PaymentSpec, StateSpace};
use crate::seed::{item_rng, stage_seed};
use crate::simulate::{simulate_paths, CensoredObservation, Jump};
use crate::timegrid::{EventGrid, Step1D};

/// Estimated expected accumulated cash flow `t ↦ A(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CashFlowCurve {
    pub curve: Step1D,
    pub method: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub eps: f64,
    /// Increments dropped because of empty risk sets.
    pub warnings: usize,
}

impl CashFlowCurve {
    fn new(curve: Step1D, method: &str, n: usize, eps: f64, warnings: usize) -> Self {
        Self {
            curve,
            method: method.to_string(),
            n,
            seed: None,
            eps,
            warnings,
        }
    }

    pub fn grid(&self) -> &EventGrid {
        self.curve.grid()
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        self.curve.at(t)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "A"])?;
        for (t, v) in self.grid().times().iter().zip(self.curve.values()) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `B_j(t_m) - B_j(t_{m-1})` on the grid, zero at `m = 0`.
fn sojourn_increments(pay: &PaymentSpec, j: usize, grid: &EventGrid) -> Vec<f64> {
    let b = &pay.sojourn[j];
    let t = grid.times();
    let mut out = vec![0.0; t.len()];
    if b.is_zero() {
        return out;
    }
    for m in 1..t.len() {
        out[m] = b.cumulative(t[m]) - b.cumulative(t[m - 1]);
    }
    out
}

/// `b0 + Σ_{m <= a} Σ_j p_j(m-1) [ΔB_j(m) + Σ_k b_jk(t_m) dΛ_jk(m)]` for the
/// first `states.len()` states.
fn assemble_1d(
    p: &OccupationCurve,
    rate: impl Fn(usize, usize, usize) -> f64,
    pay: &PaymentSpec,
    states: &StateSpace,
) -> Vec<f64> {
    let grid = p.grid();
    let t = grid.times();
    let s = states.len();
    let db: Vec<Vec<f64>> = (0..s).map(|j| sojourn_increments(pay, j, grid)).collect();
    let pairs = pay.transition_pairs();
    let mut out = vec![pay.b0; t.len()];
    let mut acc = pay.b0;
    for m in 1..t.len() {
        for j in 0..s {
            let pj = p.state(j).value(m - 1);
            if pj == 0.0 {
                continue;
            }
            let mut d = db[j][m];
            for &(jj, k) in &pairs {
                if jj == j {
                    let r = rate(j, k, m);
                    if r != 0.0 {
                        d += pay.b(j, k, t[m]) * r;
                    }
                }
            }
            acc += pj * d;
        }
        out[m] = acc;
    }
    out
}

/// Plug-in cash flow from the scaled Aalen–Johansen estimator.
pub fn saj_cashflow(
    p: &OccupationCurve,
    bundle: &HazardBundle1D,
    pay: &PaymentSpec,
    states: &StateSpace,
    convention: JumpConvention,
) -> Result<CashFlowCurve> {
    p.grid().check_same(bundle.grid(), "saj_cashflow")?;
    let values = assemble_1d(
        p,
        |j, k, m| match convention {
            JumpConvention::Left if states.is_exercise(j, k) => bundle.unscaled_increment(j, k, m),
            _ => bundle.increment(j, k, m),
        },
        pay,
        states,
    );
    let curve = Step1D::new(p.grid().clone(), values)?;
    Ok(CashFlowCurve::new(
        curve,
        "saj",
        0,
        bundle.eps(),
        bundle.warnings(),
    ))
}

fn label_index(states: &StateSpace, label: &str) -> Result<usize> {
    states
        .index_of(label)
        .ok_or_else(|| Error::config(format!("preset needs state {label:?}")))
}

/// The six-state free-policy cash flow written out term by term:
/// `b0 + ∫ p_1 (dB_1 + b_13 dΛ_13) + ∫ p_2^ρ (dB_2 + b_25 dΛ_25^ρ)`.
pub fn saj_cashflow_freepolicy6(
    p: &OccupationCurve,
    bundle: &HazardBundle1D,
    pay: &PaymentSpec,
    states: &StateSpace,
) -> Result<CashFlowCurve> {
    p.grid().check_same(bundle.grid(), "saj_cashflow")?;
    let [s1, s2, s3, s5] = ["1", "2", "3", "5"].map(|l| label_index(states, l));
    let (s1, s2, s3, s5) = (s1?, s2?, s3?, s5?);
    let grid = p.grid();
    let t = grid.times();
    let db1 = sojourn_increments(pay, s1, grid);
    let db2 = sojourn_increments(pay, s2, grid);
    let mut values = vec![pay.b0; t.len()];
    for m in 1..t.len() {
        let one =
            p.state(s1).value(m - 1) * (db1[m] + pay.b(s1, s3, t[m]) * bundle.increment(s1, s3, m));
        let two =
            p.state(s2).value(m - 1) * (db2[m] + pay.b(s2, s5, t[m]) * bundle.increment(s2, s5, m));
        values[m] = values[m - 1] + one + two;
    }
    let curve = Step1D::new(grid.clone(), values)?;
    Ok(CashFlowCurve::new(
        curve,
        "saj",
        0,
        bundle.eps(),
        bundle.warnings(),
    ))
}

/// Sojourn payments in post-exercise states and post-exercise transition
/// payments, expressed through the two-dimensional estimator.
#[derive(Debug, Clone, Default)]
pub struct TwoDimPlan {
    /// `(j2, G)`: `G(t1, t2)` estimates `E[H(t1) 1{Z_t2 = j2}]`-type mass paid by `B_j2`.
    pub sojourn: Vec<(usize, Accumulator)>,
    /// Accumulated post-exercise transition payments, read on the diagonal.
    pub transition: Accumulator,
}

impl TwoDimPlan {
    /// Plan for an arbitrary pre/post-exercise model.
    pub fn generic(bundle: &HazardBundle2D, pay: &PaymentSpec, states: &StateSpace) -> Self {
        let transitions = bundle.transitions();
        let exercises: Vec<(usize, usize)> = transitions
            .iter()
            .filter(|(j, k)| states.is_exercise(*j, *k))
            .copied()
            .collect();
        let rho = |x1: usize, y1: usize, sign: f64| -> crate::estimate2d::CellWeight {
            let pay = pay.clone();
            Arc::new(move |t1, _| sign * pay.rho(t1, x1, y1))
        };
        let mut sojourn = Vec::new();
        for j2 in (0..states.len()).filter(|j| states.is_post(*j) && !pay.sojourn[*j].is_zero()) {
            let mut acc = Accumulator::default();
            for &(x1, y1) in &exercises {
                for &(x2, y2) in &transitions {
                    if y2 == j2 && x2 != j2 {
                        acc.terms.push(((x1, x2), (y1, y2), rho(x1, y1, 1.0)));
                    } else if x2 == j2 && states.is_post(y2) {
                        acc.terms.push(((x1, x2), (y1, y2), rho(x1, y1, -1.0)));
                    }
                }
            }
            sojourn.push((j2, acc));
        }
        let mut transition = Accumulator::default();
        for &(x1, y1) in &exercises {
            for &(x2, y2) in &transitions {
                if states.is_post(x2) && states.is_post(y2) && pay.transition(x2, y2).is_some() {
                    let pay = pay.clone();
                    let w: crate::estimate2d::CellWeight =
                        Arc::new(move |t1, t2| pay.rho(t1, x1, y1) * pay.b(x2, y2, t2));
                    transition.terms.push(((x1, x2), (y1, y2), w));
                }
            }
        }
        Self {
            sojourn,
            transition,
        }
    }

    /// The six-state free-policy plan:
    /// `ρ(u1) [p_11 dΛ_(11)(22) - p_12 (dΛ_(12)(25) + dΛ_(12)(26))]` against `B_2`,
    /// and `ρ(u1) p_12 b_25(u2) dΛ_(12)(25)`.
    pub fn freepolicy6(pay: &PaymentSpec, states: &StateSpace) -> Result<Self> {
        let idx = |l: &str| label_index(states, l);
        let (s1, s2, s5, s6) = (idx("1")?, idx("2")?, idx("5")?, idx("6")?);
        let p1 = pay.clone();
        let rho: crate::estimate2d::CellWeight = Arc::new(move |t1, _| p1.rho(t1, s1, s2));
        let p2 = pay.clone();
        let neg: crate::estimate2d::CellWeight = Arc::new(move |t1, _| -p2.rho(t1, s1, s2));
        let p3 = pay.clone();
        let surrender: crate::estimate2d::CellWeight =
            Arc::new(move |t1, t2| p3.rho(t1, s1, s2) * p3.b(s2, s5, t2));
        Ok(Self {
            sojourn: vec![(
                s2,
                Accumulator {
                    terms: vec![
                        ((s1, s1), (s2, s2), rho),
                        ((s1, s2), (s2, s5), neg.clone()),
                        ((s1, s2), (s2, s6), neg),
                    ],
                },
            )],
            transition: Accumulator {
                terms: vec![((s1, s2), (s2, s5), surrender)],
            },
        })
    }
}

/// Plug-in cash flow from the two-dimensional Aalen–Johansen estimator.
///
/// `boundary` and `bundle1` are the unscaled one-dimensional estimates from the
/// same data.
#[allow(clippy::too_many_arguments)]
pub fn twodim_cashflow(
    bundle2: &HazardBundle2D,
    boundary: &OccupationCurve,
    bundle1: &HazardBundle1D,
    pay: &PaymentSpec,
    states: &StateSpace,
    plan: &TwoDimPlan,
    convention: JumpConvention,
    mode: SweepMode,
) -> Result<CashFlowCurve> {
    let grid = boundary.grid().clone();
    grid.check_same(bundle1.grid(), "twodim_cashflow")?;
    grid.check_same(bundle2.grid(), "twodim_cashflow")?;
    let l = grid.len();
    let t = grid.times();

    // pre-exercise part with unscaled estimates
    let db: Vec<Vec<f64>> = (0..states.len())
        .map(|j| sojourn_increments(pay, j, &grid))
        .collect();
    let pairs = pay.transition_pairs();
    let mut values = vec![pay.b0; l];
    for m in 1..l {
        let mut d = 0.0;
        for j in (0..states.len()).filter(|j| states.is_pre(*j)) {
            let pj = boundary.state(j).value(m - 1);
            if pj == 0.0 {
                continue;
            }
            let mut inc = db[j][m];
            for &(jj, k) in pairs.iter().filter(|p| p.0 == j) {
                let factor = match convention {
                    JumpConvention::Right if states.is_exercise(jj, k) => pay.rho(t[m], jj, k),
                    _ => 1.0,
                };
                inc += factor * pay.b(jj, k, t[m]) * bundle1.increment(jj, k, m);
            }
            d += pj * inc;
        }
        values[m] = values[m - 1] + d;
    }

    let mut accumulators: Vec<Accumulator> = plan.sojourn.iter().map(|s| s.1.clone()).collect();
    accumulators.push(plan.transition.clone());
    let k_index = accumulators.len() - 1;
    let weights: Vec<&Vec<f64>> = plan.sojourn.iter().map(|s| &db[s.0]).collect();
    let mut post = vec![0.0; l];
    let mut diag = vec![0.0; l];
    sweep(
        bundle2,
        boundary,
        states.initial(),
        &[],
        &accumulators,
        mode,
        |v| {
            let g = v.g;
            if g + 1 < l {
                for (i, w) in weights.iter().enumerate() {
                    let wg = w[g + 1];
                    if wg == 0.0 {
                        continue;
                    }
                    let row = v.acc_row(i);
                    for a in g + 1..l {
                        post[a] += row[a] * wg;
                    }
                }
            }
            diag[g] = v.acc_row(k_index)[g];
        },
    )?;
    for m in 0..l {
        values[m] += post[m] + diag[m];
    }
    let curve = Step1D::new(grid, values)?;
    Ok(CashFlowCurve::new(
        curve,
        "2daj",
        0,
        bundle2.eps(),
        bundle1.warnings() + bundle2.warnings(),
    ))
}

/// Prospective reserve at inception.
#[derive(Debug, Clone, PartialEq)]
pub struct ReserveValue {
    pub value: f64,
    pub kappa: Step1D,
}

/// `V(0-) = b0 + ∫_(0,T] κ(t)^{-1} dA(t)`, with `b0 = A(0)`.
pub fn reserve(cf: &CashFlowCurve, kappa: &Step1D) -> Result<ReserveValue> {
    cf.grid().check_same(kappa.grid(), "reserve")?;
    if kappa.values().iter().any(|k| !(*k > 0.0)) {
        return Err(Error::invalid("savings account must be positive"));
    }
    if (kappa.value(0) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("savings account must start at 1"));
    }
    let mut value = cf.curve.value(0);
    for m in 1..kappa.grid().len() {
        value += cf.curve.increment(m) / kappa.value(m);
    }
    Ok(ReserveValue {
        value,
        kappa: kappa.clone(),
    })
}

/// Accumulated payments of one fully observed path up to `t`.
pub fn path_payments(
    initial: usize,
    jumps: &[Jump],
    pay: &PaymentSpec,
    states: &StateSpace,
    convention: JumpConvention,
    t: f64,
) -> f64 {
    let mut total = pay.b0;
    let mut state = initial;
    let mut since = 0.0;
    let mut h = 1.0;
    for j in jumps {
        if j.time > t {
            break;
        }
        let b = &pay.sojourn[state];
        total += h * (b.cumulative(j.time) - b.cumulative(since));
        if states.is_exercise(j.from, j.to) {
            let rho = pay.rho(j.time, j.from, j.to);
            let factor = match convention {
                JumpConvention::Right => rho,
                JumpConvention::Left => h,
            };
            total += factor * pay.b(j.from, j.to, j.time);
            h = rho;
        } else {
            total += h * pay.b(j.from, j.to, j.time);
        }
        state = j.to;
        since = j.time;
    }
    if t > since {
        let b = &pay.sojourn[state];
        total += h * (b.cumulative(t) - b.cumulative(since));
    }
    total
}

/// Average accumulated payments `n^{-1} Σ B^ℓ(t)` over fully observed paths,
/// exact at every grid point.
pub fn complete_data_cashflow(
    paths: &[(usize, &[Jump])],
    pay: &PaymentSpec,
    states: &StateSpace,
    convention: JumpConvention,
    grid: &EventGrid,
) -> Result<CashFlowCurve> {
    if paths.is_empty() {
        return Err(Error::invalid("no paths"));
    }
    let t = grid.times();
    let l = t.len();
    let s = states.len();
    // per state: coefficient of B_j(t) (s * (l + 1)), then a constant part (l + 1)
    let width = (s + 1) * (l + 1);
    let first_after = |x: f64| t.partition_point(|v| *v <= x);
    let first_at_or_after = |x: f64| t.partition_point(|v| *v < x);
    let sums = chunked_sum(paths, width, |(initial, jumps), buf| {
        let konst = s * (l + 1);
        let mut state = *initial;
        let mut since = 0.0;
        let mut h = 1.0;
        let sojourn = |state: usize, from: f64, to: f64, h: f64, buf: &mut Sink| {
            let b = &pay.sojourn[state];
            if b.is_zero() {
                return;
            }
            let (i0, i1) = (first_after(from), first_after(to).max(first_after(from)));
            let base = b.cumulative(from);
            buf.add(state * (l + 1) + i0, h);
            buf.add(state * (l + 1) + i1, -h);
            buf.add(konst + i0, -(h * base));
            buf.add(konst + i1, h * base);
            if to.is_finite() {
                buf.add(konst + i1, h * (b.cumulative(to) - base));
            }
        };
        for j in jumps.iter() {
            sojourn(state, since, j.time, h, buf);
            let (factor, next_h) = if states.is_exercise(j.from, j.to) {
                let rho = pay.rho(j.time, j.from, j.to);
                match convention {
                    JumpConvention::Right => (rho, rho),
                    JumpConvention::Left => (h, rho),
                }
            } else {
                (h, h)
            };
            let amount = factor * pay.b(j.from, j.to, j.time);
            if amount != 0.0 {
                buf.add(konst + first_at_or_after(j.time), amount);
            }
            h = next_h;
            state = j.to;
            since = j.time;
        }
        sojourn(state, since, f64::INFINITY, h, buf);
    });
    let n = paths.len() as f64;
    let cum: Vec<f64> = (0..s)
        .map(|j| &pay.sojourn[j])
        .flat_map(|b| t.iter().map(move |x| b.cumulative(*x)))
        .collect();
    let mut values = vec![0.0; l];
    let mut running = vec![0.0; s + 1];
    for m in 0..l {
        let mut v = 0.0;
        for j in 0..s {
            running[j] += sums[j * (l + 1) + m];
            if running[j] != 0.0 {
                v += running[j] * cum[j * l + m];
            }
        }
        running[s] += sums[s * (l + 1) + m];
        values[m] = pay.b0 + (v + running[s]) / n;
    }
    let curve = Step1D::new(grid.clone(), values)?;
    Ok(CashFlowCurve::new(curve, "complete", paths.len(), 0.0, 0))
}

/// Monte Carlo estimate of the expected accumulated cash flow from `n_mc`
/// uncensored paths, evaluated on `grid`.
pub fn mc_oracle(
    model: &Model,
    n_mc: usize,
    seed: u64,
    convention: JumpConvention,
    grid: &EventGrid,
) -> Result<CashFlowCurve> {
    let paths = simulate_paths(model, n_mc, seed)?;
    let refs: Vec<(usize, &[Jump])> = paths
        .iter()
        .map(|p| (p.initial, p.jumps.as_slice()))
        .collect();
    let mut cf = complete_data_cashflow(&refs, &model.payments, &model.states, convention, grid)?;
    cf.method = "mc".into();
    cf.seed = Some(seed);
    Ok(cf)
}

/// Mean and standard error of the accumulated payments at `t` over paths.
pub fn mc_standard_error(
    paths: &[(usize, &[Jump])],
    pay: &PaymentSpec,
    states: &StateSpace,
    convention: JumpConvention,
    t: f64,
) -> (f64, f64) {
    let v: Vec<f64> = paths
        .iter()
        .map(|(z, j)| path_payments(*z, j, pay, states, convention, t))
        .collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Saj,
    Cmaj { aux_seed: u64 },
    TwoDim,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Saj => write!(f, "saj"),
            Method::Cmaj { .. } => write!(f, "cmaj"),
            Method::TwoDim => write!(f, "2daj"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CashFlowOptions {
    pub eps: f64,
    pub convention: JumpConvention,
    pub mode: SweepMode,
    /// Extra grid points, e.g. report times.
    pub extra_points: Vec<f64>,
}

impl Default for CashFlowOptions {
    fn default() -> Self {
        Self {
            eps: 0.0,
            convention: JumpConvention::Right,
            mode: SweepMode::Parallel,
            extra_points: Vec::new(),
        }
    }
}

/// Full pipeline from a censored dataset to a plug-in cash flow.
pub fn estimate_cashflow(
    dataset: &[CensoredObservation],
    model: &Model,
    method: Method,
    opts: &CashFlowOptions,
) -> Result<CashFlowCurve> {
    let pay = &model.payments;
    let states = &model.states;
    let index = |ds: &[CensoredObservation], st: &StateSpace| {
        IndexedData::new(ds, st, &pay.scaling, model.horizon, &opts.extra_points)
    };
    let mut cf = match method {
        Method::Saj => {
            let e = Empirical1D::build(&index(dataset, states)?)?;
            let (bundle, p) = saj(&e, opts.eps)?;
            saj_cashflow(&p, &bundle, pay, states, opts.convention)?
        }
        Method::Cmaj { aux_seed } => {
            let (thinned, extended) = cmaj_transform(dataset, states, &pay.scaling, aux_seed)?;
            let data = index(&thinned, &extended)?;
            let e = Empirical1D::build(&data)?;
            let (bundle, p) = aalen_johansen(&e, opts.eps)?;
            let original = match opts.convention {
                JumpConvention::Left => {
                    let d = IndexedData::new(
                        dataset,
                        states,
                        &pay.scaling,
                        model.horizon,
                        data.grid().times(),
                    )?;
                    Some(aalen_johansen(&Empirical1D::build(&d)?, opts.eps)?.0)
                }
                JumpConvention::Right => None,
            };
            let values = assemble_1d(
                &p,
                |j, k, m| match &original {
                    Some(o) if states.is_exercise(j, k) => o.unscaled_increment(j, k, m),
                    _ => bundle.increment(j, k, m),
                },
                pay,
                states,
            );
            let mut cf = CashFlowCurve::new(
                Step1D::new(data.grid().clone(), values)?,
                "cmaj",
                0,
                opts.eps,
                bundle.warnings(),
            );
            cf.seed = Some(aux_seed);
            cf
        }
        Method::TwoDim => {
            let data = index(dataset, states)?;
            let e1 = Empirical1D::build(&data)?;
            let e2 = Empirical2D::build(&data)?;
            let (bundle1, boundary) = aalen_johansen(&e1, opts.eps)?;
            let bundle2 = nelson_aalen_2d(&e2, states.len(), opts.eps)?;
            let plan = TwoDimPlan::generic(&bundle2, pay, states);
            twodim_cashflow(
                &bundle2,
                &boundary,
                &bundle1,
                pay,
                states,
                &plan,
                opts.convention,
                opts.mode,
            )?
        }
    };
    cf.n = dataset.len();
    Ok(cf)
}

/// Pointwise bootstrap quantile band.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    pub replicates: usize,
}

impl Band {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "lower", "median", "upper"])?;
        for i in 0..self.times.len() {
            w.write_record([
                self.times[i].to_string(),
                self.lower[i].to_string(),
                self.median[i].to_string(),
                self.upper[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resamples individuals with replacement `replicates` times, re-runs
/// `estimator` on each resample and returns pointwise quantiles at `times`.
pub fn bootstrap_band<F>(
    dataset: &[CensoredObservation],
    estimator: F,
    times: &[f64],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<Band>
where
    F: Fn(&[CensoredObservation]) -> Result<CashFlowCurve> + Sync,
{
    if replicates < 2 {
        return Err(Error::invalid("bootstrap needs at least two replicates"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let stage = stage_seed(seed, "bootstrap");
    let n = dataset.len();
    let draws: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = item_rng(stage, r);
            let sample: Vec<CensoredObservation> = (0..n)
                .map(|i| {
                    let mut o = dataset[rng.random_range(0..n)].clone();
                    o.id = i as u64;
                    o
                })
                .collect();
            let cf = estimator(&sample)?;
            if cf.warnings > 0 {
                log::debug!(
                    "bootstrap replicate {r}: {} dropped increments",
                    cf.warnings
                );
            }
            times.iter().map(|t| cf.at(*t)).collect()
        })
        .collect::<Result<_>>()?;
    let alpha = (1.0 - level) / 2.0;
    let mut band = Band {
        times: times.to_vec(),
        lower: Vec::with_capacity(times.len()),
        median: Vec::with_capacity(times.len()),
        upper: Vec::with_capacity(times.len()),
        replicates,
    };
    for i in 0..times.len() {
        let mut col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        col.sort_by(f64::total_cmp);
        band.lower.push(quantile(&col, alpha));
        band.median.push(quantile(&col, 0.5));
        band.upper.push(quantile(&col, 1.0 - alpha));
    }
    Ok(band)
}
