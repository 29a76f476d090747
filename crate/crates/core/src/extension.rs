//! Estimators for general adapted scaling processes `H`, such as discounting
//! with state-dependent interest.
//!
//! `H` enters through forward rates: an interest-like rate `H̄_j` on the
//! diagonal and scaled transition rates `Λ̄_jk`, so that the ordinary forward
//! recursion reproduces `E[H(t) 1{Z_t = j}]`.

use crate::empirical::{IndexedData, IndexedObservation};
use crate::error::{Error, Result};
use crate::estimate1d::OccupationCurve;
use crate::model::{Model, Scaling, StateSpace};
use crate::timegrid::{EventGrid, Step1D};

/// Rule computing `H` from an observed path.
#[derive(Debug, Clone)]
pub enum AdaptedScaler {
    One,
    /// `H(t) = rho(τ, Z_τ-, Z_τ)^{1{τ <= t}}`.
    Exercise(Scaling),
    /// `H(t) = exp(-∫_0^t delta_{Z_s} ds)`, one rate per state.
    Discount(Vec<f64>),
}

impl AdaptedScaler {
    /// Parses `one`, `exercise`, or `discount:delta=<rate>[,<label>=<rate>...]`.
    pub fn parse(spec: &str, model: &Model) -> Result<Self> {
        match spec {
            "one" => return Ok(AdaptedScaler::One),
            "exercise" => return Ok(AdaptedScaler::Exercise(model.payments.scaling.clone())),
            _ => {}
        }
        let rest = spec
            .strip_prefix("discount:")
            .ok_or_else(|| Error::config(format!("unknown scaler {spec:?}")))?;
        let mut rates: Option<Vec<f64>> = None;
        let mut overrides = Vec::new();
        for part in rest.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::config(format!("expected key=value in {part:?}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad rate {value:?}")))?;
            if key.trim() == "delta" {
                rates = Some(vec![v; model.n_states()]);
            } else {
                overrides.push((model.state(key.trim())?, v));
            }
        }
        let mut rates = rates.ok_or_else(|| Error::config("discount scaler needs delta=<rate>"))?;
        for (j, v) in overrides {
            rates[j] = v;
        }
        let s = AdaptedScaler::Discount(rates);
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if let AdaptedScaler::Discount(d) = self {
            if d.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("discount rates must be finite"));
            }
        }
        Ok(())
    }

    /// `H(t_m)` for every grid point, following the path past `R` as if
    /// uncensored (values after `R` are never used).
    pub fn path_values(
        &self,
        o: &IndexedObservation,
        grid: &EventGrid,
        states: &StateSpace,
    ) -> Result<Vec<f64>> {
        let l = grid.len();
        let mut h = vec![1.0; l];
        match self {
            AdaptedScaler::One => {}
            AdaptedScaler::Exercise(scaling) => {
                if let Some(&(m, from, to)) = o.jumps.iter().find(|j| states.is_exercise(j.1, j.2))
                {
                    let rho = scaling.rho(grid.time(m), from, to);
                    h[m..].iter_mut().for_each(|v| *v = rho);
                }
            }
            AdaptedScaler::Discount(delta) => {
                if delta.len() != states.len() {
                    return Err(Error::invalid(
                        "discount rates do not match the state space",
                    ));
                }
                let t = grid.times();
                let mut acc = 0.0;
                let mut next = 0;
                let mut state = o.initial;
                for m in 1..l {
                    acc += delta[state] * (t[m] - t[m - 1]);
                    h[m] = (-acc).exp();
                    while next < o.jumps.len() && o.jumps[next].0 == m {
                        state = o.jumps[next].2;
                        next += 1;
                    }
                }
            }
        }
        Ok(h)
    }
}

/// Forward-rate estimates for a general scaler.
#[derive(Debug, Clone)]
pub struct BarBundle {
    grid: EventGrid,
    n_states: usize,
    initial: usize,
    mean_h0: f64,
    /// `Ī_j(t)`.
    at_risk: Vec<Step1D>,
    /// Increments of `H̄_j`.
    dh: Vec<Vec<f64>>,
    /// Increments of `Λ̄_jk`, off-diagonal.
    dl: Vec<Vec<f64>>,
    warnings: usize,
}

/// Empirical averages and the ratio estimators `H̄_j`, `Λ̄_jk`.
pub fn bar_estimators(data: &IndexedData, scaler: &AdaptedScaler, eps: f64) -> Result<BarBundle> {
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!(
            "eps must be nonnegative, got {eps}"
        )));
    }
    scaler.validate()?;
    let grid = data.grid();
    let l = grid.len();
    let s = data.states().len();
    // layout: at-risk (s * l), dH numerators (s * l), event numerators (s * s * l), H(0)
    let width = s * l + s * l + s * s * l + 1;
    let mut sums = vec![0.0; width];
    for o in data.observations() {
        let h = scaler.path_values(o, grid, data.states())?;
        for (state, a, b) in o.sojourns(l) {
            for m in a..b {
                sums[state * l + m] += h[m];
            }
        }
        // dH(t ∧ R) over (t_{m-1}, t_m], attributed to the state occupied on that cell
        let stop = o.censor.unwrap_or(l - 1).min(l - 1);
        let mut state = o.initial;
        let mut next = 0;
        for m in 1..=stop {
            let d = h[m] - h[m - 1];
            if d != 0.0 {
                sums[s * l + state * l + m] += d;
            }
            while next < o.jumps.len() && o.jumps[next].0 == m {
                state = o.jumps[next].2;
                next += 1;
            }
        }
        let ev = 2 * s * l;
        for &(m, j, k) in &o.jumps {
            sums[ev + (j * s + k) * l + m] += h[m];
        }
        sums[width - 1] += h[0];
    }
    let n = data.n() as f64;
    let at_risk: Vec<Step1D> = (0..s)
        .map(|j| {
            let v = sums[j * l..(j + 1) * l].iter().map(|x| x / n).collect();
            Step1D::new(grid.clone(), v).expect("grid length")
        })
        .collect();
    let mut warnings = 0;
    let mut ratio = |num: &[f64], j: usize| -> Vec<f64> {
        let mut out = vec![0.0; l];
        for m in 1..l {
            if num[m] == 0.0 {
                continue;
            }
            let denom = at_risk[j].value(m - 1).max(eps);
            if denom != 0.0 {
                out[m] = num[m] / n / denom;
            } else {
                warnings += 1;
            }
        }
        out
    };
    let dh: Vec<Vec<f64>> = (0..s)
        .map(|j| ratio(&sums[s * l + j * l..s * l + (j + 1) * l], j))
        .collect();
    let ev = 2 * s * l;
    let dl: Vec<Vec<f64>> = (0..s * s)
        .map(|i| {
            if i / s == i % s {
                vec![0.0; l]
            } else {
                ratio(&sums[ev + i * l..ev + (i + 1) * l], i / s)
            }
        })
        .collect();
    if warnings > 0 {
        log::warn!("{warnings} increments met an empty risk set and were dropped");
    }
    Ok(BarBundle {
        grid: grid.clone(),
        n_states: s,
        initial: data.states().initial(),
        mean_h0: sums[width - 1] / n,
        at_risk,
        dh,
        dl,
        warnings,
    })
}

impl BarBundle {
    pub fn grid(&self) -> &EventGrid {
        &self.grid
    }

    pub fn warnings(&self) -> usize {
        self.warnings
    }

    pub fn mean_h0(&self) -> f64 {
        self.mean_h0
    }

    /// `Ī_j(t)`: average of `H(t) 1{Z_t = j} 1{t < R}`.
    pub fn at_risk(&self, j: usize) -> &Step1D {
        &self.at_risk[j]
    }

    /// `H̄_j` as a cumulative curve.
    pub fn interest(&self, j: usize) -> Step1D {
        Step1D::from_increments(self.grid.clone(), &self.dh[j]).expect("grid length")
    }

    /// `ΔΛ̄_jk(t_m)`, with `Λ̄_jj = H̄_j - Σ_{l != j} Λ̄_jl`.
    pub fn increment(&self, j: usize, k: usize, m: usize) -> f64 {
        let s = self.n_states;
        if j != k {
            return self.dl[j * s + k][m];
        }
        self.dh[j][m]
            - (0..s)
                .filter(|l| *l != j)
                .map(|l| self.dl[j * s + l][m])
                .sum::<f64>()
    }

    pub fn cumulative(&self, j: usize, k: usize) -> Step1D {
        let inc: Vec<f64> = (0..self.grid.len())
            .map(|m| self.increment(j, k, m))
            .collect();
        Step1D::from_increments(self.grid.clone(), &inc).expect("grid length")
    }
}

/// Forward recursion with the `H̄`-bearing diagonal, started from
/// `p̄(0) = e_z0 · mean H(0)`.
pub fn forward_solve(b: &BarBundle) -> Result<OccupationCurve> {
    let s = b.n_states;
    let l = b.grid.len();
    let mut values = vec![vec![0.0; l]; s];
    let mut prev = vec![0.0; s];
    prev[b.initial] = b.mean_h0;
    values[b.initial][0] = b.mean_h0;
    for m in 1..l {
        let mut next = prev.clone();
        for k in 0..s {
            if prev[k] == 0.0 {
                continue;
            }
            for (j, n) in next.iter_mut().enumerate() {
                let d = b.increment(k, j, m);
                if d != 0.0 {
                    *n += prev[k] * d;
                }
            }
        }
        for j in 0..s {
            values[j][m] = next[j];
        }
        prev = next;
    }
    OccupationCurve::new(
        values
            .into_iter()
            .map(|v| Step1D::new(b.grid.clone(), v).expect("grid length"))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::{Empirical1D, Weight};
    use crate::estimate1d::{aalen_johansen, saj};
    use crate::model::{HazardSet, PaymentSpec, Rate};
    use crate::simulate::{simulate_dataset, CensoredObservation, Censoring};
    use proptest::prelude::*;

    fn preset() -> Model {
        Model::freepolicy6().unwrap()
    }

    fn alive_dead() -> Model {
        let states = StateSpace::numbered(2, &[0, 1], &[1]).unwrap();
        let hazards =
            HazardSet::new(&states, vec![(0, 1, Rate::Constant { value: 0.04 })], 40.0).unwrap();
        Model::new(
            "alive-dead",
            states,
            hazards,
            PaymentSpec::new(2, 0.0, Scaling::One),
            40.0,
        )
        .unwrap()
    }

    fn index(ds: &[CensoredObservation], model: &Model, extra: &[f64]) -> IndexedData {
        IndexedData::new(
            ds,
            &model.states,
            &model.payments.scaling,
            model.horizon,
            extra,
        )
        .unwrap()
    }

    #[test]
    fn unit_scaler_is_classical() {
        let model = preset();
        let ds =
            simulate_dataset(&model, 200, 3, Censoring::Uniform { lo: 10.0, hi: 60.0 }).unwrap();
        let data = index(&ds, &model, &[]);
        let b = bar_estimators(&data, &AdaptedScaler::One, 0.0).unwrap();
        for j in 0..6 {
            assert!(b.interest(j).values().iter().all(|v| *v == 0.0));
        }
        let bar = forward_solve(&b).unwrap();
        let (_, p) = aalen_johansen(&Empirical1D::build(&data).unwrap(), 0.0).unwrap();
        for j in 0..6 {
            assert!(bar.state(j).sup_norm_diff(p.state(j)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn exercise_scaler_matches_scaled_pipeline() {
        let model = preset();
        let ds =
            simulate_dataset(&model, 300, 8, Censoring::Uniform { lo: 20.0, hi: 80.0 }).unwrap();
        let data = index(&ds, &model, &[]);
        let b = bar_estimators(
            &data,
            &AdaptedScaler::Exercise(model.payments.scaling.clone()),
            0.0,
        )
        .unwrap();
        let e = Empirical1D::build(&data).unwrap();
        let (bundle, p) = saj(&e, 0.0).unwrap();
        for j in 0..6 {
            assert!(
                b.at_risk(j)
                    .sup_norm_diff(e.at_risk(Weight::Scaled, j))
                    .unwrap()
                    < 1e-12
            );
            for k in 0..6 {
                for m in 0..data.grid().len() {
                    assert!((b.increment(j, k, m) - bundle.increment(j, k, m)).abs() < 1e-12);
                }
            }
        }
        let bar = forward_solve(&b).unwrap();
        for j in 0..6 {
            assert!(bar.state(j).sup_norm_diff(p.state(j)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn discount_factorizes() {
        let model = alive_dead();
        let ds = simulate_dataset(&model, 400, 2, Censoring::None).unwrap();
        let data = index(&ds, &model, &(1..40).map(f64::from).collect::<Vec<_>>());
        let b = bar_estimators(
            &data,
            &AdaptedScaler::parse("discount:delta=0.03", &model).unwrap(),
            0.0,
        )
        .unwrap();
        let bar = forward_solve(&b).unwrap();
        for (m, &t) in data.grid().times().iter().enumerate() {
            let survival = ds.iter().filter(|o| o.state_at(t) == 0).count() as f64 / 400.0;
            assert!((bar.state(0).value(m) - (-0.03 * t).exp() * survival).abs() < 1e-10);
        }
    }

    #[test]
    fn parse_errors() {
        let model = preset();
        assert!(AdaptedScaler::parse("discount:rate=1", &model).is_err());
        assert!(AdaptedScaler::parse("interest", &model).is_err());
        assert!(AdaptedScaler::parse("discount:delta=0.01,9=0.2", &model).is_err());
        match AdaptedScaler::parse("discount:delta=0.01,2=0.05", &model).unwrap() {
            AdaptedScaler::Discount(d) => assert_eq!(d[1], 0.05),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        #[test]
        fn recursion_equals_direct_average_without_censoring(seed in 0u64..300, d1 in 0.0f64..0.1, d2 in 0.0f64..0.1) {
            let model = preset();
            let ds = simulate_dataset(&model, 150, seed, Censoring::None).unwrap();
            let data = index(&ds, &model, &[]);
            let spec = format!("discount:delta={d1},2={d2}");
            let scaler = AdaptedScaler::parse(&spec, &model).unwrap();
            let b = bar_estimators(&data, &scaler, 0.0).unwrap();
            let bar = forward_solve(&b).unwrap();
            for j in 0..6 {
                prop_assert!(bar.state(j).sup_norm_diff(b.at_risk(j)).unwrap() < 1e-10);
            }
        }
    }
}
