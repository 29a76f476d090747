//! Scaled Nelson–Aalen and Aalen–Johansen estimators, and the change-of-measure
//! comparator.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::empirical::{Empirical1D, Weight};
use crate::error::{Error, Result};
use crate::model::{Scaling, StateSpace};
use crate::seed::{item_rng, stage_seed};
use crate::simulate::{CensoredObservation, Jump};
use crate::timegrid::{EventGrid, Step1D};

/// Cumulative hazards with the diagonal convention of the scaled estimator:
/// rows in the pre-exercise set are closed by unscaled exits, post-exercise rows
/// by scaled exits.
#[derive(Debug, Clone)]
pub struct HazardBundle1D {
    grid: EventGrid,
    n_states: usize,
    pre: Vec<bool>,
    eps: f64,
    scaled: Vec<Vec<f64>>,
    unscaled: Vec<Vec<f64>>,
    warnings: usize,
}

fn nelson_aalen_pair(
    e: &Empirical1D,
    w: Weight,
    j: usize,
    k: usize,
    eps: f64,
) -> (Vec<f64>, usize) {
    let len = e.grid().len();
    let mut inc = vec![0.0; len];
    let mut warnings = 0;
    if j == k {
        return (inc, 0);
    }
    let events = e.events(w, j, k);
    let at_risk = e.at_risk(w, j);
    for m in 1..len {
        let dn = events.increment(m);
        if dn == 0.0 {
            continue;
        }
        let denom = at_risk.value(m - 1).max(eps);
        if denom > 0.0 {
            inc[m] = dn / denom;
        } else {
            warnings += 1;
        }
    }
    (inc, warnings)
}

/// Nelson–Aalen increments `dN / (I(s-) ∨ eps)` with the given weighting.
pub fn nelson_aalen(e: &Empirical1D, w: Weight, eps: f64) -> Result<HazardBundle1D> {
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!(
            "eps must be nonnegative, got {eps}"
        )));
    }
    let s = e.n_states();
    let run = |w: Weight| -> (Vec<Vec<f64>>, usize) {
        let parts: Vec<(Vec<f64>, usize)> = (0..s * s)
            .into_par_iter()
            .map(|i| nelson_aalen_pair(e, w, i / s, i % s, eps))
            .collect();
        let warnings = parts.iter().map(|p| p.1).sum();
        (parts.into_iter().map(|p| p.0).collect(), warnings)
    };
    let (scaled, warnings) = run(w);
    let (unscaled, uw) = match w {
        Weight::Scaled => run(Weight::Unscaled),
        Weight::Unscaled => (scaled.clone(), 0),
    };
    if uw > 0 {
        log::debug!("{uw} unscaled events met an empty risk set");
    }
    if warnings > 0 {
        log::warn!("{warnings} events met an empty risk set and were dropped");
    }
    Ok(HazardBundle1D {
        grid: e.grid().clone(),
        n_states: s,
        pre: (0..s).map(|j| e.is_pre(j)).collect(),
        eps,
        scaled,
        unscaled,
        warnings,
    })
}

/// Scaled Nelson–Aalen estimator.
pub fn nelson_aalen_scaled(e: &Empirical1D, eps: f64) -> Result<HazardBundle1D> {
    nelson_aalen(e, Weight::Scaled, eps)
}

impl HazardBundle1D {
    pub fn grid(&self) -> &EventGrid {
        &self.grid
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Number of event increments dropped because the floored risk set was empty.
    pub fn warnings(&self) -> usize {
        self.warnings
    }

    pub fn is_pre(&self, j: usize) -> bool {
        self.pre[j]
    }

    /// `ΔΛ_jk(t_m)`, including the diagonal.
    pub fn increment(&self, j: usize, k: usize, m: usize) -> f64 {
        if j != k {
            return self.scaled[j * self.n_states + k][m];
        }
        let src = if self.pre[j] {
            &self.unscaled
        } else {
            &self.scaled
        };
        -(0..self.n_states)
            .filter(|l| *l != j)
            .map(|l| src[j * self.n_states + l][m])
            .sum::<f64>()
    }

    /// `ΔΛ_jk(t_m)` without scaling.
    pub fn unscaled_increment(&self, j: usize, k: usize, m: usize) -> f64 {
        self.unscaled[j * self.n_states + k][m]
    }

    pub fn cumulative(&self, j: usize, k: usize) -> Step1D {
        let inc: Vec<f64> = (0..self.grid.len())
            .map(|m| self.increment(j, k, m))
            .collect();
        Step1D::from_increments(self.grid.clone(), &inc).expect("grid length")
    }

    pub fn cumulative_unscaled(&self, j: usize, k: usize) -> Step1D {
        Step1D::from_increments(self.grid.clone(), &self.unscaled[j * self.n_states + k])
            .expect("grid length")
    }

    /// Pairs `(j, k)`, `j != k`, with a nonzero increment somewhere.
    pub fn active_pairs(&self) -> Vec<(usize, usize)> {
        let s = self.n_states;
        (0..s * s)
            .filter(|i| i / s != i % s && self.scaled[*i].iter().any(|v| *v != 0.0))
            .map(|i| (i / s, i % s))
            .collect()
    }

    /// Long-format CSV: `t,from,to,cumulative`.
    pub fn write_csv<W: Write>(&self, out: W, states: &StateSpace) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "from", "to", "cumulative"])?;
        for (j, k) in self.active_pairs() {
            let c = self.cumulative(j, k);
            for (t, v) in self.grid.times().iter().zip(c.values()) {
                w.write_record([
                    t.to_string(),
                    states.label(j).into(),
                    states.label(k).into(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Occupation probabilities `p_j(t)` per state.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationCurve {
    curves: Vec<Step1D>,
}

impl OccupationCurve {
    pub fn new(curves: Vec<Step1D>) -> Result<Self> {
        if let Some(first) = curves.first() {
            for c in &curves[1..] {
                first.grid().check_same(c.grid(), "occupation curve")?;
            }
        } else {
            return Err(Error::invalid("occupation curve without states"));
        }
        Ok(Self { curves })
    }

    pub fn grid(&self) -> &EventGrid {
        self.curves[0].grid()
    }

    pub fn n_states(&self) -> usize {
        self.curves.len()
    }

    pub fn state(&self, j: usize) -> &Step1D {
        &self.curves[j]
    }

    pub fn curves(&self) -> &[Step1D] {
        &self.curves
    }

    /// Wide CSV: `t,p_<label>...`.
    pub fn write_csv<W: Write>(&self, out: W, states: &StateSpace) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.n_states()).map(|j| format!("p_{}", states.label(j))));
        w.write_record(&header)?;
        for (m, t) in self.grid().times().iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.curves.iter().map(|c| c.value(m).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Forward recursion `p_j(m) = p_j(m-1) + Σ_k p_k(m-1) ΔΛ_kj(m)` from `p(0) = e_z0`.
pub fn aalen_johansen_scaled(bundle: &HazardBundle1D, z0: usize) -> Result<OccupationCurve> {
    let s = bundle.n_states;
    if z0 >= s {
        return Err(Error::invalid(format!("initial state {z0} out of range")));
    }
    let len = bundle.grid.len();
    let mut values = vec![vec![0.0; len]; s];
    values[z0][0] = 1.0;
    let mut prev = vec![0.0; s];
    prev[z0] = 1.0;
    let mut next = vec![0.0; s];
    for m in 1..len {
        next.copy_from_slice(&prev);
        for k in 0..s {
            if prev[k] == 0.0 {
                continue;
            }
            for (j, n) in next.iter_mut().enumerate() {
                let d = bundle.increment(k, j, m);
                if d != 0.0 {
                    *n += prev[k] * d;
                }
            }
        }
        for j in 0..s {
            values[j][m] = next[j];
        }
        std::mem::swap(&mut prev, &mut next);
    }
    OccupationCurve::new(
        values
            .into_iter()
            .map(|v| Step1D::new(bundle.grid.clone(), v).expect("grid length"))
            .collect(),
    )
}

/// Classical Aalen–Johansen estimator from unscaled processes.
pub fn aalen_johansen(e: &Empirical1D, eps: f64) -> Result<(HazardBundle1D, OccupationCurve)> {
    let bundle = nelson_aalen(e, Weight::Unscaled, eps)?;
    let p = aalen_johansen_scaled(&bundle, e.initial())?;
    Ok((bundle, p))
}

/// Scaled Nelson–Aalen followed by the scaled Aalen–Johansen recursion.
pub fn saj(e: &Empirical1D, eps: f64) -> Result<(HazardBundle1D, OccupationCurve)> {
    let bundle = nelson_aalen_scaled(e, eps)?;
    let p = aalen_johansen_scaled(&bundle, e.initial())?;
    Ok((bundle, p))
}

pub const CEMETERY: &str = "∇";

/// Sends each exercised path to the cemetery at exercise with probability
/// `1 - rho`, using one auxiliary uniform on `(0, 1]` per individual.
///
/// Returns the transformed data and the state space extended by the cemetery.
pub fn cmaj_transform(
    dataset: &[CensoredObservation],
    states: &StateSpace,
    scaling: &Scaling,
    aux_seed: u64,
) -> Result<(Vec<CensoredObservation>, StateSpace)> {
    let extended = states.with_cemetery(CEMETERY)?;
    let cemetery = states.len();
    let stage = stage_seed(aux_seed, "cmaj");
    let out = dataset
        .iter()
        .map(|o| {
            let Some(pos) = o.jumps.iter().position(|j| states.is_exercise(j.from, j.to)) else {
                return Ok(o.clone());
            };
            let ex = o.jumps[pos];
            let rho = scaling.rho(ex.time, ex.from, ex.to);
            if rho > 1.0 {
                return Err(Error::invalid(format!(
                    "scaling factor {rho} > 1 at t = {}: the change-of-measure estimator needs a reparametrized model",
                    ex.time
                )));
            }
            let u = 1.0 - item_rng(stage, o.id).random::<f64>();
            if u <= rho {
                return Ok(o.clone());
            }
            let mut jumps = o.jumps[..pos].to_vec();
            jumps.push(Jump {
                time: ex.time,
                from: ex.from,
                to: cemetery,
            });
            Ok(CensoredObservation {
                id: o.id,
                initial: o.initial,
                jumps,
                censoring: o.censoring,
                absorbed: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, extended))
}
