use std::sync::Arc;

use serde::Deserialize;

use super::{
    solve_equivalence_benefit, HazardSet, Model, PayFn, PaymentSpec, Rate, RateSegment,
    ReserveTable, Scaling, StateSpace, TechnicalBasis,
};
use crate::error::{Error, Result};

/// Built-in six-state free-policy model.
pub const FREEPOLICY6_TOML: &str = include_str!("../../presets/freepolicy6.toml");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub states: StatesConfig,
    #[serde(default)]
    pub basis: Option<TechnicalBasis>,
    #[serde(default)]
    pub rates: Vec<RateConfig>,
    pub payments: PaymentsConfig,
}

fn default_horizon() -> f64 {
    40.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatesConfig {
    pub labels: Vec<String>,
    #[serde(default)]
    pub names: Vec<String>,
    pub pre: Vec<String>,
    pub post: Vec<String>,
    pub initial: String,
    #[serde(default)]
    pub absorbing: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub from: String,
    pub to: String,
    pub rate: Rate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentsConfig {
    #[serde(default)]
    pub b0: f64,
    #[serde(default = "default_scaling")]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub sojourn: Vec<SojournConfig>,
    #[serde(default)]
    pub lump: Vec<LumpConfig>,
    #[serde(default)]
    pub transition: Vec<TransitionConfig>,
}

fn default_scaling() -> ScalingConfig {
    ScalingConfig::One
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalingConfig {
    One,
    Constant { value: f64 },
    FreePolicy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RateValue {
    Number(f64),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SojournConfig {
    pub state: String,
    #[serde(default)]
    pub start: f64,
    #[serde(default = "infinity")]
    pub end: f64,
    pub rate: RateValue,
}

fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LumpConfig {
    pub state: String,
    pub time: f64,
    pub amount: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionConfig {
    pub from: String,
    pub to: String,
    pub amount: PayFnConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayFnConfig {
    Constant { value: f64 },
    TechnicalReserve,
    BenefitReserve,
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn build(&self) -> Result<Model> {
        let c = &self.states;
        let idx = |label: &str| {
            c.labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::config(format!("unknown state {label:?}")))
        };
        for l in c.pre.iter().chain(&c.post).chain(&c.absorbing) {
            idx(l)?;
        }
        let pre: Vec<bool> = c.labels.iter().map(|l| c.pre.contains(l)).collect();
        for l in &c.labels {
            if c.pre.contains(l) == c.post.contains(l) {
                return Err(Error::config(format!(
                    "state {l:?} must be in exactly one of pre and post"
                )));
            }
        }
        let absorbing = c.labels.iter().map(|l| c.absorbing.contains(l)).collect();
        let states = StateSpace::new(c.labels.clone(), pre, absorbing, idx(&c.initial)?)?;

        let rates = self
            .rates
            .iter()
            .map(|r| Ok((idx(&r.from)?, idx(&r.to)?, r.rate.clone())))
            .collect::<Result<Vec<_>>>()?;
        let hazards = HazardSet::new(&states, rates, self.horizon)?;

        let needs_basis = matches!(self.payments.scaling, ScalingConfig::FreePolicy)
            || self
                .payments
                .sojourn
                .iter()
                .any(|s| matches!(s.rate, RateValue::Named(_)))
            || self
                .payments
                .transition
                .iter()
                .any(|t| !matches!(t.amount, PayFnConfig::Constant { .. }));
        let (table, benefit_rate) = match (&self.basis, needs_basis) {
            (Some(basis), true) => {
                let beta = solve_equivalence_benefit(basis)?;
                (Some(Arc::new(ReserveTable::new(basis, beta)?)), Some(beta))
            }
            (None, true) => {
                return Err(Error::config(
                    "payments refer to the technical basis but no [basis] section is given",
                ))
            }
            _ => (None, None),
        };

        let p = &self.payments;
        let scaling = match p.scaling {
            ScalingConfig::One => Scaling::One,
            ScalingConfig::Constant { value } => Scaling::Constant(value),
            ScalingConfig::FreePolicy => Scaling::FreePolicy(table.clone().expect("basis")),
        };
        let mut payments = PaymentSpec::new(states.len(), p.b0, scaling);
        for s in &p.sojourn {
            let rate = match &s.rate {
                RateValue::Number(x) => *x,
                RateValue::Named(name) if name == "benefit" => benefit_rate.expect("basis"),
                RateValue::Named(name) => {
                    return Err(Error::config(format!("unknown sojourn rate {name:?}")))
                }
            };
            if !(s.end > s.start) {
                return Err(Error::config("sojourn segment must have end > start"));
            }
            payments.sojourn[idx(&s.state)?].segments.push(RateSegment {
                start: s.start,
                end: s.end,
                rate,
            });
        }
        for l in &p.lump {
            payments.sojourn[idx(&l.state)?]
                .lumps
                .push((l.time, l.amount));
        }
        for t in &p.transition {
            let f = match t.amount {
                PayFnConfig::Constant { value } => PayFn::Constant(value),
                PayFnConfig::TechnicalReserve => {
                    PayFn::TechnicalReserve(table.clone().expect("basis"))
                }
                PayFnConfig::BenefitReserve => PayFn::BenefitReserve(table.clone().expect("basis")),
            };
            payments.set_transition(idx(&t.from)?, idx(&t.to)?, f);
        }

        let mut model = Model::new(self.name.clone(), states, hazards, payments, self.horizon)?;
        model.basis = self.basis.clone();
        model.benefit_rate = benefit_rate;
        Ok(model)
    }
}
