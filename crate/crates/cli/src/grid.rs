//! `--grid axis=v1,v2,...` parsing and Cartesian expansion.

use std::str::FromStr;

use dica_core::downstream::PipelineConfig;
use dica_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    M,
    Epsilon,
    Lambda,
    SigmaX,
    Sigma1,
    Eta,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "m" => Axis::M,
            "epsilon" | "eps" => Axis::Epsilon,
            "lambda" => Axis::Lambda,
            "sigma-x" | "sigma_x" | "sigma2" => Axis::SigmaX,
            "sigma1" => Axis::Sigma1,
            "eta" => Axis::Eta,
            other => {
                return Err(Error::Config(format!(
                    "unknown grid axis `{other}` (expected m, epsilon, lambda, sigma-x, sigma1, eta)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, list) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid axis `{s}` is not of the form name=v1,v2")))?;
        let axis: Axis = name.trim().parse()?;
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("grid value `{v}` for {name} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Config(format!("grid axis {name} has no values")));
        }
        for &v in &values {
            let ok = match axis {
                Axis::M => v >= 1.0 && v.fract() == 0.0,
                _ => v > 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(Error::Config(format!("invalid {name} value {v}")));
            }
        }
        Ok(GridAxis { axis, values })
    }
}

fn apply(cfg: &mut PipelineConfig, axis: Axis, v: f64) {
    match axis {
        Axis::M => cfg.m = v as usize,
        Axis::Epsilon => cfg.epsilon = v,
        Axis::Lambda => cfg.lambda = v,
        Axis::SigmaX => cfg.sigma_x = Some(v),
        Axis::Sigma1 => cfg.sigma1 = Some(v),
        Axis::Eta => cfg.eta = v,
    }
}

/// Cartesian product over the axes, first axis outermost. No axes gives the
/// base config alone.
pub fn expand(base: &PipelineConfig, axes: &[GridAxis]) -> Vec<PipelineConfig> {
    let mut out = vec![*base];
    for ax in axes {
        out = out
            .iter()
            .flat_map(|c| {
                ax.values.iter().map(move |&v| {
                    let mut c = *c;
                    apply(&mut c, ax.axis, v);
                    c
                })
            })
            .collect();
    }
    out
}
