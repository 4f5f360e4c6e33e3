//! Plant descriptors and the plant file format.
//!
//! A plant file is line oriented; `#` starts a comment.
//!
//! ```text
//! growth d_f=1 rho_f=1          # optional: |f_n| <= n! D_f rho_f^-(n-1)
//! bound D=1 rho=1 mu=1 nu=1     # optional: coefficient-bound constants
//! b n=2 P=0,0 coeffs=1          # b^(n)_P(x) = sum_k coeffs[k] x^k
//! b n=3 P=1,0,0 coeffs=0,-1/2
//! ```
//!
//! Coefficients are exact rationals (`p` or `p/q`). An empty file is the
//! zero plant.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use backstep_core::gapcascade::{
    pdae_plant_family, plant_series_from_family, CfMetadata, FamilyRole, GapCoefficientFamily,
};
use backstep_core::poly::{Rational, UPoly};
use backstep_core::volterra::{Growth, VolterraKernelSeries};
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantDescriptor {
    /// Registry key, currently only `pdae`.
    Builtin(String),
    File(PathBuf),
}

impl PlantDescriptor {
    /// `pdae` names the builtin; anything else is a path.
    pub fn parse(s: &str) -> Self {
        match s {
            "pdae" | "builtin:pdae" => Self::Builtin("pdae".into()),
            other => Self::File(PathBuf::from(other)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Builtin(k) => k.clone(),
            Self::File(p) => p.display().to_string(),
        }
    }

    pub fn load(&self) -> Result<Plant> {
        match self {
            Self::Builtin(k) if k == "pdae" => Ok(Plant::pdae()),
            Self::Builtin(k) => Err(HarnessError::Config(format!("unknown builtin plant '{k}'"))),
            Self::File(p) => parse_plant_file(p),
        }
    }
}

/// Validated plant: the exact gap family and the matching f64 series.
#[derive(Debug, Clone)]
pub struct Plant {
    pub name: String,
    pub family: GapCoefficientFamily,
    pub series: VolterraKernelSeries,
}

impl Plant {
    pub fn pdae() -> Self {
        let meta = CfMetadata {
            d: 1.0,
            rho: 1.0,
            mu: 1.0,
            nu: 1.0,
        };
        let family = pdae_plant_family().with_metadata(meta);
        let series = plant_series_from_family(&family)
            .expect("builtin family is valid")
            .with_growth(Growth {
                d_f: 1.0,
                rho_f: 1.0,
            });
        Self {
            name: "pdae".into(),
            family,
            series,
        }
    }
}

fn parse_rational(tok: &str) -> Option<Rational> {
    BigRational::from_str(tok.trim()).ok()
}

fn parse_f64(key: &str, v: &str, line: usize) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite() && *x > 0.0)
        .ok_or_else(|| HarnessError::PlantParse {
            line,
            message: format!("{key} must be a positive number, got '{v}'"),
        })
}

fn fields(rest: &str, line: usize) -> Result<Vec<(String, String)>> {
    rest.split_whitespace()
        .map(|t| {
            t.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| HarnessError::PlantParse {
                    line,
                    message: format!("expected key=value, got '{t}'"),
                })
        })
        .collect()
}

pub fn parse_plant(text: &str, name: &str) -> Result<Plant> {
    let mut family = GapCoefficientFamily::new(FamilyRole::PlantB);
    let mut growth = None;
    let mut meta = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (head, rest) = content
            .split_once(char::is_whitespace)
            .unwrap_or((content, ""));
        let kv = fields(rest, line)?;
        let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let need = |k: &str| {
            get(k).ok_or_else(|| HarnessError::PlantParse {
                line,
                message: format!("'{head}' line is missing {k}="),
            })
        };
        match head {
            "growth" => {
                growth = Some(Growth {
                    d_f: parse_f64("d_f", need("d_f")?, line)?,
                    rho_f: parse_f64("rho_f", need("rho_f")?, line)?,
                });
            }
            "bound" => {
                meta = Some(CfMetadata {
                    d: parse_f64("D", need("D")?, line)?,
                    rho: parse_f64("rho", need("rho")?, line)?,
                    mu: parse_f64("mu", need("mu")?, line)?,
                    nu: parse_f64("nu", need("nu")?, line)?,
                });
            }
            "b" => {
                let err = |message: String| HarnessError::PlantParse { line, message };
                let n: usize = need("n")?
                    .parse()
                    .map_err(|_| err("n must be an integer".into()))?;
                if n < 2 {
                    return Err(err(format!(
                        "order n = {n}: plant expansions start at order 2"
                    )));
                }
                let p: Vec<u32> = need("P")?
                    .split(',')
                    .map(|t| t.trim().parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        err("P must be a comma-separated list of nonnegative integers".into())
                    })?;
                if p.len() != n {
                    return Err(err(format!("P has {} entries, order is {n}", p.len())));
                }
                let coeffs: Vec<Rational> = need("coeffs")?
                    .split(',')
                    .map(parse_rational)
                    .collect::<Option<_>>()
                    .ok_or_else(|| err("coefficients must be exact rationals p or p/q".into()))?;
                family.add(n, p, &UPoly::from_coeffs(coeffs))?;
            }
            other => {
                return Err(HarnessError::PlantParse {
                    line,
                    message: format!("unknown directive '{other}'"),
                })
            }
        }
    }
    if let Some(m) = meta {
        family = family.with_metadata(m);
    }
    let mut series = plant_series_from_family(&family)?;
    if let Some(g) = growth {
        series = series.with_growth(g);
    }
    Ok(Plant {
        name: name.to_string(),
        family,
        series,
    })
}

pub fn parse_plant_file(path: &Path) -> Result<Plant> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_plant(&text, &path.display().to_string())
}
