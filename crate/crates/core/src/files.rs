//! JSON system and certificate files.
//!
//! A system file holds `n`, `delays`, `matrices` and the optional sections
//! `initial`, `uncertainty` and `varying`. Matrices are row-major, either
//! nested (`[[a, b], [c, d]]`) or flat (`[a, b, c, d]`). Unknown fields are
//! rejected at every level.

use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lyapunov::{Certificate, CertificateKind};
use crate::simulator::{DelayPerturbation, VaryingDelay, VaryingDelayProfile};
use crate::systems::{DelaySystem, InitialFunction};
use crate::timevarying::VaryingBounds;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixRepr {
    fn into_matrix(self, n: usize, what: &str) -> Result<DMatrix<f64>> {
        let flat: Vec<f64> = match self {
            Self::Nested(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch(format!("{what} must be {n}x{n}")));
                }
                rows.concat()
            }
            Self::Flat(values) => values,
        };
        if flat.len() != n * n {
            return Err(Error::DimensionMismatch(format!("{what} has {} entries, expected {}", flat.len(), n * n)));
        }
        Ok(DMatrix::from_row_slice(n, n, &flat))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UncertaintySection {
    deltas: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaryingEntry {
    r0: f64,
    delta: f64,
    delta1: f64,
    #[serde(default)]
    perturbation: Option<DelayPerturbation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    n: usize,
    delays: Vec<f64>,
    matrices: Vec<MatrixRepr>,
    #[serde(default)]
    initial: Option<InitialFunction>,
    #[serde(default)]
    uncertainty: Option<UncertaintySection>,
    #[serde(default)]
    varying: Option<Vec<VaryingEntry>>,
}

/// Time-varying section: certificate bounds plus the simulation profile.
#[derive(Debug, Clone, PartialEq)]
pub struct VaryingSection {
    pub bounds: VaryingBounds,
    pub profile: VaryingDelayProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSystem {
    pub system: DelaySystem,
    pub initial: Option<InitialFunction>,
    pub uncertainty: Option<Vec<f64>>,
    pub varying: Option<VaryingSection>,
}

/// Failure to read a file, with the JSON location when parsing failed.
#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("validation error: {0}")]
    Validation(#[from] Error),
}

pub fn parse_system(text: &str) -> std::result::Result<LoadedSystem, LoadError> {
    let raw: SystemFile = serde_json::from_str(text)?;
    Ok(build_system(raw)?)
}

fn build_system(raw: SystemFile) -> Result<LoadedSystem> {
    if raw.matrices.len() != raw.delays.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrices for {} delays",
            raw.matrices.len(),
            raw.delays.len()
        )));
    }
    let matrices = raw
        .matrices
        .into_iter()
        .enumerate()
        .map(|(k, m)| m.into_matrix(raw.n, &format!("matrix A_{}", k + 1)))
        .collect::<Result<Vec<_>>>()?;
    let system = DelaySystem::new(matrices, raw.delays)?;
    if let Some(phi) = &raw.initial {
        phi.validate(system.dim(), system.max_delay())?;
    }
    let uncertainty = match raw.uncertainty {
        Some(u) => {
            if u.deltas.len() != system.num_delays() {
                return Err(Error::DimensionMismatch(format!(
                    "{} uncertainty radii for {} delays",
                    u.deltas.len(),
                    system.num_delays()
                )));
            }
            if let Some(d) = u.deltas.iter().find(|d| !(**d >= 0.0)) {
                return Err(Error::InvalidInput(format!("uncertainty radius {d} must be nonnegative")));
            }
            Some(u.deltas)
        }
        None => None,
    };
    let varying = match raw.varying {
        Some(entries) => Some(build_varying(&system, entries)?),
        None => None,
    };
    Ok(LoadedSystem { system, initial: raw.initial, uncertainty, varying })
}

fn build_varying(system: &DelaySystem, entries: Vec<VaryingEntry>) -> Result<VaryingSection> {
    if entries.len() != system.num_delays() {
        return Err(Error::DimensionMismatch(format!(
            "{} varying entries for {} delays",
            entries.len(),
            system.num_delays()
        )));
    }
    let mut delays = Vec::with_capacity(entries.len());
    for (k, (e, &r)) in entries.into_iter().zip(system.delays()).enumerate() {
        if (e.r0 - r).abs() > 1e-12 * r.abs().max(1.0) {
            return Err(Error::InvalidInput(format!("varying entry {} has r0 = {} but delay is {r}", k + 1, e.r0)));
        }
        delays.push(VaryingDelay {
            r0: e.r0,
            delta: e.delta,
            delta1: e.delta1,
            perturbation: e.perturbation.unwrap_or(DelayPerturbation::Zero),
        });
    }
    let bounds = VaryingBounds {
        delta: delays.iter().map(|d| d.delta).collect(),
        delta1: delays.iter().map(|d| d.delta1).collect(),
    };
    Ok(VaryingSection { bounds, profile: VaryingDelayProfile { delays } })
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Serialise a system (without optional sections) in the file schema.
pub fn system_json(system: &DelaySystem) -> Value {
    json!({
        "n": system.dim(),
        "delays": system.delays(),
        "matrices": system.matrices().iter().map(matrix_json).collect::<Vec<_>>(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateFile {
    #[serde(rename = "P")]
    p: Vec<MatrixRepr>,
    mu: f64,
    #[serde(default)]
    #[allow(dead_code)]
    alpha_exp: Option<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    alpha_l2: Option<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    kind: Option<String>,
    #[serde(default)]
    #[allow(dead_code)]
    verified: Option<bool>,
    #[serde(default)]
    #[allow(dead_code)]
    min_eig_margin: Option<f64>,
}

/// Matrices and rate of a certificate file; the stored diagnostics are
/// ignored because verification recomputes them.
pub fn parse_certificate(text: &str, n: usize) -> std::result::Result<(Vec<DMatrix<f64>>, f64), LoadError> {
    let raw: CertificateFile = serde_json::from_str(text)?;
    let p = raw
        .p
        .into_iter()
        .enumerate()
        .map(|(k, m)| m.into_matrix(n, &format!("P_{}", k + 1)))
        .collect::<Result<Vec<_>>>()?;
    Ok((p, raw.mu))
}

pub fn certificate_json(cert: &Certificate) -> Value {
    json!({
        "P": cert.p_list.iter().map(matrix_json).collect::<Vec<_>>(),
        "mu": cert.mu,
        "alpha_exp": cert.alpha_exp,
        "alpha_l2": cert.alpha_l2,
        "kind": match cert.kind {
            CertificateKind::Exponential => "exponential",
            CertificateKind::L2Exponential => "l2_exponential",
        },
        "verified": cert.verified,
        "min_eig_margin": cert.min_eig_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::verify_certificate;
    use nalgebra::dmatrix;

    const PLANAR: &str = r#"{"n": 2, "delays": [3.1415926535897931],
        "matrices": [[[0.5, -0.3], [0.35, 0.0]]],
        "uncertainty": {"deltas": [0.01]}}"#;

    #[test]
    fn parses_nested_and_flat() {
        let a = parse_system(PLANAR).unwrap();
        assert_eq!(a.system.dim(), 2);
        assert_eq!(a.system.delays(), &[std::f64::consts::PI]);
        assert_eq!(a.uncertainty, Some(vec![0.01]));
        let flat = parse_system(r#"{"n": 2, "delays": [1.0], "matrices": [[0.5, -0.3, 0.35, 0.0]]}"#).unwrap();
        assert_eq!(flat.system.matrices()[0], a.system.matrices()[0]);
    }

    #[test]
    fn rejects_bad_files() {
        let e = parse_system(r#"{"n": 1, "delays": [2, 1], "matrices": [[0.5], [0.2]]}"#).unwrap_err();
        assert!(matches!(e, LoadError::Validation(Error::NonIncreasingDelays { .. })));
        let e = parse_system(r#"{"n": 1, "delays": [1], "matrices": [[0.5]], "extra": 1}"#).unwrap_err();
        assert!(matches!(e, LoadError::Parse(_)));
        assert!(e.to_string().contains("line"));
        let e = parse_system(r#"{"n": 2, "delays": [1], "matrices": [[0.5]]}"#).unwrap_err();
        assert!(matches!(e, LoadError::Validation(Error::DimensionMismatch(_))));
    }

    #[test]
    fn system_round_trip() {
        let a = parse_system(PLANAR).unwrap();
        let text = serde_json::to_string(&system_json(&a.system)).unwrap();
        assert_eq!(parse_system(&text).unwrap().system, a.system);
    }

    #[test]
    fn certificate_round_trip() {
        let a = parse_system(PLANAR).unwrap();
        let p = dmatrix![22.8565, -16.3276; -16.3276, 19.5955];
        let cert = verify_certificate(&a.system, &[p.clone()], 0.3584).unwrap();
        let text = crate::format::to_json_string(&certificate_json(&cert));
        let (back, mu) = parse_certificate(&text, 2).unwrap();
        assert_eq!(back[0], p);
        assert_eq!(mu, 0.3584);
    }
}
