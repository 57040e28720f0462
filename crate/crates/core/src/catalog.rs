//! Built-in system and certificate files.
//!
//! All files are embedded at compile time; none is read from disk.

use nalgebra::DMatrix;

use crate::files::{parse_certificate, parse_system, LoadedSystem};

#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub name: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

pub const SYSTEMS: &[Entry] = &[
    Entry {
        name: "commensurate-pair",
        description: "scalar, delays 1 and 2, coefficients 3/4 and -3/4",
        text: include_str!("../data/commensurate-pair.json"),
    },
    Entry {
        name: "detuned-pair",
        description: "commensurate-pair with the second delay moved to 2 + pi/10",
        text: include_str!("../data/detuned-pair.json"),
    },
    Entry {
        name: "planar-single",
        description: "2x2 system with one delay pi",
        text: include_str!("../data/planar-single.json"),
    },
    Entry {
        name: "scalar-triple",
        description: "scalar, delays 1, sqrt 2 and 2 pi",
        text: include_str!("../data/scalar-triple.json"),
    },
];

pub const CERTIFICATES: &[Entry] = &[
    Entry {
        name: "planar-single",
        description: "nominal exponential certificate",
        text: include_str!("../data/planar-single.cert.json"),
    },
    Entry {
        name: "scalar-triple",
        description: "nominal L2-exponential certificate",
        text: include_str!("../data/scalar-triple.cert.json"),
    },
    Entry {
        name: "planar-single-robust",
        description: "certificate for the uncertainty radius 0.01",
        text: include_str!("../data/planar-single-robust.cert.json"),
    },
    Entry {
        name: "scalar-triple-robust",
        description: "certificate for the uncertainty radii (0.01, 0.03, 0.1)",
        text: include_str!("../data/scalar-triple-robust.cert.json"),
    },
];

fn find(entries: &[Entry], name: &str) -> Option<&'static str> {
    entries.iter().find(|e| e.name == name).map(|e| e.text)
}

/// Parsed built-in system. Panics if an embedded file is malformed.
pub fn system(name: &str) -> Option<LoadedSystem> {
    find(SYSTEMS, name).map(|text| parse_system(text).expect("embedded system file is valid"))
}

/// Parsed built-in certificate `(P_1, ..., P_N, mu)`.
pub fn certificate(name: &str, n: usize) -> Option<(Vec<DMatrix<f64>>, f64)> {
    find(CERTIFICATES, name).map(|text| parse_certificate(text, n).expect("embedded certificate file is valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_entries_parse() {
        for e in SYSTEMS {
            let loaded = system(e.name).unwrap();
            assert!(loaded.initial.is_some(), "{}", e.name);
        }
        for (cert, sys) in [
            ("planar-single", "planar-single"),
            ("scalar-triple", "scalar-triple"),
            ("planar-single-robust", "planar-single"),
            ("scalar-triple-robust", "scalar-triple"),
        ] {
            let s = system(sys).unwrap().system;
            let (p, _) = certificate(cert, s.dim()).unwrap();
            assert_eq!(p.len(), s.num_delays());
        }
    }

    #[test]
    fn varying_sections_present() {
        let planar = system("planar-single").unwrap();
        let v = planar.varying.unwrap();
        assert_eq!(v.bounds.delta1, vec![0.25]);
        let triple = system("scalar-triple").unwrap();
        assert_eq!(triple.varying.unwrap().bounds.delta, vec![0.5, 0.15, 1.0]);
        assert_eq!(triple.uncertainty.unwrap(), vec![0.01, 0.03, 0.1]);
    }
}
