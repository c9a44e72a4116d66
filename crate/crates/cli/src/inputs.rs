//! Certificate, control-law and initial-state inputs.

use mfgame::linalg::{Mat, Vector};
use mfgame::problem::{parse_grid, parse_schedule, GameProblem};
use mfgame::riccati::RiccatiTrajectory;
use mfgame::schedule::{MatFn, Schedule};
use mfgame::simulate::ControlSpec;
use serde_json::Value;

use crate::output::{CliError, CliResult};

fn parse_err(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// A certificate entry: explicit samples, or a multiple of the solved `X`.
#[derive(Debug, Clone)]
pub enum CertEntry {
    Samples(Schedule),
    XMultiple(f64),
}

impl CertEntry {
    pub fn resolve(&self, x: &RiccatiTrajectory, times: &[f64]) -> CliResult<Schedule> {
        match self {
            CertEntry::Samples(s) => Ok(s.clone()),
            CertEntry::XMultiple(c) => {
                if !x.is_global() {
                    return Err(parse_err("`x_multiple` certificates need a global X"));
                }
                let samples = times.iter().map(|t| x.eval(*t).map(|m| m * *c)).collect::<Result<Vec<_>, _>>()?;
                Ok(Schedule::new(times.to_vec(), samples).map_err(parse_err)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Standard,
    Swapped,
}

impl Frame {
    pub fn label(self) -> &'static str {
        match self {
            Frame::Standard => "standard",
            Frame::Swapped => "swapped",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertificateFile {
    pub frame: Frame,
    pub k: Option<CertEntry>,
    pub w: Option<CertEntry>,
    pub khat: Option<CertEntry>,
    pub what: Option<CertEntry>,
    pub phi: Option<CertEntry>,
    pub phihat: Option<CertEntry>,
}

/// `None` requests the constructive defaults: an empty object, or
/// `{"constructive": true}`.
pub fn parse_certificates(text: &str, horizon: f64) -> CliResult<Option<CertificateFile>> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err(format!("certificates: {e}")))?;
    let obj = v.as_object().ok_or_else(|| parse_err("certificates: expected an object"))?;
    if obj.is_empty() || obj.get("constructive").and_then(Value::as_bool) == Some(true) {
        return Ok(None);
    }
    let frame = match obj.get("orientation").and_then(Value::as_str) {
        None | Some("standard") => Frame::Standard,
        Some("swapped") => Frame::Swapped,
        Some(o) => return Err(parse_err(format!("certificates: unknown orientation `{o}`"))),
    };
    let grid = parse_grid(obj.get("grid"), horizon)?;
    let entry = |key: &str| -> CliResult<Option<CertEntry>> {
        let Some(x) = obj.get(key) else { return Ok(None) };
        if let Some(c) = x.get("x_multiple") {
            let c = c.as_f64().ok_or_else(|| parse_err(format!("{key}.x_multiple must be a number")))?;
            return Ok(Some(CertEntry::XMultiple(c)));
        }
        Ok(Some(CertEntry::Samples(parse_schedule(key, x, &grid)?)))
    };
    let file = CertificateFile {
        frame,
        k: entry("K")?,
        w: entry("W")?,
        khat: entry("Khat")?,
        what: entry("What")?,
        phi: entry("Phi")?,
        phihat: entry("Phihat")?,
    };
    if file.k.is_none() && file.phi.is_none() {
        return Err(parse_err("certificates: provide at least `K` or `Phi`"));
    }
    if file.k.is_none() && (file.w.is_some() || file.khat.is_some() || file.what.is_some()) {
        return Err(parse_err("certificates: `W`, `Khat`, `What` need `K`"));
    }
    if file.phi.is_none() && file.phihat.is_some() {
        return Err(parse_err("certificates: `Phihat` needs `Phi`"));
    }
    Ok(Some(file))
}

/// Control law `Γ x¹ + S w + Γ̂ x² + d` with any missing part zero.
pub fn parse_strategy(text: &str, p: &GameProblem) -> CliResult<ControlSpec> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err(format!("strategy: {e}")))?;
    let obj = v.as_object().ok_or_else(|| parse_err("strategy: expected an object"))?;
    let grid = parse_grid(obj.get("grid"), p.horizon())?;
    let (n, m, r) = (p.n(), p.lq.m, p.lq.noise_dim);
    let part = |key: &str, cols: usize| -> CliResult<MatFn> {
        let f = match obj.get(key) {
            Some(x) => MatFn::from_schedule(&parse_schedule(key, x, &grid)?),
            None => MatFn::zeros(m, cols),
        };
        if f.shape() != (m, cols) {
            return Err(parse_err(format!("strategy: `{key}` must be {m}x{cols}, got {:?}", f.shape())));
        }
        Ok(f)
    };
    Ok(ControlSpec {
        fluct_gain: part("fluct_gain", n)?,
        noise_gain: part("noise_gain", r)?,
        mean_gain: part("mean_gain", n)?,
        offset: part("offset", 1)?,
    })
}

pub fn parse_x0(text: &str, n: usize) -> CliResult<Vector> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(format!("--x0: `{s}` is not a number"))))
        .collect::<CliResult<Vec<_>>>()?;
    if values.len() != n {
        return Err(parse_err(format!("--x0 has {} entries, the state has dimension {n}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(parse_err("--x0 entries must be finite"));
    }
    Ok(Vector::from_vec(values))
}

/// Zero schedule with the shape of `like`.
pub fn zeros_like(rows: usize, cols: usize, horizon: f64) -> Schedule {
    Schedule::constant(Mat::zeros(rows, cols), horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_requests_defaults() {
        assert!(parse_certificates("{}", 1.0).unwrap().is_none());
        assert!(parse_certificates(r#"{"constructive": true}"#, 1.0).unwrap().is_none());
    }

    #[test]
    fn x_multiple_and_samples_parse() {
        let f = parse_certificates(r#"{"orientation": "swapped", "Phi": {"x_multiple": 1.5}, "K": [[1.0]]}"#, 1.0)
            .unwrap()
            .unwrap();
        assert_eq!(f.frame, Frame::Swapped);
        assert!(matches!(f.phi, Some(CertEntry::XMultiple(c)) if c == 1.5));
        assert!(matches!(f.k, Some(CertEntry::Samples(_))));
        assert!(f.w.is_none());
    }

    #[test]
    fn bad_x0_is_rejected() {
        assert!(parse_x0("1,2", 1).is_err());
        assert!(parse_x0("a", 1).is_err());
        assert_eq!(parse_x0(" -0.5 ", 1).unwrap()[0], -0.5);
    }
}
