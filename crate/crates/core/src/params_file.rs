//! Versioned JSON document holding one learned parameter set.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::schedule::{ScheduleDescriptor, ScheduleSpec};
use crate::solver::{Mode, RawStep, SolverParams, STEP_FIELDS};

pub const FORMAT_VERSION: u32 = 1;

const FIELD_NAMES: [&str; STEP_FIELDS] = ["gamma", "tau_u_raw", "tau_v_raw", "kappa_u", "kappa_v"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepArrays {
    pub gamma: Vec<f64>,
    pub tau_u_raw: Vec<f64>,
    pub tau_v_raw: Vec<f64>,
    pub kappa_u: Vec<f64>,
    pub kappa_v: Vec<f64>,
}

impl StepArrays {
    fn from_steps(set: &[RawStep]) -> Self {
        let col = |f: usize| set.iter().map(|s| s.fields()[f]).collect::<Vec<_>>();
        StepArrays {
            gamma: col(0),
            tau_u_raw: col(1),
            tau_v_raw: col(2),
            kappa_u: col(3),
            kappa_v: col(4),
        }
    }

    fn columns(&self) -> [&Vec<f64>; STEP_FIELDS] {
        [
            &self.gamma,
            &self.tau_u_raw,
            &self.tau_v_raw,
            &self.kappa_u,
            &self.kappa_v,
        ]
    }

    fn to_steps(&self) -> Vec<RawStep> {
        let cols = self.columns();
        (0..self.gamma.len())
            .map(|i| RawStep::from_fields(std::array::from_fn(|f| cols[f][i])))
            .collect()
    }
}

/// Where a parameter set came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub loss_kind: Option<String>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub format_version: u32,
    pub schedule: ScheduleDescriptor,
    #[serde(rename = "M")]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub pred: StepArrays,
    pub corr: StepArrays,
    pub raw_steps: Vec<f64>,
    #[serde(default)]
    pub provenance: Provenance,
}

/// Everything stored next to the arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsMeta {
    pub schedule: ScheduleSpec,
    pub mode: Option<Mode>,
    pub provenance: Provenance,
}

impl ParamsMeta {
    pub fn new(schedule: ScheduleSpec) -> Self {
        ParamsMeta {
            schedule,
            mode: None,
            provenance: Provenance::default(),
        }
    }
}

impl ParamsFile {
    pub fn new(params: &SolverParams, meta: &ParamsMeta) -> Result<Self> {
        let file = ParamsFile {
            format_version: FORMAT_VERSION,
            schedule: ScheduleDescriptor::from(&meta.schedule),
            steps: params.steps(),
            mode: meta.mode,
            pred: StepArrays::from_steps(&params.pred),
            corr: StepArrays::from_steps(&params.corr),
            raw_steps: params.raw_steps.clone(),
            provenance: meta.provenance.clone(),
        };
        file.check()?;
        Ok(file)
    }

    /// Lengths and finiteness, reported with the path of the offending field.
    pub fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.steps == 0 {
            return Err(Error::Argument("M must be at least 1".into()));
        }
        let mut arrays: Vec<(String, &Vec<f64>, usize)> = Vec::new();
        for (set, arr, len) in [("pred", &self.pred, self.steps), ("corr", &self.corr, self.steps - 1)] {
            for (name, col) in FIELD_NAMES.iter().zip(arr.columns()) {
                arrays.push((format!("{set}.{name}"), col, len));
            }
        }
        arrays.push(("raw_steps".into(), &self.raw_steps, self.steps));
        for (path, col, len) in arrays {
            if col.len() != len {
                return Err(Error::LengthMismatch {
                    field: path,
                    expected: len,
                    found: col.len(),
                });
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{path}[{i}]")));
            }
        }
        ScheduleSpec::try_from(&self.schedule)?;
        Ok(())
    }

    pub fn params(&self) -> SolverParams {
        SolverParams {
            pred: self.pred.to_steps(),
            corr: self.corr.to_steps(),
            raw_steps: self.raw_steps.clone(),
        }
    }

    pub fn schedule_spec(&self) -> Result<ScheduleSpec> {
        ScheduleSpec::try_from(&self.schedule)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        decode_params(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.check()?;
        write_atomic(path, encode_file(self)?.as_bytes())
    }
}

fn encode_file(file: &ParamsFile) -> Result<String> {
    let mut text = serde_json::to_string_pretty(file).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Serialize with shortest round-trip decimals, so decoding gives back the
/// same bits.
pub fn encode_params(params: &SolverParams, meta: &ParamsMeta) -> Result<String> {
    encode_file(&ParamsFile::new(params, meta)?)
}

/// Parse and check a parameter document. The version is checked before the
/// field layout so that newer files fail with a version error.
pub fn decode_params(text: &str) -> Result<ParamsFile> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("params: {e}")))?;
    let version = value
        .get("format_version")
        .ok_or_else(|| Error::Parse("params: missing `format_version`".into()))?;
    let found = version
        .as_u64()
        .ok_or_else(|| Error::Parse("params: `format_version` must be a non-negative integer".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let file: ParamsFile = serde_json::from_value(value).map_err(|e| Error::Parse(format!("params: {e}")))?;
    file.check()?;
    Ok(file)
}
