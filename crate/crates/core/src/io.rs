//! Documents on disk.
//!
//! Every document is JSON with explicit `schema` and `dim` fields. Floats are
//! written as `{:.16e}` (17 significant digits, exact round trip) and object
//! keys are sorted, so a document re-read and re-written is byte-identical and
//! its digest (sha256 of the compact canonical form) is stable.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bodies::{StarBody, StarSpec, SupportPolytope};
use crate::dual_measures::DiscreteMeasure;
use crate::error::{invalid, GdmpError, Result};
use crate::measure_checks::PreconditionReport;
use crate::solver::{ResidualReport, SolveConfig, SolveReport};
use crate::sphere_quad::UnitVector;

pub const MEASURE_SCHEMA: &str = "gdmp.measure/1";
pub const POLYTOPE_SCHEMA: &str = "gdmp.polytope/1";
pub const STAR_BODY_SCHEMA: &str = "gdmp.star_body/1";
pub const CONFIG_SCHEMA: &str = "gdmp.solve_config/1";
pub const SOLVE_REPORT_SCHEMA: &str = "gdmp.solve_report/1";
pub const PRECONDITION_SCHEMA: &str = "gdmp.precondition_report/1";
pub const VERIFY_SCHEMA: &str = "gdmp.verify_report/1";
pub const MANIFEST_SCHEMA: &str = "gdmp.run_manifest/1";

/// Writes floats with 17 significant digits; everything else is delegated.
struct Canonical<F>(F);

macro_rules! delegate {
    ($($name:ident),*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.$name(w)
        })*
    };
}

impl<F: Formatter> Formatter for Canonical<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    delegate!(begin_array, end_array, end_array_value, begin_object, end_object, begin_object_value, end_object_value);
}

fn to_value<T: Serialize>(doc: &T) -> Result<Value> {
    serde_json::to_value(doc).map_err(|source| GdmpError::Parse {
        context: "serializing document".into(),
        source,
    })
}

fn render<T: Serialize, F: Formatter>(doc: &T, formatter: F) -> Result<Vec<u8>> {
    // going through Value sorts the keys
    let value = to_value(doc)?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Canonical(formatter));
    value.serialize(&mut ser).map_err(|source| GdmpError::Parse {
        context: "serializing document".into(),
        source,
    })?;
    Ok(out)
}

/// Compact canonical bytes; the input of [`digest`].
pub fn canonical_bytes<T: Serialize>(doc: &T) -> Result<Vec<u8>> {
    render(doc, CompactFormatter)
}

/// Indented canonical text with a trailing newline, as written to files.
pub fn pretty_bytes<T: Serialize>(doc: &T) -> Result<Vec<u8>> {
    let mut out = render(doc, PrettyFormatter::with_indent(b"  "))?;
    out.push(b'\n');
    Ok(out)
}

/// Hex sha256 of the compact canonical form.
pub fn digest<T: Serialize>(doc: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(canonical_bytes(doc)?)))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| GdmpError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_document<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    write_bytes(path, &pretty_bytes(doc)?)
}

pub fn parse_document<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    // serde_json errors carry the line, column and field name
    serde_json::from_str(text).map_err(|source| GdmpError::Parse {
        context: context.to_string(),
        source,
    })
}

pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| GdmpError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_document(&text, &path.display().to_string())
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(invalid(format!("schema is \"{found}\", expected \"{expected}\"")));
    }
    Ok(())
}

fn unit_vectors(rows: Vec<Vec<f64>>, dim: usize, what: &str) -> Result<Vec<UnitVector>> {
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != dim {
                return Err(invalid(format!("{what}[{i}] has {} coordinates, dim is {dim}", r.len())));
            }
            UnitVector::new(r).map_err(|e| invalid(format!("{what}[{i}]: {e}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDoc {
    pub schema: String,
    pub dim: usize,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Written for information; when present on input it must be correct.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub even: Option<bool>,
}

impl MeasureDoc {
    pub fn from_measure(mu: &DiscreteMeasure) -> Self {
        MeasureDoc {
            schema: MEASURE_SCHEMA.into(),
            dim: mu.dim(),
            atoms: mu.atoms().iter().map(|a| a.to_vec()).collect(),
            weights: mu.weights().to_vec(),
            even: Some(mu.even()),
        }
    }

    /// Zero weights are kept (inactive facets of a computed measure).
    pub fn into_measure(self) -> Result<DiscreteMeasure> {
        check_schema(&self.schema, MEASURE_SCHEMA)?;
        let atoms = unit_vectors(self.atoms, self.dim, "atoms")?;
        let mu = DiscreteMeasure::with_zero_weights(atoms, self.weights)?;
        if let Some(even) = self.even {
            if even != mu.even() {
                return Err(invalid(format!("\"even\" is {even} but the measure is {}even", if mu.even() { "" } else { "not " })));
            }
        }
        Ok(mu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeDoc {
    pub schema: String,
    pub dim: usize,
    pub normals: Vec<Vec<f64>>,
    pub support: Vec<f64>,
}

impl PolytopeDoc {
    pub fn from_polytope(k: &SupportPolytope) -> Self {
        PolytopeDoc {
            schema: POLYTOPE_SCHEMA.into(),
            dim: k.dim(),
            normals: (0..k.len()).map(|i| k.normal(i).to_vec()).collect(),
            support: k.support().to_vec(),
        }
    }

    pub fn into_polytope(self) -> Result<SupportPolytope> {
        check_schema(&self.schema, POLYTOPE_SCHEMA)?;
        let normals = unit_vectors(self.normals, self.dim, "normals")?;
        SupportPolytope::new(normals, self.support)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarBodyDoc {
    pub schema: String,
    pub dim: usize,
    pub body: StarSpec,
}

impl StarBodyDoc {
    pub fn new(dim: usize, body: StarSpec) -> Self {
        StarBodyDoc {
            schema: STAR_BODY_SCHEMA.into(),
            dim,
            body,
        }
    }

    pub fn into_body(self) -> Result<StarBody> {
        check_schema(&self.schema, STAR_BODY_SCHEMA)?;
        StarBody::from_spec(self.dim, self.body)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub schema: String,
    pub dim: usize,
    #[serde(default)]
    pub solve: SolveConfig,
}

impl ConfigDoc {
    pub fn new(dim: usize, solve: SolveConfig) -> Self {
        ConfigDoc {
            schema: CONFIG_SCHEMA.into(),
            dim,
            solve,
        }
    }

    pub fn into_config(self) -> Result<(usize, SolveConfig)> {
        check_schema(&self.schema, CONFIG_SCHEMA)?;
        self.solve.validate()?;
        Ok((self.dim, self.solve))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReportDoc {
    pub schema: String,
    pub dim: usize,
    pub config: SolveConfig,
    pub report: SolveReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconditionDoc {
    pub schema: String,
    pub dim: usize,
    pub report: PreconditionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyDoc {
    pub schema: String,
    pub dim: usize,
    pub q: f64,
    pub bound: f64,
    pub pass: bool,
    pub report: ResidualReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub inputs: Vec<String>,
    pub config_digest: String,
    pub tool_version: String,
    pub wall_time_seconds: f64,
}
