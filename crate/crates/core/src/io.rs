//! JSON space and coefficient files, CSV dumps of kernels and paths.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calculus::{CoefficientSet, EdgeField, VertexField};
use crate::diffusion_sim::PathSample;
use crate::error::{LabError, Result};
use crate::mm_space::{AmbientMetric, AmbientSpace, DiscreteSpace, Edge};
use crate::semigroup::HeatKernel;

/// Ambient metric: exactly one of `coords` (rows of equal dimension) or
/// `distance_table` (square rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_table: Option<Vec<Vec<f64>>>,
}

impl AmbientSpec {
    pub fn build(&self) -> Result<AmbientSpace> {
        match (&self.coords, &self.distance_table) {
            (Some(rows), None) => {
                let dim = rows.first().map_or(0, Vec::len);
                if let Some(i) = rows.iter().position(|r| r.len() != dim) {
                    return Err(LabError::Format(format!("ambient.coords[{i}] has dimension {} instead of {dim}", rows[i].len())));
                }
                AmbientSpace::from_coords(dim, rows.concat())
            }
            (None, Some(rows)) => AmbientSpace::from_rows(rows),
            _ => Err(LabError::Format("ambient needs exactly one of `coords` or `distance_table`".into())),
        }
    }

    pub fn from_ambient(ambient: &AmbientSpace) -> Self {
        match ambient.metric() {
            AmbientMetric::Table(t) => {
                let n = ambient.len();
                Self {
                    coords: None,
                    distance_table: Some(t.chunks(n.max(1)).map(<[f64]>::to_vec).collect()),
                }
            }
            AmbientMetric::Euclidean { dim, coords } => Self {
                coords: Some(coords.chunks(*dim).map(<[f64]>::to_vec).collect()),
                distance_table: None,
            },
        }
    }
}

/// On-disk form of a [`DiscreteSpace`]; `vertices[x]` is the ambient point of
/// vertex `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceFile {
    pub ambient: AmbientSpec,
    pub vertices: Vec<usize>,
    pub edges: Vec<Edge>,
    pub measure: Vec<f64>,
    #[serde(default)]
    pub basepoint: usize,
}

impl SpaceFile {
    pub fn build(&self) -> Result<DiscreteSpace> {
        let ambient = Arc::new(self.ambient.build()?);
        DiscreteSpace::new(ambient, self.vertices.clone(), self.edges.clone(), self.measure.clone(), self.basepoint)
    }

    pub fn from_space(space: &DiscreteSpace) -> Self {
        Self {
            ambient: AmbientSpec::from_ambient(space.ambient()),
            vertices: space.embedding().to_vec(),
            edges: space.edges().to_vec(),
            measure: space.measure().to_vec(),
            basepoint: space.basepoint(),
        }
    }
}

/// A scalar broadcast to every edge or one value per edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        match self {
            ScalarOrList::Scalar(v) => Ok(vec![*v; n]),
            ScalarOrList::List(v) if v.len() == n => Ok(v.clone()),
            ScalarOrList::List(v) => Err(LabError::SizeMismatch {
                what,
                expected: n,
                got: v.len(),
            }),
        }
    }
}

fn zeros_default() -> ScalarOrList {
    ScalarOrList::Scalar(0.0)
}

fn one_default() -> ScalarOrList {
    ScalarOrList::Scalar(1.0)
}

fn lambda_default() -> f64 {
    1.0
}

/// On-disk form of a [`CoefficientSet`]. `theta1`/`theta2` are given on the
/// canonical orientation `u → v` of each edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientFile {
    #[serde(default = "one_default")]
    pub a: ScalarOrList,
    #[serde(default = "lambda_default")]
    pub lambda: f64,
    #[serde(default = "zeros_default")]
    pub theta1: ScalarOrList,
    #[serde(default = "zeros_default")]
    pub theta2: ScalarOrList,
    #[serde(default = "zeros_default")]
    pub c: ScalarOrList,
}

impl Default for CoefficientFile {
    fn default() -> Self {
        Self {
            a: one_default(),
            lambda: lambda_default(),
            theta1: zeros_default(),
            theta2: zeros_default(),
            c: zeros_default(),
        }
    }
}

impl CoefficientFile {
    pub fn build(&self, space: &DiscreteSpace) -> Result<CoefficientSet> {
        let ne = space.n_edges();
        CoefficientSet::new(
            space,
            EdgeField::symmetric(self.a.expand(ne, "a")?),
            self.lambda,
            EdgeField::antisymmetric(self.theta1.expand(ne, "theta1")?),
            EdgeField::antisymmetric(self.theta2.expand(ne, "theta2")?),
            VertexField(self.c.expand(space.n_vertices(), "c")?),
        )
    }

    pub fn from_coefficients(coeffs: &CoefficientSet) -> Self {
        Self {
            a: ScalarOrList::List(coeffs.a.values.clone()),
            lambda: coeffs.lambda,
            theta1: ScalarOrList::List(coeffs.theta1.values.clone()),
            theta2: ScalarOrList::List(coeffs.theta2.values.clone()),
            c: ScalarOrList::List(coeffs.c.0.clone()),
        }
    }
}

pub fn parse_space(text: &str) -> Result<DiscreteSpace> {
    serde_json::from_str::<SpaceFile>(text)?.build()
}

pub fn read_space(path: &Path) -> Result<DiscreteSpace> {
    parse_space(&std::fs::read_to_string(path)?)
}

pub fn space_to_json(space: &DiscreteSpace) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SpaceFile::from_space(space))?)
}

pub fn parse_coefficients(text: &str, space: &DiscreteSpace) -> Result<CoefficientSet> {
    serde_json::from_str::<CoefficientFile>(text)?.build(space)
}

pub fn read_coefficients(path: &Path, space: &DiscreteSpace) -> Result<CoefficientSet> {
    parse_coefficients(&std::fs::read_to_string(path)?, space)
}

pub fn coefficients_to_json(coeffs: &CoefficientSet) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CoefficientFile::from_coefficients(coeffs))?)
}

/// `t,x,y,p` rows, one per kernel entry.
pub fn kernel_csv(kernels: &[HeatKernel]) -> String {
    let mut s = String::from("t,x,y,p\n");
    for k in kernels {
        for x in 0..k.p.nrows() {
            for y in 0..k.p.ncols() {
                let _ = writeln!(s, "{},{x},{y},{:e}", k.t, k.get(x, y));
            }
        }
    }
    s
}

/// `path_id,jump_time,state` rows; the initial state is recorded at time 0
/// and killing as state `-1`.
pub fn paths_csv(paths: &[PathSample]) -> String {
    let mut s = String::from("path_id,jump_time,state\n");
    for p in paths {
        for (t, x) in p.times.iter().zip(&p.states) {
            let _ = writeln!(s, "{},{t:e},{x}", p.path_id);
        }
        if let Some(z) = p.lifetime {
            let _ = writeln!(s, "{},{z:e},-1", p.path_id);
        }
    }
    s
}

/// Parses the output of [`paths_csv`] back into `(path_id, time, state)`
/// triples, with `None` for ∂.
pub fn parse_paths_csv(text: &str) -> Result<Vec<(usize, f64, Option<usize>)>> {
    let mut lines = text.lines();
    if lines.next() != Some("path_id,jump_time,state") {
        return Err(LabError::Format("missing path CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || LabError::Format(format!("malformed path CSV row {}: {line}", i + 2));
            let mut parts = line.split(',');
            let id = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let t = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let state: i64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok((id, t, usize::try_from(state).ok()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_VERTEX: &str = r#"{
        "ambient": {"coords": [[0.0], [1.0]]},
        "vertices": [0, 1],
        "edges": [{"u": 0, "v": 1, "length": 1.0, "conductance": 1.0}],
        "measure": [1.0, 1.0],
        "basepoint": 0
    }"#;

    #[test]
    fn space_round_trip() {
        let space = parse_space(TWO_VERTEX).unwrap();
        assert_eq!(space.n_vertices(), 2);
        let again = parse_space(&space_to_json(&space).unwrap()).unwrap();
        assert_eq!(SpaceFile::from_space(&again), SpaceFile::from_space(&space));
    }

    #[test]
    fn rejects_both_ambient_kinds() {
        let text = TWO_VERTEX.replace(
            r#"{"coords": [[0.0], [1.0]]}"#,
            r#"{"coords": [[0.0], [1.0]], "distance_table": [[0.0, 1.0], [1.0, 0.0]]}"#,
        );
        assert!(matches!(parse_space(&text), Err(LabError::Format(_))));
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = TWO_VERTEX.replace("\"basepoint\"", "\"basepiont\"");
        assert!(parse_space(&text).is_err());
    }

    #[test]
    fn coefficients_scalar_broadcast() {
        let space = parse_space(TWO_VERTEX).unwrap();
        let c = parse_coefficients(r#"{"a": 2.0, "lambda": 1.0, "theta1": [0.5], "c": [0.0, 1.0]}"#, &space).unwrap();
        assert_eq!(c.a.values, vec![2.0]);
        assert_eq!(c.theta1.values, vec![0.5]);
        assert_eq!(c.theta2.values, vec![0.0]);
        let back = parse_coefficients(&coefficients_to_json(&c).unwrap(), &space).unwrap();
        assert_eq!(back.c.0, vec![0.0, 1.0]);
        assert!(parse_coefficients(r#"{"theta1": [0.5, 1.0]}"#, &space).is_err());
    }

    #[test]
    fn path_csv_marks_cemetery() {
        let p = PathSample {
            path_id: 3,
            times: vec![0.0, 0.25],
            states: vec![0, 1],
            lifetime: Some(0.5),
            horizon: 1.0,
            seed: 1,
        };
        let rows = parse_paths_csv(&paths_csv(&[p])).unwrap();
        assert_eq!(rows, vec![(3, 0.0, Some(0)), (3, 0.25, Some(1)), (3, 0.5, None)]);
    }
}
