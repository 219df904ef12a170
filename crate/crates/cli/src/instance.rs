//! JSON instance files for `solve-qp`.
//!
//! ```json
//! {
//!   "u": [[1.0], [1.0]], "v": [[1.0], [1.0]],
//!   "c": [-1.0, -1.0],
//!   "a": [[1.0, -1.0]], "b": [0.0],
//!   "blocks": [{"lo": 0.0, "hi": 10.0}, {"lo": 0.0, "hi": 10.0}]
//! }
//! ```
//!
//! `q` may replace `u`/`v` for a dense objective. `weights`, `outer_radius`,
//! `inner_radius` and `lipschitz` are optional.

use lrqp::{BlockDomain, Error, Objective, QpInstance, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Block {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    pub blocks: Vec<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

fn matrix(rows: &[Vec<f64>], cols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::Dimension { what, expected: cols, found: r.len() });
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl InstanceFile {
    pub fn to_instance(&self) -> Result<QpInstance> {
        let n = self.c.len();
        let objective = match (&self.q, &self.u, &self.v) {
            (Some(q), None, None) => {
                if q.len() != n {
                    return Err(Error::Dimension { what: "q rows", expected: n, found: q.len() });
                }
                Objective::Dense(matrix(q, n, "q columns")?)
            }
            (None, Some(u), v) => {
                let k = u.first().map_or(0, Vec::len);
                let u = matrix(u, k, "u columns")?;
                let v = match v {
                    Some(v) => matrix(v, k, "v columns")?,
                    None => u.clone(),
                };
                Objective::Factored { u, v }
            }
            (None, None, None) => Objective::zero(n),
            _ => return Err(Error::InvalidParameter("give either q or u (with optional v)".into())),
        };
        let a = matrix(&self.a, n, "a columns")?;
        let blocks = self.blocks.iter().map(|b| BlockDomain::interval(b.lo, b.hi)).collect::<Result<Vec<_>>>()?;
        let mut builder = QpInstance::builder(objective, DVector::from_vec(self.c.clone()))
            .constraints(a, DVector::from_vec(self.b.clone()))
            .blocks(blocks);
        if let Some(w) = &self.weights {
            builder = builder.weights(DVector::from_vec(w.clone()));
        }
        if let Some(r) = self.outer_radius {
            builder = builder.outer_radius(r);
        }
        if let Some(r) = self.inner_radius {
            builder = builder.inner_radius(r);
        }
        if let Some(l) = self.lipschitz {
            builder = builder.lipschitz(l);
        }
        builder.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_example() {
        let text = r#"{
          "u": [[1.0], [1.0]], "v": [[1.0], [1.0]],
          "c": [-1.0, -1.0],
          "a": [[1.0, -1.0]], "b": [0.0],
          "blocks": [{"lo": 0.0, "hi": 10.0}, {"lo": 0.0, "hi": 10.0}]
        }"#;
        let f: InstanceFile = serde_json::from_str(text).unwrap();
        let inst = f.to_instance().unwrap();
        assert_eq!((inst.n(), inst.m()), (2, 1));
        assert_eq!(inst.objective().rank(), Some(1));
    }

    #[test]
    fn rejects_ragged_and_mixed_objectives() {
        let mut f: InstanceFile = serde_json::from_str(r#"{"c": [1.0, 2.0], "blocks": [{"lo": 0, "hi": 1}, {"lo": 0, "hi": 1}]}"#).unwrap();
        assert!(f.to_instance().is_ok());
        f.a = vec![vec![1.0]];
        f.b = vec![0.0];
        assert!(matches!(f.to_instance(), Err(Error::Dimension { .. })));
        f.a.clear();
        f.b.clear();
        f.q = Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        f.u = Some(vec![vec![1.0], vec![1.0]]);
        assert!(f.to_instance().is_err());
        assert!(serde_json::from_str::<InstanceFile>(r#"{"c": [], "blocks": [], "extra": 1}"#).is_err());
    }
}
