//! LIBSVM sparse text format: `<label> (<index>:<value>)*` per line, indices
//! 1-based and strictly increasing, `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    /// Sparse rows with 0-based feature indices.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub y: Vec<f64>,
    /// Largest feature index seen.
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut x = DMatrix::zeros(self.len(), self.dim);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                x[(i, j)] = v;
            }
        }
        (x, DVector::from_vec(self.y.clone()))
    }

    pub fn from_dense(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let rows = x
            .row_iter()
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
            .collect();
        Dataset { rows, y: y.iter().copied().collect(), dim: x.ncols() }
    }
}

fn number(tok: &str, line: usize, what: &str) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse { line, msg: format!("unparsable {what} '{tok}'") }),
    }
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    let mut data = Dataset::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        let mut toks = body.split_whitespace();
        let Some(label) = toks.next() else { continue };
        data.y.push(number(label, line, "label")?);
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line, msg: format!("expected index:value, found '{tok}'") })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse { line, msg: format!("unparsable index '{idx}'") })?;
            if idx == 0 {
                return Err(Error::Parse { line, msg: "feature indices start at 1".into() });
            }
            if idx <= last {
                return Err(Error::Parse { line, msg: format!("non-increasing index {idx} after {last}") });
            }
            last = idx;
            row.push((idx - 1, number(val, line, "value")?));
        }
        data.dim = data.dim.max(last);
        data.rows.push(row);
    }
    Ok(data)
}

pub fn parse_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_libsvm_str(&std::fs::read_to_string(path)?)
}

/// Canonical text: shortest round-trip decimal for every number, single
/// spaces, one line per row.
pub fn emit_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for (row, y) in data.rows.iter().zip(&data.y) {
        write!(out, "{y}").unwrap();
        for (j, v) in row {
            write!(out, " {}:{v}", j + 1).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grammar_examples() {
        let d = parse_libsvm_str("+1 1:0.5 3:1.0").unwrap();
        assert_eq!(d.y, vec![1.0]);
        assert_eq!(d.rows[0], vec![(0, 0.5), (2, 1.0)]);
        assert_eq!(d.dim, 3);
        let d = parse_libsvm_str("-1").unwrap();
        assert_eq!((d.y[0], d.rows[0].len(), d.dim), (-1.0, 0, 0));
        let e = parse_libsvm_str("+1 3:1 2:1").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
    }

    #[test]
    fn comments_blanks_and_errors() {
        let d = parse_libsvm_str("# header\n\n1 2:3 # tail\n   \n-1 1:1e-3\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.rows[1], vec![(0, 1e-3)]);
        for (text, line) in [("1 1:2\n1 x:1", 2), ("1 1:2\n\n1 0:1", 3), ("a 1:1", 1), ("1 1:2 2:nan", 1), ("1 1", 1), ("1\n1 2:3 2:4", 2)] {
            match parse_libsvm_str(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn dense_conversion() {
        let d = parse_libsvm_str("1 2:3\n-1 1:1 3:2\n").unwrap();
        let (x, y) = d.to_dense();
        assert_eq!(x, DMatrix::from_row_slice(2, 3, &[0.0, 3.0, 0.0, 1.0, 0.0, 2.0]));
        assert_eq!(Dataset::from_dense(&x, &y), d);
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6..1e6f64, any::<f64>().prop_filter("finite", |v| v.is_finite()), Just(0.0), Just(1.0)]
    }

    proptest! {
        #[test]
        fn round_trip(rows in prop::collection::vec((finite(), prop::collection::btree_map(0usize..50, finite(), 0..8)), 0..30)) {
            let data = Dataset {
                dim: rows.iter().filter_map(|(_, r)| r.keys().last().map(|k| k + 1)).max().unwrap_or(0),
                y: rows.iter().map(|(y, _)| *y).collect(),
                rows: rows.iter().map(|(_, r)| r.iter().map(|(k, v)| (*k, *v)).collect()).collect(),
            };
            let text = emit_libsvm(&data);
            let back = parse_libsvm_str(&text).unwrap();
            prop_assert_eq!(&back, &data);
            prop_assert_eq!(emit_libsvm(&back), text);
        }
    }
}
