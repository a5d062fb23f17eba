use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Rows of `id<TAB>v1 v2 ... vD`, in file order, with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorTable {
    rows: Vec<(String, Vec<f64>)>,
    index: HashMap<String, usize>,
}

impl VectorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.contains(['\t', '\n']) {
            return Err(Error::invalid("vector table", format!("bad id {id:?}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.rows.len());
        self.rows.push((id, values));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.rows[i].1.as_slice())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(id, v)| (id.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(id, _)| id.as_str())
    }

    /// Common row length, if the table is non-empty and consistent.
    pub fn dim(&self) -> Option<usize> {
        let d = self.rows.first()?.1.len();
        self.rows.iter().all(|(_, v)| v.len() == d).then_some(d)
    }
}

/// Reads a vector table. With `dim = Some(d)` every row must have `d` values;
/// otherwise all rows must agree with the first.
pub fn read_vectors(path: impl AsRef<Path>, dim: Option<usize>) -> Result<VectorTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = VectorTable::new();
    let mut expected = dim;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, format!("line {lineno}: expected <id> TAB <values>")))?;
        let values = rest
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(path, format!("line {lineno}: bad value {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = *expected.get_or_insert(values.len());
        if values.len() != d {
            return Err(Error::Dimension {
                path: path.display().to_string(),
                line: lineno,
                expected: d,
                found: values.len(),
            });
        }
        table.insert(id, values)?;
    }
    Ok(table)
}

/// Writes with shortest round-trip float formatting, so reading back is exact.
pub fn write_vectors(path: impl AsRef<Path>, table: &VectorTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, values) in table.iter() {
        out.push_str(id);
        out.push('\t');
        for (j, v) in values.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{v:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
