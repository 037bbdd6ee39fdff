//! Plain-text parameter dumps:
//!
//! ```text
//! testrank-checkpoint 1
//! tensor gcn.layer0 3 32
//! <row 0 values>
//! ...
//! ```

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &str = "testrank-checkpoint 1";

pub fn render_tensors(tensors: &[(String, &Array2<f64>)]) -> String {
    let mut out = format!("{MAGIC}\n");
    for (name, t) in tensors {
        out.push_str(&format!("tensor {name} {} {}\n", t.nrows(), t.ncols()));
        for row in t.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn parse_tensors(text: &str) -> Result<Vec<(String, Array2<f64>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing checkpoint header".into(),
            })
        }
    }
    let mut out = Vec::new();
    while let Some((idx, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: idx + 1, message };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [tag, name, rows, cols] = parts[..] else {
            return Err(bad(format!("expected `tensor <name> <rows> <cols>`, got {line:?}")));
        };
        if tag != "tensor" {
            return Err(bad(format!("unexpected tag {tag:?}")));
        }
        let rows: usize = rows.parse().map_err(|e| bad(format!("rows: {e}")))?;
        let cols: usize = cols.parse().map_err(|e| bad(format!("cols: {e}")))?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ridx, row) = lines.next().ok_or_else(|| bad("truncated tensor".into()))?;
            let parsed: std::result::Result<Vec<f64>, _> = row.split_whitespace().map(str::parse).collect();
            let parsed = parsed.map_err(|e| Error::Parse {
                line: ridx + 1,
                message: e.to_string(),
            })?;
            if parsed.len() != cols {
                return Err(Error::Parse {
                    line: ridx + 1,
                    message: format!("expected {cols} values, got {}", parsed.len()),
                });
            }
            values.extend(parsed);
        }
        let tensor = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))?;
        out.push((name.to_owned(), tensor));
    }
    Ok(out)
}

pub fn save_tensors(path: impl AsRef<Path>, tensors: &[(String, &Array2<f64>)]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_tensors(tensors)).map_err(|e| Error::io(path, e))
}

/// Copies parsed tensors into `params`, matching by name and shape.
pub fn restore(params: Vec<&mut Array2<f64>>, names: &[String], tensors: &[(String, Array2<f64>)]) -> Result<()> {
    for (param, name) in params.into_iter().zip(names) {
        let (_, t) = tensors
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {name}")))?;
        if t.dim() != param.dim() {
            return Err(Error::Dimension(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.dim(),
                param.dim()
            )));
        }
        param.assign(t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::GnnModel;

    #[test]
    fn gnn_parameters_survive_a_dump() {
        let model = GnnModel::new(3, &[5, 4], 2, 7).unwrap();
        let names = model.param_names();
        let named: Vec<(String, &Array2<f64>)> = names.iter().cloned().zip(model.params()).collect();
        let text = render_tensors(&named);
        let parsed = parse_tensors(&text).unwrap();
        let mut restored = GnnModel::new(3, &[5, 4], 2, 8).unwrap();
        restore(restored.params_mut(), &names, &parsed).unwrap();
        assert_eq!(restored, model);
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let text = format!("{MAGIC}\ntensor w 2 2\n1 2\n");
        assert!(parse_tensors(&text).is_err());
        assert!(parse_tensors("garbage").is_err());
    }
}
