//! Plain-text matrix format: a `rows cols` header followed by the entries in
//! row-major order, separated by any whitespace.

use std::fmt::Write as _;
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut tokens = text.split_whitespace();
    let mut dim = |name: &str| -> Result<usize> {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {name} in header")))?;
        tok.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad {name} `{tok}`")))
    };
    let rows = dim("rows")?;
    let cols = dim("cols")?;
    if rows == 0 || cols == 0 {
        return Err(Error::Parse(format!("empty matrix {rows}x{cols}")));
    }
    let data = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad entry `{t}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if data.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} entries, found {}",
            rows * cols,
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse("non-finite entry".into()));
    }
    Matrix::from_vec(rows, cols, data)
}

/// Shortest round-trip decimal for every entry, one matrix row per line.
pub fn format_matrix(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text)
}

pub fn write_matrix(m: &Matrix, path: &Path) -> Result<()> {
    std::fs::write(path, format_matrix(m)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_header_and_entries() {
        let m = parse_matrix("2 2\n3 0\n0 1\n").unwrap();
        assert_eq!(m, Matrix::from_diag(&[3.0, 1.0]));
    }

    #[test]
    fn rejects_short_body_and_garbage() {
        assert!(matches!(parse_matrix("2 2\n1 2 3"), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("2 x\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("1 1\nabc"), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("1 1\nNaN"), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix(""), Err(Error::Parse(_))));
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let m = crate::densela::random_matrix(rows, cols, seed, crate::densela::InitScheme::Gaussian).unwrap();
            let back = parse_matrix(&format_matrix(&m)).unwrap();
            prop_assert_eq!(m.to_le_bytes(), back.to_le_bytes());
        }
    }
}
