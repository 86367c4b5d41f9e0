//! Numeric CSV ingestion: comma-delimited, one sample per row, optional single header row.

use std::io::Read;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn read_rows<R: Read>(input: R, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(format!("row {row}: {e}")))?;
        let values = rec
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Csv(format!("row {row}, column {col}: cannot parse {field:?} as a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    Ok(rows)
}

/// Read an `n x p` matrix. Row indices in errors are 0-based data rows.
pub fn read_matrix_csv<R: Read>(input: R, has_header: bool) -> Result<DMatrix<f64>> {
    let rows = read_rows(input, has_header)?;
    let Some(first) = rows.first() else {
        return Err(Error::DimensionMismatch("design matrix has no rows".into()));
    };
    let p = first.len();
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
        return Err(Error::DimensionMismatch(format!(
            "row {row} has {} columns, expected {p}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

/// Read a single-column vector.
pub fn read_vector_csv<R: Read>(input: R, has_header: bool) -> Result<DVector<f64>> {
    let rows = read_rows(input, has_header)?;
    if rows.is_empty() {
        return Err(Error::DimensionMismatch("response has no rows".into()));
    }
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != 1) {
        return Err(Error::DimensionMismatch(format!(
            "response row {row} has {} columns, expected 1",
            r.len()
        )));
    }
    Ok(DVector::from_iterator(rows.len(), rows.iter().map(|r| r[0])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_with_and_without_header() {
        let m = read_matrix_csv("a,b\n1,2\n3,4.5\n".as_bytes(), true).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]));
        let m = read_matrix_csv("1,2\n3,4.5\n".as_bytes(), false).unwrap();
        assert_eq!(m.nrows(), 2);
    }

    #[test]
    fn ragged_and_garbage_rows_fail() {
        assert!(read_matrix_csv("1,2\n3\n".as_bytes(), false).is_err());
        assert!(read_matrix_csv("1,x\n".as_bytes(), false).is_err());
        assert!(read_vector_csv("1,2\n".as_bytes(), false).is_err());
    }

    #[test]
    fn nan_parses_and_is_left_to_validation() {
        let v = read_vector_csv("y\n1\nNaN\n".as_bytes(), true).unwrap();
        assert!(v[1].is_nan());
    }
}
