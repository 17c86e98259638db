//! Plain-text and image exports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ingestion::ByteArray;
use crate::scalar::Scalar;

/// One line per row, columns `c0..c{C-1}` plus the row's modality.
pub fn byte_array_csv<T: Scalar>(bytes: &ByteArray<T>) -> String {
    let c = bytes.channels();
    let mut s = String::from("row,modality");
    (0..c).for_each(|j| write!(s, ",c{j}").unwrap());
    s.push('\n');
    for span in &bytes.spans {
        for r in span.rows.clone() {
            write!(s, "{r},{}", span.modality).unwrap();
            bytes.data.row(r).iter().for_each(|v| write!(s, ",{v}").unwrap());
            s.push('\n');
        }
    }
    s
}

/// `height×width` grid as CSV without a header, one line per grid row.
pub fn grid_csv<T: Scalar>(values: &[T], width: usize) -> String {
    let mut s = String::new();
    for row in values.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Binary 8-bit PGM, values min-max normalized to `[0, 255]`. A constant
/// map becomes all zeros.
pub fn pgm<T: Scalar>(values: &[T], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width || values.is_empty() {
        return Err(Error::dim("pgm", format!("{} values for a {height}×{width} image", values.len())));
    }
    let f: Vec<f64> = values.iter().map(|v| v.as_f64()).collect();
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(f.iter().map(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}
