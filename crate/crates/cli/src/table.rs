use std::io::Write;

use anyhow::Result;

/// Writes a header and rows of already formatted cells.
pub fn write_rows<W: Write>(w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn num(v: f64) -> String {
    v.to_string()
}
