//! CSV files for node processes, stopping regions and per-path tables.
//!
//! Floats are written with 17 significant digits so every value re-parses bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{node_count, node_index, NodeProcess};
use crate::pricing::Region;

/// `{:.16e}`: 17 significant digits, enough to round-trip any finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_node_process_to<W: Write>(w: W, proc: &NodeProcess) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "up_count", "value"])
        .map_err(csv_err)?;
    for k in 0..=proc.steps() {
        for (j, v) in proc.row(k).iter().enumerate() {
            out.write_record([k.to_string(), j.to_string(), fmt_f64(*v)])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_node_process(path: &Path, proc: &NodeProcess) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_node_process_to(std::io::BufWriter::new(f), proc)
}

/// Reads a `step,up_count,value` table; every node of the triangle must appear exactly once.
pub fn read_node_process_from<R: Read>(r: R) -> Result<NodeProcess> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["step", "up_count", "value"] {
        return Err(Error::Config(format!(
            "expected header step,up_count,value, got {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::Config(format!("row {}: bad {what}", line + 1));
        let k: usize = rec[0].parse().map_err(|_| bad("step"))?;
        let j: usize = rec[1].parse().map_err(|_| bad("up_count"))?;
        let v: f64 = rec[2].parse().map_err(|_| bad("value"))?;
        if j > k {
            return Err(bad("up_count (exceeds step)"));
        }
        rows.push((k, j, v));
    }
    let steps = rows
        .iter()
        .map(|r| r.0)
        .max()
        .ok_or_else(|| Error::Config("node process file has no rows".into()))?;
    let mut values = vec![f64::NAN; node_count(steps)];
    let mut seen = vec![false; values.len()];
    for (k, j, v) in rows {
        let i = node_index(k, j);
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config(format!("node ({k},{j}) appears twice")));
        }
        values[i] = v;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::ShapeMismatch(format!(
            "node process for {steps} steps is missing node #{i}"
        )));
    }
    let proc = NodeProcess::from_values(steps, values)?;
    proc.check_finite("node process file")?;
    Ok(proc)
}

pub fn read_node_process(path: &Path) -> Result<NodeProcess> {
    let f = std::fs::File::open(path)?;
    read_node_process_from(std::io::BufReader::new(f))
}

/// Region members as `step,up_count` rows in node order.
pub fn write_region(path: &Path, region: &Region) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut out = csv::Writer::from_writer(std::io::BufWriter::new(f));
    out.write_record(["step", "up_count"]).map_err(csv_err)?;
    for (k, j) in region.nodes() {
        out.write_record([k.to_string(), j.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Generic writer for rows of pre-formatted fields.
pub fn write_rows<W: Write>(
    w: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round_trip(p: &NodeProcess) -> NodeProcess {
        let mut buf = Vec::new();
        write_node_process_to(&mut buf, p).unwrap();
        read_node_process_from(buf.as_slice()).unwrap()
    }

    #[test]
    fn awkward_values_survive() {
        let vals = [0.1, -0.0, f64::MIN_POSITIVE, 5e-324, f64::MAX, 1.0 / 3.0];
        let p = NodeProcess::from_fn(2, |k, j| vals[node_index(k, j)]);
        let back = round_trip(&p);
        for (a, b) in p.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_node_is_shape_error() {
        let text = "step,up_count,value\n0,0,1\n1,0,2\n";
        assert!(matches!(
            read_node_process_from(text.as_bytes()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn rejects_duplicates_and_bad_header() {
        let dup = "step,up_count,value\n0,0,1\n0,0,2\n";
        assert!(read_node_process_from(dup.as_bytes()).is_err());
        let hdr = "k,j,v\n0,0,1\n";
        assert!(read_node_process_from(hdr.as_bytes()).is_err());
        let nan = "step,up_count,value\n0,0,NaN\n";
        assert!(read_node_process_from(nan.as_bytes()).is_err());
    }

    #[test]
    fn row_order_is_free() {
        let text = "step,up_count,value\n1,1,3\n0,0,1\n1,0,2\n";
        let p = read_node_process_from(text.as_bytes()).unwrap();
        assert_eq!(p.values(), &[1.0, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(steps in 0usize..6, seed in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 28)) {
            let p = NodeProcess::from_fn(steps, |k, j| seed[node_index(k, j)]);
            let back = round_trip(&p);
            prop_assert_eq!(p.steps(), back.steps());
            for (a, b) in p.values().iter().zip(back.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
