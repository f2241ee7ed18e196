//! Sample sets as CSV: one sample per row, columns `dv_0,dv_1,...`
//! (voltage), `dl_0,...` (current) or `ds_0` (substation).

use std::io::{Read, Write};

use super::{DroError, ErrorSampleSet, SampleKind};

pub fn write_samples_csv<W: Write>(set: &ErrorSampleSet, out: W) -> Result<(), DroError> {
    let mut wtr = csv::Writer::from_writer(out);
    let prefix = set.kind().column_prefix();
    let header: Vec<String> = (0..set.dim()).map(|k| format!("{prefix}_{k}")).collect();
    let io = |e: csv::Error| DroError::Io(e.to_string());
    wtr.write_record(&header).map_err(io)?;
    for s in set.samples() {
        wtr.write_record(s.iter().map(|v| format!("{v:?}")))
            .map_err(io)?;
    }
    wtr.flush().map_err(|e| DroError::Io(e.to_string()))
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<ErrorSampleSet, DroError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| DroError::Io(e.to_string()))?
        .clone();
    let first = header.get(0).unwrap_or("");
    let kind = SampleKind::all()
        .into_iter()
        .find(|k| first.starts_with(&format!("{}_", k.column_prefix())))
        .ok_or_else(|| DroError::Io(format!("unrecognized sample column `{first}`")))?;
    let mut samples = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DroError::Io(format!("row {}: {e}", row + 1)))?;
        let values = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| DroError::Io(format!("row {}: {e}", row + 1)))?;
        samples.push(values);
    }
    ErrorSampleSet::new(kind, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voltage_file_round_trip() {
        let set = ErrorSampleSet::new(SampleKind::Voltage, vec![vec![0.1, -0.2], vec![1e-9, 3.0]])
            .unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&set, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("dv_0,dv_1\n"));
        assert_eq!(read_samples_csv(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn bad_cells_report_the_row() {
        let err = read_samples_csv("ds_0\n0.1\nabc\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        assert!(read_samples_csv("x\n1\n".as_bytes()).is_err());
    }
}
