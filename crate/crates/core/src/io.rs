//! CSV ingestion and serialisation of mixture samples.
//!
//! The input layout is a header `time,status,q1[,q2,...,qK]` followed by one
//! row per subject. When only `q1` is present the sample has two components
//! and `q2 = 1 - q1`. Lines starting with `#` are comments.

use std::io::{Read, Write};

use crate::data::{validate_sample, MixtureSample, RawRow};
use crate::error::{Error, Result};

/// Reads and validates a sample from CSV.
pub fn read_sample_csv<R: Read>(reader: R) -> Result<MixtureSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names[0] != "time" || names[1] != "status" {
        return Err(Error::Parse(format!(
            "expected header `time,status,q1[,q2,...]`, got `{}`",
            names.join(",")
        )));
    }
    for (i, name) in names[2..].iter().enumerate() {
        if *name != format!("q{}", i + 1) {
            return Err(Error::Parse(format!(
                "column {} should be named `q{}`, got `{name}`",
                i + 3,
                i + 1
            )));
        }
    }
    let implicit_second = names.len() == 3;

    let mut rows = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |idx: usize, what: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                Error::Parse(format!("row {row}: cannot parse {what} `{raw}` as a number"))
            })
        };
        let time = field(0, "time")?;
        let status = field(1, "status")?;
        let mut mix = (2..record.len())
            .map(|c| field(c, &format!("q{}", c - 1)))
            .collect::<Result<Vec<f64>>>()?;
        if implicit_second {
            if let Some(&q1) = mix.first() {
                mix.push(1.0 - q1);
            }
        }
        rows.push(RawRow::new(time, status, mix));
    }
    validate_sample(&rows)
}

/// Writes a sample in the input layout with every component column explicit.
///
/// Floats use the shortest representation that parses back to the same bits.
pub fn write_sample_csv<W: Write>(mut writer: W, sample: &MixtureSample) -> Result<()> {
    let mut header = String::from("time,status");
    for k in 1..=sample.k() {
        header.push_str(&format!(",q{k}"));
    }
    writeln!(writer, "{header}")?;
    for obs in sample.observations() {
        let mut line = format!("{},{}", obs.time, u8::from(obs.event));
        for q in &obs.mix {
            line.push_str(&format!(",{q}"));
        }
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn implicit_second_component() {
        let csv = "time,status,q1\n1.5,1,0.6\n2,0,1\n";
        let s = read_sample_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.k(), 2);
        assert_eq!(s.observations()[0].mix, vec![0.6, 1.0 - 0.6]);
        assert!(!s.observations()[1].event);
    }

    #[test]
    fn explicit_components_and_comments() {
        let csv = "# produced by a test\ntime,status,q1,q2,q3\n1,1,0.2,0.3,0.5\n";
        let s = read_sample_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.k(), 3);
    }

    #[test]
    fn errors_name_the_row() {
        let csv = "time,status,q1,q2\n1,1,0.5,0.5\n2,1,abc,0.5\n";
        let err = read_sample_csv(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");

        let csv = "time,status,q1,q2\n1,1,0.5,0.5\n2,1,0.7,0.7\n";
        let err = read_sample_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MixNotSimplex { row: 1, .. }));
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_sample_csv("t,s,q1\n1,1,1\n".as_bytes()).is_err());
        assert!(read_sample_csv("time,status,p\n1,1,1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn validate_write_validate_is_idempotent(
            rows in proptest::collection::vec((0.0f64..100.0, any::<bool>(), 0.0f64..=1.0), 1..40)
        ) {
            let raw: Vec<RawRow> = rows
                .iter()
                .map(|&(t, e, q)| RawRow::new(t, if e { 1.0 } else { 0.0 }, vec![q, 1.0 - q]))
                .collect();
            let first = validate_sample(&raw).unwrap();
            let mut buf = Vec::new();
            write_sample_csv(&mut buf, &first).unwrap();
            let second = read_sample_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(&first, &second);
            let mut again = Vec::new();
            write_sample_csv(&mut again, &second).unwrap();
            prop_assert_eq!(buf, again);
        }
    }
}
