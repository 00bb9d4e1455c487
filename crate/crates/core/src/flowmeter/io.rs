use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;

use super::features::FeatureRecord;
use super::{FlowError, CONTINUOUS_FEATURES};

const ID_COLUMNS: [&str; 6] = [
    "Flow ID", "Src IP", "Src Port", "Dst IP", "Dst Port", "Protocol",
];
const OPTIONAL: [&str; 5] = ["Flow ID", "Src IP", "Src Port", "Dst IP", "Label"];
const DATE_FORMATS: [&str; 3] = [
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %I:%M:%S %p",
    "%d/%m/%Y %H:%M",
];

fn io_err(path: &Path, e: std::io::Error) -> FlowError {
    FlowError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn header() -> Vec<&'static str> {
    let mut h: Vec<&str> = ID_COLUMNS.to_vec();
    h.extend(CONTINUOUS_FEATURES);
    h.push("Label");
    h
}

/// Epoch seconds with exactly six decimals.
fn format_timestamp(us: i64) -> String {
    let sign = if us < 0 { "-" } else { "" };
    let a = us.unsigned_abs();
    format!("{sign}{}.{:06}", a / 1_000_000, a % 1_000_000)
}

pub fn write_csv_to<W: Write>(out: W, records: &[FeatureRecord]) -> Result<(), FlowError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for r in records {
        let mut row = vec![
            r.flow_id.clone(),
            r.src_ip.clone(),
            r.src_port.to_string(),
            r.dst_ip.clone(),
            r.dst_port.to_string(),
            r.protocol.to_string(),
            format_timestamp(r.timestamp_us),
        ];
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.push(r.label.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| FlowError::Csv(e.into()))?;
    Ok(())
}

pub fn write_csv(path: &Path, records: &[FeatureRecord]) -> Result<(), FlowError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_csv_to(std::io::BufWriter::new(file), records)
}

/// One JSON object per line with the CSV column names as keys.
pub fn write_jsonl<W: Write>(mut out: W, records: &[FeatureRecord]) -> std::io::Result<()> {
    for r in records {
        let mut fields: Vec<(String, serde_json::Value)> = vec![
            ("Flow ID".into(), r.flow_id.clone().into()),
            ("Src IP".into(), r.src_ip.clone().into()),
            ("Src Port".into(), r.src_port.into()),
            ("Dst IP".into(), r.dst_ip.clone().into()),
            ("Dst Port".into(), r.dst_port.into()),
            ("Protocol".into(), r.protocol.into()),
            ("Timestamp".into(), r.timestamp_seconds().into()),
        ];
        for (name, v) in CONTINUOUS_FEATURES[1..].iter().zip(&r.features) {
            fields.push((name.to_string(), (*v).into()));
        }
        fields.push(("Label".into(), r.label.clone().unwrap_or_default().into()));
        let body: Vec<String> = fields
            .iter()
            .map(|(k, v)| format!("{}:{}", serde_json::Value::from(k.as_str()), v))
            .collect();
        writeln!(out, "{{{}}}", body.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvRead {
    pub records: Vec<FeatureRecord>,
    /// `Infinity`/`NaN` cells replaced by 0.
    pub cleaned_cells: usize,
    /// Repeated header lines found mid-file and dropped.
    pub skipped_rows: usize,
}

pub fn read_csv(path: &Path) -> Result<CsvRead, FlowError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_csv_from(std::io::BufReader::new(file))
}

/// Reads our own CSV output or the public CSE-CIC-IDS2018 layout (with or
/// without the flow-identification columns). Day-first textual timestamps
/// are taken as UTC.
pub fn read_csv_from<R: Read>(input: R) -> Result<CsvRead, FlowError> {
    let mut rd = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let headers: Vec<String> = rd.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut col: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let known = ID_COLUMNS.contains(&h.as_str())
            || CONTINUOUS_FEATURES.contains(&h.as_str())
            || h == "Label";
        if !known {
            return Err(FlowError::UnknownColumn(h.clone()));
        }
        col.insert(h.as_str(), i);
    }
    for name in ID_COLUMNS.iter().chain(CONTINUOUS_FEATURES.iter()) {
        if !col.contains_key(name) && !OPTIONAL.contains(name) {
            return Err(FlowError::MissingColumn(name.to_string()));
        }
    }
    let mut out = CsvRead::default();
    for row in rd.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let cell = |name: &str| col.get(name).and_then(|&i| row.get(i)).map(str::trim);
        let bad = |name: &str, value: &str| FlowError::BadCell {
            line,
            column: name.into(),
            value: value.into(),
        };
        let dst_port_cell = cell("Dst Port").unwrap_or("");
        if dst_port_cell == "Dst Port" {
            out.skipped_rows += 1;
            continue;
        }
        let port = |name: &str| -> Result<u16, FlowError> {
            match cell(name) {
                None | Some("") => Ok(0),
                Some(v) => v.parse().map_err(|_| bad(name, v)),
            }
        };
        let protocol_cell = cell("Protocol").unwrap_or("");
        let protocol: u8 = protocol_cell
            .parse()
            .map_err(|_| bad("Protocol", protocol_cell))?;
        let ts_cell = cell("Timestamp").unwrap_or("");
        let timestamp_us = parse_timestamp(ts_cell).ok_or_else(|| bad("Timestamp", ts_cell))?;
        let mut features = Vec::with_capacity(CONTINUOUS_FEATURES.len() - 1);
        for name in &CONTINUOUS_FEATURES[1..] {
            let raw = cell(name).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| bad(name, raw))?;
            if v.is_finite() {
                features.push(v);
            } else {
                out.cleaned_cells += 1;
                features.push(0.0);
            }
        }
        out.records.push(FeatureRecord {
            flow_id: cell("Flow ID").unwrap_or("").to_string(),
            src_ip: cell("Src IP").unwrap_or("").to_string(),
            src_port: port("Src Port")?,
            dst_ip: cell("Dst IP").unwrap_or("").to_string(),
            dst_port: port("Dst Port")?,
            protocol,
            timestamp_us,
            features,
            label: cell("Label").filter(|l| !l.is_empty()).map(str::to_string),
        });
    }
    Ok(out)
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if s.contains('/') {
        return DATE_FORMATS
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
            .map(|t| t.and_utc().timestamp_micros());
    }
    let secs: f64 = s.parse().ok()?;
    secs.is_finite().then(|| (secs * 1e6).round() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize) -> FeatureRecord {
        FeatureRecord {
            flow_id: format!("10.0.0.{i}-10.0.0.9-{i}-80-6"),
            src_ip: format!("10.0.0.{i}"),
            src_port: i as u16,
            dst_ip: "10.0.0.9".into(),
            dst_port: 80,
            protocol: 6,
            timestamp_us: 1_519_977_600_123_456 + i as i64,
            features: (0..76).map(|j| (i * 76 + j) as f64 / 7.0).collect(),
            label: if i.is_multiple_of(2) {
                Some("Benign".into())
            } else {
                None
            },
        }
    }

    #[test]
    fn round_trip() {
        let recs: Vec<FeatureRecord> = (0..10).map(record).collect();
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &recs).unwrap();
        let back = read_csv_from(&buf[..]).unwrap();
        assert_eq!(back.records.len(), 10);
        for (a, b) in recs.iter().zip(&back.records) {
            assert_eq!(a.timestamp_us, b.timestamp_us);
            assert_eq!(
                (&a.flow_id, &a.src_ip, a.dst_port, &a.label),
                (&b.flow_id, &b.src_ip, b.dst_port, &b.label)
            );
            for (x, y) in a.features.iter().zip(&b.features) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
            }
        }
    }

    fn cse_header() -> String {
        let mut h = vec!["Dst Port", "Protocol"];
        h.extend(CONTINUOUS_FEATURES);
        h.push("Label");
        h.join(",")
    }

    fn cse_row(label: &str, byts: &str) -> String {
        let mut cells = vec!["8080".to_string(), "6".into(), "02/03/2018 08:47:38".into()];
        for name in &CONTINUOUS_FEATURES[1..] {
            cells.push(if *name == "Flow Byts/s" {
                byts.to_string()
            } else {
                "1".into()
            });
        }
        cells.push(label.into());
        cells.join(",")
    }

    #[test]
    fn cse_layout() {
        let text = format!(
            "{}\n{}\n{}\n{}\n",
            cse_header(),
            cse_row("Bot", "Infinity"),
            cse_header(),
            cse_row("Benign", "NaN")
        );
        let r = read_csv_from(text.as_bytes()).unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.cleaned_cells, 2);
        assert_eq!(r.skipped_rows, 1);
        assert_eq!(r.records[0].label_value(), Some(1));
        assert_eq!(r.records[1].label_value(), Some(0));
        assert_eq!(r.records[0].get("Flow Byts/s"), Some(0.0));
        assert_eq!(r.records[0].timestamp_us, 1_519_980_458_000_000);
        assert_eq!(r.records[0].dst_port, 8080);
    }

    #[test]
    fn column_errors_name_the_column() {
        let text = cse_header().replace("Fwd IAT Tot,", "");
        match read_csv_from(text.as_bytes()) {
            Err(FlowError::MissingColumn(c)) => assert_eq!(c, "Fwd IAT Tot"),
            other => panic!("{other:?}"),
        }
        let text = cse_header().replace("Label", "Label,Extra");
        match read_csv_from(text.as_bytes()) {
            Err(FlowError::UnknownColumn(c)) => assert_eq!(c, "Extra"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jsonl_keys_follow_columns() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[record(1)]).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["Dst Port"], 80);
        assert_eq!(v.as_object().unwrap().len(), 84);
        assert!(line.starts_with("{\"Flow ID\""));
    }

    #[test]
    fn timestamps() {
        assert_eq!(format_timestamp(1_500_000), "1.500000");
        assert_eq!(parse_timestamp("1.500000"), Some(1_500_000));
        assert_eq!(
            parse_timestamp("02/03/2018 08:47"),
            Some(1_519_980_420_000_000)
        );
        assert_eq!(parse_timestamp("bogus"), None);
    }
}
