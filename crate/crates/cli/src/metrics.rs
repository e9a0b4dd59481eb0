//! JSON-lines output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

/// One JSON object per line, UTF-8, newline-terminated.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes to `path`, or stdout when there is none.
pub fn emit<T: Serialize>(path: Option<&Path>, records: &[T]) -> io::Result<()> {
    match path {
        Some(p) => write_jsonl(BufWriter::new(File::create(p)?), records),
        None => write_jsonl(io::stdout().lock(), records),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use vfgnn_core::protocol::MetricsRecord;

    #[test]
    fn records_round_trip_including_unbounded_epsilon() {
        let rec = MetricsRecord {
            run_id: "r".into(),
            seed: 3,
            epoch: 1,
            loss: 1.25,
            train_accuracy: 0.5,
            val_accuracy: 0.25,
            test_accuracy: 0.75,
            epsilon_spent: f64::INFINITY,
            phases: BTreeMap::new(),
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[rec.clone(), MetricsRecord { epsilon_spent: 2.5, ..rec.clone() }]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with('\n'));
        let back: Vec<MetricsRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back[0], rec);
        assert_eq!(back[1].epsilon_spent, 2.5);
        assert!(text.lines().next().unwrap().contains("\"epsilon_spent\":null"));
    }
}
