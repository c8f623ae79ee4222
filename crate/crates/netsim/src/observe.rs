//! Observation log: one row per notable simulation event.

use std::io;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub time_ms: u64,
    pub event: &'static str,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObservationLog {
    rows: Vec<Observation>,
}

pub const CSV_HEADER: [&str; 4] = ["time", "event", "subject", "detail"];

impl ObservationLog {
    pub fn push(&mut self, time_ms: u64, event: &'static str, subject: impl Into<String>, detail: impl Into<String>) {
        self.rows.push(Observation { time_ms, event, subject: subject.into(), detail: detail.into() });
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, event: &str) -> usize {
        self.rows.iter().filter(|r| r.event == event).count()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([r.time_ms.to_string().as_str(), r.event, &r.subject, &r.detail])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}
