use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "step,lambda,d_total,g_total,fid,kid,precision,recall,mode_coverage,class_fidelity";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lambda: f64,
    pub d_total: f64,
    pub g_total: f64,
    pub fid: f64,
    pub kid: f64,
    pub precision: f64,
    pub recall: f64,
    pub mode_coverage: f64,
    pub class_fidelity: f64,
}

impl LogRow {
    pub const WIDTH: usize = 10;

    pub fn to_array(&self) -> [f64; Self::WIDTH] {
        [
            self.step as f64,
            self.lambda,
            self.d_total,
            self.g_total,
            self.fid,
            self.kid,
            self.precision,
            self.recall,
            self.mode_coverage,
            self.class_fidelity,
        ]
    }

    pub fn from_array(v: &[f64]) -> Result<Self> {
        if v.len() != Self::WIDTH {
            return Err(Error::Format(format!("log row needs {} values", Self::WIDTH)));
        }
        Ok(Self {
            step: v[0] as u64,
            lambda: v[1],
            d_total: v[2],
            g_total: v[3],
            fid: v[4],
            kid: v[5],
            precision: v[6],
            recall: v[7],
            mode_coverage: v[8],
            class_fidelity: v[9],
        })
    }
}

/// Evaluation rows in strictly increasing step order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<LogRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(Error::contract(format!(
                    "log steps must increase: {} after {}",
                    row.step, last.step
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    /// Row with the lowest FID, first one on ties.
    pub fn best_fid(&self) -> Option<&LogRow> {
        self.rows.iter().fold(None, |best: Option<&LogRow>, r| match best {
            Some(b) if b.fid <= r.fid => Some(b),
            _ => Some(r),
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.lambda,
                r.d_total,
                r.g_total,
                r.fid,
                r.kid,
                r.precision,
                r.recall,
                r.mode_coverage,
                r.class_fidelity
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii csv")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != METRICS_HEADER {
            return Err(Error::Format("unexpected metrics.csv header".into()));
        }
        let mut log = Self::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{f}'"))))
                .collect::<Result<Vec<_>>>()?;
            log.push(LogRow::from_array(&vals)?)?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, fid: f64) -> LogRow {
        LogRow {
            step,
            lambda: 0.5,
            d_total: 1.25,
            g_total: 0.75,
            fid,
            kid: -0.001,
            precision: 1.0,
            recall: 0.875,
            mode_coverage: 0.5,
            class_fidelity: 0.125,
        }
    }

    #[test]
    fn steps_must_increase() {
        let mut log = MetricsLog::new();
        log.push(row(10, 1.0)).unwrap();
        assert!(log.push(row(10, 1.0)).is_err());
        assert!(log.push(row(5, 1.0)).is_err());
        log.push(row(20, 0.5)).unwrap();
        assert_eq!(log.best_fid().unwrap().step, 20);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut log = MetricsLog::new();
        log.push(row(1, 0.1 + 0.2)).unwrap();
        log.push(row(2, 1.0 / 3.0)).unwrap();
        let text = log.to_csv_string();
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(MetricsLog::read_csv(text.as_bytes()).unwrap(), log);
    }
}
