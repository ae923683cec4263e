use serde::Serialize;

use crate::error::Result;

/// One logged row of training metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub fm_loss: f64,
    pub strain_sq: f64,
    pub vort_sq: f64,
    /// `α·strain_sq + β·vort_sq`.
    pub reg_total: f64,
}

/// Metrics recorded every `log_every` epochs, in increasing epoch order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

pub const METRICS_HEADER: &str = "epoch,fm_loss,strain_sq,vort_sq,reg_total";

impl TrainLog {
    pub fn push(&mut self, record: LogRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.epoch < record.epoch));
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    pub fn first(&self) -> Option<&LogRecord> {
        self.records.first()
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e}",
                r.epoch, r.fm_loss, r.strain_sq, r.vort_sq, r.reg_total
            )?;
        }
        Ok(())
    }
}
