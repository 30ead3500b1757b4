use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    Swa,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Swa => "swa",
        }
    }
}

/// One optimizer step. `val_mean_icc` is set on the last step of an epoch
/// that was followed by validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub phase: Phase,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mean_icc: Option<f64>,
    pub wall_time_s: f64,
}

pub const LOG_HEADER: [&str; 7] = ["phase", "epoch", "step", "lr", "train_mse", "val_mean_icc", "wall_time_s"];

/// Append-only CSV training log.
pub struct LogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> LogWriter<W> {
    pub fn new(w: W) -> csv::Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        inner.write_record(LOG_HEADER)?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, row: &LogRow) -> csv::Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_log<R: std::io::Read>(r: R) -> csv::Result<Vec<LogRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}
