//! Experiment runner: configuration, seeding, the figure and table reproductions, and CSV output.

mod config;
mod experiments;
mod seed;

pub use config::{
    EnvKind, EnvironmentSpec, EstimatorParams, Experiment, ExperimentConfig, PriorKind, PriorSpec, ReflectorMode,
    ReflectorSpec, SolveParams, SolvePolicy, TrainingParams,
};
pub use experiments::{
    feedback_policy, key_door_prior, run, run_fig2, run_fig6, run_fig7, run_solve, run_table5, run_train, Fig2Output, Fig2Trial,
    Fig6Output, Fig6Row, Fig7Output, Outcome, Table5Output, Table5Trial, TrainOutput, TrainTrace,
};
pub use seed::SeedPlan;

use crate::error::Result;
use std::io::Write;
use std::path::Path;

/// A CSV table with a fixed, versioned schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Written as a leading `#schema=` comment line.
    pub schema: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &'static str, header: Vec<&'static str>) -> Self {
        Self { schema, header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#schema={}", self.schema)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn write_to_path(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Shortest round-trip decimal form, so reruns produce identical bytes.
pub(crate) fn num(x: f64) -> String {
    format!("{x}")
}
