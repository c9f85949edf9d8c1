//! Headless batch runs.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use intentctl_core::sim::{mode_occupancy, write_csv, SimConfig, SimError, Simulation, TelemetryRecord};
use intentctl_core::supervisor::Mode;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub duration: f64,
    /// Fraction of cycles in each mode, in `Mode::ALL` order.
    pub occupancy: Vec<(Mode, f64)>,
    pub max_force: f64,
    pub max_error: f64,
    pub singular_steps: u64,
}

impl RunSummary {
    pub fn from_records(records: &[TelemetryRecord], singular_steps: u64) -> Self {
        Self {
            steps: records.len(),
            duration: records.last().map_or(0.0, |r| r.time),
            occupancy: mode_occupancy(records),
            max_force: records.iter().map(|r| r.f_z_e).fold(0.0, f64::max),
            max_error: records.iter().map(|r| r.translational_error()).fold(0.0, f64::max),
            singular_steps,
        }
    }

    pub fn occupancy_of(&self, mode: Mode) -> f64 {
        self.occupancy.iter().find(|(m, _)| *m == mode).map_or(0.0, |(_, f)| *f)
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "steps: {} ({:.3} s)", self.steps, self.duration)?;
        writeln!(f, "mode occupancy:")?;
        for (mode, share) in &self.occupancy {
            writeln!(f, "  {:<13}{:>7.2} %", mode.name(), share * 100.0)?;
        }
        writeln!(f, "max f_z_E: {:.3} N", self.max_force)?;
        writeln!(f, "max |x1 error|: {:.4} m", self.max_error)?;
        write!(f, "singular steps: {}", self.singular_steps)
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<TelemetryRecord>,
    pub summary: RunSummary,
}

/// Runs to the configured duration.
pub fn run_headless(config: SimConfig) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(config)?;
    let records = sim.run()?;
    let summary = RunSummary::from_records(&records, sim.singular_steps());
    Ok(RunOutput { records, summary })
}

pub fn write_trace(path: &Path, records: &[TelemetryRecord]) -> std::io::Result<()> {
    write_csv(BufWriter::new(File::create(path)?), records)
}
