//! Per-cycle telemetry and its CSV form.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::supervisor::Mode;

pub const CSV_COLUMNS: [&str; 21] = [
    "time_s",
    "mode",
    "a_h",
    "a_p",
    "a_f",
    "a_n",
    "a_b",
    "k_d1",
    "k_d2",
    "err_x",
    "err_y",
    "err_z",
    "err_rx",
    "err_ry",
    "err_rz",
    "x1d_x",
    "x1d_y",
    "x1d_z",
    "f_z_E",
    "tau_n_norm",
    "energy_residual",
];

/// Everything logged for one control cycle. The CSV carries the leading
/// group; the rest is kept for diagnostics and the realtime stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub time: f64,
    pub mode: Mode,
    pub a_h: f64,
    pub a_p: f64,
    pub a_f: f64,
    pub a_n: f64,
    pub a_b: f64,
    /// Translational level-1 stiffness (N/m).
    pub k_d1: f64,
    /// Level-2 stiffness (N·m/rad).
    pub k_d2: f64,
    /// Level-1 error, translation then rotation vector.
    pub error: [f64; 6],
    pub x1d: [f64; 3],
    pub f_z_e: f64,
    pub tau_n_norm: f64,
    pub energy_residual: f64,

    pub t_p: f64,
    pub q1: f64,
    pub x2d: f64,
    /// `|τ_dᵀq̇| / (‖τ_d‖‖q̇‖)`.
    pub compensation_power: f64,
    /// `‖J̄1M⁻¹τ2‖ / ‖τ2‖`.
    pub transparency: f64,
    /// `½x̃ᵀΔKx̃` from the stiffness change since the previous cycle (J).
    pub stiffness_power: f64,
    /// Storage function at the start of the cycle (J).
    pub storage: f64,
    /// Rank-deficient task Jacobian handled by the damped fallback.
    pub singular: bool,
    pub probe_position: [f64; 3],
    /// Quaternion `[x, y, z, w]`.
    pub probe_orientation: [f64; 4],
    pub neck_position: [f64; 3],
    pub neck_orientation: [f64; 4],
    pub d_h: f64,
    pub d_b: f64,
    pub q: Vec<f64>,
}

impl TelemetryRecord {
    pub fn translational_error(&self) -> f64 {
        let e = &self.error;
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    fn csv_values(&self) -> [f64; 19] {
        let e = &self.error;
        [
            self.a_h,
            self.a_p,
            self.a_f,
            self.a_n,
            self.a_b,
            self.k_d1,
            self.k_d2,
            e[0],
            e[1],
            e[2],
            e[3],
            e[4],
            e[5],
            self.x1d[0],
            self.x1d[1],
            self.x1d[2],
            self.f_z_e,
            self.tau_n_norm,
            self.energy_residual,
        ]
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{}", sig9(self.time), self.mode.name());
        for v in self.csv_values() {
            row.push(',');
            row.push_str(&sig9(v));
        }
        row
    }
}

/// Fixed-point rendering with nine significant digits.
pub fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { v.to_string() };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).clamp(0, 40) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding can carry into a new digit (9.9999999995 → 10.00000000).
    let s = if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 9 && decimals > 0 {
        format!("{v:.prec$}", prec = decimals - 1)
    } else {
        s
    };
    if s.starts_with("-0") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        return "0".into();
    }
    s
}

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn write_csv<W: Write>(mut out: W, records: &[TelemetryRecord]) -> io::Result<()> {
    writeln!(out, "{}", csv_header())?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(1.0), "1.00000000");
        assert_eq!(sig9(0.001234567891), "0.00123456789");
        assert_eq!(sig9(-12345.678912), "-12345.6789");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(9.9999999996), "10.0000000");
        assert_eq!(sig9(123456789012.0), "123456789012");
    }

    #[test]
    fn header_matches_row_width() {
        let r = TelemetryRecord {
            time: 0.0,
            mode: Mode::Waiting,
            a_h: 0.0,
            a_p: 0.0,
            a_f: 0.0,
            a_n: 0.0,
            a_b: 0.0,
            k_d1: 0.0,
            k_d2: 0.0,
            error: [0.0; 6],
            x1d: [0.0; 3],
            f_z_e: 0.0,
            tau_n_norm: 0.0,
            energy_residual: 0.0,
            t_p: 0.0,
            q1: 0.0,
            x2d: 0.0,
            compensation_power: 0.0,
            transparency: 0.0,
            stiffness_power: 0.0,
            storage: 0.0,
            singular: false,
            probe_position: [0.0; 3],
            probe_orientation: [0.0, 0.0, 0.0, 1.0],
            neck_position: [0.0; 3],
            neck_orientation: [0.0, 0.0, 0.0, 1.0],
            d_h: 1.0,
            d_b: 2.0,
            q: vec![0.0; 7],
        };
        assert_eq!(r.csv_row().split(',').count(), CSV_COLUMNS.len());
        assert!(r.csv_row().starts_with("0,Waiting,"));
    }
}
