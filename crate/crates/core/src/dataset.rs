//! Device table ingestion, validation and grouping for loss fits.
//!
//! File columns follow the published table: cyclic frequencies (GHz, MHz),
//! Q in units of 10⁶ and participation ratios in units of 10⁻⁴. Records hold
//! absolute values, plus angular frequencies computed once at load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss_model::LossDataPoint;
use crate::qubit::mean_std;
use crate::units::{ghz_to_angular, mhz_to_angular, round_sig};

/// The 33-device table shipped with the crate.
pub const BUNDLED_DEVICE_TABLE: &str = include_str!("../data/devices.csv");

const Q_UNIT: f64 = 1e6;
const PR_UNIT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Geometry {
    #[serde(rename = "interdigital_2d")]
    Interdigital2d,
    #[serde(rename = "dumbbell_2d")]
    Dumbbell2d,
    #[serde(rename = "dumbbell_3d")]
    Dumbbell3d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub die_id: String,
    pub geometry: Geometry,
    /// Cyclic frequencies as published.
    pub omega_q_ghz: f64,
    pub omega_c_ghz: f64,
    pub g_mhz: f64,
    /// Angular frequencies (rad/s).
    pub omega_q: f64,
    pub omega_c: f64,
    pub g: f64,
    pub t1_mean_us: f64,
    pub t1_std_us: Option<f64>,
    pub t_purcell_ms: f64,
    pub q_mean: f64,
    pub q_std: Option<f64>,
    pub p_sm: f64,
    pub p_j: f64,
}

/// One CSV row in file units.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableRow {
    device_id: String,
    geometry: Geometry,
    omega_q_ghz: f64,
    omega_c_ghz: f64,
    g_mhz: f64,
    t1_mean_us: f64,
    t1_std_us: Option<f64>,
    t_purcell_ms: f64,
    q_mean_1e6: f64,
    q_std_1e6: Option<f64>,
    #[serde(rename = "p_sm_1e-4")]
    p_sm_1e4: f64,
    #[serde(rename = "p_j_1e-4")]
    p_j_1e4: f64,
}

/// Die label: the device id up to the first hyphen.
pub fn die_of(device_id: &str) -> &str {
    device_id.split('-').next().unwrap_or(device_id)
}

impl DeviceRecord {
    fn from_row(row: TableRow, line: usize) -> Result<Self> {
        let fail = |field: &'static str, message: &str| Error::Validation {
            row: line,
            field,
            message: message.to_string(),
        };
        if row.device_id.trim().is_empty() {
            return Err(fail("device_id", "empty"));
        }
        for (field, v) in [
            ("omega_q_ghz", row.omega_q_ghz),
            ("omega_c_ghz", row.omega_c_ghz),
            ("g_mhz", row.g_mhz),
            ("t1_mean_us", row.t1_mean_us),
            ("t_purcell_ms", row.t_purcell_ms),
            ("q_mean_1e6", row.q_mean_1e6),
            ("p_sm_1e-4", row.p_sm_1e4),
            ("p_j_1e-4", row.p_j_1e4),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(fail(field, "must be a positive number"));
            }
        }
        if !(row.omega_c_ghz > row.omega_q_ghz) {
            return Err(fail("omega_c_ghz", "cavity must lie above the qubit"));
        }
        if !(row.t_purcell_ms * 1e3 > row.t1_mean_us) {
            return Err(fail("t_purcell_ms", "Purcell limit must exceed T1"));
        }
        for (field, v) in [("t1_std_us", row.t1_std_us), ("q_std_1e6", row.q_std_1e6)] {
            if v.is_some_and(|s| !(s >= 0.0)) {
                return Err(fail(field, "must be >= 0"));
            }
        }
        Ok(Self {
            die_id: die_of(&row.device_id).to_string(),
            device_id: row.device_id,
            geometry: row.geometry,
            omega_q: ghz_to_angular(row.omega_q_ghz),
            omega_c: ghz_to_angular(row.omega_c_ghz),
            g: mhz_to_angular(row.g_mhz),
            omega_q_ghz: row.omega_q_ghz,
            omega_c_ghz: row.omega_c_ghz,
            g_mhz: row.g_mhz,
            t1_mean_us: row.t1_mean_us,
            t1_std_us: row.t1_std_us,
            t_purcell_ms: row.t_purcell_ms,
            q_mean: row.q_mean_1e6 * Q_UNIT,
            q_std: row.q_std_1e6.map(|s| s * Q_UNIT),
            p_sm: row.p_sm_1e4 * PR_UNIT,
            p_j: row.p_j_1e4 * PR_UNIT,
        })
    }

    fn to_row(&self) -> TableRow {
        // Rounding strips the ulp noise introduced by the unit scaling, so
        // a write/read cycle reproduces the stored values.
        let r = |v: f64| round_sig(v, 12);
        TableRow {
            device_id: self.device_id.clone(),
            geometry: self.geometry,
            omega_q_ghz: self.omega_q_ghz,
            omega_c_ghz: self.omega_c_ghz,
            g_mhz: self.g_mhz,
            t1_mean_us: self.t1_mean_us,
            t1_std_us: self.t1_std_us,
            t_purcell_ms: self.t_purcell_ms,
            q_mean_1e6: r(self.q_mean / Q_UNIT),
            q_std_1e6: self.q_std.map(|s| r(s / Q_UNIT)),
            p_sm_1e4: r(self.p_sm / PR_UNIT),
            p_j_1e4: r(self.p_j / PR_UNIT),
        }
    }
}

pub fn read_device_table<R: std::io::Read>(reader: R) -> Result<Vec<DeviceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TableRow>().enumerate() {
        let line = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: line,
            message: e.to_string(),
        })?;
        out.push(DeviceRecord::from_row(row, line)?);
    }
    if out.is_empty() {
        return Err(Error::Validation {
            row: 0,
            field: "rows",
            message: "device table is empty".into(),
        });
    }
    Ok(out)
}

pub fn load_device_table(path: &Path) -> Result<Vec<DeviceRecord>> {
    read_device_table(std::fs::File::open(path)?)
}

pub fn bundled_devices() -> Vec<DeviceRecord> {
    read_device_table(BUNDLED_DEVICE_TABLE.as_bytes()).expect("bundled table is valid")
}

/// Writes records back in the file's unit conventions.
pub fn write_device_table<W: std::io::Write>(records: &[DeviceRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r.to_row())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Grouping {
    /// One point per (die, geometry, P_SM, P_J): repeated designs on a die
    /// are averaged, with the spread across devices as σ_Q.
    #[default]
    #[serde(rename = "per-die")]
    PerDieDesign,
    #[serde(rename = "per-device")]
    PerDevice,
}

pub fn group_for_fit(records: &[DeviceRecord], mode: Grouping) -> Result<Vec<LossDataPoint>> {
    if records.is_empty() {
        return Err(Error::invalid("no records to group"));
    }
    let single = |r: &DeviceRecord| LossDataPoint {
        p_sm: r.p_sm,
        p_j: r.p_j,
        q_mean: r.q_mean,
        q_std: r.q_std,
        group_id: r.device_id.clone(),
        n_devices: 1,
    };
    match mode {
        Grouping::PerDevice => Ok(records.iter().map(single).collect()),
        Grouping::PerDieDesign => {
            // Groups keep first-appearance order.
            let mut groups: Vec<Vec<&DeviceRecord>> = Vec::new();
            for r in records {
                let key = (&r.die_id, r.geometry, r.p_sm.to_bits(), r.p_j.to_bits());
                match groups.iter_mut().find(|g| {
                    let h = g[0];
                    (&h.die_id, h.geometry, h.p_sm.to_bits(), h.p_j.to_bits()) == key
                }) {
                    Some(g) => g.push(r),
                    None => groups.push(vec![r]),
                }
            }
            groups
                .into_iter()
                .map(|g| {
                    if g.len() == 1 {
                        return Ok(single(g[0]));
                    }
                    let qs: Vec<f64> = g.iter().map(|r| r.q_mean).collect();
                    let (mean, std) = mean_std(&qs)?;
                    Ok(LossDataPoint {
                        p_sm: g[0].p_sm,
                        p_j: g[0].p_j,
                        q_mean: mean,
                        q_std: Some(std),
                        group_id: format!("{}:{}", g[0].die_id, g[0].device_id),
                        n_devices: g.len(),
                    })
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "device_id,geometry,omega_q_ghz,omega_c_ghz,g_mhz,t1_mean_us,t1_std_us,t_purcell_ms,q_mean_1e6,q_std_1e6,p_sm_1e-4,p_j_1e-4\n";

    #[test]
    fn bundled_table_loads() {
        let recs = bundled_devices();
        assert_eq!(recs.len(), 33);
        assert!(recs.iter().all(|r| r.device_id != "D4-2"));
        let d8 = recs.iter().find(|r| r.device_id == "D8-1").unwrap();
        assert!(d8.t1_std_us.is_none() && d8.q_std.is_none());
        assert_eq!(d8.geometry, Geometry::Dumbbell3d);
        assert_eq!(d8.die_id, "D8");
        let d1 = &recs[0];
        assert!((d1.p_sm - 8.67e-4).abs() < 1e-18);
        assert!((d1.q_mean - 1.04e6).abs() < 1e-6);
    }

    #[test]
    fn cavity_below_qubit_rejected() {
        let text =
            format!("{HEADER}X1-1,dumbbell_2d,6.5,4.4,37.3,36.8,5.7,9.0,1.04,0.16,8.67,0.22\n");
        match read_device_table(text.as_bytes()) {
            Err(Error::Validation { row, field, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(field, "omega_c_ghz");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!(
            "{HEADER}D1-1,interdigital_2d,4.43,6.46,37.3,36.8,5.7,9.0,1.04,0.16,8.67,0.22\n\
             D1-2,interdigital_2d,four,6.39,36.4,29.8,4.3,19.9,0.76,0.11,13.49,0.19\n"
        );
        assert!(matches!(
            read_device_table(text.as_bytes()),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn empty_table_is_validation_error() {
        assert!(matches!(
            read_device_table(HEADER.as_bytes()),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn d8_series_collapses() {
        let recs = bundled_devices();
        let pts = group_for_fit(&recs, Grouping::PerDieDesign).unwrap();
        let d8 = pts.iter().find(|p| p.group_id.starts_with("D8:")).unwrap();
        assert_eq!(d8.n_devices, 6);
        let expected = [8.82, 10.31, 7.13, 6.52, 7.26, 4.25].iter().sum::<f64>() / 6.0 * 1e6;
        assert!((d8.q_mean - expected).abs() / expected < 1e-12);
        assert!((d8.q_mean - 7.38e6).abs() / 7.38e6 < 0.001);
        assert_eq!(pts.iter().map(|p| p.n_devices).sum::<usize>(), recs.len());
    }

    #[test]
    fn single_device_group_without_std() {
        let recs: Vec<_> = bundled_devices()
            .into_iter()
            .filter(|r| r.device_id == "D9-2")
            .collect();
        let pts = group_for_fit(&recs, Grouping::PerDieDesign).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].q_std.unwrap_or(0.0), 0.0);
    }

    #[test]
    fn per_device_passes_through() {
        let recs = bundled_devices();
        let pts = group_for_fit(&recs, Grouping::PerDevice).unwrap();
        assert_eq!(pts.len(), recs.len());
        assert!(group_for_fit(&[], Grouping::PerDevice).is_err());
    }
}
