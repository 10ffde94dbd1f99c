//! End-to-end run: load → group → fit → prediction tables, plus an optional
//! P_SM width sweep. Produces a schema-versioned JSON report and plot CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{bundled_devices, group_for_fit, load_device_table, DeviceRecord, Grouping};
use crate::error::{Error, Result};
use crate::loss_model::{
    correlation, fit_model, junction_fraction, normalized_pr, LossDataPoint, LossFitResult,
    LossModel, ParameterEstimate, Weighting,
};
use crate::participation::{linspace, width_sweep, InterfaceSpec, Region, SweepConfig, SweepPoint};
use crate::units::round_sig;

pub const SCHEMA_VERSION: u32 = 1;
/// Significant digits kept for every number in the JSON report.
pub const REPORT_DIGITS: usize = 9;

pub const REPORT_FILE: &str = "report.json";
pub const Q_VS_PSM_FILE: &str = "q_vs_psm.csv";
pub const Q_VS_NPR_FILE: &str = "q_vs_normalized_pr.csv";
pub const SURFACE_FILE: &str = "model_surface.csv";
pub const SWEEP_FILE: &str = "psm_width_sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    #[serde(default = "defaults::width_min")]
    pub width_min_um: f64,
    #[serde(default = "defaults::width_max")]
    pub width_max_um: f64,
    #[serde(default = "defaults::points")]
    pub points: usize,
    #[serde(default = "defaults::t_sm")]
    pub t_sm_nm: f64,
    #[serde(default = "defaults::eps_sm")]
    pub eps_sm: f64,
    #[serde(default = "defaults::cutoff")]
    pub cutoff_um: f64,
    #[serde(default = "defaults::fingers")]
    pub n_fingers: usize,
    #[serde(default = "defaults::discretization")]
    pub discretization: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl SweepSettings {
    pub fn widths(&self) -> Vec<f64> {
        linspace(self.width_min_um, self.width_max_um, self.points)
    }

    pub fn config(&self) -> Result<SweepConfig> {
        Ok(SweepConfig {
            n_fingers: self.n_fingers,
            sm: InterfaceSpec::new(Region::Sm, self.t_sm_nm, self.eps_sm)?,
            edge_cutoff_um: self.cutoff_um,
            discretization: self.discretization,
            ..SweepConfig::default()
        })
    }

    fn validate(&self) -> Result<()> {
        if self.points < 2 || !(self.width_min_um < self.width_max_um) {
            return Err(Error::invalid(
                "sweep needs at least 2 points and width_min_um < width_max_um",
            ));
        }
        if !(self.cutoff_um > 0.0) {
            return Err(Error::invalid("sweep cutoff_um must be > 0"));
        }
        self.config().map(|_| ())
    }
}

mod defaults {
    use crate::em::{DEFAULT_DISCRETIZATION, DEFAULT_EDGE_CUTOFF_UM};
    use crate::loss_model::LossModel;
    use crate::units::SAPPHIRE_EPS_REL;

    pub fn width_min() -> f64 {
        1.0
    }
    pub fn width_max() -> f64 {
        20.0
    }
    pub fn points() -> usize {
        20
    }
    pub fn t_sm() -> f64 {
        1.0
    }
    pub fn eps_sm() -> f64 {
        SAPPHIRE_EPS_REL
    }
    pub fn cutoff() -> f64 {
        DEFAULT_EDGE_CUTOFF_UM
    }
    pub fn fingers() -> usize {
        7
    }
    pub fn discretization() -> usize {
        DEFAULT_DISCRETIZATION
    }
    pub fn models() -> Vec<LossModel> {
        vec![LossModel::SmPlusQ0, LossModel::SmPlusJ]
    }
    pub fn grid_points() -> usize {
        41
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Device table; the bundled table when absent.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Loss models to fit. Empty with a sweep configured means sweep-only.
    #[serde(default = "defaults::models")]
    pub models: Vec<LossModel>,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub grouping: Grouping,
    #[serde(default)]
    pub sweep: Option<SweepSettings>,
    /// Points per axis of the model surface grid.
    #[serde(default = "defaults::grid_points")]
    pub grid_points: usize,
    pub output_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset: None,
            models: defaults::models(),
            weighting: Weighting::default(),
            grouping: Grouping::default(),
            sweep: None,
            grid_points: defaults::grid_points(),
            output_dir: output_dir.into(),
        }
    }

    /// Reads a JSON config. Relative paths resolve against the config's
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.dataset.as_mut() {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn is_sweep_only(&self) -> bool {
        self.models.is_empty() && self.sweep.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() && self.sweep.is_none() {
            return Err(Error::invalid("config selects neither models nor a sweep"));
        }
        if let Some(d) = &self.dataset {
            if !d.is_file() {
                return Err(Error::invalid(format!("dataset {} not found", d.display())));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::invalid("output_dir is empty"));
        }
        if self.grid_points < 2 {
            return Err(Error::invalid("grid_points must be >= 2"));
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub group_id: String,
    pub n_devices: usize,
    pub p_sm: f64,
    pub p_j: f64,
    pub q_measured: f64,
    pub q_std: Option<f64>,
    pub q_model: f64,
    pub residual_inverse_q: f64,
    /// Share of modelled 1/Q from the junction term (junction model only).
    pub junction_fraction: Option<f64>,
    pub normalized_pr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: LossModel,
    pub weighting: Weighting,
    pub parameters: Vec<ParameterEstimate>,
    pub q0: Option<f64>,
    pub q0_stderr: Option<f64>,
    pub chi_squared: f64,
    pub dof: usize,
    pub condition_number: f64,
    /// Pearson correlation of observed and fitted 1/Q.
    pub correlation: f64,
    pub points: Vec<PointRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub n_records: usize,
    pub n_points: usize,
    pub grouping: Grouping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<String>,
    pub partial: bool,
    pub errors: Vec<StageError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub dataset: Option<DatasetSummary>,
    pub fits: Vec<FitSummary>,
    pub sweep: Option<Vec<SweepPoint>>,
    pub manifest: Manifest,
}

impl Report {
    pub fn fit(&self, model: LossModel) -> Option<&FitSummary> {
        self.fits.iter().find(|f| f.model == model)
    }

    pub fn succeeded(&self) -> bool {
        !self.manifest.partial
    }

    /// Pretty JSON with every number rounded to [`REPORT_DIGITS`].
    pub fn to_json(&self) -> Result<String> {
        to_rounded_json(self)
    }
}

/// Pretty JSON of any serializable value, numbers rounded to
/// [`REPORT_DIGITS`], with a trailing newline.
pub fn to_rounded_json<T: Serialize>(value: &T) -> Result<String> {
    let mut value = serde_json::to_value(value)?;
    round_numbers(&mut value);
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or(0.0), REPORT_DIGITS);
            *v = serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Nine significant digits, matching the JSON report.
fn num(x: f64) -> String {
    format!("{:.*e}", REPORT_DIGITS - 1, x)
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn summarize_fit(points: &[LossDataPoint], fit: &LossFitResult) -> Result<FitSummary> {
    let tan_d_j = fit.tan_d_j;
    let rows = points
        .iter()
        .zip(&fit.residuals)
        .map(|(p, r)| {
            let (jf, npr) = match tan_d_j {
                Some(tj) => (
                    Some(junction_fraction(p.p_sm, p.p_j, fit.tan_d_sm, tj)?),
                    normalized_pr(p.p_sm, p.p_j, fit.tan_d_sm, tj).ok(),
                ),
                None => (None, None),
            };
            Ok(PointRow {
                group_id: p.group_id.clone(),
                n_devices: p.n_devices,
                p_sm: p.p_sm,
                p_j: p.p_j,
                q_measured: p.q_mean,
                q_std: p.q_std,
                q_model: fit.predict_q(p.p_sm, p.p_j),
                residual_inverse_q: *r,
                junction_fraction: jf,
                normalized_pr: npr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitSummary {
        model: fit.model,
        weighting: fit.weighting,
        parameters: fit.parameters.clone(),
        q0: fit.q0,
        q0_stderr: fit.q0_stderr,
        chi_squared: fit.chi_squared,
        dof: fit.dof,
        condition_number: fit.condition_number,
        correlation: correlation(&fit.observed_inverse_q, &fit.fitted_inverse_q),
        points: rows,
    })
}

fn write_q_vs_psm<W: std::io::Write>(fits: &[FitSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model",
        "group",
        "p_sm",
        "p_j",
        "q_measured",
        "q_std",
        "q_model",
    ])?;
    for f in fits {
        let model = model_name(f.model);
        for r in &f.points {
            w.write_record([
                model.to_string(),
                r.group_id.clone(),
                num(r.p_sm),
                num(r.p_j),
                num(r.q_measured),
                opt(r.q_std),
                num(r.q_model),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_q_vs_npr<W: std::io::Write>(fit: &FitSummary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "normalized_pr", "q_measured", "q_std", "q_model"])?;
    for r in &fit.points {
        w.write_record([
            r.group_id.clone(),
            opt(r.normalized_pr),
            num(r.q_measured),
            opt(r.q_std),
            num(r.q_model),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Model Q over a (P_SM, P_J) grid spanning the data, origin excluded.
fn write_surface<W: std::io::Write>(
    fit: &FitSummary,
    points: &[LossDataPoint],
    n: usize,
    writer: W,
) -> Result<()> {
    let tan = |name: &str| {
        fit.parameters
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.value)
    };
    let (ts, tj) = (
        tan("tan_d_sm").unwrap_or(0.0),
        tan("tan_d_j").unwrap_or(0.0),
    );
    let axis = |max: f64| {
        let top = 1.1 * max;
        linspace(top / n as f64, top, n)
    };
    let max_sm = points.iter().map(|p| p.p_sm).fold(0.0, f64::max);
    let max_j = points.iter().map(|p| p.p_j).fold(0.0, f64::max);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["p_sm", "p_j", "q_model"])?;
    for ps in axis(max_sm) {
        for pj in axis(max_j) {
            let inv = ps * ts + pj * tj;
            let q = if inv > 0.0 {
                num(1.0 / inv)
            } else {
                String::new()
            };
            w.write_record([num(ps), num(pj), q])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn model_name(m: LossModel) -> &'static str {
    match m {
        LossModel::SmOnly => "sm",
        LossModel::SmPlusQ0 => "sm+q0",
        LossModel::SmPlusJ => "sm+j",
    }
}

/// Writes `bytes` into the output directory and records it in the manifest.
fn emit(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<()> {
    fs::write(dir.join(name), bytes)?;
    manifest.files.push(name.to_string());
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn load(config: &PipelineConfig) -> Result<(String, Vec<DeviceRecord>)> {
    match &config.dataset {
        Some(path) => Ok((path.display().to_string(), load_device_table(path)?)),
        None => Ok(("bundled".to_string(), bundled_devices())),
    }
}

/// Runs the configured stages. Input and config errors abort before anything
/// is written. Fit failures and failed sweep widths are recorded in the
/// manifest, which is then marked partial; check [`Report::succeeded`].
pub fn run_pipeline(config: &PipelineConfig) -> Result<Report> {
    config.validate().map_err(|e| e.in_stage("config"))?;

    let mut manifest = Manifest::default();
    let mut fits = Vec::new();
    let mut dataset = None;
    let mut points = Vec::new();

    if !config.models.is_empty() {
        let (source, records) = load(config).map_err(|e| e.in_stage("data-io"))?;
        points = group_for_fit(&records, config.grouping).map_err(|e| e.in_stage("data-io"))?;
        dataset = Some(DatasetSummary {
            source,
            n_records: records.len(),
            n_points: points.len(),
            grouping: config.grouping,
        });
        for &model in &config.models {
            let summary = fit_model(&points, model, config.weighting)
                .and_then(|fit| summarize_fit(&points, &fit));
            match summary {
                Ok(s) => fits.push(s),
                Err(e) => manifest.errors.push(StageError {
                    stage: format!("loss-model/{}", model_name(model)),
                    message: e.to_string(),
                }),
            }
        }
    }

    let sweep = match &config.sweep {
        Some(s) => {
            let pts =
                width_sweep(&s.widths(), &s.config()?).map_err(|e| e.in_stage("participation"))?;
            for p in &pts {
                if let Some(msg) = &p.error {
                    manifest.errors.push(StageError {
                        stage: format!("participation/width={}", p.width_um),
                        message: msg.clone(),
                    });
                }
            }
            Some(pts)
        }
        None => None,
    };

    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;

    if let Some(pts) = &sweep {
        let bytes = csv_bytes(|b| crate::participation::write_sweep_csv(pts, b))?;
        emit(dir, SWEEP_FILE, &bytes, &mut manifest)?;
    }
    if !config.models.is_empty() {
        if !fits.is_empty() {
            emit(
                dir,
                Q_VS_PSM_FILE,
                &csv_bytes(|b| write_q_vs_psm(&fits, b))?,
                &mut manifest,
            )?;
        }
        if let Some(j) = fits.iter().find(|f| f.model == LossModel::SmPlusJ) {
            emit(
                dir,
                Q_VS_NPR_FILE,
                &csv_bytes(|b| write_q_vs_npr(j, b))?,
                &mut manifest,
            )?;
            let grid = csv_bytes(|b| write_surface(j, &points, config.grid_points, b))?;
            emit(dir, SURFACE_FILE, &grid, &mut manifest)?;
        }
    }
    manifest.partial = !manifest.errors.is_empty();

    let report = Report {
        schema_version: SCHEMA_VERSION,
        dataset,
        fits,
        sweep,
        manifest,
    };
    if !config.is_sweep_only() {
        fs::write(dir.join(REPORT_FILE), report.to_json()?)?;
    }
    Ok(report)
}
