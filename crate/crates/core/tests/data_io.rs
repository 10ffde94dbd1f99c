use std::fs;

use proptest::prelude::*;
use qubit_loss::dataset::{
    bundled_devices, group_for_fit, read_device_table, write_device_table, Grouping,
    BUNDLED_DEVICE_TABLE,
};
use qubit_loss::loss_model::LossModel;
use qubit_loss::pipeline::{
    run_pipeline, PipelineConfig, SweepSettings, Q_VS_NPR_FILE, Q_VS_PSM_FILE, REPORT_FILE,
    SURFACE_FILE, SWEEP_FILE,
};
use qubit_loss::Error;

const HEADER: &str = "device_id,geometry,omega_q_ghz,omega_c_ghz,g_mhz,t1_mean_us,t1_std_us,t_purcell_ms,q_mean_1e6,q_std_1e6,p_sm_1e-4,p_j_1e-4\n";

fn listing(dir: &std::path::Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn bundled_round_trip_is_identity() {
    let first = bundled_devices();
    let mut buf = Vec::new();
    write_device_table(&first, &mut buf).unwrap();
    let second = read_device_table(buf.as_slice()).unwrap();
    assert_eq!(first, second);
    assert_eq!(
        String::from_utf8(buf).unwrap().lines().count(),
        BUNDLED_DEVICE_TABLE.lines().count()
    );
}

#[test]
fn angular_values_derived_once() {
    let d = &bundled_devices()[0];
    assert!((d.omega_q - 2.0 * std::f64::consts::PI * 4.43e9).abs() < 1.0);
    assert!((d.g - 2.0 * std::f64::consts::PI * 37.3e6).abs() < 1e-3);
    assert_eq!(d.omega_q_ghz, 4.43);
}

#[test]
fn default_pipeline_reports_both_fits() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&PipelineConfig::new(dir.path())).unwrap();
    assert!(report.succeeded());
    let q0 = report.fit(LossModel::SmPlusQ0).unwrap();
    let j = report.fit(LossModel::SmPlusJ).unwrap();
    assert!((6.6e-4..=1.0e-3).contains(&q0.parameters[0].value));
    assert!((5.7e6..=8.5e6).contains(&q0.q0.unwrap()));
    assert!((7.1e-4..=1.07e-3).contains(&j.parameters[0].value));
    assert!((2.8e-3..=4.2e-3).contains(&j.parameters[1].value));
    let mut expected = vec![Q_VS_PSM_FILE, Q_VS_NPR_FILE, SURFACE_FILE, REPORT_FILE];
    expected.sort_unstable();
    assert_eq!(listing(dir.path()), expected);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["manifest"]["partial"], false);
    let grid = fs::read_to_string(dir.path().join(SURFACE_FILE)).unwrap();
    assert!(grid.starts_with("p_sm,p_j,q_model\n"));
    assert_eq!(grid.lines().count(), 1 + 41 * 41);
}

#[test]
fn reports_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(a.path());
    cfg.sweep = Some(SweepSettings {
        points: 3,
        discretization: 32,
        ..SweepSettings::default()
    });
    run_pipeline(&cfg).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    run_pipeline(&cfg).unwrap();
    for name in listing(a.path()) {
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn empty_dataset_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.csv");
    fs::write(&data, HEADER).unwrap();
    let out = dir.path().join("out");
    let mut cfg = PipelineConfig::new(&out);
    cfg.dataset = Some(data);
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "data-io");
            assert!(matches!(*source, Error::Validation { .. }));
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
    assert!(!out.exists());
}

#[test]
fn sweep_only_config_emits_only_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: PipelineConfig = serde_json::from_value(serde_json::json!({
        "models": [],
        "sweep": {"width_min_um": 1.0, "width_max_um": 4.0, "points": 3, "discretization": 32},
        "output_dir": dir.path(),
    }))
    .unwrap();
    let report = run_pipeline(&cfg).unwrap();
    assert!(report.succeeded());
    assert_eq!(listing(dir.path()), vec![SWEEP_FILE]);
    let csv = fs::read_to_string(dir.path().join(SWEEP_FILE)).unwrap();
    assert!(csv.starts_with("width_um,p_sm,p_sa,p_ma,cutoff_um,n_fingers\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn degenerate_fit_marks_report_partial() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat.csv");
    let rows = [
        "A1-1,interdigital_2d,4.4,6.4,37.0,40.0,4.0,9.0,1.10,0.10,8.67,0.22",
        "A1-2,interdigital_2d,4.4,6.4,37.0,36.0,4.0,9.0,1.00,0.10,8.67,0.20",
        "A2-1,interdigital_2d,4.4,6.4,37.0,38.0,4.0,9.0,1.05,0.10,8.67,0.24",
    ];
    fs::write(&data, format!("{HEADER}{}\n", rows.join("\n"))).unwrap();
    let out = dir.path().join("out");
    let mut cfg = PipelineConfig::new(&out);
    cfg.dataset = Some(data);
    cfg.grouping = Grouping::PerDevice;
    let report = run_pipeline(&cfg).unwrap();
    assert!(!report.succeeded());
    assert!(report.manifest.partial);
    assert!(report
        .manifest
        .errors
        .iter()
        .any(|e| e.stage == "loss-model/sm+q0"));
    let json = fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    assert!(json.contains("\"partial\": true"));
}

fn record_line() -> impl Strategy<Value = String> {
    (
        (1u32..10, 1u32..5, 0usize..3),
        (300u32..600, 100u32..250, 300u32..900),
        (100u32..30000, prop::option::of(1u32..3000), 2u32..50),
        (
            1u32..1000,
            prop::option::of(1u32..200),
            1u32..4000,
            1u32..100,
        ),
    )
        .prop_map(
            |((die, n, geom), (fq, dfc, g), (t1, t1s, tp_ratio), (q, qs, psm, pj))| {
                let geometry = ["interdigital_2d", "dumbbell_2d", "dumbbell_3d"][geom];
                let t1 = t1 as f64 / 10.0;
                let tp = (t1 * tp_ratio as f64 / 1000.0 * 10.0).ceil() / 10.0 + 0.1;
                let opt = |v: Option<u32>, s: f64| {
                    v.map(|x| format!("{}", x as f64 / s)).unwrap_or_default()
                };
                format!(
                    "D{die}-{n},{geometry},{},{},{},{t1},{},{tp},{},{},{},{}",
                    fq as f64 / 100.0,
                    (fq + dfc) as f64 / 100.0,
                    g as f64 / 10.0,
                    opt(t1s, 10.0),
                    q as f64 / 100.0,
                    opt(qs, 100.0),
                    psm as f64 / 100.0,
                    pj as f64 / 100.0,
                )
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ingestion_round_trip(lines in prop::collection::vec(record_line(), 1..20)) {
        let text = format!("{HEADER}{}\n", lines.join("\n"));
        let first = read_device_table(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_device_table(&first, &mut buf).unwrap();
        let second = read_device_table(buf.as_slice()).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn grouping_conserves_devices(lines in prop::collection::vec(record_line(), 1..30)) {
        let text = format!("{HEADER}{}\n", lines.join("\n"));
        let records = read_device_table(text.as_bytes()).unwrap();
        for mode in [Grouping::PerDieDesign, Grouping::PerDevice] {
            let pts = group_for_fit(&records, mode).unwrap();
            prop_assert_eq!(pts.iter().map(|p| p.n_devices).sum::<usize>(), records.len());
        }
    }
}
