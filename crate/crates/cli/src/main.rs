use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qubit_loss::dataset::{bundled_devices, group_for_fit, load_device_table, Grouping};
use qubit_loss::em::{refine_until_converged, solve_cross_section, CrossSection};
use qubit_loss::loss_model::{fit_model, LossModel, Weighting};
use qubit_loss::participation::{cutoff_sensitivity, write_sweep_csv, SENSITIVITY_CUTOFFS_UM};
use qubit_loss::pipeline::{
    run_pipeline, summarize_fit, to_rounded_json, PipelineConfig, SweepSettings,
};
use qubit_loss::qubit::{
    fit_exponential_with, purcell_corrected_t1, purcell_limit, purcell_subtract_q,
    t1_statistics_with_bins, write_histogram_csv, DecayFitOptions, DecayTrace, FitLoss,
    PurcellParams, DEFAULT_BINS,
};

#[derive(Parser)]
#[command(
    name = "qubit-loss",
    version,
    about = "Surface participation and loss analysis for planar qubits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// P_SM versus finger width for an interdigital capacitor.
    Sweep(SweepArgs),
    /// Fit loss tangents to a device table.
    FitLoss(FitLossArgs),
    /// Fit exponential decays and summarize T1 over traces.
    FitT1(FitT1Args),
    /// Purcell limit from coupling, detuning and cavity linewidth.
    Purcell(PurcellArgs),
    /// Run the full pipeline from a JSON config.
    Report(ReportArgs),
    /// Solve a cross-section given as JSON and write the field samples.
    Solve(SolveArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 1.0)]
    width_min: f64,
    #[arg(long, default_value_t = 20.0)]
    width_max: f64,
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// SM layer thickness (nm).
    #[arg(long, default_value_t = 1.0)]
    t_sm_nm: f64,
    /// SM layer relative permittivity.
    #[arg(long, default_value_t = qubit_loss::units::SAPPHIRE_EPS_REL)]
    eps_sm: f64,
    /// Edge exclusion distance (μm).
    #[arg(long, default_value_t = qubit_loss::em::DEFAULT_EDGE_CUTOFF_UM)]
    cutoff_um: f64,
    #[arg(long, default_value_t = 7)]
    fingers: usize,
    /// Elements per strip.
    #[arg(long, default_value_t = qubit_loss::em::DEFAULT_DISCRETIZATION)]
    discretization: usize,
    /// Sweep CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write P_SM at the sensitivity cutoffs (0.05, 0.1, 0.2 μm) here.
    #[arg(long)]
    sensitivity_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "sm+q0")]
    SmQ0,
    #[value(name = "sm+j")]
    SmJ,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    None,
    Invvar,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    PerDie,
    PerDevice,
}

#[derive(Args)]
struct FitLossArgs {
    /// Device table CSV; the bundled table when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sm+j")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "invvar")]
    weights: WeightArg,
    #[arg(long, value_enum, default_value = "per-die")]
    group: GroupArg,
}

#[derive(Args)]
struct FitT1Args {
    /// Trace CSV with columns delay_us,population. Repeat for several rounds.
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    /// Robust soft-L1 loss with this residual scale.
    #[arg(long)]
    soft_l1: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Histogram CSV path.
    #[arg(long)]
    histogram_out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("coupling").required(true).args(["g", "chi"]))]
struct PurcellArgs {
    /// Coupling g/2π (MHz).
    #[arg(long)]
    g: Option<f64>,
    /// Dispersive shift χ/2π (MHz).
    #[arg(long)]
    chi: Option<f64>,
    /// Detuning Δ/2π (MHz).
    #[arg(long, allow_hyphen_values = true)]
    delta: f64,
    /// Cavity linewidth κ/2π (MHz).
    #[arg(long)]
    kappa: f64,
    /// Measured T1 (μs), to report the Purcell-corrected value and Q.
    #[arg(long, requires = "freq_ghz")]
    t1_us: Option<f64>,
    /// Qubit frequency ω_q/2π (GHz).
    #[arg(long)]
    freq_ghz: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Cross-section JSON.
    #[arg(long)]
    geometry: PathBuf,
    /// Refine until energy changes by less than this fraction.
    #[arg(long)]
    refine: Option<f64>,
    /// Field CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let settings = SweepSettings {
        width_min_um: args.width_min,
        width_max_um: args.width_max,
        points: args.points,
        t_sm_nm: args.t_sm_nm,
        eps_sm: args.eps_sm,
        cutoff_um: args.cutoff_um,
        n_fingers: args.fingers,
        discretization: args.discretization,
    };
    let config = settings.config()?;
    let widths = settings.widths();
    let points = qubit_loss::participation::width_sweep(&widths, &config)?;
    write_sweep_csv(&points, output(args.out.as_deref())?)?;

    if let Some(path) = &args.sensitivity_out {
        let mut w = File::create(path)?;
        writeln!(w, "width_um,cutoff_um,p_sm")?;
        for &width in &widths {
            let geom = qubit_loss::em::interdigital_unit_cell(width, args.fingers, 1.0)?
                .with_discretization(args.discretization);
            let sol = solve_cross_section(&geom)?;
            for (c, p) in cutoff_sensitivity(&sol, &config.sm, &SENSITIVITY_CUTOFFS_UM)? {
                writeln!(w, "{width},{c},{p:.8e}")?;
            }
        }
    }

    let failed: Vec<_> = points.iter().filter(|p| p.error.is_some()).collect();
    for p in &failed {
        eprintln!(
            "width {} um failed: {}",
            p.width_um,
            p.error.as_deref().unwrap_or("")
        );
    }
    Ok(if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn fit_loss(args: FitLossArgs) -> Result<ExitCode> {
    let records = match &args.input {
        Some(p) => load_device_table(p).with_context(|| format!("loading {}", p.display()))?,
        None => bundled_devices(),
    };
    let grouping = match args.group {
        GroupArg::PerDie => Grouping::PerDieDesign,
        GroupArg::PerDevice => Grouping::PerDevice,
    };
    let model = match args.model {
        ModelArg::SmQ0 => LossModel::SmPlusQ0,
        ModelArg::SmJ => LossModel::SmPlusJ,
    };
    let weighting = match args.weights {
        WeightArg::None => Weighting::None,
        WeightArg::Invvar => Weighting::InverseVariance,
    };
    let points = group_for_fit(&records, grouping)?;
    let fit = fit_model(&points, model, weighting)?;
    print!("{}", to_rounded_json(&summarize_fit(&points, &fit)?)?);
    Ok(ExitCode::SUCCESS)
}

fn fit_t1(args: FitT1Args) -> Result<ExitCode> {
    let options = DecayFitOptions {
        loss: args
            .soft_l1
            .map_or(FitLoss::Linear, |f_scale| FitLoss::SoftL1 { f_scale }),
        ..DecayFitOptions::default()
    };
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for path in &args.traces {
        let trace =
            DecayTrace::load(path).with_context(|| format!("loading {}", path.display()))?;
        let est = fit_exponential_with(&trace, &options)
            .with_context(|| format!("fitting {}", path.display()))?;
        rows.push(
            json!({ "trace": path.display().to_string(), "meta": trace.meta, "estimate": est }),
        );
        estimates.push(est);
    }
    let stats = t1_statistics_with_bins(&estimates, args.bins)?;
    if let Some(p) = &args.histogram_out {
        write_histogram_csv(&stats.histogram, File::create(p)?)?;
    }
    print!(
        "{}",
        to_rounded_json(&json!({ "fits": rows, "statistics": stats }))?
    );
    Ok(ExitCode::SUCCESS)
}

fn purcell(args: PurcellArgs) -> Result<ExitCode> {
    let params = PurcellParams::from_cyclic_mhz(args.g, args.delta, args.kappa, args.chi);
    let limit = purcell_limit(&params)?;
    if let Some(w) = &limit.warning {
        eprintln!("warning: {w}");
    }
    let t_ms = limit.t_purcell.seconds() * 1e3;
    let mut out = json!({
        "t_purcell_ms": if t_ms.is_finite() { json!(t_ms) } else { json!(null) },
        "unbounded": !t_ms.is_finite(),
        "g_mhz": limit.g / (2.0 * std::f64::consts::PI * 1e6),
        "dispersive_ratio": limit.dispersive_ratio,
        "warning": limit.warning,
    });
    if let (Some(t1), Some(f)) = (args.t1_us, args.freq_ghz) {
        out["t1_corrected_us"] = json!(purcell_corrected_t1(t1, t_ms)?);
        out["q"] = json!(purcell_subtract_q(t1, t_ms, f)?);
    }
    print!("{}", to_rounded_json(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let config = PipelineConfig::from_file(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let report = run_pipeline(&config)?;
    for f in &report.manifest.files {
        println!("{}", config.output_dir.join(f).display());
    }
    if !config.is_sweep_only() {
        println!(
            "{}",
            config
                .output_dir
                .join(qubit_loss::pipeline::REPORT_FILE)
                .display()
        );
    }
    for e in &report.manifest.errors {
        eprintln!("{}: {}", e.stage, e.message);
    }
    Ok(if report.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn solve(args: SolveArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.geometry)
        .with_context(|| format!("reading {}", args.geometry.display()))?;
    let geom: CrossSection = serde_json::from_str(&text).context("parsing cross-section")?;
    let sol = match args.refine {
        Some(tol) => {
            let r = refine_until_converged(&geom, tol)?;
            eprintln!(
                "converged at {} elements/strip after {} levels",
                r.elements_per_strip, r.iterations
            );
            r.solution
        }
        None => solve_cross_section(&geom)?,
    };
    eprintln!(
        "capacitance {:.6e} F/m, energy {:.6e} J/m",
        sol.capacitance_per_len, sol.energy_per_len
    );
    sol.write_csv(output(args.out.as_deref())?)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::FitLoss(a) => fit_loss(a),
        Command::FitT1(a) => fit_t1(a),
        Command::Purcell(a) => purcell(a),
        Command::Report(a) => report(a),
        Command::Solve(a) => solve(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
