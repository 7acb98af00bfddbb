//! File-producing commands behind the `hybrid-spc` binary. Each returns the
//! process exit code; progress goes to the supplied writer.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::config::ExperimentFile;
use crate::csvfmt;
use crate::datagen::{excitation_rank, read_dataset, split_blocks, write_dataset};
use crate::error::{Error, Result};
use crate::harness::{
    ablation_csv, ablation_table, fit_dataset, generate_dataset, run_closed_loop, run_open_loop, summary_for_output,
    train_predictor, write_run_files, RunMode,
};
use crate::predictor::{read_predictor, write_predictor, Predictor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Io { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::InvalidArgument(_)
        | Error::Dimension { .. } => EXIT_CONFIG,
        Error::NonFinite(_)
        | Error::InsufficientData { .. }
        | Error::DegenerateRegressor(_)
        | Error::Infeasible
        | Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentFile> {
    match path {
        Some(p) => ExperimentFile::load(p),
        None => Ok(ExperimentFile::default()),
    }
}

fn io_err(out: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(out, e)
}

/// Generates FO training data and writes the CSV and its sidecar. Returns
/// [`EXIT_NUMERICAL`] if the inputs are not persistently exciting.
pub fn cmd_datagen(config: Option<&Path>, out: &Path, seed: Option<u64>, log: &mut dyn Write) -> Result<i32> {
    let mut file = load_config(config)?;
    if let Some(s) = seed {
        file.scenario.seed = s;
    }
    let scn = file.to_scenario(RunMode::Closed)?;
    let clock = Instant::now();
    let ds = generate_dataset(&scn)?;
    let report = excitation_rank(&split_blocks(&ds));
    write_dataset(&ds, out, scn.seed)?;
    let lg = io_err(out);
    writeln!(
        log,
        "wrote {} windows of length {} to {} ({:.1} ms)",
        ds.len(),
        ds.window_len(),
        out.display(),
        clock.elapsed().as_secs_f64() * 1e3
    )
    .map_err(&lg)?;
    writeln!(
        log,
        "excitation rank {}/{} (sigma_max {:e}, sigma_min {:e}): {}",
        report.rank,
        report.required,
        report.sigma_max,
        report.sigma_min,
        if report.is_sufficient { "ok" } else { "INSUFFICIENT" }
    )
    .map_err(&lg)?;
    Ok(if report.is_sufficient { EXIT_OK } else { EXIT_NUMERICAL })
}

/// Fits the predictor on a stored data set and writes it with its sidecar.
pub fn cmd_fit(dataset: &Path, out: &Path, config: Option<&Path>, log: &mut dyn Write) -> Result<i32> {
    let file = load_config(config)?;
    let (ds, meta) = read_dataset(dataset)?;
    let expected = (file.controller.t_ini, file.controller.horizon);
    if (meta.t_ini, meta.horizon) != expected {
        return Err(Error::Config(format!(
            "{}: data set has T_ini={} N={}, config expects T_ini={} N={}",
            dataset.display(),
            meta.t_ini,
            meta.horizon,
            expected.0,
            expected.1
        )));
    }
    let clock = Instant::now();
    let (pred, report) = fit_dataset(&ds, &file.data.fit)?;
    let elapsed = clock.elapsed().as_secs_f64() * 1e3;
    write_predictor(&pred, out)?;
    let lg = io_err(out);
    writeln!(log, "excitation rank {}/{}", report.rank, report.required).map_err(&lg)?;
    writeln!(
        log,
        "predictor {}x{} written to {} ({elapsed:.1} ms)",
        pred.s_star.nrows(),
        pred.s_star.ncols(),
        out.display()
    )
    .map_err(&lg)?;
    writeln!(log, "fit residual (Frobenius): {:?}", pred.fit_residual_fro).map_err(&lg)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub mode: RunMode,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub start_hour: Option<f64>,
    pub steps: Option<usize>,
    /// Pre-fitted predictor; trained from the config when absent.
    pub predictor: Option<PathBuf>,
}

fn obtain_predictor(args: &RunArgs, file: &ExperimentFile, log: &mut dyn Write) -> Result<Predictor> {
    let scn = file.to_scenario(args.mode)?;
    let pred = match &args.predictor {
        Some(p) => read_predictor(p)?,
        None => {
            let clock = Instant::now();
            let (pred, report) = train_predictor(&scn)?;
            writeln!(
                log,
                "trained predictor: rank {}/{}, fit residual {:?} ({:.1} ms)",
                report.rank,
                report.required,
                pred.fit_residual_fro,
                clock.elapsed().as_secs_f64() * 1e3
            )
            .map_err(io_err(&args.out))?;
            pred
        }
    };
    let d = pred.dims;
    if (d.t_ini, d.horizon, d.m, d.p) != (scn.controller.t_ini, scn.controller.horizon, 3, 3) {
        return Err(Error::Config(format!(
            "predictor has T_ini={} N={} m={} p={}, config expects T_ini={} N={} m=3 p=3",
            d.t_ini, d.horizon, d.m, d.p, scn.controller.t_ini, scn.controller.horizon
        )));
    }
    Ok(pred)
}

/// Runs one experiment and writes its CSV files and `summary.json` into
/// `args.out`. Solver failures are reported in the summary, not the exit
/// code.
pub fn cmd_run(args: &RunArgs, log: &mut dyn Write) -> Result<i32> {
    let mut file = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        file.scenario.seed = s;
    }
    if let Some(h) = args.start_hour {
        file.scenario.start_hour = Some(h);
    }
    if let Some(n) = args.steps {
        file.scenario.steps = Some(n);
    }
    file.resolve(args.mode);
    let scn = file.to_scenario(args.mode)?;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let pred = obtain_predictor(args, &file, log)?;
    let timing = file.io.record_timing;
    let lg = io_err(&args.out);

    let clock = Instant::now();
    let metrics = match args.mode {
        RunMode::Ablation => {
            let rows = ablation_table(&scn, &pred)?;
            csvfmt::write_atomic(&args.out.join("ablation.csv"), &ablation_csv(&rows))?;
            for r in &rows {
                writeln!(
                    log,
                    "{:<24} |sigma_u|_F {:.4} MW  |sigma_y|_F {:.4} MW  |dP_w| {:.4} MW",
                    r.label, r.sigma_u_fro, r.sigma_y_fro, r.delta_wind_mw
                )
                .map_err(&lg)?;
            }
            json!({ "ablation": rows })
        }
        RunMode::Open | RunMode::Closed => {
            let result = if args.mode == RunMode::Open {
                run_open_loop(&scn, &pred)?
            } else {
                run_closed_loop(&scn, &pred)?
            };
            write_run_files(&result, &args.out, timing)?;
            let s = &result.summary;
            writeln!(
                log,
                "{} steps: tracking error {:.3} %, solve time mean {:.2} ms max {:.2} ms, \
                 constraint violations {}, solver failures {}",
                s.steps,
                s.tracking_error_pct,
                s.mean_solve_ms.unwrap_or(f64::NAN),
                s.max_solve_ms.unwrap_or(f64::NAN),
                s.constraint_violation_count,
                s.solver_failure_count
            )
            .map_err(&lg)?;
            if let Some(e) = &s.open_loop_errors {
                writeln!(
                    log,
                    "open-loop errors: wind {:.3} %, solar {:.3} %, battery {:.3} %, total {:.3} %",
                    e.wind_pct, e.solar_pct, e.battery_pct, e.total_pct
                )
                .map_err(&lg)?;
            }
            serde_json::to_value(summary_for_output(s, timing))?
        }
    };
    writeln!(log, "{} run finished in {:.2} s", args.mode.as_str(), clock.elapsed().as_secs_f64()).map_err(&lg)?;

    let summary = json!({
        "mode": args.mode,
        "seed": scn.seed,
        "metrics": metrics,
        "config": file.to_json(),
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    csvfmt::write_atomic(&args.out.join("summary.json"), text.as_bytes())?;
    writeln!(log, "wrote results to {}", args.out.display()).map_err(&lg)?;
    Ok(EXIT_OK)
}
