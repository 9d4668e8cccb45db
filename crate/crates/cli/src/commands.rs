use std::fs;
use std::path::{Path, PathBuf};

use isomix::estimators::ks_gof_statistic;
use isomix::inference::{bootstrap_bands, permutation_test};
use isomix::io::{read_sample_csv, write_sample_csv};
use isomix::simulation::{power_study, run_replications, Generator, SimulationConfig};
use isomix::{default_grid, estimate as fit_curves, EmConfig, Error, GridMode, Init, Method, MixtureSample, TimeGrid};
use serde_json::{json, Value};

use crate::families::parse_cdf;
use crate::output::{csv_preamble, csv_table, emit, json_text};
use crate::{FitArgs, Format};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_ESTIMATION: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            _ if e.is_input_error() => EXIT_INPUT,
            Error::InvalidConfig(_) | Error::InvalidGrid(_) => EXIT_CONFIG,
            _ => EXIT_ESTIMATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

struct Prepared {
    sample: MixtureSample,
    grid: TimeGrid,
    method: Method,
    em: EmConfig,
    config: Value,
}

fn prepare(command: &str, fit: &FitArgs) -> CliResult<Prepared> {
    let method: Method = fit.method.parse()?;
    let mode: GridMode = fit.grid.parse()?;
    let em = EmConfig {
        max_iterations: fit.max_iter,
        tolerance: fit.tol,
        init: fit.init.parse::<Init>()?,
        ..EmConfig::default()
    };
    em.validate()?;

    let file = fs::File::open(&fit.input).map_err(|e| CliError {
        code: EXIT_INPUT,
        message: format!("cannot open {}: {e}", fit.input.display()),
    })?;
    let sample = read_sample_csv(std::io::BufReader::new(file))?;
    let grid = default_grid(&sample, mode)?;

    let config = json!({
        "command": command,
        "input": fit.input.display().to_string(),
        "method": method,
        "grid": mode.to_string(),
        "max_iter": em.max_iterations,
        "tol": em.tolerance,
        "init": em.init,
        "clamp_epsilon": em.clamp_epsilon,
    });
    Ok(Prepared {
        sample,
        grid,
        method,
        em,
        config,
    })
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let drawn = rand::random::<u64>();
        eprintln!("note: no seed given, using {drawn}");
        drawn
    })
}

fn set(config: &mut Value, key: &str, value: Value) {
    if let Value::Object(map) = config {
        map.insert(key.to_string(), value);
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn estimate(fit: &FitArgs, format: Format, manifest: Option<&Path>) -> CliResult<()> {
    let mut p = prepare("estimate", fit)?;
    set(&mut p.config, "format", json!(format.as_str()));
    set(&mut p.config, "seed", Value::Null);
    let report = fit_curves(p.method, &p.sample, &p.grid, &p.em)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    let em = report.em.as_ref();
    let meta = json!({
        "method": report.method,
        "config": p.config,
        "n": p.sample.n(),
        "components": p.sample.k(),
        "grid_points": p.grid.len(),
        "iterations": em.map(|s| s.iterations),
        "converged": em.map(|s| s.converged),
        "final_objective": em.map(|s| s.final_objective),
        "warnings": report.warnings,
        "flagged_times": report.flagged_times,
    });

    let curves = &report.curves;
    let mut rows = Vec::new();
    for k in 0..curves.components() {
        for (j, &t) in p.grid.times().iter().enumerate() {
            rows.push((t, k + 1, curves.value(j, k)));
        }
    }
    let text = match format {
        Format::Csv => {
            let mut text = csv_preamble("estimate", &p.config);
            csv_table(
                &mut text,
                "t,component,estimate",
                rows.iter().map(|&(t, k, v)| vec![num(t), k.to_string(), num(v)]),
            );
            text
        }
        Format::Json => {
            let mut doc = meta.clone();
            let list: Vec<Value> = rows
                .iter()
                .map(|&(t, k, v)| json!({"t": t, "component": k, "estimate": v}))
                .collect();
            set(&mut doc, "curves", Value::Array(list));
            json_text(&doc)
        }
    };
    emit(fit.output.as_deref(), &text)?;

    let manifest_path: Option<PathBuf> = manifest.map(Path::to_path_buf).or_else(|| {
        fit.output.as_ref().filter(|_| format == Format::Csv).map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    if let Some(path) = manifest_path {
        emit(Some(&path), &json_text(&meta))?;
    }
    Ok(())
}

pub fn test(fit: &FitArgs, permutations: usize, seed: Option<u64>, restrict: Option<&[f64]>) -> CliResult<()> {
    let mut p = prepare("test", fit)?;
    if p.sample.k() != 2 {
        return Err(CliError::config(format!(
            "the permutation test compares two components, sample has {}",
            p.sample.k()
        )));
    }
    if let Some(times) = restrict {
        if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
            return Err(CliError::config("--restrict needs finite times"));
        }
    }
    let seed = resolve_seed(seed);
    set(&mut p.config, "perms", json!(permutations));
    set(&mut p.config, "restrict", json!(restrict));
    set(&mut p.config, "seed", json!(seed));

    let result = permutation_test(&p.sample, &p.grid, p.method, &p.em, permutations, restrict, seed)?;
    let doc = json!({
        "s0": result.s0,
        "p_value": result.p_value,
        "K": result.k,
        "seed": result.seed,
        "config": p.config,
    });
    emit(fit.output.as_deref(), &json_text(&doc))
}

pub fn bootstrap(fit: &FitArgs, format: Format, replicates: usize, level: f64, seed: Option<u64>) -> CliResult<()> {
    let mut p = prepare("bootstrap", fit)?;
    let seed = resolve_seed(seed);
    set(&mut p.config, "format", json!(format.as_str()));
    set(&mut p.config, "boot", json!(replicates));
    set(&mut p.config, "level", json!(level));
    set(&mut p.config, "seed", json!(seed));

    let point = fit_curves(p.method, &p.sample, &p.grid, &p.em)?;
    for w in &point.warnings {
        eprintln!("warning: {w}");
    }
    let bands = bootstrap_bands(&p.sample, &p.grid, p.method, &p.em, replicates, level, seed)?;
    if bands.failed > 0 {
        eprintln!("warning: {} of {} bootstrap replicates failed and were dropped", bands.failed, bands.b);
    }

    let times = p.grid.times();
    let mut rows = Vec::new();
    for k in 0..point.curves.components() {
        for (j, &t) in times.iter().enumerate() {
            rows.push((t, k + 1, point.curves.value(j, k), bands.sd[k][j], bands.lower[k][j], bands.upper[k][j]));
        }
    }
    let text = match format {
        Format::Csv => {
            let mut text = csv_preamble("bootstrap", &p.config);
            text.push_str(&format!("# failed replicates: {}\n", bands.failed));
            csv_table(
                &mut text,
                "t,component,estimate,sd,lo,hi",
                rows.iter()
                    .map(|&(t, k, e, sd, lo, hi)| vec![num(t), k.to_string(), num(e), num(sd), num(lo), num(hi)]),
            );
            text
        }
        Format::Json => {
            let list: Vec<Value> = rows
                .iter()
                .map(|&(t, k, e, sd, lo, hi)| json!({"t": t, "component": k, "estimate": e, "sd": sd, "lo": lo, "hi": hi}))
                .collect();
            json_text(&json!({
                "config": p.config,
                "B": bands.b,
                "failed": bands.failed,
                "bands": list,
            }))
        }
    };
    emit(fit.output.as_deref(), &text)
}

pub struct SimulateRequest<'a> {
    pub config: &'a Path,
    pub output: Option<&'a Path>,
    pub format: Format,
    pub replicates: Option<usize>,
    pub permutations: Option<usize>,
    pub bootstrap: Option<usize>,
    pub seed: Option<u64>,
    pub dump_sample: Option<&'a Path>,
}

pub fn simulate(req: &SimulateRequest) -> CliResult<()> {
    let text = fs::read_to_string(req.config)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", req.config.display())))?;
    let mut cfg = SimulationConfig::from_toml_str(&text)?;
    if let Some(r) = req.replicates {
        cfg.replicates = r;
    }
    if let Some(k) = req.permutations {
        cfg.permutations = k;
    }
    if let Some(b) = req.bootstrap {
        cfg.bootstrap = b;
    }
    let seed = resolve_seed(req.seed.or(cfg.seed));
    cfg.seed = Some(seed);

    let spec = cfg.spec(seed)?;
    let methods = cfg.methods()?;
    let metrics = cfg.metrics_config()?;

    if let Some(path) = req.dump_sample {
        let data = Generator::new(&spec)?.replicate(0)?;
        let mut buf = Vec::new();
        write_sample_csv(&mut buf, &data.sample)?;
        emit(Some(path), &String::from_utf8(buf).expect("sample csv is ascii"))?;
    }

    let report = run_replications(&spec, &methods, &metrics)?;
    let power = if cfg.permutations > 0 {
        Some(power_study(
            &spec.null_variant(),
            &spec,
            &methods,
            cfg.permutations,
            cfg.grid_points,
            &metrics.em,
        )?)
    } else {
        None
    };

    let mut config = serde_json::to_value(&cfg).expect("config serialises");
    set(&mut config, "format", json!(req.format.as_str()));
    let text = match req.format {
        Format::Csv => {
            let mut text = csv_preamble("simulate", &config);
            let mut rows = vec![
                vec!["run".into(), "all".into(), "all".into(), "censoring_target".into(), num(report.censoring_target)],
                vec!["run".into(), "all".into(), "all".into(), "censoring_realized".into(), num(report.censoring_realized)],
            ];
            let tidy = report.tidy().into_iter().chain(power.iter().flat_map(|p| p.tidy()));
            rows.extend(tidy.map(|r| vec![r.table, r.estimator, r.component, r.metric, num(r.value)]));
            csv_table(&mut text, "table,estimator,component,metric,value", rows);
            text
        }
        Format::Json => json_text(&json!({
            "config": config,
            "report": report,
            "power": power,
        })),
    };
    emit(req.output, &text)
}

pub fn gof(fit: &FitArgs, f1: &str, f2: &str) -> CliResult<()> {
    let cdf1 = parse_cdf(f1).map_err(CliError::config)?;
    let cdf2 = parse_cdf(f2).map_err(CliError::config)?;
    let mut p = prepare("gof", fit)?;
    set(&mut p.config, "f1", json!(f1));
    set(&mut p.config, "f2", json!(f2));
    set(&mut p.config, "seed", Value::Null);

    let report = fit_curves(p.method, &p.sample, &p.grid, &p.em)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let delta = ks_gof_statistic(&report.curves, cdf1, cdf2, p.sample.n())?;
    let doc = json!({
        "delta": delta,
        "n": p.sample.n(),
        "config": p.config,
    });
    emit(fit.output.as_deref(), &json_text(&doc))
}
