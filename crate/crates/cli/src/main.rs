//! `mrm`: run experiments, sweeps, acceptance suites and figure reproductions.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure (divergence, overflow,
//! non-finite signal). `verify` exits 1 when a criterion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use mrm_core::analysis::{hausdorff_to_cycle, reference_cycle};
use mrm_core::config::{ConfigError, ExperimentConfig, ParamGrid};
use mrm_core::dynamics::{flow, FlowConfig};
use mrm_core::engine::{run, EngineError, RunRecord, RunSpec};
use mrm_core::games::{game_from_id, norm};
use mrm_core::io::{metadata_json, record_csv, table_csv, write_atomic};
use mrm_core::mirror::{MirrorKind, MirrorMap};
use mrm_core::verify;

const FIG1: &str = include_str!("../../../configs/fig1.toml");
const FIG2: &str = include_str!("../../../configs/fig2.toml");

#[derive(Parser)]
#[command(name = "mrm", version, about = "Mirrored Robbins-Monro experiments")]
struct Cli {
    /// Directory for every output file.
    #[arg(long, global = true, default_value = ".")]
    outdir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one config; writes <stem>.csv and <stem>.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a config over a parameter grid and seed list; writes one file pair per run and <stem>_sweep.csv.
    Sweep {
        config: PathBuf,
        /// e.g. "p=0.6,0.8;gamma=0.1,0.05"; empty means the config as is.
        #[arg(long, default_value = "")]
        grid: String,
        /// "0..10" or "1,2,5".
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Run acceptance suites ("all", or c1..c13) and write verify_<suite>.json.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Reproduce a figure (fig1, fig2): per-method CSVs plus a gnuplot script.
    Reproduce { figure: String },
    /// Integrate the mean dynamics ẏ = v(Q(y)) with RK4.
    Dynamics {
        #[arg(long)]
        game: String,
        #[arg(long, default_value = "euclidean")]
        mirror: String,
        /// Initial dual state, comma separated (defaults to zeros).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Keep every k-th step.
        #[arg(long, default_value_t = 10)]
        every: usize,
        #[arg(long, default_value = "dynamics")]
        output: String,
    },
}

enum Failure {
    Config(String),
    Numeric(String),
    Failed(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn engine_failure(e: EngineError) -> Failure {
    match e {
        EngineError::Config(_) => Failure::Config(e.to_string()),
        _ => Failure::Numeric(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("MRM_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: MRM_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(2);
            }
        }
    }
    let res = match cli.cmd {
        Cmd::Run { config, seed } => cmd_run(&config, seed, &cli.outdir),
        Cmd::Sweep { config, grid, seeds } => cmd_sweep(&config, &grid, &seeds, &cli.outdir),
        Cmd::Verify { suite } => cmd_verify(&suite, &cli.outdir),
        Cmd::Reproduce { figure } => cmd_reproduce(&figure, &cli.outdir),
        Cmd::Dynamics { game, mirror, y0, horizon, dt, every, output } => cmd_dynamics(&game, &mirror, y0, horizon, dt, every, &output, &cli.outdir),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Failed(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_toml(&text)?)
}

fn write_run(outdir: &Path, stem: &str, cfg: &ExperimentConfig, rec: &RunRecord) -> anyhow::Result<()> {
    write_atomic(&outdir.join(format!("{stem}.csv")), &record_csv(rec)).with_context(|| format!("writing {stem}.csv"))?;
    write_atomic(&outdir.join(format!("{stem}.json")), &metadata_json(cfg, rec)).with_context(|| format!("writing {stem}.json"))?;
    Ok(())
}

fn failure_report(rec: &RunRecord) -> Option<String> {
    let f = rec.failure.as_ref()?;
    let c = &rec.counters;
    Some(format!(
        "{} after {} steps; log-argument clips {} of {} steps ({:.2}%)",
        serde_json::to_string(f).unwrap_or_default(),
        c.steps,
        c.clips,
        c.steps,
        100.0 * c.clip_rate()
    ))
}

fn cmd_run(path: &Path, seed: Option<u64>, outdir: &Path) -> Result<(), Failure> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let spec = cfg.build()?;
    let rec = run(&spec).map_err(engine_failure)?;
    let stem = cfg.stem();
    write_run(outdir, &stem, &cfg, &rec)?;
    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(m) = failure_report(&rec) {
        return Err(Failure::Numeric(m));
    }
    println!("{stem}: {} steps, final x = {:?}", rec.counters.steps, rec.terminal.x);
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Config(format!("seeds must look like '0..10' or '1,2,5', got '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn cmd_sweep(path: &Path, grid: &str, seeds: &str, outdir: &Path) -> Result<(), Failure> {
    let cfg = load_config(path)?;
    let seeds = parse_seeds(seeds)?;
    let axes = if grid.trim().is_empty() { Vec::new() } else { ParamGrid::parse(grid)? };
    let points = ParamGrid::product(&axes);
    // validate every grid point up front so a typo fails before any work
    for p in &points {
        cfg.with_overrides(p)?.build()?;
    }
    let items = mrm_core::engine::sweep(&cfg, &seeds, &points);
    let stem = cfg.stem();
    let keys: Vec<String> = axes.iter().map(|a| a.0.clone()).collect();
    let dim = game_from_id(&cfg.game).map_err(|e| Failure::Config(e.to_string()))?.dim();
    let mut out = String::new();
    let mut header: Vec<String> = keys.clone();
    header.extend(["seed", "status", "steps", "sup_dual_norm"].map(String::from));
    header.extend((0..dim).map(|i| format!("x_{i}")));
    out.push_str(&header.join(","));
    out.push('\n');
    let mut failures = 0;
    for it in &items {
        let mut row: Vec<String> = it.point.0.iter().map(|(_, v)| v.to_string()).collect();
        row.push(it.seed.to_string());
        match &it.result {
            Ok(rec) => {
                let run_cfg = cfg.with_overrides(&it.point)?.with_seed(it.seed);
                let label = it.point.label();
                let name = if label.is_empty() { format!("{stem}_s{}", it.seed) } else { format!("{stem}_{label}_s{}", it.seed) };
                write_run(outdir, &name, &run_cfg, rec)?;
                let status = match &rec.failure {
                    None => "ok".to_string(),
                    Some(_) => {
                        failures += 1;
                        "numeric_failure".to_string()
                    }
                };
                row.extend([status, rec.counters.steps.to_string(), rec.sup_dual_norm.to_string()]);
                row.extend(rec.terminal.x.iter().map(|v| v.to_string()));
            }
            Err(e) => {
                failures += 1;
                eprintln!("seed {} {}: {e}", it.seed, it.point.label());
                row.extend(["error".to_string(), String::new(), String::new()]);
                row.extend((0..dim).map(|_| String::new()));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(&outdir.join(format!("{stem}_sweep.csv")), &out).context("writing sweep table")?;
    println!("{} runs, {failures} failed", items.len());
    if failures > 0 {
        return Err(Failure::Numeric(format!("{failures} of {} runs failed", items.len())));
    }
    Ok(())
}

fn cmd_verify(suite: &str, outdir: &Path) -> Result<(), Failure> {
    if !verify::suite_names().contains(&suite) {
        return Err(Failure::Config(format!("unknown suite '{suite}'; expected one of {}", verify::suite_names().join(", "))));
    }
    let ids: Vec<&str> = if suite == "all" { verify::SUITES.iter().map(|s| s.0).collect() } else { vec![suite] };
    let mut results = Vec::new();
    for id in ids {
        let r = verify::run_criterion(id).expect("known suite");
        println!("{}", r.line());
        results.push(r);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    let report = json!({"suite": suite, "passed": passed, "total": results.len(), "results": results});
    write_atomic(&outdir.join(format!("verify_{suite}.json")), &(serde_json::to_string_pretty(&report).unwrap() + "\n")).context("writing verify report")?;
    if passed < results.len() {
        return Err(Failure::Failed(format!("{} of {} criteria failed", results.len() - passed, results.len())));
    }
    Ok(())
}

fn gnuplot_script(figure: &str, series: &[(String, String)], box_limits: Option<f64>) -> String {
    let mut s = format!("# gnuplot {figure}.gp\nset datafile separator ','\nset terminal pngcairo size 900,800\nset output '{figure}.png'\nset size square\nset xlabel 'x_0'\nset ylabel 'x_1'\n");
    if let Some(b) = box_limits {
        s.push_str(&format!("set xrange [-{b}:{b}]\nset yrange [-{b}:{b}]\n"));
    }
    let parts: Vec<String> = series.iter().map(|(file, using)| format!("'{file}' every ::1 using {using} with lines title '{}'", file.trim_end_matches(".csv"))).collect();
    s.push_str(&format!("plot {}\n", parts.join(", \\\n     ")));
    s
}

fn cmd_reproduce(figure: &str, outdir: &Path) -> Result<(), Failure> {
    let base = match figure {
        "fig1" => ExperimentConfig::from_toml(FIG1)?,
        "fig2" => ExperimentConfig::from_toml(FIG2)?,
        other => return Err(Failure::Config(format!("unknown figure '{other}'; expected fig1 or fig2"))),
    };
    let mut series = Vec::new();
    let mut diag = Vec::new();
    let mut records = Vec::new();
    for alg in ["sga", "eg", "og"] {
        let mut cfg = base.clone();
        cfg.algorithm = alg.into();
        cfg.name = Some(format!("{figure}_{alg}"));
        let spec: RunSpec = cfg.build()?;
        let rec = run(&spec).map_err(engine_failure)?;
        if let Some(m) = failure_report(&rec) {
            return Err(Failure::Numeric(format!("{alg}: {m}")));
        }
        write_run(outdir, &cfg.stem(), &cfg, &rec)?;
        series.push((format!("{}.csv", cfg.stem()), "3:4".to_string()));
        records.push((alg, spec, rec));
    }
    let script = if figure == "fig1" {
        let (_, spec, _) = &records[0];
        let cyc = reference_cycle(&spec.map, &spec.game, &spec.y0, 500.0, 1e-3).map_err(|e| Failure::Numeric(e.to_string()))?;
        let rho = 0.5 * cyc.min_radius;
        let cpath = format!("{figure}_cycle.csv");
        write_atomic(&outdir.join(&cpath), &table_csv(&["x_0", "x_1"], cyc.points.iter().step_by(10).cloned())).context("writing cycle")?;
        let pts: Vec<Vec<f64>> = cyc.points.iter().step_by(10).cloned().collect();
        for (alg, spec, rec) in &records {
            let kept: Vec<Vec<f64>> = rec.full_rows().filter(|r| r.n > spec.iters / 2).map(|r| r.x.clone()).collect();
            let (fwd, back) = hausdorff_to_cycle(&kept, &pts);
            let min_r = kept.iter().map(|x| norm(x)).fold(f64::INFINITY, f64::min);
            println!("{figure} {alg}: Hausdorff to reference cycle {:.4} (iterates->cycle {fwd:.4}, cycle->iterates {back:.4}), min radius {min_r:.3}, rho* {rho:.3}", fwd.max(back));
            diag.push(json!({"method": alg, "hausdorff_forward": fwd, "hausdorff_back": back, "min_radius": min_r, "rho_star": rho, "within_0_1": fwd.max(back) <= 0.1 && min_r >= rho}));
        }
        series.push((cpath, "1:2".into()));
        gnuplot_script(figure, &series, None)
    } else {
        for (alg, _, rec) in &records {
            let x = &rec.terminal.x;
            let gap = 1.0 - x[0].abs().max(x[1].abs());
            println!("{figure} {alg}: boundary gap 1 - max|x_i| = {gap:.2e} at n = {}, distance to origin {:.3}", rec.terminal.n, norm(x));
            diag.push(json!({"method": alg, "boundary_gap": gap, "final_x": x, "origin_distance": norm(x), "at_boundary": gap <= 1e-2}));
        }
        gnuplot_script(figure, &series, Some(1.05))
    };
    write_atomic(&outdir.join(format!("{figure}.gp")), &script).context("writing gnuplot script")?;
    write_atomic(&outdir.join(format!("{figure}_diagnostics.json")), &(serde_json::to_string_pretty(&diag).unwrap() + "\n")).context("writing diagnostics")?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_dynamics(game: &str, mirror: &str, y0: Option<Vec<f64>>, horizon: f64, dt: f64, every: usize, output: &str, outdir: &Path) -> Result<(), Failure> {
    let g = game_from_id(game).map_err(|e| Failure::Config(e.to_string()))?;
    let kind = MirrorKind::parse(mirror).map_err(|e| Failure::Config(e.to_string()))?;
    let map = MirrorMap::for_game(kind, &g).map_err(|e| Failure::Config(e.to_string()))?;
    let y0 = y0.unwrap_or_else(|| vec![0.0; g.dim()]);
    if y0.len() != g.dim() {
        return Err(Failure::Config(format!("y0 has {} entries, game '{game}' needs {}", y0.len(), g.dim())));
    }
    let cfg = FlowConfig::new(horizon).with_dt(dt).storing_every(every.max(1));
    let f = flow(&map, &g, &y0, &cfg).map_err(|e| match e {
        mrm_core::dynamics::FlowError::Settings(m) => Failure::Config(m),
        other => Failure::Numeric(other.to_string()),
    })?;
    let d = g.dim();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.extend((0..d).map(|i| format!("y_{i}")));
    let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows = f.t.iter().zip(f.x.iter().zip(&f.y)).map(|(t, (x, y))| std::iter::once(*t).chain(x.iter().cloned()).chain(y.iter().cloned()).collect());
    write_atomic(&outdir.join(format!("{output}.csv")), &table_csv(&hdr, rows)).context("writing flow")?;
    println!(
        "{output}: {} samples to t = {horizon}, final x = {:?}{}",
        f.t.len(),
        f.end_x(),
        f.halving_diff.map(|h| format!(", step-halving difference {h:.2e}")).unwrap_or_default()
    );
    if f.blown_up {
        return Err(Failure::Numeric("flow left the representable range".into()));
    }
    Ok(())
}
