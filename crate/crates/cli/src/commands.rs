//! Subcommands, their output files, and the exit-code contract.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use harnack_core::estimates::{
    closed_manifold_bound, fit_constant, verify, EstimateInstance, ExponentConvention, Region, Theorem,
};
use harnack_core::harnack::{
    realized_u_bar, verify_harnack, EndpointGrid, HarnackDirection, HarnackInstance, HarnackKind, SpaceTimePath,
};
use harnack_core::params::{check_conditions, ConditionReport, ParamTriple};
use harnack_core::report::fmt_f64;
use harnack_core::solver::{solve, SolutionField, SolveParams, Source};
use harnack_core::LabError;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DirectionChoice, ExperimentConfig, TheoremName, TripleConfig};
use crate::initial;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_HORIZON: i32 = 3;

/// Environment variable that takes precedence over `--out`.
pub const OUT_ENV: &str = "HARNACK_LAB_OUT";

/// Slices kept in the solve CSV sample.
const SAMPLE_SLICES: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    CheckConditions,
    Solve,
    Verify,
    Harnack,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckConditions => "check-conditions",
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Harnack => "harnack",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
}

/// What a command produced.
struct Outcome {
    code: i32,
    summary: Value,
}

struct Context_ {
    cfg: ExperimentConfig,
    out: PathBuf,
    tol: Option<f64>,
    seed: u64,
    outputs: Vec<String>,
}

impl Context_ {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Output directory: the environment variable, then `--out`, then the config, then `out`.
pub fn resolve_out(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| flag.map(Path::to_path_buf))
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Exit code for an error: hypothesis and input problems are 2, early solver stops 3.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<LabError>() {
            return match e {
                LabError::PositivityLost { .. } | LabError::BlowUp { .. } => EXIT_HORIZON,
                LabError::Numeric(_) | LabError::Infeasible(_) | LabError::Quadrature { .. } => EXIT_FAILED,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}

/// Runs one subcommand and writes its manifest. Returns the process exit code.
pub fn run(command: Command, opts: &RunOptions) -> i32 {
    let started = Instant::now();
    let config_text = std::fs::read_to_string(&opts.config);
    let parsed = config_text
        .as_ref()
        .map_err(|e| anyhow!("reading {}: {e}", opts.config.display()))
        .and_then(|text| ExperimentConfig::from_toml(text));
    let cfg = match parsed {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err:#}");
            let out = resolve_out(opts.out.as_deref(), None);
            if std::fs::create_dir_all(&out).is_ok() {
                let manifest = manifest(command, opts, None, &[], started, EXIT_CONFIG, Value::Null, Some(&err));
                let _ = write_manifest(&out, &manifest);
            }
            return EXIT_CONFIG;
        }
    };
    let out = resolve_out(opts.out.as_deref(), cfg.output.as_deref());
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: creating {}: {e}", out.display());
        return EXIT_CONFIG;
    }
    let mut ctx = Context_ {
        seed: opts.seed.or(cfg.seed).unwrap_or(0),
        cfg,
        out,
        tol: opts.tol,
        outputs: Vec::new(),
    };

    let pool = match opts.jobs {
        Some(0) | None => rayon::ThreadPoolBuilder::new().build(),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
    };
    let result = match pool {
        Ok(pool) => pool.install(|| dispatch(command, &mut ctx)),
        Err(e) => Err(anyhow!("building the thread pool: {e}")),
    };
    let (code, summary, err) = match result {
        Ok(o) => (o.code, o.summary, None),
        Err(err) => {
            eprintln!("error: {err:#}");
            (exit_code_for(&err), Value::Null, Some(err))
        }
    };
    let manifest = manifest(
        command,
        opts,
        Some((&ctx.cfg, config_text.as_deref().unwrap_or(""), ctx.seed)),
        &ctx.outputs,
        started,
        code,
        summary,
        err.as_ref(),
    );
    if let Err(e) = write_manifest(&ctx.out, &manifest) {
        eprintln!("error: writing the manifest: {e:#}");
    }
    code
}

#[allow(clippy::too_many_arguments)]
fn manifest(
    command: Command,
    opts: &RunOptions,
    cfg: Option<(&ExperimentConfig, &str, u64)>,
    outputs: &[String],
    started: Instant,
    code: i32,
    summary: Value,
    err: Option<&anyhow::Error>,
) -> Value {
    json!({
        "command": command.name(),
        "config_path": opts.config.display().to_string(),
        "config": cfg.map(|(c, _, _)| serde_json::to_value(c).unwrap_or(Value::Null)),
        "config_text": cfg.map(|(_, text, _)| text),
        "seed": cfg.map(|(_, _, seed)| seed),
        "jobs": opts.jobs,
        "tol_override": opts.tol,
        "versions": {
            "harnack_lab": env!("CARGO_PKG_VERSION"),
            "harnack_core": harnack_core::VERSION,
        },
        "wall_time_s": started.elapsed().as_secs_f64(),
        "exit_code": code,
        "outputs": outputs,
        "summary": summary,
        "error": err.map(|e| format!("{e:#}")),
    })
}

fn write_manifest(out: &Path, manifest: &Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(out.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn dispatch(command: Command, ctx: &mut Context_) -> Result<Outcome> {
    match command {
        Command::CheckConditions => cmd_check_conditions(ctx),
        Command::Solve => cmd_solve(ctx),
        Command::Verify => cmd_verify(ctx),
        Command::Harnack => cmd_harnack(ctx),
        Command::Sweep => cmd_sweep(ctx),
    }
}

fn run_conditions(cfg: &ExperimentConfig, triple: &ParamTriple, tol: f64) -> Result<ConditionReport> {
    let range = cfg.conditions.range(triple);
    Ok(check_conditions(triple, range, cfg.conditions.samples, tol)?)
}

fn cmd_check_conditions(ctx: &mut Context_) -> Result<Outcome> {
    let triples = ctx.cfg.build_triples()?;
    if triples.is_empty() {
        bail!("no [[triples]] configured");
    }
    let tol = ctx.tol.unwrap_or(ctx.cfg.conditions.tol);
    let mut rows = Vec::new();
    let mut all_pass = true;
    for (i, triple) in triples.iter().enumerate() {
        let report = run_conditions(&ctx.cfg, triple, tol)?;
        let stem = format!("conditions_{i}_{}", triple.family().name());
        let mut w = ctx.create(&format!("{stem}.csv"))?;
        report.write_csv(&mut w)?;
        w.flush()?;
        ctx.write_json(&format!("{stem}.json"), &report)?;
        all_pass &= report.pass;
        let [m1, m2, m3] = report.worst_c2();
        rows.push(json!({
            "family": triple.family().name(),
            "k": triple.k(),
            "n": triple.n(),
            "t_range": [report.grid[0], report.grid[report.grid.len() - 1]],
            "pass": report.pass,
            "worst_margins": [m1, m2, m3, report.worst_c3()],
            "sup_ratio": report.boundedness.sup_value,
            "first_failure": report.first_failure(tol),
        }));
    }
    Ok(Outcome {
        code: if all_pass { EXIT_OK } else { EXIT_FAILED },
        summary: json!({ "triples": rows }),
    })
}

/// Solves the configured problem on `points` nodes, or loads the configured dump.
pub fn obtain_field(cfg: &ExperimentConfig, points: usize, seed: u64) -> Result<SolutionField> {
    let solve_cfg = cfg.solve.as_ref().context("no [solve] section configured")?;
    let geo = cfg.geometry.build()?;
    let grid = geo.grid(points)?;
    if let Some(dump) = &solve_cfg.dump {
        let file = File::open(dump).with_context(|| format!("opening {}", dump.display()))?;
        return Ok(SolutionField::read_binary(
            std::io::BufReader::new(file),
            geo,
            grid,
            cfg.source,
        )?);
    }
    let dt = match solve_cfg.dt {
        Some(dt) => dt,
        None => geo.cfl_limit(&grid, solve_cfg.t_end)?,
    };
    let u0 = initial::build(&cfg.initial, &geo, &grid, seed)?;
    let params = SolveParams::new(solve_cfg.t_end, dt).save_every(solve_cfg.save_every);
    Ok(solve(&geo, &grid, &u0, &cfg.source, &params)?)
}

fn horizon_summary(err: &anyhow::Error) -> Option<Value> {
    err.chain().find_map(|c| c.downcast_ref::<LabError>()).and_then(|e| {
        e.reached_horizon().map(|horizon| {
            let status = match e {
                LabError::BlowUp { .. } => "blow_up",
                _ => "positivity_lost",
            };
            json!({ "status": status, "horizon": horizon, "message": e.to_string() })
        })
    })
}

/// Solves, turning an early stop into exit 3 with `status.json` recorded.
fn solve_or_stop(ctx: &mut Context_) -> Result<std::result::Result<SolutionField, Outcome>> {
    match obtain_field(&ctx.cfg, ctx.cfg.grid.points, ctx.seed) {
        Ok(field) => Ok(Ok(field)),
        Err(err) => match horizon_summary(&err) {
            Some(summary) => {
                eprintln!("error: {err:#}");
                ctx.write_json("status.json", &summary)?;
                Ok(Err(Outcome {
                    code: EXIT_HORIZON,
                    summary,
                }))
            }
            None => Err(err),
        },
    }
}

fn write_sample_csv<W: Write>(field: &SolutionField, mut w: W) -> std::io::Result<()> {
    let n = field.n_times();
    let stride = n.div_ceil(SAMPLE_SLICES).max(1);
    let mut slices: Vec<usize> = (0..n).step_by(stride).collect();
    if slices.last() != Some(&(n - 1)) {
        slices.push(n - 1);
    }
    writeln!(w, "t,x,u")?;
    for ti in slices {
        let t = field.times()[ti];
        for (x, u) in field.grid().points().iter().zip(field.slice(ti)) {
            writeln!(w, "{},{},{}", fmt_f64(t), fmt_f64(*x), fmt_f64(*u))?;
        }
    }
    Ok(())
}

fn cmd_solve(ctx: &mut Context_) -> Result<Outcome> {
    let field = match solve_or_stop(ctx)? {
        Ok(field) => field,
        Err(outcome) => return Ok(outcome),
    };
    let mut w = ctx.create("solution.bin")?;
    field.write_binary(&mut w)?;
    w.flush()?;
    let mut w = ctx.create("solution_sample.csv")?;
    write_sample_csv(&field, &mut w)?;
    w.flush()?;
    let last = field.last();
    let summary = json!({
        "status": "ok",
        "t_end": field.times()[field.n_times() - 1],
        "step": field.step(),
        "slices": field.n_times(),
        "nodes": field.n_space(),
        "final_min": last.iter().copied().fold(f64::INFINITY, f64::min),
        "final_max": last.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    ctx.write_json("status.json", &summary)?;
    Ok(Outcome {
        code: EXIT_OK,
        summary,
    })
}

fn deltas_of(source: &Source) -> harnack_core::Deltas {
    match source {
        Source::Power { deltas, .. } => *deltas,
        _ => Default::default(),
    }
}

fn cmd_verify(ctx: &mut Context_) -> Result<Outcome> {
    let vcfg = ctx.cfg.verify.clone().context("no [verify] section configured")?;
    if vcfg.theorems.is_empty() {
        bail!("verify.theorems is empty");
    }
    let fit = vcfg.constant.fit()?;
    let tol = ctx.tol.or(vcfg.tol).unwrap_or(harnack_core::estimates::DEFAULT_MARGIN_TOL);
    let triples = ctx.cfg.build_triples()?;
    let needs_triple = vcfg.theorems.iter().any(|t| *t != TheoremName::ClosedManifold);
    if needs_triple && triples.is_empty() {
        bail!("no [[triples]] configured");
    }
    let theorems: Vec<(TheoremName, Theorem)> = vcfg
        .theorems
        .iter()
        .map(|name| Ok((*name, name.resolve(&ctx.cfg.source, vcfg.gamma_condition)?)))
        .collect::<Result<_>>()?;
    let field = match solve_or_stop(ctx)? {
        Ok(field) => field,
        Err(outcome) => return Ok(outcome),
    };
    let mut region = Region::new(vcfg.t_min, vcfg.t_max.unwrap_or(f64::INFINITY));
    if let Some(x0) = vcfg.anchor {
        region = region.anchor(x0);
    }

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut total_violations = 0usize;
    let mut fit_failed = false;
    for (name, theorem) in &theorems {
        if *theorem == Theorem::ClosedManifold {
            let conventions = match ctx.cfg.source {
                Source::None => vec![ExponentConvention::SourcePower],
                _ => vcfg.exponent.conventions(),
            };
            for convention in conventions {
                let report = closed_manifold_bound(&field, convention, &region, tol)?;
                let stem = match ctx.cfg.source {
                    Source::None => "estimate_closed_manifold".to_string(),
                    _ => format!("estimate_closed_manifold_{}", convention_name(convention)),
                };
                let mut w = ctx.create(&format!("{stem}.csv"))?;
                report.write_csv(&mut w)?;
                w.flush()?;
                ctx.write_json(&format!("{stem}.json"), &report)?;
                total_violations += report.violations;
                rows.push(json!({
                    "theorem": name.as_str(),
                    "convention": convention_name(convention),
                    "violations": report.violations,
                    "worst_margin": report.worst_margin,
                }));
            }
            continue;
        }
        for (i, triple) in triples.iter().enumerate() {
            let mut inst = EstimateInstance::new(*theorem, triple.clone())
                .constant(vcfg.constant.value())
                .deltas(deltas_of(&ctx.cfg.source));
            if let Some(r) = vcfg.radius {
                inst = inst.radius(r);
            }
            if let Some(u) = vcfg.u_bar {
                inst = inst.u_bar(u);
            }
            let stem = format!("estimate_{}_{i}_{}", name.as_str(), triple.family().name());
            if fit {
                let entry = match fit_constant(&field, &inst, &region) {
                    Ok(c) => json!({ "theorem": name.as_str(), "family": triple.family().name(), "c_fit": c }),
                    Err(LabError::InvalidParameter(msg)) => {
                        json!({ "theorem": name.as_str(), "family": triple.family().name(), "c_fit": null, "note": msg })
                    }
                    Err(e @ LabError::Infeasible(_)) => {
                        fit_failed = true;
                        json!({ "theorem": name.as_str(), "family": triple.family().name(), "c_fit": null, "note": e.to_string() })
                    }
                    Err(e) => return Err(e.into()),
                };
                fits.push(entry);
                continue;
            }
            let report = verify(&field, &inst, &region, tol)?;
            let mut w = ctx.create(&format!("{stem}.csv"))?;
            report.write_csv(&mut w)?;
            w.flush()?;
            ctx.write_json(&format!("{stem}.json"), &report)?;
            total_violations += report.violations;
            rows.push(json!({
                "theorem": name.as_str(),
                "family": triple.family().name(),
                "violations": report.violations,
                "worst_margin": report.worst_margin,
            }));
        }
    }
    if fit {
        ctx.write_json("c_fit.json", &fits)?;
    }
    let code = if total_violations > 0 || fit_failed {
        EXIT_FAILED
    } else {
        EXIT_OK
    };
    Ok(Outcome {
        code,
        summary: json!({ "reports": rows, "c_fit": fits, "violations": total_violations }),
    })
}

fn convention_name(c: ExponentConvention) -> &'static str {
    match c {
        ExponentConvention::SourcePower => "source_power",
        ExponentConvention::ShiftedPower => "shifted_power",
    }
}

fn direction_name(d: HarnackDirection) -> &'static str {
    match d {
        HarnackDirection::EarlierBounded => "earlier_bounded",
        HarnackDirection::LaterBounded => "later_bounded",
    }
}

fn cmd_harnack(ctx: &mut Context_) -> Result<Outcome> {
    let hcfg = ctx.cfg.harnack.clone().context("no [harnack] section configured")?;
    let tol = ctx.tol.or(hcfg.tol).unwrap_or(harnack_core::estimates::DEFAULT_MARGIN_TOL);
    let triples = ctx.cfg.build_triples()?;
    if triples.is_empty() {
        bail!("no [[triples]] configured");
    }
    let field = match solve_or_stop(ctx)? {
        Ok(field) => field,
        Err(outcome) => return Ok(outcome),
    };
    let kind = match ctx.cfg.source {
        Source::None => HarnackKind::Heat,
        Source::Log { a } => HarnackKind::Log { a },
        Source::Power { l, deltas, .. } => {
            HarnackKind::power(l, hcfg.u_bar.unwrap_or_else(|| realized_u_bar(&field, l)), deltas)
        }
    };
    let t_hi = hcfg.t_max.unwrap_or(f64::INFINITY);
    let endpoints = EndpointGrid::spread(&field, hcfg.nx, hcfg.nt, hcfg.t_min, t_hi)?;
    let times = field.times();
    let first_t = times[endpoints.t_indices[0]];
    let last_t = times[*endpoints.t_indices.last().expect("at least two slices")];
    let directions = match hcfg.direction {
        DirectionChoice::EarlierBounded => vec![HarnackDirection::EarlierBounded],
        DirectionChoice::LaterBounded => vec![HarnackDirection::LaterBounded],
        DirectionChoice::Both => vec![HarnackDirection::EarlierBounded, HarnackDirection::LaterBounded],
    };

    let mut rows = Vec::new();
    let mut total_violations = 0usize;
    for (i, triple) in triples.iter().enumerate() {
        let path = SpaceTimePath::new(0.0, first_t, 0.0, last_t)?;
        let template = HarnackInstance::new(*field.geometry(), path, triple.clone(), kind)
            .constant(hcfg.constant)
            .young(hcfg.young);
        for &direction in &directions {
            let report = verify_harnack(&field, &template, &endpoints, direction, hcfg.quad_nodes, tol)?;
            let stem = format!("harnack_{i}_{}_{}", triple.family().name(), direction_name(direction));
            let mut w = ctx.create(&format!("{stem}.csv"))?;
            report.write_csv(&mut w)?;
            w.flush()?;
            ctx.write_json(&format!("{stem}.json"), &report)?;
            total_violations += report.violations;
            rows.push(json!({
                "family": triple.family().name(),
                "direction": direction_name(direction),
                "pairs": report.pairs,
                "violations": report.violations,
                "worst_margin": report.worst_margin,
                "tighter_exceeds_factor": report.tighter_exceeds_factor,
            }));
        }
    }
    Ok(Outcome {
        code: if total_violations == 0 { EXIT_OK } else { EXIT_FAILED },
        summary: json!({ "reports": rows, "violations": total_violations }),
    })
}

/// One point of a sweep; `None` marks an axis that was not declared.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepCell {
    pub mu: Option<f64>,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    pub k: Option<f64>,
    pub grid: Option<usize>,
}

/// Cartesian product of the declared lists. No declared list, or an empty one, gives no cells.
pub fn sweep_cells(cfg: &crate::config::SweepConfig) -> Vec<SweepCell> {
    let declared = [&cfg.mu, &cfg.theta, &cfg.alpha, &cfg.k];
    if declared.iter().all(|l| l.is_none()) && cfg.grid.is_none() {
        return Vec::new();
    }
    let mut cells = vec![SweepCell::default()];
    let mut expand = |values: Option<&Vec<f64>>, set: fn(&mut SweepCell, f64)| {
        if let Some(values) = values {
            cells = cells
                .iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = *c;
                        set(&mut c, *v);
                        c
                    })
                })
                .collect();
        }
    };
    expand(cfg.mu.as_ref(), |c, v| c.mu = Some(v));
    expand(cfg.theta.as_ref(), |c, v| c.theta = Some(v));
    expand(cfg.alpha.as_ref(), |c, v| c.alpha = Some(v));
    expand(cfg.k.as_ref(), |c, v| c.k = Some(v));
    if let Some(grids) = &cfg.grid {
        cells = cells
            .iter()
            .flat_map(|c| grids.iter().map(move |g| SweepCell { grid: Some(*g), ..*c }))
            .collect();
    }
    cells
}

fn cell_triple(base: &TripleConfig, cell: &SweepCell) -> Result<TripleConfig> {
    let mut t = base.clone();
    match &mut t {
        TripleConfig::LiYau { alpha, theta, .. } => {
            if cell.mu.is_some() {
                bail!("mu does not apply to the li_yau family");
            }
            if let Some(v) = cell.alpha {
                *alpha = v;
            }
            if let Some(v) = cell.theta {
                *theta = v;
            }
        }
        TripleConfig::LinearLiXu { mu, .. } => {
            if cell.alpha.is_some() || cell.theta.is_some() {
                bail!("alpha and theta do not apply to the linear_li_xu family");
            }
            if let Some(v) = cell.mu {
                *mu = v;
            }
        }
        other => {
            if cell.mu.is_some() || cell.alpha.is_some() || cell.theta.is_some() {
                bail!("mu, alpha and theta do not apply to the {} family", other.name());
            }
        }
    }
    Ok(t)
}

#[derive(Clone, Debug, Default)]
struct SweepRow {
    pass: Option<bool>,
    worst: Option<[f64; 4]>,
    sup_ratio: Option<f64>,
    violations: Option<usize>,
    c_fit: Option<f64>,
    error: Option<String>,
}

fn run_cell(cfg: &ExperimentConfig, base: &TripleConfig, cell: &SweepCell, tol: Option<f64>, seed: u64) -> SweepRow {
    let mut row = SweepRow::default();
    let result = (|| -> Result<()> {
        let cell_cfg = cell_triple(base, cell)?;
        let triple = cell_cfg.build(cell.k.or(cfg.k), cfg.default_k()?, cfg.geometry.n)?;
        let report = run_conditions(cfg, &triple, tol.unwrap_or(cfg.conditions.tol))?;
        let [m1, m2, m3] = report.worst_c2();
        row.pass = Some(report.pass);
        row.worst = Some([m1, m2, m3, report.worst_c3()]);
        row.sup_ratio = Some(report.boundedness.sup_value);

        let (Some(points), Some(vcfg)) = (cell.grid, cfg.verify.as_ref()) else {
            return Ok(());
        };
        let field = obtain_field(cfg, points, seed)?;
        let mut region = Region::new(vcfg.t_min, vcfg.t_max.unwrap_or(f64::INFINITY));
        if let Some(x0) = vcfg.anchor {
            region = region.anchor(x0);
        }
        let margin_tol = tol.or(vcfg.tol).unwrap_or(harnack_core::estimates::DEFAULT_MARGIN_TOL);
        let mut violations = 0;
        for name in &vcfg.theorems {
            let theorem = name.resolve(&cfg.source, vcfg.gamma_condition)?;
            if theorem == Theorem::ClosedManifold {
                for convention in vcfg.exponent.conventions() {
                    violations += closed_manifold_bound(&field, convention, &region, margin_tol)?.violations;
                }
                continue;
            }
            let mut inst = EstimateInstance::new(theorem, triple.clone())
                .constant(vcfg.constant.value())
                .deltas(deltas_of(&cfg.source));
            if let Some(r) = vcfg.radius {
                inst = inst.radius(r);
            }
            if let Some(u) = vcfg.u_bar {
                inst = inst.u_bar(u);
            }
            if vcfg.constant.fit()? {
                if row.c_fit.is_none() {
                    row.c_fit = Some(fit_constant(&field, &inst, &region)?);
                }
            } else {
                violations += verify(&field, &inst, &region, margin_tol)?.violations;
            }
        }
        row.violations = Some(violations);
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(format!("{e:#}"));
    }
    row
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const SWEEP_HEADER: &str = "mu,theta,alpha,k,grid,pass,worst_m1,worst_m2,worst_m3,worst_c3,sup_ratio,violations,c_fit,error";

fn cmd_sweep(ctx: &mut Context_) -> Result<Outcome> {
    let scfg = ctx.cfg.sweep.clone().unwrap_or_default();
    let cells = sweep_cells(&scfg);
    let base = match scfg.triple.clone().or_else(|| ctx.cfg.triples.first().cloned()) {
        Some(base) => base,
        None if cells.is_empty() => TripleConfig::Hamilton { k: None, n: None },
        None => bail!("the sweep needs sweep.triple or a [[triples]] entry"),
    };
    let cfg = &ctx.cfg;
    let (tol, seed) = (ctx.tol, ctx.seed);
    let rows: Vec<SweepRow> = cells.par_iter().map(|cell| run_cell(cfg, &base, cell, tol, seed)).collect();

    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut w = ctx.create("sweep.csv")?;
    writeln!(w, "{SWEEP_HEADER}")?;
    let mut errors = 0;
    let mut passes = 0;
    for (cell, row) in cells.iter().zip(&rows) {
        errors += usize::from(row.error.is_some());
        passes += usize::from(row.pass == Some(true));
        let worst = row.worst.map_or([None; 4], |w| w.map(Some));
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            opt(cell.mu),
            opt(cell.theta),
            opt(cell.alpha),
            opt(cell.k),
            cell.grid.map(|g| g.to_string()).unwrap_or_default(),
            row.pass.map(|p| u8::from(p).to_string()).unwrap_or_default(),
            opt(worst[0]),
            opt(worst[1]),
            opt(worst[2]),
            opt(worst[3]),
            opt(row.sup_ratio),
            row.violations.map(|v| v.to_string()).unwrap_or_default(),
            opt(row.c_fit),
            csv_field(row.error.as_deref().unwrap_or("")),
        )?;
    }
    w.flush()?;
    Ok(Outcome {
        code: EXIT_OK,
        summary: json!({ "cells": cells.len(), "passing": passes, "errors": errors }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SweepConfig;

    #[test]
    fn cells_follow_declaration_order() {
        let cfg = SweepConfig {
            mu: Some(vec![0.1, 0.2]),
            k: Some(vec![1.0, 2.0, 3.0]),
            ..Default::default()
        };
        let cells = sweep_cells(&cfg);
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].mu, Some(0.1));
        assert_eq!(cells[0].k, Some(1.0));
        assert_eq!(cells[1].k, Some(2.0));
        assert_eq!(cells[3].mu, Some(0.2));
        assert!(cells.iter().all(|c| c.theta.is_none() && c.grid.is_none()));
    }

    #[test]
    fn empty_or_missing_lists_give_no_cells() {
        assert!(sweep_cells(&SweepConfig::default()).is_empty());
        let cfg = SweepConfig {
            mu: Some(vec![]),
            k: Some(vec![1.0]),
            ..Default::default()
        };
        assert!(sweep_cells(&cfg).is_empty());
    }

    #[test]
    fn axes_are_checked_against_the_family() {
        let base = TripleConfig::LiXu { k: Some(1.0), n: None };
        let cell = SweepCell {
            mu: Some(0.3),
            ..Default::default()
        };
        assert!(cell_triple(&base, &cell).is_err());
    }

    #[test]
    fn error_codes() {
        let e: anyhow::Error = LabError::BlowUp { horizon: 0.9, limit: 1e12 }.into();
        assert_eq!(exit_code_for(&e.context("solving")), EXIT_HORIZON);
        let e: anyhow::Error = LabError::Hypothesis("x".into()).into();
        assert_eq!(exit_code_for(&e), EXIT_CONFIG);
        assert_eq!(exit_code_for(&anyhow!("bad toml")), EXIT_CONFIG);
        assert_eq!(exit_code_for(&LabError::Quadrature { rel_change: 1.0 }.into()), EXIT_FAILED);
    }

    #[test]
    fn csv_fields_are_quoted() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a, \"b\""), "\"a, \"\"b\"\"\"");
    }
}
