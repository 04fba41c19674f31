use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use stackelberg_traffic::dispersion::{build_road_mesh_map, solve_adjoint, ScalarFieldSeries};
use stackelberg_traffic::functionals::{eval_jt, AdjointEvaluator, EvalCounts, FunctionalReport};
use stackelberg_traffic::network::ControlSet;
use stackelberg_traffic::optimize::{solve_follower, solve_stackelberg};
use stackelberg_traffic::scenario::Scenario;
use stackelberg_traffic::traffic::simulate as run_traffic;
use stackelberg_traffic::vtk::{even_levels, isolines, write_field_file, write_isolines_file};
use stackelberg_traffic::Error;

use crate::cache::{self, Lookup};
use crate::tables::{junction_table, strategy_table};
use crate::{CommonArgs, Failure, Outcome};

type Res<T> = std::result::Result<T, Failure>;

const RELAXED: (f64, f64) = (0.2, 0.8);

struct Ctx {
    s: Scenario,
    out: PathBuf,
    cache: PathBuf,
    log: Progress,
}

/// `progress.log` in the output directory, flushed line by line.
struct Progress(BufWriter<File>);

impl Progress {
    fn line(&mut self, text: &str) {
        // progress is best effort; a full disk shows up on the result files
        let _ = writeln!(self.0, "{text}").and_then(|_| self.0.flush());
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(path.to_path_buf(), e)
}

fn load_scenario(args: &CommonArgs) -> Res<Scenario> {
    let path = args
        .scenario
        .as_deref()
        .ok_or_else(|| Failure::Usage("--scenario is required".into()))?;
    let mut s = Scenario::load(path)?;
    if let Some(seed) = args.seed {
        s.apply_seed(seed);
    }
    if args.relaxed {
        s.set_beta_bounds(RELAXED.0, RELAXED.1)?;
    }
    if args.hybrid_follower {
        s.solver.follower.hybrid = true;
    }
    Ok(s)
}

fn context(args: &CommonArgs, s: Scenario, out: Option<PathBuf>) -> Res<Ctx> {
    let out = out
        .or_else(|| args.out.clone())
        .or_else(|| s.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&s.id));
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let cache = args.adjoint_cache.clone().unwrap_or_else(|| out.join("adjoint.bin"));
    let log_path = out.join("progress.log");
    let file = File::create(&log_path).map_err(io_err(&log_path))?;
    Ok(Ctx {
        s,
        out,
        cache,
        log: Progress(BufWriter::new(file)),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Res<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Core(Error::Config(e.to_string())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Controls from a ControlSet file or from the `controls` field of a result.
fn read_controls(path: &Path, s: &Scenario) -> Res<ControlSet> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        Failure::Core(Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    })?;
    if let Some(inner) = value.get_mut("controls") {
        value = inner.take();
    }
    let controls: ControlSet = serde_json::from_value(value).map_err(|e| {
        Failure::Core(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    })?;
    let problems: Vec<String> = controls.violations(&s.net).into_iter().map(|v| v.message).collect();
    if !problems.is_empty() {
        return Err(Error::Validation(problems).into());
    }
    Ok(controls)
}

fn default_controls(s: &Scenario) -> ControlSet {
    ControlSet::uniform(&s.net).with_beta_bounds(s.solver.beta_lo, s.solver.beta_hi)
}

/// The cached adjoint when its fingerprint matches, else a fresh solve that
/// is written back. The flag tells whether a solve happened.
fn adjoint_field(ctx: &mut Ctx) -> Res<(ScalarFieldSeries, bool)> {
    let key = cache::fingerprint(&ctx.s);
    match cache::read(&ctx.cache, &key).map_err(io_err(&ctx.cache))? {
        Lookup::Hit(g) => {
            ctx.log.line(&format!("adjoint: reusing cached field {}", ctx.cache.display()));
            return Ok((g, false));
        }
        Lookup::Stale => ctx.log.line("adjoint: cache does not match the scenario"),
        Lookup::Missing => {}
    }
    ctx.log.line("adjoint: solving");
    let g = solve_adjoint(&ctx.s.mesh, &ctx.s.wind, &ctx.s.pollution, ctx.s.time_grid())?;
    cache::write(&ctx.cache, &key, &g).map_err(io_err(&ctx.cache))?;
    ctx.log.line(&format!("adjoint: cached to {}", ctx.cache.display()));
    Ok((g, true))
}

fn evaluator(s: &Scenario, g: &ScalarFieldSeries) -> Res<AdjointEvaluator> {
    let map = build_road_mesh_map(&s.net, &s.mesh, &s.disc, &s.wind)?;
    let phi0 = s.pollution.phi0.values(&s.mesh)?;
    Ok(AdjointEvaluator::new(g, &map, &s.net, &s.mesh, &phi0, &s.disc)?)
}

pub fn simulate(args: &CommonArgs, controls: Option<&Path>) -> Res<Outcome> {
    let s = load_scenario(args)?;
    let mut ctx = context(args, s, None)?;
    let s = &ctx.s;
    let controls = match controls {
        Some(p) => read_controls(p, s)?,
        None => default_controls(s),
    };
    let traj = run_traffic(&s.net, &controls, &s.disc)?;
    let jt = eval_jt(&traj, &s.weights, &s.net, &s.disc)?;
    traj.write_csv_files(&s.net, &ctx.out.join("density.csv"), &ctx.out.join("queues.csv"))?;
    let last = traj.states.last().expect("trajectory has the initial state");
    let summary = json!({
        "id": s.id,
        "JT": jt,
        "dt": s.disc.dt,
        "steps": s.disc.steps,
        "horizon": s.disc.horizon(),
        "vehicles_on_roads_final": last.vehicles_on_roads(&s.disc),
        "queued_final": last.queued(),
        "controls": controls,
    });
    write_json(&ctx.out.join("summary.json"), &summary)?;
    ctx.log.line(&format!("simulate: JT {jt:.10e}"));
    println!("J_T = {jt:.6e}  ({})", ctx.out.display());
    Ok(Outcome::Done)
}

pub fn adjoint(args: &CommonArgs, frames: usize, levels: usize) -> Res<Outcome> {
    let s = load_scenario(args)?;
    let mut ctx = context(args, s, None)?;
    let (g, _) = adjoint_field(&mut ctx)?;
    let series = ctx.out.join("adjoint");
    std::fs::create_dir_all(&series).map_err(io_err(&series))?;
    let steps = g.steps();
    let count = frames.clamp(1, steps.max(1));
    let mut picked: Vec<usize> = (0..=count).map(|k| (k * steps + count / 2) / count).collect();
    picked.dedup();
    for n in picked {
        let path = series.join(format!("g_{n:06}.vtk"));
        let title = format!("adjoint state at t = {:.6}", g.time(n));
        write_field_file(&path, &ctx.s.mesh, &title, &[("g", &g.values[n])])?;
    }
    let mean = g.time_average();
    write_field_file(&ctx.out.join("adjoint_mean.vtk"), &ctx.s.mesh, "time-averaged adjoint state", &[("g_mean", &mean)])?;
    let segments = isolines(&ctx.s.mesh, &mean, &even_levels(&mean, levels));
    write_isolines_file(&ctx.out.join("adjoint_isolines.vtk"), "level curves of the time-averaged adjoint", &segments)?;
    ctx.log.line(&format!("adjoint: {} levels, {} level-curve segments", g.values.len(), segments.len()));
    println!("adjoint written to {}", ctx.out.display());
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct FollowerOutput<'a> {
    id: &'a str,
    alpha: &'a [f64],
    #[serde(rename = "JT")]
    jt: f64,
    #[serde(rename = "JP")]
    jp: f64,
    starts_ok: usize,
    simulations: usize,
    controls: &'a ControlSet,
}

pub fn follower(args: &CommonArgs, controls: Option<&Path>) -> Res<Outcome> {
    let s = load_scenario(args)?;
    let mut ctx = context(args, s, None)?;
    run_follower(&mut ctx, controls)?;
    Ok(Outcome::Done)
}

fn run_follower(ctx: &mut Ctx, controls: Option<&Path>) -> Res<FunctionalReport> {
    let started = Instant::now();
    let beta = match controls {
        Some(p) => read_controls(p, &ctx.s)?,
        None => default_controls(&ctx.s),
    };
    let (g, solved) = adjoint_field(ctx)?;
    let s = &ctx.s;
    let eval = evaluator(s, &g)?;
    ctx.log.line("follower: solving");
    let sol = solve_follower(s.traffic(), &beta, &s.solver.follower)?;
    let (_, traj) = s.traffic().travel_cost(&sol.controls)?;
    let jp = eval.evaluate(&traj, &s.net, &s.disc)?;
    let out = FollowerOutput {
        id: &s.id,
        alpha: &sol.alpha,
        jt: sol.jt,
        jp,
        starts_ok: sol.starts_ok,
        simulations: sol.simulations,
        controls: &sol.controls,
    };
    write_json(&ctx.out.join("follower.json"), &out)?;
    let table = junction_table(&s.net, &[("beta", &beta), ("alpha", &sol.controls)]);
    write_text(&ctx.out.join("alpha_table.txt"), &table)?;
    let report = FunctionalReport {
        id: s.id.clone(),
        jt: sol.jt,
        jp,
        wall_time_s: started.elapsed().as_secs_f64(),
        evaluations: EvalCounts {
            traffic_simulations: sol.simulations + 1,
            adjoint_solves: solved as usize,
            jp_evaluations: 1,
            follower_solves: 1,
        },
    };
    write_json(&ctx.out.join("run.json"), &report)?;
    ctx.log.line(&format!("follower: JT {:.10e} JP {jp:.10e}", sol.jt));
    print!("{table}");
    println!("J_T = {:.6e}  J_P = {jp:.6e}", sol.jt);
    Ok(report)
}

#[derive(Serialize)]
struct StackelbergOutput<'a> {
    id: &'a str,
    beta_bounds: [f64; 2],
    #[serde(flatten)]
    result: &'a stackelberg_traffic::optimize::StackelbergResult,
}

pub fn stackelberg(args: &CommonArgs) -> Res<Outcome> {
    let s = load_scenario(args)?;
    let mut ctx = context(args, s, None)?;
    let (_, exhausted) = run_stackelberg(&mut ctx)?;
    Ok(if exhausted { Outcome::BudgetExhausted } else { Outcome::Done })
}

fn run_stackelberg(ctx: &mut Ctx) -> Res<(FunctionalReport, bool)> {
    let (g, solved) = adjoint_field(ctx)?;
    let Ctx { s, out, log, .. } = ctx;
    let mut result = solve_stackelberg(s.traffic(), s.pollution_problem(), &s.solver, Some(&g), |line| log.line(line))?;
    result.diagnostics.adjoint_solves = solved as usize;
    let output = StackelbergOutput {
        id: &s.id,
        beta_bounds: [s.solver.beta_lo, s.solver.beta_hi],
        result: &result,
    };
    write_json(&out.join("stackelberg_result.json"), &output)?;
    let mut table = junction_table(&s.net, &[("alpha*", &result.controls), ("beta*", &result.controls)]);
    table.push_str(&format!("\nJ_P = {:.4e}\nJ_T = {:.4e}\n", result.jp, result.jt));
    write_text(&out.join("stackelberg_table.txt"), &table)?;
    let d = &result.diagnostics;
    let report = FunctionalReport {
        id: s.id.clone(),
        jt: result.jt,
        jp: result.jp,
        wall_time_s: result.wall_time_s,
        evaluations: EvalCounts {
            traffic_simulations: d.traffic_simulations,
            adjoint_solves: d.adjoint_solves,
            jp_evaluations: d.jp_evaluations,
            follower_solves: d.follower_solves,
        },
    };
    write_json(&out.join("run.json"), &report)?;
    for w in &d.warnings {
        log.line(&format!("warning: {w}"));
    }
    print!("{table}");
    Ok((report, d.budget_exhausted))
}

const CASES: [(&str, &str); 3] = [
    ("restrictive", "Restrictive Stackelberg"),
    ("relaxed", "Relaxed Stackelberg"),
    ("non_optimal", "Non-optimal"),
];

fn case_label(dir: &Path) -> String {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    CASES
        .iter()
        .find(|(d, _)| *d == name)
        .map(|(_, label)| label.to_string())
        .unwrap_or(name)
}

pub fn report(args: &CommonArgs, runs: &[PathBuf]) -> Res<Outcome> {
    let mut exhausted = false;
    let (out, dirs) = if runs.is_empty() {
        let base = load_scenario(args)?;
        let out = args
            .out
            .clone()
            .or_else(|| base.output_dir.clone())
            .unwrap_or_else(|| Path::new("out").join(&base.id));
        let shared = CommonArgs {
            adjoint_cache: Some(args.adjoint_cache.clone().unwrap_or_else(|| out.join("adjoint.bin"))),
            ..args.clone()
        };
        let mut dirs = Vec::new();
        for (dir, _) in CASES {
            let mut s = base.clone();
            let (lo, hi) = if dir == "relaxed" { RELAXED } else { (0.0, 1.0) };
            s.set_beta_bounds(lo, hi)?;
            let mut ctx = context(&shared, s, Some(out.join(dir)))?;
            if dir == "non_optimal" {
                run_follower(&mut ctx, None)?;
            } else {
                exhausted |= run_stackelberg(&mut ctx)?.1;
            }
            dirs.push(out.join(dir));
        }
        (out, dirs)
    } else {
        let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        (out, runs.to_vec())
    };

    let mut rows = Vec::new();
    for dir in &dirs {
        let path = dir.join("run.json");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let r: FunctionalReport = serde_json::from_str(&text).map_err(|e| {
            Failure::Core(Error::Parse {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })
        })?;
        rows.push((case_label(dir), r));
    }
    let table = strategy_table(&rows);
    write_text(&out.join("report.txt"), &table)?;
    let json_rows: Vec<_> = rows.iter().map(|(case, r)| json!({ "case": case, "report": r })).collect();
    write_json(&out.join("report.json"), &json!({ "runs": json_rows }))?;
    print!("{table}");
    Ok(if exhausted { Outcome::BudgetExhausted } else { Outcome::Done })
}
