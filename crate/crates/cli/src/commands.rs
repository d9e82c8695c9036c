use crate::output::{CliError, CliResult, OutDir};
use crate::{Common, ModeArg, ProtocolArg, RegimeArg, SolverArg};
use anyhow::Context;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::Path;
use urllc_core::delay::tradeoff_sweep;
use urllc_core::fbl;
use urllc_core::optimizer::{
    fixed_plan, optimize_adaptive, optimize_exhaustive, optimize_greedy, optimize_single_user, DEFAULT_BUDGET,
    DEFAULT_TTI_LEVELS_S,
};
use urllc_core::sim::run_fixed_baseline;
use urllc_core::{bridge, AccessProtocol, AllocationPlan, Regime, Scenario, SimMode};

fn load(common: &Common) -> CliResult<Scenario> {
    let mut s = Scenario::from_path(&common.scenario)
        .map_err(|e| CliError::Usage(format!("scenario {}: {e}", common.scenario.display())))?;
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    if let Some(r) = common.regime {
        s.regime = regime(r);
    }
    if let Some(p) = common.protocol {
        s.protocol = protocol(p);
    }
    s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(s)
}

fn regime(r: RegimeArg) -> Regime {
    match r {
        RegimeArg::Fbl => Regime::Fbl,
        RegimeArg::Ibl => Regime::Ibl,
    }
}

fn protocol(p: ProtocolArg) -> AccessProtocol {
    match p {
        ProtocolArg::Gb => AccessProtocol::GrantBased,
        ProtocolArg::Gf => AccessProtocol::GrantFree,
    }
}

fn manifest(subcommand: &str, common: &Common, scenario: &Scenario, args: Value) -> Value {
    json!({
        "version": urllc_core::VERSION,
        "subcommand": subcommand,
        "scenario_path": common.scenario.display().to_string(),
        "scenario": scenario.to_text(),
        "seed": scenario.seed,
        "args": args,
    })
}

/// `start:stop:step`, inclusive; the step defaults to one.
pub fn parse_range(text: &str, what: &str) -> CliResult<Vec<u64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("{what}: '{s}' is not a non-negative integer")))
    };
    let (start, stop, step) = match parts.as_slice() {
        [a, b] => (num(a)?, num(b)?, 1),
        [a, b, c] => (num(a)?, num(b)?, num(c)?),
        _ => {
            return Err(CliError::Usage(format!(
                "{what}: expected start:stop[:step], got '{text}'"
            )))
        }
    };
    if step == 0 || start > stop {
        return Err(CliError::Usage(format!("{what}: '{text}' is empty")));
    }
    Ok((start..=stop).step_by(step as usize).collect())
}

pub fn parse_levels(text: Option<&str>) -> CliResult<Vec<f64>> {
    let Some(text) = text else {
        return Ok(DEFAULT_TTI_LEVELS_S.to_vec());
    };
    let levels: Vec<f64> = text
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--tti-levels: cannot parse '{text}'")))?;
    if levels.is_empty() || levels.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(CliError::Usage("--tti-levels must list positive seconds".into()));
    }
    Ok(levels)
}

fn default_grid(s: &Scenario) -> CliResult<Vec<u64>> {
    let snr = s.snr(0, s.total_bandwidth_hz)?;
    let lo = fbl::ibl_min_blocklength(snr, s.packet_bits)?;
    let hi = s
        .fbl_model()
        .min_blocklength(snr, s.packet_bits, s.error_target)
        .unwrap_or(lo);
    Ok((lo..=4 * hi.max(lo)).collect())
}

pub fn sweep(common: &Common, grid: Option<&str>) -> CliResult<()> {
    let grid_values = grid.map(|g| parse_range(g, "--grid")).transpose()?;
    let scenario = load(common)?;
    let grid_values = match grid_values {
        Some(g) => g,
        None => default_grid(&scenario)?,
    };
    let regimes = match common.regime {
        Some(r) => vec![regime(r)],
        None => vec![Regime::Fbl, Regime::Ibl],
    };
    let mut csv = String::new();
    let mut summary = Vec::new();
    let mut empty = Vec::new();
    for (i, &r) in regimes.iter().enumerate() {
        let s = Scenario {
            regime: r,
            ..scenario.clone()
        };
        let curve = tradeoff_sweep(&s, &grid_values)?;
        for (j, line) in curve.to_csv().lines().enumerate() {
            if j == 0 && i > 0 {
                continue;
            }
            let prefix = if j == 0 { "regime".to_string() } else { r.to_string() };
            let _ = writeln!(csv, "{prefix},{line}");
        }
        let argmin = curve.argmin();
        if argmin.is_none() {
            empty.push(r.to_string());
        }
        summary.push(json!({
            "regime": r,
            "points": curve.points.len(),
            "feasible_points": curve.feasible_count(),
            "argmin_index": argmin,
            "argmin_n": argmin.map(|k| curve.points[k].n),
            "argmin_total_s": argmin.map(|k| curve.points[k].total_s),
            "interior": curve.argmin_is_interior(),
        }));
    }
    let args = json!({"grid": grid, "grid_points": grid_values.len(), "regimes": regimes});
    let mut out = OutDir::create(&common.out, manifest("sweep", common, &scenario, args))?;
    out.write("sweep.csv", &csv)?;
    out.write(
        "summary.json",
        &(serde_json::to_string_pretty(&json!({ "curves": summary })).expect("summary") + "\n"),
    )?;
    out.finish()?;
    for s in &summary {
        println!(
            "{}: argmin n = {}, interior = {}, feasible {}/{}",
            s["regime"].as_str().unwrap_or("?"),
            s["argmin_n"],
            s["interior"],
            s["feasible_points"],
            s["points"]
        );
    }
    if !empty.is_empty() {
        return Err(CliError::Infeasible(format!(
            "no feasible grid point under {}",
            empty.join(", ")
        )));
    }
    Ok(())
}

struct Cell {
    users: usize,
    protocol: AccessProtocol,
    tti_s: Option<f64>,
}

fn cell_row(base: &Scenario, cell: &Cell, levels: &[f64]) -> String {
    let label = match cell.tti_s {
        None => "adaptive".to_string(),
        Some(_) => "fixed".to_string(),
    };
    let tti = cell.tti_s.map(|t| format!("{t:?}")).unwrap_or_default();
    let result = base.with_users(cell.users).and_then(|s| {
        let s = Scenario {
            protocol: cell.protocol,
            ..s
        };
        match cell.tti_s {
            None => optimize_adaptive(&s, levels, DEFAULT_BUDGET),
            Some(t) => fixed_plan(&s, t),
        }
    });
    let head = format!("{},{},{label},{tti}", cell.users, cell.protocol);
    match result {
        Ok(p) => format!(
            "{head},{:?},{:?},{},{},{},{},{},",
            p.objective_s,
            p.total_time_s,
            p.certificate.unserved == 0 && p.certificate.dropped == 0,
            p.certificate.dropped,
            p.certificate.unserved,
            p.score.violations,
            p.feasible
        ),
        Err(e) => format!("{head},,,,,,,false,{}", e.to_string().replace([',', '\n'], ";")),
    }
}

pub const COMPARE_HEADER: &str =
    "users,protocol,scheme,tti_s,avg_delay_s,total_time_s,all_served,dropped,unserved,violations,feasible,note";

pub fn compare(common: &Common, users: Option<&str>, levels: Option<&str>) -> CliResult<()> {
    let user_counts = users.map(|u| parse_range(u, "--users")).transpose()?;
    let levels = parse_levels(levels)?;
    let scenario = load(common)?;
    let user_counts: Vec<usize> = match user_counts {
        Some(v) => v.into_iter().map(|u| u as usize).collect(),
        None => vec![scenario.users],
    };
    if user_counts.contains(&0) {
        return Err(CliError::Usage("--users must start at 1".into()));
    }
    let protocols = match common.protocol {
        Some(p) => vec![protocol(p)],
        None => vec![AccessProtocol::GrantBased, AccessProtocol::GrantFree],
    };
    let mut fixed = levels.clone();
    fixed.sort_by(|a, b| b.total_cmp(a));
    let mut cells = Vec::new();
    for &u in &user_counts {
        for &p in &protocols {
            cells.push(Cell {
                users: u,
                protocol: p,
                tti_s: None,
            });
            for &t in &fixed {
                cells.push(Cell {
                    users: u,
                    protocol: p,
                    tti_s: Some(t),
                });
            }
        }
    }
    log::info!("compare: {} cells", cells.len());
    let rows: Vec<String> = cells.par_iter().map(|c| cell_row(&scenario, c, &levels)).collect();
    let mut csv = String::from(COMPARE_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    let args = json!({"users": user_counts, "tti_levels_s": levels, "protocols": protocols});
    let mut out = OutDir::create(&common.out, manifest("compare", common, &scenario, args))?;
    out.write("compare.csv", &csv)?;
    out.finish()?;
    println!(
        "{:>5} {:>8} {:>14} {:>14}",
        "users", "protocol", "adaptive_s", "best_fixed_s"
    );
    for chunk in rows.chunks(fixed.len() + 1) {
        let f: Vec<Vec<&str>> = chunk.iter().map(|r| r.split(',').collect()).collect();
        let best_fixed = f[1..]
            .iter()
            .filter(|c| c[10] == "true")
            .filter_map(|c| c[4].parse::<f64>().ok())
            .fold(f64::INFINITY, f64::min);
        let adaptive = f[0][4].parse::<f64>().unwrap_or(f64::NAN);
        println!(
            "{:>5} {:>8} {:>14.6e} {:>14.6e}",
            f[0][0], f[0][1], adaptive, best_fixed
        );
    }
    Ok(())
}

pub fn simulate(common: &Common, plan: Option<&Path>, tti: Option<f64>, mode: ModeArg) -> CliResult<()> {
    if let Some(t) = tti {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Usage(format!("--tti must be positive, got {t}")));
        }
    }
    let scenario = load(common)?;
    let mode = match mode {
        ModeArg::Expected => SimMode::Expected,
        ModeArg::Sampled => SimMode::Sampled,
    };
    let stats = match plan {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let plan = AllocationPlan::from_json(&text).map_err(|e| CliError::Usage(e.to_string()))?;
            plan.simulate(&scenario, mode)?
        }
        None => run_fixed_baseline(&scenario, tti.unwrap_or(1e-3), mode)?,
    };
    let args = json!({
        "plan": plan.map(|p| p.display().to_string()),
        "tti_s": if plan.is_none() { Some(tti.unwrap_or(1e-3)) } else { None },
        "mode": mode,
    });
    let mut out = OutDir::create(&common.out, manifest("simulate", common, &scenario, args))?;
    out.write("stats.json", &(stats.to_json() + "\n"))?;
    out.write("packets.csv", &stats.packets_csv())?;
    out.finish()?;
    println!(
        "served {}, dropped {}, unserved {}, avg over-the-air {:.6e} s",
        stats.served,
        stats.dropped,
        stats.unserved.len(),
        stats.avg_over_the_air_s
    );
    Ok(())
}

pub fn optimize(common: &Common, solver: SolverArg, levels: Option<&str>, budget: Option<u128>) -> CliResult<()> {
    let levels = parse_levels(levels)?;
    let scenario = load(common)?;
    let budget = budget.unwrap_or(DEFAULT_BUDGET);
    let plan = match solver {
        SolverArg::Single => optimize_single_user(&scenario)?,
        SolverArg::Exhaustive => optimize_exhaustive(&scenario, &levels, budget)?,
        SolverArg::Greedy => optimize_greedy(&scenario, &levels)?,
        SolverArg::Adaptive => optimize_adaptive(&scenario, &levels, budget)?,
    };
    let args = json!({
        "solver": format!("{solver:?}").to_lowercase(),
        "tti_levels_s": levels,
        "budget": budget.to_string(),
    });
    let mut out = OutDir::create(&common.out, manifest("optimize", common, &scenario, args))?;
    out.write("plan.json", &(plan.to_json() + "\n"))?;
    out.finish()?;
    println!(
        "{}: objective {:.6e} s, violations {}, {} evaluations",
        plan.solver, plan.objective_s, plan.score.violations, plan.evaluations
    );
    if !plan.feasible {
        return Err(CliError::Infeasible(format!(
            "best plan still binds on {:?}",
            plan.certificate.binding
        )));
    }
    Ok(())
}

pub fn serve_env(scenario: Option<&Path>, stdio: bool, listen: Option<&str>) -> CliResult<()> {
    let preload = scenario
        .map(|p| Scenario::from_path(p).map_err(|e| CliError::Usage(format!("scenario {}: {e}", p.display()))))
        .transpose()?;
    if stdio {
        bridge::serve_stdio(preload).context("serving stdio")?;
    } else if let Some(addr) = listen {
        bridge::serve_tcp(addr, preload).with_context(|| format!("listening on {addr}"))?;
    }
    Ok(())
}
