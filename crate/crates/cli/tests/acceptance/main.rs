//! Acceptance criteria A1-A6. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#[path = "../common/mod.rs"]
mod common;

use common::Mix;
use std::fmt::Write as _;
use std::process::Command;
use std::time::{Duration, Instant};
use urllc_core::delay::{compose_over_the_air, expected_attempts, tradeoff_sweep, ComponentTimes};
use urllc_core::fbl::{self, Snr};
use urllc_core::gaussian::q_inverse;
use urllc_core::optimizer::{
    fixed_plan, optimize_adaptive, optimize_exhaustive, optimize_greedy, Score, DEFAULT_BUDGET, DEFAULT_TTI_LEVELS_S,
};
use urllc_core::scenario::{ArrivalProcess, TraceEntry};
use urllc_core::sim::{plan_frame, run_fixed_baseline, simulate, SimMode, StaticPlanPolicy};
use urllc_core::{AccessProtocol, Regime, Scenario};

struct Outcome {
    ok: bool,
    detail: String,
}

fn check(cond: bool, detail: &mut String, what: impl AsRef<str>) -> bool {
    if !cond {
        let _ = write!(detail, "[failed: {}] ", what.as_ref());
    }
    cond
}

fn a1() -> Outcome {
    let s = common::load("reference.scn");
    let grid: Vec<u64> = (94..=400).collect();
    let fbl_curve = tradeoff_sweep(&s, &grid).unwrap();
    let ibl_curve = tradeoff_sweep(
        &Scenario {
            regime: Regime::Ibl,
            ..s.clone()
        },
        &grid,
    )
    .unwrap();
    let mut d = String::new();
    let mut ok = check(
        fbl_curve.feasible_count() == grid.len(),
        &mut d,
        "FBL grid all feasible",
    );
    let k = fbl_curve.argmin().unwrap();
    ok &= check(k > 0 && k + 1 < grid.len(), &mut d, "FBL argmin interior");
    let totals: Vec<f64> = ibl_curve.points.iter().map(|p| p.total_s).collect();
    ok &= check(
        totals.windows(2).all(|w| w[0] <= w[1]),
        &mut d,
        "IBL non-increasing toward small n",
    );
    let _ = write!(
        d,
        "FBL argmin n={} ({:.4e} s, ends {:.4e}/{:.4e} s); IBL min at n={}",
        fbl_curve.points[k].n,
        fbl_curve.points[k].total_s,
        totals[0].max(fbl_curve.points[0].total_s),
        fbl_curve.points[grid.len() - 1].total_s,
        ibl_curve.points[ibl_curve.argmin().unwrap()].n
    );
    Outcome { ok, detail: d }
}

fn a2() -> Outcome {
    let base = common::load("uplink.scn");
    let mut strictly = 0;
    let mut worse = Vec::new();
    let mut ratios = Vec::new();
    let instances = 50;
    for k in 0..instances {
        let s = base
            .with_users(1 + k % 4)
            .unwrap()
            .with_random_gains(1000 + k as u64)
            .unwrap();
        let s = Scenario {
            seed: k as u64 + 1,
            ..s
        };
        let adaptive = optimize_adaptive(&s, &DEFAULT_TTI_LEVELS_S, DEFAULT_BUDGET).unwrap();
        let best_fixed: Score = DEFAULT_TTI_LEVELS_S
            .iter()
            .map(|&t| fixed_plan(&s, t).unwrap().score)
            .min()
            .unwrap();
        if adaptive.score > best_fixed {
            worse.push(k);
        } else if adaptive.score < best_fixed {
            strictly += 1;
        }
        if adaptive.score.violations == 0 && best_fixed.violations == 0 {
            ratios.push(adaptive.score.avg_delay_s / best_fixed.avg_delay_s);
        }
    }
    let mut d = String::new();
    let mut ok = check(worse.is_empty(), &mut d, format!("adaptive worse on {worse:?}"));
    ok &= check(strictly * 5 >= instances * 4, &mut d, "strict on >= 80%");
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    let _ = write!(
        d,
        "adaptive <= best fixed on {}/{instances}, strictly < on {strictly}/{instances}; mean delay ratio {mean:.3}",
        instances - worse.len()
    );
    Outcome { ok, detail: d }
}

fn a3() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_urllc-lab"))
        .args(["compare", "--scenario"])
        .arg(common::scenario_path("compare.scn"))
        .args(["--users", "2:10", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    let mut d = String::new();
    if !out.status.success() {
        let _ = write!(d, "compare failed: {}", String::from_utf8_lossy(&out.stderr));
        return Outcome { ok: false, detail: d };
    }
    let csv = std::fs::read_to_string(tmp.path().join("compare.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    let delay = |users: &str, proto: &str, scheme: &str, tti: &str| -> Option<f64> {
        rows.iter()
            .find(|r| r[0] == users && r[1] == proto && r[2] == scheme && r[3] == tti && r[10] == "true")
            .and_then(|r| r[4].parse().ok())
    };
    let mut cells = 0;
    let mut bad = Vec::new();
    let mut adaptive_min = true;
    for r in rows.iter().filter(|r| r[1] == "GB") {
        cells += 1;
        match (delay(&r[0], "GB", &r[2], &r[3]), delay(&r[0], "GF", &r[2], &r[3])) {
            (Some(gb), Some(gf)) if gf < gb => {}
            other => bad.push(format!("{}/{}{} {other:?}", r[0], r[2], r[3])),
        }
    }
    for users in 2..=10 {
        let u = users.to_string();
        let gf = delay(&u, "GF", "adaptive", "");
        let others = rows
            .iter()
            .filter(|r| r[0] == u && !(r[1] == "GF" && r[2] == "adaptive"));
        for r in others {
            if let (Some(a), Ok(x)) = (gf, r[4].parse::<f64>()) {
                adaptive_min &= a <= x;
            }
        }
    }
    let ok = check(bad.is_empty(), &mut d, format!("GF >= GB in {bad:?}"));
    let _ = write!(
        d,
        "GF < GB in {}/{cells} cells for users 2..10; adaptive-GF row minimum: {adaptive_min}",
        cells - bad.len()
    );
    Outcome { ok, detail: d }
}

fn random_small(rng: &mut Mix) -> (Scenario, Vec<f64>) {
    let users = 2 + rng.below(2) as usize;
    let subchannels = 2 + rng.below(2) as usize;
    let snr: Vec<f64> = (0..users).map(|_| rng.uniform(0.0, 20.0)).collect();
    let s = Scenario {
        users,
        subchannels,
        period_s: 0.005,
        arrival: ArrivalProcess::Poisson {
            rate_per_s: rng.uniform(200.0, 1500.0),
        },
        protocol: if rng.below(2) == 0 {
            AccessProtocol::GrantBased
        } else {
            AccessProtocol::GrantFree
        },
        snr_db: Some(snr),
        seed: rng.next_u64() % 1000,
        ..Scenario::default()
    };
    let levels = if rng.below(2) == 0 {
        DEFAULT_TTI_LEVELS_S.to_vec()
    } else {
        DEFAULT_TTI_LEVELS_S[..4].to_vec()
    };
    (s, levels)
}

fn a4() -> Outcome {
    let mut d = String::new();
    let s = common::load("oracle_2x2.scn");
    let levels = [0.0625e-3, 0.125e-3, 0.25e-3, 0.5e-3];
    let plan = optimize_exhaustive(&s, &levels, DEFAULT_BUDGET).unwrap();
    let (oracle, count) = common::brute_force(&s, &levels);
    let mut ok = check(count == 64, &mut d, "64 plans enumerated");
    ok &= check(
        common::matches_oracle(&plan, &oracle),
        &mut d,
        "exhaustive == brute force",
    );

    let mut rng = Mix(2024);
    let mut below = 0;
    let mut gaps = Vec::new();
    let mut more_violations = 0;
    for _ in 0..100 {
        let (s, levels) = random_small(&mut rng);
        let ex = optimize_exhaustive(&s, &levels, DEFAULT_BUDGET).unwrap();
        let gr = optimize_greedy(&s, &levels).unwrap();
        if gr.score < ex.score {
            below += 1;
        } else if gr.score.violations > ex.score.violations {
            more_violations += 1;
        } else {
            gaps.push(gr.score.avg_delay_s / ex.score.avg_delay_s - 1.0);
        }
    }
    ok &= check(
        below == 0,
        &mut d,
        format!("greedy below exhaustive on {below} instances"),
    );
    let mean = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
    let max = gaps.iter().copied().fold(0.0, f64::max);
    let exact = gaps.iter().filter(|&&g| g == 0.0).count();
    let skew = common::load("skewed_3x4.scn");
    let ex = optimize_exhaustive(&skew, &DEFAULT_TTI_LEVELS_S, DEFAULT_BUDGET).unwrap();
    let gr = optimize_greedy(&skew, &DEFAULT_TTI_LEVELS_S).unwrap();
    let _ = write!(
        d,
        "oracle plan {:?}/{:?}; greedy gap over 100: mean {:.2}%, max {:.2}%, exact {exact}, extra violations {more_violations}; skewed_3x4 gap {:.2}%",
        oracle.assignment,
        oracle.tti_s,
        100.0 * mean,
        100.0 * max,
        100.0 * (gr.score.avg_delay_s / ex.score.avg_delay_s - 1.0)
    );
    Outcome { ok, detail: d }
}

fn a5() -> Outcome {
    let mut d = String::new();
    let z = q_inverse(1e-7).unwrap();
    let zo = common::q_inv(1e-7);
    let mut ok = check((z - 5.19934).abs() <= 1e-4, &mut d, "Qinv(1e-7) vs 5.19934");
    ok &= check((z - zo).abs() <= 1e-4, &mut d, "Qinv vs bisection");
    let snr = Snr::from_db(10.0).unwrap();
    let n_fbl = fbl::min_blocklength(snr, 256, 1e-7).unwrap();
    let n_ibl = fbl::ibl_min_blocklength(snr, 256).unwrap();
    let (scan_fbl, scan_ibl) = (
        common::fbl_min_scan(10.0, 256.0, 1e-7),
        common::ibl_min_scan(10.0, 256.0),
    );
    ok &= check(
        n_fbl == 94 && scan_fbl == 94,
        &mut d,
        format!("FBL min {n_fbl}/{scan_fbl}"),
    );
    ok &= check(
        n_ibl == 75 && scan_ibl == 75,
        &mut d,
        format!("IBL min {n_ibl}/{scan_ibl}"),
    );

    let mut rng = Mix(99);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 1000 {
        let snr = Snr::from_db(rng.uniform(-10.0, 30.0)).unwrap();
        let n = rng.uniform(50.0, 5000.0).round();
        let eps = 10f64.powf(rng.uniform(-9.0, -2.0));
        let r = fbl::fbl_rate(snr, n, eps).unwrap();
        if r <= 0.0 {
            continue;
        }
        let back = fbl::error_prob(snr, n, n * r).unwrap().value;
        worst = worst.max((back - eps).abs() / eps);
        tested += 1;
    }
    ok &= check(worst <= 1e-6, &mut d, "rate/error round trip");
    let _ = write!(
        d,
        "Qinv(1e-7)={z:.6} (bisection {zo:.6}); min n FBL {n_fbl}, IBL {n_ibl}; round trip worst rel {worst:.2e} over {tested}"
    );
    Outcome { ok, detail: d }
}

/// A blocklength at 10 dB whose single-block error is between 0.1 and 0.5.
fn retry_scenario() -> (Scenario, f64) {
    let s = Scenario {
        snr_db: Some(vec![10.0]),
        error_target: 0.5,
        protocol: AccessProtocol::GrantBased,
        max_attempts: Some(4),
        arrival: ArrivalProcess::Trace {
            entries: vec![TraceEntry {
                user: None,
                time_s: 0.0,
            }],
        },
        ..Scenario::default()
    };
    for n in (60..94).rev() {
        let tti = n as f64 / 1e6;
        if let Ok(p) = plan_frame(&s, 0, 1e6, tti) {
            if p.segments == 1 && p.decode_eps > 0.1 && p.decode_eps < 0.5 {
                return (s, tti);
            }
        }
    }
    panic!("no blocklength with moderate error");
}

fn a6() -> Outcome {
    let mut d = String::new();
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &std::path::Path| {
        Command::new(env!("CARGO_BIN_EXE_urllc-lab"))
            .args(["simulate", "--scenario"])
            .arg(common::scenario_path("compare.scn"))
            .args(["--seed", "17", "--tti", "1.25e-4", "--out"])
            .arg(dir)
            .output()
            .unwrap()
            .status
            .success()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut ok = check(run(&a) && run(&b), &mut d, "simulate runs");
    for f in ["stats.json", "packets.csv", "manifest.json"] {
        ok &= check(
            std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok(),
            &mut d,
            format!("{f} byte-identical"),
        );
    }

    // per-packet accounting against the component identity
    let mut worst: f64 = 0.0;
    let mut packets = 0;
    for (name, tti) in [
        ("uplink.scn", 2.5e-4),
        ("compare.scn", 2.5e-4),
        ("skewed_3x4.scn", 1e-3),
    ] {
        let s = common::load(name);
        for proto in [AccessProtocol::GrantBased, AccessProtocol::GrantFree] {
            let s = Scenario {
                protocol: proto,
                ..s.clone()
            };
            let stats = run_fixed_baseline(&s, tti, SimMode::Sampled).unwrap();
            let (c_tx, c_proc, c_prop) = match proto {
                AccessProtocol::GrantBased => (2.0, 3.0, 4.0),
                AccessProtocol::GrantFree => (1.0, 1.0, 2.0),
            };
            for p in &stats.packets {
                let air = p.segments as f64 * p.tti_s;
                let by_hand = (p.start_s - p.arrival_s)
                    + p.attempts * (c_tx * air + c_proc * s.processing_s + c_prop * s.propagation_s)
                    + (p.attempts - 1.0) * s.retx_gap_s();
                let times = ComponentTimes {
                    transmission_s: air,
                    processing_s: s.processing_s,
                    propagation_s: s.propagation_s,
                };
                let composed = compose_over_the_air(
                    p.start_s - p.arrival_s,
                    &times,
                    &s.profile(),
                    p.attempts,
                    s.retx_gap_s(),
                )
                .unwrap();
                let b = &p.breakdown;
                let parts = b.queuing_s + b.transmission_s + b.processing_s + b.propagation_s + b.feedback_s;
                for other in [by_hand, composed.total_s, parts, p.departure_s - p.arrival_s] {
                    worst = worst.max((b.total_s - other).abs() / b.total_s);
                }
                packets += 1;
            }
        }
    }
    ok &= check(worst <= 1e-12, &mut d, "delay identity");

    // sampled attempts against the truncated-geometric mean
    let (s, tti) = retry_scenario();
    let seeds = 10_000u64;
    let mut attempts = Vec::with_capacity(seeds as usize);
    let mut eps = 0.0;
    for seed in 0..seeds {
        let s = Scenario { seed, ..s.clone() };
        let mut policy = StaticPlanPolicy::new(&s, &[Some(0)], &[tti]).unwrap();
        let stats = simulate(&s, &mut policy, SimMode::Sampled).unwrap();
        attempts.push(stats.packets[0].attempts);
        eps = stats.packets[0].eps_attempt;
    }
    let mean = attempts.iter().sum::<f64>() / seeds as f64;
    let var = attempts.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
    let se = (var / seeds as f64).sqrt();
    let analytic: f64 = (0..4).map(|k| eps.powi(k)).sum();
    let library = expected_attempts(eps, Some(4)).unwrap().mean;
    ok &= check((library - analytic).abs() < 1e-12, &mut d, "analytic attempts");
    ok &= check((mean - analytic).abs() <= 3.0 * se, &mut d, "sampled within 3 SE");
    let _ = write!(
        d,
        "identical files; identity worst rel {worst:.1e} over {packets} packets; attempts {mean:.4} vs {analytic:.4} (SE {se:.4}, eps {eps:.3})"
    );
    Outcome { ok, detail: d }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 6] = [
        ("A1 tradeoff shape", a1, Duration::from_secs(10)),
        ("A2 adaptive beats fixed", a2, Duration::from_secs(300)),
        ("A3 GF beats GB", a3, Duration::from_secs(120)),
        ("A4 oracle equivalence", a4, Duration::from_secs(60)),
        ("A5 numeric kernel", a5, Duration::from_secs(5)),
        ("A6 determinism and accounting", a6, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let t0 = Instant::now();
        let out = f();
        let took = t0.elapsed();
        let ok = out.ok && took <= limit;
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name}: {} ({:.2} s, limit {} s)",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
