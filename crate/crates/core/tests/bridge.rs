use serde_json::{json, Value};
use urllc_core::bridge::{serve_stream, Session};
use urllc_core::optimizer::{optimize_greedy, DEFAULT_TTI_LEVELS_S};
use urllc_core::sim::{PacketRecord, SimMode, StaticPlanPolicy};
use urllc_core::Scenario;

const TWO_BY_TWO: &str = "\
users = 2
subchannels = 2
period_s = 0.005
arrival = poisson
arrival_rate_per_s = 1500
snr_db = [10, 6]
protocol = GF
seed = 11
";

fn session() -> Session {
    let mut s = Session::default();
    let reply = call(&mut s, json!({"seq": 0, "type": "hello", "scenario_text": TWO_BY_TWO}));
    assert_eq!(reply["type"], "spec", "{reply}");
    s
}

fn call(s: &mut Session, req: Value) -> Value {
    serde_json::from_str(&s.handle_line(&req.to_string())).unwrap()
}

fn is_error(v: &Value, code: &str) -> bool {
    v["type"] == "error" && v["code"] == code
}

/// Grant every idle queue its own subchannels at a fixed level, as a static plan would.
fn plan_action(obs: &Value, owned: &[Vec<usize>], level: &[usize]) -> Value {
    let bits = obs["queue_bits"].as_array().unwrap();
    let busy = obs["busy"].as_array().unwrap();
    let grants: Vec<Value> = (0..owned.len())
        .filter(|&q| busy[q].as_f64() == Some(0.0) && bits[q].as_u64() > Some(0) && !owned[q].is_empty())
        .map(|q| json!({"user": q, "subchannels": owned[q], "tti_index": level[q]}))
        .collect();
    json!({"grants": grants})
}

#[test]
fn hello_describes_the_spaces() {
    let mut s = Session::default();
    let r = call(&mut s, json!({"seq": 1, "type": "hello", "scenario_text": TWO_BY_TWO}));
    assert_eq!(r["seq"], 1);
    assert_eq!(r["users"], 2);
    assert_eq!(r["subchannels"], 2);
    assert_eq!(r["observation"]["size"], 3 * 2 + 4 + 2);
    assert_eq!(r["tti_levels_s"].as_array().unwrap().len(), DEFAULT_TTI_LEVELS_S.len());
    assert_eq!(r["mode"], "sampled");
}

#[test]
fn reset_is_deterministic_per_seed() {
    let mut a = session();
    let mut b = session();
    let ra = call(&mut a, json!({"seq": 1, "type": "reset", "seed": 5}));
    let rb = call(&mut b, json!({"seq": 1, "type": "reset", "seed": 5}));
    assert_eq!(ra, rb);
    let rc = call(&mut b, json!({"seq": 2, "type": "reset", "seed": 6}));
    assert_ne!(ra["packets"], Value::Null);
    assert_ne!(ra["observation"], rc["observation"]);
    let vec = ra["observation"]["vector"].as_array().unwrap();
    assert_eq!(vec.len(), 12);
}

#[test]
fn shared_subchannel_is_rejected_without_state_change() {
    let mut s = session();
    let before = call(&mut s, json!({"seq": 1, "type": "reset", "seed": 3}));
    for action in [
        json!({"assignment": [[0, 1], -1], "tti_index": [0, 0]}),
        json!({"grants": [
            {"user": 0, "subchannels": [0, 1], "tti_index": 1},
            {"user": 1, "subchannels": [1], "tti_index": 1}
        ]}),
    ] {
        let r = call(&mut s, json!({"seq": 2, "type": "step", "action": action}));
        assert!(is_error(&r, "EXCLUSIVITY"), "{r}");
        assert_eq!(r["seq"], 2);
    }
    // after the rejections the episode continues exactly where it was
    let mut fresh = session();
    call(&mut fresh, json!({"seq": 1, "type": "reset", "seed": 3}));
    let owned = vec![vec![0], vec![1]];
    let act = plan_action(&before["observation"], &owned, &[1, 1]);
    let x = call(&mut s, json!({"seq": 3, "type": "step", "action": act.clone()}));
    let y = call(&mut fresh, json!({"seq": 3, "type": "step", "action": act}));
    assert_eq!(x, y);
}

#[test]
fn out_of_range_actions_report_bounds() {
    let mut s = session();
    call(&mut s, json!({"seq": 1, "type": "reset", "seed": 3}));
    for action in [
        json!({"assignment": [0, 1], "tti_index": [9, 0]}),
        json!({"assignment": [0, 7], "tti_index": [0, 0]}),
        json!({"assignment": [0], "tti_index": [0, 0]}),
        json!({"grants": [{"user": 0, "subchannels": [5], "tti_s": 1e-4}]}),
        json!({"grants": [{"user": 0, "subchannels": [0], "tti_s": -1.0}]}),
    ] {
        let r = call(&mut s, json!({"seq": 4, "type": "step", "action": action}));
        assert!(is_error(&r, "BOUNDS"), "{r}");
    }
}

#[test]
fn every_line_gets_one_reply_with_its_seq() {
    let input = [
        "not json",
        r#"{"seq": 1}"#,
        r#"{"seq": 2, "type": "dance"}"#,
        r#"{"seq": 3, "type": "step", "action": {}}"#,
        r#"{"seq": 4, "type": "reset"}"#,
        "[1, 2]",
        "",
        r#"{"seq": "x", "type": "hello"}"#,
    ]
    .join("\n");
    let mut out = Vec::new();
    serve_stream(input.as_bytes(), &mut out, None).unwrap();
    let replies: Vec<Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(replies.len(), 7);
    let codes: Vec<&str> = replies.iter().map(|r| r["code"].as_str().unwrap()).collect();
    assert_eq!(
        codes,
        [
            "MALFORMED",
            "MALFORMED",
            "UNKNOWN_TYPE",
            "NOT_READY",
            "NOT_READY",
            "MALFORMED",
            "SCENARIO"
        ]
    );
    assert_eq!(replies[0]["seq"], Value::Null);
    assert_eq!(replies[2]["seq"], 2);
    assert_eq!(replies[6]["seq"], "x");
}

#[test]
fn finished_episode_refuses_steps() {
    let mut s = Session::default();
    let text = "arrival = trace\narrival_trace = [0.0]\nsnr_db = [10]\n";
    call(&mut s, json!({"seq": 0, "type": "hello", "scenario_text": text}));
    call(&mut s, json!({"seq": 1, "type": "reset"}));
    let r = call(
        &mut s,
        json!({"seq": 2, "type": "step", "action": {"assignment": [0], "tti_index": [2]}}),
    );
    assert_eq!(r["done"], true, "{r}");
    let again = call(
        &mut s,
        json!({"seq": 3, "type": "step", "action": {"assignment": [0], "tti_index": [2]}}),
    );
    assert!(is_error(&again, "EPISODE_DONE"));
}

#[test]
fn episode_return_matches_native_run() {
    let scenario = Scenario::parse(TWO_BY_TWO).unwrap();
    let plan = optimize_greedy(&scenario, &DEFAULT_TTI_LEVELS_S).unwrap();
    assert_eq!(plan.score.violations, 0);
    let level: Vec<usize> = plan
        .tti_s
        .iter()
        .map(|t| DEFAULT_TTI_LEVELS_S.iter().position(|l| l == t).unwrap())
        .collect();
    let owned: Vec<Vec<usize>> = (0..2)
        .map(|q| (0..2).filter(|&x| plan.assignment[x] == Some(q)).collect())
        .collect();

    let mut policy = StaticPlanPolicy::new(&scenario, &plan.assignment, &plan.tti_s).unwrap();
    let native = urllc_core::sim::simulate(&scenario, &mut policy, SimMode::Sampled).unwrap();
    let expected: f64 = -native
        .packets
        .iter()
        .map(|r: &PacketRecord| {
            if r.dropped {
                scenario.period_s
            } else {
                r.breakdown.total_s
            }
        })
        .sum::<f64>();

    let mut s = session();
    let mut reply = call(&mut s, json!({"seq": 1, "type": "reset", "seed": scenario.seed}));
    let mut total = 0.0;
    let mut resolved = 0;
    let mut seq = 2;
    while reply["done"] != true {
        let act = plan_action(&reply["observation"], &owned, &level);
        reply = call(&mut s, json!({"seq": seq, "type": "step", "action": act}));
        assert_eq!(reply["type"], "transition", "{reply}");
        total += reply["reward"].as_f64().unwrap();
        resolved += reply["info"]["resolved"].as_array().unwrap().len();
        seq += 1;
    }
    assert_eq!(reply["info"]["truncated"], false);
    assert_eq!(resolved, native.packets.len());
    assert!((total - expected).abs() < 1e-9, "{total} vs {expected}");
    assert!((reply["info"]["episode_return"].as_f64().unwrap() - total).abs() < 1e-12);
}
