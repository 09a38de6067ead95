//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs with `cargo test --test acceptance`.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use smal::mdp::{demonstrated_policy, learn_reward, learn_transitions, value_iteration, IrlConfig, MdpModel, TransitionModel};
use smal::pipeline::{model_to_bytes, record_scripted, train, ScriptedOptions, TrainConfig};
use smal::sim::{Pose, SimWorld};
use smal::solver::{smoothed_objective, solve, SolverConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn smal(args: &[&str]) -> (String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_smal"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("smal binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "smal {args:?} failed:\n{stderr}");
    (stdout, stderr)
}

fn field<T: std::str::FromStr>(text: &str, key: &str) -> T {
    let start = text.find(&format!("{key}=")).unwrap_or_else(|| panic!("no {key} in {text:?}")) + key.len() + 1;
    let value: String = text[start..].chars().take_while(|c| !c.is_whitespace()).collect();
    value.parse().unwrap_or_else(|_| panic!("bad {key} value {value:?}"))
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    (v[(n - 1) / 2] + v[n / 2]) as f64 / 2.0
}

fn solver_monotone_descent() -> Outcome {
    let t0 = Instant::now();
    let cfg = SolverConfig::default();
    let mut iterations = Vec::new();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut unconverged = 0;
    for seed in 0..100 {
        let (x, y) = common::random_unrelated(&mut common::rng(seed), 40, 4, 6);
        let (_, st) = solve(&x, &y, &cfg).expect("solve");
        for pair in st.objective_trace.windows(2) {
            worst_rise = worst_rise.max(pair[1] - pair[0]);
        }
        unconverged += usize::from(!(st.converged && st.iterations <= 100));
        iterations.push(st.iterations);
    }
    let elapsed = t0.elapsed();
    let (lo, hi) = (iterations.iter().min().copied().unwrap_or(0), iterations.iter().max().copied().unwrap_or(0));
    let med = median(iterations);
    // Reported only: queries that are noisy copies of a template drive many
    // groups towards zero, where reweighting converges more slowly.
    let copies: Vec<usize> = (0..100)
        .map(|seed| {
            let (x, y) = common::random_instance(&mut common::rng(seed), 40, 4, 6);
            solve(&x, &y, &cfg).expect("solve").1.iterations
        })
        .collect();
    let pass = worst_rise <= 1e-9 && unconverged == 0 && (5.0..=30.0).contains(&med) && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "100 instances, largest per-iteration increase {worst_rise:.2e}, unconverged {unconverged}, \
             median iterations {med} (range {lo}..{hi}), {:.2}s; noisy-template queries for reference: median {}",
            elapsed.as_secs_f64(),
            median(copies)
        ),
    )
}

fn solver_oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = common::rng(1000 + seed);
        let (m, k, l) = [(20, 3, 4), (16, 4, 3), (12, 6, 2), (20, 2, 6)][seed as usize / 2 % 4];
        let (x, y) = if seed % 2 == 0 {
            common::random_instance(&mut rng, m, k, l)
        } else {
            common::random_unrelated(&mut rng, m, k, l)
        };
        let (w, _) = solve(&x, &y, &cfg).expect("solve");
        let f_solve = smoothed_objective(&x, &y, &w, &cfg).expect("objective");
        let f_oracle = common::subgradient_oracle(&x, &y, &cfg, 50_000);
        worst = worst.max((f_solve - f_oracle).abs() / f_oracle.abs().max(1e-12));
    }
    let elapsed = t0.elapsed();
    outcome(
        worst <= 1e-3 && elapsed < Duration::from_secs(60),
        format!("20 instances, worst relative gap {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn sequence_advantage() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let (corpus, _) = smal(&["corpus", "--out", &d("corpus")]);
    let scenes: usize = field(&corpus, "scenes");
    let aliased: f64 = field(&corpus, "aliased_fraction");
    let mut acc = Vec::new();
    let mut queries = Vec::new();
    let mut csv_ok = true;
    for l in ["6", "1"] {
        let model = d(&format!("l{l}.smal"));
        smal(&["enroll", "--sequences", &d("corpus/scenes"), "--seq-len", l, "--out", &model]);
        let (csv, stderr) = smal(&["eval-recognition", "--model", &model, "--queries", &d("corpus/queries")]);
        acc.push(field::<f64>(&stderr, "accuracy"));
        queries.push(field::<usize>(&stderr, "queries"));
        let mut lines = csv.lines();
        csv_ok &= lines.next() == Some("threshold,precision,recall");
        let rows: Vec<Vec<f64>> =
            lines.map(|r| r.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect();
        csv_ok &= !rows.is_empty()
            && rows.iter().all(|r| r.len() == 3 && r[1..].iter().all(|v| (0.0..=1.0).contains(v)))
            && rows.windows(2).all(|p| p[1][2] >= p[0][2]);
    }
    let gap = acc[0] - acc[1];
    outcome(
        scenes >= 20 && aliased >= 0.30 && queries[0] >= 200 && gap >= 0.10 && csv_ok,
        format!(
            "{scenes} places, {:.0}% aliased frames, l=6 {:.1}% over {} queries, l=1 {:.1}% over {} queries, \
             gap {:.1} points, PR CSV {}",
            aliased * 100.0,
            acc[0] * 100.0,
            queries[0],
            acc[1] * 100.0,
            queries[1],
            gap * 100.0,
            if csv_ok { "well-formed" } else { "malformed" }
        ),
    )
}

fn duplicate_idempotence() -> Outcome {
    let base = SimWorld::load(repo_root().join("worlds/rescue7.world")).expect("world");
    let mut w = base.with_start(Pose::new(0, 3, smal::sim::Heading::E)).expect("start");
    let demo = record_scripted(&mut w, "rescue7", ScriptedOptions { scan_turns: 4 }).expect("demo");
    let cfg = TrainConfig::for_seq_len(4);
    let once = model_to_bytes(&train(std::slice::from_ref(&demo), &cfg).expect("train")).expect("bytes");
    let twice = model_to_bytes(&train(&[demo.clone(), demo], &cfg).expect("train")).expect("bytes");
    outcome(once == twice, format!("model files of {} and {} bytes, identical: {}", once.len(), twice.len(), once == twice))
}

fn transition_exactness() -> Outcome {
    let cases: [(&[usize], &[usize], &[((usize, usize, usize), f64)]); 3] = [
        (&[0, 1, 0, 1], &[0, 0, 0], &[((0, 0, 1), 1.0), ((1, 0, 0), 1.0)]),
        (&[0, 1, 0, 2], &[0, 0, 0], &[((0, 0, 1), 0.5), ((0, 0, 2), 0.5)]),
        (&[0, 0], &[3], &[((0, 3, 0), 1.0)]),
    ];
    let mut worst = 0.0f64;
    for (s, a, expected) in cases {
        let counts = learn_transitions(s, a).expect("learn");
        let num_states = s.iter().max().unwrap() + 1;
        let num_actions = a.iter().max().unwrap() + 1;
        let t = counts.to_model(num_states, num_actions).expect("model");
        for &((s0, a0, s1), p) in expected {
            worst = worst.max((t.prob(s0, a0, s1) - p).abs());
        }
    }
    outcome(worst <= 1e-12, format!("3 worked examples, largest deviation {worst:.1e}"))
}

fn value_iteration_correctness() -> Outcome {
    let mut mismatches = 0;
    let mut worst_value = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = common::rng(5000 + seed);
        let n = 2 + seed as usize % 3;
        let na = 2 + (seed as usize / 3) % 2;
        let mdp = common::random_mdp(&mut rng, n, na, 0.9);
        let pi = value_iteration(&mdp, 1e-12).expect("vi");
        let (best, best_v) = common::brute_force_policy(&mdp);
        let greedy: Vec<usize> = (0..n).map(|s| pi.get(s).expect("total policy")).collect();
        mismatches += usize::from(greedy != best);
        for s in 0..n {
            worst_value = worst_value.max((pi.values[s] - best_v[s]).abs());
        }
    }
    let t = TransitionModel::from_rows(2, 1, [((0, 0), vec![(1, 1.0)]), ((1, 0), vec![(1, 1.0)])]).expect("rows");
    let mut chain = MdpModel::new(2, common::acts(1), t, 0.5).expect("mdp");
    chain.set_state_reward(&[0.0, 1.0]).expect("reward");
    let v = value_iteration(&chain, 1e-12).expect("vi").values;
    let chain_err = (v[0] - 1.0).abs().max((v[1] - 2.0).abs());
    outcome(
        mismatches == 0 && worst_value <= 1e-6 && chain_err <= 1e-9,
        format!(
            "50 random MDPs, policy mismatches {mismatches}, largest value gap {worst_value:.1e}; \
             chain V = ({:.12}, {:.12})",
            v[0], v[1]
        ),
    )
}

fn irl_end_state() -> Outcome {
    let cfg = IrlConfig::default();
    let mut failures = Vec::new();
    for len in 3..=6usize {
        // Actions: 0 advances, 1 stays, 2 steps back; the end is absorbing.
        let s_stream: Vec<usize> = (0..len).collect();
        let a_stream = vec![0; len - 1];
        let mut rows = Vec::new();
        for s in 0..len {
            let end = s == len - 1;
            rows.push(((s, 0), vec![(if end { s } else { s + 1 }, 1.0)]));
            rows.push(((s, 1), vec![(s, 1.0)]));
            rows.push(((s, 2), vec![(if end || s == 0 { s } else { s - 1 }, 1.0)]));
        }
        let observed = learn_transitions(&s_stream, &a_stream).expect("counts").to_model(len, 3).expect("model");
        let t = TransitionModel::from_rows(len, 3, rows).expect("rows");
        for ((s, a), row) in observed.observed() {
            assert_eq!(&t.row(*s, *a), row, "demo agrees with the chain dynamics");
        }
        let expert = demonstrated_policy(s_stream.iter().copied().zip(a_stream.iter().copied()));
        let end_states = [len - 1].into_iter().collect();
        let est = learn_reward(&t, &expert, &end_states, &cfg).expect("irl");
        let r = &est.state_reward;
        let top = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unique_end = r[len - 1] == top && r[..len - 1].iter().all(|&v| v < top);
        let mut mdp = MdpModel::new(len, common::acts(3), t, cfg.gamma).expect("mdp");
        mdp.set_state_reward(r).expect("reward");
        let pi = value_iteration(&mdp, 1e-12).expect("vi");
        let optimal = expert.iter().all(|(&s, &a)| pi.get(s) == Some(a));
        if !(unique_end && optimal && !est.degenerate) {
            failures.push(format!("length {len}: R = {r:?}"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "chains of length 3-6: reward peaks at the end state and the demonstration is optimal".into()
        } else {
            failures.join("; ")
        },
    )
}

fn end_to_end_rescue() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let world = repo_root().join("worlds/rescue7.world").to_string_lossy().into_owned();
    let starts = ["0,3,E", "0,5,N", "0,1,E"];
    let demos = dir.path().join("demos");
    std::fs::create_dir_all(&demos).expect("mkdir");
    for (i, s) in starts.iter().enumerate() {
        let out = demos.join(format!("demo{i}.jsonl")).to_string_lossy().into_owned();
        smal(&["demo", "--world", &world, "--out", &out, "--start", s, "--scan-turns", "4"]);
    }
    let mut rates = Vec::new();
    for l in [1usize, 2, 4, 8] {
        let model = dir.path().join(format!("l{l}.smal")).to_string_lossy().into_owned();
        smal(&["train", "--demos", &demos.to_string_lossy(), "--out", &model, "--seq-len", &l.to_string()]);
        let mut args = vec!["run", "--model", &model, "--world", &world, "--trials", "10"];
        for s in &starts {
            args.extend(["--start", s]);
        }
        let (out, _) = smal(&args);
        let rate: f64 = field(&out, "success_rate");
        rates.push((rate * 10.0).round() as usize);
    }
    let elapsed = t0.elapsed();
    let (r1, r2, r4, r8) = (rates[0], rates[1], rates[2], rates[3]);
    let l1_worst = r1 < r2 && r1 < r4 && r1 < r8;
    let max_not_last = r8 < r1.max(r2).max(r4);
    outcome(
        r4 >= 9 && l1_worst && max_not_last && elapsed < Duration::from_secs(120),
        format!(
            "l=4 {r4}/10; sweep l=1,2,4,8 -> {r1},{r2},{r4},{r8}/10 (l=1 strictly worst: {l1_worst}, \
             maximum below l=8: {max_not_last}); {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("solver monotone descent", solver_monotone_descent),
        ("solver oracle equivalence", solver_oracle_equivalence),
        ("sequence advantage on aliased corpus", sequence_advantage),
        ("duplicate demonstration idempotence", duplicate_idempotence),
        ("transition frequency exactness", transition_exactness),
        ("value iteration correctness", value_iteration_correctness),
        ("IRL end-state property", irl_end_state),
        ("end-to-end desk-scale rescue", end_to_end_rescue),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        failed += usize::from(!o.pass);
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
