//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidagent::backend::{CassetteBackend, ChatBackend, ChatRequest, FnBackend};
use vidagent::cli;
use vidagent::harness::{evaluate, generate_tasks, run_task, TaskSpec};
use vidagent::memory::deduplicate_clips;
use vidagent::planner::*;
use vidagent::toolkit::*;

const BACKPROP_TOL: f64 = 1e-9;
const DFS_LIMIT_BETA: f64 = 1e8;
const DFS_LIMIT_TOL: f64 = 1e-12;
const SOFTMAX_DRAWS: usize = 10_000;
const SOFTMAX_TOL: f64 = 0.02;
const HARNESS_SEEDS: u64 = 50;
const HARNESS_N: usize = 4;
const DEDUP_LISTS: usize = 1000;
const GRAMMAR_TRIPLES: usize = 1000;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict, Option<Duration>);

/// A chain root -> 1 -> 2 -> leaf(3) closed with `outcome` and back-propagated.
fn depth3_chain(reward: &RewardConfig, outcome: Outcome) -> PlannerTree {
    let mut t = PlannerTree::new("q");
    let a = t.add_child(0, 1, NodeContent::default(), Outcome::Open);
    let b = t.add_child(a, 1, NodeContent::default(), Outcome::Open);
    let leaf = t.add_child(b, 1, NodeContent::default(), outcome);
    t.backpropagate(leaf, reward, 1);
    t
}

fn increment(tree: &PlannerTree, id: NodeId) -> f64 {
    tree.node(id).reward_history.iter().map(|(_, x)| x).sum()
}

fn c1_backprop_exactness() -> Verdict {
    let (alpha, beta) = (1.0, 0.5);
    let t = depth3_chain(&RewardConfig { alpha, beta, n: 1 }, Outcome::Nonfailure);
    // ancestors of leaf 3 at distance d = 1, 2, 3 are nodes 2, 1, 0
    let expected = [1.0, (-0.5f64).exp(), (-1.0f64).exp()];
    let mut worst = 0.0f64;
    for (d, want) in (1..=3).zip(expected) {
        let closed_form = alpha * (beta * (1.0 - d as f64)).exp();
        let got = increment(&t, 3 - d);
        worst = worst.max((got - want).abs()).max((got - closed_form).abs());
    }
    if t.node(3).reward != alpha {
        return Err(format!("leaf reward {} != {alpha}", t.node(3).reward));
    }
    if worst <= BACKPROP_TOL {
        Ok(format!("max |error| {worst:.1e}"))
    } else {
        Err(format!("max |error| {worst:.1e} > {BACKPROP_TOL:.0e}"))
    }
}

/// Planner script: first step cycles through tools by how many siblings were
/// tried, the second step answers.
fn branching_reply(req: &ChatRequest) -> String {
    let text = req.last_user_text();
    let tail = &text[text.find(BEGIN_MARKER).unwrap_or(0)..];
    let steps = tail.lines().filter(|l| l.starts_with("Action: ")).count();
    let tried = tail.lines().filter(|l| l.starts_with("- Thought:")).count();
    match steps {
        0 => format!("Thought: try a tool\nAction: T{}\nAction Input: v.mp4#part {tried}", tried % 3),
        _ => format!("Thought: done\nFinal Answer: answer {tried}"),
    }
}

fn c2_dfs_limit() -> Verdict {
    let reward = RewardConfig { alpha: 1.0, beta: DFS_LIMIT_BETA, n: 3 };
    let t = depth3_chain(&reward, Outcome::Nonfailure);
    let far = [increment(&t, 1), increment(&t, 0)];
    if far.iter().any(|x| x.abs() >= DFS_LIMIT_TOL) {
        return Err(format!("increments at d >= 2 are {far:?}"));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cassette = dir.path().join("session.jsonl");
    let memory = empty_memory();
    let registry = echo_registry(3);
    let run_with = |policy: Policy, backend: &dyn ChatBackend| {
        let session = Session { question: "q", video_ref: "v.mp4", memory: &memory, registry: &registry, backend };
        let config = SearchConfig { reward, limits: Limits::for_registry(&registry), policy, seed: 0 };
        run(session, &config).map_err(|e| e.to_string())
    };
    {
        let inner: Arc<dyn ChatBackend> = Arc::new(FnBackend::new(|r: &ChatRequest| Ok(branching_reply(r))));
        let recorder = CassetteBackend::record(inner, &cassette).map_err(|e| e.to_string())?;
        for policy in [Policy::Dfs, Policy::Mcts] {
            run_with(policy, &recorder)?;
        }
    }
    let replay = CassetteBackend::replay(&cassette).map_err(|e| e.to_string())?;
    let dfs = run_with(Policy::Dfs, &replay)?;
    let mcts = run_with(Policy::Mcts, &replay)?;
    let picks = |o: &RunOutput| o.iterations.iter().skip(1).map(|i| i.selected).collect::<Vec<_>>();
    let (d, m) = (picks(&dfs), picks(&mcts));
    if dfs.iterations.len() != 3 {
        return Err(format!("session ran {} iterations, expected 3", dfs.iterations.len()));
    }
    if d == m {
        Ok(format!("increments at d >= 2 are {far:?}; selections after iteration 1 {d:?}"))
    } else {
        Err(format!("increments at d >= 2 are {far:?}; selections differ: dfs {d:?} vs mcts {m:?}"))
    }
}

fn c3_softmax_statistics() -> Verdict {
    let limits = Limits { max_depth: 8, max_children: 2, parse_retries: 2 };
    // root -> a, b; root is full, so only a and b can be drawn
    let mut equal = PlannerTree::new("q");
    let a = equal.add_child(0, 1, NodeContent::default(), Outcome::Open);
    let b = equal.add_child(0, 1, NodeContent::default(), Outcome::Open);
    let mut skewed = equal.clone();
    let flat = RewardConfig { alpha: 1.0, beta: 0.0, n: 2 };
    let win = skewed.add_child(a, 1, NodeContent::default(), Outcome::Nonfailure);
    skewed.backpropagate(win, &flat, 1);
    let lose = skewed.add_child(b, 2, NodeContent::default(), Outcome::Failure);
    skewed.backpropagate(lose, &flat, 2);
    let (ra, rb) = (skewed.node(a).reward, skewed.node(b).reward);
    if (ra, rb) != (1.0, -1.0) {
        return Err(format!("set-up rewards ({ra}, {rb}) != (1, -1)"));
    }
    let rate = |tree: &PlannerTree| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hits = (0..SOFTMAX_DRAWS).filter(|_| select_node(tree, Policy::Mcts, &limits, &mut rng) == Some(a)).count();
        hits as f64 / SOFTMAX_DRAWS as f64
    };
    let (p_equal, p_skewed) = (rate(&equal), rate(&skewed));
    let target = 1.0 / (1.0 + (-2.0f64).exp());
    let msg = format!("equal {p_equal:.4} (0.5), R=(1,-1) {p_skewed:.4} ({target:.4}), tol {SOFTMAX_TOL}");
    if (p_equal - 0.5).abs() <= SOFTMAX_TOL && (p_skewed - target).abs() <= SOFTMAX_TOL && (target - 0.8808).abs() < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_strategy_ordering() -> Verdict {
    let started = Instant::now();
    let tasks = generate_tasks(0..HARNESS_SEEDS, &TaskSpec::default());
    let n4 = RewardConfig { n: HARNESS_N, ..Default::default() };
    let report = evaluate(&[Policy::Mcts, Policy::Uniform, Policy::Root, Policy::Dfs], &tasks, &n4).map_err(|e| e.to_string())?;
    let n1 = evaluate(&[Policy::Mcts], &tasks, &RewardConfig { n: 1, ..Default::default() }).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let s = |p| report.row(p).unwrap().successes;
    let (mcts, uniform, root, dfs, mcts1) = (s(Policy::Mcts), s(Policy::Uniform), s(Policy::Root), s(Policy::Dfs), n1.rows[0].successes);
    let msg = format!(
        "successes/{HARNESS_SEEDS}: mcts {mcts}, uniform {uniform}, root {root}, dfs {dfs}; mcts N=1 {mcts1}; {:.2}s",
        elapsed.as_secs_f64()
    );
    if mcts >= uniform && mcts >= root && mcts > mcts1 && elapsed < Duration::from_secs(10) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_answer_contract() -> Verdict {
    let tasks = generate_tasks(0..HARNESS_SEEDS, &TaskSpec::default());
    let mut runs = 0;
    let mut answers = 0;
    for task in tasks.into_iter().map(Arc::new) {
        for policy in Policy::ALL {
            for n in [1, 2, HARNESS_N] {
                let (_, out) = run_task(&task, policy, &RewardConfig { n, ..Default::default() }).map_err(|e| e.to_string())?;
                runs += 1;
                if out.answers.len() > n {
                    return Err(format!("seed {} {policy} N={n}: {} answers", task.seed, out.answers.len()));
                }
                for a in &out.answers {
                    let summary = validate_transcript(&a.path).map_err(|e| format!("seed {}: {e}", task.seed))?;
                    if !summary.has_final_answer {
                        return Err(format!("seed {}: answer path without Final Answer", task.seed));
                    }
                    answers += 1;
                }
            }
        }
    }
    Ok(format!("{runs} runs, {answers} transcripts valid, none over N"))
}

fn c6_sql_oracle() -> Verdict {
    let mut checked = 0;
    for name in MEMORY_FIXTURES {
        let memory = load_memory(name);
        for category in categories(&memory_fixture(name)) {
            let category: &'static str = Box::leak(category.into_boxed_str());
            let backend = counting_backend(category);
            let ctx = ToolContext { memory: &memory, backend: &backend };
            let out = run_subtask_tool(SubtaskKind::Count, &ctx, &format!("How many {category}s are there?"))
                .map_err(|e| e.to_string())?;
            let want = tally_instances(&memory_fixture(name), category);
            if count_from_answer(&out) != Some(want) {
                return Err(format!("{name}/{category}: tool said `{out}`, tally {want}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (memory, category) counts match"))
}

fn random_captions(rng: &mut ChaCha8Rng) -> Vec<(i64, String)> {
    const WORDS: [&str; 8] = ["a", "dog", "cat", "runs", "park", "red", "car", "sits"];
    let len = rng.gen_range(0..25);
    let mut frame = 0;
    (0..len)
        .map(|_| {
            frame += rng.gen_range(1..4);
            let words = rng.gen_range(0..5);
            let caption = (0..words).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ");
            (frame, caption)
        })
        .collect()
}

fn c7_dedup_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..DEDUP_LISTS {
        let captions = random_captions(&mut rng);
        for tau in [0.0, 0.6, 1.0] {
            let clips = deduplicate_clips(&captions, tau);
            check_clip_partition(&captions, &clips, tau).map_err(|e| format!("list {i}, tau {tau}: {e}"))?;
            let reps: Vec<(i64, String)> = clips.iter().map(|c| (c.start_frame, c.caption.clone())).collect();
            let again = deduplicate_clips(&reps, tau);
            let same = again.len() == clips.len()
                && again.iter().zip(&clips).all(|(x, y)| x.start_frame == y.start_frame && x.caption == y.caption);
            if !same {
                return Err(format!("list {i}, tau {tau}: not idempotent"));
            }
        }
    }
    Ok(format!("{DEDUP_LISTS} lists x 3 thresholds"))
}

fn c8_determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let db = dir.path().join("park.db");
    let mut sink = Vec::new();
    let code = cli::run(
        ["vidagent", "ingest", &s(&memory_fixture("park")), "--question", "q", "--memory", "both", "--out", &s(&db)],
        &mut sink,
    );
    if code != 0 {
        return Err(format!("ingest exited {code}"));
    }
    let cassette = fixture("cassettes/park_count.jsonl");
    let mut traces = Vec::new();
    for k in 0..2 {
        let trace = dir.path().join(format!("trace{k}.json"));
        let mut out = Vec::new();
        let code = cli::run(
            [
                "vidagent", "ask", &s(&db), "--question", "How many people are in the park?", "--video", "park.mp4",
                "--n", "2", "--seed", "0", "--choices", "A=2,B=3,C=4", "--cassette", &s(&cassette), "--trace-out", &s(&trace),
            ],
            &mut out,
        );
        if code != 0 {
            return Err(format!("ask exited {code}"));
        }
        traces.push(std::fs::read(&trace).map_err(|e| e.to_string())?);
    }
    let golden = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/park_trace.json")).map_err(|e| e.to_string())?;
    match (traces[0] == traces[1], traces[0] == golden) {
        (true, true) => Ok(format!("two runs and the checked-in trace agree ({} bytes)", golden.len())),
        (false, _) => Err("the two runs differ".into()),
        (true, false) => Err("runs agree but differ from the checked-in trace".into()),
    }
}

fn c9_grammar_round_trip() -> Verdict {
    const VIDEO_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_./-";
    const QUESTION_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789?,'#";
    let registry = ToolRegistry::with_subtask_tools();
    let names = registry.names();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pick = |rng: &mut ChaCha8Rng, alphabet: &[u8], len: usize| -> String {
        (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char).collect()
    };
    for i in 0..GRAMMAR_TRIPLES {
        let video_len = rng.gen_range(1..24);
        let video_ref = pick(&mut rng, VIDEO_CHARS, video_len);
        let q_len = rng.gen_range(1..40);
        let mut sub_question = pick(&mut rng, QUESTION_CHARS, q_len).trim().to_string();
        if sub_question.is_empty() || sub_question.starts_with('#') {
            sub_question.insert(0, 'q');
        }
        let inv = ToolInvocation { tool_name: names[rng.gen_range(0..names.len())].to_string(), video_ref, sub_question };
        let (a, input) = format_invocation(&inv);
        let parsed = parse_invocation(&a, &input, &registry).map_err(|e| format!("triple {i}: {e}"))?;
        if parsed != inv || format_invocation(&parsed) != (a, input) {
            return Err(format!("triple {i} changed: {inv:?} -> {parsed:?}"));
        }
    }
    Ok(format!("{GRAMMAR_TRIPLES} triples"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 back-propagation exactness", c1_backprop_exactness, Some(Duration::from_secs(1))),
        ("2 DFS limit", c2_dfs_limit, Some(Duration::from_secs(1))),
        ("3 softmax selection statistics", c3_softmax_statistics, None),
        ("4 strategy ordering", c4_strategy_ordering, None),
        ("5 N-answers contract", c5_answer_contract, None),
        ("6 sub-task SQL oracle equivalence", c6_sql_oracle, None),
        ("7 clip deduplication properties", c7_dedup_properties, None),
        ("8 end-to-end determinism", c8_determinism, None),
        ("9 grammar round-trip", c9_grammar_round_trip, None),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let started = Instant::now();
        let mut result = check();
        let elapsed = started.elapsed();
        if let (Ok(msg), Some(limit)) = (&result, budget) {
            if elapsed >= limit {
                result = Err(format!("{msg}; took {elapsed:?}, limit {limit:?}"));
            }
        }
        match result {
            Ok(msg) => println!("PASS  criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
