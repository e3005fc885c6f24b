//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The full-reproduction criterion needs a converted Matterport3D scene file
//! and a completions endpoint. It runs only when `ROOMLABEL_REPRO_SCENE` and
//! `ROOMLABEL_ENDPOINT` are set, and is reported as SKIP otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use roomlabel::cooccurrence::{
    build_proxy_table, count_ground_truth, entropy, select_informative, softmax, CooccurrenceTable, CountMode,
    Provenance,
};
use roomlabel::evaluation::{compare_conditions, evaluate};
use roomlabel::inference::{
    argmax_label, classify_graph, Candidate, FailedRoom, InferenceOptions, PredictionFile, PredictionHeader,
    RoomOutcome, RoomPrediction, TrialCondition, PREDICTIONS_FORMAT,
};
use roomlabel::ingest::{house, parse_scene_str, preprocess, write_scene, IngestConfig};
use roomlabel::querygen::{ArticleMode, QueryTemplate};
use roomlabel::scoring::offline::PairBonus;
use roomlabel::scoring::{perplexity, CachedScorer, OfflineScorer, SentenceScore, SentenceScorer, TokenLogProb};
use roomlabel::{Label, SceneGraph};

// tolerances
const EQ1_TOL: f64 = 1e-6;
const SOFTMAX_SHIFT_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-9;
const UNIFORM_ENTROPY_TOL: f64 = 1e-9;
const WEIGHTED_MEAN_TOL: f64 = 1e-12;
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(5);
const REPRO_ROOMS: usize = 1878;
const REPRO_TOL_PP: f64 = 3.0;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn l(s: &str) -> Label {
    Label::new(s)
}

fn labels(items: &[&str]) -> Vec<Label> {
    items.iter().map(|s| l(s)).collect()
}

// ---------------------------------------------------------------------------
// Oracle equivalence

const ORACLE_ROOMS: [&str; 3] = ["bathroom", "bedroom", "kitchen"];
const ORACLE_OBJECTS: [&str; 12] = [
    "toilet",
    "shower",
    "towel",
    "bathtub",
    "bed",
    "pillow",
    "dresser",
    "lamp",
    "stove",
    "refrigerator",
    "cabinet",
    "kettle",
];
const ORACLE_SEED: u64 = 7;

struct FixtureRoom {
    id: String,
    label: &'static str,
    objects: Vec<&'static str>,
}

fn oracle_fixture() -> Vec<FixtureRoom> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..50)
        .map(|i| {
            let label = if i < 3 {
                ORACLE_ROOMS[i]
            } else {
                ORACLE_ROOMS[rng.gen_range(0..3)]
            };
            let home = ORACLE_ROOMS.iter().position(|r| *r == label).unwrap();
            let n = rng.gen_range(1..=7);
            let objects = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        ORACLE_OBJECTS[home * 4 + rng.gen_range(0..4)]
                    } else {
                        ORACLE_OBJECTS[rng.gen_range(0..12)]
                    }
                })
                .collect();
            FixtureRoom {
                id: format!("room_{i:02}"),
                label,
                objects,
            }
        })
        .collect()
}

fn oracle_bonuses() -> Vec<(&'static str, &'static str, f64)> {
    vec![
        ("toilet", "bathroom", 4.0),
        ("shower", "bathroom", 3.0),
        ("bed", "bedroom", 4.0),
        ("dresser", "bedroom", 2.5),
        ("stove", "kitchen", 4.0),
        ("refrigerator", "kitchen", 3.0),
        ("towel", "kitchen", 0.5),
    ]
}

/// Scene file for the fixture: rooms side by side along x, every object box
/// inside its room.
fn fixture_scene_text(rooms: &[FixtureRoom]) -> String {
    let mut out = String::from("spaces\tmpcat40\tnyuClass\nrooms");
    for r in ORACLE_ROOMS {
        out.push('\t');
        out.push_str(r);
    }
    out.push('\n');
    for (i, r) in rooms.iter().enumerate() {
        let x = 10.0 * i as f64;
        let _ = writeln!(out, "room\t{}\t{}\t{x}\t0\t0\t{}\t4\t3", r.id, r.label, x + 8.0);
    }
    for (i, r) in rooms.iter().enumerate() {
        for (j, o) in r.objects.iter().enumerate() {
            let x = 10.0 * i as f64 + j as f64;
            let _ = writeln!(
                out,
                "object\t{}_o{j}\t{}\t{o}\t{o}\t{x}\t1\t0\t{}\t2\t1",
                r.id,
                r.id,
                x + 0.5
            );
        }
    }
    out
}

// Brute-force pipeline: no library code beyond the sha2 and serde_json
// utilities.

fn oracle_token_logprob(seed: u64, token: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let d = h.finalize();
    let word = u64::from_le_bytes(d[..8].try_into().unwrap());
    let u = (word >> 11) as f64 / 9007199254740992.0;
    -(0.1 + 4.9 * u)
}

fn oracle_score(sentence: &str, bonuses: &[(&str, &str, f64)]) -> f64 {
    let mut tokens: Vec<String> = Vec::new();
    for word in sentence.split(' ') {
        let mut w = word;
        let mut trailing = Vec::new();
        while let Some(c) = w.chars().last().filter(|c| *c == ',' || *c == '.') {
            trailing.push(c.to_string());
            w = &w[..w.len() - 1];
        }
        if !w.is_empty() {
            tokens.push(w.to_string());
        }
        tokens.extend(trailing.into_iter().rev());
    }
    let mut lps: Vec<f64> = tokens.iter().map(|t| oracle_token_logprob(ORACLE_SEED, t)).collect();
    let cut = sentence.find(" is called ").unwrap();
    let (head, tail) = (&sentence[..cut], &sentence[cut + " is called ".len()..]);
    let mut bonus = 0.0;
    for (o, r, b) in bonuses {
        if head.contains(o) && tail.contains(r) {
            bonus += b;
        }
    }
    *lps.last_mut().unwrap() += bonus;
    let mut total = 0.0;
    for lp in lps {
        total += lp;
    }
    total
}

fn oracle_sentence(objects: &[&str], room: &str) -> String {
    let list = match objects.len() {
        1 => objects[0].to_string(),
        n => format!("{} and {}", objects[..n - 1].join(", "), objects[n - 1]),
    };
    let article = if "aeiou".contains(&room[..1]) { "an" } else { "a" };
    format!("A room containing {list} is called {article} {room}.")
}

fn oracle_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h += -x * x.ln();
        }
    }
    h
}

fn js(s: &str) -> String {
    serde_json::to_string(s).unwrap()
}

fn js_list(items: &[&str]) -> String {
    format!("[{}]", items.iter().map(|s| js(s)).collect::<Vec<_>>().join(","))
}

fn oracle_jsonl(rooms: &[FixtureRoom], proxy: bool, backend: &str) -> String {
    let bonuses = oracle_bonuses();
    let present: BTreeSet<&str> = rooms.iter().flat_map(|r| r.objects.iter().copied()).collect();

    let mut entropy_of: BTreeMap<&str, f64> = BTreeMap::new();
    for &o in &present {
        let p: Vec<f64> = if proxy {
            let logits: Vec<f64> = ORACLE_ROOMS
                .iter()
                .map(|r| oracle_score(&oracle_sentence(&[o], r), &bonuses))
                .collect();
            logits
                .iter()
                .map(|x| 1.0 / logits.iter().map(|y| (y - x).exp()).sum::<f64>())
                .collect()
        } else {
            let mut counts = [0usize; 3];
            for r in rooms {
                let ri = ORACLE_ROOMS.iter().position(|x| *x == r.label).unwrap();
                counts[ri] += r.objects.iter().filter(|x| **x == o).count();
            }
            let total: usize = counts.iter().sum();
            counts
                .iter()
                .map(|&c| (c as f64 + 1.0) / (total as f64 + 3.0))
                .collect()
        };
        entropy_of.insert(o, oracle_entropy(&p));
    }

    let condition = format!(
        "{{\"object_space\":\"nyuClass\",\"provenance\":{},\"alpha\":{},\"k\":3,\"template\":\"v1-grammatical\",\"backend\":{}}}",
        if proxy { "\"proxy\"" } else { "\"ground_truth\"" },
        if proxy { "null" } else { "1.0" },
        js(backend)
    );
    let mut out = format!(
        "{{\"format\":\"roomlabel-predictions-v1\",\"manifest\":null,\"room_space\":\"rooms\",\"room_labels\":{},\"condition\":{condition}}}\n",
        js_list(&ORACLE_ROOMS)
    );
    let mut sorted: Vec<&FixtureRoom> = rooms.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for room in sorted {
        // repeated minimum extraction over distinct labels
        let mut remaining: Vec<&str> = room
            .objects
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut selected = Vec::new();
        while selected.len() < 3 && !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                let (hi, hb) = (entropy_of[remaining[i]], entropy_of[remaining[best]]);
                if hi < hb || (hi == hb && remaining[i] < remaining[best]) {
                    best = i;
                }
            }
            selected.push(remaining.remove(best));
        }
        let mut candidates = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in ORACLE_ROOMS.iter().enumerate() {
            let sentence = oracle_sentence(&selected, r);
            let score = oracle_score(&sentence, &bonuses);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
            candidates.push(format!(
                "{{\"label\":{},\"sentence\":{},\"total_logprob\":{score:?}}}",
                js(r),
                js(&sentence)
            ));
        }
        let _ = writeln!(
            out,
            "{{\"status\":\"ok\",\"room_id\":{},\"gt_label\":{},\"selected_objects\":{},\"candidates\":[{}],\"predicted_label\":{},\"condition\":{condition}}}",
            js(&room.id),
            js(room.label),
            js_list(&selected),
            candidates.join(","),
            js(ORACLE_ROOMS[best.unwrap().0])
        );
    }
    out
}

fn library_jsonl(scene: &str, proxy: bool) -> Result<String, String> {
    let cfg = IngestConfig::default();
    let raw = parse_scene_str(scene, "fixture", &cfg).map_err(|e| e.to_string())?;
    let graph = preprocess(&raw, &cfg, "nyuClass").map_err(|e| e.to_string())?;
    let bonuses = oracle_bonuses()
        .into_iter()
        .map(|(o, r, b)| PairBonus {
            object: l(o),
            room: l(r),
            bonus: b,
        })
        .collect();
    let scorer = CachedScorer::in_memory(OfflineScorer::new(ORACLE_SEED, bonuses));
    let template = QueryTemplate::new(ArticleMode::Grammatical);
    let table = if proxy {
        let objects = graph.space("nyuClass").unwrap().labels.clone();
        build_proxy_table(
            &scorer,
            "nyuClass",
            &objects,
            "rooms",
            &graph.room_space.labels,
            &template,
            4,
        )
    } else {
        count_ground_truth(&graph, "nyuClass", 1.0, CountMode::Instances)
    }
    .map_err(|e| e.to_string())?;
    // tables travel through their text form between commands
    let table = CooccurrenceTable::from_text(&table.to_text(), "table").map_err(|e| e.to_string())?;
    let options = InferenceOptions {
        max_inflight: 4,
        ..InferenceOptions::default()
    };
    let outcomes = classify_graph(&graph, &table, &scorer, &options).map_err(|e| e.to_string())?;
    let file = PredictionFile {
        header: PredictionHeader {
            format: PREDICTIONS_FORMAT.to_string(),
            manifest: None,
            room_space: graph.room_space.name.clone(),
            room_labels: graph.room_space.labels.clone(),
            condition: options.condition(&table, &scorer),
        },
        outcomes,
    };
    Ok(file.to_jsonl())
}

fn oracle_equivalence() -> Outcome {
    let rooms = oracle_fixture();
    let scene = fixture_scene_text(&rooms);
    let backend = OfflineScorer::new(
        ORACLE_SEED,
        oracle_bonuses()
            .into_iter()
            .map(|(o, r, b)| PairBonus {
                object: l(o),
                room: l(r),
                bonus: b,
            })
            .collect(),
    )
    .identity();
    let mut detail = Vec::new();
    let mut correct_total = 0;
    for proxy in [false, true] {
        let start = Instant::now();
        let lib = library_jsonl(&scene, proxy)?;
        let elapsed = start.elapsed();
        let oracle = oracle_jsonl(&rooms, proxy, &backend);
        let name = if proxy { "proxy" } else { "ground_truth" };
        if lib != oracle {
            let (i, (a, b)) = lib
                .lines()
                .zip(oracle.lines())
                .enumerate()
                .find(|(_, (a, b))| a != b)
                .unwrap_or((0, ("<length>", "<length>")));
            return Err(format!(
                "{name}: line {} differs\n  pipeline: {a}\n  oracle:   {b}",
                i + 1
            ));
        }
        ensure!(elapsed < ORACLE_TIME_LIMIT, "{name}: pipeline took {elapsed:?}");
        ensure!(lib.lines().count() == 51, "{name}: expected 50 rooms plus header");
        correct_total += lib
            .lines()
            .skip(1)
            .filter(|line| {
                let v: serde_json::Value = serde_json::from_str(line).unwrap();
                v["gt_label"] == v["predicted_label"]
            })
            .count();
        detail.push(format!("{name} {} bytes identical in {:.0?}", lib.len(), elapsed));
    }
    Ok(format!("{}; {correct_total}/100 rooms correct", detail.join(", ")))
}

// ---------------------------------------------------------------------------
// Entropy and selection

fn random_table(rng: &mut ChaCha8Rng) -> (CooccurrenceTable, Vec<Label>) {
    let n_rooms = rng.gen_range(2..=23);
    let n_objects = rng.gen_range(3..=30);
    let alpha = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
    let objects: Vec<Label> = (0..n_objects).map(|i| l(&format!("obj{i:02}"))).collect();
    let mut shuffled = objects.clone();
    shuffled.shuffle(rng);
    let mut rows = BTreeMap::new();
    let mut entropies = BTreeMap::new();
    let mut previous: Option<Vec<usize>> = None;
    for o in &shuffled {
        // a third of the rows copy the previous counts so entropy ties occur
        let counts: Vec<usize> = match &previous {
            Some(p) if rng.gen_bool(0.33) => p.clone(),
            _ => (0..n_rooms)
                .map(|_| if rng.gen_bool(0.5) { 0 } else { rng.gen_range(0..20) })
                .collect(),
        };
        let total: usize = counts.iter().sum();
        let row: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 + alpha) / (total as f64 + alpha * n_rooms as f64))
            .collect();
        entropies.insert(o.clone(), entropy(&row).unwrap());
        rows.insert(o.clone(), row);
        previous = Some(counts);
    }
    let table = CooccurrenceTable {
        object_space: "fine".into(),
        room_space: "rooms".into(),
        room_labels: (0..n_rooms).map(|i| l(&format!("room{i:02}"))).collect(),
        rows,
        entropy: entropies,
        provenance: Provenance::GroundTruth,
        smoothing_alpha: Some(alpha),
        count_mode: Some(CountMode::Instances),
        scorer: None,
        template: None,
    };
    (table, objects)
}

fn brute_force_select(present: &[Label], table: &CooccurrenceTable, k: usize) -> Vec<Label> {
    let mut distinct: Vec<&Label> = Vec::new();
    for p in present {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    // bubble sort by (entropy, label)
    for i in 0..distinct.len() {
        for j in 0..distinct.len() - 1 - i {
            let (a, b) = (distinct[j], distinct[j + 1]);
            let (ha, hb) = (table.entropy[a], table.entropy[b]);
            if ha > hb || (ha == hb && a > b) {
                distinct.swap(j, j + 1);
            }
        }
    }
    distinct.into_iter().take(k).cloned().collect()
}

fn entropy_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut ties_seen = 0;
    for trial in 0..1000 {
        let (table, objects) = random_table(&mut rng);
        let n_present = rng.gen_range(1..=12);
        let present: Vec<Label> = (0..n_present)
            .map(|_| objects[rng.gen_range(0..objects.len())].clone())
            .collect();
        let k = rng.gen_range(1..=5);
        let got = select_informative(present.iter(), &table, k).map_err(|e| e.to_string())?;
        let want = brute_force_select(&present, &table, k);
        ensure!(got == want, "trial {trial}: selected {got:?}, brute force {want:?}");
        let hs: Vec<f64> = got.iter().map(|g| table.entropy[g]).collect();
        if hs.windows(2).any(|w| w[0] == w[1]) {
            ties_seen += 1;
        }
    }
    ensure!(ties_seen > 0, "no trial exercised the tie rule");
    Ok(format!("1000/1000 rooms match ({ties_seen} with entropy ties)"))
}

// ---------------------------------------------------------------------------
// Distributions

fn random_graph_23(rng: &mut ChaCha8Rng) -> SceneGraph {
    let rooms = house::room_labels();
    let objects: Vec<String> = (0..40).map(|i| format!("thing {i}")).collect();
    let mut text = String::from("spaces\tmpcat40\tnyuClass\nrooms");
    for r in &rooms {
        text.push('\t');
        text.push_str(r.as_str());
    }
    text.push('\n');
    let n_rooms = 80;
    for i in 0..n_rooms {
        let label = &rooms[rng.gen_range(0..rooms.len())];
        let x = 10 * i;
        let _ = writeln!(text, "room\tr{i:03}\t{label}\t{x}\t0\t0\t{}\t5\t3", x + 8);
    }
    for i in 0..n_rooms {
        for j in 0..rng.gen_range(1..8) {
            let o = &objects[rng.gen_range(0..objects.len())];
            let x = 10 * i + j;
            let _ = writeln!(
                text,
                "object\tr{i:03}_o{j}\tr{i:03}\t{o}\t{o}\t{x}\t1\t0\t{}\t2\t1",
                x + 1
            );
        }
    }
    let cfg = IngestConfig::default();
    let raw = parse_scene_str(&text, "random", &cfg).unwrap();
    preprocess(&raw, &cfg, "nyuClass").unwrap()
}

fn check_rows(table: &CooccurrenceTable, what: &str) -> Result<usize, String> {
    let max_h = (table.room_labels.len() as f64).ln();
    for (label, row) in &table.rows {
        let sum: f64 = row.iter().sum();
        ensure!((sum - 1.0).abs() <= ROW_SUM_TOL, "{what} row {label}: sums to {sum}");
        ensure!(row.iter().all(|&p| p > 0.0), "{what} row {label}: non-positive entry");
        let h = table.entropy[label];
        ensure!(
            (0.0..=max_h).contains(&h),
            "{what} row {label}: entropy {h} outside [0, {max_h}]"
        );
        ensure!(
            (h - oracle_entropy(row)).abs() <= 1e-12,
            "{what} row {label}: entropy {h} disagrees with direct sum"
        );
    }
    Ok(table.rows.len())
}

fn distributions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut rows = 0;
    for _ in 0..5 {
        let graph = random_graph_23(&mut rng);
        ensure!(
            graph.room_space.len() == 23,
            "room space has {} labels",
            graph.room_space.len()
        );
        for alpha in [0.1, 1.0, 2.0] {
            for mode in [CountMode::Instances, CountMode::Presence] {
                let t = count_ground_truth(&graph, "nyuClass", alpha, mode).map_err(|e| e.to_string())?;
                rows += check_rows(&t, "laplace")?;
            }
        }
        let bonuses = vec![
            PairBonus {
                object: l("thing 1"),
                room: l("bathroom"),
                bonus: 40.0,
            },
            PairBonus {
                object: l("thing 2"),
                room: l("garage"),
                bonus: -40.0,
            },
        ];
        let scorer = OfflineScorer::new(rng.gen(), bonuses);
        let objects = graph.space("nyuClass").unwrap().labels.clone();
        let t = build_proxy_table(
            &scorer,
            "nyuClass",
            &objects,
            "rooms",
            &graph.room_space.labels,
            &QueryTemplate::default(),
            4,
        )
        .map_err(|e| e.to_string())?;
        rows += check_rows(&t, "proxy")?;
    }
    for shift in [0.0, -700.0, 700.0] {
        let logits: Vec<f64> = (0..23).map(|i| shift - (i as f64) * 0.37).collect();
        let p = softmax(&logits);
        let sum: f64 = p.iter().sum();
        ensure!(
            (sum - 1.0).abs() <= ROW_SUM_TOL && p.iter().all(|&x| x > 0.0),
            "softmax at shift {shift}"
        );
    }
    let uniform = vec![1.0 / 23.0; 23];
    let h = entropy(&uniform).map_err(|e| e.to_string())?;
    let ln23 = 23f64.ln();
    ensure!(
        (h - ln23).abs() <= UNIFORM_ENTROPY_TOL,
        "uniform entropy {h} vs ln 23 {ln23}"
    );
    ensure!((h - 3.1355).abs() < 5e-5, "uniform entropy {h} is not about 3.1355");
    // an object that never co-occurs with any room gets the uniform row
    let graph = random_graph_23(&mut rng);
    let mut t = count_ground_truth(&graph, "nyuClass", 1.0, CountMode::Instances).map_err(|e| e.to_string())?;
    t.rows.insert(l("never seen"), vec![1.0 / 23.0; 23]);
    t.entropy.insert(l("never seen"), h);
    t.check().map_err(|e| e.to_string())?;
    Ok(format!(
        "{rows} rows normalized and positive; uniform H = {h:.10} (ln 23 = {ln23:.10})"
    ))
}

// ---------------------------------------------------------------------------
// Templates

fn templates() -> Outcome {
    let g = QueryTemplate::new(ArticleMode::Grammatical);
    let lit = QueryTemplate::new(ArticleMode::LiteralAnParenthesized);
    let cases: &[(&[&str], &str, &str, &str)] = &[
        (
            &["toilet"],
            "bathroom",
            "A room containing toilet is called a bathroom.",
            "A room containing toilet is called a(n) bathroom.",
        ),
        (
            &["desk", "chair"],
            "office",
            "A room containing desk and chair is called an office.",
            "A room containing desk and chair is called a(n) office.",
        ),
        (
            &["washing machine", "dryer", "sink"],
            "utility room",
            "A room containing washing machine, dryer and sink is called a utility room.",
            "A room containing washing machine, dryer and sink is called a(n) utility room.",
        ),
        (
            &["bed", "pillow", "lamp", "dresser", "nightstand"],
            "bedroom",
            "A room containing bed, pillow, lamp, dresser and nightstand is called a bedroom.",
            "A room containing bed, pillow, lamp, dresser and nightstand is called a(n) bedroom.",
        ),
        (
            &["stairs", "railing", "ping pong table", "television", "sofa"],
            "entryway",
            "A room containing stairs, railing, ping pong table, television and sofa is called an entryway.",
            "A room containing stairs, railing, ping pong table, television and sofa is called a(n) entryway.",
        ),
    ];
    for (objects, room, want_g, want_l) in cases {
        let objs = labels(objects);
        for (t, want) in [(&g, want_g), (&lit, want_l)] {
            let first = t.render_room_query(&objs, &l(room)).map_err(|e| e.to_string())?;
            ensure!(
                first == *want,
                "{} objects ({}): {first:?} != {want:?}",
                objects.len(),
                t.tag()
            );
            for _ in 0..100 {
                let again = t.render_room_query(&objs, &l(room)).map_err(|e| e.to_string())?;
                ensure!(again == first, "render is not deterministic");
            }
            // separator structure: n-2 separators and one conjunction before the last object
            let head = first.split(" is called ").next().unwrap();
            ensure!(
                head.matches(", ").count() == objects.len().saturating_sub(2),
                "separator count in {first:?}"
            );
            ensure!(
                head.matches(" and ").count() == usize::from(objects.len() > 1),
                "conjunction count in {first:?}"
            );
        }
    }
    ensure!(
        g.render_room_query(&[], &l("bathroom")).is_err(),
        "empty object list must be rejected"
    );
    ensure!(
        g.tag() == "v1-grammatical" && lit.tag() == "v1-literal",
        "template tags"
    );
    Ok(format!(
        "{} golden sentences, 100 repeated renders each",
        cases.len() * 2
    ))
}

// ---------------------------------------------------------------------------
// Scoring

fn tok(token: &str, lp: Option<f64>) -> TokenLogProb {
    TokenLogProb {
        token: token.to_string(),
        logprob: lp,
    }
}

/// Adds a constant to every sentence score; scores are first rounded to
/// multiples of 2^-20 so the shift is exact in floating point.
struct Shifted<'a> {
    inner: &'a OfflineScorer,
    shift: f64,
}

fn quantize(x: f64) -> f64 {
    (x * 1048576.0).round() / 1048576.0
}

impl SentenceScorer for Shifted<'_> {
    fn identity(&self) -> String {
        "shifted".into()
    }

    fn score(&self, sentence: &str) -> Result<SentenceScore, roomlabel::ScoreError> {
        let mut s = self.inner.score(sentence)?;
        s.total_logprob = quantize(s.total_logprob) + self.shift;
        Ok(s)
    }
}

fn scoring() -> Outcome {
    // sentence log probability against hand sums
    let fixtures: Vec<(Vec<TokenLogProb>, f64, usize)> = vec![
        (
            vec![
                tok("A", Some(-4.318)),
                tok(" room", Some(-6.127)),
                tok(" containing", Some(-3.902)),
                tok(" toilet", Some(-9.455)),
                tok(" is", Some(-1.204)),
                tok(" called", Some(-0.317)),
                tok(" a", Some(-0.511)),
                tok(" bathroom", Some(-1.776)),
                tok(".", Some(-0.893)),
            ],
            -28.503,
            9,
        ),
        (
            vec![
                tok("A", None),
                tok(" room", Some(-2.302611)),
                tok(" called", Some(-0.693185)),
                tok(".", Some(-1.609401)),
            ],
            -4.605197,
            3,
        ),
        (
            vec![tok("x", Some(-1e-7)), tok("y", Some(-123.456789))],
            -123.456789100,
            2,
        ),
    ];
    for (tokens, hand_sum, count) in fixtures {
        let s = SentenceScore::from_tokens("fixture", "test", tokens).map_err(|e| e.to_string())?;
        ensure!(
            (s.total_logprob - hand_sum).abs() <= EQ1_TOL,
            "sum {} vs hand {hand_sum}",
            s.total_logprob
        );
        ensure!(s.token_count == count, "token count {} vs {count}", s.token_count);
        let ppl = perplexity(&s).map_err(|e| e.to_string())?;
        ensure!(
            (ppl - (-hand_sum / count as f64).exp()).abs() <= 1e-9 * ppl,
            "perplexity {ppl}"
        );
    }
    // the offline scorer reports tokens whose sum is the total
    let offline = OfflineScorer::new(3, vec![]);
    let s = offline
        .score("A room containing sink, towel and toilet is called a bathroom.")
        .map_err(|e| e.to_string())?;
    let hand: f64 = s.tokens.as_ref().unwrap().iter().filter_map(|t| t.logprob).sum();
    ensure!(
        (s.total_logprob - hand).abs() <= EQ1_TOL,
        "offline total disagrees with its tokens"
    );

    // softmax shift invariance
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=23);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-80.0..-5.0)).collect();
        let c = rng.gen_range(-500.0..500.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let (a, b) = (softmax(&x), softmax(&shifted));
        let worst = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        ensure!(worst <= SOFTMAX_SHIFT_TOL, "softmax shift {c}: max difference {worst}");
    }

    // argmax shift invariance, exact
    let mut argmax_trials = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=23);
        let cands: Vec<(Label, f64)> = (0..n)
            .map(|i| (l(&format!("room{i:02}")), f64::from(rng.gen_range(-4000i32..0)) / 64.0))
            .collect();
        let c = f64::from(rng.gen_range(-1000i32..1000));
        let shifted: Vec<(Label, f64)> = cands.iter().map(|(lab, s)| (lab.clone(), s + c)).collect();
        ensure!(
            argmax_label(&cands) == argmax_label(&shifted),
            "argmax changed under shift {c}"
        );
        argmax_trials += 1;
    }
    let rooms = oracle_fixture();
    let cfg = IngestConfig::default();
    let raw = parse_scene_str(&fixture_scene_text(&rooms), "fixture", &cfg).map_err(|e| e.to_string())?;
    let graph = preprocess(&raw, &cfg, "nyuClass").map_err(|e| e.to_string())?;
    let table = count_ground_truth(&graph, "nyuClass", 1.0, CountMode::Instances).map_err(|e| e.to_string())?;
    let base = OfflineScorer::new(11, vec![]);
    let opts = InferenceOptions::default();
    let predicted = |shift: f64| -> Result<Vec<Label>, String> {
        let outcomes =
            classify_graph(&graph, &table, &Shifted { inner: &base, shift }, &opts).map_err(|e| e.to_string())?;
        Ok(outcomes
            .iter()
            .map(|o| o.prediction().unwrap().predicted_label.clone())
            .collect())
    };
    let reference = predicted(0.0)?;
    for shift in [-1000.0, -3.0, 17.0, 4096.0] {
        ensure!(
            predicted(shift)? == reference,
            "room predictions changed under shift {shift}"
        );
    }
    Ok(format!(
        "3 hand-summed fixtures; 1000 softmax shifts; {argmax_trials} argmax shifts plus 4 whole-graph shifts"
    ))
}

// ---------------------------------------------------------------------------
// Ingestion

const INGEST_FIXTURE: &str = "\
spaces\tmpcat40\tnyuClass
rooms\tbathroom\tbedroom\tkitchen\tliving room\tstaircase
room\tbath\tbathroom\t0\t0\t0\t3\t3\t3
room\tbed\tbedroom\t3\t0\t0\t8\t5\t3
room\tkit\tkitchen\t0\t3\t0\t3\t8\t3
room\tliving\tliving room\t3\t5\t0\t10\t10\t3
room\tstair\tstaircase\t20\t0\t0\t23\t3\t3
room\tporch\tporch\t10\t0\t0\t12\t4\t3
room\tyard\tyard\t12\t0\t0\t14\t4\t3
room\tbalc\tbalcony\t14\t0\t0\t16\t4\t3
room\tnowhere\tnone\t30\t0\t0\t32\t2\t3
room\tbare\tbedroom\t40\t0\t0\t44\t4\t3
object\tt1\tliving\ttoilet\ttoilet\t0.5\t0.5\t0\t1\t1\t1
object\ts1\tbath\tsink\tsink\t1.5\t0.5\t0\t2\t1\t1
object\tb1\tbed\tbed\tbed\t4\t1\t0\t6\t3\t1
object\tw1\tbed\twall\twall\t3\t0\t0\t8\t0.1\t3
object\tf1\tkit\tappliances\trefridgerator\t0.5\t4\t0\t1.5\t5\t2
object\tc1\tkit\tcabinet\tcabinet\t1.5\t4\t0\t2.5\t5\t1
object\tv1\tliving\tobject\tvase\t5\t8\t0\t5.5\t8.5\t1
object\tsf\tliving\tsofa\tsofa\t4\t6\t0\t7\t7\t1
object\tst1\tstair\tmiscellaneous\tstairs\t20.5\t0.5\t0\t21\t1\t1
object\tst2\tstair\tstairs\tstairs\t21.5\t0.5\t0\t22\t1\t1
object\trl\tstair\tmiscellaneous\trailing\t22\t2\t0\t22.5\t2.5\t1
object\tch\tporch\tchair\tchair\t10.5\t1\t0\t11\t1.5\t1
object\tpl\tyard\tplant\tplant\t12.5\t1\t0\t13\t1.5\t1
object\ttb\tbalc\ttable\ttable\t14.5\t1\t0\t15\t1.5\t1
object\tn1\tnowhere\tchair\tchair\t30.5\t0.5\t0\t31\t1\t1
object\tfl\tbare\tfloor\tfloor\t40\t0\t0\t44\t4\t0.1
object\tcl\tbare\tceiling\tceiling\t40\t0\t2.9\t44\t4\t3
";

fn ingestion() -> Outcome {
    let cfg = IngestConfig::default();
    let raw = parse_scene_str(INGEST_FIXTURE, "ingest", &cfg).map_err(|e| e.to_string())?;
    let fine = preprocess(&raw, &cfg, "nyuClass").map_err(|e| e.to_string())?;
    let obj = |g: &SceneGraph, id: &str| g.objects.iter().find(|o| o.id == id).cloned();
    let room_ids = |g: &SceneGraph| g.rooms.iter().map(|r| r.id.clone()).collect::<Vec<_>>();

    // bbox reassignment
    let t1 = obj(&fine, "t1").ok_or("toilet was dropped")?;
    ensure!(t1.room == "bath", "toilet assigned to {:?}", t1.room);
    ensure!(
        fine.room("bath").unwrap().objects == ["t1", "s1"],
        "bathroom objects {:?}",
        fine.room("bath").unwrap().objects
    );
    ensure!(
        !fine.room("living").unwrap().objects.contains(&"t1".to_string()),
        "toilet still in living room"
    );
    // spelling
    let f1 = obj(&fine, "f1").ok_or("fridge was dropped")?;
    ensure!(
        f1.label("nyuClass") == Some(&l("refrigerator")),
        "spelling fix not applied: {:?}",
        f1.label("nyuClass")
    );
    ensure!(
        !fine.space("nyuClass").unwrap().contains(&l("refridgerator")),
        "misspelling left in the space"
    );
    // stairs kept over miscellaneous
    for id in ["st1", "st2"] {
        let o = obj(&fine, id).ok_or_else(|| format!("{id} was dropped"))?;
        ensure!(
            o.label("mpcat40") == Some(&l("stairs")),
            "{id} coarse label {:?}",
            o.label("mpcat40")
        );
    }
    ensure!(
        obj(&fine, "rl").is_none(),
        "railing mapped only to miscellaneous must be dropped"
    );
    // rejected categories
    for id in ["w1", "fl", "cl"] {
        ensure!(obj(&fine, id).is_none(), "{id} survived filtering");
    }
    // "object" category retention
    ensure!(
        obj(&fine, "v1").is_some(),
        "vase (category object) dropped in the fine space"
    );
    // outdoor, none and empty rooms
    ensure!(
        room_ids(&fine) == ["bath", "bed", "kit", "living", "stair"],
        "rooms after filtering: {:?}",
        room_ids(&fine)
    );
    for id in ["ch", "pl", "tb", "n1"] {
        ensure!(obj(&fine, id).is_none(), "object {id} of a removed room survived");
    }
    ensure!(
        fine.space("nyuClass").unwrap().labels
            == labels(&[
                "bed",
                "cabinet",
                "refrigerator",
                "sink",
                "sofa",
                "stairs",
                "toilet",
                "vase"
            ]),
        "fine space {:?}",
        fine.space("nyuClass").unwrap().labels
    );
    ensure!(fine.validate().is_empty(), "validate: {:?}", fine.validate());

    // coarse run rejects the "object" category
    let coarse = preprocess(&raw, &cfg, "mpcat40").map_err(|e| e.to_string())?;
    ensure!(obj(&coarse, "v1").is_none(), "vase kept in the coarse space");
    ensure!(
        coarse.space("mpcat40").unwrap().labels
            == labels(&["appliances", "bed", "cabinet", "sink", "sofa", "stairs", "toilet"]),
        "coarse space {:?}",
        coarse.space("mpcat40").unwrap().labels
    );

    // fixed point, in memory and through the file format
    for (g, space) in [(&fine, "nyuClass"), (&coarse, "mpcat40")] {
        let again = preprocess(g, &cfg, space).map_err(|e| e.to_string())?;
        ensure!(&again == g, "{space}: preprocessing its own output changed the graph");
        let reparsed = parse_scene_str(&write_scene(g), "roundtrip", &cfg).map_err(|e| e.to_string())?;
        let again = preprocess(&reparsed, &cfg, space).map_err(|e| e.to_string())?;
        ensure!(
            write_scene(&again) == write_scene(g),
            "{space}: written output is not a fixed point"
        );
    }
    Ok(format!(
        "fine: {} rooms / {} objects, coarse: {} rooms / {} objects; fixed point holds",
        fine.rooms.len(),
        fine.objects.len(),
        coarse.rooms.len(),
        coarse.objects.len()
    ))
}

// ---------------------------------------------------------------------------
// Evaluation

fn condition(provenance: Provenance, space: &str) -> TrialCondition {
    TrialCondition {
        object_space: space.into(),
        provenance,
        alpha: Some(1.0),
        k: 3,
        template: "v1-grammatical".into(),
        backend: "fixture".into(),
    }
}

fn outcome(id: usize, gt: &str, pred: &str, cond: &TrialCondition) -> RoomOutcome {
    RoomOutcome::Ok(RoomPrediction {
        room_id: format!("r{id:04}"),
        gt_label: l(gt),
        selected_objects: vec![l("thing")],
        candidates: vec![Candidate {
            label: l(pred),
            sentence: String::new(),
            total_logprob: -1.0,
        }],
        predicted_label: l(pred),
        condition: cond.clone(),
    })
}

const ROOM_HISTOGRAM: [(&str, usize); 23] = [
    ("bar", 3),
    ("bathroom", 365),
    ("bedroom", 251),
    ("classroom", 2),
    ("closet", 99),
    ("conference auditorium", 16),
    ("dining room", 74),
    ("family room", 61),
    ("game room", 17),
    ("garage", 14),
    ("gym", 16),
    ("hallway", 326),
    ("kitchen", 78),
    ("laundry room", 35),
    ("library", 1),
    ("living room", 71),
    ("lobby", 62),
    ("lounge", 64),
    ("office", 98),
    ("spa", 44),
    ("staircase", 152),
    ("television room", 13),
    ("utility room", 16),
];

fn evaluation() -> Outcome {
    let rooms = labels(&["bathroom", "bedroom", "kitchen"]);
    let cond = condition(Provenance::GroundTruth, "nyuClass");
    let pairs = [
        ("bathroom", "bathroom"),
        ("bathroom", "bathroom"),
        ("bathroom", "bathroom"),
        ("bathroom", "bedroom"),
        ("bedroom", "bedroom"),
        ("bedroom", "kitchen"),
        ("kitchen", "kitchen"),
        ("kitchen", "kitchen"),
        ("kitchen", "bathroom"),
    ];
    let mut outcomes: Vec<RoomOutcome> = pairs
        .iter()
        .enumerate()
        .map(|(i, (g, p))| outcome(i, g, p, &cond))
        .collect();
    outcomes.push(RoomOutcome::Failed(FailedRoom {
        room_id: "r9999".into(),
        gt_label: l("bedroom"),
        error: "timeout".into(),
    }));
    let r = evaluate(&outcomes, &rooms).map_err(|e| e.to_string())?;
    ensure!(
        r.evaluated == 9 && r.correct == 6,
        "counts {}/{}",
        r.correct,
        r.evaluated
    );
    ensure!(r.overall_accuracy == 6.0 / 9.0, "overall {}", r.overall_accuracy);
    let per: Vec<(usize, usize, Option<f64>)> = r.per_label.iter().map(|a| (a.correct, a.total, a.accuracy)).collect();
    ensure!(
        per == [(3, 4, Some(0.75)), (1, 2, Some(0.5)), (2, 3, Some(2.0 / 3.0))],
        "per-label {per:?}"
    );
    ensure!(
        r.confusion == [[3, 1, 0], [0, 1, 1], [1, 0, 2]],
        "confusion {:?}",
        r.confusion
    );
    ensure!(
        r.baselines.random == 1.0 / 3.0,
        "random baseline {}",
        r.baselines.random
    );
    ensure!(
        r.baselines.majority == 4.0 / 9.0 && r.baselines.majority_label == l("bathroom"),
        "majority baseline {} ({})",
        r.baselines.majority,
        r.baselines.majority_label
    );
    ensure!(r.failed_rooms == ["r9999"], "failed rooms {:?}", r.failed_rooms);
    let weighted: f64 = r
        .per_label
        .iter()
        .map(|a| a.accuracy.unwrap_or(0.0) * a.total as f64)
        .sum::<f64>()
        / r.evaluated as f64;
    ensure!(
        (weighted - r.overall_accuracy).abs() <= WEIGHTED_MEAN_TOL,
        "weighted mean {weighted}"
    );

    // baselines on the reference room-label histogram
    let room_space: Vec<Label> = house::room_labels();
    ensure!(
        room_space == ROOM_HISTOGRAM.iter().map(|(n, _)| l(n)).collect::<Vec<_>>(),
        "converter room labels differ from the reference histogram"
    );
    let mut outcomes = Vec::new();
    for (name, count) in ROOM_HISTOGRAM {
        for _ in 0..count {
            outcomes.push(outcome(outcomes.len(), name, "hallway", &cond));
        }
    }
    let big = evaluate(&outcomes, &room_space).map_err(|e| e.to_string())?;
    ensure!(big.evaluated == 1878, "histogram has {} rooms", big.evaluated);
    ensure!(
        big.baselines.majority == 365.0 / 1878.0 && big.baselines.majority_label == l("bathroom"),
        "majority {}",
        big.baselines.majority
    );
    ensure!(
        (big.baselines.majority - 0.1943).abs() < 1e-4,
        "majority {}",
        big.baselines.majority
    );
    ensure!(big.baselines.random == 1.0 / 23.0, "random {}", big.baselines.random);
    ensure!(
        (big.baselines.random - 0.0435).abs() < 1e-4,
        "random {}",
        big.baselines.random
    );

    let other = evaluate(
        &pairs
            .iter()
            .enumerate()
            .map(|(i, (g, _))| outcome(i, g, g, &condition(Provenance::Proxy, "mpcat40")))
            .collect::<Vec<_>>(),
        &rooms,
    )
    .map_err(|e| e.to_string())?;
    let table = compare_conditions(&[r.clone(), other]).map_err(|e| e.to_string())?;
    ensure!(
        table.get(Provenance::GroundTruth, "nyuClass").map(|c| c.accuracy) == Some(6.0 / 9.0)
            && table.get(Provenance::Proxy, "mpcat40").map(|c| c.accuracy) == Some(1.0),
        "condition table {table:?}"
    );
    Ok(format!(
        "hand-built set exact; majority 365/1878 = {:.4}%, random 1/23 = {:.4}%",
        100.0 * big.baselines.majority,
        100.0 * big.baselines.random
    ))
}

// ---------------------------------------------------------------------------
// Full reproduction (optional)

const REFERENCE_ACCURACY: [(Provenance, &str, f64); 4] = [
    (Provenance::GroundTruth, "nyuClass", 52.41),
    (Provenance::GroundTruth, "mpcat40", 49.36),
    (Provenance::Proxy, "nyuClass", 28.14),
    (Provenance::Proxy, "mpcat40", 27.00),
];

fn reproduction(scene: PathBuf) -> Outcome {
    use roomlabel::scoring::{RemoteConfig, RemoteScorer};
    let cfg = IngestConfig::default();
    let raw = roomlabel::ingest::parse_scene_file(&scene, &cfg).map_err(|e| e.to_string())?;
    let mut remote = RemoteConfig::from_env().map_err(|e| e.to_string())?;
    remote.max_inflight = 8;
    let inner = RemoteScorer::new(remote).map_err(|e| e.to_string())?;
    let cache_dir =
        std::env::var_os("ROOMLABEL_REPRO_CACHE").map_or_else(|| scene.with_extension("cache"), PathBuf::from);
    let scorer = CachedScorer::open(inner, &cache_dir).map_err(|e| e.to_string())?;
    let template = QueryTemplate::default();
    let options = InferenceOptions {
        max_inflight: 8,
        ..InferenceOptions::default()
    };
    let mut lines = Vec::new();
    for (provenance, space, target) in REFERENCE_ACCURACY {
        let graph = preprocess(&raw, &cfg, space).map_err(|e| e.to_string())?;
        ensure!(
            graph.rooms.len() == REPRO_ROOMS,
            "{space}: {} rooms after ingest",
            graph.rooms.len()
        );
        let table = match provenance {
            Provenance::GroundTruth => count_ground_truth(&graph, space, 1.0, CountMode::Instances),
            Provenance::Proxy => {
                let objects = graph.space(space).unwrap().labels.clone();
                build_proxy_table(
                    &scorer,
                    space,
                    &objects,
                    "rooms",
                    &graph.room_space.labels,
                    &template,
                    8,
                )
            }
        }
        .map_err(|e| e.to_string())?;
        let outcomes = classify_graph(&graph, &table, &scorer, &options).map_err(|e| e.to_string())?;
        let report = evaluate(&outcomes, &graph.room_space.labels).map_err(|e| e.to_string())?;
        let got = 100.0 * report.overall_accuracy;
        lines.push(format!("{provenance}/{space} {got:.2}% (reference {target:.2}%)"));
        ensure!((got - target).abs() <= REPRO_TOL_PP, "{}", lines.join("; "));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------------------

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let t = start.elapsed();
    match result {
        Ok(detail) => {
            println!("PASS  {name}: {detail} [{t:.2?}]");
            true
        }
        Err(why) => {
            println!("FAIL  {name}: {why} [{t:.2?}]");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= run("oracle equivalence", oracle_equivalence);
    ok &= run("entropy/selection", entropy_selection);
    ok &= run("distributions", distributions);
    ok &= run("templates", templates);
    ok &= run("scoring", scoring);
    ok &= run("ingestion", ingestion);
    ok &= run("evaluation", evaluation);
    match (
        std::env::var_os("ROOMLABEL_REPRO_SCENE"),
        std::env::var_os("ROOMLABEL_ENDPOINT"),
    ) {
        (Some(scene), Some(_)) => ok &= run("full reproduction", || reproduction(PathBuf::from(scene))),
        _ => println!("SKIP  full reproduction: set ROOMLABEL_REPRO_SCENE and ROOMLABEL_ENDPOINT (see README)"),
    }
    if !ok {
        std::process::exit(1);
    }
}
