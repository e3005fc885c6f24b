//! Object-to-room conditional distributions and entropy-based object
//! selection.
//!
//! A [`CooccurrenceTable`] maps every object label to a distribution over
//! room labels, either counted from annotated scenes with additive
//! smoothing or estimated by a softmax over the scores of single-object
//! query sentences. Objects whose distribution is concentrated on few rooms
//! have low entropy and are the most informative to mention in a query.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ScoreError};
use crate::querygen::QueryTemplate;
use crate::scene::{Label, SceneGraph};
use crate::scoring::SentenceScorer;

/// Tolerance on the sum of a probability vector.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Proxy,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::GroundTruth => "ground_truth",
            Provenance::Proxy => "proxy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ground_truth" | "gt" => Some(Provenance::GroundTruth),
            "proxy" => Some(Provenance::Proxy),
            _ => None,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How ground-truth co-occurrences are tallied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// One count per object instance.
    #[default]
    Instances,
    /// At most one count per (object label, room).
    Presence,
}

impl CountMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CountMode::Instances => "instances",
            CountMode::Presence => "presence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    pub object_space: String,
    pub room_space: String,
    pub room_labels: Vec<Label>,
    pub rows: BTreeMap<Label, Vec<f64>>,
    pub entropy: BTreeMap<Label, f64>,
    pub provenance: Provenance,
    pub smoothing_alpha: Option<f64>,
    pub count_mode: Option<CountMode>,
    pub scorer: Option<String>,
    pub template: Option<String>,
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::param("entropy of a vector with negative or non-finite entries"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::param(format!("entropy of a vector summing to {sum}")));
    }
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    Ok(h.max(0.0))
}

/// Softmax via log-sum-exp.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::param(format!(
            "smoothing alpha must be a finite value >= 0, got {alpha}"
        )));
    }
    Ok(())
}

/// Counts how often each object label of `object_space` appears in rooms of
/// each label and normalizes over rooms with additive smoothing:
/// `(count(o, r) + alpha) / (count(o) + alpha * |rooms|)`.
pub fn count_ground_truth(
    graph: &SceneGraph,
    object_space: &str,
    alpha: f64,
    mode: CountMode,
) -> Result<CooccurrenceTable> {
    check_alpha(alpha)?;
    let space = graph
        .space(object_space)
        .ok_or_else(|| Error::schema(format!("graph has no label space named {object_space:?}")))?;
    let rooms = &graph.room_space.labels;
    let n = rooms.len();
    if n == 0 {
        return Err(Error::schema("room label space is empty"));
    }

    let mut counts: BTreeMap<&Label, Vec<f64>> = BTreeMap::new();
    for label in &space.labels {
        counts.insert(label, vec![0.0; n]);
    }
    let index = graph.object_index();
    for room in &graph.rooms {
        let Some(r) = graph.room_space.index_of(&room.label) else {
            continue;
        };
        let mut seen: BTreeSet<&Label> = BTreeSet::new();
        for oid in &room.objects {
            let Some(label) = index.get(oid.as_str()).and_then(|o| o.label(object_space)) else {
                continue;
            };
            if mode == CountMode::Presence && !seen.insert(label) {
                continue;
            }
            if let Some(row) = counts.get_mut(label) {
                row[r] += 1.0;
            }
        }
    }

    let mut rows = BTreeMap::new();
    let mut entropies = BTreeMap::new();
    for (label, c) in counts {
        let total: f64 = c.iter().sum();
        let denom = total + alpha * n as f64;
        if denom == 0.0 {
            return Err(Error::param(format!(
                "object label {:?} was never observed and alpha is 0",
                label.as_str()
            )));
        }
        let row: Vec<f64> = c.iter().map(|&x| (x + alpha) / denom).collect();
        entropies.insert(label.clone(), entropy(&row)?);
        rows.insert(label.clone(), row);
    }

    Ok(CooccurrenceTable {
        object_space: object_space.to_string(),
        room_space: graph.room_space.name.clone(),
        room_labels: rooms.clone(),
        rows,
        entropy: entropies,
        provenance: Provenance::GroundTruth,
        smoothing_alpha: Some(alpha),
        count_mode: Some(mode),
        scorer: None,
        template: None,
    })
}

/// Estimates `p(room | object)` as the softmax over rooms of the log
/// probabilities of `A room containing {object} is called a(n) {room}.`
pub fn proxy_conditional(
    scorer: &dyn SentenceScorer,
    object: &Label,
    rooms: &[Label],
    template: &QueryTemplate,
) -> std::result::Result<Vec<f64>, ScoreError> {
    let logps = rooms
        .iter()
        .map(|room| {
            let sentence = template.render_proxy_query(object, room);
            scorer.score(&sentence).map(|s| s.total_logprob)
        })
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    Ok(softmax(&logps))
}

/// Builds a proxy table over every `(object label, room label)` pair. Up to
/// `max_inflight` objects are scored concurrently; rows are assembled by
/// key.
pub fn build_proxy_table(
    scorer: &dyn SentenceScorer,
    object_space: &str,
    objects: &[Label],
    room_space: &str,
    rooms: &[Label],
    template: &QueryTemplate,
    max_inflight: usize,
) -> Result<CooccurrenceTable> {
    if rooms.is_empty() {
        return Err(Error::schema("room label space is empty"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_inflight.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    let distinct: BTreeSet<&Label> = objects.iter().collect();
    let distinct: Vec<&Label> = distinct.into_iter().collect();
    let results: Vec<(Label, std::result::Result<Vec<f64>, ScoreError>)> = pool.install(|| {
        distinct
            .par_iter()
            .map(|&o| (o.clone(), proxy_conditional(scorer, o, rooms, template)))
            .collect()
    });

    let mut rows = BTreeMap::new();
    let mut entropies = BTreeMap::new();
    for (label, row) in results {
        let row = row?;
        entropies.insert(label.clone(), entropy(&row)?);
        rows.insert(label, row);
    }
    Ok(CooccurrenceTable {
        object_space: object_space.to_string(),
        room_space: room_space.to_string(),
        room_labels: rooms.to_vec(),
        rows,
        entropy: entropies,
        provenance: Provenance::Proxy,
        smoothing_alpha: None,
        count_mode: None,
        scorer: Some(scorer.identity()),
        template: Some(template.tag()),
    })
}

/// Returns up to `k` distinct labels among `present`, lowest entropy first,
/// ties broken by label. Repeated instances count once.
pub fn select_informative<'a>(
    present: impl IntoIterator<Item = &'a Label>,
    table: &CooccurrenceTable,
    k: usize,
) -> Result<Vec<Label>> {
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    let distinct: BTreeSet<&Label> = present.into_iter().collect();
    let mut ranked = Vec::with_capacity(distinct.len());
    for label in distinct {
        let h = table.entropy.get(label).ok_or_else(|| {
            Error::schema(format!(
                "object label {:?} is missing from the co-occurrence table",
                label.as_str()
            ))
        })?;
        ranked.push((*h, label));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, l)| l.clone()).collect())
}

impl CooccurrenceTable {
    pub fn row(&self, label: &Label) -> Option<&[f64]> {
        self.rows.get(label).map(Vec::as_slice)
    }

    /// Checks normalization, positivity and entropy bounds of every row.
    pub fn check(&self) -> Result<()> {
        let n = self.room_labels.len();
        let max_h = (n as f64).ln();
        let zeros_allowed = self.smoothing_alpha == Some(0.0);
        if self.rows.len() != self.entropy.len() {
            return Err(Error::schema("rows and entropies cover different labels"));
        }
        for (label, row) in &self.rows {
            let bad = |what: &str| Error::schema(format!("row {:?}: {what}", label.as_str()));
            if row.len() != n {
                return Err(bad("wrong number of entries"));
            }
            if row
                .iter()
                .any(|&p| !(p <= 1.0 && (p > 0.0 || (zeros_allowed && p == 0.0))))
            {
                return Err(bad("entries must lie in (0, 1]"));
            }
            let h = entropy(row).map_err(|e| bad(&e.to_string()))?;
            let stored = *self.entropy.get(label).ok_or_else(|| bad("missing entropy"))?;
            if (h - stored).abs() > NORMALIZATION_TOL {
                return Err(bad("stored entropy disagrees with the row"));
            }
            if stored < 0.0 || stored > max_h + NORMALIZATION_TOL {
                return Err(bad("entropy out of range"));
            }
        }
        Ok(())
    }

    /// Text serialization. Probabilities use 17 significant digits, which
    /// round-trips every `f64` exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# roomlabel co-occurrence table\n");
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".to_string());
        let meta = [
            ("provenance", self.provenance.as_str().to_string()),
            ("object_space", self.object_space.clone()),
            ("room_space", self.room_space.clone()),
            ("alpha", opt(self.smoothing_alpha.map(|a| format!("{a:?}")))),
            ("count_mode", opt(self.count_mode.map(|m| m.as_str().to_string()))),
            ("scorer", opt(self.scorer.clone())),
            ("template", opt(self.template.clone())),
        ];
        for (k, v) in meta {
            let _ = writeln!(out, "#meta\t{k}\t{v}");
        }
        out.push_str("object");
        for r in &self.room_labels {
            out.push('\t');
            out.push_str(r.as_str());
        }
        out.push_str("\tentropy\n");
        for (label, row) in &self.rows {
            out.push_str(label.as_str());
            for p in row {
                let _ = write!(out, "\t{p:.16e}");
            }
            let _ = writeln!(out, "\t{:.16e}", self.entropy[label]);
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut meta: BTreeMap<String, String> = BTreeMap::new();
        let mut header: Option<Vec<Label>> = None;
        let mut rows = BTreeMap::new();
        let mut entropies = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if let Some(rest) = line.strip_prefix("#meta\t") {
                let (k, v) = rest
                    .split_once('\t')
                    .ok_or_else(|| err(ln, "metadata line needs a key and a value".into()))?;
                meta.insert(k.to_string(), v.to_string());
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            match &header {
                None => {
                    if cols.len() < 3 || cols[0] != "object" || cols[cols.len() - 1] != "entropy" {
                        return Err(err(ln, "expected header `object <rooms...> entropy`".into()));
                    }
                    header = Some(cols[1..cols.len() - 1].iter().map(|s| Label::new(s)).collect());
                }
                Some(rooms) => {
                    if cols.len() != rooms.len() + 2 {
                        return Err(err(
                            ln,
                            format!("expected {} columns, found {}", rooms.len() + 2, cols.len()),
                        ));
                    }
                    let nums = cols[1..]
                        .iter()
                        .map(|s| s.parse::<f64>().map_err(|_| err(ln, format!("invalid number {s:?}"))))
                        .collect::<Result<Vec<f64>>>()?;
                    let label = Label::new(cols[0]);
                    let (row, h) = nums.split_at(rooms.len());
                    if rows.insert(label.clone(), row.to_vec()).is_some() {
                        return Err(err(ln, format!("duplicate row {:?}", label.as_str())));
                    }
                    entropies.insert(label, h[0]);
                }
            }
        }
        let room_labels = header.ok_or_else(|| err(0, "missing header row".into()))?;
        let get = |k: &str| -> Result<Option<String>> {
            match meta.get(k).map(String::as_str) {
                None => Err(Error::schema(format!("{source_name}: missing metadata {k:?}"))),
                Some("-") => Ok(None),
                Some(v) => Ok(Some(v.to_string())),
            }
        };
        let provenance = get("provenance")?
            .as_deref()
            .and_then(Provenance::parse)
            .ok_or_else(|| Error::schema(format!("{source_name}: unknown provenance")))?;
        let smoothing_alpha = get("alpha")?
            .map(|a| {
                a.parse::<f64>()
                    .map_err(|_| Error::schema(format!("{source_name}: bad alpha {a:?}")))
            })
            .transpose()?;
        let count_mode = match get("count_mode")?.as_deref() {
            None => None,
            Some("instances") => Some(CountMode::Instances),
            Some("presence") => Some(CountMode::Presence),
            Some(other) => return Err(Error::schema(format!("{source_name}: unknown count mode {other:?}"))),
        };
        let table = CooccurrenceTable {
            object_space: get("object_space")?.unwrap_or_default(),
            room_space: get("room_space")?.unwrap_or_default(),
            room_labels,
            rows,
            entropy: entropies,
            provenance,
            smoothing_alpha,
            count_mode,
            scorer: get("scorer")?,
            template: get("template")?,
        };
        table.check()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}
