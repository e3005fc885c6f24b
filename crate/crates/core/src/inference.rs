//! Room classification: pick the most informative objects, render one
//! candidate sentence per room label, score them all, keep the best.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooccurrence::{select_informative, CooccurrenceTable, Provenance};
use crate::error::{Error, Result};
use crate::querygen::QueryTemplate;
use crate::scene::{Label, RoomNode, SceneGraph};
use crate::scoring::SentenceScorer;

pub const DEFAULT_K: usize = 3;
pub const PREDICTIONS_FORMAT: &str = "roomlabel-predictions-v1";

/// Everything that identifies one experimental condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialCondition {
    pub object_space: String,
    pub provenance: Provenance,
    pub alpha: Option<f64>,
    pub k: usize,
    pub template: String,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: Label,
    pub sentence: String,
    pub total_logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomPrediction {
    pub room_id: String,
    pub gt_label: Label,
    pub selected_objects: Vec<Label>,
    pub candidates: Vec<Candidate>,
    pub predicted_label: Label,
    pub condition: TrialCondition,
}

impl RoomPrediction {
    pub fn is_correct(&self) -> bool {
        self.predicted_label == self.gt_label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRoom {
    pub room_id: String,
    pub gt_label: Label,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RoomOutcome {
    Ok(RoomPrediction),
    Failed(FailedRoom),
}

impl RoomOutcome {
    pub fn room_id(&self) -> &str {
        match self {
            RoomOutcome::Ok(p) => &p.room_id,
            RoomOutcome::Failed(f) => &f.room_id,
        }
    }

    pub fn prediction(&self) -> Option<&RoomPrediction> {
        match self {
            RoomOutcome::Ok(p) => Some(p),
            RoomOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    pub k: usize,
    pub template: QueryTemplate,
    /// Rank by mean per-token log probability instead of the total.
    pub normalize_by_length: bool,
    pub max_inflight: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            k: DEFAULT_K,
            template: QueryTemplate::default(),
            normalize_by_length: false,
            max_inflight: 1,
        }
    }
}

impl InferenceOptions {
    pub fn condition(&self, table: &CooccurrenceTable, scorer: &dyn SentenceScorer) -> TrialCondition {
        let mut template = self.template.tag();
        if self.normalize_by_length {
            template.push_str("+lennorm");
        }
        TrialCondition {
            object_space: table.object_space.clone(),
            provenance: table.provenance,
            alpha: table.smoothing_alpha,
            k: self.k,
            template,
            backend: scorer.identity(),
        }
    }
}

/// Index of the highest score; equal scores go to the smaller label.
pub fn argmax_label(candidates: &[(Label, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (label, score)) in candidates.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let (bl, bs) = &candidates[b];
                if score > bs || (score == bs && label < bl) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Classifies one room against the room labels of `table`.
pub fn classify_room(
    graph: &SceneGraph,
    room: &RoomNode,
    table: &CooccurrenceTable,
    scorer: &dyn SentenceScorer,
    options: &InferenceOptions,
) -> Result<RoomPrediction> {
    let present = graph.room_object_labels(room, &table.object_space);
    if present.is_empty() {
        return Err(Error::param(format!(
            "room {:?} has no objects labelled in {:?}",
            room.id, table.object_space
        )));
    }
    if table.room_labels.is_empty() {
        return Err(Error::schema("co-occurrence table has no room labels"));
    }
    let selected = select_informative(present, table, options.k)?;
    let sentences = table
        .room_labels
        .iter()
        .map(|r| options.template.render_room_query(&selected, r))
        .collect::<Result<Vec<String>>>()?;

    let mut candidates = Vec::with_capacity(sentences.len());
    let mut ranked = Vec::with_capacity(sentences.len());
    for ((label, sentence), scored) in table
        .room_labels
        .iter()
        .zip(&sentences)
        .zip(scorer.score_batch(&sentences))
    {
        let scored = scored?;
        let rank_value = if options.normalize_by_length {
            scored.total_logprob / scored.token_count as f64
        } else {
            scored.total_logprob
        };
        ranked.push((label.clone(), rank_value));
        candidates.push(Candidate {
            label: label.clone(),
            sentence: sentence.clone(),
            total_logprob: scored.total_logprob,
        });
    }
    let best = argmax_label(&ranked).expect("at least one candidate");

    Ok(RoomPrediction {
        room_id: room.id.clone(),
        gt_label: room.label.clone(),
        selected_objects: selected,
        predicted_label: candidates[best].label.clone(),
        candidates,
        condition: options.condition(table, scorer),
    })
}

/// Classifies every room, in room-id order. Rooms whose scoring fails are
/// returned as [`RoomOutcome::Failed`].
pub fn classify_graph(
    graph: &SceneGraph,
    table: &CooccurrenceTable,
    scorer: &dyn SentenceScorer,
    options: &InferenceOptions,
) -> Result<Vec<RoomOutcome>> {
    if table.room_labels != graph.room_space.labels {
        return Err(Error::schema(
            "co-occurrence table room labels differ from the graph's room label space",
        ));
    }
    if options.k == 0 {
        return Err(Error::param("k must be positive"));
    }
    let mut rooms: Vec<&RoomNode> = graph.rooms.iter().collect();
    rooms.sort_by(|a, b| a.id.cmp(&b.id));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.max_inflight.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    let outcomes = pool.install(|| {
        rooms
            .par_iter()
            .map(|room| match classify_room(graph, room, table, scorer, options) {
                Ok(p) => RoomOutcome::Ok(p),
                Err(e) => {
                    log::warn!("room {} failed: {e}", room.id);
                    RoomOutcome::Failed(FailedRoom {
                        room_id: room.id.clone(),
                        gt_label: room.label.clone(),
                        error: e.to_string(),
                    })
                }
            })
            .collect()
    });
    Ok(outcomes)
}

pub fn failed_rooms(outcomes: &[RoomOutcome]) -> Vec<String> {
    outcomes
        .iter()
        .filter(|o| matches!(o, RoomOutcome::Failed(_)))
        .map(|o| o.room_id().to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionHeader {
    pub format: String,
    pub manifest: Option<String>,
    pub room_space: String,
    pub room_labels: Vec<Label>,
    pub condition: TrialCondition,
}

/// JSON-lines prediction file: one header line, then one line per room.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub header: PredictionHeader,
    pub outcomes: Vec<RoomOutcome>,
}

impl PredictionFile {
    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        let line = serde_json::to_string(&self.header).expect("header serializes");
        let _ = writeln!(out, "{line}");
        for o in &self.outcomes {
            let line = serde_json::to_string(o).expect("outcome serializes");
            let _ = writeln!(out, "{line}");
        }
        String::from_utf8(out).expect("utf-8")
    }

    pub fn from_jsonl(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let (_, first) = lines.next().ok_or_else(|| err(1, "missing header line".into()))?;
        let header: PredictionHeader = serde_json::from_str(first).map_err(|e| err(1, format!("bad header: {e}")))?;
        if header.format != PREDICTIONS_FORMAT {
            return Err(err(1, format!("unsupported format {:?}", header.format)));
        }
        let outcomes = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(i + 1, e.to_string())))
            .collect::<Result<Vec<RoomOutcome>>>()?;
        Ok(PredictionFile { header, outcomes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, &path.display().to_string())
    }
}
