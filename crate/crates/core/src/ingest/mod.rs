//! Scene-file ingestion and preprocessing.
//!
//! The pipeline order is fixed: parse, bounding-box reassignment, spelling
//! fixes, label-space conflict resolution, filtering. [`preprocess`] runs
//! every stage after parsing and validates the result.

pub mod format;
pub mod house;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{Label, LabelSpace, SceneGraph};

pub use format::{parse_scene_str, write_scene, ROOM_SPACE_NAME};

/// Label given to objects with no category.
pub const UNLABELED: &str = "unlabeled";

/// Coarse category whose members are kept when inferring over the
/// fine-grained space.
pub const CATCH_ALL_CATEGORY: &str = "object";

/// Spelling-fix table shipped with the crate (`data/spelling_fixes.tsv`).
pub const DEFAULT_SPELLING_FIXES: &str = include_str!("../../data/spelling_fixes.tsv");

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub outdoor_room_labels: BTreeSet<Label>,
    pub removed_room_labels: BTreeSet<Label>,
    pub rejected_object_labels: BTreeSet<Label>,
    pub spelling_fixes: BTreeMap<Label, Label>,
    pub keep_object_category_for_secondary_space: bool,
}

fn labels(items: &[&str]) -> BTreeSet<Label> {
    items.iter().map(|s| Label::new(s)).collect()
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            outdoor_room_labels: labels(&["yard", "balcony", "porch"]),
            removed_room_labels: labels(&["none"]),
            rejected_object_labels: labels(&["ceiling", "wall", "floor", "miscellaneous", "object", UNLABELED]),
            spelling_fixes: parse_spelling_fixes(DEFAULT_SPELLING_FIXES, "builtin")
                .expect("builtin spelling table is well formed"),
            keep_object_category_for_secondary_space: true,
        }
    }
}

/// Reads a two-column (old TAB new) spelling table. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_spelling_fixes(text: &str, source_name: &str) -> Result<BTreeMap<Label, Label>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(err(format!("expected 2 tab-separated columns, found {}", cols.len())));
        }
        let (from, to) = (Label::new(cols[0]), Label::new(cols[1]));
        if from.is_empty() || to.is_empty() {
            return Err(err("empty label".into()));
        }
        if out.insert(from.clone(), to).is_some() {
            return Err(err(format!("{:?} listed twice", from.as_str())));
        }
    }
    Ok(out)
}

pub fn load_spelling_fixes(path: &Path) -> Result<BTreeMap<Label, Label>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spelling_fixes(&text, &path.display().to_string())
}

pub fn parse_scene_file(path: &Path, config: &IngestConfig) -> Result<SceneGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene_str(&text, &path.display().to_string(), config)
}

/// Rebuilds every room's object list from the object-side assignments,
/// keeping graph object order.
fn rebuild_containment(graph: &mut SceneGraph) {
    let mut lists: HashMap<String, Vec<String>> = HashMap::new();
    for o in &graph.objects {
        lists.entry(o.room.clone()).or_default().push(o.id.clone());
    }
    for room in &mut graph.rooms {
        room.objects = lists.remove(&room.id).unwrap_or_default();
    }
}

fn rebuild_object_spaces(graph: &mut SceneGraph) {
    for space in &mut graph.object_spaces {
        let observed: BTreeSet<Label> = graph
            .objects
            .iter()
            .filter_map(|o| o.label(&space.name).cloned())
            .collect();
        space.labels = observed.into_iter().collect();
    }
}

/// Moves each object whose bbox center lies outside its assigned room's box
/// into the first room (by lexicographic id) whose box contains the center.
/// Objects contained by no room keep their assignment.
pub fn reassign_objects_by_bbox(graph: &SceneGraph) -> SceneGraph {
    let mut out = graph.clone();
    let mut by_id: Vec<_> = graph.rooms.iter().collect();
    by_id.sort_by(|a, b| a.id.cmp(&b.id));

    let mut moved = 0usize;
    for object in &mut out.objects {
        let center = object.bbox.center();
        let inside_own = graph.room(&object.room).is_some_and(|r| r.bbox.contains_point(center));
        if inside_own {
            continue;
        }
        if let Some(target) = by_id.iter().find(|r| r.bbox.contains_point(center)) {
            log::debug!("reassigning {} from {} to {}", object.id, object.room, target.id);
            object.room = target.id.clone();
            moved += 1;
        }
    }
    if moved > 0 {
        rebuild_containment(&mut out);
    }
    out
}

/// Replaces every object label (in every space) that matches a fix key.
pub fn apply_spelling_fixes(graph: &SceneGraph, fixes: &BTreeMap<Label, Label>) -> SceneGraph {
    let mut out = graph.clone();
    if fixes.is_empty() {
        return out;
    }
    for object in &mut out.objects {
        for label in object.labels.values_mut() {
            if let Some(fixed) = fixes.get(label) {
                *label = fixed.clone();
            }
        }
    }
    rebuild_object_spaces(&mut out);
    out
}

/// Makes the fine-to-coarse mapping single valued.
///
/// A fine label seen with several coarse labels is mapped to the first
/// non-rejected coarse label in graph object order (or the first one seen
/// when all are rejected). Fine labels spelled like a rejected coarse label
/// (other than [`CATCH_ALL_CATEGORY`]) are added to the fine space's
/// rejection list.
pub fn resolve_label_space_conflicts(graph: &SceneGraph, primary: &str, secondary: &str) -> SceneGraph {
    let mut out = graph.clone();
    let Some(primary_space) = graph.space(primary) else {
        return out;
    };
    let rejected = &primary_space.rejected;

    let mut seen: BTreeMap<&Label, Vec<&Label>> = BTreeMap::new();
    for o in &graph.objects {
        if let (Some(fine), Some(coarse)) = (o.label(secondary), o.label(primary)) {
            let list = seen.entry(fine).or_default();
            if !list.contains(&coarse) {
                list.push(coarse);
            }
        }
    }
    let chosen: BTreeMap<Label, Label> = seen
        .iter()
        .filter(|(_, coarse)| coarse.len() > 1)
        .map(|(fine, coarse)| {
            let pick = coarse.iter().find(|c| !rejected.contains(**c)).unwrap_or(&coarse[0]);
            ((*fine).clone(), (*pick).clone())
        })
        .collect();

    for o in &mut out.objects {
        let Some(fine) = o.label(secondary) else { continue };
        if let Some(pick) = chosen.get(fine) {
            o.labels.insert(primary.to_string(), pick.clone());
        }
    }

    let catch_all = Label::new(CATCH_ALL_CATEGORY);
    let fine_rejects: Vec<Label> = seen
        .keys()
        .filter(|fine| rejected.contains(**fine) && ***fine != catch_all)
        .map(|l| (*l).clone())
        .collect();

    rebuild_object_spaces(&mut out);
    if let Some(space) = out.object_spaces.iter_mut().find(|s| s.name == secondary) {
        space.rejected.extend(fine_rejects);
    }
    out
}

/// Drops outdoor and removed rooms, rejected objects, and rooms left empty.
///
/// `object_space` names the space inference will run over. When it is the
/// fine-grained space (and the config allows it), objects whose coarse label
/// is [`CATCH_ALL_CATEGORY`] are kept.
pub fn filter_graph(graph: &SceneGraph, config: &IngestConfig, object_space: &str) -> SceneGraph {
    let unlabeled = Label::new(UNLABELED);
    let catch_all = Label::new(CATCH_ALL_CATEGORY);
    let fine_run = graph.is_fine_space(object_space) && config.keep_object_category_for_secondary_space;
    let coarse_name = graph.coarse_space().map(|s| s.name.clone());

    let mut coarse_rejected: BTreeSet<Label> = config.rejected_object_labels.clone();
    if let Some(space) = graph.coarse_space() {
        coarse_rejected.extend(space.rejected.iter().cloned());
    }
    if fine_run {
        coarse_rejected.remove(&catch_all);
    }
    let target_rejected: BTreeSet<Label> = graph
        .space(object_space)
        .map(|s| s.rejected.clone())
        .unwrap_or_default();

    let dropped_room =
        |label: &Label| config.outdoor_room_labels.contains(label) || config.removed_room_labels.contains(label);
    let kept_rooms: BTreeSet<&str> = graph
        .rooms
        .iter()
        .filter(|r| !dropped_room(&r.label))
        .map(|r| r.id.as_str())
        .collect();

    let mut out = graph.clone();
    out.objects.retain(|o| {
        if !kept_rooms.contains(o.room.as_str()) {
            return false;
        }
        let coarse_ok = coarse_name
            .as_deref()
            .and_then(|n| o.label(n))
            .is_none_or(|c| !coarse_rejected.contains(c));
        let target_ok = o
            .label(object_space)
            .is_some_and(|t| *t != unlabeled && !target_rejected.contains(t));
        coarse_ok && target_ok
    });
    out.rooms.retain(|r| kept_rooms.contains(r.id.as_str()));
    rebuild_containment(&mut out);
    out.rooms.retain(|r| !r.objects.is_empty());

    out.room_space.labels.retain(|l| !dropped_room(l));
    rebuild_object_spaces(&mut out);
    for space in &mut out.object_spaces {
        let is_coarse = Some(&space.name) == coarse_name.as_ref();
        if is_coarse {
            space.rejected = coarse_rejected.clone();
        }
        let rejected = space.rejected.clone();
        space.labels.retain(|l| !rejected.contains(l));
    }
    out
}

/// Runs every stage after parsing and validates the result.
pub fn preprocess(raw: &SceneGraph, config: &IngestConfig, object_space: &str) -> Result<SceneGraph> {
    if raw.space(object_space).is_none() {
        return Err(Error::schema(format!(
            "graph has no label space named {object_space:?}"
        )));
    }
    let graph = reassign_objects_by_bbox(raw);
    let graph = apply_spelling_fixes(&graph, &config.spelling_fixes);
    let graph = match (graph.coarse_space(), graph.fine_space()) {
        (Some(c), Some(f)) => {
            let (c, f) = (c.name.clone(), f.name.clone());
            resolve_label_space_conflicts(&graph, &c, &f)
        }
        _ => graph,
    };
    let graph = filter_graph(&graph, config, object_space);
    let violations = graph.validate();
    if !violations.is_empty() {
        let listed: Vec<String> = violations.iter().take(10).map(ToString::to_string).collect();
        return Err(Error::schema(format!(
            "preprocessed graph is invalid ({} violation(s)): {}",
            violations.len(),
            listed.join("; ")
        )));
    }
    Ok(graph)
}

/// Room-label histogram in room-space order, for comparison with reference
/// frequency tables.
pub fn room_histogram(graph: &SceneGraph) -> Vec<(Label, usize)> {
    graph
        .room_space
        .labels
        .iter()
        .map(|l| (l.clone(), graph.rooms.iter().filter(|r| &r.label == l).count()))
        .collect()
}

pub fn object_space_summary(space: &LabelSpace) -> String {
    format!("{}: {} labels", space.name, space.len())
}
