//! Line-delimited scene file reader and writer.
//!
//! Every non-blank line not starting with `#` is one record. Fields are
//! separated by a single TAB (`\t`); labels may contain spaces but never
//! tabs. Coordinates are decimal floats in meters.
//!
//! ```text
//! spaces  <coarse space name> [<fine space name>]
//! rooms   <room label> <room label> ...
//! room    <id> <label> <xmin> <ymin> <zmin> <xmax> <ymax> <zmax>
//! object  <id> <room id> <label per declared space...> <xmin> <ymin> <zmin> <xmax> <ymax> <zmax>
//! ```
//!
//! `spaces` and `rooms` must each appear exactly once, before any `room` or
//! `object` record. A room label must be one of the declared room labels or
//! one of the outdoor / removed labels of the active [`IngestConfig`].
//! An empty object label is read as `unlabeled`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scene::{BoundingBox, Label, LabelSpace, ObjectNode, RoomNode, SceneGraph};

use super::{IngestConfig, UNLABELED};

pub const ROOM_SPACE_NAME: &str = "rooms";

struct Parser<'a> {
    source: &'a str,
    line: usize,
}

impl Parser<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.source.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn bbox(&self, fields: &[&str]) -> Result<BoundingBox> {
        let mut v = [0.0f64; 6];
        for (slot, field) in v.iter_mut().zip(fields) {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| self.err(format!("invalid coordinate {field:?}")))?;
            if !x.is_finite() {
                return Err(self.err(format!("non-finite coordinate {field:?}")));
            }
            *slot = x;
        }
        let b = BoundingBox::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]);
        if !b.is_well_formed() {
            return Err(self.err("bounding box min exceeds max"));
        }
        Ok(b)
    }
}

fn object_label(raw: &str) -> Label {
    let label = Label::new(raw);
    if label.is_empty() {
        Label::new(UNLABELED)
    } else {
        label
    }
}

/// Parses scene text into a raw graph. No filtering is applied.
pub fn parse_scene_str(text: &str, source_name: &str, config: &IngestConfig) -> Result<SceneGraph> {
    let mut p = Parser {
        source: source_name,
        line: 0,
    };
    let mut space_names: Option<Vec<String>> = None;
    let mut room_labels: Option<Vec<Label>> = None;
    let mut rooms: Vec<RoomNode> = Vec::new();
    let mut objects: Vec<(ObjectNode, usize)> = Vec::new();
    let mut room_ids = HashSet::new();
    let mut object_ids = HashSet::new();

    for (i, raw_line) in text.lines().enumerate() {
        p.line = i + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "spaces" => {
                if space_names.is_some() {
                    return Err(p.err("duplicate `spaces` header"));
                }
                let names: Vec<String> = fields[1..].iter().map(|s| s.trim().to_string()).collect();
                if names.is_empty() || names.len() > 2 || names.iter().any(String::is_empty) {
                    return Err(Error::schema(format!(
                        "{source_name}:{}: `spaces` must declare one or two non-empty label-space names",
                        p.line
                    )));
                }
                if names.len() == 2 && names[0] == names[1] {
                    return Err(Error::schema(format!(
                        "{source_name}:{}: label-space names repeat",
                        p.line
                    )));
                }
                space_names = Some(names);
            }
            "rooms" => {
                if room_labels.is_some() {
                    return Err(p.err("duplicate `rooms` header"));
                }
                let mut seen = HashSet::new();
                let mut labels = Vec::new();
                for f in &fields[1..] {
                    let l = Label::new(f);
                    if l.is_empty() {
                        return Err(p.err("empty room label in `rooms` header"));
                    }
                    if !seen.insert(l.clone()) {
                        return Err(p.err(format!("room label {:?} declared twice", l.as_str())));
                    }
                    labels.push(l);
                }
                room_labels = Some(labels);
            }
            "room" => {
                let declared = room_labels
                    .as_ref()
                    .ok_or_else(|| p.err("`room` record before the `rooms` header"))?;
                if space_names.is_none() {
                    return Err(p.err("`room` record before the `spaces` header"));
                }
                if fields.len() != 9 {
                    return Err(p.err(format!("`room` record needs 9 fields, found {}", fields.len())));
                }
                let id = fields[1].trim().to_string();
                if id.is_empty() {
                    return Err(p.err("empty room id"));
                }
                if !room_ids.insert(id.clone()) {
                    return Err(p.err(format!("duplicate room id {id:?}")));
                }
                let label = Label::new(fields[2]);
                let known = declared.contains(&label)
                    || config.outdoor_room_labels.contains(&label)
                    || config.removed_room_labels.contains(&label);
                if !known {
                    return Err(Error::schema(format!(
                        "{source_name}:{}: room {id:?} has undeclared label {:?}",
                        p.line,
                        label.as_str()
                    )));
                }
                let bbox = p.bbox(&fields[3..9])?;
                rooms.push(RoomNode {
                    id,
                    label,
                    bbox,
                    objects: Vec::new(),
                });
            }
            "object" => {
                let names = space_names
                    .as_ref()
                    .ok_or_else(|| p.err("`object` record before the `spaces` header"))?;
                let expected = 3 + names.len() + 6;
                if fields.len() != expected {
                    return Err(Error::schema(format!(
                        "{source_name}:{}: `object` record has {} fields but {} label space(s) are declared (expected {expected} fields)",
                        p.line,
                        fields.len(),
                        names.len()
                    )));
                }
                let id = fields[1].trim().to_string();
                if id.is_empty() {
                    return Err(p.err("empty object id"));
                }
                if !object_ids.insert(id.clone()) {
                    return Err(p.err(format!("duplicate object id {id:?}")));
                }
                let labels = names
                    .iter()
                    .zip(&fields[3..3 + names.len()])
                    .map(|(n, f)| (n.clone(), object_label(f)))
                    .collect();
                let bbox = p.bbox(&fields[3 + names.len()..])?;
                objects.push((
                    ObjectNode {
                        id,
                        labels,
                        bbox,
                        room: fields[2].trim().to_string(),
                    },
                    p.line,
                ));
            }
            other => return Err(p.err(format!("unknown record kind {other:?}"))),
        }
    }

    let room_pos: HashMap<String, usize> = rooms.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
    let mut out_objects = Vec::with_capacity(objects.len());
    for (object, line) in objects {
        let Some(&ri) = room_pos.get(&object.room) else {
            p.line = line;
            return Err(p.err(format!(
                "object {:?} references unknown room {:?}",
                object.id, object.room
            )));
        };
        rooms[ri].objects.push(object.id.clone());
        out_objects.push(object);
    }

    let names = space_names.unwrap_or_default();
    let object_spaces = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let observed: BTreeSet<Label> = out_objects.iter().filter_map(|o| o.label(name).cloned()).collect();
            let space = LabelSpace::new(name.clone(), observed);
            if i == 0 {
                space.with_rejected(config.rejected_object_labels.iter().cloned())
            } else {
                space
            }
        })
        .collect();

    Ok(SceneGraph {
        room_space: LabelSpace::new(ROOM_SPACE_NAME, room_labels.unwrap_or_default()),
        object_spaces,
        rooms,
        objects: out_objects,
    })
}

fn push_bbox(out: &mut String, b: &BoundingBox) {
    for v in b.min.iter().chain(b.max.iter()) {
        let _ = write!(out, "\t{v}");
    }
}

/// Serializes a graph in the scene file format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_scene(graph: &SceneGraph) -> String {
    let mut out = String::new();
    out.push_str("# roomlabel scene v1\n");
    out.push_str("spaces");
    for s in &graph.object_spaces {
        out.push('\t');
        out.push_str(&s.name);
    }
    out.push('\n');
    out.push_str("rooms");
    for l in &graph.room_space.labels {
        out.push('\t');
        out.push_str(l.as_str());
    }
    out.push('\n');
    for r in &graph.rooms {
        let _ = write!(out, "room\t{}\t{}", r.id, r.label);
        push_bbox(&mut out, &r.bbox);
        out.push('\n');
    }
    for o in &graph.objects {
        let _ = write!(out, "object\t{}\t{}", o.id, o.room);
        for s in &graph.object_spaces {
            out.push('\t');
            out.push_str(o.label(&s.name).map(Label::as_str).unwrap_or(UNLABELED));
        }
        push_bbox(&mut out, &o.bbox);
        out.push('\n');
    }
    out
}
