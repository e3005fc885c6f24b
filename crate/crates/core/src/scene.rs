//! Scene-graph domain types: label spaces, rooms, objects and their boxes.
//!
//! A [`SceneGraph`] holds one room label space and one or more object label
//! spaces. The first object space is the coarse space (mpcat40-style) whose
//! rejection list drives filtering; an optional second space is the
//! fine-grained one (nyuClass-style). Graphs are plain data and are never
//! mutated in place by the pipeline stages, which return new graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// A normalized category string: lowercased with surrounding whitespace
/// removed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(raw: &str) -> Self {
        Label(raw.trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label::new(&s)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::new(s)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> Self {
        l.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

impl AsRef<str> for Label {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A named, ordered set of categories together with the categories excluded
/// from inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub name: String,
    pub labels: Vec<Label>,
    pub rejected: BTreeSet<Label>,
}

impl LabelSpace {
    pub fn new(name: impl Into<String>, labels: impl IntoIterator<Item = Label>) -> Self {
        LabelSpace {
            name: name.into(),
            labels: labels.into_iter().collect(),
            rejected: BTreeSet::new(),
        }
    }

    pub fn with_rejected(mut self, rejected: impl IntoIterator<Item = Label>) -> Self {
        self.rejected = rejected.into_iter().collect();
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.labels.contains(label)
    }

    pub fn index_of(&self, label: &Label) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        BoundingBox { min, max }
    }

    pub fn is_well_formed(&self) -> bool {
        (0..3).all(|i| self.min[i] <= self.max[i])
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    /// Closed-interval containment on every axis.
    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: String,
    /// Label-space name to category.
    pub labels: BTreeMap<String, Label>,
    pub bbox: BoundingBox,
    pub room: String,
}

impl ObjectNode {
    pub fn label(&self, space: &str) -> Option<&Label> {
        self.labels.get(space)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomNode {
    pub id: String,
    pub label: Label,
    pub bbox: BoundingBox,
    /// Ids of contained objects.
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneGraph {
    pub room_space: LabelSpace,
    /// Coarse space first, fine-grained space (if any) second.
    pub object_spaces: Vec<LabelSpace>,
    pub rooms: Vec<RoomNode>,
    pub objects: Vec<ObjectNode>,
}

impl Default for LabelSpace {
    fn default() -> Self {
        LabelSpace::new("rooms", Vec::new())
    }
}

/// Picks one of the graph's object label spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpaceSelector {
    Coarse,
    Fine,
    Named(String),
}

impl SpaceSelector {
    pub fn parse(s: &str) -> Self {
        match s {
            "coarse" => SpaceSelector::Coarse,
            "fine" => SpaceSelector::Fine,
            other => SpaceSelector::Named(other.to_string()),
        }
    }
}

/// A single invariant violation found by [`SceneGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(id) => write!(f, "{id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn violation(node: Option<&str>, message: impl Into<String>) -> Violation {
    Violation {
        node: node.map(str::to_string),
        message: message.into(),
    }
}

impl SceneGraph {
    pub fn coarse_space(&self) -> Option<&LabelSpace> {
        self.object_spaces.first()
    }

    pub fn fine_space(&self) -> Option<&LabelSpace> {
        self.object_spaces.get(1)
    }

    pub fn space(&self, name: &str) -> Option<&LabelSpace> {
        self.object_spaces.iter().find(|s| s.name == name)
    }

    pub fn select_space(&self, selector: &SpaceSelector) -> Option<&LabelSpace> {
        match selector {
            SpaceSelector::Coarse => self.coarse_space(),
            SpaceSelector::Fine => self.fine_space(),
            SpaceSelector::Named(name) => self.space(name),
        }
    }

    pub fn is_fine_space(&self, name: &str) -> bool {
        self.fine_space().is_some_and(|s| s.name == name)
    }

    pub fn room(&self, id: &str) -> Option<&RoomNode> {
        self.rooms.iter().find(|r| r.id == id)
    }

    pub fn object_index(&self) -> HashMap<&str, &ObjectNode> {
        self.objects.iter().map(|o| (o.id.as_str(), o)).collect()
    }

    /// Labels of a room's objects in `space`, one entry per instance, in the
    /// room's object order. Objects lacking a label in `space` are skipped.
    pub fn room_object_labels<'a>(&'a self, room: &'a RoomNode, space: &str) -> Vec<&'a Label> {
        let index = self.object_index();
        room.objects
            .iter()
            .filter_map(|id| index.get(id.as_str()))
            .filter_map(|o| o.label(space))
            .collect()
    }

    /// Checks every structural invariant and returns one entry per violation.
    /// An empty result means the graph is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let spaces = std::iter::once(&self.room_space).chain(self.object_spaces.iter());
        for space in spaces {
            let mut seen = HashSet::new();
            for label in &space.labels {
                if !seen.insert(label) {
                    out.push(violation(
                        None,
                        format!("label space {:?} repeats label {label:?}", space.name),
                    ));
                }
                if space.rejected.contains(label) {
                    out.push(violation(
                        None,
                        format!("label space {:?} still contains rejected label {label:?}", space.name),
                    ));
                }
            }
        }
        if self.room_space.len() < 2 {
            out.push(violation(
                None,
                format!(
                    "room label space has {} label(s); at least 2 are required",
                    self.room_space.len()
                ),
            ));
        }

        let mut room_ids = HashSet::new();
        for room in &self.rooms {
            if !room_ids.insert(room.id.as_str()) {
                out.push(violation(Some(&room.id), "duplicate room id"));
            }
        }
        let mut object_ids = HashSet::new();
        for object in &self.objects {
            if !object_ids.insert(object.id.as_str()) {
                out.push(violation(Some(&object.id), "duplicate object id"));
            }
        }

        let index = self.object_index();
        for room in &self.rooms {
            if !room.bbox.is_well_formed() {
                out.push(violation(Some(&room.id), "bounding box min exceeds max"));
            }
            if !self.room_space.contains(&room.label) {
                out.push(violation(
                    Some(&room.id),
                    format!("room label {:?} is not in the room label space", room.label.as_str()),
                ));
            }
            if room.objects.is_empty() {
                out.push(violation(Some(&room.id), "room contains no objects"));
            }
            for oid in &room.objects {
                match index.get(oid.as_str()) {
                    None => out.push(violation(Some(&room.id), format!("room lists unknown object {oid:?}"))),
                    Some(o) if o.room != room.id => out.push(violation(
                        Some(&room.id),
                        format!("room lists object {oid:?} which is assigned to {:?}", o.room),
                    )),
                    Some(_) => {}
                }
            }
        }

        for object in &self.objects {
            if !object.bbox.is_well_formed() {
                out.push(violation(Some(&object.id), "bounding box min exceeds max"));
            }
            match self.room(&object.room) {
                None => out.push(violation(
                    Some(&object.id),
                    format!("object references missing room {:?}", object.room),
                )),
                Some(room) if !room.objects.contains(&object.id) => out.push(violation(
                    Some(&object.id),
                    format!("room {:?} does not list this object", object.room),
                )),
                Some(_) => {}
            }
            for (space_name, label) in &object.labels {
                match self.space(space_name) {
                    None => out.push(violation(
                        Some(&object.id),
                        format!("label for unknown space {space_name:?}"),
                    )),
                    Some(space) if !space.contains(label) => out.push(violation(
                        Some(&object.id),
                        format!("label {:?} is not in space {space_name:?}", label.as_str()),
                    )),
                    Some(_) => {}
                }
            }
        }

        out
    }
}
