//! Conversion from Matterport3D `.house` segmentation files into the scene
//! file format.
//!
//! Only the `H`, `R` (region), `C` (category) and `O` (object) records are
//! read. Region codes are mapped onto the room label space below; object
//! boxes are the axis-aligned hulls of the oriented boxes in the `O` records.
//! The coarse label is the category's mpcat40 name. The fine label comes
//! from an optional `category_mapping.tsv` (`nyuClass` column, keyed by the
//! category-mapping index) and falls back to the raw category name.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scene::{BoundingBox, Label, LabelSpace, ObjectNode, RoomNode, SceneGraph};

use super::format::ROOM_SPACE_NAME;
use super::UNLABELED;

pub const COARSE_SPACE: &str = "mpcat40";
pub const FINE_SPACE: &str = "nyuClass";

/// Region code to room label. Codes not listed map to `none`.
const REGION_CODES: &[(&str, &str)] = &[
    ("a", "bathroom"),
    ("b", "bedroom"),
    ("c", "closet"),
    ("d", "dining room"),
    ("e", "lobby"),
    ("f", "family room"),
    ("g", "garage"),
    ("h", "hallway"),
    ("i", "library"),
    ("j", "laundry room"),
    ("k", "kitchen"),
    ("l", "living room"),
    ("m", "conference auditorium"),
    ("n", "lounge"),
    ("o", "office"),
    ("p", "porch"),
    ("r", "game room"),
    ("s", "staircase"),
    ("t", "bathroom"),
    ("u", "utility room"),
    ("v", "television room"),
    ("w", "gym"),
    ("x", "yard"),
    ("y", "balcony"),
    ("z", "none"),
    ("B", "bar"),
    ("C", "classroom"),
    ("D", "dining room"),
    ("S", "spa"),
    ("Z", "none"),
    ("-", "none"),
];

const NON_ROOM_LABELS: &[&str] = &["porch", "yard", "balcony", "none"];

pub fn region_label(code: &str) -> Label {
    REGION_CODES
        .iter()
        .find(|(c, _)| *c == code)
        .map_or_else(|| Label::new("none"), |(_, l)| Label::new(l))
}

/// The indoor room labels reachable from region codes, sorted.
pub fn room_labels() -> Vec<Label> {
    let mut out: Vec<Label> = REGION_CODES
        .iter()
        .map(|(_, l)| Label::new(l))
        .filter(|l| !NON_ROOM_LABELS.contains(&l.as_str()))
        .collect();
    out.sort();
    out.dedup();
    out
}

fn category_name(raw: &str) -> Label {
    let l = Label::new(&raw.replace(['#', '_'], " "));
    if l.is_empty() || l.as_str() == "unknown" {
        Label::new(UNLABELED)
    } else {
        l
    }
}

/// Reads the `index` and `nyuClass` columns of a Matterport
/// `category_mapping.tsv`.
pub fn parse_category_mapping(text: &str, source_name: &str) -> Result<HashMap<i64, Label>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::schema(format!("{source_name}: empty category mapping")))?
        .split('\t')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::schema(format!("{source_name}: missing column {name:?}")))
    };
    let (index_col, fine_col) = (col("index")?, col(FINE_SPACE)?);
    let mut out = HashMap::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |message: &str| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 2,
            message: message.to_string(),
        };
        let index: i64 = cols
            .get(index_col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad index column"))?;
        let fine = cols.get(fine_col).copied().unwrap_or("");
        out.insert(index, category_name(fine));
    }
    Ok(out)
}

struct Category {
    mapping_index: i64,
    raw_name: Label,
    coarse: Label,
}

fn floats<const N: usize>(tokens: &[&str], err: &dyn Fn(&str) -> Error) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    if tokens.len() < N {
        return Err(err("record too short"));
    }
    for (slot, t) in out.iter_mut().zip(tokens) {
        *slot = t.parse().map_err(|_| err("invalid number"))?;
    }
    Ok(out)
}

/// Axis-aligned hull of an oriented box given by center, two axes and three
/// half-extents (third axis = a0 x a1).
fn oriented_hull(center: [f64; 3], a0: [f64; 3], a1: [f64; 3], radii: [f64; 3]) -> BoundingBox {
    let a2 = [
        a0[1] * a1[2] - a0[2] * a1[1],
        a0[2] * a1[0] - a0[0] * a1[2],
        a0[0] * a1[1] - a0[1] * a1[0],
    ];
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for i in 0..3 {
        let half = a0[i].abs() * radii[0] + a1[i].abs() * radii[1] + a2[i].abs() * radii[2];
        min[i] = center[i] - half;
        max[i] = center[i] + half;
    }
    BoundingBox::new(min, max)
}

/// Converts one `.house` file into a raw scene graph. Ids are prefixed with
/// the house name so several houses can share one scene file.
pub fn convert_house(text: &str, source_name: &str, fine_names: Option<&HashMap<i64, Label>>) -> Result<SceneGraph> {
    let mut house = String::new();
    let mut rooms: Vec<(i64, RoomNode)> = Vec::new();
    let mut categories: HashMap<i64, Category> = HashMap::new();
    let mut raw_objects: Vec<(i64, i64, i64, BoundingBox)> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let t: Vec<&str> = line.split_whitespace().collect();
        let err = |message: &str| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message: message.to_string(),
        };
        let int =
            |s: Option<&&str>| -> Result<i64> { s.and_then(|s| s.parse().ok()).ok_or_else(|| err("invalid index")) };
        match t.first().copied() {
            Some("H") => house = t.get(1).copied().unwrap_or("house").to_string(),
            Some("R") => {
                // R index level 0 0 label px py pz xlo ylo zlo xhi yhi zhi height ...
                let index = int(t.get(1))?;
                let label = region_label(t.get(5).copied().unwrap_or("-"));
                let b: [f64; 6] = floats(t.get(9..).unwrap_or(&[]), &err)?;
                rooms.push((
                    index,
                    RoomNode {
                        id: String::new(),
                        label,
                        bbox: BoundingBox::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]),
                        objects: Vec::new(),
                    },
                ));
            }
            Some("C") => {
                // C index mapping_index mapping_name... mpcat40_index mpcat40_name 0 0 0 0 0
                if t.len() < 11 {
                    return Err(err("category record too short"));
                }
                let index = int(t.get(1))?;
                let mapping_index = int(t.get(2))?;
                let n = t.len();
                categories.insert(
                    index,
                    Category {
                        mapping_index,
                        raw_name: category_name(&t[3..n - 7].join(" ")),
                        coarse: category_name(t[n - 6]),
                    },
                );
            }
            Some("O") => {
                // O index region category px py pz a0xyz a1xyz r0 r1 r2 ...
                let index = int(t.get(1))?;
                let region = int(t.get(2))?;
                let category = int(t.get(3))?;
                let v: [f64; 12] = floats(t.get(4..).unwrap_or(&[]), &err)?;
                let bbox = oriented_hull(
                    [v[0], v[1], v[2]],
                    [v[3], v[4], v[5]],
                    [v[6], v[7], v[8]],
                    [v[9], v[10], v[11]],
                );
                raw_objects.push((index, region, category, bbox));
            }
            _ => {}
        }
    }

    let region_id = |index: i64| format!("{house}_r{index:03}");
    let mut room_pos = HashMap::new();
    for (pos, (index, room)) in rooms.iter_mut().enumerate() {
        room.id = region_id(*index);
        room_pos.insert(*index, pos);
    }

    let mut objects = Vec::new();
    for (index, region, category, bbox) in raw_objects {
        let Some(&pos) = room_pos.get(&region) else {
            log::debug!("{source_name}: object {index} has no region, skipped");
            continue;
        };
        let (coarse, fine) = match categories.get(&category) {
            Some(c) => {
                let fine = fine_names
                    .and_then(|m| m.get(&c.mapping_index).cloned())
                    .unwrap_or_else(|| c.raw_name.clone());
                (c.coarse.clone(), fine)
            }
            None => (Label::new(UNLABELED), Label::new(UNLABELED)),
        };
        let id = format!("{house}_o{index:04}");
        rooms[pos].1.objects.push(id.clone());
        objects.push(ObjectNode {
            id,
            labels: [(COARSE_SPACE.to_string(), coarse), (FINE_SPACE.to_string(), fine)]
                .into_iter()
                .collect(),
            bbox,
            room: rooms[pos].1.id.clone(),
        });
    }

    Ok(SceneGraph {
        room_space: LabelSpace::new(ROOM_SPACE_NAME, room_labels()),
        object_spaces: vec![LabelSpace::new(COARSE_SPACE, []), LabelSpace::new(FINE_SPACE, [])],
        rooms: rooms.into_iter().map(|(_, r)| r).collect(),
        objects,
    })
}

/// Concatenates converted houses into one graph.
pub fn merge(graphs: Vec<SceneGraph>) -> SceneGraph {
    let mut out = SceneGraph {
        room_space: LabelSpace::new(ROOM_SPACE_NAME, room_labels()),
        object_spaces: vec![LabelSpace::new(COARSE_SPACE, []), LabelSpace::new(FINE_SPACE, [])],
        ..Default::default()
    };
    for g in graphs {
        out.rooms.extend(g.rooms);
        out.objects.extend(g.objects);
    }
    out
}
