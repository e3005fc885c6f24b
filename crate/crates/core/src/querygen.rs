//! Query sentence templates.
//!
//! Room queries read `A room containing {o_1}, {o_2} and {o_k} is called
//! {article} {room}.` The proxy template is the same sentence with a single
//! object.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Label;

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArticleMode {
    /// `a` or `an` chosen from the room label's pronunciation.
    Grammatical,
    /// The literal string `a(n)`.
    LiteralAnParenthesized,
}

impl ArticleMode {
    pub fn tag(self) -> &'static str {
        match self {
            ArticleMode::Grammatical => "grammatical",
            ArticleMode::LiteralAnParenthesized => "literal",
        }
    }
}

/// Leading words whose article does not follow the vowel-letter rule.
const ARTICLE_EXCEPTIONS: &[(&str, &str)] = &[
    ("utility", "a"),
    ("university", "a"),
    ("unit", "a"),
    ("uniform", "a"),
    ("union", "a"),
    ("user", "a"),
    ("usual", "a"),
    ("european", "a"),
    ("one", "a"),
    ("hour", "an"),
    ("honor", "an"),
    ("heir", "an"),
];

pub fn indefinite_article(noun: &str) -> &'static str {
    let first_word = noun.split_whitespace().next().unwrap_or("");
    if let Some((_, a)) = ARTICLE_EXCEPTIONS.iter().find(|(w, _)| *w == first_word) {
        return a;
    }
    match first_word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub version: String,
    pub article_mode: ArticleMode,
    pub separator: String,
    pub final_conjunction: String,
}

impl Default for QueryTemplate {
    fn default() -> Self {
        QueryTemplate::new(ArticleMode::Grammatical)
    }
}

impl QueryTemplate {
    pub fn new(article_mode: ArticleMode) -> Self {
        QueryTemplate {
            version: TEMPLATE_VERSION.to_string(),
            article_mode,
            separator: ", ".to_string(),
            final_conjunction: " and ".to_string(),
        }
    }

    /// Identifier recorded in caches and reports, e.g. `v1-grammatical`.
    pub fn tag(&self) -> String {
        let mut tag = format!("{}-{}", self.version, self.article_mode.tag());
        if self.separator != ", " || self.final_conjunction != " and " {
            tag.push_str(&format!("[{:?}|{:?}]", self.separator, self.final_conjunction));
        }
        tag
    }

    fn article(&self, room: &str) -> &'static str {
        match self.article_mode {
            ArticleMode::Grammatical => indefinite_article(room),
            ArticleMode::LiteralAnParenthesized => "a(n)",
        }
    }

    /// Renders the room query for objects already ordered by ascending
    /// entropy.
    pub fn render_room_query(&self, objects: &[Label], room: &Label) -> Result<String> {
        let (last, rest) = objects
            .split_last()
            .ok_or_else(|| Error::param("a room query needs at least one object"))?;
        let mut s = String::from("A room containing ");
        for (i, o) in rest.iter().enumerate() {
            if i > 0 {
                s.push_str(&self.separator);
            }
            s.push_str(o.as_str());
        }
        if !rest.is_empty() {
            s.push_str(&self.final_conjunction);
        }
        s.push_str(last.as_str());
        s.push_str(" is called ");
        s.push_str(self.article(room.as_str()));
        s.push(' ');
        s.push_str(room.as_str());
        s.push('.');
        Ok(s)
    }

    pub fn render_proxy_query(&self, object: &Label, room: &Label) -> String {
        self.render_room_query(std::slice::from_ref(object), room)
            .expect("one object is always renderable")
    }
}

impl fmt::Display for QueryTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}
