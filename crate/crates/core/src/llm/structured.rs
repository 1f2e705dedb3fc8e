//! Tolerant extraction and schema validation of model JSON output.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaTag {
    CodeList,
    RelationLabel,
    SubthemeList,
    ThemeList,
    EditList,
    AssignmentList,
    JudgeScore,
}

impl SchemaTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaTag::CodeList => "code_list",
            SchemaTag::RelationLabel => "relation_label",
            SchemaTag::SubthemeList => "subtheme_list",
            SchemaTag::ThemeList => "theme_list",
            SchemaTag::EditList => "edit_list",
            SchemaTag::AssignmentList => "assignment_list",
            SchemaTag::JudgeScore => "judge_score",
        }
    }

    /// Key under which the list lives when the model wraps it in an object.
    fn list_key(self) -> &'static str {
        match self {
            SchemaTag::CodeList | SchemaTag::AssignmentList => "codes",
            SchemaTag::SubthemeList => "subthemes",
            SchemaTag::ThemeList => "themes",
            SchemaTag::EditList => "edits",
            SchemaTag::RelationLabel => "relation",
            SchemaTag::JudgeScore => "score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCode {
    pub label: String,
    pub description: String,
    pub quotes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Equivalent,
    Subordinate,
    Reverse,
    Orthogonal,
}

/// A proposed grouping: subthemes list code ids, themes list subtheme ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGroup {
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(alias = "code_ids", alias = "subtheme_ids", alias = "children")]
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSplitPart {
    pub label: String,
    #[serde(default)]
    pub description: String,
    pub children: Vec<String>,
}

/// One reviewer proposal as emitted by the model, before validation against state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEdit {
    pub action: String,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub children: Vec<String>,
    #[serde(default)]
    pub parts: Vec<RawSplitPart>,
    #[serde(default)]
    pub new_parent: Option<String>,
    #[serde(default)]
    pub quotes: Vec<String>,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Structured {
    CodeList(Vec<RawCode>),
    Relation(RelationKind),
    Subthemes(Vec<RawGroup>),
    Themes(Vec<RawGroup>),
    Edits(Vec<RawEdit>),
    Assignments(Vec<String>),
    Score(u8),
}

macro_rules! accessor {
    ($name:ident, $variant:ident, $ty:ty, $tag:expr) => {
        pub fn $name(self) -> Result<$ty, GatewayError> {
            match self {
                Structured::$variant(v) => Ok(v),
                _ => Err(malformed($tag, "payload of a different schema")),
            }
        }
    };
}

impl Structured {
    accessor!(into_codes, CodeList, Vec<RawCode>, SchemaTag::CodeList);
    accessor!(into_relation, Relation, RelationKind, SchemaTag::RelationLabel);
    accessor!(into_subthemes, Subthemes, Vec<RawGroup>, SchemaTag::SubthemeList);
    accessor!(into_themes, Themes, Vec<RawGroup>, SchemaTag::ThemeList);
    accessor!(into_edits, Edits, Vec<RawEdit>, SchemaTag::EditList);
    accessor!(into_assignments, Assignments, Vec<String>, SchemaTag::AssignmentList);
    accessor!(into_score, Score, u8, SchemaTag::JudgeScore);
}

fn malformed(tag: SchemaTag, reason: impl Into<String>) -> GatewayError {
    GatewayError::MalformedResponse { schema: tag.as_str(), reason: reason.into() }
}

/// First syntactically complete JSON object or array embedded in `text`.
pub fn extract_json(text: &str) -> Option<Value> {
    for (i, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
    }
    None
}

fn list<T: DeserializeOwned>(v: Value, tag: SchemaTag) -> Result<Vec<T>, GatewayError> {
    let arr = match v {
        Value::Array(_) => v,
        Value::Object(mut m) => m.remove(tag.list_key()).ok_or_else(|| malformed(tag, format!("missing key `{}`", tag.list_key())))?,
        _ => return Err(malformed(tag, "expected object or array")),
    };
    serde_json::from_value(arr).map_err(|e| malformed(tag, e.to_string()))
}

pub fn parse_structured(text: &str, tag: SchemaTag) -> Result<Structured, GatewayError> {
    let v = extract_json(text).ok_or_else(|| malformed(tag, "no JSON value found"))?;
    match tag {
        SchemaTag::CodeList => {
            let codes: Vec<RawCode> = list(v, tag)?;
            Ok(Structured::CodeList(codes))
        }
        SchemaTag::SubthemeList => Ok(Structured::Subthemes(list(v, tag)?)),
        SchemaTag::ThemeList => Ok(Structured::Themes(list(v, tag)?)),
        SchemaTag::EditList => Ok(Structured::Edits(list(v, tag)?)),
        SchemaTag::AssignmentList => {
            let items: Vec<Value> = list(v, tag)?;
            let ids = items
                .into_iter()
                .map(|it| match it {
                    Value::String(s) => Ok(s),
                    Value::Object(mut m) => match m.remove("code_id").or_else(|| m.remove("id")) {
                        Some(Value::String(s)) => Ok(s),
                        _ => Err(malformed(tag, "assignment item without code_id")),
                    },
                    _ => Err(malformed(tag, "assignment item must be a string")),
                })
                .collect::<Result<_, _>>()?;
            Ok(Structured::Assignments(ids))
        }
        SchemaTag::RelationLabel => {
            let raw = match &v {
                Value::Object(m) => m.get("relation").or_else(|| m.get("label")).cloned(),
                _ => None,
            }
            .ok_or_else(|| malformed(tag, "missing key `relation`"))?;
            let s = raw.as_str().ok_or_else(|| malformed(tag, "relation must be a string"))?;
            let kind = serde_json::from_value(Value::String(s.trim().to_lowercase()))
                .map_err(|_| malformed(tag, format!("unknown relation `{s}`")))?;
            Ok(Structured::Relation(kind))
        }
        SchemaTag::JudgeScore => {
            let raw = match &v {
                Value::Object(m) => m.get("score").cloned(),
                _ => None,
            }
            .ok_or_else(|| malformed(tag, "missing key `score`"))?;
            let n = raw.as_u64().ok_or_else(|| malformed(tag, format!("score {raw} is not an integer")))?;
            if !(1..=10).contains(&n) {
                return Err(malformed(tag, format!("score {n} outside 1..=10")));
            }
            Ok(Structured::Score(n as u8))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(s: &str) -> Result<u8, GatewayError> {
        parse_structured(s, SchemaTag::JudgeScore)?.into_score()
    }

    #[test]
    fn judge_scores() {
        assert_eq!(score(r#"{"score": 7}"#).unwrap(), 7);
        assert_eq!(score("Sure! ```json {\"score\": 10}```").unwrap(), 10);
        assert!(matches!(score(r#"{"score": 11}"#), Err(GatewayError::MalformedResponse { .. })));
        assert!(score(r#"{"score": 0}"#).is_err());
        assert!(score(r#"{"score": 6.5}"#).is_err());
        assert!(score("no json here").is_err());
    }

    #[test]
    fn skips_non_json_brackets_in_prose() {
        assert_eq!(score("[note] see below {\"score\": 3}").unwrap(), 3);
    }

    #[test]
    fn code_list_accepts_wrapped_or_bare() {
        let wrapped = r#"{"codes": [{"label": "a b c d e", "description": "x", "quotes": ["q"]}]}"#;
        let bare = r#"[{"label": "a b c d e", "description": "x", "quotes": ["q"]}]"#;
        let a = parse_structured(wrapped, SchemaTag::CodeList).unwrap();
        let b = parse_structured(bare, SchemaTag::CodeList).unwrap();
        assert_eq!(a, b);
        assert!(parse_structured(r#"{"codes": [{"label": "x"}]}"#, SchemaTag::CodeList).is_err());
    }

    #[test]
    fn relation_labels() {
        let r = parse_structured(r#"{"relation": "Subordinate"}"#, SchemaTag::RelationLabel).unwrap();
        assert_eq!(r, Structured::Relation(RelationKind::Subordinate));
        assert!(parse_structured(r#"{"relation": "cousin"}"#, SchemaTag::RelationLabel).is_err());
    }

    #[test]
    fn assignments_accept_strings_or_objects() {
        let r = parse_structured(r#"{"codes": ["cid_000001", {"code_id": "cid_000002"}]}"#, SchemaTag::AssignmentList).unwrap();
        assert_eq!(r, Structured::Assignments(vec!["cid_000001".into(), "cid_000002".into()]));
    }

    #[test]
    fn groups_accept_id_aliases() {
        let s = parse_structured(r#"{"subthemes": [{"label": "L", "description": "D", "code_ids": ["cid_000001"]}]}"#, SchemaTag::SubthemeList).unwrap();
        assert_eq!(s.into_subthemes().unwrap()[0].members, vec!["cid_000001"]);
        let t = parse_structured(r#"{"themes": [{"label": "L", "subtheme_ids": ["sid_000001"]}]}"#, SchemaTag::ThemeList).unwrap();
        assert_eq!(t.into_themes().unwrap()[0].members, vec!["sid_000001"]);
    }
}
