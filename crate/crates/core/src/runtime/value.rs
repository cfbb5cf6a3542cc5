use std::fmt;

use serde::{Deserialize, Serialize};

/// A runtime value: text, an integer, or a list of values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Text(String),
    Int(i64),
    List(Vec<Value>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("type error: expected {expected}, found {found}")]
pub struct TypeError {
    pub expected: &'static str,
    pub found: &'static str,
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Text(_) => "text",
            Value::Int(_) => "integer",
            Value::List(_) => "list",
        }
    }

    fn mismatch(&self, expected: &'static str) -> TypeError {
        TypeError {
            expected,
            found: self.type_name(),
        }
    }

    /// Text rendering used by interpolation and concatenation; lists are
    /// not implicitly rendered.
    pub fn render(&self) -> Result<String, TypeError> {
        match self {
            Value::Text(s) => Ok(s.clone()),
            Value::Int(i) => Ok(i.to_string()),
            Value::List(_) => Err(self.mismatch("text or integer")),
        }
    }

    pub fn as_text(&self) -> Result<&str, TypeError> {
        match self {
            Value::Text(s) => Ok(s),
            other => Err(other.mismatch("text")),
        }
    }

    pub fn as_int(&self) -> Result<i64, TypeError> {
        match self {
            Value::Int(i) => Ok(*i),
            other => Err(other.mismatch("integer")),
        }
    }

    pub fn as_list(&self) -> Result<&[Value], TypeError> {
        match self {
            Value::List(items) => Ok(items),
            other => Err(other.mismatch("list")),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Value::Text(s) => s.is_empty(),
            Value::Int(_) => false,
            Value::List(items) => items.is_empty(),
        }
    }

    /// Bytes of text held by this value, counted recursively through lists.
    pub fn text_bytes(&self) -> usize {
        match self {
            Value::Text(s) => s.len(),
            Value::Int(_) => 0,
            Value::List(items) => items.iter().map(Value::text_bytes).sum(),
        }
    }

    /// Splits text on line feeds, dropping a trailing carriage return from
    /// each line.
    pub fn split_lines(&self) -> Result<Value, TypeError> {
        let text = self.as_text()?;
        if text.is_empty() {
            return Ok(Value::List(Vec::new()));
        }
        Ok(Value::List(
            text.split('\n')
                .map(|l| Value::Text(l.strip_suffix('\r').unwrap_or(l).to_string()))
                .collect(),
        ))
    }

    /// Trims each text item and drops the ones left empty.
    pub fn strip_blank(&self) -> Result<Value, TypeError> {
        let mut out = Vec::new();
        for item in self.as_list()? {
            match item {
                Value::Text(s) => {
                    let t = s.trim();
                    if !t.is_empty() {
                        out.push(Value::Text(t.to_string()));
                    }
                }
                other => out.push(other.clone()),
            }
        }
        Ok(Value::List(out))
    }

    /// Joins rendered list items with `separator`.
    pub fn join(&self, separator: &str) -> Result<Value, TypeError> {
        let parts = self
            .as_list()?
            .iter()
            .map(Value::render)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Value::Text(parts.join(separator)))
    }

    /// List push, or text append with `separator` inserted only between
    /// non-empty text and the new item.
    pub fn append(&self, item: &Value, separator: Option<&str>) -> Result<Value, TypeError> {
        match self {
            Value::List(items) => {
                if separator.is_some() {
                    return Err(TypeError {
                        expected: "text target when a separator is given",
                        found: "list",
                    });
                }
                let mut items = items.clone();
                items.push(item.clone());
                Ok(Value::List(items))
            }
            Value::Text(s) => {
                let item = item.render()?;
                let mut out = s.clone();
                if !out.is_empty() {
                    out.push_str(separator.unwrap_or(""));
                }
                out.push_str(&item);
                Ok(Value::Text(out))
            }
            Value::Int(_) => Err(self.mismatch("text or list")),
        }
    }

    pub fn length(&self) -> Result<Value, TypeError> {
        match self {
            Value::Text(s) => Ok(Value::Int(s.chars().count() as i64)),
            Value::List(items) => Ok(Value::Int(items.len() as i64)),
            Value::Int(_) => Err(self.mismatch("text or list")),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("values serialize")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v:?}")?;
                }
                f.write_str("]")
            }
        }
    }
}
