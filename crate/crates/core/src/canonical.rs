//! Canonical text form and content digests.
//!
//! Every structured payload in the engine (fragments, series, descriptors,
//! snapshots, records) is rendered into one canonical text form before it is
//! hashed or persisted. The form is deliberately small:
//!
//! - maps render as `{key=value,key=value}` with keys in ascending order,
//! - lists render as `[v,v,v]` (position is meaning),
//! - integers render as plain digits,
//! - floats render in the shortest decimal that round-trips, always carrying
//!   a `.` or exponent so they never collide with integers,
//! - strings are double-quoted with backslash escapes.
//!
//! Rendering the same value twice yields identical bytes, so
//! `digest(render(v))` is a stable content address.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// A hierarchical value: the payload tree of fragments, records, and tables.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i128),
    Float(f64),
    Text(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("canonical parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("expected {expected} at key `{key}`")]
    Field { key: String, expected: &'static str },
}

impl Value {
    pub fn map() -> Value {
        Value::Map(BTreeMap::new())
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    /// Inserts into a map value; panics if `self` is not a map.
    pub fn set(&mut self, key: &str, v: Value) -> &mut Self {
        match self {
            Value::Map(m) => {
                m.insert(key.to_string(), v);
            }
            _ => panic!("Value::set on non-map"),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        match self {
            Value::Map(m) => m.get(key),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Numeric view: integers widen to f64, floats pass through.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => i64::try_from(*i).ok(),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Value::Int(i) => u64::try_from(*i).ok(),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Text(s) if s == "true" => Some(true),
            Value::Text(s) if s == "false" => Some(false),
            _ => None,
        }
    }

    /// Typed map lookup helpers used by the record readers.
    pub fn req<'a>(&'a self, key: &str) -> Result<&'a Value, CanonicalError> {
        self.get(key).ok_or(CanonicalError::Field {
            key: key.to_string(),
            expected: "present field",
        })
    }

    pub fn req_str(&self, key: &str) -> Result<&str, CanonicalError> {
        self.req(key)?.as_str().ok_or(CanonicalError::Field {
            key: key.to_string(),
            expected: "string",
        })
    }

    pub fn req_u64(&self, key: &str) -> Result<u64, CanonicalError> {
        self.req(key)?.as_u64().ok_or(CanonicalError::Field {
            key: key.to_string(),
            expected: "unsigned integer",
        })
    }

    pub fn req_i64(&self, key: &str) -> Result<i64, CanonicalError> {
        self.req(key)?.as_i64().ok_or(CanonicalError::Field {
            key: key.to_string(),
            expected: "integer",
        })
    }

    pub fn req_f64(&self, key: &str) -> Result<f64, CanonicalError> {
        self.req(key)?.as_f64().ok_or(CanonicalError::Field {
            key: key.to_string(),
            expected: "number",
        })
    }

    pub fn req_bool(&self, key: &str) -> Result<bool, CanonicalError> {
        self.req(key)?.as_bool().ok_or(CanonicalError::Field {
            key: key.to_string(),
            expected: "bool",
        })
    }

    pub fn req_list<'a>(&'a self, key: &str) -> Result<&'a [Value], CanonicalError> {
        self.req(key)?.as_list().ok_or(CanonicalError::Field {
            key: key.to_string(),
            expected: "list",
        })
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Text(if b { "true" } else { "false" }.to_string())
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i128)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v as i128)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

fn is_bare_key(k: &str) -> bool {
    let mut chars = k.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn write_float(out: &mut String, f: f64) {
    if f.is_nan() {
        out.push_str("nan");
    } else if f.is_infinite() {
        out.push_str(if f > 0.0 { "inf" } else { "-inf" });
    } else {
        let s = format!("{f}");
        out.push_str(&s);
        // floats always carry a decimal point or exponent so they parse
        // back as floats, never as integers
        if !s.contains(['.', 'e', 'E']) {
            out.push_str(".0");
        }
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Float(f) => write_float(out, *f),
        Value::Text(s) => write_string(out, s),
        Value::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Map(entries) => {
            out.push('{');
            for (i, (k, item)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if is_bare_key(k) {
                    out.push_str(k);
                } else {
                    write_string(out, k);
                }
                out.push('=');
                write_value(out, item);
            }
            out.push('}');
        }
    }
}

/// Renders a value into its canonical text form.
pub fn render(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v);
    out
}

/// Lowercase hex SHA-256 of raw bytes: the content address of a payload.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Digest of the canonical text form of a value.
pub fn digest_value(v: &Value) -> String {
    digest_bytes(render(v).as_bytes())
}

/// First 12 hex chars of a value digest, used to build content-derived names.
pub fn short_digest(v: &Value) -> String {
    digest_value(v)[..12].to_string()
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, CanonicalError> {
        Err(CanonicalError::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn expect(&mut self, b: u8) -> Result<(), CanonicalError> {
        match self.bump() {
            Some(got) if got == b => Ok(()),
            Some(got) => self.err(format!("expected `{}`, found `{}`", b as char, got as char)),
            None => self.err(format!("expected `{}`, found end of input", b as char)),
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn value(&mut self) -> Result<Value, CanonicalError> {
        self.skip_ws();
        match self.peek() {
            Some(b'{') => self.map(),
            Some(b'[') => self.list(),
            Some(b'"') => Ok(Value::Text(self.string()?)),
            Some(_) => self.scalar(),
            None => self.err("expected value, found end of input"),
        }
    }

    fn map(&mut self) -> Result<Value, CanonicalError> {
        self.expect(b'{')?;
        let mut entries = BTreeMap::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(Value::Map(entries));
        }
        loop {
            self.skip_ws();
            let key = if self.peek() == Some(b'"') {
                self.string()?
            } else {
                self.bare_key()?
            };
            self.skip_ws();
            self.expect(b'=')?;
            let v = self.value()?;
            entries.insert(key, v);
            self.skip_ws();
            match self.bump() {
                Some(b',') => continue,
                Some(b'}') => return Ok(Value::Map(entries)),
                Some(c) => return self.err(format!("expected `,` or `}}`, found `{}`", c as char)),
                None => return self.err("unterminated map"),
            }
        }
    }

    fn list(&mut self) -> Result<Value, CanonicalError> {
        self.expect(b'[')?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Value::List(items));
        }
        loop {
            items.push(self.value()?);
            self.skip_ws();
            match self.bump() {
                Some(b',') => continue,
                Some(b']') => return Ok(Value::List(items)),
                Some(c) => return self.err(format!("expected `,` or `]`, found `{}`", c as char)),
                None => return self.err("unterminated list"),
            }
        }
    }

    fn bare_key(&mut self) -> Result<String, CanonicalError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            let c = b as char;
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return self.err("expected map key");
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn string(&mut self) -> Result<String, CanonicalError> {
        self.expect(b'"')?;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated string"),
                Some(b'"') => return Ok(out),
                Some(b'\\') => match self.bump() {
                    Some(b'"') => out.push('"'),
                    Some(b'\\') => out.push('\\'),
                    Some(b'n') => out.push('\n'),
                    Some(b'r') => out.push('\r'),
                    Some(b't') => out.push('\t'),
                    Some(b'u') => {
                        self.expect(b'{')?;
                        let start = self.pos;
                        while self.peek() != Some(b'}') {
                            if self.bump().is_none() {
                                return self.err("unterminated \\u escape");
                            }
                        }
                        let hex_str = std::str::from_utf8(&self.bytes[start..self.pos])
                            .map_err(|_| CanonicalError::Parse {
                                pos: start,
                                msg: "invalid utf8 in escape".into(),
                            })?;
                        let code = u32::from_str_radix(hex_str, 16)
                            .ok()
                            .and_then(char::from_u32);
                        match code {
                            Some(c) => out.push(c),
                            None => return self.err("invalid \\u escape"),
                        }
                        self.expect(b'}')?;
                    }
                    _ => return self.err("invalid escape"),
                },
                Some(b) => {
                    // re-read as utf8 from this position
                    self.pos -= 1;
                    let rest = std::str::from_utf8(&self.bytes[self.pos..]).map_err(|_| {
                        CanonicalError::Parse {
                            pos: self.pos,
                            msg: "invalid utf8".into(),
                        }
                    })?;
                    let c = rest.chars().next().unwrap_or(b as char);
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
    }

    fn scalar(&mut self) -> Result<Value, CanonicalError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            let c = b as char;
            if c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.' | '_') {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return self.err("expected scalar");
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| {
            CanonicalError::Parse {
                pos: start,
                msg: "invalid utf8".into(),
            }
        })?;
        match tok {
            "nan" => return Ok(Value::Float(f64::NAN)),
            "inf" => return Ok(Value::Float(f64::INFINITY)),
            "-inf" => return Ok(Value::Float(f64::NEG_INFINITY)),
            _ => {}
        }
        if tok.contains(['.', 'e', 'E']) {
            match tok.parse::<f64>() {
                Ok(f) => Ok(Value::Float(f)),
                Err(_) => Err(CanonicalError::Parse {
                    pos: start,
                    msg: format!("invalid float `{tok}`"),
                }),
            }
        } else {
            match tok.parse::<i128>() {
                Ok(i) => Ok(Value::Int(i)),
                Err(_) => Err(CanonicalError::Parse {
                    pos: start,
                    msg: format!("invalid integer `{tok}`"),
                }),
            }
        }
    }
}

/// Parses canonical text back into a value. Accepts surrounding whitespace.
pub fn parse(text: &str) -> Result<Value, CanonicalError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let v = p.value()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return p.err("trailing input after value");
    }
    Ok(v)
}
