//! ISO 10303-21 ("STEP physical file") reader.
//!
//! The reader is total: any byte sequence yields either a [`StepFile`] or a
//! [`StepError`]. Instances are kept in file order with their raw attribute
//! values; interpretation happens in [`crate::ingest`].

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum StepValue {
    String(String),
    Real(f64),
    Integer(i64),
    Enum(String),
    Ref(u64),
    List(Vec<StepValue>),
    /// `$`
    Unset,
    /// `*`
    Derived,
    /// `IFCLABEL('x')` and the parts of a complex instance.
    Typed(String, Vec<StepValue>),
    Binary(String),
}

impl StepValue {
    pub fn as_ref_id(&self) -> Option<u64> {
        match self {
            StepValue::Ref(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            StepValue::Real(v) => Some(*v),
            StepValue::Integer(v) => Some(*v as f64),
            StepValue::Typed(_, inner) if inner.len() == 1 => inner[0].as_f64(),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            StepValue::String(s) => Some(s),
            StepValue::Typed(_, inner) if inner.len() == 1 => inner[0].as_str(),
            _ => None,
        }
    }

    pub fn as_enum(&self) -> Option<&str> {
        match self {
            StepValue::Enum(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[StepValue]> {
        match self {
            StepValue::List(v) => Some(v),
            _ => None,
        }
    }

    fn collect_refs(&self, out: &mut Vec<u64>) {
        match self {
            StepValue::Ref(r) => out.push(*r),
            StepValue::List(v) | StepValue::Typed(_, v) => v.iter().for_each(|x| x.collect_refs(out)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepEntity {
    pub instance_id: u64,
    pub type_name: String,
    pub attributes: Vec<StepValue>,
    pub line: usize,
}

impl StepEntity {
    pub fn attr(&self, i: usize) -> Option<&StepValue> {
        self.attributes.get(i)
    }

    pub fn references(&self) -> Vec<u64> {
        let mut out = Vec::new();
        self.attributes.iter().for_each(|a| a.collect_refs(&mut out));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StepHeader {
    pub entries: Vec<(String, Vec<StepValue>)>,
}

impl StepHeader {
    /// Schema identifiers from `FILE_SCHEMA`.
    pub fn schemas(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(n, _)| n == "FILE_SCHEMA")
            .flat_map(|(_, a)| a.iter())
            .filter_map(StepValue::as_list)
            .flatten()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepFile {
    pub header: StepHeader,
    pub entities: Vec<StepEntity>,
    index: HashMap<u64, usize>,
}

impl StepFile {
    pub fn get(&self, id: u64) -> Option<&StepEntity> {
        self.index.get(&id).map(|&i| &self.entities[i])
    }

    pub fn of_type<'a>(&'a self, type_name: &'a str) -> impl Iterator<Item = &'a StepEntity> + 'a {
        self.entities.iter().filter(move |e| e.type_name == type_name)
    }

    /// References that point at no instance in the file.
    pub fn dangling_references(&self) -> Vec<u64> {
        let mut missing = BTreeSet::new();
        for e in &self.entities {
            for r in e.references() {
                if !self.index.contains_key(&r) {
                    missing.insert(r);
                }
            }
        }
        missing.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("syntax error at {line}:{column}: expected {expected}")]
    Syntax { line: usize, column: usize, expected: String },
    #[error("instance #{id} defined twice (line {line})")]
    DuplicateInstance { id: u64, line: usize },
    #[error("unresolved references: {}", fmt_refs(.0))]
    DanglingReferences(Vec<u64>),
}

fn fmt_refs(r: &[u64]) -> String {
    r.iter().map(|i| format!("#{i}")).collect::<Vec<_>>().join(", ")
}

/// Parses a Part-21 file and rejects unresolved references.
pub fn parse_step(bytes: &[u8]) -> Result<StepFile, StepError> {
    let file = parse_step_unchecked(bytes)?;
    let dangling = file.dangling_references();
    if dangling.is_empty() {
        Ok(file)
    } else {
        Err(StepError::DanglingReferences(dangling))
    }
}

/// Parses a Part-21 file without resolving references.
pub fn parse_step_unchecked(bytes: &[u8]) -> Result<StepFile, StepError> {
    let mut p = Parser { b: bytes, pos: 0, line: 1, col: 1 };
    p.keyword_exact("ISO-10303-21")?;
    p.expect(b';')?;
    p.keyword_exact("HEADER")?;
    p.expect(b';')?;
    let mut header = StepHeader::default();
    loop {
        p.skip_ws()?;
        let name = p.keyword()?;
        if name == "ENDSEC" {
            p.expect(b';')?;
            break;
        }
        let args = p.arg_list(0)?;
        p.expect(b';')?;
        header.entries.push((name, args));
    }

    let mut file = StepFile { header, ..Default::default() };
    let mut saw_data = false;
    loop {
        p.skip_ws()?;
        let kw = p.keyword()?;
        match kw.as_str() {
            "DATA" => {
                saw_data = true;
                p.skip_ws()?;
                if p.peek() == Some(b'(') {
                    // DATA('name', ('schema')); section parameters, Part 21 ed. 3
                    p.arg_list(0)?;
                }
                p.expect(b';')?;
                p.data_section(&mut file)?;
            }
            "END-ISO-10303-21" => {
                p.expect(b';')?;
                break;
            }
            _ if !saw_data => return Err(p.err("DATA")),
            _ => return Err(p.err("DATA or END-ISO-10303-21")),
        }
    }
    Ok(file)
}

struct Parser<'a> {
    b: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, expected: &str) -> StepError {
        StepError::Syntax { line: self.line, column: self.col, expected: expected.to_string() }
    }

    fn peek(&self) -> Option<u8> {
        self.b.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) -> Result<(), StepError> {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') if self.b.get(self.pos + 1) == Some(&b'*') => {
                    let (line, col) = (self.line, self.col);
                    self.bump();
                    self.bump();
                    loop {
                        match self.bump() {
                            Some(b'*') if self.peek() == Some(b'/') => {
                                self.bump();
                                break;
                            }
                            Some(_) => {}
                            None => {
                                return Err(StepError::Syntax { line, column: col, expected: "end of comment".into() })
                            }
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), StepError> {
        self.skip_ws()?;
        if self.peek() == Some(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(&format!("`{}`", c as char)))
        }
    }

    fn keyword(&mut self) -> Result<String, StepError> {
        self.skip_ws()?;
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'-' {
                self.bump();
            } else {
                break;
            }
        }
        if start == self.pos || !self.b[start].is_ascii_alphabetic() {
            return Err(self.err("keyword"));
        }
        Ok(String::from_utf8_lossy(&self.b[start..self.pos]).to_ascii_uppercase())
    }

    fn keyword_exact(&mut self, kw: &str) -> Result<(), StepError> {
        let save = (self.pos, self.line, self.col);
        match self.keyword() {
            Ok(k) if k == kw => Ok(()),
            _ => {
                (self.pos, self.line, self.col) = save;
                self.skip_ws()?;
                Err(self.err(kw))
            }
        }
    }

    fn data_section(&mut self, file: &mut StepFile) -> Result<(), StepError> {
        loop {
            self.skip_ws()?;
            match self.peek() {
                Some(b'#') => {}
                Some(c) if c.is_ascii_alphabetic() => {
                    self.keyword_exact("ENDSEC")?;
                    return self.expect(b';');
                }
                _ => return Err(self.err("instance or ENDSEC")),
            }
            let line = self.line;
            self.bump();
            let id = self.unsigned()?;
            self.expect(b'=')?;
            self.skip_ws()?;
            let (type_name, attributes) = if self.peek() == Some(b'(') {
                // complex instance: (A(..) B(..))
                self.bump();
                let mut parts = Vec::new();
                loop {
                    self.skip_ws()?;
                    if self.peek() == Some(b')') {
                        self.bump();
                        break;
                    }
                    let name = self.keyword()?;
                    let args = self.arg_list(1)?;
                    parts.push(StepValue::Typed(name, args));
                }
                ("COMPLEX".to_string(), parts)
            } else {
                let name = self.keyword()?;
                (name, self.arg_list(0)?)
            };
            self.expect(b';')?;
            if file.index.insert(id, file.entities.len()).is_some() {
                return Err(StepError::DuplicateInstance { id, line });
            }
            file.entities.push(StepEntity { instance_id: id, type_name, attributes, line });
        }
    }

    fn unsigned(&mut self) -> Result<u64, StepError> {
        let start = self.pos;
        let mut v: u64 = 0;
        while let Some(c @ b'0'..=b'9') = self.peek() {
            v = v
                .checked_mul(10)
                .and_then(|v| v.checked_add((c - b'0') as u64))
                .ok_or_else(|| self.err("instance id within u64"))?;
            self.bump();
        }
        if start == self.pos {
            return Err(self.err("instance number"));
        }
        Ok(v)
    }

    fn arg_list(&mut self, depth: usize) -> Result<Vec<StepValue>, StepError> {
        if depth > MAX_DEPTH {
            return Err(self.err("shallower nesting"));
        }
        self.expect(b'(')?;
        let mut out = Vec::new();
        self.skip_ws()?;
        if self.peek() == Some(b')') {
            self.bump();
            return Ok(out);
        }
        loop {
            out.push(self.value(depth + 1)?);
            self.skip_ws()?;
            match self.bump() {
                Some(b',') => continue,
                Some(b')') => return Ok(out),
                _ => return Err(self.err("`,` or `)`")),
            }
        }
    }

    fn value(&mut self, depth: usize) -> Result<StepValue, StepError> {
        self.skip_ws()?;
        match self.peek() {
            Some(b'$') => {
                self.bump();
                Ok(StepValue::Unset)
            }
            Some(b'*') => {
                self.bump();
                Ok(StepValue::Derived)
            }
            Some(b'#') => {
                self.bump();
                Ok(StepValue::Ref(self.unsigned()?))
            }
            Some(b'\'') => self.string().map(StepValue::String),
            Some(b'"') => self.binary(),
            Some(b'.') => self.enumeration(),
            Some(b'(') => Ok(StepValue::List(self.arg_list(depth)?)),
            Some(c) if c == b'+' || c == b'-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.keyword()?;
                Ok(StepValue::Typed(name, self.arg_list(depth)?))
            }
            _ => Err(self.err("attribute value")),
        }
    }

    fn enumeration(&mut self) -> Result<StepValue, StepError> {
        self.bump();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.bump();
            } else {
                break;
            }
        }
        let tok = String::from_utf8_lossy(&self.b[start..self.pos]).to_ascii_uppercase();
        if tok.is_empty() || self.peek() != Some(b'.') {
            return Err(self.err("enumeration `.NAME.`"));
        }
        self.bump();
        Ok(StepValue::Enum(tok))
    }

    fn binary(&mut self) -> Result<StepValue, StepError> {
        self.bump();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_hexdigit() {
                self.bump();
            } else {
                break;
            }
        }
        let tok = String::from_utf8_lossy(&self.b[start..self.pos]).into_owned();
        if self.peek() != Some(b'"') {
            return Err(self.err("closing `\"` of binary"));
        }
        self.bump();
        Ok(StepValue::Binary(tok))
    }

    fn number(&mut self) -> Result<StepValue, StepError> {
        let start = self.pos;
        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
            self.bump();
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.bump();
        }
        if self.pos == digits_start {
            return Err(self.err("digit"));
        }
        let mut real = false;
        if self.peek() == Some(b'.') {
            real = true;
            self.bump();
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'E') | Some(b'e')) {
            real = true;
            self.bump();
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.bump();
            }
            let exp_start = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
            if exp_start == self.pos {
                return Err(self.err("exponent digits"));
            }
        }
        // the slice is pure ASCII by construction
        let text = std::str::from_utf8(&self.b[start..self.pos]).unwrap_or("");
        if real {
            let norm = text.replace(".E", ".0E").replace(".e", ".0e");
            norm.parse::<f64>().map(StepValue::Real).map_err(|_| self.err("real number"))
        } else {
            match text.parse::<i64>() {
                Ok(v) => Ok(StepValue::Integer(v)),
                // out-of-range integers degrade to reals instead of failing
                Err(_) => text.parse::<f64>().map(StepValue::Real).map_err(|_| self.err("integer")),
            }
        }
    }

    fn string(&mut self) -> Result<String, StepError> {
        let (line, column) = (self.line, self.col);
        self.bump();
        let mut raw = Vec::new();
        loop {
            match self.bump() {
                Some(b'\'') => {
                    if self.peek() == Some(b'\'') {
                        self.bump();
                        raw.push(b'\'');
                    } else {
                        break;
                    }
                }
                Some(c) => raw.push(c),
                None => return Err(StepError::Syntax { line, column, expected: "closing `'`".into() }),
            }
        }
        decode_string(&raw).ok_or(StepError::Syntax { line, column, expected: "valid string escape".into() })
    }
}

/// Decodes Part-21 control directives (`\\`, `\S\`, `\X\`, `\X2\`, `\X4\`, `\P?\`).
fn decode_string(raw: &[u8]) -> Option<String> {
    let mut out = String::new();
    let mut i = 0;
    let hex = |s: &[u8]| -> Option<u32> { u32::from_str_radix(std::str::from_utf8(s).ok()?, 16).ok() };
    while i < raw.len() {
        let c = raw[i];
        if c != b'\\' {
            if c.is_ascii() {
                out.push(c as char);
                i += 1;
            } else {
                // not Part-21 conformant; keep the UTF-8 run as-is
                let end = raw[i..].iter().position(|b| b.is_ascii()).map_or(raw.len(), |p| i + p);
                out.push_str(&String::from_utf8_lossy(&raw[i..end]));
                i = end;
            }
            continue;
        }
        let rest = &raw[i..];
        if rest.starts_with(b"\\\\") {
            out.push('\\');
            i += 2;
        } else if rest.starts_with(b"\\S\\") && rest.len() >= 4 {
            out.push(char::from_u32(rest[3] as u32 + 128)?);
            i += 4;
        } else if rest.starts_with(b"\\X\\") && rest.len() >= 5 {
            out.push(char::from_u32(hex(&rest[3..5])?)?);
            i += 5;
        } else if rest.starts_with(b"\\X2\\") || rest.starts_with(b"\\X4\\") {
            let width = if rest[2] == b'2' { 4 } else { 8 };
            let body_start = i + 4;
            let end = raw[body_start..].windows(4).position(|w| w == b"\\X0\\")? + body_start;
            let body = &raw[body_start..end];
            if !body.len().is_multiple_of(width) {
                return None;
            }
            if width == 4 {
                let units: Option<Vec<u16>> = body.chunks(4).map(|c| hex(c).map(|v| v as u16)).collect();
                out.push_str(&String::from_utf16(&units?).ok()?);
            } else {
                for c in body.chunks(8) {
                    out.push(char::from_u32(hex(c)?)?);
                }
            }
            i = end + 4;
        } else if rest.starts_with(b"\\P") && rest.len() >= 4 && rest[3] == b'\\' {
            i += 4;
        } else {
            out.push('\\');
            i += 1;
        }
    }
    Some(out)
}
