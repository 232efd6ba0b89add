//! Structured text reports: nested key-value sections rendered with stable
//! ordering, so a report is byte-identical across runs for the same inputs,
//! seed and version.

use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub enum Item {
    Kv(String, String),
    Section(Section),
}

#[derive(Debug, Clone, Default)]
pub struct Section {
    pub title: String,
    pub items: Vec<Item>,
}

impl Section {
    pub fn new(title: impl Into<String>) -> Self {
        Section {
            title: title.into(),
            items: Vec::new(),
        }
    }

    pub fn kv(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.items
            .push(Item::Kv(key.into(), value.to_string()));
        self
    }

    pub fn child(&mut self, title: impl Into<String>) -> &mut Section {
        self.items.push(Item::Section(Section::new(title)));
        match self.items.last_mut() {
            Some(Item::Section(s)) => s,
            _ => unreachable!(),
        }
    }

    fn render_into(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let _ = writeln!(out, "{pad}{}:", self.title);
        for item in &self.items {
            match item {
                Item::Kv(k, v) => {
                    let _ = writeln!(out, "{pad}  {k}: {v}");
                }
                Item::Section(s) => s.render_into(out, depth + 1),
            }
        }
    }
}

/// A whole report document.
#[derive(Debug, Clone)]
pub struct Report {
    pub root: Section,
}

impl Report {
    pub fn new(command: &str) -> Self {
        let mut root = Section::new(format!("report {command}"));
        root.kv("version", env!("CARGO_PKG_VERSION"));
        Report { root }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.root.render_into(&mut out, 0);
        out
    }
}

/// Hex SHA-256 of the input file bytes, recorded in every report.
pub fn digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        let _ = write!(s, "{b:02x}");
    }
    s
}
