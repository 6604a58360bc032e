use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::write_atomic;

/// An in-memory CSV document: optional `#` comment lines, a mandatory
/// header, then rows. Numbers are formatted with Rust's locale-free
/// shortest round-trip representation.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            comments: Vec::new(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) -> Result<()> {
        let row: Vec<String> = row.into_iter().map(|v| v.to_string()).collect();
        if row.len() != self.header.len() {
            return Err(Error::shape("csv row", &[row.len()], &[self.header.len()]));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn comments(&self) -> &[String] {
        &self.comments
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.comments {
            let _ = writeln!(s, "# {c}");
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut comments = Vec::new();
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = loop {
            match lines.next() {
                Some(l) if l.starts_with('#') => {
                    comments.push(l.trim_start_matches('#').trim().to_string())
                }
                Some(l) => break l.split(',').map(str::to_string).collect::<Vec<_>>(),
                None => return Err(Error::InvalidArgument("csv has no header".into())),
            }
        };
        let mut t = Self {
            comments,
            header,
            rows: Vec::new(),
        };
        for l in lines {
            t.push(l.split(','))?;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let mut t = CsvTable::new(["a", "b"]);
        t.comment("untrained network");
        t.push([1.5, 0.1]).unwrap();
        assert!(t.push([1.0]).is_err());
        let text = t.render();
        assert_eq!(text, "# untrained network\na,b\n1.5,0.1\n");
        assert_eq!(CsvTable::parse(&text).unwrap(), t);
    }
}
