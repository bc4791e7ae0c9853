//! Report documents: a human-readable block followed by machine-readable
//! `key,value` lines. Every integer and rational printed in the CSV section
//! parses back to exactly the reported value.

use std::fmt::Display;

#[derive(Debug, Default)]
pub struct ReportDocument {
    text: Vec<String>,
    csv: Vec<(String, String)>,
}

impl ReportDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.text.push(s.into());
    }

    pub fn kv(&mut self, key: impl Into<String>, value: impl Display) {
        self.csv.push((key.into(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.text {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("key,value\n");
        for (k, v) in &self.csv {
            out.push_str(k);
            out.push(',');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
