//! Line-oriented `key=value` reports ending in `RESULT=PASS|FAIL`.

use std::fmt;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    entries: Vec<(String, String)>,
    pass: bool,
}

impl Report {
    pub fn new() -> Self {
        Self { entries: Vec::new(), pass: true }
    }

    pub fn kv(&mut self, key: impl fmt::Display, value: impl fmt::Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn set_pass(&mut self, pass: bool) {
        self.pass = pass;
    }

    /// Fails the report unless `ok`; never turns a failure back into a pass.
    pub fn require(&mut self, ok: bool) {
        self.pass &= ok;
    }

    pub fn passed(&self) -> bool {
        self.pass
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Parses rendered text. Lines without `=` are ignored.
    pub fn parse(text: &str) -> Option<Self> {
        let mut r = Report::new();
        let mut result = None;
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            if k == "RESULT" {
                result = Some(v == "PASS");
            } else {
                r.kv(k, v);
            }
        }
        r.pass = result?;
        Some(r)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        writeln!(f, "RESULT={}", if self.pass { "PASS" } else { "FAIL" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let mut r = Report::new();
        r.kv("rounds", 3).kv("success", "1.0000");
        assert_eq!(r.to_string(), "rounds=3\nsuccess=1.0000\nRESULT=PASS\n");
        r.require(false);
        r.require(true);
        let back = Report::parse(&r.to_string()).unwrap();
        assert!(!back.passed());
        assert_eq!(back.get("rounds"), Some("3"));
        assert!(Report::parse("a=1\n").is_none());
    }
}
