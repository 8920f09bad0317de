//! Flat `key = value` experiment files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value ws* comment?
//! key     := [a-z0-9_.]+
//! value   := any text not containing '#'
//! ```
//!
//! Keys may appear once. Lists are comma separated. Numeric grids are
//! either a list or `lin:start:stop:count` / `log:start:stop:count`. `inf`
//! is accepted wherever a real is expected.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    used: std::cell::Cell<bool>,
}

/// Parsed entries in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyValues {
    entries: Vec<Entry>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(Error::Config { line, message: format!("expected `key = value`, got `{body}`") });
            };
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.') {
                return Err(Error::Config { line, message: format!("invalid key `{key}`") });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            entries.push(Entry { key: key.to_string(), value: value.trim().to_string(), line, used: false.into() });
        }
        Ok(Self { entries })
    }

    /// Entries from the `# key = value` header of a curve file: leading
    /// comment lines with the `#` removed, up to the first other line.
    pub fn parse_header(text: &str) -> Result<Self> {
        let header: Vec<&str> = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#'))
            .collect();
        Self::parse(&header.join("\n"))
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self> {
        let text: Vec<String> = pairs.into_iter().map(|(k, v)| format!("{} = {}", k.into(), v.into())).collect();
        Self::parse(&text.join("\n"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.iter().any(|e| e.key == key)
    }

    fn entry(&self, key: &str) -> Option<&Entry> {
        let e = self.entries.iter().find(|e| e.key == key)?;
        e.used.set(true);
        Some(e)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.iter().find(|e| e.key == key).map_or(0, |e| e.line)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        parse_real(&e.value).map(Some).map_err(|message| Error::Config { line: e.line, message })
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        e.value
            .replace('_', "")
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config { line: e.line, message: format!("`{key}` must be a non-negative integer, got `{}`", e.value) })
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        match e.value.as_str() {
            "true" | "yes" | "1" => Ok(Some(true)),
            "false" | "no" | "0" => Ok(Some(false)),
            v => Err(Error::Config { line: e.line, message: format!("`{key}` must be true or false, got `{v}`") }),
        }
    }

    pub fn get_list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
    }

    /// A list of reals or a `lin:`/`log:` grid.
    pub fn get_grid(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        parse_grid(&e.value).map(Some).map_err(|message| Error::Config { line: e.line, message })
    }

    /// Error on the first key nobody asked for.
    pub fn finish(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used.get()) {
            Some(e) => Err(Error::Config { line: e.line, message: format!("unknown key `{}`", e.key) }),
            None => Ok(()),
        }
    }
}

pub fn parse_real(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|_| format!("expected a number, got `{t}`")),
    }
}

/// `a, b, c`, `lin:start:stop:count` or `log:start:stop:count`.
pub fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    let spaced = |kind: &str, rest: &str| -> std::result::Result<Vec<f64>, String> {
        let parts: Vec<&str> = rest.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(format!("`{kind}:` grids take start:stop:count, got `{s}`"));
        };
        let (a, b) = (parse_real(a)?, parse_real(b)?);
        let n: usize = n.trim().parse().map_err(|_| format!("bad grid count `{n}`"))?;
        if n == 0 || !(a.is_finite() && b.is_finite()) {
            return Err(format!("bad grid `{s}`"));
        }
        if n == 1 {
            return Ok(vec![a]);
        }
        let t = |i: usize| i as f64 / (n - 1) as f64;
        match kind {
            "lin" => Ok((0..n).map(|i| if i == n - 1 { b } else { a + (b - a) * t(i) }).collect()),
            _ => {
                if !(a > 0.0 && b > 0.0) {
                    return Err(format!("log grid needs positive bounds, got `{s}`"));
                }
                Ok((0..n).map(|i| if i == n - 1 { b } else { (a.ln() + (b.ln() - a.ln()) * t(i)).exp() }).collect())
            }
        }
    };
    if let Some(rest) = s.strip_prefix("lin:") {
        spaced("lin", rest)
    } else if let Some(rest) = s.strip_prefix("log:") {
        spaced("log", rest)
    } else {
        s.split(',').map(parse_real).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let kv = KeyValues::parse("# experiment\n\nquantity = correlation  # main\nsweep=d\nmc.seed = 7\nm = inf\n").unwrap();
        assert_eq!(kv.get("quantity"), Some("correlation"));
        assert_eq!(kv.get("sweep"), Some("d"));
        assert_eq!(kv.get_u64("mc.seed").unwrap(), Some(7));
        assert_eq!(kv.get_f64("m").unwrap(), Some(f64::INFINITY));
        assert!(kv.finish().is_ok());
    }

    #[test]
    fn reports_line_numbers() {
        let err = KeyValues::parse("a = 1\n\nnot an entry\n").unwrap_err();
        assert_eq!(err, Error::Config { line: 3, message: "expected `key = value`, got `not an entry`".into() });
        let err = KeyValues::parse("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = KeyValues::parse("Bad = 1").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let kv = KeyValues::parse("a = 1\nb = x\nc = 2").unwrap();
        assert!(matches!(kv.get_f64("b"), Err(Error::Config { line: 2, .. })));
        kv.get("a");
        assert!(matches!(kv.finish(), Err(Error::Config { line: 3, .. })));
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("lin:0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = parse_grid("log:0.5:100:4").unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!((g[0], g[3]), (0.5, 100.0));
        assert!((g[1] / g[0] - g[2] / g[1]).abs() < 1e-12);
        assert!(parse_grid("log:0:1:3").is_err());
        assert!(parse_grid("lin:0:1").is_err());
        assert!(parse_grid("1, x").is_err());
    }

    #[test]
    fn header_round_trip() {
        let text = "# quantity = mean\n# d = 0.5\nseries,x\n# ignored = 1\n";
        let kv = KeyValues::parse_header(text).unwrap();
        assert_eq!(kv.get("quantity"), Some("mean"));
        assert!(!kv.contains("ignored"));
    }
}
