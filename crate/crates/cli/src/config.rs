//! Experiment configuration: flat TOML sections, environment overrides and
//! a resolved copy with every default filled in.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Prefix of environment overrides, e.g. `SNP_MARGINAL__ALPHA=3`.
pub const ENV_PREFIX: &str = "SNP_";

/// Sections and the keys each may hold.
pub const KNOWN: [(&str, &[&str]); 13] = [
    ("run", &["experiment", "seed", "indicators"]),
    ("output", &["dir", "report", "csv"]),
    ("monte_carlo", &["n_paths", "conditional", "supremum", "dense_dt"]),
    ("scenario", &["horizon"]),
    ("marginal", &["kind", "alpha", "scale", "phi", "sigma_xi"]),
    (
        "counting",
        &[
            "kind", "rate", "intercept", "slope", "breaks", "rates", "interarrival", "step", "shape", "lo", "hi",
            "moment_order",
        ],
    ),
    (
        "shock",
        &[
            "kind", "c", "omega_law", "omega", "omega_values", "omega_probs", "omega_lo", "omega_hi", "omega_mean",
            "omega_sd",
        ],
    ),
    (
        "sequence",
        &[
            "length", "n", "mean", "at_least_one", "matrix", "entry", "entry_value", "entry_lo", "entry_hi",
            "entry_alpha", "entry_scale", "norm", "p",
        ],
    ),
    ("thresholds", &["values", "quantiles"]),
    ("path", &["n_points"]),
    ("spectral", &["quantile", "threshold", "min_exceedances", "batch", "max_samples"]),
    ("extremal_index", &["modes", "grid"]),
    ("h2", &["length", "pairs", "bound"]),
];

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    KNOWN.iter().find(|(s, _)| *s == section).map(|(_, k)| *k)
}

/// Where a bad value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Env(String),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub file: String,
    pub origin: Origin,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.origin {
            Origin::Line(l) => write!(f, "{}:{l}: ", self.file)?,
            Origin::Env(var) => write!(f, "{} (from ${var}): ", self.file)?,
            Origin::Unknown => write!(f, "{}: ", self.file)?,
        }
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

/// Raw parsed config plus enough of the source text to point at lines.
pub struct RawConfig {
    file: String,
    source: String,
    table: Table,
    from_env: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn parse(file: &str, source: &str) -> Result<Self, ConfigError> {
        let table: Table = source.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| line_of(source, s.start));
            ConfigError {
                file: file.to_string(),
                origin: line.map_or(Origin::Unknown, Origin::Line),
                key: String::new(),
                message: e.message().to_string(),
            }
        })?;
        let raw = RawConfig {
            file: file.to_string(),
            source: source.to_string(),
            table,
            from_env: BTreeMap::new(),
        };
        for (name, value) in &raw.table {
            if !value.is_table() {
                return Err(raw.error(name, "", "top-level keys must live in a [section]"));
            }
            if known_keys(name).is_none() {
                return Err(raw.error(name, "", format!("unknown section [{name}]")));
            }
        }
        raw.check_keys()?;
        Ok(raw)
    }

    /// Apply `SNP_SECTION__KEY=value` overrides. Values are read as TOML
    /// literals and fall back to plain strings.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), ConfigError> {
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (var, raw) in vars {
            let rest = &var[ENV_PREFIX.len()..];
            let Some((section, key)) = rest.split_once("__") else {
                continue;
            };
            let (section, key) = (section.to_ascii_lowercase(), key.to_ascii_lowercase());
            if known_keys(&section).is_none() {
                return Err(ConfigError {
                    file: self.file.clone(),
                    origin: Origin::Env(var.clone()),
                    key: format!("{section}.{key}"),
                    message: format!("unknown section [{section}]"),
                });
            }
            let value = format!("v = {raw}")
                .parse::<Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or(Value::String(raw.clone()));
            let entry = self.table.entry(section.clone()).or_insert_with(|| Value::Table(Table::new()));
            if let Value::Table(t) = entry {
                t.insert(key.clone(), value);
            }
            self.from_env.insert((section, key), var);
        }
        self.check_keys()
    }

    fn check_keys(&self) -> Result<(), ConfigError> {
        for (name, value) in &self.table {
            let known = known_keys(name).unwrap_or(&[]);
            if let Some(t) = value.as_table() {
                if let Some(k) = t.keys().find(|k| !known.contains(&k.as_str())) {
                    return Err(self.error(name, k, format!("unknown key (expected one of: {})", known.join(", "))));
                }
            }
        }
        Ok(())
    }

    fn origin(&self, section: &str, key: &str) -> Origin {
        if let Some(var) = self.from_env.get(&(section.to_string(), key.to_string())) {
            return Origin::Env(var.clone());
        }
        locate(&self.source, section, key).map_or(Origin::Unknown, Origin::Line)
    }

    pub fn error(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.clone(),
            origin: self.origin(section, key),
            key: if key.is_empty() { section.to_string() } else { format!("{section}.{key}") },
            message: message.into(),
        }
    }

    pub fn section(&self, name: &'static str) -> Section<'_> {
        let table = self.table.get(name).and_then(Value::as_table);
        Section {
            raw: self,
            name,
            table,
            resolved: Table::new(),
        }
    }
}

fn line_of(source: &str, byte: usize) -> usize {
    source[..byte.min(source.len())].matches('\n').count() + 1
}

/// 1-based line of `key = …` inside `[section]`, or of the header itself.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section && !key.is_empty() {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

/// Typed reader over one section. Every read records the value (or the
/// default) into the resolved table; keys an experiment never reads are left
/// out of it.
pub struct Section<'a> {
    raw: &'a RawConfig,
    pub name: &'static str,
    table: Option<&'a Table>,
    resolved: Table,
}

impl<'a> Section<'a> {
    pub fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        self.raw.error(self.name, key, message)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(key))
    }

    pub fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v = match self.get(key) {
            None => return Ok(None),
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(other) => return Err(self.err(key, format!("expected a number, got {}", other.type_str()))),
        };
        self.resolved.insert(key.into(), Value::Float(v));
        Ok(Some(v))
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.opt_f64(key)?.unwrap_or(default);
        self.resolved.insert(key.into(), Value::Float(v));
        Ok(v)
    }

    pub fn req_f64(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.opt_f64(key)?.ok_or_else(|| self.err(key, "missing required value"))
    }

    pub fn opt_u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        let v = match self.get(key) {
            None => return Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(other) => {
                return Err(self.err(key, format!("expected a non-negative integer, got {}", render(other))));
            }
        };
        self.resolved.insert(key.into(), int_value(v));
        Ok(Some(v))
    }

    pub fn u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        let v = self.opt_u64(key)?.unwrap_or(default);
        self.resolved.insert(key.into(), int_value(v));
        Ok(v)
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        let v = match self.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => return Err(self.err(key, format!("expected true or false, got {}", render(other)))),
        };
        self.resolved.insert(key.into(), Value::Boolean(v));
        Ok(v)
    }

    pub fn string(&mut self, key: &str, default: &str) -> Result<String, ConfigError> {
        let v = match self.get(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(other) => return Err(self.err(key, format!("expected a string, got {}", render(other)))),
        };
        self.resolved.insert(key.into(), Value::String(v.clone()));
        Ok(v)
    }

    /// String restricted to `choices`.
    pub fn choice(&mut self, key: &str, default: &str, choices: &[&str]) -> Result<String, ConfigError> {
        let v = self.string(key, default)?;
        if choices.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(self.err(key, format!("unknown {} {v:?} (expected one of: {})", key.replace('_', " "), choices.join(", "))))
        }
    }

    pub fn f64_list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        let v = match self.get(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Float(x) => out.push(*x),
                        Value::Integer(i) => out.push(*i as f64),
                        other => return Err(self.err(key, format!("expected numbers, got {}", render(other)))),
                    }
                }
                out
            }
            Some(other) => return Err(self.err(key, format!("expected an array of numbers, got {}", render(other)))),
        };
        self.resolved
            .insert(key.into(), Value::Array(v.iter().map(|&x| Value::Float(x)).collect()));
        Ok(v)
    }

    pub fn string_list(&mut self, key: &str, default: &[&str]) -> Result<Vec<String>, ConfigError> {
        let v: Vec<String> = match self.get(key) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::String(s) => out.push(s.clone()),
                        other => return Err(self.err(key, format!("expected strings, got {}", render(other)))),
                    }
                }
                out
            }
            Some(other) => return Err(self.err(key, format!("expected an array of strings, got {}", render(other)))),
        };
        self.resolved
            .insert(key.into(), Value::Array(v.iter().cloned().map(Value::String).collect()));
        Ok(v)
    }

    pub fn pair_list(&mut self, key: &str, default: &[(usize, usize)]) -> Result<Vec<(usize, usize)>, ConfigError> {
        let bad = |s: &Self| s.err(key, "expected an array of [i, j] index pairs");
        let v = match self.get(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    let pair = item.as_array().ok_or_else(|| bad(self))?;
                    match pair.as_slice() {
                        [Value::Integer(i), Value::Integer(j)] if *i >= 0 && *j >= 0 => out.push((*i as usize, *j as usize)),
                        _ => return Err(bad(self)),
                    }
                }
                out
            }
            Some(_) => return Err(bad(self)),
        };
        let arr = v
            .iter()
            .map(|&(i, j)| Value::Array(vec![int_value(i as u64), int_value(j as u64)]))
            .collect();
        self.resolved.insert(key.into(), Value::Array(arr));
        Ok(v)
    }

    /// Overwrite a resolved value (e.g. after a command-line override).
    pub fn set(&mut self, key: &str, value: Value) {
        self.resolved.insert(key.into(), value);
    }

    pub fn finish(self) -> Table {
        self.resolved
    }
}

fn int_value(v: u64) -> Value {
    Value::Integer(i64::try_from(v).unwrap_or(i64::MAX))
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => format!("{s:?}"),
        other => other.to_string(),
    }
}

/// Resolved configuration: every section actually used, defaults included.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Resolved(pub Table);

impl Resolved {
    pub fn insert(&mut self, section: &str, table: Table) {
        if !table.is_empty() {
            self.0.insert(section.to_string(), Value::Table(table));
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.0).expect("a table of plain values always serializes")
    }

    /// Hex SHA-256 of the resolved TOML text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = "[run]\nseed = 1\n\n[shock]\nkind = \"wobble\"\nc = 2\n";

    #[test]
    fn locates_keys_and_headers() {
        assert_eq!(locate(SRC, "shock", "kind"), Some(5));
        assert_eq!(locate(SRC, "shock", "omega"), Some(4));
        assert_eq!(locate(SRC, "marginal", "alpha"), None);
    }

    #[test]
    fn choice_error_is_line_anchored() {
        let raw = RawConfig::parse("x.toml", SRC).unwrap();
        let mut s = raw.section("shock");
        let e = s.choice("kind", "constant", &["constant", "exponential"]).unwrap_err();
        assert_eq!(e.origin, Origin::Line(5));
        assert!(e.to_string().starts_with("x.toml:5: shock.kind: unknown kind \"wobble\""));
    }

    #[test]
    fn env_overrides_win_and_are_reported() {
        let mut raw = RawConfig::parse("x.toml", SRC).unwrap();
        raw.apply_env([("SNP_SHOCK__C".to_string(), "3.5".to_string()), ("OTHER".into(), "1".into())])
            .unwrap();
        let mut s = raw.section("shock");
        assert_eq!(s.f64("c", 1.0).unwrap(), 3.5);
        raw.apply_env([("SNP_NOPE__X".to_string(), "1".to_string())]).unwrap_err();
        raw.apply_env([("SNP_SHOCK__COLOUR".to_string(), "1".to_string())]).unwrap_err();
        let mut raw = RawConfig::parse("x.toml", SRC).unwrap();
        raw.apply_env([("SNP_SHOCK__C".to_string(), "abc".to_string())]).unwrap();
        let e = raw.section("shock").f64("c", 1.0).unwrap_err();
        assert_eq!(e.origin, Origin::Env("SNP_SHOCK__C".into()));
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        let e = RawConfig::parse("x.toml", "[run]\nseed = 1\n\n[shock]\nkind = \"constant\"\ncolour = 2\n")
            .err()
            .unwrap();
        assert_eq!(e.origin, Origin::Line(6));
        assert_eq!(e.key, "shock.colour");
        assert!(RawConfig::parse("x.toml", "[bogus]\na = 1\n").is_err());
        assert!(RawConfig::parse("x.toml", "a = 1\n").is_err());
        let e = RawConfig::parse("x.toml", "[run]\nseed = = 1\n").err().unwrap();
        assert_eq!(e.origin, Origin::Line(2));
    }

    #[test]
    fn hash_tracks_content() {
        let mut a = Resolved::default();
        let mut t = Table::new();
        t.insert("seed".into(), Value::Integer(1));
        a.insert("run", t.clone());
        let h1 = a.hash();
        t.insert("seed".into(), Value::Integer(2));
        a.insert("run", t);
        assert_ne!(h1, a.hash());
        assert_eq!(h1.len(), 64);
    }
}
