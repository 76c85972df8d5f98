//! Loading the TOML run configuration.
//!
//! Resolution order, later wins: built-in defaults, the config file,
//! `--set key=value` overrides, dedicated flags such as `--seed`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use tierstore::sim::SimConfig;
use toml::{Table, Value};

pub const CONFIG_VERSION: i64 = 1;

/// Reads and checks a config file. The file must carry `version = 1`.
pub fn read_file(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file `{}`", path.display()))?;
    let mut table: Table = text
        .parse()
        .with_context(|| format!("cannot parse config file `{}`", path.display()))?;
    match table.remove("version") {
        Some(Value::Integer(CONFIG_VERSION)) => Ok(table),
        Some(other) => bail!(
            "config file `{}`: unsupported `version` {other}; expected {CONFIG_VERSION}",
            path.display()
        ),
        None => bail!(
            "config file `{}`: missing `version = {CONFIG_VERSION}`",
            path.display()
        ),
    }
}

/// Merges `over` into `base`. Tables merge key by key, except tables that
/// name a `kind`: those select a variant and replace the old value whole.
fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Parses `a.b.c=value`. The value is read as a TOML literal, falling back to
/// a bare string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not of the form key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        bail!("override `{spec}` has an empty key segment");
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cursor = table;
    for segment in parents {
        let entry = cursor
            .entry(segment.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override key `{}`: `{segment}` is not a table", path.join(".")))?;
    }
    cursor.insert(last.clone(), value);
    Ok(())
}

/// Builds the simulation config. Unknown keys are rejected.
pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<SimConfig> {
    let mut table = Table::try_from(SimConfig::default()).context("serializing defaults")?;
    if let Some(path) = file {
        merge(&mut table, read_file(path)?);
    }
    for spec in overrides {
        let (path, value) = parse_override(spec)?;
        apply_override(&mut table, &path, value)?;
    }
    let mut config = SimConfig::deserialize(Value::Table(table))
        .map_err(|e| anyhow!("invalid configuration: {}", e.to_string().trim()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tierstore::sim::ServiceConfig;

    #[test]
    fn overrides_parse_typed_values() {
        let (path, v) = parse_override("tier2.rate=50").unwrap();
        assert_eq!(path, ["tier2", "rate"]);
        assert_eq!(v, Value::Integer(50));
        let (_, v) = parse_override("eviction.policy=lru").unwrap();
        assert_eq!(v, Value::String("lru".into()));
        assert!(parse_override("nokey").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c = resolve(None, &[], None).unwrap();
        assert_eq!(c, SimConfig::default());
    }

    #[test]
    fn set_wins_and_kind_replaces_variant() {
        let c = resolve(
            None,
            &[
                "tier2.rate=50.0".into(),
                "traffic.model=\"irm\"".into(),
                "seed=9".into(),
            ],
            Some(4),
        )
        .unwrap();
        assert_eq!(c.tier2, ServiceConfig::Exponential { rate: 50.0 });
        assert_eq!(c.seed, 4);

        let mut base = Table::try_from(SimConfig::default()).unwrap();
        let over: Table = "[tier2]\nkind = \"constant\"\nseconds = 0.01".parse().unwrap();
        merge(&mut base, over);
        let c = SimConfig::deserialize(Value::Table(base)).unwrap();
        assert_eq!(c.tier2, ServiceConfig::Constant { seconds: 0.01 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = resolve(None, &["cache.n_linez=4".into()], None).unwrap_err();
        assert!(err.to_string().contains("n_linez"), "{err}");
    }
}
