//! Config-file handling: a TOML file holds global keys at the top level and
//! one table per subcommand. Command-line values override file values, and
//! the merged result is written next to the outputs.

use std::fs;
use std::path::{Path, PathBuf};

use sdbm_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_NAME: &str = "config.resolved.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Global {
    pub seed: u64,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
}

/// Parsed config file, or an empty one.
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        Ok(ConfigFile { table })
    }

    fn top<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.table
            .get(key)
            .map(|v| v.clone().try_into().map_err(|e| Error::Config(format!("config key {key:?}: {e}"))))
            .transpose()
    }

    /// Global settings; flags take precedence over the file.
    pub fn global(&self, seed: Option<u64>, threads: Option<usize>, output_dir: Option<PathBuf>) -> Result<Global> {
        Ok(Global {
            seed: seed.or(self.top("seed")?).unwrap_or(0),
            threads: threads.or(self.top("threads")?),
            output_dir: output_dir.or(self.top("output_dir")?).unwrap_or_else(|| PathBuf::from(".")),
        })
    }

    /// Subcommand settings: the file's `[section]` table overlaid with every
    /// field set on the command line.
    pub fn section<T: Serialize + DeserializeOwned>(&self, section: &str, cli: &T) -> Result<T> {
        let mut merged = match self.table.get(section) {
            Some(toml::Value::Table(t)) => serde_json::to_value(t)?,
            Some(_) => return Err(Error::Config(format!("config entry {section:?} must be a table"))),
            None => serde_json::Value::Object(Default::default()),
        };
        let overrides = serde_json::to_value(cli)?;
        if let (Some(base), serde_json::Value::Object(over)) = (merged.as_object_mut(), overrides) {
            for (k, v) in over {
                if !v.is_null() {
                    base.insert(k, v);
                }
            }
        }
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("[{section}]: {e}")))
    }
}

#[derive(Serialize)]
struct Snapshot<'a, T: Serialize> {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    output_dir: &'a Path,
    #[serde(flatten)]
    section: std::collections::BTreeMap<&'a str, &'a T>,
}

/// Writes the resolved settings in the same layout the loader reads.
pub fn write_snapshot<T: Serialize>(global: &Global, section: &str, settings: &T) -> Result<PathBuf> {
    let snapshot = Snapshot {
        seed: global.seed,
        threads: global.threads,
        output_dir: &global.output_dir,
        section: [(section, settings)].into_iter().collect(),
    };
    let text = toml::to_string(&snapshot).map_err(|e| Error::Config(format!("cannot encode config snapshot: {e}")))?;
    fs::create_dir_all(&global.output_dir)?;
    let path = global.output_dir.join(SNAPSHOT_NAME);
    fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Demo {
        #[serde(skip_serializing_if = "Option::is_none")]
        points: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lo: Option<f64>,
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 5\n[demo]\npoints = 3\nlo = -1.0\n").unwrap();
        let file = ConfigFile::load(Some(&path)).unwrap();
        let merged = file.section("demo", &Demo { points: Some(9), lo: None }).unwrap();
        assert_eq!(merged, Demo { points: Some(9), lo: Some(-1.0) });
        assert_eq!(file.global(None, None, None).unwrap().seed, 5);
        assert_eq!(file.global(Some(1), None, None).unwrap().seed, 1);
    }

    #[test]
    fn snapshot_reloads_to_the_same_settings() {
        let dir = tempfile::tempdir().unwrap();
        let global = Global {
            seed: 3,
            threads: Some(2),
            output_dir: dir.path().to_path_buf(),
        };
        let settings = Demo { points: Some(4), lo: Some(0.5) };
        let path = write_snapshot(&global, "demo", &settings).unwrap();
        let file = ConfigFile::load(Some(&path)).unwrap();
        assert_eq!(file.section("demo", &Demo::default()).unwrap(), settings);
        assert_eq!(file.global(None, None, None).unwrap(), global);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[demo]\npionts = 3\n").unwrap();
        let file = ConfigFile::load(Some(&path)).unwrap();
        assert!(file.section("demo", &Demo::default()).is_err());
    }
}
