//! Stamped JSON and CSV outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Writes outputs under one directory, stamping each with the config hash
/// and master seed.
#[derive(Debug, Clone)]
pub struct Sink {
    dir: PathBuf,
    hash: String,
    seed: u64,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_sha256: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

impl Sink {
    pub fn new(dir: &Path, hash: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), hash: hash.to_string(), seed })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn json_string<T: Serialize>(&self, body: &T) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&Stamped { config_sha256: &self.hash, seed: self.seed, body })?;
        s.push('\n');
        Ok(s)
    }

    /// `body` must serialise as a map.
    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, self.json_string(body)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// CSV with a leading `# config_sha256=... seed=...` comment line.
    pub fn csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut buf = format!("# config_sha256={} seed={}\n", self.hash, self.seed).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        n: u64,
        value: f64,
    }

    #[test]
    fn files_carry_the_stamp() {
        let dir = tempfile::tempdir().unwrap();
        let sink = Sink::new(dir.path(), "abc", 7).unwrap();
        let p = sink.csv("t.csv", &[Row { n: 1, value: 0.5 }]).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "# config_sha256=abc seed=7\nn,value\n1,0.5\n");
        #[derive(Serialize)]
        struct Body {
            ok: bool,
        }
        let p = sink.json("v.json", &Body { ok: true }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["config_sha256"], "abc");
        assert_eq!(v["seed"], 7);
        assert_eq!(v["ok"], true);
    }
}
