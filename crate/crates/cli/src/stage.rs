//! Stage graph, config hashes, run logs and the output-directory lock.
//!
//! A stage's hash covers its own config section, the global section and the
//! hashes of the stages it reads, so a change anywhere upstream changes every
//! downstream hash. `stages/<name>.log` records the hash a stage ran under and
//! the SHA-256 of every file it wrote; a stage refuses to read a predecessor
//! whose log is missing, was written under a different hash, or whose files
//! no longer match.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Generate,
    Train,
    Embed,
    Correlate,
    Shap,
    Lrcp,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Generate, Stage::Train, Stage::Embed, Stage::Correlate, Stage::Shap, Stage::Lrcp, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Correlate => "correlate",
            Stage::Shap => "shap",
            Stage::Lrcp => "lrcp",
            Stage::Report => "report",
        }
    }

    /// Config section owned by the stage.
    pub fn section(self) -> &'static str {
        match self {
            Stage::Generate => "phantom",
            s => s.name(),
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Generate => &[],
            Stage::Train => &[Stage::Generate],
            Stage::Embed => &[Stage::Train],
            Stage::Correlate | Stage::Lrcp => &[Stage::Embed],
            Stage::Shap => &[Stage::Train],
            Stage::Report => &[Stage::Correlate, Stage::Shap, Stage::Lrcp],
        }
    }

    /// Output directory of the stage, relative to the pipeline root.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Generate => "cohort",
            s => s.name(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn stage_hash(cfg: &PipelineConfig, stage: Stage) -> String {
    let mut h = Sha256::new();
    h.update(cfg.section("global"));
    h.update(cfg.section(stage.section()));
    for d in stage.deps() {
        h.update(format!("dep.{}={}\n", d.name(), stage_hash(cfg, *d)));
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageLog {
    pub stage: String,
    pub config_hash: String,
    pub deps: BTreeMap<String, String>,
    /// Path relative to the pipeline root, forward slashes, to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl StageLog {
    pub fn to_text(&self) -> String {
        let mut s = format!("stage={}\nconfig_hash={}\n", self.stage, self.config_hash);
        for (d, h) in &self.deps {
            s.push_str(&format!("dep.{d}={h}\n"));
        }
        for (p, h) in &self.artifacts {
            s.push_str(&format!("artifact.{p}={h}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<StageLog, String> {
        let mut log = StageLog { stage: String::new(), config_hash: String::new(), deps: BTreeMap::new(), artifacts: BTreeMap::new() };
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
            if k == "stage" {
                log.stage = v.to_string();
            } else if k == "config_hash" {
                log.config_hash = v.to_string();
            } else if let Some(d) = k.strip_prefix("dep.") {
                log.deps.insert(d.to_string(), v.to_string());
            } else if let Some(p) = k.strip_prefix("artifact.") {
                log.artifacts.insert(p.to_string(), v.to_string());
            } else {
                return Err(format!("line {}: unknown key {k:?}", i + 1));
            }
        }
        if log.stage.is_empty() || log.config_hash.is_empty() {
            return Err("missing stage or config_hash".into());
        }
        Ok(log)
    }
}

pub fn log_path(root: &Path, stage: Stage) -> PathBuf {
    root.join("stages").join(format!("{}.log", stage.name()))
}

/// Every regular file under `dir`, sorted, as root-relative paths.
fn files_under(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), CliError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(CliError::io(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files_under(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

pub fn hash_dir(root: &Path, stage: Stage) -> Result<BTreeMap<String, String>, CliError> {
    let mut files = Vec::new();
    files_under(root, &root.join(stage.dir()), &mut files)?;
    files
        .into_iter()
        .map(|rel| {
            let p = root.join(&rel);
            let bytes = fs::read(&p).map_err(CliError::io(&p))?;
            Ok((rel, sha256_hex(&bytes)))
        })
        .collect()
}

pub fn write_log(root: &Path, cfg: &PipelineConfig, stage: Stage) -> Result<StageLog, CliError> {
    let log = StageLog {
        stage: stage.name().to_string(),
        config_hash: stage_hash(cfg, stage),
        deps: stage.deps().iter().map(|d| (d.name().to_string(), stage_hash(cfg, *d))).collect(),
        artifacts: hash_dir(root, stage)?,
    };
    let path = log_path(root, stage);
    fs::create_dir_all(path.parent().expect("has parent")).map_err(CliError::io(root))?;
    fs::write(&path, log.to_text()).map_err(CliError::io(&path))?;
    Ok(log)
}

/// Ok when `stage` ran under the current config and its files are intact.
pub fn check_current(root: &Path, cfg: &PipelineConfig, stage: Stage) -> Result<StageLog, CliError> {
    let path = log_path(root, stage);
    let name = stage.name();
    let text = fs::read_to_string(&path).map_err(|_| {
        CliError::Dependency(format!("stage {name} has not run: {} not found; run `lrcp {name}` first", path.display()))
    })?;
    let log = StageLog::parse(&text).map_err(|e| CliError::Dependency(format!("{}: {e}", path.display())))?;
    let expected = stage_hash(cfg, stage);
    if log.config_hash != expected {
        return Err(CliError::Dependency(format!(
            "stage {name} is stale: it ran under config hash {} but the current config hashes to {expected}; rerun `lrcp {name}`",
            log.config_hash
        )));
    }
    let on_disk = hash_dir(root, stage).unwrap_or_default();
    if on_disk != log.artifacts {
        let changed = log
            .artifacts
            .iter()
            .find(|(p, h)| on_disk.get(*p) != Some(*h))
            .map(|(p, _)| p.clone())
            .or_else(|| on_disk.keys().find(|p| !log.artifacts.contains_key(*p)).cloned())
            .unwrap_or_default();
        return Err(CliError::Dependency(format!(
            "stage {name} outputs changed since it ran ({changed}); rerun `lrcp {name}`"
        )));
    }
    Ok(log)
}

/// Exclusive ownership of a pipeline directory for the life of the value.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(root: &Path) -> Result<DirLock, CliError> {
        fs::create_dir_all(root).map_err(CliError::io(root))?;
        let path = root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Dependency(format!(
                "{} exists: another pipeline owns this directory (remove the file if no run is active)",
                path.display()
            ))),
            Err(e) => Err(CliError::Io { path, source: e }),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_follow_the_graph() {
        let a = PipelineConfig::default();
        let b = PipelineConfig::parse("shap.trees = 5").unwrap();
        for s in Stage::ALL {
            let changed = matches!(s, Stage::Shap | Stage::Report);
            assert_eq!(stage_hash(&a, s) != stage_hash(&b, s), changed, "{}", s.name());
        }
        let c = PipelineConfig::parse("seed = 1").unwrap();
        assert!(Stage::ALL.iter().all(|&s| stage_hash(&a, s) != stage_hash(&c, s)));
    }

    #[test]
    fn log_round_trip() {
        let log = StageLog {
            stage: "train".into(),
            config_hash: "ab".into(),
            deps: [("generate".to_string(), "cd".to_string())].into(),
            artifacts: [("train/x.csv".to_string(), "ef".to_string())].into(),
        };
        assert_eq!(StageLog::parse(&log.to_text()).unwrap(), log);
        assert!(StageLog::parse("stage=x\n").is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(CliError::Dependency(_))));
        drop(l);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
