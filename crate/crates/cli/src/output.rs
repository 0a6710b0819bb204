//! Result files: atomic writes, trajectory dumps and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use gpg_core::reinforce::{spawn_episode, EvalOptions, EvalReport};
use gpg_core::world::{FormationSpec, WorldConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

pub const OUT_DIR_ENV: &str = "GPG_OUT_DIR";
pub const MANIFEST_HEADER: &str = "# gpg manifest v1";
pub const TRAJECTORY_HEADER: &str = "# gpg trajectories v1";
pub const GOALS_HEADER: &str = "# gpg goals v1";
pub const REPORT_HEADER: &str = "# gpg eval-report v1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Collects files for one run and writes each one atomically.
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

#[derive(Debug, Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    code_version: &'a str,
    seed: u64,
    config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_sha256: Option<String>,
    started: String,
    finished: String,
    outputs: &'a [OutputFile],
}

pub struct ManifestInfo<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config_text: &'a str,
    pub checkpoint_text: Option<&'a str>,
    pub started: DateTime<Utc>,
}

impl RunOutput {
    pub fn create(dir: PathBuf) -> Result<Self, Failure> {
        std::fs::create_dir_all(&dir).map_err(|e| {
            Failure::Internal(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.files.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    /// Write the manifest last, so its presence marks a finished run.
    pub fn finish(self, info: ManifestInfo<'_>) -> Result<PathBuf, Failure> {
        let manifest = Manifest {
            command: info.command,
            code_version: env!("CARGO_PKG_VERSION"),
            seed: info.seed,
            config_sha256: sha256_hex(info.config_text.as_bytes()),
            checkpoint_sha256: info.checkpoint_text.map(|t| sha256_hex(t.as_bytes())),
            started: info.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            outputs: &self.files,
        };
        let body = toml::to_string(&manifest)
            .map_err(|e| Failure::Internal(format!("cannot serialize manifest: {e}")))?;
        let path = self.dir.join("manifest.toml");
        write_atomic(&path, format!("{MANIFEST_HEADER}\n{body}").as_bytes())?;
        Ok(self.dir)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)
        .and_then(|()| std::fs::rename(&tmp, path))
        .map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))
}

pub fn report_text(report: &EvalReport) -> String {
    format!("{REPORT_HEADER}\n{}", report.summary())
}

/// One row per robot per recorded step.
pub fn trajectories_csv(report: &EvalReport) -> String {
    let mut out = format!("{TRAJECTORY_HEADER}\nepisode,step,robot,x,y,reward,covered\n");
    for (e, ep) in report.episodes.iter().enumerate() {
        for rec in ep.trajectory.iter().flatten() {
            for (r, p) in rec.robot_positions.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{e},{},{r},{},{},{},{}",
                    rec.step, p[0], p[1], rec.reward, rec.covered
                );
            }
        }
    }
    out
}

/// Goal positions of every evaluated episode, regenerated from the seed
/// stream the evaluation used.
pub fn goals_csv(
    world: &WorldConfig,
    formation: &FormationSpec,
    options: &EvalOptions,
) -> Result<String, Failure> {
    let mut out = format!("{GOALS_HEADER}\nepisode,goal,x,y\n");
    for e in 0..options.episodes {
        let (state, _) = spawn_episode(world, formation, options.seed, e)
            .map_err(|e| Failure::User(e.to_string()))?;
        for (g, p) in state.goals.iter().enumerate() {
            let _ = writeln!(out, "{e},{g},{},{}", p[0], p[1]);
        }
    }
    Ok(out)
}
