//! Experiment documents: one TOML file holding everything a run needs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gpg_core::reinforce::TrainConfig;
use gpg_core::world::FormationSpec;
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Training setup; its `world` and `graph` are also the evaluation setup.
    pub train: TrainConfig,
    pub eval: EvalSection,
    /// Named goal layouts for `compare`.
    pub formations: Vec<NamedFormation>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub deterministic: bool,
    /// Goal layout for `eval` and `transfer`; defaults to `train.formation`.
    pub formation: Option<FormationSpec>,
    pub dump_trajectories: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 20,
            deterministic: true,
            formation: None,
            dump_trajectories: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFormation {
    pub name: String,
    pub formation: FormationSpec,
}

pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::User(format!("cannot read {}: {e}", path.display())))?;
        let config =
            Self::parse(&text).map_err(|e| Failure::User(format!("{}: {e}", path.display())))?;
        Ok(LoadedConfig { config, text })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        if raw
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("seed"))
        {
            return Err("invalid `train.seed`: set the seed at top level as `seed`".into());
        }
        let config: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        self.train
            .validate()
            .map_err(|e| e.within("train").to_string())?;
        let n = self.train.world.n_goals;
        let check = |key: String, f: &FormationSpec| {
            f.layout(n)
                .map(|_| ())
                .map_err(|e| format!("invalid `{key}`: {e}"))
        };
        check("train.formation".into(), &self.train.formation)?;
        if let Some(f) = &self.eval.formation {
            check("eval.formation".into(), f)?;
        }
        let mut names = BTreeSet::new();
        for (i, nf) in self.formations.iter().enumerate() {
            if nf.name.is_empty() || nf.name.contains([',', '\n']) {
                return Err(format!(
                    "invalid `formations[{i}].name`: must be non-empty without commas"
                ));
            }
            if !names.insert(nf.name.as_str()) {
                return Err(format!(
                    "invalid `formations[{i}].name`: duplicate `{}`",
                    nf.name
                ));
            }
            check(format!("formations[{i}].formation"), &nf.formation)?;
        }
        Ok(())
    }

    pub fn eval_formation(&self) -> &FormationSpec {
        self.eval
            .formation
            .as_ref()
            .unwrap_or(&self.train.formation)
    }
}

/// Parse `circle:R`, `line:S`, `grid:S` or `random`.
pub fn parse_formation(s: &str) -> Result<FormationSpec, String> {
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let value = || {
        arg.parse::<f64>()
            .map_err(|_| format!("formation `{s}` needs a numeric argument, e.g. `{kind}:1.5`"))
    };
    match kind {
        "random" if arg.is_empty() => Ok(FormationSpec::UniformRandom),
        "circle" => Ok(FormationSpec::Circle { radius: value()? }),
        "line" => Ok(FormationSpec::Line { spacing: value()? }),
        "grid" => Ok(FormationSpec::Grid { spacing: value()? }),
        _ => Err(format!(
            "unknown formation `{s}`; expected circle:R, line:S, grid:S or random"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.seed, None);
        assert_eq!(c.train, TrainConfig::default());
        assert!(c.formations.is_empty());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("[train.world]\nn_robtos = 4\n").unwrap_err();
        assert!(err.contains("n_robtos"), "{err}");
    }

    #[test]
    fn nested_invariant_is_named() {
        let err = ExperimentConfig::parse("[train.world]\ncoverage_radius = -1.0\n").unwrap_err();
        assert!(err.contains("train.world.coverage_radius"), "{err}");
    }

    #[test]
    fn seed_inside_train_is_rejected() {
        let err = ExperimentConfig::parse("[train]\nseed = 3\n").unwrap_err();
        assert!(err.contains("train.seed"), "{err}");
    }

    #[test]
    fn explicit_formation_must_match_goal_count() {
        let text = "[eval]\nformation = { kind = \"explicit\", goals = [[0.0, 0.0]] }\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(err.contains("eval.formation"), "{err}");
    }

    #[test]
    fn duplicate_formation_names_are_rejected() {
        let text = "[[formations]]\nname = \"F1\"\nformation = { kind = \"circle\", radius = 1.0 }\n\
                    [[formations]]\nname = \"F1\"\nformation = { kind = \"circle\", radius = 2.0 }\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn formation_flags() {
        assert_eq!(
            parse_formation("circle:2.5").unwrap(),
            FormationSpec::Circle { radius: 2.5 }
        );
        assert_eq!(
            parse_formation("line:1").unwrap(),
            FormationSpec::Line { spacing: 1.0 }
        );
        assert_eq!(
            parse_formation("random").unwrap(),
            FormationSpec::UniformRandom
        );
        assert!(parse_formation("circle").is_err());
        assert!(parse_formation("hexagon:1").is_err());
    }

    #[test]
    fn shipped_configs_are_valid() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e:?}"));
                seen += 1;
            }
        }
        assert!(seen >= 9, "only {seen} configs in {}", dir.display());
    }
}
