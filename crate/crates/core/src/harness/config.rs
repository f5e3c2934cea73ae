use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::envs::{BehaviorPolicySpec, EnvSpec};
use crate::error::{Error, Result};
use crate::mdp::ScaleSet;
use crate::selector::SelectorVariant;
use crate::trainer::TrainConfig;

pub const OUTPUT_ENV: &str = "CHUNKRL_OUTPUT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Desk,
    PaperDefaults,
}

impl Profile {
    pub fn train_defaults(self) -> TrainConfig {
        match self {
            Profile::Desk => TrainConfig::desk(),
            Profile::PaperDefaults => TrainConfig::paper_defaults(),
        }
    }
}

fn d_episodes() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "d_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub behavior: BehaviorPolicySpec,
    /// Read this dataset instead of generating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { episodes: d_episodes(), behavior: BehaviorPolicySpec::default(), path: None }
    }
}

fn d_universe() -> Vec<usize> {
    vec![1, 5, 10, 25]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesConfig {
    #[serde(default = "d_universe")]
    pub universe: Vec<usize>,
    pub h: usize,
}

impl ScalesConfig {
    pub fn scale_set(&self) -> Result<ScaleSet> {
        ScaleSet::from_universe(&self.universe, self.h)
    }
}

fn d_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}
fn d_kappas() -> Vec<f64> {
    vec![0.5, 0.7, 0.9, 0.93, 0.95, 0.99]
}
fn d_horizons() -> Vec<usize> {
    vec![5, 10]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_kappas")]
    pub kappas: Vec<f64>,
    /// Critic horizons for the `chunk_h` axis.
    #[serde(default = "d_horizons")]
    pub horizons: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { seeds: d_seeds(), kappas: d_kappas(), horizons: d_horizons() }
    }
}

fn d_output() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment: environment, data, training, scales and selector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub scales: ScalesConfig,
    #[serde(default)]
    pub selector: SelectorVariant,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn escape(seg: &str) -> String {
    seg.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape(variant))),
            Segment::Unknown => {}
        }
    }
    out
}

/// serde reports a missing key at its parent; name the key itself.
fn named_field(message: &str) -> Option<&str> {
    for lead in ["missing field `", "unknown field `"] {
        if let Some(rest) = message.strip_prefix(lead) {
            return rest.split('`').next();
        }
    }
    None
}

fn config_err(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { pointer: pointer.into(), message: message.into() }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err("", format!("malformed JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Overlay the user's `train` keys on the profile defaults, then parse
    /// and validate. Errors carry a JSON pointer into the document.
    pub fn from_value(mut value: Value) -> Result<Self> {
        let Value::Object(root) = &mut value else {
            return Err(config_err("", "config must be a JSON object"));
        };
        let profile: Profile = match root.get("profile") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|e| config_err("/profile", e.to_string()))?,
            None => Profile::Desk,
        };
        let mut train = serde_json::to_value(profile.train_defaults())?;
        match root.get("train") {
            Some(Value::Object(user)) => {
                let base = train.as_object_mut().expect("struct serializes to an object");
                for (k, v) in user {
                    base.insert(k.clone(), v.clone());
                }
            }
            Some(_) => return Err(config_err("/train", "expected an object")),
            None => {}
        }
        if let Some(seed) = root.get("seed") {
            train["seed"] = seed.clone();
        } else if let Some(seed) = train.get("seed") {
            root.insert("seed".into(), seed.clone());
        }
        root.insert("train".into(), train);
        let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let mut pointer = pointer_of(e.path());
            let message = e.inner().to_string();
            if let Some(field) = named_field(&message) {
                let tail = format!("/{}", escape(field));
                if !pointer.ends_with(&tail) {
                    pointer.push_str(&tail);
                }
            }
            config_err(pointer, message)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let at = |p: &'static str| move |e: Error| config_err(p, e.to_string());
        self.train.validate().map_err(at("/train"))?;
        self.data.behavior.validate().map_err(at("/data/behavior"))?;
        let scales = self.scales.scale_set().map_err(at("/scales"))?;
        self.env.build().map_err(at("/env/params"))?;
        if let SelectorVariant::Fixed(k) = self.selector {
            if !scales.contains(k) {
                return Err(config_err("/selector", format!("fixed:{k} is not in K = {:?}", scales.as_slice())));
            }
        }
        if self.data.episodes == 0 && self.data.path.is_none() {
            return Err(config_err("/data/episodes", "need at least one episode"));
        }
        if self.ablation.seeds.is_empty() {
            return Err(config_err("/ablation/seeds", "need at least one seed"));
        }
        Ok(())
    }

    /// `output_dir`, unless overridden by `CHUNKRL_OUTPUT`.
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => self.output_dir.clone(),
        }
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    /// Create the output directory and echo the resolved config into it.
    pub fn prepare_output(&mut self) -> Result<PathBuf> {
        let dir = self.resolved_output();
        self.output_dir = dir.clone();
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.json"), self.to_pretty_json() + "\n")?;
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"env": {"kind": "chain", "params": {"length": 5, "p_slip": 0.0}}, "scales": {"h": 5}}"#;

    fn pointer(text: &str) -> String {
        match RunConfig::from_json_str(text) {
            Err(Error::Config { pointer, .. }) => pointer,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_takes_profile_defaults() {
        let c = RunConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.train, TrainConfig::desk());
        assert_eq!(c.scales.scale_set().unwrap().as_slice(), &[1, 5]);
        assert_eq!(c.selector, SelectorVariant::Aqc);
    }

    #[test]
    fn train_keys_overlay_the_profile() {
        let text = r#"{"env": {"kind": "chain", "params": {"length": 5, "p_slip": 0.0}}, "scales": {"h": 5},
            "profile": "paper-defaults", "train": {"width": 32}, "seed": 9}"#;
        let c = RunConfig::from_json_str(text).unwrap();
        assert_eq!(c.train.width, 32);
        assert_eq!(c.train.depth, TrainConfig::paper_defaults().depth);
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn missing_kind_points_at_the_key() {
        assert_eq!(pointer(r#"{"env": {"params": {"length": 5}}, "scales": {"h": 5}}"#), "/env/kind");
    }

    #[test]
    fn unknown_and_mistyped_keys_are_located() {
        let bad_train = MINIMAL.replace(r#""scales""#, r#""train": {"widht": 3}, "scales""#);
        assert_eq!(pointer(&bad_train), "/train/widht");
        let bad_scale = MINIMAL.replace(r#"{"h": 5}"#, r#"{"h": "five"}"#);
        assert_eq!(pointer(&bad_scale), "/scales/h");
        let bad_sel = MINIMAL.replace(r#""scales""#, r#""selector": "fixed:3", "scales""#);
        assert_eq!(pointer(&bad_sel), "/selector");
        assert_eq!(pointer(&MINIMAL.replace("\"kind\": \"chain\"", "\"kind\": \"maze\"")), "/env/kind");
    }

    #[test]
    fn resolved_config_roundtrips() {
        let c = RunConfig::from_json_str(MINIMAL).unwrap();
        let again = RunConfig::from_json_str(&c.to_pretty_json()).unwrap();
        assert_eq!(c, again);
    }
}
