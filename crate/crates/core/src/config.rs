//! TOML model configuration.
//!
//! ```toml
//! outcome = "y"
//! subject_id = "id"            # optional, groups repeated measures
//! kind = "two_way"             # or "three_way"; inferred from env2 if omitted
//! family = "gaussian"          # or "binomial"
//! covariates = ["age"]         # optional
//! intercepts = ["ibq", "ecbq"] # optional indicator columns
//!
//! [genetic]
//! name = "g"
//! elements = ["g1", "g2", "g1*g2"]
//! weights = [0.4, 0.4, 0.2]    # optional start, default equal
//! fixed = false                # optional
//!
//! [env1]
//! name = "e"
//! elements = ["e1", "e2"]
//!
//! [candidates]                 # optional, used by stepwise search
//! genetic = ["g3"]
//! covariates = ["sex"]
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Family, ModelKind, ModelStructure, ScoreElement, ScoreSpec};
use crate::selection::Candidates;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub outcome: String,
    #[serde(default)]
    pub subject_id: Option<String>,
    #[serde(default)]
    pub kind: Option<KindConfig>,
    #[serde(default)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub intercepts: Vec<String>,
    pub genetic: ScoreConfig,
    pub env1: ScoreConfig,
    #[serde(default)]
    pub env2: Option<ScoreConfig>,
    #[serde(default)]
    pub candidates: Option<CandidatesConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KindConfig {
    TwoWay,
    ThreeWay,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FamilyConfig {
    #[default]
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub name: String,
    pub elements: Vec<String>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub fixed: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatesConfig {
    #[serde(default)]
    pub genetic: Vec<String>,
    #[serde(default)]
    pub env1: Vec<String>,
    #[serde(default)]
    pub env2: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl ScoreConfig {
    fn build(&self) -> Result<ScoreSpec> {
        let elements = self
            .elements
            .iter()
            .map(|e| ScoreElement::parse(e))
            .collect::<Result<Vec<_>>>()?;
        let mut spec = ScoreSpec::new(&self.name, elements)?.fixed(self.fixed);
        if let Some(w) = &self.weights {
            spec.set_weights(w.clone())?;
        }
        Ok(spec)
    }
}

fn parse_elements(list: &[String]) -> Result<Vec<ScoreElement>> {
    list.iter().map(|e| ScoreElement::parse(e)).collect()
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn structure(&self) -> Result<ModelStructure> {
        let genetic = self.genetic.build()?;
        let env1 = self.env1.build()?;
        let env2 = self.env2.as_ref().map(ScoreConfig::build).transpose()?;
        let kind = match (self.kind, &env2) {
            (Some(KindConfig::TwoWay), Some(_)) => {
                return Err(Error::Config("kind = \"two_way\" but env2 is given".into()))
            }
            (Some(KindConfig::ThreeWay), None) => {
                return Err(Error::Config("kind = \"three_way\" needs an env2 table".into()))
            }
            (_, Some(_)) => ModelKind::ThreeWay,
            (_, None) => ModelKind::TwoWay,
        };
        let family = match self.family {
            FamilyConfig::Gaussian => Family::GaussianIdentity,
            FamilyConfig::Binomial => Family::BinomialLogit,
        };
        let structure = ModelStructure {
            kind,
            genetic,
            env1,
            env2,
            covariates: self.covariates.clone(),
            intercepts: self.intercepts.clone(),
            family,
        };
        structure.validate(None)?;
        Ok(structure)
    }

    pub fn candidates(&self) -> Result<Candidates> {
        let Some(c) = &self.candidates else {
            return Ok(Candidates::default());
        };
        Ok(Candidates {
            genetic: parse_elements(&c.genetic)?,
            env1: parse_elements(&c.env1)?,
            env2: parse_elements(&c.env2)?,
            covariates: c.covariates.clone(),
        })
    }

    /// Every column the model or its candidates read, outcome excluded.
    pub fn used_columns(&self) -> Result<Vec<String>> {
        let mut cols = self.structure()?.used_columns();
        let cands = self.candidates()?;
        let extra = cands
            .genetic
            .iter()
            .chain(&cands.env1)
            .chain(&cands.env2)
            .flat_map(|e| e.factors().iter().cloned())
            .chain(cands.covariates.iter().cloned());
        for c in extra {
            if !cols.contains(&c) {
                cols.push(c);
            }
        }
        Ok(cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_WAY: &str = r#"
outcome = "y"
covariates = ["age"]

[genetic]
name = "g"
elements = ["g1", "g2", "g1*g2"]

[env1]
name = "e"
elements = ["e1", "e2"]
weights = [1.0, -3.0]
"#;

    #[test]
    fn parses_two_way() {
        let cfg = ModelConfig::from_toml(TWO_WAY).unwrap();
        let m = cfg.structure().unwrap();
        assert_eq!(m.kind, ModelKind::TwoWay);
        assert_eq!(m.genetic.len(), 3);
        assert!(m.genetic.elements()[2].is_product());
        assert_eq!(m.env1.weights(), &[0.25, -0.75]);
        assert_eq!(m.family, Family::GaussianIdentity);
        assert_eq!(
            cfg.used_columns().unwrap(),
            vec!["g1", "g2", "e1", "e2", "age"]
        );
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{TWO_WAY}\nbogus = 1\n");
        // `bogus` lands in [env1]
        assert!(matches!(ModelConfig::from_toml(&text), Err(Error::Config(_))));
        let text = format!("colour = \"red\"\n{TWO_WAY}");
        assert!(ModelConfig::from_toml(&text).is_err());
    }

    #[test]
    fn kind_must_match_env2() {
        let text = format!("kind = \"three_way\"\n{TWO_WAY}");
        let cfg = ModelConfig::from_toml(&text).unwrap();
        assert!(cfg.structure().is_err());
    }

    #[test]
    fn three_way_with_candidates() {
        let text = r#"
outcome = "att"
family = "binomial"
intercepts = ["i18", "i24"]

[genetic]
name = "dop"
elements = ["drd4", "dat1"]
fixed = true

[env1]
name = "dep"
elements = ["dep"]

[env2]
name = "sens"
elements = ["look"]

[candidates]
env2 = ["kiss", "play"]
genetic = ["drd4*dat1"]
"#;
        let cfg = ModelConfig::from_toml(text).unwrap();
        let m = cfg.structure().unwrap();
        assert_eq!(m.kind, ModelKind::ThreeWay);
        assert!(m.genetic.is_fixed());
        let c = cfg.candidates().unwrap();
        assert_eq!(c.env2.len(), 2);
        assert_eq!(c.genetic[0].factors(), &["drd4", "dat1"]);
    }
}
