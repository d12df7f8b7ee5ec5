use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Activation, Center, Ensemble, ManifoldModel};
use crate::error::{Error, Result};

/// Text-serializable model description.
///
/// Either `p` or `beta` fixes the manifold dimension (p = round(βd)); either
/// `m` or `mu_file` fixes the center. Unset keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub alpha: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_file: Option<PathBuf>,
    pub activation: String,
    pub ensemble: Ensemble,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 100,
            p: None,
            beta: Some(0.5),
            alpha: 0.5,
            rho: 1.0,
            m: Some(1.0),
            mu_file: None,
            activation: "linear".into(),
            ensemble: Ensemble::GaussianIid,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Manifold dimension implied by `p` or `beta`.
    pub fn resolved_p(&self) -> Result<usize> {
        match (self.p, self.beta) {
            (Some(_), Some(_)) => Err(Error::param("beta", "set either p or beta, not both")),
            (Some(p), None) => Ok(p),
            (None, Some(beta)) => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::param(
                        "beta",
                        format!("must lie in (0, 1], got {beta}"),
                    ));
                }
                Ok(((beta * self.d as f64).round() as usize).max(1))
            }
            (None, None) => Err(Error::param("p", "one of p or beta is required")),
        }
    }

    pub fn center(&self) -> Result<Center> {
        match (&self.m, &self.mu_file) {
            (Some(_), Some(_)) => Err(Error::param("mu_file", "set either m or mu_file, not both")),
            (Some(m), None) => Ok(Center::Scale(*m)),
            (None, Some(path)) => read_vector(path).map(Center::Vector),
            (None, None) => Ok(Center::Scale(1.0)),
        }
    }

    pub fn build(&self) -> Result<ManifoldModel> {
        if self.d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        let p = self.resolved_p()?;
        if p > self.d {
            return Err(Error::param(
                "beta",
                format!("p = {p} exceeds d = {}", self.d),
            ));
        }
        let activation: Activation = self.activation.parse()?;
        ManifoldModel::new(
            self.d,
            p,
            self.alpha,
            self.rho,
            self.center()?,
            activation,
            self.ensemble,
            self.seed,
        )
    }
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read mu_file {}: {e}", path.display())))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::param("mu_file", format!("not a number: `{s}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_build() {
        let text = r#"
            d = 20
            beta = 0.25
            alpha = 0.3
            rho = 1.0
            m = 1.5
            activation = "tanh"
            ensemble = "isometry"
            seed = 4
        "#;
        let cfg = ModelConfig::from_toml_str(text).unwrap();
        let again = ModelConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let model = cfg.build().unwrap();
        assert_eq!(model.p(), 5);
        assert_eq!(model.ensemble(), Ensemble::DeterministicIsometry);
        assert!((model.m() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bad_beta_names_the_field() {
        let cfg = ModelConfig {
            beta: Some(1.5),
            ..ModelConfig::default()
        };
        let err = cfg.build().unwrap_err();
        assert_eq!(err.field(), Some("beta"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "d = 4\nbeta = 0.5\nalpha = 0.1\nrho = 1.0\nactivation = \"linear\"\nensemble = \"gaussian_iid\"\nseed = 0\ngamma = 2\n";
        assert!(ModelConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn mu_file_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mu.txt");
        std::fs::write(&path, "1.0, -2.0\n0.5").unwrap();
        let cfg = ModelConfig {
            d: 6,
            p: Some(3),
            beta: None,
            m: None,
            mu_file: Some(path),
            ..ModelConfig::default()
        };
        let model = cfg.build().unwrap();
        assert_eq!(model.mu(), &[1.0, -2.0, 0.5]);
    }
}
