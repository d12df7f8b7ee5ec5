//! Manifold Gaussian-mixture data model.
//!
//! Latent points ξ ∈ ℝ^p are drawn from ½N(μ, ρI) + ½N(−μ, ρI) and mapped to
//! ambient space by x = φ(Fξ/√p) with F ∈ ℝ^{d×p}.

mod activation;
mod config;
mod dataset;
mod embedding;

pub use activation::{Activation, CustomActivation};
pub use config::ModelConfig;
pub use dataset::{sample_count, sample_dataset, Class, Dataset, MAX_SAMPLES};
pub use embedding::{EmbeddingMatrix, Ensemble};

use crate::error::{Error, Result};

/// Latent center specification.
#[derive(Debug, Clone, PartialEq)]
pub enum Center {
    /// μ = m·1_p.
    Scale(f64),
    Vector(Vec<f64>),
}

/// Full data distribution: dimensions, mixture parameters, activation and F.
#[derive(Debug, Clone)]
pub struct ManifoldModel {
    d: usize,
    p: usize,
    alpha: f64,
    rho: f64,
    mu: Vec<f64>,
    activation: Activation,
    embedding: EmbeddingMatrix,
}

impl ManifoldModel {
    /// Builds the model, constructing F from `(ensemble, seed)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        p: usize,
        alpha: f64,
        rho: f64,
        center: Center,
        activation: Activation,
        ensemble: Ensemble,
        seed: u64,
    ) -> Result<Self> {
        validate_dims(d, p)?;
        let embedding = EmbeddingMatrix::build(d, p, ensemble, seed)?;
        Self::with_embedding(alpha, rho, center, activation, embedding)
    }

    /// Builds the model around an explicit embedding matrix.
    pub fn with_embedding(
        alpha: f64,
        rho: f64,
        center: Center,
        activation: Activation,
        embedding: EmbeddingMatrix,
    ) -> Result<Self> {
        let (d, p) = (embedding.d(), embedding.p());
        validate_dims(d, p)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(
                "alpha",
                format!("must be positive, got {alpha}"),
            ));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", format!("must be positive, got {rho}")));
        }
        let mu = match center {
            Center::Scale(m) => {
                if !m.is_finite() {
                    return Err(Error::param("m", "must be finite"));
                }
                vec![m; p]
            }
            Center::Vector(v) => {
                if v.len() != p {
                    return Err(Error::param(
                        "mu",
                        format!("expected {p} entries, got {}", v.len()),
                    ));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::param("mu", "entries must be finite"));
                }
                v
            }
        };
        Ok(Self {
            d,
            p,
            alpha,
            rho,
            mu,
            activation,
            embedding,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// β = p/d.
    pub fn beta(&self) -> f64 {
        self.p as f64 / self.d as f64
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// ‖μ̃‖² = ‖μ‖²/p.
    pub fn mu_tilde_norm_sq(&self) -> f64 {
        self.mu.iter().map(|v| v * v).sum::<f64>() / self.p as f64
    }

    /// m = ‖μ‖/√p.
    pub fn m(&self) -> f64 {
        self.mu_tilde_norm_sq().sqrt()
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn embedding(&self) -> &EmbeddingMatrix {
        &self.embedding
    }

    pub fn ensemble(&self) -> Ensemble {
        self.embedding.ensemble()
    }

    /// Ambient image φ(Fξ/√p) of a latent point.
    pub fn embed_into(&self, xi: &[f64], out: &mut [f64]) {
        self.embedding.project_into(xi, out);
        self.activation.eval_in_place(out);
    }

    pub fn embed(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.embed_into(xi, &mut out);
        out
    }

    /// Same model with a different activation.
    pub fn with_activation(&self, activation: Activation) -> Self {
        Self {
            activation,
            ..self.clone()
        }
    }

    /// Same model with a different sample-exponent rate.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(
                "alpha",
                format!("must be positive, got {alpha}"),
            ));
        }
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }

    /// Stable 64-bit fingerprint of the model parameters and F, for provenance.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.d as u64).to_le_bytes());
        h.update((self.p as u64).to_le_bytes());
        h.update(self.alpha.to_le_bytes());
        h.update(self.rho.to_le_bytes());
        h.update(self.activation.name().as_bytes());
        for v in &self.mu {
            h.update(v.to_le_bytes());
        }
        for v in self.embedding.entries() {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

fn validate_dims(d: usize, p: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::param("d", "ambient dimension must be at least 1"));
    }
    if p == 0 {
        return Err(Error::param("p", "manifold dimension must be at least 1"));
    }
    if p > d {
        return Err(Error::param("beta", format!("p/d = {p}/{d} exceeds 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let m = ManifoldModel::new(
            10,
            5,
            0.3,
            1.0,
            Center::Scale(2.0),
            Activation::Tanh,
            Ensemble::GaussianIid,
            1,
        )
        .unwrap();
        assert_eq!(m.beta(), 0.5);
        assert!((m.mu_tilde_norm_sq() - 4.0).abs() < 1e-12);
        assert!((m.m() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invariants_are_enforced() {
        let mk = |alpha, rho| {
            ManifoldModel::new(
                4,
                2,
                alpha,
                rho,
                Center::Scale(1.0),
                Activation::Linear,
                Ensemble::GaussianIid,
                0,
            )
        };
        assert!(matches!(
            mk(0.0, 1.0),
            Err(Error::InvalidParameter { field: "alpha", .. })
        ));
        assert!(matches!(
            mk(0.5, -1.0),
            Err(Error::InvalidParameter { field: "rho", .. })
        ));
        assert!(matches!(
            ManifoldModel::new(
                2,
                3,
                0.5,
                1.0,
                Center::Scale(1.0),
                Activation::Linear,
                Ensemble::GaussianIid,
                0
            ),
            Err(Error::InvalidParameter { field: "beta", .. })
        ));
        assert!(ManifoldModel::new(
            4,
            2,
            0.5,
            1.0,
            Center::Vector(vec![1.0]),
            Activation::Linear,
            Ensemble::GaussianIid,
            0
        )
        .is_err());
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let a = ManifoldModel::new(
            6,
            3,
            0.5,
            1.0,
            Center::Scale(1.0),
            Activation::Tanh,
            Ensemble::GaussianIid,
            4,
        )
        .unwrap();
        let b = a.with_alpha(0.6).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
