use std::io::Write;

use super::ManifoldModel;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Upper bound on n accepted by [`sample_count`].
pub const MAX_SAMPLES: usize = 10_000_000;

/// Mixture component of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Plus,
    Minus,
}

impl Class {
    pub fn sign(self) -> f64 {
        match self {
            Class::Plus => 1.0,
            Class::Minus => -1.0,
        }
    }
}

/// n = round(e^{αd}), rejected above [`MAX_SAMPLES`].
pub fn sample_count(alpha: f64, d: usize) -> Result<usize> {
    let log_n = alpha * d as f64;
    if !(alpha > 0.0) || !log_n.is_finite() {
        return Err(Error::param(
            "alpha",
            format!("must be positive, got {alpha}"),
        ));
    }
    if log_n > (MAX_SAMPLES as f64).ln() {
        return Err(Error::param(
            "alpha",
            format!("e^(alpha d) = e^{log_n:.2} exceeds the limit of {MAX_SAMPLES} samples"),
        ));
    }
    Ok((log_n.exp().round() as usize).max(1))
}

/// n samples with latent coordinates, class labels and ambient images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    d: usize,
    latents: Vec<f64>,
    labels: Vec<Class>,
    ambient: Vec<f64>,
    seed: u64,
}

/// Draws n samples; labels alternate +, −, +, … so class counts differ by at
/// most one. Each sample uses its own random stream.
pub fn sample_dataset(model: &ManifoldModel, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::param(
            "n",
            "dataset must contain at least one sample",
        ));
    }
    let (p, d) = (model.p(), model.d());
    let sd = model.rho().sqrt();
    let mut latents = vec![0.0; n * p];
    let mut labels = Vec::with_capacity(n);
    let mut ambient = vec![0.0; n * d];
    for i in 0..n {
        let class = if i % 2 == 0 {
            Class::Plus
        } else {
            Class::Minus
        };
        let s = class.sign();
        let mut rng = rng::stream(seed, domain::DATASET + i as u64);
        let xi = &mut latents[i * p..(i + 1) * p];
        for (x, &m) in xi.iter_mut().zip(model.mu()) {
            *x = s * m + sd * rng::normal(&mut rng);
        }
        model.embed_into(xi, &mut ambient[i * d..(i + 1) * d]);
        labels.push(class);
    }
    Ok(Dataset {
        n,
        p,
        d,
        latents,
        labels,
        ambient,
        seed,
    })
}

impl Dataset {
    /// Assembles a dataset from explicit ambient points (latents left empty).
    pub fn from_ambient(d: usize, ambient: Vec<f64>, labels: Vec<Class>) -> Result<Self> {
        if d == 0 || !ambient.len().is_multiple_of(d) {
            return Err(Error::param(
                "ambient",
                "length must be a positive multiple of d",
            ));
        }
        let n = ambient.len() / d;
        if n == 0 {
            return Err(Error::param(
                "n",
                "dataset must contain at least one sample",
            ));
        }
        if labels.len() != n {
            return Err(Error::param(
                "labels",
                format!("expected {n} labels, got {}", labels.len()),
            ));
        }
        Ok(Self {
            n,
            p: 0,
            d,
            latents: Vec::new(),
            labels,
            ambient,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent(&self, i: usize) -> &[f64] {
        &self.latents[i * self.p..(i + 1) * self.p]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.ambient[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> Class {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn ambient(&self) -> &[f64] {
        &self.ambient
    }

    pub fn latents(&self) -> &[f64] {
        &self.latents
    }

    pub fn class_count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    /// Recomputes the ambient rows from the stored latents.
    pub fn recompute_ambient(&self, model: &ManifoldModel) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.d];
        for i in 0..self.n {
            model.embed_into(self.latent(i), &mut out[i * self.d..(i + 1) * self.d]);
        }
        out
    }

    /// One row per sample: `label, xi_1..xi_p, x_1..x_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["label".to_string()];
        header.extend((1..=self.p).map(|l| format!("xi_{l}")));
        header.extend((1..=self.d).map(|j| format!("x_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n {
            let mut row = vec![if self.labels[i] == Class::Plus {
                "+1"
            } else {
                "-1"
            }
            .to_string()];
            if self.p > 0 {
                row.extend(self.latent(i).iter().map(|v| format!("{v:.17e}")));
            }
            row.extend(self.point(i).iter().map(|v| format!("{v:.17e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
