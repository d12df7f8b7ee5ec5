use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Pointwise nonlinearity applied to the embedded latent coordinates.
#[derive(Clone)]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
    Sigmoid,
    Custom(CustomActivation),
}

/// A user-supplied activation that passed the registration checks.
#[derive(Clone)]
pub struct CustomActivation {
    name: String,
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    is_odd: bool,
    lipschitz: f64,
}

impl fmt::Debug for CustomActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomActivation")
            .field("name", &self.name)
            .field("is_odd", &self.is_odd)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Custom(c) => c.fmt(f),
            other => f.write_str(other.name()),
        }
    }
}

/// Grid used for the oddness check: 1000 points on [-10, 10].
fn odd_check_grid() -> impl Iterator<Item = f64> {
    (0..1000).map(|i| -10.0 + 20.0 * i as f64 / 999.0)
}

impl Activation {
    /// Registers a custom activation. The function must be finite with at most
    /// polynomial growth; if `is_odd` is claimed it must hold on the check grid.
    pub fn custom<F>(name: impl Into<String>, func: F, is_odd: bool) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        let reject = |reason: String| Error::Activation {
            name: name.clone(),
            reason,
        };

        // polynomial growth: |phi(y)| <= C (1 + |y|)^3 out to |y| = 1e3
        let mut growth_c: f64 = 0.0;
        for k in 0..=30 {
            let y = 1e3_f64.powf(k as f64 / 30.0) - 1.0;
            for y in [y, -y] {
                let v = func(y);
                if !v.is_finite() {
                    return Err(reject(format!("non-finite value at y = {y}")));
                }
                growth_c = growth_c.max(v.abs() / (1.0 + y.abs()).powi(3));
            }
        }
        let near = (0..=400)
            .map(|i| func(-2.0 + i as f64 / 100.0).abs())
            .fold(0.0, f64::max)
            .max(1.0);
        if growth_c > 1e6 * near {
            return Err(reject("grows faster than a cubic polynomial".into()));
        }

        if is_odd {
            for y in odd_check_grid() {
                let (a, b) = (func(y), func(-y));
                if (a + b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(reject(format!(
                        "declared odd but phi({y}) + phi({}) = {}",
                        -y,
                        a + b
                    )));
                }
            }
        }

        // slope bound from a fine grid; used only to size quadrature grids
        let h = 1e-3;
        let mut lipschitz: f64 = 0.0;
        let mut prev = func(-20.0);
        for i in 1..=40_000 {
            let y = -20.0 + i as f64 * h;
            let v = func(y);
            lipschitz = lipschitz.max(((v - prev) / h).abs());
            prev = v;
        }

        Ok(Activation::Custom(CustomActivation {
            name,
            func: Arc::new(func),
            is_odd,
            lipschitz: lipschitz.max(1e-12),
        }))
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Activation::Linear => y,
            Activation::Tanh => y.tanh(),
            Activation::Relu => y.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-y).exp()),
            Activation::Custom(c) => (c.func)(y),
        }
    }

    pub fn eval_in_place(&self, ys: &mut [f64]) {
        match self {
            Activation::Linear => {}
            _ => ys.iter_mut().for_each(|y| *y = self.eval(*y)),
        }
    }

    pub fn is_odd(&self) -> bool {
        match self {
            Activation::Linear | Activation::Tanh => true,
            Activation::Relu | Activation::Sigmoid => false,
            Activation::Custom(c) => c.is_odd,
        }
    }

    /// Whether φ is smooth everywhere; kinked or unknown activations get
    /// finer quadrature grids.
    pub fn is_smooth(&self) -> bool {
        matches!(
            self,
            Activation::Linear | Activation::Tanh | Activation::Sigmoid
        )
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Activation::Linear)
    }

    /// Upper bound on |phi'|.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Activation::Linear | Activation::Tanh | Activation::Relu => 1.0,
            Activation::Sigmoid => 0.25,
            Activation::Custom(c) => c.lipschitz,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Custom(c) => &c.name,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "identity" => Ok(Activation::Linear),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::param(
                "activation",
                format!("unknown activation `{other}` (expected linear, tanh, relu or sigmoid)"),
            )),
        }
    }
}
