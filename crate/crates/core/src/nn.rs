//! Parameter initialisation and the forward context shared by all modules.
//!
//! Layer parameters follow one naming scheme: a convolution at `prefix` owns
//! `prefix.weight` and optionally `prefix.bias`; a batchnorm attached to it
//! owns `prefix.bn.gamma`, `prefix.bn.beta` and the buffers
//! `prefix.bn.running_mean` / `prefix.bn.running_var`.

use rand::Rng;
use wsfcn_tensor::ops::BnStats;
use wsfcn_tensor::{Conv2dSpec, DType, ParamStore, Shape, Tape, Tensor, Var};

use crate::error::Result;

pub fn weight_name(prefix: &str) -> String {
    format!("{prefix}.weight")
}

pub fn bias_name(prefix: &str) -> String {
    format!("{prefix}.bias")
}

fn bn_names(prefix: &str) -> [String; 4] {
    [
        format!("{prefix}.bn.gamma"),
        format!("{prefix}.bn.beta"),
        format!("{prefix}.bn.running_mean"),
        format!("{prefix}.bn.running_var"),
    ]
}

/// Everything needed to register parameters of one module.
pub struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    pub dtype: DType,
    pub lr_multiplier: f64,
}

impl<R: Rng> Init<'_, R> {
    /// He-normal convolution weights scaled by `gain`; zero bias.
    pub fn conv(
        &mut self,
        prefix: &str,
        out_c: usize,
        in_c: usize,
        (kh, kw): (usize, usize),
        bias: bool,
        gain: f64,
    ) -> Result<()> {
        let fan_in = (in_c * kh * kw) as f64;
        let w = Tensor::randn(
            Shape::new(out_c, in_c, kh, kw)?,
            self.dtype,
            gain * (2.0 / fan_in).sqrt(),
            self.rng,
        );
        self.store.insert(weight_name(prefix), w, self.lr_multiplier)?;
        if bias {
            let b = Tensor::zeros(Shape::new(1, out_c, 1, 1)?, self.dtype);
            self.store.insert(bias_name(prefix), b, self.lr_multiplier)?;
        }
        Ok(())
    }

    pub fn batchnorm(&mut self, prefix: &str, c: usize) -> Result<()> {
        let shape = Shape::new(1, c, 1, 1)?;
        let [g, b, m, v] = bn_names(prefix);
        self.store
            .insert(g, Tensor::full(shape, self.dtype, 1.0), self.lr_multiplier)?;
        self.store
            .insert(b, Tensor::zeros(shape, self.dtype), self.lr_multiplier)?;
        self.store.insert_buffer(m, Tensor::zeros(shape, self.dtype))?;
        self.store.insert_buffer(v, Tensor::full(shape, self.dtype, 1.0))?;
        Ok(())
    }

    /// Bias-free `k×k` convolution followed by batchnorm.
    pub fn conv_bn(&mut self, prefix: &str, out_c: usize, in_c: usize, k: usize) -> Result<()> {
        self.conv(prefix, out_c, in_c, (k, k), false, 1.0)?;
        self.batchnorm(prefix, out_c)
    }
}

/// Forward-pass state: the parameters, the tape being recorded, the mode and
/// the running statistics produced by training-mode batchnorm layers.
pub struct Ctx<'a> {
    pub store: &'a ParamStore,
    pub tape: &'a mut Tape,
    pub training: bool,
    /// Replaces every embedding block `E` by the identity (test surrogate).
    pub identity_embeddings: bool,
    bn_updates: Vec<(String, BnStats)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, tape: &'a mut Tape, training: bool) -> Self {
        Ctx {
            store,
            tape,
            training,
            identity_embeddings: false,
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        Ok(self.tape.param(self.store, name)?)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Convolution with `prefix.weight` and, when registered, `prefix.bias`.
    pub fn conv(&mut self, prefix: &str, x: Var, spec: Conv2dSpec) -> Result<Var> {
        let w = self.param(&weight_name(prefix))?;
        let bname = bias_name(prefix);
        let b = if self.store.contains(&bname) {
            Some(self.param(&bname)?)
        } else {
            None
        };
        Ok(self.tape.conv2d(x, w, b, spec)?)
    }

    pub fn batchnorm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let [g, b, m, v] = bn_names(prefix);
        let gamma = self.param(&g)?;
        let beta = self.param(&b)?;
        let stats = BnStats {
            mean: self.store.buffer(&m)?.clone(),
            var: self.store.buffer(&v)?.clone(),
        };
        let (y, updated) = self.tape.batchnorm(x, gamma, beta, &stats, self.training)?;
        if let Some(u) = updated {
            self.bn_updates.push((prefix.to_string(), u));
        }
        Ok(y)
    }

    pub fn conv_bn_relu(&mut self, prefix: &str, x: Var, spec: Conv2dSpec) -> Result<Var> {
        let y = self.conv(prefix, x, spec)?;
        let y = self.batchnorm(prefix, y)?;
        Ok(self.tape.relu(y)?)
    }

    /// The embedding block `E`: 3×3 convolution, batchnorm, ReLU.
    pub fn embed(&mut self, prefix: &str, x: Var) -> Result<Var> {
        if self.identity_embeddings {
            return Ok(x);
        }
        self.conv_bn_relu(prefix, x, Conv2dSpec::same(3, 3))
    }

    /// Running statistics collected so far, in execution order.
    pub fn take_bn_updates(&mut self) -> Vec<(String, BnStats)> {
        std::mem::take(&mut self.bn_updates)
    }
}

/// Writes running statistics returned by [`Ctx::take_bn_updates`].
pub fn apply_bn_updates(store: &mut ParamStore, updates: Vec<(String, BnStats)>) -> Result<()> {
    for (prefix, stats) in updates {
        let [_, _, m, v] = bn_names(&prefix);
        store.set_buffer(&m, stats.mean)?;
        store.set_buffer(&v, stats.var)?;
    }
    Ok(())
}
