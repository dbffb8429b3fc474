//! Low-rank adaptation of linear layers. An adapted layer computes
//! `x.W + (alpha/rank) * (x.down).up` with the base `W` frozen and only
//! the low-rank pair trainable. The up matrix starts at zero, so a fresh
//! adapter leaves the forward pass bit-identical; merging folds the
//! delta back into the base weight.

use crate::error::{FuseError, Result};
use crate::nn::{fan_in_std, gaussian_param};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Parameter, Tape, Tensor};

#[derive(Clone)]
pub struct LoraPair {
    /// `[d_in, rank]`, Gaussian init.
    pub down: Parameter,
    /// `[rank, d_out]`, zero init (adapter starts as a no-op).
    pub up: Parameter,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraPair {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// A named linear weight that may carry a low-rank adapter.
pub struct AdaptedLinear {
    name: String,
    pub weight: Parameter,
    pub lora: Option<LoraPair>,
}

impl AdaptedLinear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<AdaptedLinear> {
        Ok(AdaptedLinear {
            name: name.to_string(),
            weight: gaussian_param(store, rng, name, &[d_in, d_out], fan_in_std(d_in))?,
            lora: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let base = tape.matmul(x, &self.weight.value())?;
        match &self.lora {
            None => Ok(base),
            Some(pair) => {
                let down = tape.matmul(x, &pair.down.value())?;
                let delta = tape.matmul(&down, &pair.up.value())?;
                tape.add(&base, &tape.scale(&delta, pair.scaling()))
            }
        }
    }

    /// Attach a fresh adapter and freeze the base weight.
    pub fn attach_lora(
        &mut self,
        store: &mut ParamStore,
        rng: &mut Rng,
        rank: usize,
        alpha: f64,
    ) -> Result<()> {
        if self.lora.is_some() {
            return Err(FuseError::contract(format!(
                "{} already carries an adapter",
                self.name
            )));
        }
        if rank == 0 {
            return Err(FuseError::Config("adapter rank must be positive".into()));
        }
        let shape = self.weight.shape();
        let (d_in, d_out) = (shape[0], shape[1]);
        let down = gaussian_param(store, rng, &format!("{}.lora_down", self.name), &[d_in, rank], fan_in_std(d_in))?;
        let up = crate::nn::const_param(store, &format!("{}.lora_up", self.name), &[rank, d_out], 0.0)?;
        self.weight.set_frozen(true);
        self.lora = Some(LoraPair { down, up, rank, alpha });
        Ok(())
    }

    /// Fold `(alpha/rank) * down.up` into the base weight and drop the
    /// adapter. Rejected when no adapter is attached.
    pub fn merge_lora(&mut self, store: &mut ParamStore) -> Result<()> {
        let Some(pair) = self.lora.take() else {
            return Err(FuseError::contract(format!(
                "{} has no adapter to merge",
                self.name
            )));
        };
        let shape = self.weight.shape();
        let (d_in, d_out) = (shape[0], shape[1]);
        let down = pair.down.value();
        let up = pair.up.value();
        let delta = crate::tensor::Tape::inference()
            .matmul(&down.detach(), &up.detach())?;
        let s = pair.scaling();
        let merged: Vec<f64> = self
            .weight
            .value()
            .data()
            .iter()
            .zip(delta.data())
            .map(|(w, d)| w + s * d)
            .collect();
        debug_assert_eq!(merged.len(), d_in * d_out);
        self.weight.set_data(merged);
        store.remove(&format!("{}.lora_down", self.name));
        store.remove(&format!("{}.lora_up", self.name));
        Ok(())
    }

    pub fn has_lora(&self) -> bool {
        self.lora.is_some()
    }
}
