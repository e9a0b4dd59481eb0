use alloc::format;

use crate::dp::{DpParams, Mechanism, PrivacyAccountant};
use crate::error::{Error, Result};
use crate::ring::{FixedPointCodec, Ring};
use crate::secure_init::InitMode;
use crate::server::CombineKind;

/// Privacy settings for every holder-to-server publication.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DpConfig {
    /// `inf` disables noise.
    pub epsilon: f64,
    pub delta: f64,
    /// `inf` disables clipping.
    pub clip: f64,
    pub mechanism: Mechanism,
    pub c1: f64,
    pub c2: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig { epsilon: f64::INFINITY, delta: 1e-4, clip: 1.0, mechanism: Mechanism::Gaussian, c1: 1.0, c2: 1.0 }
    }
}

impl DpConfig {
    /// No noise and no clipping.
    pub fn off() -> Self {
        DpConfig { clip: f64::INFINITY, ..Self::default() }
    }

    pub fn params(&self) -> Result<DpParams> {
        DpParams::new(self.epsilon, self.delta, self.clip)
    }

    pub fn accountant(&self, q: f64) -> PrivacyAccountant {
        PrivacyAccountant::new(q, self.epsilon).with_constants(self.c1, self.c2)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    /// Propagation depth `K`.
    pub depth: usize,
    /// Embedding width `d`, shared by `h0`, the local hops and the server layers.
    pub embed_dim: usize,
    /// Number of server layers `L`.
    pub server_layers: usize,
    pub dropout: f64,
    pub combine: CombineKind,
    pub init_mode: InitMode,
    /// Run the secure initial embedding once and keep `W` fixed afterwards.
    pub freeze_h0: bool,
    /// Poisson sampling rate of training nodes per epoch.
    pub sample_rate: f64,
    pub dp: DpConfig,
    pub ring_bits: u32,
    pub frac_bits: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.01,
            l2_reg: 5e-4,
            depth: 2,
            embed_dim: 16,
            server_layers: 1,
            dropout: 0.5,
            combine: CombineKind::Mean,
            init_mode: InitMode::Collaborative,
            freeze_h0: false,
            sample_rate: 1.0,
            dp: DpConfig::default(),
            ring_bits: 64,
            frac_bits: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 10.0) {
            return bad(format!("learning_rate must lie in (0, 10], got {}", self.learning_rate));
        }
        if !(1e-4..=1e-2).contains(&self.l2_reg) {
            return bad(format!("l2_reg must lie in [1e-4, 1e-2], got {}", self.l2_reg));
        }
        if !(1..=5).contains(&self.depth) {
            return bad(format!("depth must lie in 1..=5, got {}", self.depth));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be at least 1".into());
        }
        if self.server_layers == 0 {
            return bad("server_layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return bad(format!("sample_rate must lie in (0, 1], got {}", self.sample_rate));
        }
        if !(1..=64).contains(&self.ring_bits) || self.frac_bits == 0 || 2 * self.frac_bits + 8 > self.ring_bits {
            return bad(format!("ring_bits {} cannot hold products with frac_bits {}", self.ring_bits, self.frac_bits));
        }
        if !(self.dp.c1 > 0.0 && self.dp.c2 > 0.0) {
            return bad("composition constants must be positive".into());
        }
        self.dp.params()?;
        if self.dp.mechanism == Mechanism::JamesStein && self.embed_dim < 3 {
            return Err(Error::DimensionTooSmall(self.embed_dim));
        }
        Ok(())
    }

    pub fn codec(&self) -> FixedPointCodec {
        FixedPointCodec::new(Ring::new(self.ring_bits), self.frac_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn ranges_are_enforced() {
        let base = TrainConfig::default();
        let cases = [
            TrainConfig { epochs: 0, ..base.clone() },
            TrainConfig { learning_rate: 0.0, ..base.clone() },
            TrainConfig { l2_reg: 0.1, ..base.clone() },
            TrainConfig { depth: 6, ..base.clone() },
            TrainConfig { dropout: 1.0, ..base.clone() },
            TrainConfig { sample_rate: 0.0, ..base.clone() },
            TrainConfig { frac_bits: 30, ..base.clone() },
            TrainConfig { dp: DpConfig { epsilon: -1.0, ..DpConfig::default() }, ..base.clone() },
            TrainConfig {
                embed_dim: 2,
                dp: DpConfig { mechanism: Mechanism::JamesStein, ..DpConfig::default() },
                ..base.clone()
            },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
