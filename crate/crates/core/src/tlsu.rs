//! Temporal long-short dependency unit: one dilated `(t×1)` convolution.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{uniform_bound, uniform_tensor, Pass, NEGATIVE_SLOPE};
use crate::tensor::{receptive_field, ParamId, ParamKind, ParamStore, Real, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TlsuConfig {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub channels: usize,
}

impl TlsuConfig {
    pub fn new(channels: usize, dilation: usize) -> Self {
        TlsuConfig {
            kernel: 9,
            dilation,
            stride: 1,
            channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "temporal kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.dilation == 0 {
            return Err(Error::config("dilation must be >= 1"));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::config(format!(
                "temporal stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.channels == 0 {
            return Err(Error::config("T-LSU needs at least one channel"));
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, self.dilation)
    }
}

#[derive(Clone, Debug)]
pub struct Tlsu {
    pub config: TlsuConfig,
    /// `[C, C, t, 1]` kernel.
    pub weight: ParamId,
}

impl Tlsu {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: TlsuConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let bound = uniform_bound(c * config.kernel, NEGATIVE_SLOPE);
        let weight = store.insert(
            format!("{prefix}.weight"),
            uniform_tensor(&[c, c, config.kernel, 1], bound, rng),
            ParamKind::Learnable,
        );
        Ok(Tlsu { config, weight })
    }

    pub fn param_count(config: &TlsuConfig) -> usize {
        config.channels * config.channels * config.kernel
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let w = pass.param(self.weight);
        pass.graph.temporal_conv(x, w, self.config.dilation, self.config.stride)
    }
}
