//! Spatial long-short dependency unit.
//!
//! Each head mixes joints with a learnable dependency matrix `W` plus an
//! input-conditioned, row-stochastic attention map `A`, then embeds channels:
//!
//! ```text
//! u   = window_unfold(x, τ)                       [B, C_in, T, τV]
//! A   = softmax_rows((E_θ·u)ᵀ (E_φ·u) / (C_e·T))   [B, τV, τV]
//! y_i = E_i · reduce_τ(u × (W_i + A_i))           [B, C_out, T, V]
//! out = Σ_i y_i + residual(x)
//! ```
//!
//! `W` starts from a topology-free uniform distribution instead of a
//! skeleton adjacency matrix.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{uniform_bound, uniform_tensor, Pass, NEGATIVE_SLOPE};
use crate::tensor::{ParamId, ParamKind, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct SlsuConfig {
    pub heads: usize,
    pub tau: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub c_embed: usize,
    pub negative_slope: f64,
    /// When false the heads use `W` alone.
    pub attention: bool,
    /// Unit-internal identity or projection path.
    pub residual: bool,
}

impl SlsuConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        SlsuConfig {
            heads: 3,
            tau: 1,
            c_in,
            c_out,
            c_embed: default_embed_channels(c_out),
            negative_slope: NEGATIVE_SLOPE,
            attention: true,
            residual: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::config("S-LSU needs at least one head"));
        }
        if self.tau == 0 {
            return Err(Error::config("temporal window must be >= 1"));
        }
        if self.c_in == 0 || self.c_out == 0 || self.c_embed == 0 {
            return Err(Error::config("S-LSU channel extents must be >= 1"));
        }
        Ok(())
    }
}

/// Attention embedding width: a quarter of the output width, at least 4.
pub fn default_embed_channels(c_out: usize) -> usize {
    (c_out / 4).max(4)
}

/// Half-width of the dependency-matrix initializer. Uses `V`, not `τV`.
pub fn dependency_bound(joints: usize, negative_slope: f64) -> f64 {
    uniform_bound(joints, negative_slope)
}

/// Samples a `τV×τV` dependency matrix uniformly on `[−bound, bound]`.
pub fn init_dependency<T: Real, R: Rng + ?Sized>(
    joints: usize,
    tau: usize,
    negative_slope: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if joints == 0 || tau == 0 {
        return Err(Error::config("dependency matrix needs V >= 1 and tau >= 1"));
    }
    let s = tau * joints;
    Ok(uniform_tensor(&[s, s], dependency_bound(joints, negative_slope), rng))
}

/// Parameters of one head.
#[derive(Clone, Debug)]
pub struct SlsuHead {
    /// `τV×τV` dependency matrix.
    pub w: ParamId,
    /// `C_out×C_in` output embedding.
    pub e: ParamId,
    pub e_theta: ParamId,
    pub e_phi: ParamId,
}

#[derive(Clone, Debug)]
pub struct Slsu {
    pub config: SlsuConfig,
    pub joints: usize,
    pub heads: Vec<SlsuHead>,
    /// `None` means identity (or no residual when disabled).
    pub projection: Option<ParamId>,
}

impl Slsu {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: SlsuConfig,
        joints: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let a = config.negative_slope;
        let (ci, co, ce) = (config.c_in, config.c_out, config.c_embed);
        let embed_bound = uniform_bound(ci, a);
        let mut heads = Vec::with_capacity(config.heads);
        for i in 0..config.heads {
            let p = format!("{prefix}.heads.{i}");
            let w = init_dependency(joints, config.tau, a, rng)?;
            heads.push(SlsuHead {
                w: store.insert(format!("{p}.W"), w, ParamKind::Learnable),
                e: store.insert(
                    format!("{p}.E"),
                    uniform_tensor(&[co, ci], embed_bound, rng),
                    ParamKind::Learnable,
                ),
                e_theta: store.insert(
                    format!("{p}.E_theta"),
                    uniform_tensor(&[ce, ci], embed_bound, rng),
                    ParamKind::Learnable,
                ),
                e_phi: store.insert(
                    format!("{p}.E_phi"),
                    uniform_tensor(&[ce, ci], embed_bound, rng),
                    ParamKind::Learnable,
                ),
            });
        }
        let projection = (config.residual && ci != co).then(|| {
            store.insert(
                format!("{prefix}.residual"),
                uniform_tensor(&[co, ci], embed_bound, rng),
                ParamKind::Learnable,
            )
        });
        Ok(Slsu {
            config,
            joints,
            heads,
            projection,
        })
    }

    /// Learnable scalars of a unit with this configuration.
    pub fn param_count(config: &SlsuConfig, joints: usize) -> usize {
        let s = config.tau * joints;
        let per_head = s * s + config.c_out * config.c_in + 2 * config.c_embed * config.c_in;
        let projection = if config.residual && config.c_in != config.c_out {
            config.c_out * config.c_in
        } else {
            0
        };
        config.heads * per_head + projection
    }

    /// Row-stochastic attention map `[B, τV, τV]` of one head over an
    /// unfolded input `u = [B, C_in, T, τV]`.
    pub fn attention_map<T: Real>(&self, pass: &mut Pass<'_, T>, u: Var, head: usize) -> Result<Var> {
        let h = self
            .heads
            .get(head)
            .ok_or_else(|| Error::config(format!("no head {head}")))?;
        let shape = pass.graph.shape(u).to_vec();
        if shape.len() != 4 || shape[1] != self.config.c_in || shape[3] != self.config.tau * self.joints {
            return Err(Error::dim(format!("attention_map: unfolded input {shape:?}")));
        }
        let et = pass.param(h.e_theta);
        let ep = pass.param(h.e_phi);
        let theta = pass.graph.embed(u, et)?;
        let phi = pass.graph.embed(u, ep)?;
        let logits = pass.graph.gram(theta, phi)?;
        // Mean rather than sum over the C_e·T embedded positions.
        let k = self.config.c_embed * shape[2];
        let logits = pass.graph.scale(logits, T::one() / T::from_usize_lossy(k));
        pass.graph.softmax_rows(logits)
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let shape = pass.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.config.c_in || shape[3] != self.joints {
            return Err(Error::dim(format!(
                "S-LSU expects [B, {}, T, {}], got {shape:?}",
                self.config.c_in, self.joints
            )));
        }
        let tau = self.config.tau;
        let u = pass.graph.window_unfold(x, tau)?;
        let mut total: Option<Var> = None;
        for (i, head) in self.heads.iter().enumerate() {
            let w = pass.param(head.w);
            let mix = if self.config.attention {
                let a = self.attention_map(pass, u, i)?;
                pass.graph.add_broadcast(a, w)?
            } else {
                let s = tau * self.joints;
                pass.graph.reshape(w, &[1, s, s])?
            };
            let mixed = pass.graph.joint_mix(u, mix)?;
            let reduced = pass.graph.window_reduce(mixed, tau)?;
            let e = pass.param(head.e);
            let y = pass.graph.embed(reduced, e)?;
            total = Some(match total {
                Some(t) => pass.graph.add(t, y)?,
                None => y,
            });
        }
        let mut out = total.expect("at least one head");
        if self.config.residual {
            let r = match self.projection {
                Some(p) => {
                    let p = pass.param(p);
                    pass.graph.embed(x, p)?
                }
                None => x,
            };
            out = pass.graph.add(out, r)?;
        }
        Ok(out)
    }
}
