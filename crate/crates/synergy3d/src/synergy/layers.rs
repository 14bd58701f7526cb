//! Layer building blocks on top of the tensor engine.

use crate::error::Result;
use crate::tensor::{
    affine, batch_norm_eval, batch_norm_train, BatchStats, Binding, ParamId, ParamStore, Var,
};
use rand::Rng;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Per-forward state: the tape, the parameter binding, train/eval mode, and
/// batch-norm statistics awaiting the post-step running update.
pub(crate) struct Fwd<'a> {
    pub binding: &'a Binding,
    pub training: bool,
    pub pending: Vec<PendingStats>,
}

pub(crate) struct PendingStats {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub stats: BatchStats,
}

impl Fwd<'_> {
    /// Collected batch statistics, in forward order.
    pub fn into_stats(self) -> Vec<(ParamId, ParamId, BatchStats)> {
        self.pending
            .into_iter()
            .map(|p| (p.mean_id, p.var_id, p.stats))
            .collect()
    }
}

/// Folds batch statistics into the running buffers, in the given order:
/// `running <- (1 - m) * running + m * batch`.
pub(crate) fn apply_bn_updates(
    store: &mut ParamStore,
    stats: &[(ParamId, ParamId, BatchStats)],
) -> Result<()> {
    let fold = |old: &[f64], new: &[f64]| -> Vec<f64> {
        old.iter()
            .zip(new)
            .map(|(o, n)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n)
            .collect()
    };
    for (mean_id, var_id, batch) in stats {
        let mean = fold(store.value(*mean_id), &batch.mean);
        store.set_value(*mean_id, mean)?;
        let var = fold(store.value(*var_id), &batch.var_unbiased);
        store.set_value(*var_id, var)?;
    }
    Ok(())
}

/// Fully-connected layer with uniform fan-in init.
pub(crate) struct AffineLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl AffineLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias_init: Option<&[f64]>,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_bound(store, rng, name, in_dim, out_dim, bias_init, bound)
    }

    /// Output head: tiny weight init so early predictions sit at the bias.
    pub fn head<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias_init: Option<&[f64]>,
    ) -> Result<Self> {
        Self::with_bound(store, rng, name, in_dim, out_dim, bias_init, 0.01)
    }

    fn with_bound<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias_init: Option<&[f64]>,
        bound: f64,
    ) -> Result<Self> {
        let w_data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b_data = match bias_init {
            Some(b) => b.to_vec(),
            None => vec![0.0; out_dim],
        };
        let w = store.register(&format!("{name}.w"), &[in_dim, out_dim], w_data, true)?;
        let b = store.register(&format!("{name}.b"), &[out_dim], b_data, true)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, ctx: &Fwd, x: &Var) -> Result<Var> {
        affine(x, ctx.binding.var(self.w), ctx.binding.var(self.b))
    }
}

/// Batch normalization layer with running statistics buffers.
pub(crate) struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub run_mean: ParamId,
    pub run_var: ParamId,
}

impl BnLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.register(&format!("{name}.gamma"), &[dim], vec![1.0; dim], true)?,
            beta: store.register(&format!("{name}.beta"), &[dim], vec![0.0; dim], true)?,
            run_mean: store.register(
                &format!("{name}.running_mean"),
                &[dim],
                vec![0.0; dim],
                false,
            )?,
            run_var: store.register(
                &format!("{name}.running_var"),
                &[dim],
                vec![1.0; dim],
                false,
            )?,
        })
    }

    pub fn forward(&self, ctx: &mut Fwd, x: &Var) -> Result<Var> {
        let gamma = ctx.binding.var(self.gamma);
        let beta = ctx.binding.var(self.beta);
        if ctx.training {
            let (y, stats) = batch_norm_train(x, gamma, beta, BN_EPS)?;
            ctx.pending.push(PendingStats {
                mean_id: self.run_mean,
                var_id: self.run_var,
                stats,
            });
            Ok(y)
        } else {
            batch_norm_eval(
                x,
                gamma,
                beta,
                ctx.binding.var(self.run_mean).data(),
                ctx.binding.var(self.run_var).data(),
                BN_EPS,
            )
        }
    }
}

/// Affine -> batch norm -> ReLU, each part optional after the affine.
pub(crate) struct MlpLayer {
    pub affine: AffineLayer,
    pub bn: Option<BnLayer>,
    pub relu: bool,
}

impl MlpLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            affine: AffineLayer::new(store, rng, name, in_dim, out_dim, None)?,
            bn: Some(BnLayer::new(store, &format!("{name}.bn"), out_dim)?),
            relu: true,
        })
    }

    pub fn forward(&self, ctx: &mut Fwd, x: &Var) -> Result<Var> {
        let mut y = self.affine.forward(ctx, x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(ctx, &y)?;
        }
        if self.relu {
            y = y.relu();
        }
        Ok(y)
    }
}

/// Weight-sharing MLP applied independently to every point of `[b, n, c]`.
pub(crate) struct SharedMlp {
    layers: Vec<MlpLayer>,
    out_dim: usize,
}

impl SharedMlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        channels: &[usize],
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(channels.len());
        let mut prev = in_dim;
        for (i, &c) in channels.iter().enumerate() {
            layers.push(MlpLayer::new(store, rng, &format!("{name}.{i}"), prev, c)?);
            prev = c;
        }
        Ok(Self {
            layers,
            out_dim: prev,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `[b, n, c_in] -> [b, n, c_out]`; permuting points permutes outputs.
    pub fn forward(&self, ctx: &mut Fwd, points: &Var) -> Result<Var> {
        let &[b, n, c] = points.shape() else {
            return Err(crate::error::Error::ShapeMismatch {
                op: "SharedMlp::forward",
                detail: format!("need [b,n,c] input, got {:?}", points.shape()),
            });
        };
        let mut x = points.reshape(&[b * n, c])?;
        for layer in &self.layers {
            x = layer.forward(ctx, &x)?;
        }
        x.reshape(&[b, n, self.out_dim])
    }
}
