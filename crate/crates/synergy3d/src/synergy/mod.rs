//! The synergy networks: observation encoder with separate decoder heads,
//! multi-attribute landmark refinement, landmark-to-parameter regression,
//! and the four-term training loss.
//!
//! The forward representation direction goes from parameters to landmarks
//! (reconstruct, pose, extract, refine); the reverse direction regresses
//! parameters back from the refined landmarks. A consistency loss ties the
//! two parameter estimates together.

mod config;
mod layers;
mod loss;

pub use config::{
    LossWeights, MafaAttributes, MafaConfig, NetConfig, Pooling, RegressorInput, StopGrad,
    TargetBlocks, CONFIG_VERSION,
};
pub use loss::{
    consistency_loss, landmark_alignment_loss, param_supervision_loss, weighted_total, LossValues,
};

pub(crate) use layers::Fwd;

/// Batch-norm statistics collected by one training forward, keyed by the
/// running-buffer ids they update.
pub type BnStats = Vec<(ParamId, ParamId, BatchStats)>;

/// Folds collected batch statistics into a store's running buffers.
pub fn apply_bn_updates(store: &mut ParamStore, stats: &BnStats) -> Result<()> {
    layers::apply_bn_updates(store, stats)
}

use crate::error::{Error, Result};
use crate::morphable::{
    sanitize_pose_block, transform_points, FaceBasis, LandmarkSet, ParamVector, PoseTransform,
    N_EXPR, N_SHAPE, PARAM_DIM,
};
use crate::tensor::{concat_cols, BatchStats, Binding, ParamId, ParamStore, Tape, Var};
use layers::{AffineLayer, MlpLayer, SharedMlp, BN_EPS, BN_MOMENTUM};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Landmark-only reconstruction constants gathered from a basis.
struct BasisConsts {
    lm_mean: ParamId,
    shape_w: ParamId,
    expr_w: ParamId,
}

/// Observation encoder: shared MLP over per-landmark observation triples,
/// global pooling, latent projection, and the three decoder heads.
struct ObsEncoder {
    point_mlp: SharedMlp,
    latent: MlpLayer,
    head_pose: AffineLayer,
    head_shape: AffineLayer,
    head_expr: AffineLayer,
}

/// Multi-attribute landmark refinement.
struct Mafa {
    low: SharedMlp,
    global: SharedMlp,
    adapt_z: MlpLayer,
    adapt_shape: MlpLayer,
    adapt_expr: MlpLayer,
    decoder_hidden: SharedMlp,
    decoder_out: AffineLayer,
}

/// Landmark-to-parameter regressor.
struct LandmarkRegressor {
    fuse: Option<(MlpLayer, MlpLayer, MlpLayer)>,
    encoder: SharedMlp,
    head_pose: AffineLayer,
    head_shape: AffineLayer,
    head_expr: AffineLayer,
}

/// All graph outputs of one training-mode forward pass.
pub struct SynergyOut {
    /// Latent observation code `[batch, latent]`.
    pub z: Var,
    /// Parameters from the observation path, `[batch, 62]`.
    pub alpha: Var,
    /// Coarse landmarks from the differentiable reconstruction `[batch, n, 3]`.
    pub coarse: Var,
    /// Refined landmarks (equals `coarse` when refinement is disabled).
    pub refined: Var,
    /// Parameters regressed from landmarks, when that stage is enabled.
    pub alpha_hat: Option<Var>,
}

/// Inference outputs for one observation.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub alpha: ParamVector,
    /// Sanitized similarity pose factored from the regressed block.
    pub pose: PoseTransform,
    pub coarse: LandmarkSet,
    pub refined: LandmarkSet,
}

pub struct SynergyModel {
    pub cfg: NetConfig,
    pub store: ParamStore,
    consts: BasisConsts,
    encoder: ObsEncoder,
    mafa: Option<Mafa>,
    regressor: Option<LandmarkRegressor>,
}

impl SynergyModel {
    /// Builds the networks for `cfg` against `basis`, with deterministic
    /// seed-driven initialization. Registration order is fixed, so two
    /// models built from the same inputs are identical.
    pub fn new(cfg: NetConfig, basis: &FaceBasis, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if basis.n_landmarks() != cfg.n_landmarks {
            return Err(Error::InvalidConfig(format!(
                "config expects {} landmarks, basis has {}",
                cfg.n_landmarks,
                basis.n_landmarks()
            )));
        }
        let nl = cfg.n_landmarks;
        let mut store = ParamStore::new();
        store.register("meta.bn_eps", &[1], vec![BN_EPS], false)?;
        store.register("meta.bn_momentum", &[1], vec![BN_MOMENTUM], false)?;

        let (lm_mean, lm_shape, lm_expr) = basis.landmark_slices();
        let consts = BasisConsts {
            lm_mean: store.register("const.landmark_mean", &[3 * nl], lm_mean, false)?,
            shape_w: store.register(
                "const.landmark_shape_w",
                &[N_SHAPE, 3 * nl],
                lm_shape,
                false,
            )?,
            expr_w: store.register("const.landmark_expr_w", &[N_EXPR, 3 * nl], lm_expr, false)?,
        };

        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let point_mlp = SharedMlp::new(&mut store, &mut rng, "encoder.point", 3, &cfg.encoder_hidden)?;
        let latent = MlpLayer::new(
            &mut store,
            &mut rng,
            "encoder.latent",
            point_mlp.out_dim(),
            cfg.latent_dim,
        )?;
        // The pose head starts at the identity similarity transform so the
        // initial reconstruction sits at the mean face instead of collapsing.
        let head_pose = AffineLayer::head(
            &mut store,
            &mut rng,
            "decoder.pose",
            cfg.latent_dim,
            12,
            Some(&crate::morphable::IDENTITY_POSE_PARAMS),
        )?;
        let head_shape =
            AffineLayer::head(&mut store, &mut rng, "decoder.shape", cfg.latent_dim, N_SHAPE, None)?;
        let head_expr =
            AffineLayer::head(&mut store, &mut rng, "decoder.expr", cfg.latent_dim, N_EXPR, None)?;
        let encoder = ObsEncoder {
            point_mlp,
            latent,
            head_pose,
            head_shape,
            head_expr,
        };

        let mafa = if cfg.use_mafa {
            let c_low = cfg.mafa.low_level_channels;
            let low = SharedMlp::new(&mut store, &mut rng, "mafa.low", 3, &[c_low, c_low])?;
            let global = SharedMlp::new(
                &mut store,
                &mut rng,
                "mafa.global",
                c_low,
                &[2 * c_low, cfg.mafa.global_point_channels],
            )?;
            let adapt_z = MlpLayer::new(
                &mut store,
                &mut rng,
                "mafa.adapt_z",
                cfg.latent_dim,
                cfg.latent_dim,
            )?;
            let adapt_shape =
                MlpLayer::new(&mut store, &mut rng, "mafa.adapt_shape", N_SHAPE, N_SHAPE)?;
            let adapt_expr =
                MlpLayer::new(&mut store, &mut rng, "mafa.adapt_expr", N_EXPR, N_EXPR)?;
            let per_point = cfg.mafa.per_point_dim(cfg.latent_dim, cfg.mafa_attributes);
            let decoder_hidden = SharedMlp::new(
                &mut store,
                &mut rng,
                "mafa.decoder",
                per_point,
                &cfg.mafa.decoder_hidden,
            )?;
            let decoder_out = AffineLayer::head(
                &mut store,
                &mut rng,
                "mafa.decoder.out",
                decoder_hidden.out_dim(),
                3,
                None,
            )?;
            Some(Mafa {
                low,
                global,
                adapt_z,
                adapt_shape,
                adapt_expr,
                decoder_hidden,
                decoder_out,
            })
        } else {
            None
        };

        let regressor = if cfg.use_lmk_to_3dmm {
            let fuse = if cfg.lmk3dmm_fuse_attributes {
                Some((
                    MlpLayer::new(&mut store, &mut rng, "lmk2mm.adapt_z", cfg.latent_dim, cfg.latent_dim)?,
                    MlpLayer::new(&mut store, &mut rng, "lmk2mm.adapt_shape", N_SHAPE, N_SHAPE)?,
                    MlpLayer::new(&mut store, &mut rng, "lmk2mm.adapt_expr", N_EXPR, N_EXPR)?,
                ))
            } else {
                None
            };
            let in_dim = if cfg.lmk3dmm_fuse_attributes {
                3 + cfg.latent_dim + N_SHAPE + N_EXPR
            } else {
                3
            };
            let encoder_mlp =
                SharedMlp::new(&mut store, &mut rng, "lmk2mm.encoder", in_dim, &cfg.lmk3dmm_hidden)?;
            let ce = encoder_mlp.out_dim();
            Some(LandmarkRegressor {
                fuse,
                encoder: encoder_mlp,
                head_pose: AffineLayer::head(
                    &mut store,
                    &mut rng,
                    "lmk2mm.pose",
                    ce,
                    12,
                    Some(&crate::morphable::IDENTITY_POSE_PARAMS),
                )?,
                head_shape: AffineLayer::head(&mut store, &mut rng, "lmk2mm.shape", ce, N_SHAPE, None)?,
                head_expr: AffineLayer::head(&mut store, &mut rng, "lmk2mm.expr", ce, N_EXPR, None)?,
            })
        } else {
            None
        };

        Ok(Self {
            cfg,
            store,
            consts,
            encoder,
            mafa,
            regressor,
        })
    }

    /// Encoder + decoder heads: observation to `(z, alpha_p, alpha_s, alpha_e)`.
    fn encode(&self, ctx: &mut Fwd, obs: &Var) -> Result<(Var, Var, Var, Var)> {
        let &[batch, dim] = obs.shape() else {
            return Err(Error::ShapeMismatch {
                op: "SynergyModel::encode",
                detail: format!("observation must be [batch, 3*n_l], got {:?}", obs.shape()),
            });
        };
        if dim != self.cfg.observation_dim() {
            return Err(Error::ShapeMismatch {
                op: "SynergyModel::encode",
                detail: format!("observation dim {dim}, expected {}", self.cfg.observation_dim()),
            });
        }
        // Per-landmark observation triples, each tagged with a one-hot slot
        // id: the observation layout is fixed-order, and pooling would
        // otherwise erase which landmark contributed which features.
        let n = self.cfg.n_landmarks;
        let points = obs.reshape(&[batch * n, 3])?;
        let mut eye = vec![0.0; batch * n * n];
        for b in 0..batch {
            for k in 0..n {
                eye[(b * n + k) * n + k] = 1.0;
            }
        }
        let slots = obs.tape().leaf(eye, &[batch * n, n])?;
        let tagged = concat_cols(&[&points, &slots])?.reshape(&[batch, n, 3 + n])?;
        let features = self.encoder.point_mlp.forward(ctx, &tagged)?;
        let pooled = match self.cfg.pooling {
            Pooling::Average => features.global_avg_pool()?,
            Pooling::Max => features.global_max_pool()?,
        };
        let z = self.encoder.latent.forward(ctx, &pooled)?;
        let alpha_p = self.encoder.head_pose.forward(ctx, &z)?;
        let alpha_s = self.encoder.head_shape.forward(ctx, &z)?;
        let alpha_e = self.encoder.head_expr.forward(ctx, &z)?;
        Ok((z, alpha_p, alpha_s, alpha_e))
    }

    /// Differentiable landmark reconstruction: frontal landmarks from the
    /// coefficient blocks, then the regressed 12-dim block applied directly
    /// as `[M | t]`.
    fn reconstruct_coarse(
        &self,
        ctx: &Fwd,
        alpha_p: &Var,
        alpha_s: &Var,
        alpha_e: &Var,
    ) -> Result<Var> {
        let batch = alpha_p.shape()[0];
        let ws = ctx.binding.var(self.consts.shape_w);
        let we = ctx.binding.var(self.consts.expr_w);
        let mean = ctx.binding.var(self.consts.lm_mean);
        let frontal = alpha_s
            .matmul(ws)?
            .add(&alpha_e.matmul(we)?)?
            .add_bias(mean)?
            .reshape(&[batch, self.cfg.n_landmarks, 3])?;
        frontal.pose_points(alpha_p)
    }

    fn refine(
        &self,
        ctx: &mut Fwd,
        mafa: &Mafa,
        coarse: &Var,
        z: &Var,
        alpha_s: &Var,
        alpha_e: &Var,
    ) -> Result<Var> {
        let &[batch, n, _] = coarse.shape() else {
            unreachable!("coarse landmarks are always [b,n,3]");
        };
        let low = mafa.low.forward(ctx, coarse)?;
        let global = mafa.global.forward(ctx, &low)?.global_max_pool()?;
        let fused = match self.cfg.mafa_attributes {
            MafaAttributes::Point => global,
            MafaAttributes::PointImage => {
                let za = mafa.adapt_z.forward(ctx, z)?;
                concat_cols(&[&global, &za])?
            }
            MafaAttributes::All => {
                let za = mafa.adapt_z.forward(ctx, z)?;
                let sa = mafa.adapt_shape.forward(ctx, alpha_s)?;
                let ea = mafa.adapt_expr.forward(ctx, alpha_e)?;
                concat_cols(&[&global, &za, &sa, &ea])?
            }
        };
        let fused_dim = fused.shape()[1];
        let c_low = mafa.low.out_dim();
        let repeated = fused.repeat_rows(n)?.reshape(&[batch * n, fused_dim])?;
        let low_flat = low.reshape(&[batch * n, c_low])?;
        let per_point = concat_cols(&[&low_flat, &repeated])?
            .reshape(&[batch, n, c_low + fused_dim])?;
        let hidden = mafa.decoder_hidden.forward(ctx, &per_point)?;
        let h_dim = mafa.decoder_hidden.out_dim();
        let offsets = crate::tensor::affine(
            &hidden.reshape(&[batch * n, h_dim])?,
            ctx.binding.var(mafa.decoder_out.w),
            ctx.binding.var(mafa.decoder_out.b),
        )?
        .reshape(&[batch, n, 3])?;
        coarse.add(&offsets)
    }

    fn regress_from_landmarks(
        &self,
        ctx: &mut Fwd,
        reg: &LandmarkRegressor,
        landmarks: &Var,
        z: &Var,
        alpha_s: &Var,
        alpha_e: &Var,
    ) -> Result<Var> {
        let &[batch, n, _] = landmarks.shape() else {
            unreachable!("landmark input is always [b,n,3]");
        };
        let input = if let Some((adapt_z, adapt_s, adapt_e)) = &reg.fuse {
            let za = adapt_z.forward(ctx, z)?;
            let sa = adapt_s.forward(ctx, alpha_s)?;
            let ea = adapt_e.forward(ctx, alpha_e)?;
            let attrs = concat_cols(&[&za, &sa, &ea])?;
            let a_dim = attrs.shape()[1];
            let tiled = attrs.repeat_rows(n)?.reshape(&[batch * n, a_dim])?;
            let pts = landmarks.reshape(&[batch * n, 3])?;
            concat_cols(&[&pts, &tiled])?.reshape(&[batch, n, 3 + a_dim])?
        } else {
            landmarks.clone()
        };
        let features = reg.encoder.forward(ctx, &input)?;
        let pooled = features.global_max_pool()?;
        let p = reg.head_pose.forward(ctx, &pooled)?;
        let s = reg.head_shape.forward(ctx, &pooled)?;
        let e = reg.head_expr.forward(ctx, &pooled)?;
        concat_cols(&[&p, &s, &e])
    }

    /// Full forward pass over the representation cycle for a `[batch, 3*n_l]`
    /// observation. With refinement disabled `refined` aliases `coarse`; with
    /// the reverse stage disabled `alpha_hat` is absent.
    pub(crate) fn forward(&self, ctx: &mut Fwd, obs: &Var) -> Result<SynergyOut> {
        let (z, alpha_p, alpha_s, alpha_e) = self.encode(ctx, obs)?;
        let alpha = concat_cols(&[&alpha_p, &alpha_s, &alpha_e])?;
        let coarse = self.reconstruct_coarse(ctx, &alpha_p, &alpha_s, &alpha_e)?;
        let refined = match &self.mafa {
            Some(mafa) => self.refine(ctx, mafa, &coarse, &z, &alpha_s, &alpha_e)?,
            None => coarse.clone(),
        };
        let alpha_hat = match &self.regressor {
            Some(reg) => {
                let input = match self.cfg.lmk3dmm_input {
                    RegressorInput::Refined => &refined,
                    RegressorInput::Coarse => &coarse,
                };
                Some(self.regress_from_landmarks(ctx, reg, input, &z, &alpha_s, &alpha_e)?)
            }
            None => None,
        };
        Ok(SynergyOut {
            z,
            alpha,
            coarse,
            refined,
            alpha_hat,
        })
    }

    /// Training losses for one batch: supervised parameter and alignment
    /// terms always; landmark-geometry supervision and self-consistency when
    /// the reverse stage is active.
    pub(crate) fn losses(
        &self,
        out: &SynergyOut,
        alpha_star: &Var,
        lmk_star: &Var,
    ) -> Result<(Var, LossValues)> {
        let l_3dmm = param_supervision_loss(&out.alpha, alpha_star, TargetBlocks::All)?;
        let l_lmk = landmark_alignment_loss(&out.refined, lmk_star, self.cfg.smooth_l1_beta)?;
        let (l_geo, l_cons) = match &out.alpha_hat {
            Some(alpha_hat) => (
                Some(param_supervision_loss(
                    alpha_hat,
                    alpha_star,
                    self.cfg.lmk3dmm_targets,
                )?),
                Some(consistency_loss(
                    &out.alpha,
                    alpha_hat,
                    self.cfg.consistency_stop_grad,
                    self.cfg.lmk3dmm_targets,
                )?),
            ),
            None => (None, None),
        };
        weighted_total(&l_3dmm, &l_lmk, l_geo.as_ref(), l_cons.as_ref(), &self.cfg.weights)
    }

    /// Builds the full training graph for one batch and returns the tape,
    /// binding, total loss, loss values, and collected batch-norm
    /// statistics. The sharded trainer drives this directly.
    pub fn training_graph_with_stats(
        &self,
        obs: &[f64],
        alpha_star: &[f64],
        lmk_star: &[f64],
        batch: usize,
    ) -> Result<(Tape, Binding, Var, LossValues, BnStats)> {
        let tape = Tape::new();
        let binding = self.store.bind(&tape)?;
        let mut ctx = Fwd {
            binding: &binding,
            training: true,
            pending: Vec::new(),
        };
        let obs_var = tape.leaf(obs.to_vec(), &[batch, self.cfg.observation_dim()])?;
        let alpha_var = tape.leaf(alpha_star.to_vec(), &[batch, PARAM_DIM])?;
        let lmk_var = tape.leaf(lmk_star.to_vec(), &[batch, self.cfg.n_landmarks, 3])?;
        let out = self.forward(&mut ctx, &obs_var)?;
        let (total, values) = self.losses(&out, &alpha_var, &lmk_var)?;
        let stats = ctx.into_stats();
        Ok((tape, binding, total, values, stats))
    }

    /// One complete training step graph: forward, losses, backward.
    /// Gradients land in the store; batch-norm running stats are folded in.
    /// The optimizer step is left to the caller.
    pub fn training_step(
        &mut self,
        obs: &[f64],
        alpha_star: &[f64],
        lmk_star: &[f64],
        batch: usize,
    ) -> Result<LossValues> {
        let (tape, binding, total, values, stats) =
            self.training_graph_with_stats(obs, alpha_star, lmk_star, batch)?;
        let grads = tape.backward(&total)?;
        self.store.absorb_grads(&binding, &grads);
        apply_bn_updates(&mut self.store, &stats)?;
        Ok(values)
    }

    /// Eval-mode inference. The regressed pose block is sanitized through
    /// the similarity factorization before reconstructing landmarks, and the
    /// landmark-geometry stage is skipped entirely.
    pub fn predict(&self, observations: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let batch = observations.len();
        if batch == 0 {
            return Ok(Vec::new());
        }
        let dim = self.cfg.observation_dim();
        let mut flat = Vec::with_capacity(batch * dim);
        for obs in observations {
            if obs.len() != dim {
                return Err(Error::ShapeMismatch {
                    op: "SynergyModel::predict",
                    detail: format!("observation has {} values, expected {dim}", obs.len()),
                });
            }
            flat.extend_from_slice(obs);
        }

        let tape = Tape::new();
        let binding = self.store.bind(&tape)?;
        let mut ctx = Fwd {
            
            binding: &binding,
            training: false,
            pending: Vec::new(),
        };
        let obs_var = tape.leaf(flat, &[batch, dim])?;
        let (z, alpha_p, alpha_s, alpha_e) = self.encode(&mut ctx, &obs_var)?;

        let nl = self.cfg.n_landmarks;
        let mean = self.store.value(self.consts.lm_mean);
        let ws = self.store.value(self.consts.shape_w);
        let we = self.store.value(self.consts.expr_w);

        let mut poses = Vec::with_capacity(batch);
        let mut coarse_flat = vec![0.0; batch * nl * 3];
        for b in 0..batch {
            let mut block = [0.0; 12];
            block.copy_from_slice(&alpha_p.data()[b * 12..(b + 1) * 12]);
            let pose = sanitize_pose_block(&block);
            let sample = &mut coarse_flat[b * nl * 3..(b + 1) * nl * 3];
            sample.copy_from_slice(mean);
            for (j, &c) in alpha_s.data()[b * N_SHAPE..(b + 1) * N_SHAPE].iter().enumerate() {
                for (s, w) in sample.iter_mut().zip(&ws[j * 3 * nl..(j + 1) * 3 * nl]) {
                    *s += c * w;
                }
            }
            for (j, &c) in alpha_e.data()[b * N_EXPR..(b + 1) * N_EXPR].iter().enumerate() {
                for (s, w) in sample.iter_mut().zip(&we[j * 3 * nl..(j + 1) * 3 * nl]) {
                    *s += c * w;
                }
            }
            transform_points(sample, &pose);
            poses.push(pose);
        }

        let refined_flat = match &self.mafa {
            Some(mafa) => {
                let coarse_var = tape.leaf(coarse_flat.clone(), &[batch, nl, 3])?;
                let refined = self.refine(&mut ctx, mafa, &coarse_var, &z, &alpha_s, &alpha_e)?;
                refined.data().to_vec()
            }
            None => coarse_flat.clone(),
        };

        let mut predictions = Vec::with_capacity(batch);
        for (b, pose) in poses.into_iter().enumerate() {
            let mut alpha = ParamVector::zeros();
            alpha.pose.copy_from_slice(&alpha_p.data()[b * 12..(b + 1) * 12]);
            alpha.shape.copy_from_slice(&alpha_s.data()[b * N_SHAPE..(b + 1) * N_SHAPE]);
            alpha.expr.copy_from_slice(&alpha_e.data()[b * N_EXPR..(b + 1) * N_EXPR]);
            predictions.push(Prediction {
                alpha,
                pose,
                coarse: LandmarkSet::new(coarse_flat[b * nl * 3..(b + 1) * nl * 3].to_vec())?,
                refined: LandmarkSet::new(refined_flat[b * nl * 3..(b + 1) * nl * 3].to_vec())?,
            });
        }
        Ok(predictions)
    }

    /// Zeroes a named tensor; used by tests and ablation checks.
    pub fn zero_param(&mut self, name: &str) -> Result<()> {
        let id = self
            .store
            .id_of(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        let len = self.store.value(id).len();
        self.store.set_value(id, vec![0.0; len])
    }

    /// Names of the final refinement decoder layer tensors, if present.
    pub fn mafa_output_layer_names(&self) -> Option<(&'static str, &'static str)> {
        self.mafa
            .as_ref()
            .map(|_| ("mafa.decoder.out.w", "mafa.decoder.out.b"))
    }
}

/// Builds a training-mode forward on a fresh tape and returns the tape,
/// binding, and outputs; exposed for gradient checking in tests.
pub fn build_training_graph(
    model: &SynergyModel,
    obs: &[f64],
    alpha_star: &[f64],
    lmk_star: &[f64],
    batch: usize,
) -> Result<(Tape, Var, LossValues)> {
    let tape = Tape::new();
    let binding = model.store.bind(&tape)?;
    let mut ctx = Fwd {
        
        binding: &binding,
        training: true,
        pending: Vec::new(),
    };
    let obs_var = tape.leaf(obs.to_vec(), &[batch, model.cfg.observation_dim()])?;
    let alpha_var = tape.leaf(alpha_star.to_vec(), &[batch, PARAM_DIM])?;
    let lmk_var = tape.leaf(lmk_star.to_vec(), &[batch, model.cfg.n_landmarks, 3])?;
    let out = model.forward(&mut ctx, &obs_var)?;
    let (total, values) = model.losses(&out, &alpha_var, &lmk_var)?;
    Ok((tape, total, values))
}
