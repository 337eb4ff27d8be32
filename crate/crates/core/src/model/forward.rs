//! Forward pass builders. Every stage records onto a [`Tape`] so the same
//! code path serves inference and training; public wrappers evaluate one
//! stage on plain arrays.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{sinusoidal_encoding, NodeId, Tape};
use crate::error::{Error, Result};
use crate::types::{
    GaussianTrajectory, ManeuverDistribution, ManeuverLabel, PredictionOutput, TrajectorySample,
    NUM_MODES,
};

use super::params::{
    AttentionIds, EncoderLayerIds, LinearIds, MotionEncoderIds, ModelKind, ModelParameters,
};

/// Additive floor keeping predicted standard deviations positive.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// One recorded forward pass over a shared parameter set.
pub struct ForwardPass<'p> {
    pub tape: Tape,
    params: &'p ModelParameters,
    param_nodes: Vec<Option<NodeId>>,
    dropout: Option<ChaCha8Rng>,
}

/// Tape handles for the shared trunk of one sample.
pub struct TrunkNodes {
    /// T x d spatio-temporal encoding.
    pub h_tilde: NodeId,
    /// 1 x d final-timestep row.
    pub final_step: NodeId,
    /// 1 x d maneuver state vector (intent-aware only).
    pub r: Option<NodeId>,
    /// 1 x 3 lateral probabilities (intent-aware only).
    pub p_lat: Option<NodeId>,
    /// 1 x 3 longitudinal probabilities (intent-aware only).
    pub p_lon: Option<NodeId>,
}

fn to_f64(x: ndarray::ArrayView2<'_, f32>) -> Array2<f64> {
    x.mapv(|v| v as f64)
}

impl<'p> ForwardPass<'p> {
    pub fn new(params: &'p ModelParameters) -> Self {
        ForwardPass {
            tape: Tape::new(),
            params,
            param_nodes: vec![None; params.num_tensors()],
            dropout: None,
        }
    }

    /// Turn on dropout for this pass (training only; no-op when the
    /// configured probability is 0).
    pub fn enable_dropout(&mut self, seed: u64) {
        if self.params.config.dropout > 0.0 {
            self.dropout = Some(ChaCha8Rng::seed_from_u64(seed));
        }
    }

    /// The shared leaf node for one parameter tensor.
    fn p(&mut self, idx: usize) -> NodeId {
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        let id = self.tape.param(idx, self.params.tensor(idx).clone());
        self.param_nodes[idx] = Some(id);
        id
    }

    fn linear(&mut self, x: NodeId, ids: &LinearIds) -> NodeId {
        let w = self.p(ids.w);
        let y = self.tape.matmul(x, w);
        match ids.b {
            Some(b) => {
                let b = self.p(b);
                self.tape.add_row(y, b)
            }
            None => y,
        }
    }

    fn layer_norm(&mut self, x: NodeId, ids: &super::params::LayerNormIds) -> NodeId {
        let gain = self.p(ids.gain);
        let bias = self.p(ids.bias);
        self.tape.layer_norm_rows(x, gain, bias, 1e-5)
    }

    /// GLU(x) = a ⊙ sigmoid(b) with one linear producing both halves.
    fn glu(&mut self, x: NodeId, ids: &LinearIds) -> NodeId {
        let both = self.linear(x, ids);
        let d = self.tape.value(both).ncols() / 2;
        let a = self.tape.slice_cols(both, 0, d);
        let b = self.tape.slice_cols(both, d, d);
        let gate = self.tape.sigmoid(b);
        self.tape.mul(a, gate)
    }

    fn dropout_node(&mut self, x: NodeId) -> NodeId {
        let p = self.params.config.dropout;
        let Some(rng) = self.dropout.as_mut() else {
            return x;
        };
        let dim = self.tape.value(x).dim();
        let keep = 1.0 - p;
        let mask = Array2::from_shape_fn(dim, |_| {
            if rng.random_range(0.0..1.0) < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = self.tape.constant(mask);
        self.tape.mul(x, m)
    }

    /// Scaled dot-product self-attention with `n_heads` heads and an
    /// output projection.
    fn multi_head_self_attention(&mut self, x: NodeId, ids: &AttentionIds, n_heads: usize) -> NodeId {
        let wq = self.p(ids.wq);
        let wk = self.p(ids.wk);
        let wv = self.p(ids.wv);
        let q = self.tape.matmul(x, wq);
        let k = self.tape.matmul(x, wk);
        let v = self.tape.matmul(x, wv);
        let d = self.tape.value(q).ncols();
        let hd = d / n_heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let qh = self.tape.slice_cols(q, h * hd, hd);
            let kh = self.tape.slice_cols(k, h * hd, hd);
            let vh = self.tape.slice_cols(v, h * hd, hd);
            let kt = self.tape.transpose(kh);
            let raw = self.tape.matmul(qh, kt);
            let scaled = self.tape.scale(raw, scale);
            let alpha = self.tape.softmax_rows(scaled);
            heads.push(self.tape.matmul(alpha, vh));
        }
        let cat = self.tape.concat_cols(&heads);
        self.linear(cat, &ids.wo)
    }

    /// Post-norm transformer layer: attention + residual + LN, then a
    /// feed-forward block + residual + LN.
    fn encoder_layer(&mut self, x: NodeId, ids: &EncoderLayerIds, n_heads: usize) -> NodeId {
        let slope = self.params.config.leaky_slope;
        let a = self.multi_head_self_attention(x, &ids.attn, n_heads);
        let a = self.dropout_node(a);
        let sum1 = self.tape.add(x, a);
        let y = self.layer_norm(sum1, &ids.ln1);
        let f1 = self.linear(y, &ids.ffn1);
        let f1 = self.tape.leaky_relu(f1, slope);
        let f2 = self.linear(f1, &ids.ffn2);
        let f2 = self.dropout_node(f2);
        let sum2 = self.tape.add(y, f2);
        self.layer_norm(sum2, &ids.ln2)
    }

    /// Motion encoding of one agent history: LeakyReLU embedding, linear
    /// projection, sinusoidal positions, then the encoder stack. T x d out.
    fn encode(&mut self, history: NodeId, enc: &MotionEncoderIds) -> NodeId {
        let cfg = &self.params.config;
        let e = self.linear(history, &enc.embed);
        let e = self.tape.leaky_relu(e, cfg.leaky_slope);
        let z = self.linear(e, &enc.proj);
        let t = self.tape.value(z).nrows();
        let pe = self.tape.constant(sinusoidal_encoding(t, cfg.d_model));
        let mut h = self.tape.add(z, pe);
        for layer in &enc.layers {
            h = self.encoder_layer(h, layer, cfg.n_heads);
        }
        h
    }

    /// Social aggregation for one timestep. `occupied` is the n x d matrix
    /// of encoded occupied-cell features, or `None` for an empty
    /// neighborhood (zero social feature; the residual path dominates).
    fn social_step(&mut self, h_ego_t: NodeId, occupied: Option<NodeId>) -> NodeId {
        let ids = &self.params.ids.social;
        let social = match occupied {
            Some(rows) => {
                let wq = self.p(ids.wq);
                let wk = self.p(ids.wk);
                let wv = self.p(ids.wv);
                let q = self.tape.matmul(h_ego_t, wq);
                let k = self.tape.matmul(rows, wk);
                let v = self.tape.matmul(rows, wv);
                let kt = self.tape.transpose(k);
                let raw = self.tape.matmul(q, kt);
                let d = self.params.config.d_model as f64;
                let scaled = self.tape.scale(raw, 1.0 / d.sqrt());
                let alpha = self.tape.softmax_rows(scaled);
                self.tape.matmul(alpha, v)
            }
            None => self
                .tape
                .constant(Array2::zeros((1, self.params.config.d_model))),
        };
        let gated = self.glu(social, &ids.glu);
        let sum = self.tape.add(h_ego_t, gated);
        self.layer_norm(sum, &ids.ln)
    }

    /// Multi-head attention across the T social representations, then
    /// GLU + residual + layer norm. Shape preserved.
    fn temporal(&mut self, h: NodeId) -> NodeId {
        let ids = self.params.ids.temporal;
        let a = self.multi_head_self_attention(h, &ids.attn, self.params.config.n_heads);
        let gated = self.glu(a, &ids.glu);
        let sum = self.tape.add(h, gated);
        self.layer_norm(sum, &ids.ln)
    }

    /// Maneuver state and per-axis softmax heads from the final-step row.
    fn intention(&mut self, h_last: NodeId) -> (NodeId, NodeId, NodeId) {
        let ids = self.params.ids.intention.expect("intent-aware model");
        let r_lin = self.linear(h_last, &ids.wr);
        let r = self.tape.leaky_relu(r_lin, self.params.config.leaky_slope);
        let la = self.linear(r, &ids.wla);
        let lo = self.linear(r, &ids.wlo);
        let p_la = self.tape.softmax_rows(la);
        let p_lo = self.tape.softmax_rows(lo);
        (r, p_la, p_lo)
    }

    /// Mode-conditioned fusion: the one-hot maneuver embedding queries a
    /// soft attention over the T encoded rows.
    fn fuse(&mut self, h_tilde: NodeId, mode: ManeuverLabel) -> NodeId {
        let ids = self.params.ids.fusion.expect("intent-aware model");
        let mut onehot = Array2::zeros((1, 6));
        onehot[(0, mode.lateral.index())] = 1.0;
        onehot[(0, 3 + mode.longitudinal.index())] = 1.0;
        let oh = self.tape.constant(onehot);
        let me = self.linear(oh, &ids.mode_embed);
        let wq = self.p(ids.wq);
        let wk = self.p(ids.wk);
        let wv = self.p(ids.wv);
        let q = self.tape.matmul(me, wq);
        let k = self.tape.matmul(h_tilde, wk);
        let v = self.tape.matmul(h_tilde, wv);
        let kt = self.tape.transpose(k);
        let raw = self.tape.matmul(q, kt);
        let d = self.params.config.d_model as f64;
        let scaled = self.tape.scale(raw, 1.0 / d.sqrt());
        let alpha = self.tape.softmax_rows(scaled);
        let fused = self.tape.matmul(alpha, v);
        let sum = self.tape.add(fused, me);
        self.layer_norm(sum, &ids.ln)
    }

    /// Tile the fused vector over F positionally-encoded steps and run the
    /// decoder layer. F x d out.
    fn decode(&mut self, d_vec: NodeId) -> NodeId {
        let cfg = &self.params.config;
        let rows = self.tape.repeat_rows(d_vec, cfg.future_len);
        let pe = self
            .tape
            .constant(sinusoidal_encoding(cfg.future_len, cfg.d_model));
        let x = self.tape.add(rows, pe);
        self.encoder_layer(x, &self.params.ids.decoder.clone(), cfg.n_heads)
    }

    /// Two-layer MLP to per-step Gaussian parameters. The position mean
    /// is accumulated from per-step displacement predictions, which keeps
    /// the regression targets at step scale instead of horizon scale;
    /// sigma goes through softplus plus a small floor.
    fn head(&mut self, h: NodeId) -> (NodeId, NodeId) {
        let ids = self.params.ids.head;
        let h1 = self.linear(h, &ids.h1);
        let h1 = self.tape.leaky_relu(h1, self.params.config.leaky_slope);
        let o = self.linear(h1, &ids.h2);
        let delta = self.tape.slice_cols(o, 0, 2);
        let f = self.tape.value(delta).nrows();
        let cumsum = self
            .tape
            .constant(Array2::from_shape_fn((f, f), |(r, c)| if c <= r { 1.0 } else { 0.0 }));
        let mu = self.tape.matmul(cumsum, delta);
        let raw = self.tape.slice_cols(o, 2, 2);
        let sp = self.tape.softplus(raw);
        let sigma = self.tape.add_const(sp, SIGMA_FLOOR);
        (mu, sigma)
    }

    fn check_sample(&self, sample: &TrajectorySample) -> Result<()> {
        let cfg = &self.params.config;
        if sample.history_len() != cfg.history_len
            || sample.future_len() != cfg.future_len
            || sample.feature_dim() != cfg.d_in
            || sample.num_cells() != cfg.grid.num_cells()
        {
            return Err(Error::shape(format!(
                "sample dims (T={}, F={}, D={}, cells={}) do not match model config (T={}, F={}, D={}, cells={})",
                sample.history_len(),
                sample.future_len(),
                sample.feature_dim(),
                sample.num_cells(),
                cfg.history_len,
                cfg.future_len,
                cfg.d_in,
                cfg.grid.num_cells()
            )));
        }
        Ok(())
    }

    /// Encoders + per-step social attention + temporal dependency +
    /// intention heads (for the intent-aware kind).
    pub fn build_trunk(&mut self, sample: &TrajectorySample) -> Result<TrunkNodes> {
        self.check_sample(sample)?;
        let t_len = sample.history_len();

        let ego_hist = self.tape.constant(to_f64(sample.ego_history.view()));
        let ego_enc_ids = self.params.encoder_for_ego().clone();
        let ego_enc = self.encode(ego_hist, &ego_enc_ids);

        // encode every cell that is occupied at any step, shared weights
        let nbr_ids = self.params.ids.encoder.clone();
        let mut cell_enc: Vec<(usize, NodeId)> = Vec::new();
        for c in 0..sample.num_cells() {
            if (0..t_len).any(|k| sample.neighbor_mask[(c, k)]) {
                let hist = self
                    .tape
                    .constant(to_f64(sample.neighbor_histories.index_axis(ndarray::Axis(0), c)));
                let enc = self.encode(hist, &nbr_ids);
                cell_enc.push((c, enc));
            }
        }

        let mut social_rows = Vec::with_capacity(t_len);
        for k in 0..t_len {
            let h_ego_t = self.tape.row(ego_enc, k);
            let occupied: Vec<NodeId> = cell_enc
                .iter()
                .filter(|(c, _)| sample.neighbor_mask[(*c, k)])
                .map(|&(_, enc)| self.tape.row(enc, k))
                .collect();
            let rows = if occupied.is_empty() {
                None
            } else {
                Some(self.tape.concat_rows(&occupied))
            };
            social_rows.push(self.social_step(h_ego_t, rows));
        }
        let stacked = self.tape.concat_rows(&social_rows);
        let h_tilde = self.temporal(stacked);
        let final_step = self.tape.row(h_tilde, t_len - 1);

        let (r, p_lat, p_lon) = match self.params.kind {
            ModelKind::IntentAware => {
                let (r, la, lo) = self.intention(final_step);
                (Some(r), Some(la), Some(lo))
            }
            ModelKind::Vanilla => (None, None, None),
        };

        Ok(TrunkNodes {
            h_tilde,
            final_step,
            r,
            p_lat,
            p_lon,
        })
    }

    /// Decode one mode (or the unconditioned baseline for `None`) into
    /// per-step Gaussian parameter nodes.
    pub fn build_mode_decode(&mut self, trunk: &TrunkNodes, mode: Option<ManeuverLabel>) -> (NodeId, NodeId) {
        let d_vec = match mode {
            Some(m) => self.fuse(trunk.h_tilde, m),
            None => trunk.final_step,
        };
        let hidden = self.decode(d_vec);
        self.head(hidden)
    }

    /// Release the recorded tape (for loss assembly and backward).
    pub fn into_tape(self) -> Tape {
        self.tape
    }

    /// Extract the maneuver distribution recorded for this trunk.
    pub fn maneuver_distribution(&self, trunk: &TrunkNodes) -> Option<ManeuverDistribution> {
        let (la, lo) = (trunk.p_lat?, trunk.p_lon?);
        let lav = self.tape.value(la);
        let lov = self.tape.value(lo);
        Some(ManeuverDistribution {
            p_lateral: [lav[(0, 0)], lav[(0, 1)], lav[(0, 2)]],
            p_longitudinal: [lov[(0, 0)], lov[(0, 1)], lov[(0, 2)]],
        })
    }

    /// Extract a Gaussian trajectory from decoded (mu, sigma) nodes.
    pub fn gaussian(&self, mu: NodeId, sigma: NodeId) -> GaussianTrajectory {
        GaussianTrajectory {
            mu: self.tape.value(mu).clone(),
            sigma: self.tape.value(sigma).clone(),
        }
    }
}

/// Full forward pass of the intent-aware model: 9 mode trajectories plus
/// the maneuver distribution. Pure in (sample, params).
pub fn forward(params: &ModelParameters, sample: &TrajectorySample) -> Result<PredictionOutput> {
    if params.kind != ModelKind::IntentAware {
        return Err(Error::Config("forward requires an intent-aware model".into()));
    }
    let mut pass = ForwardPass::new(params);
    let trunk = pass.build_trunk(sample)?;
    let mut modes = Vec::with_capacity(NUM_MODES);
    for label in ManeuverLabel::all() {
        let (mu, sigma) = pass.build_mode_decode(&trunk, Some(label));
        modes.push(pass.gaussian(mu, sigma));
    }
    let maneuvers = pass.maneuver_distribution(&trunk).unwrap();
    Ok(PredictionOutput { modes, maneuvers })
}

/// Forward pass of the vanilla baseline: one unconditioned trajectory.
pub fn vanilla_forward(params: &ModelParameters, sample: &TrajectorySample) -> Result<GaussianTrajectory> {
    if params.kind != ModelKind::Vanilla {
        return Err(Error::Config("vanilla_forward requires a vanilla model".into()));
    }
    let mut pass = ForwardPass::new(params);
    let trunk = pass.build_trunk(sample)?;
    let (mu, sigma) = pass.build_mode_decode(&trunk, None);
    Ok(pass.gaussian(mu, sigma))
}

/// Motion-encode one T x d_in history with the shared encoder weights.
pub fn encode_motion(params: &ModelParameters, history: &Array2<f64>) -> Result<Array2<f64>> {
    if history.ncols() != params.config.d_in {
        return Err(Error::shape(format!(
            "history has {} features, config d_in is {}",
            history.ncols(),
            params.config.d_in
        )));
    }
    let mut pass = ForwardPass::new(params);
    let h = pass.tape.constant(history.clone());
    let ids = params.ids.encoder.clone();
    let out = pass.encode(h, &ids);
    Ok(pass.tape.value(out).clone())
}

/// Social attention for one timestep over a full grid matrix plus
/// occupancy mask; unoccupied cells are excluded from the softmax.
pub fn social_attention(
    params: &ModelParameters,
    h_ego_t: &Array2<f64>,
    grid_features: &Array2<f64>,
    mask: &[bool],
) -> Result<Array2<f64>> {
    if grid_features.nrows() != mask.len() {
        return Err(Error::shape("mask length must match grid rows"));
    }
    let mut pass = ForwardPass::new(params);
    let h = pass.tape.constant(h_ego_t.clone());
    let occupied: Vec<usize> = (0..mask.len()).filter(|&c| mask[c]).collect();
    let rows = if occupied.is_empty() {
        None
    } else {
        let grid = pass.tape.constant(grid_features.clone());
        let picked: Vec<NodeId> = occupied.iter().map(|&c| pass.tape.row(grid, c)).collect();
        Some(pass.tape.concat_rows(&picked))
    };
    let out = pass.social_step(h, rows);
    Ok(pass.tape.value(out).clone())
}

/// Temporal dependency attention over stacked social representations.
pub fn temporal_dependency(params: &ModelParameters, h: &Array2<f64>) -> Result<Array2<f64>> {
    if h.ncols() != params.config.d_model {
        return Err(Error::shape("input width must equal d_model"));
    }
    let mut pass = ForwardPass::new(params);
    let x = pass.tape.constant(h.clone());
    let out = pass.temporal(x);
    Ok(pass.tape.value(out).clone())
}

/// Maneuver state vector and per-axis distributions from the final-step
/// encoding.
pub fn intention_heads(
    params: &ModelParameters,
    h_last: &Array2<f64>,
) -> Result<(Array2<f64>, ManeuverDistribution)> {
    if params.ids.intention.is_none() {
        return Err(Error::Config("vanilla model has no intention heads".into()));
    }
    let mut pass = ForwardPass::new(params);
    let h = pass.tape.constant(h_last.clone());
    let (r, la, lo) = pass.intention(h);
    let lav = pass.tape.value(la);
    let lov = pass.tape.value(lo);
    let dist = ManeuverDistribution {
        p_lateral: [lav[(0, 0)], lav[(0, 1)], lav[(0, 2)]],
        p_longitudinal: [lov[(0, 0)], lov[(0, 1)], lov[(0, 2)]],
    };
    Ok((pass.tape.value(r).clone(), dist))
}

/// Fuse the encoding with one maneuver mode and decode to F hidden rows.
pub fn fuse_and_decode(
    params: &ModelParameters,
    h_tilde: &Array2<f64>,
    mode: ManeuverLabel,
) -> Result<Array2<f64>> {
    if params.ids.fusion.is_none() {
        return Err(Error::Config("vanilla model has no fusion stage".into()));
    }
    let mut pass = ForwardPass::new(params);
    let h = pass.tape.constant(h_tilde.clone());
    let fused = pass.fuse(h, mode);
    let out = pass.decode(fused);
    Ok(pass.tape.value(out).clone())
}

/// Map F x d decoder rows to per-step Gaussian parameters.
pub fn gaussian_head(params: &ModelParameters, hidden: &Array2<f64>) -> Result<GaussianTrajectory> {
    if hidden.ncols() != params.config.d_model {
        return Err(Error::shape("hidden width must equal d_model"));
    }
    let mut pass = ForwardPass::new(params);
    let h = pass.tape.constant(hidden.clone());
    let (mu, sigma) = pass.head(h);
    Ok(pass.gaussian(mu, sigma))
}
