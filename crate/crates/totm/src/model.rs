//! Model assembly: a pooled-color stem, a stack of gated temporal mixer
//! blocks, and a normalized linear head reading out one value per time step.
//!
//! Each block computes, from input H:
//!   H~  = LN_d(H)
//!   U   = PW(silu(DWConv(H~)))            local branch
//!   V   = ToeplitzMix(LN_t(H~))           global branch
//!   G   = sigmoid(H~ W_g^T + b_g)         gate
//!   mid = H + U + G*V
//!   out = mid + W2 silu(W1 LN_d(mid))     MLP, no biases, dropout after silu
//! The local_only variant drops V (and with it LN_t, the kernel, and the
//! gate); no_gate keeps V but adds it unscaled. Backward is a hand-written
//! reverse traversal of this fixed graph over per-layer caches.

use crate::error::{Error, Result};
use crate::nn::{
    activation, activation_backward, dropout_backward, dropout_forward, dwconv1d_backward,
    dwconv1d_forward, layer_norm_d_backward, layer_norm_d_forward, layer_norm_t_backward,
    layer_norm_t_forward, pointwise_linear_backward, pointwise_linear_forward, Activation,
    LayerNormCache, LN_EPS,
};
use crate::tensor::Tensor;
use crate::toeplitz::{toeplitz_mix, toeplitz_mix_backward, ToeplitzKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    LocalOnly,
    NoGate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    MeanPoolLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Number of mixer blocks.
    pub blocks: usize,
    /// Depthwise conv kernel size; odd.
    pub kernel_size: usize,
    /// MLP hidden width is round(mlp_ratio * d).
    pub mlp_ratio: f64,
    pub dropout_p: f64,
    /// Time steps per clip.
    pub t_len: usize,
    /// Pooling grid: each frame channel is mean-pooled over pool_grid^2 cells.
    pub pool_grid: usize,
    pub stem: StemKind,
    pub variant: Variant,
    /// Optional Toeplitz truncation: lags above this are pinned at zero.
    pub max_lag: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            blocks: 3,
            kernel_size: 5,
            mlp_ratio: 3.0,
            dropout_p: 0.1,
            t_len: 180,
            pool_grid: 6,
            stem: StemKind::MeanPoolLinear,
            variant: Variant::Full,
            max_lag: None,
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        (self.mlp_ratio * self.d as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.blocks < 1 || self.t_len < 1 || self.pool_grid < 1 {
            return Err(Error::Config(
                "d, blocks, t_len, and pool_grid must all be at least 1".into(),
            ));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} must lie in [0, 1)",
                self.dropout_p
            )));
        }
        if self.hidden() < 1 {
            return Err(Error::Config(format!(
                "mlp_ratio {} gives an empty hidden layer at d={}",
                self.mlp_ratio, self.d
            )));
        }
        if let Some(lag) = self.max_lag {
            if lag >= self.t_len {
                return Err(Error::Config(format!(
                    "max_lag {lag} must be below t_len {}",
                    self.t_len
                )));
            }
        }
        Ok(())
    }
}

// ---- parameters ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct StemParams {
    /// d x 3P^2, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// d x d.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Pieces present only when the block has a global branch (variant != local_only).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBranchParams {
    pub lnt_gamma: Vec<f64>,
    pub lnt_beta: Vec<f64>,
    pub kernel: ToeplitzKernel,
    /// Present only in the full variant.
    pub gate: Option<GateParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    /// K x d depthwise taps.
    pub dw_weight: Vec<f64>,
    pub dw_bias: Vec<f64>,
    /// d x d projection closing the local branch.
    pub pw_weight: Vec<f64>,
    pub pw_bias: Vec<f64>,
    pub global: Option<GlobalBranchParams>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    /// h x d, no bias.
    pub mlp_w1: Vec<f64>,
    /// d x h, no bias.
    pub mlp_w2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub ln_gamma: Vec<f64>,
    pub ln_beta: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: f64,
}

/// Every learnable value of a model, with the config that fixes its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub stem: StemParams,
    pub blocks: Vec<BlockParams>,
    pub head: HeadParams,
}

fn uniform_fan_in<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

impl ModelParams {
    /// Fan-in uniform init for weights, zeros for biases, identity affines,
    /// near-identity Toeplitz kernels. Deterministic in the seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let t = config.t_len;
        let k = config.kernel_size;
        let h = config.hidden();
        let in_features = 3 * config.pool_grid * config.pool_grid;

        let stem = StemParams {
            weight: uniform_fan_in(&mut rng, d * in_features, in_features),
            bias: vec![0.0; d],
        };
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let global = if config.variant == Variant::LocalOnly {
                None
            } else {
                let kernel = ToeplitzKernel::init(t, config.max_lag, &mut rng)?;
                let gate = (config.variant == Variant::Full).then(|| GateParams {
                    weight: uniform_fan_in(&mut rng, d * d, d),
                    bias: vec![0.0; d],
                });
                Some(GlobalBranchParams {
                    lnt_gamma: vec![1.0; t],
                    lnt_beta: vec![0.0; t],
                    kernel,
                    gate,
                })
            };
            blocks.push(BlockParams {
                ln1_gamma: vec![1.0; d],
                ln1_beta: vec![0.0; d],
                dw_weight: uniform_fan_in(&mut rng, k * d, k),
                dw_bias: vec![0.0; d],
                pw_weight: uniform_fan_in(&mut rng, d * d, d),
                pw_bias: vec![0.0; d],
                global,
                ln2_gamma: vec![1.0; d],
                ln2_beta: vec![0.0; d],
                mlp_w1: uniform_fan_in(&mut rng, h * d, d),
                mlp_w2: uniform_fan_in(&mut rng, d * h, h),
            });
        }
        let head = HeadParams {
            ln_gamma: vec![1.0; d],
            ln_beta: vec![0.0; d],
            weight: uniform_fan_in(&mut rng, d, d),
            bias: 0.0,
        };
        Ok(Self {
            config: config.clone(),
            stem,
            blocks,
            head,
        })
    }

    /// Same structure with every value zero; used for gradients and optimizer
    /// moments.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(&mut |_, slice| slice.fill(0.0));
        out
    }

    /// Re-establishes each kernel's diagonal tie and truncation zeros.
    pub fn enforce_kernel_constraints(&mut self) {
        for block in &mut self.blocks {
            if let Some(global) = &mut block.global {
                global.kernel.enforce_constraints();
            }
        }
    }

    /// Visits every parameter tensor as (path, shape, values) in a fixed
    /// order. `toeplitz.c` and `toeplitz.r` appear as separate paths even
    /// though their lag-0 entries are one logical parameter.
    pub fn for_each(&self, f: &mut impl FnMut(&str, &[usize], &[f64])) {
        let cfg = &self.config;
        let (d, t, k, h) = (cfg.d, cfg.t_len, cfg.kernel_size, cfg.hidden());
        let in_features = 3 * cfg.pool_grid * cfg.pool_grid;
        f("stem.W", &[d, in_features], &self.stem.weight);
        f("stem.b", &[d], &self.stem.bias);
        for (i, block) in self.blocks.iter().enumerate() {
            let p = |name: &str| format!("block.{i}.{name}");
            f(&p("ln1.gamma"), &[d], &block.ln1_gamma);
            f(&p("ln1.beta"), &[d], &block.ln1_beta);
            f(&p("dwconv.W"), &[k, d], &block.dw_weight);
            f(&p("dwconv.b"), &[d], &block.dw_bias);
            f(&p("pw.W"), &[d, d], &block.pw_weight);
            f(&p("pw.b"), &[d], &block.pw_bias);
            if let Some(global) = &block.global {
                f(&p("lnt.gamma"), &[t], &global.lnt_gamma);
                f(&p("lnt.beta"), &[t], &global.lnt_beta);
                f(&p("toeplitz.c"), &[t], &global.kernel.c);
                f(&p("toeplitz.r"), &[t], &global.kernel.r);
                if let Some(gate) = &global.gate {
                    f(&p("gate.W"), &[d, d], &gate.weight);
                    f(&p("gate.b"), &[d], &gate.bias);
                }
            }
            f(&p("ln2.gamma"), &[d], &block.ln2_gamma);
            f(&p("ln2.beta"), &[d], &block.ln2_beta);
            f(&p("mlp.W1"), &[h, d], &block.mlp_w1);
            f(&p("mlp.W2"), &[d, h], &block.mlp_w2);
        }
        f("head.ln.gamma", &[d], &self.head.ln_gamma);
        f("head.ln.beta", &[d], &self.head.ln_beta);
        f("head.w", &[d], &self.head.weight);
        f("head.b", &[1], std::slice::from_ref(&self.head.bias));
    }

    /// Mutable visit in the same order as [`Self::for_each`].
    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&str, &mut [f64])) {
        f("stem.W", &mut self.stem.weight);
        f("stem.b", &mut self.stem.bias);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let p = |name: &str| format!("block.{i}.{name}");
            f(&p("ln1.gamma"), &mut block.ln1_gamma);
            f(&p("ln1.beta"), &mut block.ln1_beta);
            f(&p("dwconv.W"), &mut block.dw_weight);
            f(&p("dwconv.b"), &mut block.dw_bias);
            f(&p("pw.W"), &mut block.pw_weight);
            f(&p("pw.b"), &mut block.pw_bias);
            if let Some(global) = &mut block.global {
                f(&p("lnt.gamma"), &mut global.lnt_gamma);
                f(&p("lnt.beta"), &mut global.lnt_beta);
                f(&p("toeplitz.c"), &mut global.kernel.c);
                f(&p("toeplitz.r"), &mut global.kernel.r);
                if let Some(gate) = &mut global.gate {
                    f(&p("gate.W"), &mut gate.weight);
                    f(&p("gate.b"), &mut gate.bias);
                }
            }
            f(&p("ln2.gamma"), &mut block.ln2_gamma);
            f(&p("ln2.beta"), &mut block.ln2_beta);
            f(&p("mlp.W1"), &mut block.mlp_w1);
            f(&p("mlp.W2"), &mut block.mlp_w2);
        }
        f("head.ln.gamma", &mut self.head.ln_gamma);
        f("head.ln.beta", &mut self.head.ln_beta);
        f("head.w", &mut self.head.weight);
        f("head.b", std::slice::from_mut(&mut self.head.bias));
    }

    pub fn paths(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(&mut |path, _, _| out.push(path.to_string()));
        out
    }

    /// Number of independent scalars. Each kernel stores 2T values across its
    /// two paths but its main diagonal is one parameter, so one is subtracted
    /// per kernel.
    pub fn count_elements(&self) -> usize {
        let mut total = 0usize;
        self.for_each(&mut |_, _, values| total += values.len());
        let kernels = self.blocks.iter().filter(|b| b.global.is_some()).count();
        total - kernels
    }
}

/// Closed-form parameter count with a per-component breakdown. Must agree
/// exactly with [`ModelParams::count_elements`] for every valid config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub stem: usize,
    pub per_block: usize,
    pub blocks: usize,
    pub toeplitz_per_block: usize,
    pub head: usize,
}

pub fn param_count(config: &ModelConfig) -> ParamCount {
    let d = config.d;
    let t = config.t_len;
    let k = config.kernel_size;
    let h = config.hidden();
    let stem = 3 * config.pool_grid * config.pool_grid * d + d;
    let toeplitz = match config.variant {
        Variant::LocalOnly => 0,
        _ => 2 * t - 1,
    };
    let mut per_block = 2 * d + (k * d + d) + (d * d + d) + 2 * d + 2 * d * h;
    if config.variant != Variant::LocalOnly {
        per_block += 2 * t + toeplitz;
    }
    if config.variant == Variant::Full {
        per_block += d * d + d;
    }
    let head = 2 * d + d + 1;
    ParamCount {
        total: stem + config.blocks * per_block + head,
        stem,
        per_block,
        blocks: config.blocks * per_block,
        toeplitz_per_block: toeplitz,
        head,
    }
}

// ---- forward / backward ----------------------------------------------------

/// Forward intermediates of one block, named after the quantities they hold.
pub struct BlockCache {
    ln1: LayerNormCache,
    hn1: Tensor,
    conv_pre: Tensor,
    conv_act: Tensor,
    lnt: Option<LayerNormCache>,
    q0: Option<Tensor>,
    v: Option<Tensor>,
    gate_pre: Option<Tensor>,
    gate: Option<Tensor>,
    ln2: LayerNormCache,
    hn2: Tensor,
    m1: Tensor,
    m1a_mask: Option<Vec<f64>>,
    m1d: Tensor,
}

pub struct ModelCache {
    pooled: Tensor,
    stem_pre: Tensor,
    blocks: Vec<BlockCache>,
    head_ln: LayerNormCache,
    head_norm: Tensor,
}

fn add_assign(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (a, b) in dst.data_mut().iter_mut().zip(src.data()) {
        *a += b;
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x *= y;
    }
    out
}

fn check_block_params(block: &BlockParams, config: &ModelConfig) -> Result<()> {
    let has_global = block.global.is_some();
    let has_gate = block.global.as_ref().map_or(false, |g| g.gate.is_some());
    let ok = match config.variant {
        Variant::Full => has_global && has_gate,
        Variant::NoGate => has_global && !has_gate,
        Variant::LocalOnly => !has_global,
    };
    if !ok {
        return Err(Error::Config(format!(
            "block parameters do not match variant {:?}",
            config.variant
        )));
    }
    Ok(())
}

/// Spatial mean-pool each frame channel over a pool_grid^2 grid, project to
/// width d, apply SiLU.
pub fn stem_forward(x: &Tensor, params: &ModelParams) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, t, ch, height, width) = x.dims5()?;
    let cfg = &params.config;
    if ch != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected 3 color channels, got {ch}"
        )));
    }
    if t != cfg.t_len {
        return Err(Error::ShapeMismatch(format!(
            "clip length {t} does not match configured t_len {}",
            cfg.t_len
        )));
    }
    let p = cfg.pool_grid;
    if height % p != 0 || width % p != 0 {
        return Err(Error::Config(format!(
            "frame {height}x{width} not divisible by pool grid {p}"
        )));
    }
    let (ch_h, ch_w) = (height / p, width / p);
    let cell = (ch_h * ch_w) as f64;
    let feat = 3 * p * p;
    let xd = x.data();
    let mut pooled = Tensor::zeros(&[b, t, feat]);
    {
        let pd = pooled.data_mut();
        for bi in 0..b {
            for ti in 0..t {
                let frame = (bi * t + ti) * ch * height * width;
                for c in 0..ch {
                    for gy in 0..p {
                        for gx in 0..p {
                            let mut acc = 0.0;
                            for yy in 0..ch_h {
                                for xx in 0..ch_w {
                                    let y = gy * ch_h + yy;
                                    let xcol = gx * ch_w + xx;
                                    acc += xd[frame + c * height * width + y * width + xcol];
                                }
                            }
                            pd[(bi * t + ti) * feat + c * p * p + gy * p + gx] = acc / cell;
                        }
                    }
                }
            }
        }
    }
    let pre = pointwise_linear_forward(&pooled, &params.stem.weight, Some(&params.stem.bias))?;
    let out = activation(&pre, Activation::Silu);
    Ok((out, pooled, pre))
}

/// Gradients of the stem parameters; the input clip itself is data, so its
/// gradient is not materialized.
pub fn stem_backward(
    dz: &Tensor,
    pooled: &Tensor,
    stem_pre: &Tensor,
    params: &ModelParams,
    grads: &mut ModelParams,
) -> Result<()> {
    let dpre = activation_backward(dz, stem_pre, Activation::Silu);
    let (_, dw, db) = pointwise_linear_backward(&dpre, pooled, &params.stem.weight, true)?;
    for (g, v) in grads.stem.weight.iter_mut().zip(&dw) {
        *g += v;
    }
    for (g, v) in grads.stem.bias.iter_mut().zip(db.as_ref().unwrap()) {
        *g += v;
    }
    Ok(())
}

pub fn mixer_block_forward<R: Rng>(
    h: &Tensor,
    block: &BlockParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, BlockCache)> {
    check_block_params(block, config)?;
    let (hn1, ln1) = layer_norm_d_forward(h, &block.ln1_gamma, &block.ln1_beta, LN_EPS)?;

    let conv_pre = dwconv1d_forward(&hn1, &block.dw_weight, &block.dw_bias)?;
    let conv_act = activation(&conv_pre, Activation::Silu);
    let u = pointwise_linear_forward(&conv_act, &block.pw_weight, Some(&block.pw_bias))?;

    let mut mid = h.clone();
    add_assign(&mut mid, &u);

    let (mut lnt, mut q0, mut v, mut gate_pre, mut gate) = (None, None, None, None, None);
    if let Some(global) = &block.global {
        let (q, lnt_cache) =
            layer_norm_t_forward(&hn1, &global.lnt_gamma, &global.lnt_beta, LN_EPS)?;
        let v_out = toeplitz_mix(&q, &global.kernel)?;
        if let Some(gate_params) = &global.gate {
            let pre = pointwise_linear_forward(&hn1, &gate_params.weight, Some(&gate_params.bias))?;
            let g = activation(&pre, Activation::Sigmoid);
            add_assign(&mut mid, &hadamard(&g, &v_out));
            gate_pre = Some(pre);
            gate = Some(g);
        } else {
            add_assign(&mut mid, &v_out);
        }
        lnt = Some(lnt_cache);
        q0 = Some(q);
        v = Some(v_out);
    }

    let (hn2, ln2) = layer_norm_d_forward(&mid, &block.ln2_gamma, &block.ln2_beta, LN_EPS)?;
    let m1 = pointwise_linear_forward(&hn2, &block.mlp_w1, None)?;
    let m1a = activation(&m1, Activation::Silu);
    let (m1d, m1a_mask) = dropout_forward(&m1a, config.dropout_p, training, rng)?;
    let m2 = pointwise_linear_forward(&m1d, &block.mlp_w2, None)?;

    let mut out = mid;
    add_assign(&mut out, &m2);
    Ok((
        out,
        BlockCache {
            ln1,
            hn1,
            conv_pre,
            conv_act,
            lnt,
            q0,
            v,
            gate_pre,
            gate,
            ln2,
            hn2,
            m1,
            m1a_mask,
            m1d,
        },
    ))
}

/// Accumulates this block's parameter gradients into `grads` and returns dH.
pub fn mixer_block_backward(
    dout: &Tensor,
    cache: &BlockCache,
    block: &BlockParams,
    grads: &mut BlockParams,
) -> Result<Tensor> {
    fn axpy(dst: &mut [f64], src: &[f64]) {
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }

    // out = mid + W2 silu(W1 LN_d(mid)), backward through the MLP first.
    let (dm1d, dw2, _) = pointwise_linear_backward(dout, &cache.m1d, &block.mlp_w2, false)?;
    axpy(&mut grads.mlp_w2, &dw2);
    let dm1a = dropout_backward(&dm1d, cache.m1a_mask.as_deref());
    let dm1 = activation_backward(&dm1a, &cache.m1, Activation::Silu);
    let (dhn2, dw1, _) = pointwise_linear_backward(&dm1, &cache.hn2, &block.mlp_w1, false)?;
    axpy(&mut grads.mlp_w1, &dw1);
    let (dmid_ln, dg2, db2) = layer_norm_d_backward(&dhn2, &cache.ln2, &block.ln2_gamma);
    axpy(&mut grads.ln2_gamma, &dg2);
    axpy(&mut grads.ln2_beta, &db2);
    let mut dmid = dout.clone();
    add_assign(&mut dmid, &dmid_ln);

    // mid = H + U + (G*V | V | nothing).
    let mut dhn1 = Tensor::zeros(cache.hn1.shape());
    if let (Some(global), Some(q0), Some(v)) = (&block.global, &cache.q0, &cache.v) {
        let global_grads = grads.global.as_mut().expect("grads mirror params");
        let dv = if let Some(g) = &cache.gate {
            let dg = hadamard(&dmid, v);
            let dpre = activation_backward(
                &dg,
                cache.gate_pre.as_ref().expect("gate cache"),
                Activation::Sigmoid,
            );
            let gate_params = global.gate.as_ref().expect("gate params");
            let (dhn1_gate, dwg, dbg) =
                pointwise_linear_backward(&dpre, &cache.hn1, &gate_params.weight, true)?;
            let gate_grads = global_grads.gate.as_mut().expect("grads mirror params");
            axpy(&mut gate_grads.weight, &dwg);
            axpy(&mut gate_grads.bias, &dbg.unwrap());
            add_assign(&mut dhn1, &dhn1_gate);
            hadamard(&dmid, g)
        } else {
            dmid.clone()
        };
        let (dq0, dc, dr) = toeplitz_mix_backward(&dv, q0, &global.kernel)?;
        axpy(&mut global_grads.kernel.c, &dc);
        axpy(&mut global_grads.kernel.r, &dr);
        let (dhn1_t, dgt, dbt) = layer_norm_t_backward(
            &dq0,
            cache.lnt.as_ref().expect("lnt cache"),
            &global.lnt_gamma,
        );
        axpy(&mut global_grads.lnt_gamma, &dgt);
        axpy(&mut global_grads.lnt_beta, &dbt);
        add_assign(&mut dhn1, &dhn1_t);
    }

    // Local branch: U = PW(silu(DWConv(H~))).
    let (ds, dwpw, dbpw) =
        pointwise_linear_backward(&dmid, &cache.conv_act, &block.pw_weight, true)?;
    axpy(&mut grads.pw_weight, &dwpw);
    axpy(&mut grads.pw_bias, &dbpw.unwrap());
    let da = activation_backward(&ds, &cache.conv_pre, Activation::Silu);
    let (dhn1_conv, dwdw, dbdw) =
        dwconv1d_backward(&da, &cache.hn1, &block.dw_weight, &block.dw_bias)?;
    axpy(&mut grads.dw_weight, &dwdw);
    axpy(&mut grads.dw_bias, &dbdw);
    add_assign(&mut dhn1, &dhn1_conv);

    let (dh_ln, dg1, db1) = layer_norm_d_backward(&dhn1, &cache.ln1, &block.ln1_gamma);
    axpy(&mut grads.ln1_gamma, &dg1);
    axpy(&mut grads.ln1_beta, &db1);
    let mut dh = dmid;
    add_assign(&mut dh, &dh_ln);
    Ok(dh)
}

/// Full forward pass. Training mode activates dropout (drawing masks from
/// `rng`) and the returned cache carries everything backward needs.
pub fn model_forward<R: Rng>(
    x: &Tensor,
    params: &ModelParams,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, ModelCache)> {
    let cfg = &params.config;
    cfg.validate()?;
    let (z, pooled, stem_pre) = stem_forward(x, params)?;
    let mut h = z;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, cache) = mixer_block_forward(&h, block, cfg, training, rng)?;
        h = next;
        blocks.push(cache);
    }
    let (head_norm, head_ln) =
        layer_norm_d_forward(&h, &params.head.ln_gamma, &params.head.ln_beta, LN_EPS)?;
    let (b, t, d) = head_norm.dims3()?;
    let nd = head_norm.data();
    let mut pred = Tensor::zeros(&[b, t]);
    {
        let pd = pred.data_mut();
        for row in 0..b * t {
            let mut acc = params.head.bias;
            for j in 0..d {
                acc += params.head.weight[j] * nd[row * d + j];
            }
            pd[row] = acc;
        }
    }
    Ok((
        pred,
        ModelCache {
            pooled,
            stem_pre,
            blocks,
            head_ln,
            head_norm,
        },
    ))
}

/// Eval-mode forward: dropout inactive, so no RNG is consumed.
pub fn model_forward_eval(x: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model_forward(x, params, false, &mut rng).map(|(pred, _)| pred)
}

/// Gradients of a scalar loss with upstream derivative `dpred` (B x T).
pub fn model_backward(
    dpred: &Tensor,
    cache: &ModelCache,
    params: &ModelParams,
) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    let (b, t) = dpred.dims2()?;
    let d = params.config.d;
    let nd = cache.head_norm.data();
    let dpd = dpred.data();

    // Head: pred[b,t] = w . LN_d(H)[b,t] + bias.
    let mut dnorm = Tensor::zeros(&[b, t, d]);
    {
        let dn = dnorm.data_mut();
        for row in 0..b * t {
            let g = dpd[row];
            grads.head.bias += g;
            for j in 0..d {
                grads.head.weight[j] += g * nd[row * d + j];
                dn[row * d + j] = g * params.head.weight[j];
            }
        }
    }
    let (mut dh, dgamma, dbeta) =
        layer_norm_d_backward(&dnorm, &cache.head_ln, &params.head.ln_gamma);
    for (g, v) in grads.head.ln_gamma.iter_mut().zip(&dgamma) {
        *g += v;
    }
    for (g, v) in grads.head.ln_beta.iter_mut().zip(&dbeta) {
        *g += v;
    }

    for (i, block) in params.blocks.iter().enumerate().rev() {
        // Split borrow: grads.blocks[i] is disjoint from the rest of grads.
        let block_grads = &mut grads.blocks[i];
        dh = mixer_block_backward(&dh, &cache.blocks[i], block, block_grads)?;
    }

    stem_backward(&dh, &cache.pooled, &cache.stem_pre, params, &mut grads)?;
    Ok(grads)
}
