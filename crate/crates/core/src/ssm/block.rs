//! The Mamba block: gated selective state space mixing over a sequence of
//! row vectors with a residual connection.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Graph, ParamId, ParamStore, Rng, ScanMode, Scalar, ShapeError, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsmConfig {
    pub d_model: usize,
    pub expand: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub n_blocks: usize,
    /// Range of the log-uniform initial step size.
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_init_floor: f64,
    /// `None` runs the sequential scan.
    pub scan_chunk: Option<usize>,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            expand: 2,
            d_state: 16,
            d_conv: 4,
            n_blocks: 1,
            dt_min: 0.001,
            dt_max: 0.1,
            dt_init_floor: 1e-4,
            scan_chunk: None,
        }
    }
}

impl SsmConfig {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16).max(1)
    }

    pub fn scan_mode(&self) -> ScanMode {
        match self.scan_chunk {
            Some(c) => ScanMode::Chunked(c),
            None => ScanMode::Sequential,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let dims = [self.d_model, self.expand, self.d_state, self.d_conv, self.n_blocks];
        if dims.contains(&0) {
            return Err("ssm dimensions must be positive".into());
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(format!("invalid dt range [{}, {}]", self.dt_min, self.dt_max));
        }
        if self.scan_chunk == Some(0) {
            return Err("scan_chunk must be at least 1".into());
        }
        Ok(())
    }
}

/// Parameter handles of one block inside a shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MambaBlock {
    pub norm_w: ParamId,
    pub w_in: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub w_dt_down: ParamId,
    pub w_dt_up: ParamId,
    pub dt_bias: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub w_out: ParamId,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl MambaBlock {
    /// Register a freshly initialized block under `prefix`.
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &SsmConfig, rng: &mut Rng) -> Self {
        let (d, di, n, k, r) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv, cfg.dt_rank());
        let lin = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let mut add = |name: &str, t: Tensor<T>| store.add(format!("{prefix}.{name}"), t);

        let norm_w = add("norm_w", Tensor::full(&[d], T::one()));
        let w_in = add("w_in", Tensor::uniform(&[d, 2 * di], lin(d), rng));
        let conv_w = add("conv_w", Tensor::uniform(&[di, k], lin(k), rng));
        let conv_b = add("conv_b", Tensor::uniform(&[di], lin(k), rng));
        let w_dt_down = add("w_dt_down", Tensor::uniform(&[di, r], lin(di), rng));
        let w_dt_up = add("w_dt_up", Tensor::uniform(&[r, di], lin(r), rng));
        let (lo, hi) = (cfg.dt_min.ln(), cfg.dt_max.ln());
        let dt_bias = add(
            "dt_bias",
            Tensor::from_fn(&[di], |_| {
                let dt = rng.gen_range(lo..=hi).exp().max(cfg.dt_init_floor);
                T::of(inverse_softplus(dt))
            }),
        );
        let w_b = add("w_b", Tensor::uniform(&[di, n], lin(di), rng));
        let w_c = add("w_c", Tensor::uniform(&[di, n], lin(di), rng));
        let a_log = add("a_log", Tensor::from_fn(&[di, n], |i| T::of(((i % n) as f64 + 1.0).ln())));
        let d_skip = add("d_skip", Tensor::full(&[di], T::one()));
        let w_out = add("w_out", Tensor::uniform(&[di, d], lin(di), rng));
        Self { norm_w, w_in, conv_w, conv_b, w_dt_down, w_dt_up, dt_bias, w_b, w_c, a_log, d_skip, w_out }
    }

    pub fn param_ids(&self) -> [ParamId; 12] {
        [
            self.norm_w, self.w_in, self.conv_w, self.conv_b, self.w_dt_down, self.w_dt_up,
            self.dt_bias, self.w_b, self.w_c, self.a_log, self.d_skip, self.w_out,
        ]
    }

    /// `M = H + dropout(out)` for `H` of shape `n × d_model`. Dropout is
    /// active only when `rng` is given.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> Result<Var, ShapeError> {
        let [norm_w, w_in, conv_w, conv_b, w_dt_down, w_dt_up, dt_bias, w_b, w_c, a_log, d_skip, w_out] =
            self.param_ids().map(|id| g.param(id));
        let di = g.value(conv_w).rows();

        let u = g.rms_norm(h, norm_w)?;
        let proj = g.matmul(u, w_in)?;
        let xb = g.slice_cols(proj, 0, di)?;
        let z = g.slice_cols(proj, di, di)?;
        let xc = g.causal_conv1d(xb, conv_w, conv_b)?;
        let xs = g.activation(xc, Activation::Silu);

        let dt_low = g.matmul(xs, w_dt_down)?;
        let dt = g.matmul(dt_low, w_dt_up)?;
        let dt = g.add_row(dt, dt_bias)?;
        let delta = g.activation(dt, Activation::Softplus);
        let b = g.matmul(xs, w_b)?;
        let c = g.matmul(xs, w_c)?;
        let a = g.neg_exp(a_log);

        let y = g.selective_scan(xs, delta, a, b, c, d_skip)?;
        let gate = g.activation(z, Activation::Silu);
        let gated = g.mul(y, gate)?;
        let out = g.matmul(gated, w_out)?;
        let out = g.dropout(out, dropout, rng);
        g.add(h, out)
    }
}

/// `n_blocks` Mamba blocks applied in sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MambaStack {
    pub blocks: Vec<MambaBlock>,
}

impl MambaStack {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, cfg: &SsmConfig, rng: &mut Rng) -> Self {
        let blocks = (0..cfg.n_blocks).map(|i| MambaBlock::init(store, &format!("ssm.{i}"), cfg, rng)).collect();
        Self { blocks }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        dropout: f64,
        mut rng: Option<&mut Rng>,
    ) -> Result<Var, ShapeError> {
        let mut x = h;
        for block in &self.blocks {
            x = block.forward(g, x, dropout, rng.as_deref_mut())?;
        }
        Ok(x)
    }
}
