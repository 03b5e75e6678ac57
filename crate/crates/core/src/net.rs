//! The three network heads that sit on top of a positional embedding:
//! a single linear layer, the residual ReLU network ("FcNet") and the
//! sine-activated network ("SirenNet"). Parameters live in one flat vector;
//! gradients are computed by hand-written reverse passes over the fixed
//! layer graph.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dfs::Scales;
use crate::error::{GeoError, Result};
use crate::grammar::SpecString;
use crate::matrix::{accumulate_weight_grad, affine, backprop_input, Matrix};
use crate::train::{loss_and_output_grad, LossKind, Targets};

pub const FCNET_BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    Linear,
    FcNet,
    SirenNet,
}

impl NetworkKind {
    pub fn name(&self) -> &'static str {
        match self {
            NetworkKind::Linear => "linear",
            NetworkKind::FcNet => "fcnet",
            NetworkKind::SirenNet => "siren",
        }
    }

    fn code(&self) -> u32 {
        match self {
            NetworkKind::Linear => 0,
            NetworkKind::FcNet => 1,
            NetworkKind::SirenNet => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(NetworkKind::Linear),
            1 => Some(NetworkKind::FcNet),
            2 => Some(NetworkKind::SirenNet),
            _ => None,
        }
    }
}

/// Architecture without the input/output widths, which come from the
/// embedding and the task. Parsed from `linear`, `fcnet:H=256,p=0.5` or
/// `siren:H=128,N=2,w0=30,p=0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkArch {
    pub kind: NetworkKind,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub omega0: f64,
}

pub const DEFAULT_FCNET_HIDDEN: usize = 256;
pub const DEFAULT_FCNET_DROPOUT: f64 = 0.5;
pub const DEFAULT_SIREN_HIDDEN: usize = 128;
pub const DEFAULT_SIREN_LAYERS: usize = 2;
pub const DEFAULT_OMEGA0: f64 = 30.0;

impl NetworkArch {
    pub fn linear() -> Self {
        Self {
            kind: NetworkKind::Linear,
            hidden: 0,
            layers: 0,
            dropout: 0.0,
            omega0: 1.0,
        }
    }

    pub fn fcnet(hidden: usize, dropout: f64) -> Self {
        Self {
            kind: NetworkKind::FcNet,
            hidden,
            layers: FCNET_BLOCKS,
            dropout,
            omega0: 1.0,
        }
    }

    pub fn siren(hidden: usize, layers: usize, omega0: f64, dropout: f64) -> Self {
        Self {
            kind: NetworkKind::SirenNet,
            hidden,
            layers,
            dropout,
            omega0,
        }
    }

    pub fn with_dims(self, in_dim: usize, out_dim: usize) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            kind: self.kind,
            in_dim,
            out_dim,
            hidden: self.hidden,
            layers: self.layers,
            dropout: self.dropout,
            omega0: self.omega0,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for NetworkArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NetworkKind::Linear => f.write_str("linear"),
            NetworkKind::FcNet => write!(f, "fcnet:H={},p={}", self.hidden, self.dropout),
            NetworkKind::SirenNet => write!(
                f,
                "siren:H={},N={},w0={},p={}",
                self.hidden, self.layers, self.omega0, self.dropout
            ),
        }
    }
}

impl FromStr for NetworkArch {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SpecString::parse(s)?;
        let arch = match spec.kind.as_str() {
            "linear" => NetworkArch::linear(),
            "fcnet" => NetworkArch::fcnet(
                spec.take_or("H", DEFAULT_FCNET_HIDDEN)?,
                spec.take_or("p", DEFAULT_FCNET_DROPOUT)?,
            ),
            "siren" | "sirennet" => NetworkArch::siren(
                spec.take_or("H", DEFAULT_SIREN_HIDDEN)?,
                spec.take_or("N", DEFAULT_SIREN_LAYERS)?,
                spec.take_or("w0", DEFAULT_OMEGA0)?,
                spec.take_or("p", 0.0)?,
            ),
            other => {
                return Err(GeoError::parse(
                    s,
                    "kind",
                    format!("unknown network `{other}`"),
                ))
            }
        };
        spec.finish()?;
        // Validate everything except the widths.
        arch.with_dims(1, 1)?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub omega0: f64,
}

impl NetworkSpec {
    pub fn arch(&self) -> NetworkArch {
        NetworkArch {
            kind: self.kind,
            hidden: self.hidden,
            layers: self.layers,
            dropout: self.dropout,
            omega0: self.omega0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(GeoError::invalid("network dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GeoError::invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        match self.kind {
            NetworkKind::Linear => {}
            NetworkKind::FcNet => {
                if self.hidden == 0 {
                    return Err(GeoError::invalid("fcnet needs H >= 1"));
                }
            }
            NetworkKind::SirenNet => {
                if self.hidden == 0 || self.layers == 0 {
                    return Err(GeoError::invalid("siren needs H >= 1 and N >= 1"));
                }
                if !(self.omega0.is_finite() && self.omega0 > 0.0) {
                    return Err(GeoError::invalid("siren needs w0 > 0"));
                }
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer in evaluation order.
    fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let (i, o, h) = (self.in_dim, self.out_dim, self.hidden);
        match self.kind {
            NetworkKind::Linear => vec![(i, o)],
            NetworkKind::FcNet => {
                let mut v = vec![(i, h)];
                v.extend(std::iter::repeat((h, h)).take(2 * FCNET_BLOCKS));
                v.push((h, o));
                v
            }
            NetworkKind::SirenNet => {
                let mut v = vec![(i, h)];
                v.extend(std::iter::repeat((h, h)).take(self.layers - 1));
                v.push((h, o));
                v
            }
        }
    }
}

/// Location of one dense layer inside the flat parameter vector. Weights
/// are stored `fan_out × fan_in` row-major, followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
}

impl DenseSlot {
    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weight..self.weight + self.fan_in * self.fan_out]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias..self.bias + self.fan_out]
    }

    fn grads<'a>(&self, grad: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        let (head, tail) = grad.split_at_mut(self.bias);
        (
            &mut head[self.weight..self.weight + self.fan_in * self.fan_out],
            &mut tail[..self.fan_out],
        )
    }

    fn end(&self) -> usize {
        self.bias + self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    params: Vec<f64>,
    layout: Vec<DenseSlot>,
}

fn build_layout(spec: &NetworkSpec) -> Vec<DenseSlot> {
    let mut offset = 0;
    spec.dense_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let slot = DenseSlot {
                fan_in,
                fan_out,
                weight: offset,
                bias: offset + fan_in * fan_out,
            };
            offset = slot.end();
            slot
        })
        .collect()
}

/// Dropout mask for one activation matrix: kept entries carry `1/(1-p)`.
fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        })
        .collect()
}

enum LayerCache {
    Linear,
    FcNet {
        /// Input to the first dense layer's ReLU, i.e. its pre-activation.
        stem_pre: Matrix,
        blocks: Vec<ResidualCache>,
        /// Final hidden state fed into the output layer.
        last: Matrix,
    },
    Siren {
        /// Input to each sine layer.
        inputs: Vec<Matrix>,
        /// `cos` of each sine argument.
        cosines: Vec<Matrix>,
        masks: Vec<Option<Vec<f64>>>,
        last: Matrix,
    },
}

struct ResidualCache {
    input: Matrix,
    first_pre: Matrix,
    dropped: Matrix,
    mask: Option<Vec<f64>>,
    second_pre: Matrix,
}

impl Model {
    /// Random initialization.
    ///
    /// SirenNet: first layer `U(±1/in_dim)`, later layers `U(±sqrt(6/fan_in))`
    /// (hidden sine layers run at frequency 1), biases drawn from the same
    /// range as their weights. Linear and FcNet: Glorot-uniform weights,
    /// zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = build_layout(&spec);
        let mut params = vec![0.0; layout.last().map_or(0, DenseSlot::end)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, slot) in layout.iter().enumerate() {
            let (limit, bias_limit) = match spec.kind {
                NetworkKind::SirenNet => {
                    let l = if i == 0 {
                        1.0 / slot.fan_in as f64
                    } else {
                        (6.0 / slot.fan_in as f64).sqrt()
                    };
                    (l, l)
                }
                _ => ((6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt(), 0.0),
            };
            for w in &mut params[slot.weight..slot.bias] {
                *w = rng.random_range(-limit..=limit);
            }
            for b in &mut params[slot.bias..slot.end()] {
                *b = if bias_limit > 0.0 {
                    rng.random_range(-bias_limit..=bias_limit)
                } else {
                    0.0
                };
            }
        }
        Ok(Self {
            spec,
            params,
            layout,
        })
    }

    /// Wraps an explicit parameter vector.
    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = build_layout(&spec);
        let want = layout.last().map_or(0, DenseSlot::end);
        if params.len() != want {
            return Err(GeoError::invalid(format!(
                "expected {want} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(GeoError::numeric("model parameters"));
        }
        Ok(Self {
            spec,
            params,
            layout,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> &[DenseSlot] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.in_dim {
            return Err(GeoError::invalid(format!(
                "input width {} does not match network in_dim {}",
                x.cols(),
                self.spec.in_dim
            )));
        }
        Ok(())
    }

    fn dense(&self, i: usize, x: &Matrix) -> Matrix {
        let slot = &self.layout[i];
        affine(x, slot.weights(&self.params), slot.bias(&self.params))
    }

    fn finite(&self, m: &Matrix, what: impl FnOnce() -> String) -> Result<()> {
        if m.all_finite() {
            Ok(())
        } else {
            Err(GeoError::numeric(what()))
        }
    }

    /// Batched forward pass. Dropout is active iff `rng` is given.
    pub fn forward_batch(&self, x: &Matrix, rng: Option<&mut ChaCha8Rng>) -> Result<Matrix> {
        self.forward_cached(x, rng).map(|(y, _)| y)
    }

    fn forward_cached(
        &self,
        x: &Matrix,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Matrix, LayerCache)> {
        self.check_input(x)?;
        let p = self.spec.dropout;
        let mut mask_for = |len: usize| -> Option<Vec<f64>> {
            match rng.as_deref_mut() {
                Some(r) if p > 0.0 => Some(dropout_mask(r, len, p)),
                _ => None,
            }
        };
        match self.spec.kind {
            NetworkKind::Linear => {
                let y = self.dense(0, x);
                self.finite(&y, || "linear output layer".into())?;
                Ok((y, LayerCache::Linear))
            }
            NetworkKind::FcNet => {
                let stem_pre = self.dense(0, x);
                self.finite(&stem_pre, || "fcnet input layer".into())?;
                let mut h = relu(&stem_pre);
                let mut blocks = Vec::with_capacity(FCNET_BLOCKS);
                for b in 0..FCNET_BLOCKS {
                    let first_pre = self.dense(1 + 2 * b, &h);
                    let mut dropped = relu(&first_pre);
                    let mask = mask_for(dropped.data().len());
                    if let Some(m) = &mask {
                        apply_mask(&mut dropped, m);
                    }
                    let second_pre = self.dense(2 + 2 * b, &dropped);
                    self.finite(&second_pre, || format!("fcnet residual block {b}"))?;
                    let mut next = h.clone();
                    for (o, z) in next.data_mut().iter_mut().zip(second_pre.data()) {
                        *o += z.max(0.0);
                    }
                    blocks.push(ResidualCache {
                        input: std::mem::replace(&mut h, next),
                        first_pre,
                        dropped,
                        mask,
                        second_pre,
                    });
                }
                let y = self.dense(1 + 2 * FCNET_BLOCKS, &h);
                self.finite(&y, || "fcnet output layer".into())?;
                Ok((
                    y,
                    LayerCache::FcNet {
                        stem_pre,
                        blocks,
                        last: h,
                    },
                ))
            }
            NetworkKind::SirenNet => {
                let n = self.spec.layers;
                let mut inputs = Vec::with_capacity(n);
                let mut cosines = Vec::with_capacity(n);
                let mut masks = Vec::with_capacity(n);
                let mut h = x.clone();
                for l in 0..n {
                    let omega = if l == 0 { self.spec.omega0 } else { 1.0 };
                    let mut z = self.dense(l, &h);
                    let mask = mask_for(z.data().len());
                    if let Some(m) = &mask {
                        apply_mask(&mut z, m);
                    }
                    let mut cos = z.clone();
                    for (s, c) in z.data_mut().iter_mut().zip(cos.data_mut()) {
                        let (sn, cs) = (omega * *s).sin_cos();
                        *s = sn;
                        *c = cs;
                    }
                    self.finite(&z, || format!("siren layer {l}"))?;
                    inputs.push(std::mem::replace(&mut h, z));
                    cosines.push(cos);
                    masks.push(mask);
                }
                let y = self.dense(n, &h);
                self.finite(&y, || "siren output layer".into())?;
                Ok((
                    y,
                    LayerCache::Siren {
                        inputs,
                        cosines,
                        masks,
                        last: h,
                    },
                ))
            }
        }
    }

    /// Reverse pass: given `dy = ∂loss/∂output`, accumulates parameter
    /// gradients into `grad` and returns `∂loss/∂input`.
    fn backward_cached(
        &self,
        x: &Matrix,
        cache: &LayerCache,
        dy: &Matrix,
        grad: &mut [f64],
    ) -> Matrix {
        let params = &self.params;
        let dense_back = |i: usize, input: &Matrix, d: &Matrix, grad: &mut [f64]| -> Matrix {
            let slot = &self.layout[i];
            let (gw, gb) = slot.grads(grad);
            accumulate_weight_grad(d, input, gw, gb);
            backprop_input(d, slot.weights(params), slot.fan_in)
        };
        match cache {
            LayerCache::Linear => dense_back(0, x, dy, grad),
            LayerCache::FcNet {
                stem_pre,
                blocks,
                last,
            } => {
                let mut dh = dense_back(1 + 2 * FCNET_BLOCKS, last, dy, grad);
                for (b, c) in blocks.iter().enumerate().rev() {
                    let dz2 = relu_back(&dh, &c.second_pre);
                    let mut dd = dense_back(2 + 2 * b, &c.dropped, &dz2, grad);
                    if let Some(m) = &c.mask {
                        apply_mask(&mut dd, m);
                    }
                    let dz1 = relu_back(&dd, &c.first_pre);
                    let dx = dense_back(1 + 2 * b, &c.input, &dz1, grad);
                    for (a, v) in dh.data_mut().iter_mut().zip(dx.data()) {
                        *a += v;
                    }
                }
                let dz0 = relu_back(&dh, stem_pre);
                dense_back(0, x, &dz0, grad)
            }
            LayerCache::Siren {
                inputs,
                cosines,
                masks,
                last,
            } => {
                let n = self.spec.layers;
                let mut dh = dense_back(n, last, dy, grad);
                for l in (0..n).rev() {
                    let omega = if l == 0 { self.spec.omega0 } else { 1.0 };
                    for (d, c) in dh.data_mut().iter_mut().zip(cosines[l].data()) {
                        *d *= omega * c;
                    }
                    if let Some(m) = &masks[l] {
                        apply_mask(&mut dh, m);
                    }
                    dh = dense_back(l, &inputs[l], &dh, grad);
                }
                dh
            }
        }
    }

    /// Single-sample forward. `train_mode` enables dropout driven by `seed`.
    pub fn forward(&self, x: &[f64], train_mode: bool, seed: u64) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = self.forward_batch(&m, train_mode.then_some(&mut rng))?;
        Ok(y.data().to_vec())
    }

    /// Mean batch loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        x: &Matrix,
        targets: &Targets,
        loss: LossKind,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>)> {
        let (y, cache) = self.forward_cached(x, rng)?;
        let (value, dy) = loss_and_output_grad(loss, &y, targets)?;
        if !value.is_finite() {
            return Err(GeoError::numeric("loss value"));
        }
        let mut grad = vec![0.0; self.params.len()];
        self.backward_cached(x, &cache, &dy, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(GeoError::numeric("parameter gradient"));
        }
        Ok((value, grad))
    }

    /// Vector-Jacobian product with respect to the input, eval mode.
    pub fn input_vjp(&self, x: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != self.spec.out_dim {
            return Err(GeoError::invalid("cotangent width does not match out_dim"));
        }
        let xm = Matrix::from_vec(1, x.len(), x.to_vec());
        let (_, cache) = self.forward_cached(&xm, None)?;
        let dy = Matrix::from_vec(1, cotangent.len(), cotangent.to_vec());
        let mut scratch = vec![0.0; self.params.len()];
        Ok(self
            .backward_cached(&xm, &cache, &dy, &mut scratch)
            .data()
            .to_vec())
    }
}

fn relu(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

fn relu_back(d: &Matrix, pre: &Matrix) -> Matrix {
    let mut out = d.clone();
    for (o, z) in out.data_mut().iter_mut().zip(pre.data()) {
        if *z <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

fn apply_mask(m: &mut Matrix, mask: &[f64]) {
    for (v, k) in m.data_mut().iter_mut().zip(mask) {
        *v *= k;
    }
}

/// One-layer SirenNet over direct `(λ, φ)` input whose hidden units are set
/// by hand so that its output equals the multi-scale grid embedding: block
/// `s` holds `sin(λ/α_s + π/2), sin(λ/α_s), sin(φ/α_s + π/2), sin(φ/α_s)`.
/// The output layer is the identity.
pub fn grid_siren(scales: &Scales) -> Result<Model> {
    let scales = Scales::new(scales.count, scales.r_min, scales.r_max)?;
    let h = 4 * scales.count;
    let spec = NetworkArch::siren(h, 1, 1.0, 0.0).with_dims(2, h)?;
    let layout = build_layout(&spec);
    let mut params = vec![0.0; layout[1].end()];
    let (hidden, out) = (layout[0], layout[1]);
    let half_pi = std::f64::consts::FRAC_PI_2;
    for (s, k) in scales.inverse_radians().into_iter().enumerate() {
        let base = 4 * s;
        // Row r of W is [w_lon, w_lat].
        params[hidden.weight + 2 * base] = k;
        params[hidden.weight + 2 * (base + 1)] = k;
        params[hidden.weight + 2 * (base + 2) + 1] = k;
        params[hidden.weight + 2 * (base + 3) + 1] = k;
        params[hidden.bias + base] = half_pi;
        params[hidden.bias + base + 2] = half_pi;
    }
    for i in 0..h {
        params[out.weight + i * h + i] = 1.0;
    }
    Model::from_params(spec, params)
}

/// Checkpoint header fields for the network part.
pub(crate) fn encode_spec(spec: &NetworkSpec, out: &mut Vec<u8>) {
    out.extend(spec.kind.code().to_le_bytes());
    for v in [spec.in_dim, spec.out_dim, spec.hidden, spec.layers] {
        out.extend((v as u64).to_le_bytes());
    }
    out.extend(spec.dropout.to_le_bytes());
    out.extend(spec.omega0.to_le_bytes());
}

pub(crate) fn decode_spec(cursor: &mut crate::checkpoint::Reader<'_>) -> Result<NetworkSpec> {
    let code = cursor.u32()?;
    let kind = NetworkKind::from_code(code)
        .ok_or_else(|| cursor.error(format!("unknown network kind code {code}")))?;
    let in_dim = cursor.u64()? as usize;
    let out_dim = cursor.u64()? as usize;
    let hidden = cursor.u64()? as usize;
    let layers = cursor.u64()? as usize;
    let dropout = cursor.f64()?;
    let omega0 = cursor.f64()?;
    let spec = NetworkSpec {
        kind,
        in_dim,
        out_dim,
        hidden,
        layers,
        dropout,
        omega0,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfs::{embed, EmbeddingSpec};
    use crate::geom::{uniform_sphere_sample, SpherePoint};

    fn fd_check(
        model: &Model,
        x: &Matrix,
        targets: &Targets,
        loss: LossKind,
        coords: usize,
    ) -> f64 {
        let (_, grad) = model.loss_and_grad(x, targets, loss, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..coords {
            let i = rng.random_range(0..model.num_params());
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            let lp = plus.loss_and_grad(x, targets, loss, None).unwrap().0;
            let lm = minus.loss_and_grad(x, targets, loss, None).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            if grad[i].abs() > 1e-6 {
                worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(fd.abs()));
            }
        }
        worst
    }

    fn random_inputs(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn param_counts() {
        let lin = Model::init(NetworkArch::linear().with_dims(400, 16).unwrap(), 0).unwrap();
        assert_eq!(lin.num_params(), 6416);
        let fc = Model::init(NetworkArch::fcnet(128, 0.5).with_dims(64, 16).unwrap(), 0).unwrap();
        assert_eq!(
            fc.num_params(),
            (64 * 128 + 128) + 4 * 2 * (128 * 128 + 128) + (128 * 16 + 16)
        );
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = NetworkArch::siren(32, 2, 30.0, 0.0)
            .with_dims(10, 3)
            .unwrap();
        let a = Model::init(spec, 5).unwrap();
        assert_eq!(a, Model::init(spec, 5).unwrap());
        assert_ne!(a, Model::init(spec, 6).unwrap());
        let first = &a.layout()[0];
        assert!(a.params()[first.weight..first.bias]
            .iter()
            .all(|w| w.abs() <= 0.1));
    }

    #[test]
    fn zero_linear_outputs_zero() {
        let spec = NetworkArch::linear().with_dims(5, 3).unwrap();
        let m = Model::from_params(spec, vec![0.0; 18]).unwrap();
        assert_eq!(
            m.forward(&[1.0, 2.0, 3.0, 4.0, 5.0], false, 0).unwrap(),
            vec![0.0; 3]
        );
        assert!(m.forward(&[1.0], false, 0).is_err());

        let x = random_inputs(4, 5, 1);
        let t = Targets::Values(Matrix::zeros(4, 3));
        let (l, g) = m
            .loss_and_grad(&x, &t, LossKind::MeanSquaredError, None)
            .unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let spec = NetworkArch::linear().with_dims(3, 16).unwrap();
        let m = Model::from_params(spec, vec![0.0; 64]).unwrap();
        let x = random_inputs(8, 3, 2);
        let t = Targets::Classes((0..8).collect());
        let (l, _) = m
            .loss_and_grad(&x, &t, LossKind::SoftmaxCrossEntropy, None)
            .unwrap();
        assert!((l - 16f64.ln()).abs() < 1e-12);
        assert!((l - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn eval_forward_is_pure_and_train_forward_reproducible() {
        let spec = NetworkArch::fcnet(16, 0.5).with_dims(6, 4).unwrap();
        let m = Model::init(spec, 3).unwrap();
        let x = [0.1, -0.2, 0.3, 0.9, -0.7, 0.05];
        assert_eq!(
            m.forward(&x, false, 1).unwrap(),
            m.forward(&x, false, 2).unwrap()
        );
        assert_eq!(
            m.forward(&x, true, 7).unwrap(),
            m.forward(&x, true, 7).unwrap()
        );
        assert_ne!(
            m.forward(&x, true, 7).unwrap(),
            m.forward(&x, false, 7).unwrap()
        );
    }

    #[test]
    fn gradient_check_all_architectures() {
        let cases: Vec<(NetworkArch, LossKind, Box<dyn Fn(usize) -> Targets>)> = vec![
            (
                NetworkArch::linear(),
                LossKind::SoftmaxCrossEntropy,
                Box::new(|n| Targets::Classes((0..n).map(|i| i % 4).collect())),
            ),
            (
                NetworkArch::fcnet(12, 0.0),
                LossKind::BinaryCrossEntropy,
                Box::new(|n| Targets::Binary((0..n).map(|i| i % 3 == 0).collect())),
            ),
            (
                NetworkArch::siren(12, 3, 30.0, 0.0),
                LossKind::MeanSquaredError,
                Box::new(|n| Targets::Values(random_inputs(n, 4, 77))),
            ),
        ];
        for (arch, loss, targets) in cases {
            let out = match loss {
                LossKind::BinaryCrossEntropy => 1,
                _ => 4,
            };
            for seed in 0..5 {
                let spec = arch.with_dims(7, out).unwrap();
                let mut model = Model::init(spec, seed).unwrap();
                if arch.kind == NetworkKind::FcNet {
                    // Shift biases so ReLU kinks stay away from the probes.
                    for slot in model.layout().to_vec() {
                        for b in &mut model.params_mut()[slot.bias..slot.end()] {
                            *b = 0.1;
                        }
                    }
                }
                let x = random_inputs(9, 7, seed + 10);
                let worst = fd_check(&model, &x, &targets(9), loss, 200);
                assert!(worst < 1e-4, "{arch} seed {seed}: {worst}");
            }
        }
    }

    #[test]
    fn gradient_check_with_fixed_dropout_mask() {
        // Same RNG seed => same mask, so finite differences see a fixed graph.
        let spec = NetworkArch::siren(10, 2, 30.0, 0.3)
            .with_dims(5, 2)
            .unwrap();
        let model = Model::init(spec, 1).unwrap();
        let x = random_inputs(6, 5, 4);
        let t = Targets::Values(random_inputs(6, 2, 5));
        let loss = |m: &Model| {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            m.loss_and_grad(&x, &t, LossKind::MeanSquaredError, Some(&mut rng))
                .unwrap()
        };
        let (_, grad) = loss(&model);
        for i in (0..model.num_params()).step_by(7) {
            let mut p = model.clone();
            p.params_mut()[i] += 1e-5;
            let mut m = model.clone();
            m.params_mut()[i] -= 1e-5;
            let fd = (loss(&p).0 - loss(&m).0) / 2e-5;
            if grad[i].abs() > 1e-6 {
                assert!((fd - grad[i]).abs() / grad[i].abs() < 1e-4);
            }
        }
    }

    #[test]
    fn residual_skips_pass_through() {
        let spec = NetworkArch::fcnet(8, 0.0).with_dims(3, 2).unwrap();
        let mut model = Model::init(spec, 9).unwrap();
        let layout = model.layout().to_vec();
        for slot in &layout[1..1 + 2 * FCNET_BLOCKS] {
            for v in &mut model.params_mut()[slot.weight..slot.end()] {
                *v = 0.0;
            }
        }
        let x = [0.4, -0.1, 0.8];
        let (stem, head) = (layout[0], layout[1 + 2 * FCNET_BLOCKS]);
        let p = model.params();
        let hidden: Vec<f64> = (0..8)
            .map(|j| {
                let z: f64 = (0..3)
                    .map(|i| p[stem.weight + j * 3 + i] * x[i])
                    .sum::<f64>()
                    + p[stem.bias + j];
                z.max(0.0)
            })
            .collect();
        let want: Vec<f64> = (0..2)
            .map(|o| {
                (0..8)
                    .map(|j| p[head.weight + o * 8 + j] * hidden[j])
                    .sum::<f64>()
                    + p[head.bias + o]
            })
            .collect();
        let got = model.forward(&x, false, 0).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_siren_reproduces_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts = uniform_sphere_sample(100, 22).unwrap();
        for _ in 0..5 {
            let r_min = rng.random_range(1.0..90.0);
            let scales = Scales::new(
                rng.random_range(1..20),
                r_min,
                rng.random_range(r_min..720.0),
            )
            .unwrap();
            let model = grid_siren(&scales).unwrap();
            let grid = EmbeddingSpec::Grid(scales);
            for p in pts.iter() {
                let got = model.forward(&[p.lon(), p.lat()], false, 0).unwrap();
                let want = embed(&grid, p).unwrap();
                let err = got
                    .iter()
                    .zip(&want)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-12);
            }
        }

        let one = grid_siren(&Scales::new(1, 1.0, 1.0).unwrap()).unwrap();
        let o = SpherePoint::new(0.0, 0.0).unwrap();
        let out = one.forward(&[o.lon(), o.lat()], false, 0).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 1.0, 0.0]);
        // d/dλ of the first (cosine) feature vanishes at the origin.
        let mut e0 = vec![0.0; 4];
        e0[0] = 1.0;
        let g = one.input_vjp(&[0.0, 0.0], &e0).unwrap();
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn arch_strings() {
        for s in ["linear", "fcnet:H=64,p=0.25", "siren:H=32,N=3,w0=30,p=0"] {
            let a: NetworkArch = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        let d: NetworkArch = "siren".parse().unwrap();
        assert_eq!(d, NetworkArch::siren(128, 2, 30.0, 0.0));
        assert!("siren:H=32,depth=2".parse::<NetworkArch>().is_err());
        assert!("fcnet:p=1.0".parse::<NetworkArch>().is_err());
        assert!("mlp".parse::<NetworkArch>().is_err());
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let spec = NetworkArch::linear().with_dims(2, 1).unwrap();
        let m = Model::from_params(spec, vec![1e308, 1e308, 0.0]).unwrap();
        match m.forward(&[10.0, 10.0], false, 0) {
            Err(GeoError::NumericFailure { context }) => assert!(context.contains("linear")),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }
}
