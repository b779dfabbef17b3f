//! Multi-head self-attention with pluggable position encodings.
//!
//! One block, no output projection, no MLP. Logits per head are
//! `e = (q·kᵀ + b) / √d` where `b` collects every relative term, then
//! `z = softmax(e)·v` plus any value-side relative term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bucket_map::{BucketIndexMap, GridSpec, Method, RelativeMap};
use crate::encoding::{
    bias_logits, bias_table_grad, contextual_logits_backward, contextual_logits_efficient,
    contextual_logits_naive, contextual_value_aggregate, value_aggregate_backward, EncodingTable,
    Mode, ProjectionSide, RpeConfig,
};
use crate::error::{IrpeError, Result};
use crate::index_fn::IndexFunction;
use crate::numerics::{
    axpy, dot, finite_diff_with, matmul_nt_slices, matmul_slices, matmul_tn_slices,
    relative_error, softmax_in_place, Rng, Tensor,
};

/// Fused `d_x × d_z` projections; head `h` owns columns `h·d .. (h+1)·d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MhsaWeights {
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    heads: usize,
}

impl MhsaWeights {
    pub fn new(w_q: Tensor, w_k: Tensor, w_v: Tensor, heads: usize) -> Result<Self> {
        let (d_x, d_z) = w_q.dims2()?;
        if w_k.shape() != w_q.shape() || w_v.shape() != w_q.shape() {
            return Err(IrpeError::shape(
                "MhsaWeights::new",
                format!("W^Q {:?}, W^K {:?}, W^V {:?}", w_q.shape(), w_k.shape(), w_v.shape()),
            ));
        }
        if heads == 0 || d_z % heads != 0 {
            return Err(IrpeError::Config(format!(
                "d_z = {d_z} is not divisible by heads = {heads}"
            )));
        }
        if d_x == 0 || d_z == 0 {
            return Err(IrpeError::Config("projection dims must be positive".into()));
        }
        Ok(MhsaWeights { w_q, w_k, w_v, heads })
    }

    /// Gaussian init with standard deviation `1/√d_x`.
    pub fn random(d_x: usize, d_z: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        let s = 1.0 / (d_x.max(1) as f64).sqrt();
        MhsaWeights::new(
            Tensor::randn(&[d_x, d_z], s, rng),
            Tensor::randn(&[d_x, d_z], s, rng),
            Tensor::randn(&[d_x, d_z], s, rng),
            heads,
        )
    }

    pub fn d_x(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn d_z(&self) -> usize {
        self.w_q.shape()[1]
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.d_z() / self.heads
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbsoluteKind {
    #[default]
    None,
    Sinusoid,
    Learnable,
}

impl FromStr for AbsoluteKind {
    type Err = IrpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AbsoluteKind::None),
            "sinusoid" => Ok(AbsoluteKind::Sinusoid),
            "learnable" => Ok(AbsoluteKind::Learnable),
            _ => Err(IrpeError::Parse(format!("unknown absolute encoding '{s}'"))),
        }
    }
}

/// Relative encodings from prior work, adapted to 2D with the clip function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Key and value vectors per product bucket.
    Shaw,
    /// Sinusoid of the bucket id through a shared projection, plus global
    /// content and position biases.
    #[serde(rename = "xl")]
    TransformerXL,
    /// One table interacting with both queries and keys.
    Huang,
    /// Separate horizontal/vertical half-width tables, concatenated.
    Sasa,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [
        Baseline::Shaw,
        Baseline::TransformerXL,
        Baseline::Huang,
        Baseline::Sasa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Shaw => "shaw",
            Baseline::TransformerXL => "xl",
            Baseline::Huang => "huang",
            Baseline::Sasa => "sasa",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = IrpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shaw" => Ok(Baseline::Shaw),
            "xl" | "transformer-xl" | "transformerxl" => Ok(Baseline::TransformerXL),
            "huang" => Ok(Baseline::Huang),
            "sasa" => Ok(Baseline::Sasa),
            _ => Err(IrpeError::Parse(format!("unknown baseline '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineConfig {
    pub kind: Baseline,
    pub beta: u32,
    pub shared: bool,
    pub grid: GridSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PositionEncodingSpec {
    pub absolute: AbsoluteKind,
    pub relative: Option<RpeConfig>,
    pub baseline: Option<BaselineConfig>,
}

impl PositionEncodingSpec {
    pub fn none() -> Self {
        PositionEncodingSpec::default()
    }

    pub fn relative(config: RpeConfig) -> Self {
        PositionEncodingSpec {
            relative: Some(config),
            ..Default::default()
        }
    }

    pub fn baseline(config: BaselineConfig) -> Self {
        PositionEncodingSpec {
            baseline: Some(config),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.relative.is_some() && self.baseline.is_some() {
            return Err(IrpeError::Config(
                "at most one of a relative encoding and a baseline may be set".into(),
            ));
        }
        if let Some(r) = &self.relative {
            r.validate()?;
        }
        Ok(())
    }

    fn grid(&self) -> Option<GridSpec> {
        self.relative
            .map(|r| r.grid)
            .or(self.baseline.map(|b| b.grid))
    }
}

/// Sinusoid table: `p[pos][2i] = sin(pos·ω_i)`, `p[pos][2i+1] = cos(pos·ω_i)`,
/// `ω_i = 10000^(−2i/dim)`.
pub fn sinusoid_table(positions: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[positions, dim]);
    for pos in 0..positions {
        for c in 0..dim {
            let i = c / 2;
            let angle = pos as f64 * 10000f64.powf(-2.0 * i as f64 / dim as f64);
            t.data_mut()[pos * dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// `x + p` elementwise.
pub fn add_absolute_pe(x: &Tensor, p: &Tensor) -> Result<Tensor> {
    if x.shape() != p.shape() {
        return Err(IrpeError::shape(
            "add_absolute_pe",
            format!("input {:?} vs encoding {:?}", x.shape(), p.shape()),
        ));
    }
    x.add(p)
}

#[derive(Clone, Debug, PartialEq)]
enum AbsolutePe {
    None,
    Sinusoid(Tensor),
    Learnable(Tensor),
}

#[derive(Clone, Debug)]
struct RelativeState {
    map: RelativeMap,
    bias: Option<EncodingTable>,
    /// Dotted with keys (query-side encoding).
    on_q: Option<EncodingTable>,
    /// Dotted with queries (key-side encoding).
    on_k: Option<EncodingTable>,
    on_v: Option<EncodingTable>,
}

#[derive(Clone, Debug)]
enum BaselineState {
    Shaw {
        map: RelativeMap,
        key: EncodingTable,
        value: EncodingTable,
    },
    TransformerXL {
        map: RelativeMap,
        /// `k × d` sinusoid of each bucket id; fixed.
        sinusoid: Tensor,
        w_r: Tensor,
        u: Vec<f64>,
        v: Vec<f64>,
    },
    Huang {
        map: RelativeMap,
        table: EncodingTable,
    },
    Sasa {
        x_map: RelativeMap,
        y_map: RelativeMap,
        table: EncodingTable,
    },
}

/// Which contextual kernel the forward pass uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ContextualPath {
    Naive,
    #[default]
    Efficient,
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    x_in: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    attn: Tensor,
    position_logits: Tensor,
}

impl ForwardCache {
    /// Softmax weights, `h × n × n`.
    pub fn attention(&self) -> &Tensor {
        &self.attn
    }

    /// Unscaled relative contribution `b`, `h × n × n`.
    pub fn position_logits(&self) -> &Tensor {
        &self.position_logits
    }
}

/// Gradients in the order of [`MultiHeadAttention::parameters`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub x: Tensor,
    pub params: Vec<(&'static str, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g.as_slice())
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    weights: MhsaWeights,
    n: usize,
    absolute: AbsolutePe,
    relative: Option<RelativeState>,
    baseline: Option<BaselineState>,
    path: ContextualPath,
    version: u64,
}

fn rows_to_heads(m: &[f64], n: usize, heads: usize, d: usize) -> Tensor {
    let mut out = Tensor::zeros(&[heads, n, d]);
    let dz = heads * d;
    for h in 0..heads {
        let slab = out.slab_mut(h);
        for i in 0..n {
            slab[i * d..(i + 1) * d].copy_from_slice(&m[i * dz + h * d..i * dz + (h + 1) * d]);
        }
    }
    out
}

fn heads_to_rows(t: &Tensor) -> Vec<f64> {
    let (heads, n, d) = t.dims3().expect("3-d");
    let dz = heads * d;
    let mut out = vec![0.0; n * dz];
    for h in 0..heads {
        let slab = t.slab(h);
        for i in 0..n {
            out[i * dz + h * d..i * dz + (h + 1) * d].copy_from_slice(&slab[i * d..(i + 1) * d]);
        }
    }
    out
}

fn check_finite(t: &Tensor, context: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(IrpeError::Numeric {
            context: context.to_string(),
            detail: "non-finite value".into(),
        })
    }
}

/// Splits `proj` (`h × n × d`) into its first and second halves along `d`.
fn split_halves(proj: &Tensor) -> (Tensor, Tensor) {
    let (h, n, d) = proj.dims3().expect("3-d");
    let half = d / 2;
    let mut a = Tensor::zeros(&[h, n, half]);
    let mut b = Tensor::zeros(&[h, n, half]);
    for (r, row) in proj.data().chunks(d).enumerate() {
        a.data_mut()[r * half..(r + 1) * half].copy_from_slice(&row[..half]);
        b.data_mut()[r * half..(r + 1) * half].copy_from_slice(&row[half..]);
    }
    (a, b)
}

fn join_halves(a: &Tensor, b: &Tensor) -> Tensor {
    let (h, n, half) = a.dims3().expect("3-d");
    let d = 2 * half;
    let mut out = Tensor::zeros(&[h, n, d]);
    for (r, row) in out.data_mut().chunks_mut(d).enumerate() {
        row[..half].copy_from_slice(&a.data()[r * half..(r + 1) * half]);
        row[half..].copy_from_slice(&b.data()[r * half..(r + 1) * half]);
    }
    out
}

impl MultiHeadAttention {
    /// Builds a block for sequences of `n` tokens. Relative tables start at
    /// zero; a learnable absolute encoding also starts at zero.
    pub fn new(weights: MhsaWeights, n: usize, spec: &PositionEncodingSpec) -> Result<Self> {
        spec.validate()?;
        if let Some(grid) = spec.grid() {
            if grid.n() != n {
                return Err(IrpeError::Config(format!(
                    "grid {grid} (cls: {}) has {} tokens, sequence has {n}",
                    grid.has_cls_token,
                    grid.n()
                )));
            }
        }
        let (h, d) = (weights.heads(), weights.head_dim());
        let absolute = match spec.absolute {
            AbsoluteKind::None => AbsolutePe::None,
            AbsoluteKind::Sinusoid => AbsolutePe::Sinusoid(sinusoid_table(n, weights.d_x())),
            AbsoluteKind::Learnable => AbsolutePe::Learnable(Tensor::zeros(&[n, weights.d_x()])),
        };
        let relative = spec
            .relative
            .map(|cfg| -> Result<RelativeState> {
                let map = cfg.build_map()?;
                let k = map.num_buckets();
                let ctx = |on: bool| -> Result<Option<EncodingTable>> {
                    (on && cfg.mode == Mode::Contextual)
                        .then(|| EncodingTable::contextual(k, d, h, cfg.shared))
                        .transpose()
                };
                Ok(RelativeState {
                    bias: (cfg.mode == Mode::Bias)
                        .then(|| EncodingTable::bias(k, h, cfg.shared))
                        .transpose()?,
                    on_q: ctx(cfg.targets.q)?,
                    on_k: ctx(cfg.targets.k)?,
                    on_v: ctx(cfg.targets.v)?,
                    map,
                })
            })
            .transpose()?;
        let baseline = spec
            .baseline
            .map(|cfg| build_baseline(&cfg, h, d))
            .transpose()?;
        Ok(MultiHeadAttention {
            weights,
            n,
            absolute,
            relative,
            baseline,
            path: ContextualPath::default(),
            version: 0,
        })
    }

    pub fn weights(&self) -> &MhsaWeights {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set_contextual_path(&mut self, path: ContextualPath) {
        self.path = path;
    }

    /// The bucket map driving the relative terms, if any.
    pub fn relative_map(&self) -> Option<&RelativeMap> {
        if let Some(r) = &self.relative {
            return Some(&r.map);
        }
        match self.baseline.as_ref()? {
            BaselineState::Shaw { map, .. }
            | BaselineState::TransformerXL { map, .. }
            | BaselineState::Huang { map, .. } => Some(map),
            BaselineState::Sasa { x_map, .. } => Some(x_map),
        }
    }

    /// Named learnable parameters, in a fixed order.
    pub fn parameters(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![
            ("w_q", self.weights.w_q.data()),
            ("w_k", self.weights.w_k.data()),
            ("w_v", self.weights.w_v.data()),
        ];
        if let AbsolutePe::Learnable(p) = &self.absolute {
            out.push(("abs_pe", p.data()));
        }
        if let Some(r) = &self.relative {
            for (name, t) in [
                ("rpe_bias", &r.bias),
                ("rpe_q", &r.on_q),
                ("rpe_k", &r.on_k),
                ("rpe_v", &r.on_v),
            ] {
                if let Some(t) = t {
                    out.push((name, t.weights()));
                }
            }
        }
        match &self.baseline {
            Some(BaselineState::Shaw { key, value, .. }) => {
                out.push(("shaw_key", key.weights()));
                out.push(("shaw_value", value.weights()));
            }
            Some(BaselineState::TransformerXL { w_r, u, v, .. }) => {
                out.push(("xl_w_r", w_r.data()));
                out.push(("xl_u", u.as_slice()));
                out.push(("xl_v", v.as_slice()));
            }
            Some(BaselineState::Huang { table, .. }) => out.push(("huang", table.weights())),
            Some(BaselineState::Sasa { table, .. }) => out.push(("sasa", table.weights())),
            None => {}
        }
        out
    }

    /// Mutable view of [`parameters`](Self::parameters). Invalidates
    /// outstanding forward caches.
    pub fn parameters_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        self.version += 1;
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("w_q", self.weights.w_q.data_mut()),
            ("w_k", self.weights.w_k.data_mut()),
            ("w_v", self.weights.w_v.data_mut()),
        ];
        if let AbsolutePe::Learnable(p) = &mut self.absolute {
            out.push(("abs_pe", p.data_mut()));
        }
        if let Some(r) = &mut self.relative {
            for (name, t) in [
                ("rpe_bias", &mut r.bias),
                ("rpe_q", &mut r.on_q),
                ("rpe_k", &mut r.on_k),
                ("rpe_v", &mut r.on_v),
            ] {
                if let Some(t) = t {
                    out.push((name, t.weights_mut()));
                }
            }
        }
        match &mut self.baseline {
            Some(BaselineState::Shaw { key, value, .. }) => {
                out.push(("shaw_key", key.weights_mut()));
                out.push(("shaw_value", value.weights_mut()));
            }
            Some(BaselineState::TransformerXL { w_r, u, v, .. }) => {
                out.push(("xl_w_r", w_r.data_mut()));
                out.push(("xl_u", u.as_mut_slice()));
                out.push(("xl_v", v.as_mut_slice()));
            }
            Some(BaselineState::Huang { table, .. }) => out.push(("huang", table.weights_mut())),
            Some(BaselineState::Sasa { table, .. }) => out.push(("sasa", table.weights_mut())),
            None => {}
        }
        out
    }

    /// Fills every position-encoding parameter (tables, XL terms, learnable
    /// absolute encoding) with `scale`-sized Gaussian noise.
    pub fn randomize_position_parameters(&mut self, scale: f64, rng: &mut Rng) {
        for (name, p) in self.parameters_mut() {
            if !name.starts_with("w_") {
                p.iter_mut().for_each(|v| *v = scale * rng.normal());
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let (n, d_x) = x.dims2()?;
        if n != self.n || d_x != self.weights.d_x() {
            return Err(IrpeError::shape(
                "mhsa_forward",
                format!("input {n}x{d_x}, block expects {}x{}", self.n, self.weights.d_x()),
            ));
        }
        let (h, d, dz) = (self.weights.heads, self.weights.head_dim(), self.weights.d_z());
        let x_in = match &self.absolute {
            AbsolutePe::None => x.clone(),
            AbsolutePe::Sinusoid(p) | AbsolutePe::Learnable(p) => add_absolute_pe(x, p)?,
        };
        let project = |w: &Tensor| {
            let mut m = vec![0.0; n * dz];
            matmul_slices(x_in.data(), w.data(), n, d_x, dz, &mut m);
            rows_to_heads(&m, n, h, d)
        };
        let (q, k, v) = (project(&self.weights.w_q), project(&self.weights.w_k), project(&self.weights.w_v));

        let mut logits = Tensor::zeros(&[h, n, n]);
        for head in 0..h {
            matmul_nt_slices(q.slab(head), k.slab(head), n, d, n, logits.slab_mut(head));
        }
        let position_logits = self.position_logits(&q, &k)?;
        logits.add_assign(&position_logits)?;
        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = logits.scale(scale);
        check_finite(&attn, "attention logits")?;
        for row in attn.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }

        let mut out = Tensor::zeros(&[h, n, d]);
        for head in 0..h {
            matmul_slices(attn.slab(head), v.slab(head), n, n, d, out.slab_mut(head));
        }
        if let Some(table) = self.value_table() {
            out.add_assign(&contextual_value_aggregate(&attn, table, self.value_map())?)?;
        }
        let z = Tensor::from_vec(&[n, dz], heads_to_rows(&out))?;
        check_finite(&z, "attention output")?;
        let cache = ForwardCache {
            version: self.version,
            x_in,
            q,
            k,
            v,
            attn,
            position_logits,
        };
        Ok((z, cache))
    }

    fn contextual(&self, proj: &Tensor, table: &EncodingTable, map: &RelativeMap, side: ProjectionSide) -> Result<Tensor> {
        match self.path {
            ContextualPath::Naive => contextual_logits_naive(proj, table, map, side),
            ContextualPath::Efficient => contextual_logits_efficient(proj, table, map, side),
        }
    }

    /// Sum of all relative logit terms before scaling.
    fn position_logits(&self, q: &Tensor, k: &Tensor) -> Result<Tensor> {
        let (h, n, _) = q.dims3()?;
        let mut b = Tensor::zeros(&[h, n, n]);
        if let Some(r) = &self.relative {
            if let Some(t) = &r.bias {
                b.add_assign(&bias_logits(t, &r.map)?)?;
            }
            if let Some(t) = &r.on_k {
                b.add_assign(&self.contextual(q, t, &r.map, ProjectionSide::Query)?)?;
            }
            if let Some(t) = &r.on_q {
                b.add_assign(&self.contextual(k, t, &r.map, ProjectionSide::Key)?)?;
            }
        }
        match &self.baseline {
            None => {}
            Some(BaselineState::Shaw { map, key, .. }) => {
                b.add_assign(&self.contextual(q, key, map, ProjectionSide::Query)?)?;
            }
            Some(BaselineState::TransformerXL { map, sinusoid, w_r, u, v }) => {
                let r = xl_table(sinusoid, w_r, h)?;
                let proj = add_row_vector(q, v);
                b.add_assign(&self.contextual(&proj, &r, map, ProjectionSide::Query)?)?;
                for head in 0..h {
                    let kh = k.slab(head);
                    let d = u.len();
                    let uk: Vec<f64> = (0..n).map(|j| dot(u, &kh[j * d..(j + 1) * d])).collect();
                    for row in b.slab_mut(head).chunks_mut(n) {
                        axpy(row, 1.0, &uk);
                    }
                }
            }
            Some(BaselineState::Huang { map, table }) => {
                b.add_assign(&self.contextual(q, table, map, ProjectionSide::Query)?)?;
                b.add_assign(&self.contextual(k, table, map, ProjectionSide::Key)?)?;
            }
            Some(BaselineState::Sasa { x_map, y_map, table }) => {
                let (qx, qy) = split_halves(q);
                b.add_assign(&self.contextual(&qx, table, x_map, ProjectionSide::Query)?)?;
                b.add_assign(&self.contextual(&qy, table, y_map, ProjectionSide::Query)?)?;
            }
        }
        Ok(b)
    }

    fn value_table(&self) -> Option<&EncodingTable> {
        match (&self.relative, &self.baseline) {
            (Some(r), _) => r.on_v.as_ref(),
            (_, Some(BaselineState::Shaw { value, .. })) => Some(value),
            _ => None,
        }
    }

    fn value_map(&self) -> &RelativeMap {
        self.relative_map().expect("value table implies a map")
    }

    /// Analytic gradients of a loss with `∂L/∂z = grad_z`.
    pub fn backward(&self, cache: &ForwardCache, grad_z: &Tensor) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(IrpeError::StaleCache);
        }
        let (h, d, dz, d_x) = (
            self.weights.heads,
            self.weights.head_dim(),
            self.weights.d_z(),
            self.weights.d_x(),
        );
        let n = self.n;
        if grad_z.shape() != [n, dz] {
            return Err(IrpeError::shape(
                "mhsa_backward",
                format!("grad_z {:?} vs output [{n}, {dz}]", grad_z.shape()),
            ));
        }
        let g = rows_to_heads(grad_z.data(), n, h, d);
        let attn = &cache.attn;
        let mut grads: Vec<(&'static str, Vec<f64>)> = Vec::new();

        // z = A·V (+ value term)
        let mut d_attn = Tensor::zeros(&[h, n, n]);
        let mut dv = Tensor::zeros(&[h, n, d]);
        for head in 0..h {
            matmul_nt_slices(g.slab(head), cache.v.slab(head), n, d, n, d_attn.slab_mut(head));
            matmul_tn_slices(attn.slab(head), g.slab(head), n, n, d, dv.slab_mut(head));
        }
        let mut value_table_grad = None;
        if let Some(table) = self.value_table() {
            let (ga, gt) = value_aggregate_backward(&g, attn, table, self.value_map())?;
            d_attn.add_assign(&ga)?;
            value_table_grad = Some(gt);
        }

        // softmax, then the 1/√d scaling
        let scale = 1.0 / (d as f64).sqrt();
        let mut ds = Tensor::zeros(&[h, n, n]);
        for ((out, a), da) in ds
            .data_mut()
            .chunks_mut(n)
            .zip(attn.data().chunks(n))
            .zip(d_attn.data().chunks(n))
        {
            let inner = dot(a, da);
            for ((o, &ai), &dai) in out.iter_mut().zip(a).zip(da) {
                *o = ai * (dai - inner) * scale;
            }
        }

        let mut dq = Tensor::zeros(&[h, n, d]);
        let mut dk = Tensor::zeros(&[h, n, d]);
        for head in 0..h {
            matmul_slices(ds.slab(head), cache.k.slab(head), n, n, d, dq.slab_mut(head));
            matmul_tn_slices(ds.slab(head), cache.q.slab(head), n, n, d, dk.slab_mut(head));
        }

        if let Some(r) = &self.relative {
            if let Some(t) = &r.bias {
                grads.push(("rpe_bias", bias_table_grad(&ds, t, &r.map)?));
            }
            if let Some(t) = &r.on_q {
                let (gk, gt) = contextual_logits_backward(&ds, &cache.k, t, &r.map, ProjectionSide::Key)?;
                dk.add_assign(&gk)?;
                grads.push(("rpe_q", gt));
            }
            if let Some(t) = &r.on_k {
                let (gq, gt) = contextual_logits_backward(&ds, &cache.q, t, &r.map, ProjectionSide::Query)?;
                dq.add_assign(&gq)?;
                grads.push(("rpe_k", gt));
            }
            if let Some(gt) = value_table_grad.take() {
                grads.push(("rpe_v", gt));
            }
        }
        match &self.baseline {
            None => {}
            Some(BaselineState::Shaw { map, key, .. }) => {
                let (gq, gt) = contextual_logits_backward(&ds, &cache.q, key, map, ProjectionSide::Query)?;
                dq.add_assign(&gq)?;
                grads.push(("shaw_key", gt));
                grads.push(("shaw_value", value_table_grad.take().expect("shaw value table")));
            }
            Some(BaselineState::TransformerXL { map, sinusoid, w_r, u, v }) => {
                let r = xl_table(sinusoid, w_r, h)?;
                let proj = add_row_vector(&cache.q, v);
                let (gp, gr) = contextual_logits_backward(&ds, &proj, &r, map, ProjectionSide::Query)?;
                dq.add_assign(&gp)?;
                let mut gv = vec![0.0; d];
                for row in gp.data().chunks(d) {
                    axpy(&mut gv, 1.0, row);
                }
                let k_rows = sinusoid.shape()[0];
                let mut gw = vec![0.0; d * d];
                matmul_tn_slices(sinusoid.data(), &gr, d, k_rows, d, &mut gw);
                let mut gu = vec![0.0; d];
                for head in 0..h {
                    let dsh = ds.slab(head);
                    let kh = cache.k.slab(head);
                    let dkh = dk.slab_mut(head);
                    for j in 0..n {
                        let col: f64 = (0..n).map(|i| dsh[i * n + j]).sum();
                        axpy(&mut gu, col, &kh[j * d..(j + 1) * d]);
                        axpy(&mut dkh[j * d..(j + 1) * d], col, u);
                    }
                }
                grads.push(("xl_w_r", gw));
                grads.push(("xl_u", gu));
                grads.push(("xl_v", gv));
            }
            Some(BaselineState::Huang { map, table }) => {
                let (gq, gt_q) = contextual_logits_backward(&ds, &cache.q, table, map, ProjectionSide::Query)?;
                let (gk, gt_k) = contextual_logits_backward(&ds, &cache.k, table, map, ProjectionSide::Key)?;
                dq.add_assign(&gq)?;
                dk.add_assign(&gk)?;
                let mut gt = gt_q;
                axpy(&mut gt, 1.0, &gt_k);
                grads.push(("huang", gt));
            }
            Some(BaselineState::Sasa { x_map, y_map, table }) => {
                let (qx, qy) = split_halves(&cache.q);
                let (gx, gt_x) = contextual_logits_backward(&ds, &qx, table, x_map, ProjectionSide::Query)?;
                let (gy, gt_y) = contextual_logits_backward(&ds, &qy, table, y_map, ProjectionSide::Query)?;
                dq.add_assign(&join_halves(&gx, &gy))?;
                let mut gt = gt_x;
                axpy(&mut gt, 1.0, &gt_y);
                grads.push(("sasa", gt));
            }
        }

        // projections
        let mut dx = vec![0.0; n * d_x];
        let mut weight_grads = Vec::with_capacity(3);
        let mut scratch = vec![0.0; n * d_x];
        for (dm, w) in [(&dq, &self.weights.w_q), (&dk, &self.weights.w_k), (&dv, &self.weights.w_v)] {
            let rows = heads_to_rows(dm);
            let mut gw = vec![0.0; d_x * dz];
            matmul_tn_slices(cache.x_in.data(), &rows, d_x, n, dz, &mut gw);
            weight_grads.push(gw);
            matmul_nt_slices(&rows, w.data(), n, dz, d_x, &mut scratch);
            axpy(&mut dx, 1.0, &scratch);
        }
        let mut params: Vec<(&'static str, Vec<f64>)> = ["w_q", "w_k", "w_v"]
            .into_iter()
            .zip(weight_grads)
            .collect();
        if matches!(self.absolute, AbsolutePe::Learnable(_)) {
            params.push(("abs_pe", dx.clone()));
        }
        params.extend(grads);
        Ok(Gradients {
            x: Tensor::from_vec(&[n, d_x], dx)?,
            params,
        })
    }
}

fn build_baseline(cfg: &BaselineConfig, heads: usize, d: usize) -> Result<BaselineState> {
    let clip = IndexFunction::clip(cfg.beta);
    Ok(match cfg.kind {
        Baseline::Shaw => {
            let map = RelativeMap::build(&cfg.grid, Method::Product, &clip)?;
            let k = map.num_buckets();
            BaselineState::Shaw {
                key: EncodingTable::contextual(k, d, heads, cfg.shared)?,
                value: EncodingTable::contextual(k, d, heads, cfg.shared)?,
                map,
            }
        }
        Baseline::TransformerXL => {
            let map = RelativeMap::build(&cfg.grid, Method::Product, &clip)?;
            BaselineState::TransformerXL {
                sinusoid: sinusoid_table(map.num_buckets(), d),
                w_r: Tensor::zeros(&[d, d]),
                u: vec![0.0; d],
                v: vec![0.0; d],
                map,
            }
        }
        Baseline::Huang => {
            let map = RelativeMap::build(&cfg.grid, Method::Product, &clip)?;
            BaselineState::Huang {
                table: EncodingTable::contextual(map.num_buckets(), d, heads, cfg.shared)?,
                map,
            }
        }
        Baseline::Sasa => {
            if !d.is_multiple_of(2) {
                return Err(IrpeError::Config(format!(
                    "the SASA baseline splits each head in two; head dim {d} is odd"
                )));
            }
            let cross = match RelativeMap::build(&cfg.grid, Method::Cross, &clip)? {
                RelativeMap::Cross(c) => c,
                RelativeMap::Single(_) => unreachable!("cross method builds a cross map"),
            };
            let k = cross.num_buckets();
            let n = cross.n();
            let axis = |ids: &[u32]| -> Result<RelativeMap> {
                Ok(BucketIndexMap::from_raw(n, ids.to_vec(), k, Method::Cross)?.into())
            };
            BaselineState::Sasa {
                x_map: axis(cross.x_table_ids())?,
                y_map: axis(cross.y_table_ids())?,
                table: EncodingTable::contextual(k, d / 2, heads, cfg.shared)?,
            }
        }
    })
}

/// `R = S · W^R` as a shared contextual table.
fn xl_table(sinusoid: &Tensor, w_r: &Tensor, heads: usize) -> Result<EncodingTable> {
    let (k, d) = sinusoid.dims2()?;
    let mut t = EncodingTable::contextual(k, d, heads, true)?;
    matmul_slices(sinusoid.data(), w_r.data(), k, d, d, t.weights_mut());
    Ok(t)
}

fn add_row_vector(t: &Tensor, v: &[f64]) -> Tensor {
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(v.len()) {
        axpy(row, 1.0, v);
    }
    out
}

/// Relative error of one parameter class in [`gradient_check`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub name: &'static str,
    pub len: usize,
    pub rel_error: f64,
}

/// Compares analytic gradients of `L = Σ z ⊙ G` (random `G`) against
/// central differences for the input and every parameter class.
pub fn gradient_check(
    model: &mut MultiHeadAttention,
    x: &Tensor,
    step: f64,
    rng: &mut Rng,
) -> Result<Vec<GradCheckEntry>> {
    let (z, cache) = model.forward(x)?;
    let g = Tensor::randn(z.shape(), 1.0, rng);
    let analytic = model.backward(&cache, &g)?;
    let loss = |m: &MultiHeadAttention, x: &Tensor| -> Result<f64> {
        let (z, _) = m.forward(x)?;
        Ok(dot(z.data(), g.data()))
    };

    let mut probe = x.clone();
    let fx = finite_diff_with(x.len(), step, |i, delta| {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + delta;
        let v = loss(&*model, &probe);
        probe.data_mut()[i] = orig;
        v
    })?;
    let mut report = vec![GradCheckEntry {
        name: "x",
        len: x.len(),
        rel_error: relative_error(analytic.x.data(), &fx),
    }];

    let names: Vec<&'static str> = model.parameters().iter().map(|(n, _)| *n).collect();
    for (slot, name) in names.into_iter().enumerate() {
        let len = model.parameters()[slot].1.len();
        let numeric = finite_diff_with(len, step, |i, delta| {
            let orig = model.parameters()[slot].1[i];
            model.parameters_mut()[slot].1[i] = orig + delta;
            let v = loss(&*model, x);
            model.parameters_mut()[slot].1[i] = orig;
            v
        })?;
        let exact = analytic.get(name).ok_or_else(|| IrpeError::Numeric {
            context: "gradient_check".into(),
            detail: format!("no analytic gradient for {name}"),
        })?;
        report.push(GradCheckEntry {
            name,
            len,
            rel_error: relative_error(exact, &numeric),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Targets;
    use crate::index_fn::PiecewiseParams;
    use crate::numerics::matmul;

    fn grid(h: usize, w: usize, cls: bool) -> GridSpec {
        GridSpec::new(h, w, cls).unwrap()
    }

    fn rpe(grid: GridSpec, method: Method, mode: Mode, targets: Targets, shared: bool) -> RpeConfig {
        RpeConfig {
            method,
            mode,
            index_fn: IndexFunction::piecewise(PiecewiseParams::from_beta(2).unwrap()),
            targets,
            shared,
            grid,
        }
    }

    fn model(spec: &PositionEncodingSpec, n: usize, d_x: usize, d_z: usize, heads: usize, seed: u64) -> MultiHeadAttention {
        let w = MhsaWeights::random(d_x, d_z, heads, &mut Rng::seed(seed)).unwrap();
        MultiHeadAttention::new(w, n, spec).unwrap()
    }

    #[test]
    fn singleton_sequence_returns_values() {
        let mut rng = Rng::seed(1);
        let m = model(&PositionEncodingSpec::none(), 1, 4, 4, 2, 3);
        let x = Tensor::randn(&[1, 4], 1.0, &mut rng);
        let (z, _) = m.forward(&x).unwrap();
        let expect = matmul(&x, &m.weights().w_v).unwrap();
        assert!(z.max_abs_diff(&expect).unwrap() < 1e-14);
    }

    #[test]
    fn hand_computed_bias_rpe() {
        // 1×3 grid, clip β=1, product ids 3(Δx+1)+1: Δx=−1 → 1, 0 → 4, +1 → 7.
        let g = grid(1, 3, false);
        let cfg = RpeConfig {
            method: Method::Product,
            mode: Mode::Bias,
            index_fn: IndexFunction::clip(1),
            targets: Targets::K,
            shared: true,
            grid: g,
        };
        let eye = Tensor::eye(2);
        let w = MhsaWeights::new(eye.clone(), eye.clone(), eye, 1).unwrap();
        let mut m = MultiHeadAttention::new(w, 3, &PositionEncodingSpec::relative(cfg)).unwrap();
        {
            let mut params = m.parameters_mut();
            let table = &mut params[3].1;
            table[1] = 0.5;
            table[4] = 1.0;
            table[7] = -1.0;
        }
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (z, _) = m.forward(&x).unwrap();

        // Row i=0 (x=0): Δx to j=0,1,2 is 0, −1, −2 → ids 4, 1, 1.
        // q·k = [1, 0, 1]; b = [1.0, 0.5, 0.5]; e = (q·k + b)/√2.
        let s = 2f64.sqrt();
        let e = [2.0 / s, 0.5 / s, 1.5 / s];
        let w: Vec<f64> = e.iter().map(|v| v.exp()).collect();
        let tot: f64 = w.iter().sum();
        let z0 = [(w[0] + w[2]) / tot, (w[1] + w[2]) / tot];
        assert!((z.at(0, 0) - z0[0]).abs() < 1e-14);
        assert!((z.at(0, 1) - z0[1]).abs() < 1e-14);

        // Row i=2 (x=2): Δx = 2, 1, 0 → ids 7, 7, 4. q·k = [1, 1, 2]; b = [−1, −1, 1].
        let e = [0.0, 0.0, 3.0 / s];
        let w: Vec<f64> = e.iter().map(|v| v.exp()).collect();
        let tot: f64 = w.iter().sum();
        let z2 = [(w[0] + w[2]) / tot, (w[1] + w[2]) / tot];
        assert!((z.at(2, 0) - z2[0]).abs() < 1e-14);
        assert!((z.at(2, 1) - z2[1]).abs() < 1e-14);
    }

    #[test]
    fn sinusoid_position_zero_pattern() {
        let p = sinusoid_table(3, 6);
        assert_eq!(&p.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((p.at(1, 0) - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn absolute_pe_identities() {
        let mut rng = Rng::seed(4);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        assert_eq!(add_absolute_pe(&x, &Tensor::zeros(&[3, 4])).unwrap(), x);
        let cancel = add_absolute_pe(&x, &x.scale(-1.0)).unwrap();
        assert!(cancel.data().iter().all(|&v| v == 0.0));
        assert!(add_absolute_pe(&x, &Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn zero_tables_are_neutral() {
        let mut rng = Rng::seed(7);
        let g = grid(3, 3, true);
        let x = Tensor::randn(&[10, 8], 1.0, &mut rng);
        let plain = model(&PositionEncodingSpec::none(), 10, 8, 8, 2, 11);
        let (z0, _) = plain.forward(&x).unwrap();
        let mut specs = vec![];
        for method in Method::ALL {
            specs.push(PositionEncodingSpec::relative(rpe(g, method, Mode::Bias, Targets::QK, false)));
            specs.push(PositionEncodingSpec::relative(rpe(g, method, Mode::Contextual, Targets::QKV, true)));
        }
        for kind in Baseline::ALL {
            specs.push(PositionEncodingSpec::baseline(BaselineConfig { kind, beta: 2, shared: false, grid: g }));
        }
        for spec in specs {
            let (z, _) = model(&spec, 10, 8, 8, 2, 11).forward(&x).unwrap();
            assert_eq!(z, z0, "{spec:?}");
        }
    }

    #[test]
    fn attention_rows_normalised() {
        let mut rng = Rng::seed(8);
        let g = grid(3, 4, true);
        let mut m = model(
            &PositionEncodingSpec::relative(rpe(g, Method::Cross, Mode::Contextual, Targets::QKV, false)),
            13,
            6,
            6,
            3,
            2,
        );
        m.randomize_position_parameters(1.0, &mut rng);
        let (_, cache) = m.forward(&Tensor::randn(&[13, 6], 3.0, &mut rng)).unwrap();
        for row in cache.attention().data().chunks(13) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn huang_expansion_identity() {
        let mut rng = Rng::seed(5);
        let (n, d) = (6, 4);
        let q = Tensor::randn(&[n, d], 1.0, &mut rng);
        let k = Tensor::randn(&[n, d], 1.0, &mut rng);
        let p = Tensor::randn(&[n * n, d], 1.0, &mut rng);
        for i in 0..n {
            for j in 0..n {
                let pij = &p.data()[(i * n + j) * d..(i * n + j + 1) * d];
                let qi = &q.data()[i * d..(i + 1) * d];
                let kj = &k.data()[j * d..(j + 1) * d];
                let qp: Vec<f64> = qi.iter().zip(pij).map(|(a, b)| a + b).collect();
                let kp: Vec<f64> = kj.iter().zip(pij).map(|(a, b)| a + b).collect();
                let lhs = dot(&qp, &kp) - dot(pij, pij);
                let rhs = dot(qi, kj) + dot(qi, pij) + dot(pij, kj);
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sasa_hand_logits() {
        // 2×2 grid, clip β=1: per-axis ids g(Δ)+1, y ids offset by 3.
        let g = grid(2, 2, false);
        let spec = PositionEncodingSpec::baseline(BaselineConfig {
            kind: Baseline::Sasa,
            beta: 1,
            shared: true,
            grid: g,
        });
        let mut m = model(&spec, 4, 2, 2, 1, 1);
        {
            let mut params = m.parameters_mut();
            let t = &mut params[3].1;
            // rows 0..3 horizontal Δx = −1, 0, 1; rows 3..6 vertical.
            t.copy_from_slice(&[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        }
        let q = Tensor::from_vec(&[1, 4, 2], vec![1.0, 0.5, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let k = Tensor::zeros(&[1, 4, 2]);
        let b = m.position_logits(&q, &k).unwrap();
        // token 0 at (0,0), token 3 at (1,1): Δ = (−1, −1) → rows 0 and 3.
        assert_eq!(b.data()[3], 1.0 * 1.0 + 0.5 * 10.0);
        // token 3 to token 1 at (1,0): Δ = (0, 1) → rows 1 and 5.
        assert_eq!(b.data()[3 * 4 + 1], 1.0 * 2.0 + 1.0 * 30.0);
        // token 1 to token 2 at (0,1): Δ = (1, −1) → rows 2 and 3.
        assert_eq!(b.data()[4 + 2], 2.0 * 3.0);
    }

    #[test]
    fn sasa_rejects_odd_head_dim() {
        let spec = PositionEncodingSpec::baseline(BaselineConfig {
            kind: Baseline::Sasa,
            beta: 1,
            shared: true,
            grid: grid(2, 2, false),
        });
        let w = MhsaWeights::random(3, 3, 1, &mut Rng::seed(0)).unwrap();
        assert!(matches!(MultiHeadAttention::new(w, 4, &spec), Err(IrpeError::Config(_))));
    }

    #[test]
    fn xl_reduces_to_plain_when_zero() {
        let mut rng = Rng::seed(3);
        let g = grid(2, 3, true);
        let spec = PositionEncodingSpec::baseline(BaselineConfig {
            kind: Baseline::TransformerXL,
            beta: 2,
            shared: true,
            grid: g,
        });
        let m = model(&spec, 7, 4, 4, 2, 6);
        let q = Tensor::randn(&[2, 7, 2], 1.0, &mut rng);
        let b = m.position_logits(&q, &q).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = Rng::seed(2);
        let mut m = model(&PositionEncodingSpec::none(), 3, 2, 2, 1, 0);
        let x = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let (z, cache) = m.forward(&x).unwrap();
        m.parameters_mut()[0].1[0] += 1.0;
        assert!(matches!(m.backward(&cache, &z), Err(IrpeError::StaleCache)));
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = Rng::seed(2);
        let g = grid(2, 2, true);
        let mut m = model(
            &PositionEncodingSpec::relative(rpe(g, Method::Product, Mode::Contextual, Targets::QKV, false)),
            5,
            4,
            4,
            2,
            0,
        );
        m.randomize_position_parameters(0.5, &mut rng);
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let (z, cache) = m.forward(&x).unwrap();
        let grads = m.backward(&cache, &Tensor::zeros(z.shape())).unwrap();
        assert!(grads.x.data().iter().all(|&v| v == 0.0));
        assert!(grads.params.iter().all(|(_, g)| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn nan_input_is_numeric_error() {
        let m = model(&PositionEncodingSpec::none(), 2, 2, 2, 1, 0);
        let x = Tensor::from_vec(&[2, 2], vec![f64::NAN, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(m.forward(&x), Err(IrpeError::Numeric { .. })));
    }

    #[test]
    fn grid_size_must_match_sequence() {
        let spec = PositionEncodingSpec::relative(rpe(grid(3, 3, true), Method::Product, Mode::Bias, Targets::K, true));
        let w = MhsaWeights::random(4, 4, 1, &mut Rng::seed(0)).unwrap();
        assert!(MultiHeadAttention::new(w, 9, &spec).is_err());
    }

    #[test]
    fn relative_and_baseline_exclusive() {
        let g = grid(2, 2, false);
        let spec = PositionEncodingSpec {
            absolute: AbsoluteKind::None,
            relative: Some(rpe(g, Method::Product, Mode::Bias, Targets::K, true)),
            baseline: Some(BaselineConfig { kind: Baseline::Shaw, beta: 1, shared: true, grid: g }),
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::seed(31);
        let g = grid(2, 3, true);
        let mut specs = vec![
            PositionEncodingSpec { absolute: AbsoluteKind::Learnable, ..Default::default() },
            PositionEncodingSpec::relative(rpe(g, Method::Product, Mode::Bias, Targets::K, false)),
            PositionEncodingSpec::relative(rpe(g, Method::Cross, Mode::Contextual, Targets::QKV, false)),
            PositionEncodingSpec::relative(rpe(g, Method::Euclidean, Mode::Contextual, Targets::QK, true)),
        ];
        for kind in Baseline::ALL {
            specs.push(PositionEncodingSpec::baseline(BaselineConfig { kind, beta: 1, shared: false, grid: g }));
        }
        for spec in specs {
            let mut m = model(&spec, 7, 4, 4, 2, 17);
            m.randomize_position_parameters(0.3, &mut rng);
            let x = Tensor::randn(&[7, 4], 1.0, &mut rng);
            for entry in gradient_check(&mut m, &x, 1e-5, &mut rng).unwrap() {
                assert!(entry.rel_error < 1e-6, "{spec:?}: {entry:?}");
            }
        }
    }

    #[test]
    fn naive_and_efficient_forward_agree() {
        let mut rng = Rng::seed(41);
        let g = grid(4, 4, true);
        let mut m = model(
            &PositionEncodingSpec::relative(rpe(g, Method::Product, Mode::Contextual, Targets::QKV, false)),
            17,
            8,
            8,
            2,
            5,
        );
        m.randomize_position_parameters(1.0, &mut rng);
        let x = Tensor::randn(&[17, 8], 1.0, &mut rng);
        let (a, _) = m.forward(&x).unwrap();
        m.set_contextual_path(ContextualPath::Naive);
        let (b, _) = m.forward(&x).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}
