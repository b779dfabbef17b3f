//! Learnable relative-position tables and the logits they produce.
//!
//! Bias mode adds a gathered scalar `r_{I(i,j)}` to each logit. Contextual
//! mode adds `⟨proj, r_{I(i,j)}⟩`; the efficient path computes the `n × k`
//! products `z[i][t] = ⟨proj_i, p_t⟩` once and gathers `z[i][I(i,j)]`, so
//! its MAC count is `n·k·d` per head instead of `n²·d`.
//!
//! Value-side RPE accumulates attention mass per bucket into an `n × k`
//! matrix and multiplies it by the `k × d` table.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bucket_map::{GridSpec, Method, RelativeMap};
use crate::error::{IrpeError, Result};
use crate::index_fn::IndexFunction;
use crate::numerics::{
    axpy, dot, exec, matmul_nt_slices, matmul_slices, matmul_tn_slices, record_macs, Rng, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bias,
    Contextual,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Bias => "bias",
            Mode::Contextual => "contextual",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = IrpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bias" => Ok(Mode::Bias),
            "contextual" => Ok(Mode::Contextual),
            _ => Err(IrpeError::Parse(format!("unknown mode '{s}'"))),
        }
    }
}

/// Which projections carry relative position encodings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Targets {
    pub q: bool,
    pub k: bool,
    pub v: bool,
}

impl Targets {
    pub const K: Targets = Targets { q: false, k: true, v: false };
    pub const QK: Targets = Targets { q: true, k: true, v: false };
    pub const QKV: Targets = Targets { q: true, k: true, v: true };

    pub fn is_empty(&self) -> bool {
        !(self.q || self.k || self.v)
    }

    pub fn count(&self) -> usize {
        usize::from(self.q) + usize::from(self.k) + usize::from(self.v)
    }

    /// All non-empty subsets in a fixed order.
    pub fn all_subsets() -> Vec<Targets> {
        (1..8u8)
            .map(|bits| Targets {
                q: bits & 1 != 0,
                k: bits & 2 != 0,
                v: bits & 4 != 0,
            })
            .collect()
    }
}

impl fmt::Display for Targets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (on, c) in [(self.q, 'q'), (self.k, 'k'), (self.v, 'v')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Targets {
    type Err = IrpeError;

    fn from_str(s: &str) -> Result<Self> {
        let mut t = Targets::default();
        for c in s.chars() {
            let slot = match c.to_ascii_lowercase() {
                'q' => &mut t.q,
                'k' => &mut t.k,
                'v' => &mut t.v,
                _ => return Err(IrpeError::Parse(format!("invalid target '{c}' in '{s}'"))),
            };
            if *slot {
                return Err(IrpeError::Parse(format!("duplicate target '{c}' in '{s}'")));
            }
            *slot = true;
        }
        Ok(t)
    }
}

impl Serialize for Targets {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Targets {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Full relative-encoding configuration of one attention block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RpeConfig {
    pub method: Method,
    pub mode: Mode,
    pub index_fn: IndexFunction,
    pub targets: Targets,
    pub shared: bool,
    pub grid: GridSpec,
}

impl RpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(IrpeError::Config("targets must not be empty".into()));
        }
        if self.mode == Mode::Bias && self.targets.v {
            return Err(IrpeError::Config(
                "bias mode produces a logit scalar and cannot target values".into(),
            ));
        }
        Ok(())
    }

    pub fn build_map(&self) -> Result<RelativeMap> {
        self.validate()?;
        RelativeMap::build(&self.grid, self.method, &self.index_fn)
    }
}

/// Learnable bucket parameters: `k` scalars (bias) or `k × d` vectors
/// (contextual) per head group. One group when shared, else one per head.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingTable {
    mode: Mode,
    num_buckets: usize,
    head_dim: usize,
    heads: usize,
    shared: bool,
    weights: Vec<f64>,
}

impl EncodingTable {
    /// Zero-initialised bias table.
    pub fn bias(num_buckets: usize, heads: usize, shared: bool) -> Result<Self> {
        EncodingTable::zeros(Mode::Bias, num_buckets, 1, heads, shared)
    }

    /// Zero-initialised contextual table.
    pub fn contextual(num_buckets: usize, head_dim: usize, heads: usize, shared: bool) -> Result<Self> {
        EncodingTable::zeros(Mode::Contextual, num_buckets, head_dim, heads, shared)
    }

    fn zeros(mode: Mode, num_buckets: usize, head_dim: usize, heads: usize, shared: bool) -> Result<Self> {
        if num_buckets == 0 || head_dim == 0 || heads == 0 {
            return Err(IrpeError::Config(format!(
                "table dims must be positive (buckets={num_buckets}, dim={head_dim}, heads={heads})"
            )));
        }
        let groups = if shared { 1 } else { heads };
        Ok(EncodingTable {
            mode,
            num_buckets,
            head_dim,
            heads,
            shared,
            weights: vec![0.0; groups * num_buckets * head_dim],
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    /// Vector length per bucket; 1 in bias mode.
    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    pub fn groups(&self) -> usize {
        if self.shared {
            1
        } else {
            self.heads
        }
    }

    pub fn group_of(&self, head: usize) -> usize {
        if self.shared {
            0
        } else {
            head
        }
    }

    /// `k × d` block of one head group.
    pub fn group(&self, g: usize) -> &[f64] {
        let len = self.num_buckets * self.head_dim;
        &self.weights[g * len..(g + 1) * len]
    }

    pub fn row(&self, g: usize, bucket: usize) -> &[f64] {
        let d = self.head_dim;
        &self.group(g)[bucket * d..(bucket + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn randomize(&mut self, scale: f64, rng: &mut Rng) {
        for w in &mut self.weights {
            *w = scale * rng.normal();
        }
    }

    fn expect_mode(&self, expected: Mode) -> Result<()> {
        if self.mode != expected {
            return Err(IrpeError::Mode {
                expected: expected.name(),
                got: self.mode.name(),
            });
        }
        Ok(())
    }

    /// Writes one CSV row per `(head_group, bucket)`:
    /// `bucket_id,head_group,value_0,...,value_{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["bucket_id".to_string(), "head_group".to_string()];
        header.extend((0..self.head_dim).map(|c| format!("value_{c}")));
        w.write_record(&header)?;
        for g in 0..self.groups() {
            for t in 0..self.num_buckets {
                let mut rec = vec![t.to_string(), g.to_string()];
                rec.extend(self.row(g, t).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads values written by [`write_csv`](Self::write_csv) into a table
    /// of the same shape. Every `(bucket, group)` pair must appear exactly once.
    pub fn load_csv<R: Read>(&mut self, input: R) -> Result<()> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.len() != 2 + self.head_dim {
            return Err(IrpeError::Parse(format!(
                "expected {} columns, got {}",
                2 + self.head_dim,
                r.headers()?.len()
            )));
        }
        let mut seen = vec![false; self.groups() * self.num_buckets];
        let d = self.head_dim;
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            let parse_idx = |s: &str| s.trim().parse::<usize>().map_err(|e| IrpeError::Parse(format!("{s}: {e}")));
            let (t, g) = (parse_idx(field(0))?, parse_idx(field(1))?);
            if t >= self.num_buckets || g >= self.groups() {
                return Err(IrpeError::Parse(format!("row (bucket {t}, group {g}) out of range")));
            }
            let slot = g * self.num_buckets + t;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(IrpeError::Parse(format!("duplicate row (bucket {t}, group {g})")));
            }
            for c in 0..d {
                let s = field(2 + c);
                self.weights[slot * d + c] =
                    s.trim().parse::<f64>().map_err(|e| IrpeError::Parse(format!("{s}: {e}")))?;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(IrpeError::Parse("table CSV is missing rows".into()));
        }
        Ok(())
    }

    /// Flat little-endian binary image: 4-byte magic `IRPT`, version byte,
    /// mode byte, shared byte, a reserved byte, then `heads`, `num_buckets`,
    /// `head_dim` as `u32` and the weights as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.weights.len());
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&[1, (self.mode == Mode::Contextual) as u8, self.shared as u8, 0]);
        for v in [self.heads, self.num_buckets, self.head_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| IrpeError::Parse(format!("table binary: {m}"));
        if bytes.len() < 20 || &bytes[..4] != TABLE_MAGIC {
            return Err(bad("missing header"));
        }
        if bytes[4] != 1 {
            return Err(bad("unsupported version"));
        }
        let mode = match bytes[5] {
            0 => Mode::Bias,
            1 => Mode::Contextual,
            _ => return Err(bad("invalid mode byte")),
        };
        let shared = bytes[6] != 0;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (heads, k, d) = (u32_at(8), u32_at(12), u32_at(16));
        let mut table = EncodingTable::zeros(mode, k, d, heads, shared)?;
        let body = &bytes[20..];
        if body.len() != 8 * table.weights.len() {
            return Err(bad("payload length does not match header"));
        }
        for (w, chunk) in table.weights.iter_mut().zip(body.chunks_exact(8)) {
            *w = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(table)
    }
}

const TABLE_MAGIC: &[u8; 4] = b"IRPT";

/// Which projection a contextual term dots with the bucket vector.
///
/// `Query`: `b_ij = ⟨q_i, r_ij⟩` (encoding on keys).
/// `Key`: `b_ij = ⟨k_j, r_ij⟩` (encoding on queries).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionSide {
    Query,
    Key,
}

fn check_table_covers(table: &EncodingTable, map: &RelativeMap) -> Result<()> {
    for comp in map.components() {
        if let Some(&id) = comp.iter().find(|&&id| id as usize >= table.num_buckets) {
            return Err(IrpeError::Corruption {
                id,
                num_buckets: table.num_buckets,
            });
        }
    }
    Ok(())
}

fn check_heads(op: &'static str, table: &EncodingTable, heads: usize) -> Result<()> {
    if table.heads != heads {
        return Err(IrpeError::shape(
            op,
            format!("table built for {} heads, input has {heads}", table.heads),
        ));
    }
    Ok(())
}

fn check_proj(op: &'static str, proj: &Tensor, table: &EncodingTable, map: &RelativeMap) -> Result<(usize, usize, usize)> {
    let (h, n, d) = proj.dims3()?;
    if n != map.n() {
        return Err(IrpeError::shape(op, format!("projection has {n} tokens, map has {}", map.n())));
    }
    if d != table.head_dim {
        return Err(IrpeError::shape(op, format!("projection dim {d} vs table dim {}", table.head_dim)));
    }
    check_heads(op, table, h)?;
    Ok((h, n, d))
}

/// `b[h][i][j] = Σ_c r[group(h)][c(i,j)]`.
pub fn bias_logits(table: &EncodingTable, map: &RelativeMap) -> Result<Tensor> {
    table.expect_mode(Mode::Bias)?;
    check_table_covers(table, map)?;
    let (h, n) = (table.heads, map.n());
    let comps = map.components();
    let mut out = Tensor::zeros(&[h, n, n]);
    exec::for_each_row(out.data_mut(), n, |r, row| {
        let (head, i) = (r / n, r % n);
        let w = table.group(table.group_of(head));
        for c in &comps {
            for (o, &id) in row.iter_mut().zip(&c[i * n..(i + 1) * n]) {
                *o += w[id as usize];
            }
        }
    });
    Ok(out)
}

/// Pairwise contextual logits: forms `r_ij` for every pair and dots it with
/// the projection. `O(n²·d)` per head.
pub fn contextual_logits_naive(
    proj: &Tensor,
    table: &EncodingTable,
    map: &RelativeMap,
    side: ProjectionSide,
) -> Result<Tensor> {
    table.expect_mode(Mode::Contextual)?;
    let (h, n, d) = check_proj("contextual_logits_naive", proj, table, map)?;
    check_table_covers(table, map)?;
    let comps = map.components();
    record_macs((h * n * n * d) as u64);
    let mut out = Tensor::zeros(&[h, n, n]);
    exec::for_each_row(out.data_mut(), n, |r, row| {
        let (head, i) = (r / n, r % n);
        let g = table.group_of(head);
        let p = proj.slab(head);
        let mut r_ij = vec![0.0; d];
        for (j, o) in row.iter_mut().enumerate() {
            r_ij.fill(0.0);
            for c in &comps {
                for (acc, v) in r_ij.iter_mut().zip(table.row(g, c[i * n + j] as usize)) {
                    *acc += v;
                }
            }
            let pivot = match side {
                ProjectionSide::Query => i,
                ProjectionSide::Key => j,
            };
            *o = dot(&p[pivot * d..(pivot + 1) * d], &r_ij);
        }
    });
    Ok(out)
}

/// Gather-based contextual logits: `z = proj · Pᵀ` (`n × k`), then
/// `b_ij = Σ_c z[pivot][c(i,j)]`. `O(n·k·d)` MACs per head plus an `O(n²)`
/// gather.
pub fn contextual_logits_efficient(
    proj: &Tensor,
    table: &EncodingTable,
    map: &RelativeMap,
    side: ProjectionSide,
) -> Result<Tensor> {
    table.expect_mode(Mode::Contextual)?;
    let (h, n, d) = check_proj("contextual_logits_efficient", proj, table, map)?;
    check_table_covers(table, map)?;
    let k = table.num_buckets;
    let z = bucket_products(proj, table, h, n, d);
    let comps = map.components();
    let mut out = Tensor::zeros(&[h, n, n]);
    exec::for_each_row(out.data_mut(), n, |r, row| {
        let (head, i) = (r / n, r % n);
        let zh = &z[head * n * k..(head + 1) * n * k];
        for c in &comps {
            let ids = &c[i * n..(i + 1) * n];
            match side {
                ProjectionSide::Query => {
                    let zi = &zh[i * k..(i + 1) * k];
                    for (o, &id) in row.iter_mut().zip(ids) {
                        *o += zi[id as usize];
                    }
                }
                ProjectionSide::Key => {
                    for (j, (o, &id)) in row.iter_mut().zip(ids).enumerate() {
                        *o += zh[j * k + id as usize];
                    }
                }
            }
        }
    });
    Ok(out)
}

/// `z[h] = proj[h] · P_{group(h)}ᵀ`, flat `h × n × k`.
fn bucket_products(proj: &Tensor, table: &EncodingTable, h: usize, n: usize, d: usize) -> Vec<f64> {
    let k = table.num_buckets;
    let mut z = vec![0.0; h * n * k];
    for head in 0..h {
        matmul_nt_slices(
            proj.slab(head),
            table.group(table.group_of(head)),
            n,
            d,
            k,
            &mut z[head * n * k..(head + 1) * n * k],
        );
    }
    z
}

/// Per-bucket attention mass: `m[h][i][t] = Σ_{c, j: c(i,j) = t} attn[h][i][j]`.
fn bucket_mass(attn: &Tensor, map: &RelativeMap, h: usize, k: usize) -> Vec<f64> {
    let n = map.n();
    let comps = map.components();
    let mut mass = vec![0.0; h * n * k];
    exec::for_each_row(&mut mass, k, |r, row| {
        let (head, i) = (r / n, r % n);
        let a = &attn.slab(head)[i * n..(i + 1) * n];
        for c in &comps {
            for (&w, &id) in a.iter().zip(&c[i * n..(i + 1) * n]) {
                row[id as usize] += w;
            }
        }
    });
    mass
}

/// `out[h][i] = Σ_j attn[h][i][j] · r_{I(i,j)}`, computed as the per-bucket
/// attention mass (`n × k`) times the table (`k × d`).
pub fn contextual_value_aggregate(attn: &Tensor, table: &EncodingTable, map: &RelativeMap) -> Result<Tensor> {
    table.expect_mode(Mode::Contextual)?;
    let (h, n, n2) = attn.dims3()?;
    if n != map.n() || n2 != n {
        return Err(IrpeError::shape(
            "contextual_value_aggregate",
            format!("attention {h}x{n}x{n2} vs map with {} tokens", map.n()),
        ));
    }
    check_heads("contextual_value_aggregate", table, h)?;
    check_table_covers(table, map)?;
    let (k, d) = (table.num_buckets, table.head_dim);
    let mass = bucket_mass(attn, map, h, k);
    let mut out = Tensor::zeros(&[h, n, d]);
    for head in 0..h {
        matmul_slices(
            &mass[head * n * k..(head + 1) * n * k],
            table.group(table.group_of(head)),
            n,
            k,
            d,
            out.slab_mut(head),
        );
    }
    Ok(out)
}

/// Gradient of a loss w.r.t. a bias table, given `∂L/∂b` (`h × n × n`).
/// Scatter-adds every pair's upstream gradient into its bucket slot(s).
pub fn bias_table_grad(upstream: &Tensor, table: &EncodingTable, map: &RelativeMap) -> Result<Vec<f64>> {
    table.expect_mode(Mode::Bias)?;
    let (h, n, _) = upstream.dims3()?;
    check_heads("bias_table_grad", table, h)?;
    check_table_covers(table, map)?;
    let k = table.num_buckets;
    let mut grad = vec![0.0; table.weights.len()];
    for head in 0..h {
        let gslot = &mut grad[table.group_of(head) * k..(table.group_of(head) + 1) * k];
        let up = upstream.slab(head);
        for c in map.components() {
            for (&u, &id) in up.iter().zip(c.iter()).take(n * n) {
                gslot[id as usize] += u;
            }
        }
    }
    Ok(grad)
}

/// Backward of [`contextual_logits_efficient`]: returns `∂L/∂proj`
/// (`h × n × d`) and `∂L/∂table` (table layout).
///
/// For the query side, `∂L/∂p_t = Σ_{(i,j): I(i,j)=t} up[i][j] · proj_i`.
pub fn contextual_logits_backward(
    upstream: &Tensor,
    proj: &Tensor,
    table: &EncodingTable,
    map: &RelativeMap,
    side: ProjectionSide,
) -> Result<(Tensor, Vec<f64>)> {
    table.expect_mode(Mode::Contextual)?;
    let (h, n, d) = check_proj("contextual_logits_backward", proj, table, map)?;
    if upstream.shape() != [h, n, n] {
        return Err(IrpeError::shape(
            "contextual_logits_backward",
            format!("upstream {:?} vs expected [{h}, {n}, {n}]", upstream.shape()),
        ));
    }
    check_table_covers(table, map)?;
    let k = table.num_buckets;
    let comps = map.components();
    let mut grad_proj = Tensor::zeros(&[h, n, d]);
    let mut grad_table = vec![0.0; table.weights.len()];
    let mut gz = vec![0.0; n * k];
    let mut gt = vec![0.0; k * d];
    for head in 0..h {
        gz.fill(0.0);
        let up = upstream.slab(head);
        for c in &comps {
            for i in 0..n {
                for j in 0..n {
                    let id = c[i * n + j] as usize;
                    let pivot = match side {
                        ProjectionSide::Query => i,
                        ProjectionSide::Key => j,
                    };
                    gz[pivot * k + id] += up[i * n + j];
                }
            }
        }
        let g = table.group_of(head);
        matmul_slices(&gz, table.group(g), n, k, d, grad_proj.slab_mut(head));
        matmul_tn_slices(&gz, proj.slab(head), k, n, d, &mut gt);
        axpy(&mut grad_table[g * k * d..(g + 1) * k * d], 1.0, &gt);
    }
    Ok((grad_proj, grad_table))
}

/// Backward of [`contextual_value_aggregate`]: returns `∂L/∂attn`
/// (`h × n × n`) and `∂L/∂table`.
pub fn value_aggregate_backward(
    upstream: &Tensor,
    attn: &Tensor,
    table: &EncodingTable,
    map: &RelativeMap,
) -> Result<(Tensor, Vec<f64>)> {
    table.expect_mode(Mode::Contextual)?;
    let (h, n, _) = attn.dims3()?;
    let (k, d) = (table.num_buckets, table.head_dim);
    if upstream.shape() != [h, n, d] {
        return Err(IrpeError::shape(
            "value_aggregate_backward",
            format!("upstream {:?} vs expected [{h}, {n}, {d}]", upstream.shape()),
        ));
    }
    check_heads("value_aggregate_backward", table, h)?;
    check_table_covers(table, map)?;
    let mass = bucket_mass(attn, map, h, k);
    let comps = map.components();
    let mut grad_attn = Tensor::zeros(&[h, n, n]);
    let mut grad_table = vec![0.0; table.weights.len()];
    let mut dm = vec![0.0; n * k];
    let mut gt = vec![0.0; k * d];
    for head in 0..h {
        let g = table.group_of(head);
        matmul_nt_slices(upstream.slab(head), table.group(g), n, d, k, &mut dm);
        let ga = grad_attn.slab_mut(head);
        for c in &comps {
            for (idx, &id) in c.iter().enumerate() {
                ga[idx] += dm[(idx / n) * k + id as usize];
            }
        }
        matmul_tn_slices(&mass[head * n * k..(head + 1) * n * k], upstream.slab(head), k, n, d, &mut gt);
        axpy(&mut grad_table[g * k * d..(g + 1) * k * d], 1.0, &gt);
    }
    Ok((grad_attn, grad_table))
}
