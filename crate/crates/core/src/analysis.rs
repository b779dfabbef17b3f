//! MAC accounting, naive-vs-efficient timing, and visualization exports.
//!
//! MAC convention: one multiply-accumulate is one MAC. Softmax, additions
//! and gathers cost nothing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::attention::ContextualPath;
use crate::bucket_map::{BucketIndexMap, GridSpec, Method, RelativeMap};
use crate::encoding::{
    contextual_logits_efficient, contextual_logits_naive, EncodingTable, Mode, ProjectionSide,
    Targets,
};
use crate::error::{IrpeError, Result};
use crate::numerics::{exec, Rng, Tensor};

/// Dimensions of a plain ViT encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ModelShape {
    pub layers: usize,
    pub heads: usize,
    /// Sequence length including any class token.
    pub tokens: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    /// Flattened patch size (`channels · patch²`).
    pub patch_dim: usize,
    /// Image patches fed through the embedding (excludes the class token).
    pub patches: usize,
    pub classes: usize,
}

impl ModelShape {
    /// DeiT-S at 224²: 12 layers, 6 heads of 64, 196 patches + class token.
    pub fn deit_small() -> Self {
        ModelShape {
            layers: 12,
            heads: 6,
            tokens: 197,
            head_dim: 64,
            mlp_hidden: 1536,
            patch_dim: 3 * 16 * 16,
            patches: 196,
            classes: 1000,
        }
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// What `base_macs` covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum MacScope {
    /// Patch embedding, every encoder layer (attention, output projection,
    /// MLP) and the classifier.
    #[default]
    FullModel,
    /// QKV projections, `q·kᵀ` and `attn·v` only: exactly what
    /// [`MultiHeadAttention::forward`](crate::attention::MultiHeadAttention::forward)
    /// records.
    AttentionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MacConfig {
    pub shape: ModelShape,
    pub num_buckets: usize,
    pub mode: Mode,
    pub targets: Targets,
    pub scope: MacScope,
    #[serde(skip)]
    pub path: ContextualPath,
}

impl MacConfig {
    pub fn new(shape: ModelShape, num_buckets: usize, mode: Mode, targets: Targets) -> Self {
        MacConfig {
            shape,
            num_buckets,
            mode,
            targets,
            scope: MacScope::FullModel,
            path: ContextualPath::Efficient,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MacCount {
    pub base_macs: u64,
    pub rpe_macs: u64,
    pub total: u64,
    pub summary: String,
}

impl MacCount {
    /// `rpe_macs / base_macs`.
    pub fn overhead(&self) -> f64 {
        self.rpe_macs as f64 / self.base_macs as f64
    }
}

/// Closed-form MAC count.
///
/// Query/key targets cost `heads·n·k·d` per layer on the efficient path and
/// `heads·n²·d` on the naive path. The value target always uses the
/// attention-mass aggregate, `heads·n·k·d`. Shared and unshared tables cost
/// the same since every head still dots its own projections. Bias mode is
/// free.
pub fn count_macs(cfg: &MacConfig) -> MacCount {
    let s = &cfg.shape;
    let (l, h, n, d, dm) = (
        s.layers as u64,
        s.heads as u64,
        s.tokens as u64,
        s.head_dim as u64,
        s.d_model() as u64,
    );
    let k = cfg.num_buckets as u64;
    let attention = 3 * n * dm * dm + 2 * h * n * n * d;
    let base = match cfg.scope {
        MacScope::AttentionOnly => l * attention,
        MacScope::FullModel => {
            let layer = attention + n * dm * dm + 2 * n * dm * s.mlp_hidden as u64;
            s.patches as u64 * s.patch_dim as u64 * dm + l * layer + dm * s.classes as u64
        }
    };
    let rpe = match cfg.mode {
        Mode::Bias => 0,
        Mode::Contextual => {
            let logit_term = match cfg.path {
                ContextualPath::Efficient => h * n * k * d,
                ContextualPath::Naive => h * n * n * d,
            };
            let qk = (cfg.targets.q as u64 + cfg.targets.k as u64) * logit_term;
            let v = cfg.targets.v as u64 * h * n * k * d;
            l * (qk + v)
        }
    };
    MacCount {
        base_macs: base,
        rpe_macs: rpe,
        total: base + rpe,
        summary: format!(
            "{} layers, {h} heads, n={n}, d={d}, k={k}, {} {}",
            l, cfg.mode, cfg.targets
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub num_buckets: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub h: usize,
    pub naive_ns: u64,
    pub efficient_ns: u64,
    pub speedup: f64,
    pub parallel: bool,
    /// Sum of the efficient output; identical across runs with one seed.
    pub checksum: f64,
}

/// Random `n × n` ids in `[0, k)`, with every id present when `n² ≥ k`.
pub fn synthetic_map(n: usize, k: usize, rng: &mut Rng) -> Result<RelativeMap> {
    if k == 0 {
        return Err(IrpeError::Config("synthetic map needs at least one bucket".into()));
    }
    let mut ids: Vec<u32> = (0..n * n).map(|_| rng.below(k) as u32).collect();
    for (slot, id) in ids.iter_mut().zip(0..k as u32) {
        *slot = id;
    }
    Ok(BucketIndexMap::from_raw(n, ids, k, Method::Product)?.into())
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// Times the naive and efficient contextual kernels on seeded random inputs.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchReport>> {
    if cfg.repeats < 3 {
        return Err(IrpeError::Benchmark(format!(
            "need at least 3 repeats, got {}",
            cfg.repeats
        )));
    }
    let mut reports = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let mut rng = Rng::seed(cfg.seed ^ n as u64);
        let map = synthetic_map(n, cfg.num_buckets, &mut rng)?;
        let mut table = EncodingTable::contextual(cfg.num_buckets, cfg.head_dim, cfg.heads, true)?;
        table.randomize(1.0, &mut rng);
        let q = Tensor::randn(&[cfg.heads, n, cfg.head_dim], 1.0, &mut rng);

        let time = |naive: bool| -> Result<(u64, f64)> {
            let mut samples = Vec::with_capacity(cfg.repeats);
            let mut checksum = 0.0;
            for _ in 0..cfg.repeats {
                let start = Instant::now();
                let out = if naive {
                    contextual_logits_naive(&q, &table, &map, ProjectionSide::Query)?
                } else {
                    contextual_logits_efficient(&q, &table, &map, ProjectionSide::Query)?
                };
                samples.push(start.elapsed().as_nanos() as u64);
                checksum = out.sum();
            }
            Ok((median(samples), checksum))
        };
        let (naive_ns, _) = time(true)?;
        let (efficient_ns, checksum) = time(false)?;
        if naive_ns == 0 || efficient_ns == 0 {
            return Err(IrpeError::Benchmark(format!(
                "timer resolution too coarse at n={n} (median of 0 ns)"
            )));
        }
        reports.push(BenchReport {
            n,
            k: cfg.num_buckets,
            d: cfg.head_dim,
            h: cfg.heads,
            naive_ns,
            efficient_ns,
            speedup: naive_ns as f64 / efficient_ns as f64,
            parallel: exec::parallel_enabled(),
            checksum,
        });
    }
    Ok(reports)
}

pub fn write_bench_csv(reports: &[BenchReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Pixel edge of one grid cell in PPM exports.
pub const PPM_CELL: usize = 8;

/// Bucket colors; id `t` uses entry `t mod 48`. White marks the reference.
pub const PALETTE: [[u8; 3]; 48] = [
    [217, 33, 33], [87, 125, 217], [131, 217, 11], [153, 23, 137], [61, 153, 138], [153, 86, 8],
    [65, 27, 178], [76, 178, 71], [178, 9, 66], [33, 148, 217], [206, 217, 87], [174, 11, 217],
    [23, 153, 88], [153, 80, 61], [8, 20, 153], [84, 178, 27], [178, 71, 143], [9, 172, 178],
    [217, 170, 33], [146, 87, 217], [11, 217, 45], [153, 23, 40], [61, 100, 153], [111, 153, 8],
    [178, 27, 178], [71, 178, 147], [178, 79, 9], [55, 33, 217], [109, 217, 87], [217, 11, 106],
    [23, 121, 153], [153, 149, 61], [104, 8, 153], [27, 178, 83], [178, 80, 71], [9, 45, 178],
    [125, 217, 33], [217, 87, 190], [11, 217, 199], [153, 104, 23], [91, 61, 153], [8, 153, 13],
    [178, 27, 66], [71, 130, 178], [151, 178, 9], [193, 33, 217], [87, 217, 162], [217, 70, 11],
];

const REFERENCE_COLOR: [u8; 3] = [255, 255, 255];

/// One id plane of a map as seen from `reference`: `grid.height × grid.width`
/// ids in row-major order, plus the class-token id if present.
fn reference_plane(ids: &[u32], n: usize, grid: &GridSpec, reference: usize) -> (Vec<u32>, Option<u32>) {
    let row = &ids[reference * n..(reference + 1) * n];
    let mut cells = Vec::with_capacity(grid.cells());
    for y in 0..grid.height {
        for x in 0..grid.width {
            cells.push(row[grid.token_at(x, y)]);
        }
    }
    (cells, grid.has_cls_token.then(|| row[0]))
}

fn planes(map: &RelativeMap) -> Vec<(&'static str, &[u32])> {
    match map {
        RelativeMap::Single(m) => vec![("", m.indices())],
        RelativeMap::Cross(c) => vec![("_horizontal", c.x_table_ids()), ("_vertical", c.y_table_ids())],
    }
}

fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("buckets");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn check_reference(map: &RelativeMap, grid: &GridSpec, reference: usize) -> Result<()> {
    if map.n() != grid.n() {
        return Err(IrpeError::shape(
            "export_bucket_map",
            format!("map has {} tokens, grid {grid} has {}", map.n(), grid.n()),
        ));
    }
    if reference >= map.n() {
        return Err(IrpeError::Config(format!(
            "reference {reference} out of range for {} tokens",
            map.n()
        )));
    }
    Ok(())
}

/// Writes `x,y,bucket_id` rows for every grid cell relative to `reference`
/// (a token index), followed by `-1,-1,<id>` for the class token when the
/// grid has one. Ids are table row ids. Cross maps produce
/// `<stem>_horizontal.csv` and `<stem>_vertical.csv`; other maps write
/// `path` itself. Returns the written paths.
pub fn export_bucket_map(map: &RelativeMap, grid: &GridSpec, reference: usize, path: &Path) -> Result<Vec<PathBuf>> {
    check_reference(map, grid, reference)?;
    let mut written = Vec::new();
    for (suffix, ids) in planes(map) {
        let target = if suffix.is_empty() { path.to_path_buf() } else { sibling(path, suffix, "csv") };
        let (cells, cls) = reference_plane(ids, map.n(), grid, reference);
        let mut w = csv::Writer::from_path(&target)?;
        w.write_record(["x", "y", "bucket_id"])?;
        for (c, id) in cells.iter().enumerate() {
            w.write_record([(c % grid.width).to_string(), (c / grid.width).to_string(), id.to_string()])?;
        }
        if let Some(id) = cls {
            w.write_record(["-1".to_string(), "-1".to_string(), id.to_string()])?;
        }
        w.flush()?;
        written.push(target);
    }
    Ok(written)
}

/// Binary PPM (P6) of the bucket map seen from `reference`: one
/// [`PPM_CELL`]-pixel square per grid cell, colored from [`PALETTE`], with
/// the reference cell white. Cross maps produce two images like
/// [`export_bucket_map`].
pub fn export_bucket_map_ppm(map: &RelativeMap, grid: &GridSpec, reference: usize, path: &Path) -> Result<Vec<PathBuf>> {
    check_reference(map, grid, reference)?;
    let marked = grid.position(reference);
    let mut written = Vec::new();
    for (suffix, ids) in planes(map) {
        let target = if suffix.is_empty() { path.to_path_buf() } else { sibling(path, suffix, "ppm") };
        let (cells, _) = reference_plane(ids, map.n(), grid, reference);
        let (w_px, h_px) = (grid.width * PPM_CELL, grid.height * PPM_CELL);
        let mut out = BufWriter::new(File::create(&target)?);
        write!(out, "P6\n{w_px} {h_px}\n255\n")?;
        for py in 0..h_px {
            for px in 0..w_px {
                let (x, y) = (px / PPM_CELL, py / PPM_CELL);
                let color = if marked == Some((x, y)) {
                    REFERENCE_COLOR
                } else {
                    PALETTE[cells[y * grid.width + x] as usize % PALETTE.len()]
                };
                out.write_all(&color)?;
            }
        }
        out.flush()?;
        written.push(target);
    }
    Ok(written)
}

/// `per_axis × per_axis` grid cells spread evenly over the grid, as token
/// indices in row-major order.
pub fn uniform_references(grid: &GridSpec, per_axis: usize) -> Vec<usize> {
    let pick = |len: usize, i: usize| {
        if per_axis <= 1 {
            len / 2
        } else {
            ((i * (len - 1)) as f64 / (per_axis - 1) as f64).round() as usize
        }
    };
    let mut out = Vec::with_capacity(per_axis * per_axis);
    for iy in 0..per_axis {
        for ix in 0..per_axis {
            out.push(grid.token_at(pick(grid.width, ix), pick(grid.height, iy)));
        }
    }
    out
}

/// Writes one `x,y,value` CSV per reference token into `dir`, named
/// `bias_head{head}_ref{token}.csv`, holding `b[head][reference][·]` over the
/// grid cells.
pub fn export_attention_bias(
    b: &Tensor,
    grid: &GridSpec,
    head: usize,
    references: &[usize],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (h, n, n2) = b.dims3()?;
    if n != grid.n() || n2 != n || head >= h {
        return Err(IrpeError::shape(
            "export_attention_bias",
            format!("bias {h}x{n}x{n2}, grid {grid} with {} tokens, head {head}", grid.n()),
        ));
    }
    let slab = b.slab(head);
    let mut written = Vec::with_capacity(references.len());
    for &r in references {
        if r >= n {
            return Err(IrpeError::Config(format!("reference {r} out of range for {n} tokens")));
        }
        let path = dir.join(format!("bias_head{head}_ref{r}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["x", "y", "value"])?;
        for y in 0..grid.height {
            for x in 0..grid.width {
                let v = slab[r * n + grid.token_at(x, y)];
                w.write_record([x.to_string(), y.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
