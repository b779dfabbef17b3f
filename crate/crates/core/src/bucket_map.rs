//! Relative-position bucket tables `I(i, j)` for an `H × W` token grid.
//!
//! Token order is: class token (when present) at index 0, then grid cells
//! in row-major order. A cell's `x` is its column and `y` its row; the
//! relative offset of pair `(i, j)` is `(x_i − x_j, y_i − y_j)`.
//!
//! Id layout per method:
//!
//! | method       | grid ids                                        | count                 |
//! |--------------|-------------------------------------------------|-----------------------|
//! | Euclidean    | `g(dist)`                                       | realized max + 1      |
//! | Quantization | `g(rank(dist))`                                 | realized max + 1      |
//! | Cross        | x: `g(δx)+β`, y: `(2β+1) + g(δy)+β`             | `2(2β+1)`             |
//! | Product      | `(2β+1)·(g(δx)+β) + (g(δy)+β)`                  | `(2β+1)²`             |
//!
//! With a class token one more id is appended and every pair touching
//! token 0 maps to it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IrpeError, Result};
use crate::index_fn::{DistanceTable, IndexFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub has_cls_token: bool,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, has_cls_token: bool) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(IrpeError::Config(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(GridSpec {
            height,
            width,
            has_cls_token,
        })
    }

    /// Number of grid cells, excluding the class token.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Sequence length.
    pub fn n(&self) -> usize {
        self.cells() + usize::from(self.has_cls_token)
    }

    fn cls_offset(&self) -> usize {
        usize::from(self.has_cls_token)
    }

    /// `(x, y)` of a token, or `None` for the class token.
    pub fn position(&self, token: usize) -> Option<(usize, usize)> {
        let cell = token.checked_sub(self.cls_offset())?;
        (cell < self.cells()).then(|| (cell % self.width, cell / self.width))
    }

    pub fn token_at(&self, x: usize, y: usize) -> usize {
        self.cls_offset() + y * self.width + x
    }

    pub fn without_cls(&self) -> GridSpec {
        GridSpec {
            has_cls_token: false,
            ..*self
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euclidean,
    Quantization,
    Cross,
    Product,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Euclidean,
        Method::Quantization,
        Method::Cross,
        Method::Product,
    ];

    pub fn is_directed(self) -> bool {
        matches!(self, Method::Cross | Method::Product)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Euclidean => "euclidean",
            Method::Quantization => "quantization",
            Method::Cross => "cross",
            Method::Product => "product",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = IrpeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| IrpeError::Parse(format!("unknown method '{s}'")))
    }
}

/// Single-table bucket map (Euclidean, Quantization, Product).
#[derive(Clone, Debug, PartialEq)]
pub struct BucketIndexMap {
    n: usize,
    indices: Vec<u32>,
    num_buckets: usize,
    method: Method,
    cls_bucket: Option<u32>,
}

impl BucketIndexMap {
    /// Wraps an arbitrary `n × n` id table, checking that every id is below
    /// `num_buckets`. Used for synthetic maps in benchmarks and tests.
    pub fn from_raw(n: usize, indices: Vec<u32>, num_buckets: usize, method: Method) -> Result<Self> {
        if indices.len() != n * n {
            return Err(IrpeError::shape(
                "BucketIndexMap::from_raw",
                format!("expected {} ids, got {}", n * n, indices.len()),
            ));
        }
        if let Some(&id) = indices.iter().find(|&&id| id as usize >= num_buckets) {
            return Err(IrpeError::Corruption { id, num_buckets });
        }
        Ok(BucketIndexMap {
            n,
            indices,
            num_buckets,
            method,
            cls_bucket: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.indices[i * self.n + j]
    }

    /// Flat row-major `n × n` ids.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn cls_bucket(&self) -> Option<u32> {
        self.cls_bucket
    }

    pub fn distinct_ids(&self) -> BTreeSet<u32> {
        self.indices.iter().copied().collect()
    }

    /// Ids in `[0, num_buckets)` that no pair of this grid reaches.
    pub fn unreachable_ids(&self) -> Vec<u32> {
        let used = self.distinct_ids();
        (0..self.num_buckets as u32).filter(|id| !used.contains(id)).collect()
    }

    /// Appends a class-token bucket; row 0 and column 0 of the grown table
    /// point at it.
    pub fn attach_cls_bucket(self, grid: &GridSpec) -> Result<Self> {
        check_cls_attach(self.n, self.cls_bucket, grid)?;
        let cls = self.num_buckets as u32;
        let indices = with_cls_border(&self.indices, self.n, cls);
        Ok(BucketIndexMap {
            n: self.n + 1,
            indices,
            num_buckets: self.num_buckets + 1,
            method: self.method,
            cls_bucket: Some(cls),
        })
    }
}

/// Cross-method map: every pair has one horizontal and one vertical bucket.
///
/// Table ids are global over a single table of `2(2β+1)` rows (+1 for the
/// class token): horizontal ids first, then vertical ids.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossIndexMap {
    n: usize,
    x_ids: Vec<u32>,
    y_ids: Vec<u32>,
    buckets_per_axis: usize,
    cls_bucket: Option<u32>,
}

impl CrossIndexMap {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn buckets_per_axis(&self) -> usize {
        self.buckets_per_axis
    }

    pub fn num_buckets(&self) -> usize {
        2 * self.buckets_per_axis + usize::from(self.cls_bucket.is_some())
    }

    pub fn cls_bucket(&self) -> Option<u32> {
        self.cls_bucket
    }

    /// Global table ids of the horizontal component, flat `n × n`.
    pub fn x_table_ids(&self) -> &[u32] {
        &self.x_ids
    }

    /// Global table ids of the vertical component, flat `n × n`.
    pub fn y_table_ids(&self) -> &[u32] {
        &self.y_ids
    }

    /// Per-axis horizontal bucket in `[0, 2β+1)`; `None` for class-token pairs.
    pub fn x_axis_bucket(&self, i: usize, j: usize) -> Option<u32> {
        let id = self.x_ids[i * self.n + j];
        (Some(id) != self.cls_bucket).then_some(id)
    }

    /// Per-axis vertical bucket in `[0, 2β+1)`; `None` for class-token pairs.
    pub fn y_axis_bucket(&self, i: usize, j: usize) -> Option<u32> {
        let id = self.y_ids[i * self.n + j];
        (Some(id) != self.cls_bucket).then(|| id - self.buckets_per_axis as u32)
    }

    pub fn attach_cls_bucket(self, grid: &GridSpec) -> Result<Self> {
        check_cls_attach(self.n, self.cls_bucket, grid)?;
        let cls = (2 * self.buckets_per_axis) as u32;
        Ok(CrossIndexMap {
            n: self.n + 1,
            x_ids: with_cls_border(&self.x_ids, self.n, cls),
            y_ids: with_cls_border(&self.y_ids, self.n, cls),
            buckets_per_axis: self.buckets_per_axis,
            cls_bucket: Some(cls),
        })
    }
}

/// Any of the four mappings. `b_ij` is the sum over [`components`] of the
/// table row each component selects.
///
/// [`components`]: RelativeMap::components
#[derive(Clone, Debug, PartialEq)]
pub enum RelativeMap {
    Single(BucketIndexMap),
    Cross(CrossIndexMap),
}

impl RelativeMap {
    pub fn build(grid: &GridSpec, method: Method, f: &IndexFunction) -> Result<Self> {
        Ok(match method {
            Method::Euclidean => RelativeMap::Single(euclidean_map(grid, f)?),
            Method::Quantization => RelativeMap::Single(quantization_map(grid, f)?),
            Method::Cross => RelativeMap::Cross(cross_map(grid, f)?),
            Method::Product => RelativeMap::Single(product_map(grid, f)?),
        })
    }

    pub fn n(&self) -> usize {
        match self {
            RelativeMap::Single(m) => m.n,
            RelativeMap::Cross(m) => m.n,
        }
    }

    pub fn num_buckets(&self) -> usize {
        match self {
            RelativeMap::Single(m) => m.num_buckets,
            RelativeMap::Cross(m) => m.num_buckets(),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            RelativeMap::Single(m) => m.method,
            RelativeMap::Cross(_) => Method::Cross,
        }
    }

    pub fn cls_bucket(&self) -> Option<u32> {
        match self {
            RelativeMap::Single(m) => m.cls_bucket,
            RelativeMap::Cross(m) => m.cls_bucket,
        }
    }

    /// Flat `n × n` id tables whose selected rows are summed per pair.
    pub fn components(&self) -> Vec<&[u32]> {
        match self {
            RelativeMap::Single(m) => vec![&m.indices],
            RelativeMap::Cross(m) => vec![&m.x_ids, &m.y_ids],
        }
    }

    /// Table ids selected by pair `(i, j)`.
    pub fn pair_ids(&self, i: usize, j: usize) -> Vec<u32> {
        let n = self.n();
        self.components().iter().map(|c| c[i * n + j]).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        self.components()
            .iter()
            .all(|c| (0..n).all(|i| (0..i).all(|j| c[i * n + j] == c[j * n + i])))
    }

    pub fn as_single(&self) -> Option<&BucketIndexMap> {
        match self {
            RelativeMap::Single(m) => Some(m),
            RelativeMap::Cross(_) => None,
        }
    }

    pub fn as_cross(&self) -> Option<&CrossIndexMap> {
        match self {
            RelativeMap::Cross(m) => Some(m),
            RelativeMap::Single(_) => None,
        }
    }
}

impl From<BucketIndexMap> for RelativeMap {
    fn from(m: BucketIndexMap) -> Self {
        RelativeMap::Single(m)
    }
}

impl From<CrossIndexMap> for RelativeMap {
    fn from(m: CrossIndexMap) -> Self {
        RelativeMap::Cross(m)
    }
}

/// Attaches the class-token bucket to a map built for `grid` without one.
pub fn attach_cls_bucket(map: RelativeMap, grid: &GridSpec) -> Result<RelativeMap> {
    Ok(match map {
        RelativeMap::Single(m) => RelativeMap::Single(m.attach_cls_bucket(grid)?),
        RelativeMap::Cross(m) => RelativeMap::Cross(m.attach_cls_bucket(grid)?),
    })
}

pub fn euclidean_map(grid: &GridSpec, f: &IndexFunction) -> Result<BucketIndexMap> {
    undirected_map(grid, Method::Euclidean, |dx, dy| {
        f.apply(((dx * dx + dy * dy) as f64).sqrt())
    })
}

pub fn quantization_map(grid: &GridSpec, f: &IndexFunction) -> Result<BucketIndexMap> {
    let table = DistanceTable::for_grid(grid.height, grid.width);
    undirected_map(grid, Method::Quantization, |dx, dy| {
        let rank = table
            .rank_of_squared((dx * dx + dy * dy) as u64)
            .expect("offset within grid has a tabulated distance");
        f.apply(rank as f64)
    })
}

pub fn cross_map(grid: &GridSpec, f: &IndexFunction) -> Result<CrossIndexMap> {
    let beta = f.beta() as i64;
    let per_axis = (2 * beta + 1) as u32;
    let g = grid.without_cls();
    let x_ids = fill_pairs(&g, |dx, _| (f.apply(dx as f64) as i64 + beta) as u32);
    let y_ids = fill_pairs(&g, |_, dy| per_axis + (f.apply(dy as f64) as i64 + beta) as u32);
    let map = CrossIndexMap {
        n: g.n(),
        x_ids,
        y_ids,
        buckets_per_axis: per_axis as usize,
        cls_bucket: None,
    };
    if grid.has_cls_token {
        map.attach_cls_bucket(grid)
    } else {
        Ok(map)
    }
}

pub fn product_map(grid: &GridSpec, f: &IndexFunction) -> Result<BucketIndexMap> {
    let beta = f.beta() as i64;
    let per_axis = 2 * beta + 1;
    let g = grid.without_cls();
    let indices = fill_pairs(&g, |dx, dy| {
        let gx = f.apply(dx as f64) as i64 + beta;
        let gy = f.apply(dy as f64) as i64 + beta;
        (per_axis * gx + gy) as u32
    });
    let map = BucketIndexMap {
        n: g.n(),
        indices,
        num_buckets: (per_axis * per_axis) as usize,
        method: Method::Product,
        cls_bucket: None,
    };
    if grid.has_cls_token {
        map.attach_cls_bucket(grid)
    } else {
        Ok(map)
    }
}

fn undirected_map<F>(grid: &GridSpec, method: Method, id_of: F) -> Result<BucketIndexMap>
where
    F: Fn(i64, i64) -> i32,
{
    let g = grid.without_cls();
    // Distances only depend on |δx|, |δy|: tabulate once per offset.
    let (w, h) = (g.width as i64, g.height as i64);
    let mut per_offset = vec![0u32; (w * h) as usize];
    for dy in 0..h {
        for dx in 0..w {
            let id = id_of(dx, dy);
            if id < 0 {
                return Err(IrpeError::Config(format!(
                    "index function produced negative bucket {id} for a distance"
                )));
            }
            per_offset[(dy * w + dx) as usize] = id as u32;
        }
    }
    let indices = fill_pairs(&g, |dx, dy| per_offset[(dy.abs() * w + dx.abs()) as usize]);
    let num_buckets = indices.iter().copied().max().map_or(1, |m| m as usize + 1);
    let map = BucketIndexMap {
        n: g.n(),
        indices,
        num_buckets,
        method,
        cls_bucket: None,
    };
    if grid.has_cls_token {
        map.attach_cls_bucket(grid)
    } else {
        Ok(map)
    }
}

/// Fills an `n × n` table over grid cells (no class token) from the offset.
fn fill_pairs<F>(grid: &GridSpec, id_of: F) -> Vec<u32>
where
    F: Fn(i64, i64) -> u32,
{
    let n = grid.cells();
    let w = grid.width;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let (xi, yi) = ((i % w) as i64, (i / w) as i64);
        for j in 0..n {
            let (xj, yj) = ((j % w) as i64, (j / w) as i64);
            out.push(id_of(xi - xj, yi - yj));
        }
    }
    out
}

fn check_cls_attach(n: usize, existing: Option<u32>, grid: &GridSpec) -> Result<()> {
    if !grid.has_cls_token {
        return Err(IrpeError::Config(
            "cannot attach a class-token bucket: grid has no class token".into(),
        ));
    }
    if existing.is_some() {
        return Err(IrpeError::Config("map already has a class-token bucket".into()));
    }
    if n != grid.cells() {
        return Err(IrpeError::shape(
            "attach_cls_bucket",
            format!("map covers {n} tokens but grid {grid} has {} cells", grid.cells()),
        ));
    }
    Ok(())
}

fn with_cls_border(ids: &[u32], n: usize, cls: u32) -> Vec<u32> {
    let m = n + 1;
    let mut out = vec![cls; m * m];
    for i in 0..n {
        out[(i + 1) * m + 1..(i + 2) * m].copy_from_slice(&ids[i * n..(i + 1) * n]);
    }
    out
}
