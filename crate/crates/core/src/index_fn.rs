//! Scalar-to-bucket index functions.
//!
//! * [`clip_index`]: saturating `max(-β, min(β, x))`.
//! * [`piecewise_index`]: exact rounding for `|x| ≤ α`, logarithmic
//!   compression beyond, bounded by `β`.
//! * [`DistanceTable`]: ranks the distinct Euclidean distances a grid can
//!   produce so that `{0, 1, √2, 2, √5, ...}` becomes `{0, 1, 2, 3, 4, ...}`.

use serde::{Deserialize, Serialize};

use crate::error::{IrpeError, Result};

/// Matching tolerance when looking a real distance up in a [`DistanceTable`].
pub const DISTANCE_TOLERANCE: f64 = 1e-9;

/// `(α, β, γ)` of the piecewise index function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseParams {
    alpha: f64,
    beta: u32,
    gamma: f64,
}

impl PiecewiseParams {
    pub fn new(alpha: f64, beta: u32, gamma: f64) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 || alpha >= beta as f64 {
            return Err(IrpeError::Config(format!(
                "alpha must satisfy 0 < alpha < beta (alpha={alpha}, beta={beta})"
            )));
        }
        if gamma.is_nan() || gamma <= alpha || !gamma.is_finite() {
            return Err(IrpeError::Config(format!(
                "gamma must exceed alpha (alpha={alpha}, gamma={gamma})"
            )));
        }
        Ok(PiecewiseParams { alpha, beta, gamma })
    }

    /// The default 1:2:8 ratio: `α = β/2`, `γ = 4β`.
    pub fn from_beta(beta: u32) -> Result<Self> {
        PiecewiseParams::new(beta as f64 / 2.0, beta, 4.0 * beta as f64)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> u32 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexFnKind {
    Clip,
    Piecewise,
}

impl std::str::FromStr for IndexFnKind {
    type Err = IrpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clip" => Ok(IndexFnKind::Clip),
            "piecewise" => Ok(IndexFnKind::Piecewise),
            _ => Err(IrpeError::Parse(format!("unknown index function '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum IndexFunction {
    Clip { beta: u32 },
    Piecewise(PiecewiseParams),
}

impl IndexFunction {
    pub fn clip(beta: u32) -> Self {
        IndexFunction::Clip { beta }
    }

    pub fn piecewise(params: PiecewiseParams) -> Self {
        IndexFunction::Piecewise(params)
    }

    pub fn kind(&self) -> IndexFnKind {
        match self {
            IndexFunction::Clip { .. } => IndexFnKind::Clip,
            IndexFunction::Piecewise(_) => IndexFnKind::Piecewise,
        }
    }

    pub fn beta(&self) -> u32 {
        match self {
            IndexFunction::Clip { beta } => *beta,
            IndexFunction::Piecewise(p) => p.beta,
        }
    }

    /// Maps a (possibly real-valued) relative position to a bucket offset in
    /// `[-β, β]`. The clip function rounds first, so integer inputs are exact.
    pub fn apply(&self, x: f64) -> i32 {
        match self {
            IndexFunction::Clip { beta } => clip_index(x.round() as i64, *beta) as i32,
            IndexFunction::Piecewise(p) => piecewise_index(x, p),
        }
    }
}

pub fn clip_index(x: i64, beta: u32) -> i64 {
    let b = i64::from(beta);
    x.clamp(-b, b)
}

/// `[x]` for `|x| ≤ α`, else
/// `sign(x) · min(β, [α + ln(|x|/α) / ln(γ/α) · (β − α)])`.
///
/// `[·]` rounds half away from zero, which keeps the function exactly odd.
pub fn piecewise_index(x: f64, p: &PiecewiseParams) -> i32 {
    let ax = x.abs();
    if ax <= p.alpha {
        return x.round() as i32;
    }
    let beta = p.beta as f64;
    let log_part = p.alpha + (ax / p.alpha).ln() / (p.gamma / p.alpha).ln() * (beta - p.alpha);
    let magnitude = log_part.round().min(beta) as i32;
    if x > 0.0 {
        magnitude
    } else {
        -magnitude
    }
}

/// Sorted distinct Euclidean distances achievable between two cells of an
/// `height × width` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    squared: Vec<u64>,
    distances: Vec<f64>,
}

impl DistanceTable {
    pub fn for_grid(height: usize, width: usize) -> Self {
        let mut squared: Vec<u64> = (0..height as u64)
            .flat_map(|dy| (0..width as u64).map(move |dx| dx * dx + dy * dy))
            .collect();
        squared.sort_unstable();
        squared.dedup();
        let distances = squared.iter().map(|&s| (s as f64).sqrt()).collect();
        DistanceTable { squared, distances }
    }

    pub fn len(&self) -> usize {
        self.squared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squared.is_empty()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Rank of a real distance, matched within [`DISTANCE_TOLERANCE`].
    pub fn quantize(&self, d: f64) -> Result<usize> {
        let pos = self.distances.partition_point(|&v| v < d - DISTANCE_TOLERANCE);
        match self.distances.get(pos) {
            Some(&v) if (v - d).abs() <= DISTANCE_TOLERANCE => Ok(pos),
            _ => Err(IrpeError::Lookup(d)),
        }
    }

    /// Rank of an exact squared integer distance.
    pub fn rank_of_squared(&self, sq: u64) -> Option<usize> {
        self.squared.binary_search(&sq).ok()
    }
}

pub fn quantize_distance(d: f64, table: &DistanceTable) -> Result<usize> {
    table.quantize(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p128() -> PiecewiseParams {
        PiecewiseParams::new(1.0, 2, 8.0).unwrap()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_index(0, 2), 0);
        assert_eq!(clip_index(7, 2), 2);
        assert_eq!(clip_index(-7, 3), -3);
    }

    #[test]
    fn piecewise_examples() {
        let p = p128();
        assert_eq!(piecewise_index(0.0, &p), 0);
        // 1 + ln 8 / ln 8 · (2 − 1) = 2
        assert_eq!(piecewise_index(8.0, &p), 2);
        // 1 + ln 3 / ln 8 = 1.528...
        assert_eq!(piecewise_index(3.0, &p), 2);
        assert_eq!(piecewise_index(-3.0, &p), -2);
        assert_eq!(piecewise_index(1.0, &p), 1);
        assert_eq!(piecewise_index(2f64.sqrt(), &p), 1);
        assert_eq!(piecewise_index(1000.0, &p), 2);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let p = PiecewiseParams::new(3.0, 6, 24.0).unwrap();
        assert_eq!(piecewise_index(2.5, &p), 3);
        assert_eq!(piecewise_index(-2.5, &p), -3);
        assert_eq!(piecewise_index(0.5, &p), 1);
        assert_eq!(piecewise_index(-0.5, &p), -1);
    }

    #[test]
    fn first_branch_agrees_with_clip() {
        for beta in 1..=10u32 {
            let p = PiecewiseParams::from_beta(beta).unwrap();
            let a = p.alpha().floor() as i64;
            for x in -a..=a {
                assert_eq!(piecewise_index(x as f64, &p) as i64, clip_index(x, beta));
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PiecewiseParams::new(0.0, 2, 8.0).is_err());
        assert!(PiecewiseParams::new(2.0, 2, 8.0).is_err());
        assert!(PiecewiseParams::new(1.0, 2, 1.0).is_err());
        assert!(PiecewiseParams::new(1.0, 2, 0.5).is_err());
        assert!(PiecewiseParams::from_beta(0).is_err());
    }

    #[test]
    fn default_ratio() {
        let p = PiecewiseParams::from_beta(2).unwrap();
        assert_eq!((p.alpha(), p.beta(), p.gamma()), (1.0, 2, 8.0));
        let p = PiecewiseParams::from_beta(3).unwrap();
        assert_eq!((p.alpha(), p.gamma()), (1.5, 12.0));
    }

    #[test]
    fn quantize_examples() {
        let t = DistanceTable::for_grid(14, 14);
        assert_eq!(t.quantize(0.0).unwrap(), 0);
        assert_eq!(t.quantize(1.0).unwrap(), 1);
        assert_eq!(t.quantize(2f64.sqrt()).unwrap(), 2);
        assert_eq!(t.quantize(2.0).unwrap(), 3);
        assert_eq!(t.quantize(5f64.sqrt()).unwrap(), 4);
    }

    #[test]
    fn quantize_rejects_unachievable_distance() {
        let t = DistanceTable::for_grid(3, 3);
        assert!(matches!(t.quantize(1.2), Err(IrpeError::Lookup(_))));
        // 3 is beyond a 3×3 grid's reach on one axis.
        assert!(t.quantize(3.0).is_err());
    }

    #[test]
    fn quantize_is_a_bijection() {
        let t = DistanceTable::for_grid(9, 6);
        for (rank, &d) in t.distances().iter().enumerate() {
            assert_eq!(t.quantize(d).unwrap(), rank);
        }
        assert!(t.distances().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn apply_dispatches() {
        assert_eq!(IndexFunction::clip(2).apply(-5.0), -2);
        assert_eq!(IndexFunction::clip(2).apply(1.4), 1);
        assert_eq!(IndexFunction::piecewise(p128()).apply(3.0), 2);
        assert_eq!(IndexFunction::piecewise(p128()).beta(), 2);
    }

    proptest! {
        #[test]
        fn piecewise_is_odd_bounded_monotone(x in -1e4f64..1e4, dx in 0f64..50.0, beta in 1u32..20) {
            let p = PiecewiseParams::from_beta(beta).unwrap();
            let g = piecewise_index(x, &p);
            prop_assert_eq!(piecewise_index(-x, &p), -g);
            prop_assert!(g.unsigned_abs() <= beta);
            prop_assert!(g <= piecewise_index(x + dx, &p));
        }

        #[test]
        fn clip_is_bounded(x in any::<i32>(), beta in 0u32..100) {
            prop_assert!(clip_index(x as i64, beta).unsigned_abs() <= beta as u64);
        }
    }
}
