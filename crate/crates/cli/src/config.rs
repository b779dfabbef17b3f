//! Run configuration: a flat JSON schema, overridable field by field from
//! the command line.

use std::fmt;
use std::path::{Path, PathBuf};

use irpe::attention::{AbsoluteKind, Baseline};
use irpe::bucket_map::{GridSpec, Method};
use irpe::encoding::{Mode, RpeConfig, Targets};
use irpe::index_fn::{IndexFnKind, IndexFunction, PiecewiseParams};
use serde::{Deserialize, Serialize};

/// A rejected configuration, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field '{}': {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// `HxW`, e.g. `14x14`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("'{v}' in '{s}': {e}"))
    };
    Ok((parse(h)?, parse(w)?))
}

/// Every field optional; what a config file or the flags provide.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub grid: Option<String>,
    pub cls: Option<bool>,
    pub method: Option<Method>,
    pub mode: Option<Mode>,
    pub targets: Option<Targets>,
    pub index_fn: Option<IndexFnKind>,
    pub alpha: Option<f64>,
    pub beta: Option<u32>,
    pub gamma: Option<f64>,
    pub heads: Option<usize>,
    pub dim: Option<usize>,
    pub shared: Option<bool>,
    pub absolute: Option<AbsoluteKind>,
    pub baseline: Option<Baseline>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl PartialConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            grid: over.grid.or(self.grid),
            cls: over.cls.or(self.cls),
            method: over.method.or(self.method),
            mode: over.mode.or(self.mode),
            targets: over.targets.or(self.targets),
            index_fn: over.index_fn.or(self.index_fn),
            alpha: over.alpha.or(self.alpha),
            beta: over.beta.or(self.beta),
            gamma: over.gamma.or(self.gamma),
            heads: over.heads.or(self.heads),
            dim: over.dim.or(self.dim),
            shared: over.shared.or(self.shared),
            absolute: over.absolute.or(self.absolute),
            baseline: over.baseline.or(self.baseline),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
        }
    }
}

/// A complete, validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub grid: String,
    pub cls: bool,
    pub method: Method,
    pub mode: Mode,
    pub targets: Targets,
    pub index_fn: IndexFnKind,
    pub alpha: f64,
    pub beta: u32,
    pub gamma: f64,
    pub heads: usize,
    pub dim: usize,
    pub shared: bool,
    pub absolute: AbsoluteKind,
    pub baseline: Option<Baseline>,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(skip)]
    grid_spec: GridSpec,
    #[serde(skip)]
    function: IndexFunction,
}

/// Per-subcommand fallbacks for sizes; everything else has one default.
#[derive(Debug, Clone, Copy)]
pub struct SizeDefaults {
    pub grid: (usize, usize),
    pub heads: usize,
    pub dim: usize,
}

impl SizeDefaults {
    pub const STANDARD: SizeDefaults = SizeDefaults {
        grid: (14, 14),
        heads: 6,
        dim: 64,
    };
    /// Small enough for finite differences over every weight.
    pub const GRADCHECK: SizeDefaults = SizeDefaults {
        grid: (3, 3),
        heads: 2,
        dim: 4,
    };
}

impl RunConfig {
    pub fn resolve(p: PartialConfig, defaults: SizeDefaults) -> Result<Self, ConfigError> {
        let grid = p
            .grid
            .unwrap_or_else(|| format!("{}x{}", defaults.grid.0, defaults.grid.1));
        let (h, w) = parse_grid(&grid).map_err(|m| ConfigError::new("grid", m))?;
        let cls = p.cls.unwrap_or(false);
        let grid_spec = GridSpec::new(h, w, cls).map_err(|e| ConfigError::new("grid", e.to_string()))?;

        let beta = p.beta.unwrap_or(3);
        if beta == 0 {
            return Err(ConfigError::new("beta", "must be at least 1"));
        }
        let alpha = p.alpha.unwrap_or(beta as f64 / 2.0);
        let gamma = p.gamma.unwrap_or(4.0 * beta as f64);
        let index_fn = p.index_fn.unwrap_or(IndexFnKind::Piecewise);
        let function = match index_fn {
            IndexFnKind::Clip => IndexFunction::clip(beta),
            IndexFnKind::Piecewise => {
                let params = PiecewiseParams::new(alpha, beta, gamma).map_err(|e| {
                    let field = if !(alpha > 0.0 && alpha < beta as f64) { "alpha" } else { "gamma" };
                    ConfigError::new(field, e.to_string())
                })?;
                IndexFunction::piecewise(params)
            }
        };

        let heads = p.heads.unwrap_or(defaults.heads);
        if heads == 0 {
            return Err(ConfigError::new("heads", "must be at least 1"));
        }
        let dim = p.dim.unwrap_or(defaults.dim);
        if dim == 0 {
            return Err(ConfigError::new("dim", "must be at least 1"));
        }
        let mode = p.mode.unwrap_or(Mode::Contextual);
        let targets = p.targets.unwrap_or(Targets::K);
        if targets.is_empty() {
            return Err(ConfigError::new("targets", "must name at least one of q, k, v"));
        }
        if mode == Mode::Bias && targets.v {
            return Err(ConfigError::new("targets", "bias mode cannot target values"));
        }
        if p.baseline == Some(Baseline::Sasa) && !dim.is_multiple_of(2) {
            return Err(ConfigError::new("dim", "the sasa baseline needs an even head dim"));
        }

        Ok(RunConfig {
            grid: format!("{h}x{w}"),
            cls,
            method: p.method.unwrap_or(Method::Product),
            mode,
            targets,
            index_fn,
            alpha,
            beta,
            gamma,
            heads,
            dim,
            shared: p.shared.unwrap_or(false),
            absolute: p.absolute.unwrap_or_default(),
            baseline: p.baseline,
            seed: p.seed.unwrap_or(0),
            out: p.out.unwrap_or_else(|| PathBuf::from("irpe-out")),
            grid_spec,
            function,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid_spec
    }

    pub fn index_function(&self) -> IndexFunction {
        self.function
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.dim
    }

    pub fn rpe(&self) -> RpeConfig {
        RpeConfig {
            method: self.method,
            mode: self.mode,
            index_fn: self.function,
            targets: self.targets,
            shared: self.shared,
            grid: self.grid_spec,
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(json: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::resolve(PartialConfig::from_json(json)?, SizeDefaults::STANDARD)
    }

    #[test]
    fn defaults() {
        let c = resolve("{}").unwrap();
        assert_eq!(c.grid_spec().n(), 196);
        assert_eq!((c.alpha, c.beta, c.gamma), (1.5, 3, 12.0));
        assert_eq!(c.method, Method::Product);
    }

    #[test]
    fn round_trip() {
        let c = resolve(r#"{"grid":"7x5","cls":false,"method":"cross","targets":"qv","beta":4,"seed":9,"baseline":"huang"}"#)
            .unwrap();
        let again = resolve(&c.to_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn field_specific_errors() {
        assert_eq!(resolve(r#"{"grid":"0x3"}"#).unwrap_err().field, "grid");
        assert_eq!(resolve(r#"{"grid":"abc"}"#).unwrap_err().field, "grid");
        assert_eq!(resolve(r#"{"alpha":5.0}"#).unwrap_err().field, "alpha");
        assert_eq!(resolve(r#"{"gamma":1.0}"#).unwrap_err().field, "gamma");
        assert_eq!(resolve(r#"{"mode":"bias","targets":"kv"}"#).unwrap_err().field, "targets");
        assert_eq!(resolve(r#"{"heads":0}"#).unwrap_err().field, "heads");
        assert_eq!(resolve(r#"{"beta":0}"#).unwrap_err().field, "beta");
        assert_eq!(resolve(r#"{"bogus":1}"#).unwrap_err().field, "config");
    }

    #[test]
    fn overlay_prefers_flags() {
        let file = PartialConfig::from_json(r#"{"beta":2,"heads":3}"#).unwrap();
        let flags = PartialConfig {
            beta: Some(5),
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!((merged.beta, merged.heads), (Some(5), Some(3)));
    }

    #[test]
    fn clip_ignores_alpha() {
        let c = resolve(r#"{"index_fn":"clip","alpha":10.0}"#).unwrap();
        assert_eq!(c.index_function(), IndexFunction::clip(3));
    }
}
