use std::fmt;
use std::fs;
use std::io::IsTerminal;

use irpe::analysis::{
    count_macs, export_bucket_map, export_bucket_map_ppm, run_benchmark, write_bench_csv,
    BenchConfig, MacConfig, ModelShape,
};
use irpe::attention::{
    gradient_check, BaselineConfig, MhsaWeights, MultiHeadAttention, PositionEncodingSpec,
};
use irpe::bucket_map::{Method, RelativeMap};
use irpe::encoding::{
    contextual_logits_efficient, contextual_logits_naive, EncodingTable, Mode, ProjectionSide,
    Targets,
};
use irpe::numerics::{exec, Rng, Tensor, DEFAULT_STEP};
use irpe::IrpeError;

use crate::config::{ConfigError, RunConfig};

pub const EQUIV_TOLERANCE: f64 = 1e-10;
pub const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(IrpeError),
}

impl CliError {
    /// 2 for configuration problems, 3 for I/O, 1 for anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(IrpeError::Io(_) | IrpeError::Csv(_)) => 3,
            CliError::Core(
                IrpeError::Config(_) | IrpeError::Parse(_) | IrpeError::Mode { .. } | IrpeError::Shape { .. },
            ) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<IrpeError> for CliError {
    fn from(e: IrpeError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(IrpeError::Io(e))
    }
}

pub type CmdResult = Result<bool, CliError>;

fn verdict(pass: bool) -> String {
    let word = if pass { "PASS" } else { "FAIL" };
    let color = std::env::var_os("IRPE_NO_COLOR").is_none() && std::io::stdout().is_terminal();
    match (color, pass) {
        (false, _) => word.to_string(),
        (true, true) => format!("\x1b[32m{word}\x1b[0m"),
        (true, false) => format!("\x1b[31m{word}\x1b[0m"),
    }
}

pub fn show_config(cfg: &RunConfig) -> CmdResult {
    println!("{}", cfg.to_json());
    Ok(true)
}

pub fn buckets(cfg: &RunConfig, reference: Option<usize>, ppm: bool) -> CmdResult {
    let grid = cfg.grid_spec();
    let f = cfg.index_function();
    let map = RelativeMap::build(&grid, cfg.method, &f)?;
    let reference = reference.unwrap_or_else(|| grid.token_at(grid.width / 2, grid.height / 2));
    if reference >= grid.n() {
        return Err(ConfigError::new("reference", format!("token {reference} not in a {}-token grid", grid.n())).into());
    }
    println!("buckets: {}", map.num_buckets());
    let counts: Vec<String> = Method::ALL
        .iter()
        .map(|&m| RelativeMap::build(&grid, m, &f).map(|mm| format!("{m}={}", mm.num_buckets())))
        .collect::<Result<_, _>>()?;
    println!("per method: {}", counts.join(" "));

    fs::create_dir_all(cfg.out_dir())?;
    let stem = format!("buckets_{}", cfg.method);
    let mut files = export_bucket_map(&map, &grid, reference, &cfg.out_dir().join(format!("{stem}.csv")))?;
    if ppm {
        files.extend(export_bucket_map_ppm(&map, &grid, reference, &cfg.out_dir().join(format!("{stem}.ppm")))?);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(true)
}

pub fn equiv(cfg: &RunConfig, trials: usize, inject_fault: bool) -> CmdResult {
    if cfg.mode != Mode::Contextual {
        return Err(ConfigError::new("mode", "equivalence checks need contextual mode").into());
    }
    let map = cfg.rpe().build_map()?;
    let (n, k) = (map.n(), map.num_buckets());
    let mut rng = Rng::seed(cfg.seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut table = EncodingTable::contextual(k, cfg.dim, cfg.heads, cfg.shared)?;
        table.randomize(1.0, &mut rng);
        let proj = Tensor::randn(&[cfg.heads, n, cfg.dim], 1.0, &mut rng);
        for side in [ProjectionSide::Query, ProjectionSide::Key] {
            let fast = contextual_logits_efficient(&proj, &table, &map, side)?;
            let mut oracle_table = table.clone();
            if inject_fault && trial == 0 {
                let id = map.pair_ids(0, 0)[0] as usize;
                oracle_table.weights_mut()[id * cfg.dim] += 1e-3;
            }
            let slow = contextual_logits_naive(&proj, &oracle_table, &map, side)?;
            worst = worst.max(fast.max_abs_diff(&slow)?);
        }
    }
    let pass = worst < EQUIV_TOLERANCE;
    println!(
        "equiv: {trials} trials, n={n}, k={k}, d={}, heads={}, shared={}, max |naive - efficient| = {worst:.3e} {}",
        cfg.dim,
        cfg.heads,
        cfg.shared,
        verdict(pass)
    );
    Ok(pass)
}

pub fn gradcheck(cfg: &RunConfig) -> CmdResult {
    let grid = cfg.grid_spec();
    let mut spec = match cfg.baseline {
        Some(kind) => PositionEncodingSpec::baseline(BaselineConfig {
            kind,
            beta: cfg.beta,
            shared: cfg.shared,
            grid,
        }),
        None => PositionEncodingSpec::relative(cfg.rpe()),
    };
    spec.absolute = cfg.absolute;
    let mut rng = Rng::seed(cfg.seed);
    let d_model = cfg.d_model();
    let weights = MhsaWeights::random(d_model, d_model, cfg.heads, &mut rng)?;
    let mut model = MultiHeadAttention::new(weights, grid.n(), &spec)?;
    model.randomize_position_parameters(0.3, &mut rng);
    let x = Tensor::randn(&[grid.n(), d_model], 1.0, &mut rng);
    let report = gradient_check(&mut model, &x, DEFAULT_STEP, &mut rng)?;
    let mut all = true;
    println!("{:<12} {:>8} {:>12}", "parameter", "size", "rel_error");
    for e in &report {
        let pass = e.rel_error < GRAD_TOLERANCE;
        all &= pass;
        println!("{:<12} {:>8} {:>12.3e} {}", e.name, e.len, e.rel_error, verdict(pass));
    }
    println!("gradcheck: {}", verdict(all));
    Ok(all)
}

pub fn macs(cfg: &RunConfig, layers: usize) -> CmdResult {
    let grid = cfg.grid_spec();
    let map = RelativeMap::build(&grid, cfg.method, &cfg.index_function())?;
    let shape = ModelShape {
        layers,
        heads: cfg.heads,
        tokens: grid.n(),
        head_dim: cfg.dim,
        patches: grid.cells(),
        ..ModelShape::deit_small()
    };
    let k = map.num_buckets();
    println!("{} mode, k={k}, n={}, {layers} layers x {} heads x {}", cfg.mode, grid.n(), cfg.heads, cfg.dim);
    println!("{:<8} {:>12} {:>12} {:>12} {:>10}", "targets", "base_M", "rpe_M", "total_M", "overhead");
    fs::create_dir_all(cfg.out_dir())?;
    let path = cfg.out_dir().join("macs.csv");
    let mut w = csv::Writer::from_path(&path).map_err(IrpeError::from)?;
    w.write_record(["targets", "base_macs", "rpe_macs", "total"]).map_err(IrpeError::from)?;
    for targets in Targets::all_subsets() {
        if cfg.mode == Mode::Bias && targets.v {
            continue;
        }
        let c = count_macs(&MacConfig::new(shape, k, cfg.mode, targets));
        let m = |v: u64| v as f64 / 1e6;
        println!(
            "{:<8} {:>12.1} {:>12.1} {:>12.1} {:>9.2}%",
            targets.to_string(),
            m(c.base_macs),
            m(c.rpe_macs),
            m(c.total),
            100.0 * c.overhead()
        );
        w.write_record([targets.to_string(), c.base_macs.to_string(), c.rpe_macs.to_string(), c.total.to_string()])
            .map_err(IrpeError::from)?;
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(true)
}

pub fn bench(cfg: &RunConfig, sizes: Vec<usize>, num_buckets: usize, repeats: usize, sequential: bool) -> CmdResult {
    exec::set_parallel(!sequential);
    let reports = run_benchmark(&BenchConfig {
        sizes,
        num_buckets,
        head_dim: cfg.dim,
        heads: cfg.heads,
        repeats,
        seed: cfg.seed,
    })?;
    println!("{:>6} {:>4} {:>4} {:>3} {:>14} {:>14} {:>8}", "n", "k", "d", "h", "naive_ns", "efficient_ns", "speedup");
    for r in &reports {
        println!(
            "{:>6} {:>4} {:>4} {:>3} {:>14} {:>14} {:>8.2}",
            r.n, r.k, r.d, r.h, r.naive_ns, r.efficient_ns, r.speedup
        );
    }
    fs::create_dir_all(cfg.out_dir())?;
    let path = cfg.out_dir().join("bench.csv");
    write_bench_csv(&reports, &path)?;
    println!("wrote {}", path.display());
    Ok(true)
}
