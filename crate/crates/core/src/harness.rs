//! Instance generation, ball-constrained initialization, config files and
//! experiment orchestration (single runs and Monte-Carlo studies).

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::default_tol_grad;
use crate::matkit::{reduced_svd, DenseMatrix, DEFAULT_RANK_TOL};
use crate::objective::{local_bounds, lipschitz_lg, stepsize_generic, stepsize_mf, DataPartition, NetworkDims, NetworkPoint};
use crate::solvers::{
    equivalence_check, run, Engine, IterateTrace, RunConfig, RunSummary, Status, StepSize, DEFAULT_MAX_ITERS,
    DEFAULT_TOL_CONSENSUS,
};
use crate::objective::DEFAULT_SAFETY;
use crate::topology::{build_graph, lazy_fix, metropolis_weights, omega, Graph, MixingMatrix, TopologyKind};

/// Random streams, one per purpose, so that changing one stage leaves the
/// others untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Data = 1,
    Init = 2,
    Eig = 3,
    Graph = 4,
}

/// Generator for `purpose` derived from a master seed (ChaCha stream id).
pub fn purpose_rng(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

pub fn derive_seed(seed: u64, purpose: Purpose) -> u64 {
    purpose_rng(seed, purpose).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho {
    /// `sqrt(4 * nuclear_norm(Y))`
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub nodes: usize,
    pub topology: TopologyKind,
    pub seed: u64,
    pub rho: Rho,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.r == 0 {
            return Err(Error::Config("n, m and r must be positive".into()));
        }
        if self.r > self.n.min(self.m) {
            return Err(Error::Config(format!("r = {} exceeds min(n, m) = {}", self.r, self.n.min(self.m))));
        }
        if self.nodes == 0 || self.nodes > self.m {
            return Err(Error::Config(format!(
                "J = {} must lie in 1..=m = {} so every node owns a column",
                self.nodes, self.m
            )));
        }
        if let Rho::Value(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::Config(format!("rho must be positive, got {rho}")));
            }
        }
        Ok(())
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `Y = A B^T` with standard-normal `A: n x r`, `B: m x r`, split evenly
/// over the nodes (remainder to the first blocks).
pub fn gen_instance(spec: &InstanceSpec) -> Result<(DenseMatrix, DataPartition)> {
    spec.validate()?;
    let mut rng = purpose_rng(spec.seed, Purpose::Data);
    let a = gaussian_matrix(spec.n, spec.r, &mut rng);
    let b = gaussian_matrix(spec.m, spec.r, &mut rng);
    let y = a.matmul_nt(&b)?;
    let d = DataPartition::even(y.clone(), spec.nodes)?;
    Ok((y, d))
}

/// Communication graph of the instance; `None` for a single node.
pub fn gen_graph(spec: &InstanceSpec) -> Result<Option<Graph>> {
    if spec.nodes == 1 {
        return Ok(None);
    }
    build_graph(spec.topology, spec.nodes, derive_seed(spec.seed, Purpose::Graph)).map(Some)
}

/// Metropolis weights on the instance graph, optionally lazy-fixed.
pub fn gen_mixing(spec: &InstanceSpec, lazy: bool) -> Result<MixingMatrix> {
    let m = match gen_graph(spec)? {
        None => MixingMatrix::identity(1),
        Some(g) => metropolis_weights(&g)?,
    };
    Ok(if lazy { lazy_fix(&m) } else { m })
}

pub fn nuclear_norm(y: &DenseMatrix) -> Result<f64> {
    Ok(reduced_svd(y, DEFAULT_RANK_TOL)?.sigma.iter().sum())
}

pub fn auto_rho(y: &DenseMatrix) -> Result<f64> {
    Ok((4.0 * nuclear_norm(y)?).sqrt())
}

pub fn resolve_rho(rho: Rho, y: &DenseMatrix) -> Result<f64> {
    match rho {
        Rho::Auto => auto_rho(y),
        Rho::Value(v) => Ok(v),
    }
}

/// Uniform sample from the open z-norm ball of radius `rho`.
pub fn init_in_ball(dims: &NetworkDims, rho: f64, seed: u64) -> Result<NetworkPoint> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let dim = dims.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: f64 = rng.random();
        if norm == 0.0 || u == 0.0 {
            continue;
        }
        let radius = rho * u.powf(1.0 / dim as f64);
        let z = NetworkPoint::from_flat(dims, &x.iter().map(|v| v / norm * radius).collect::<Vec<_>>())?;
        if z.norm() < rho {
            return Ok(z);
        }
    }
}

/// Parsed experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub mu: StepSize,
    pub max_iters: usize,
    /// `None` resolves to `1e-9 (1 + ||Y||_F)`.
    pub tol_grad: Option<f64>,
    pub tol_consensus: f64,
    /// Relative optimality gap `opt_gap / ||Y||_F^2` counted as success.
    pub tol_gap: f64,
    pub trials: usize,
    pub output_dir: PathBuf,
    pub lazy: bool,
    pub engine: Engine,
    pub safety: f64,
    pub halt_on_leave: bool,
    pub trace_stride: usize,
}

pub const DEFAULT_TOL_GAP: f64 = 1e-4;

const KEYS: &[&str] = &[
    "n", "m", "r", "J", "topology", "p", "seed", "mu", "rho", "max_iters", "tol_grad", "tol_consensus",
    "tol_gap", "trials", "output_dir", "lazy", "engine", "safety", "halt_on_leave", "trace_stride",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for key {key}"))),
    }
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

impl std::str::FromStr for ExperimentConfig {
    type Err = Error;

    /// Flat `key = value` lines; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("unknown key {k:?} on line {}", idx + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key {k:?} on line {}", idx + 1)));
            }
        }
        let req = |k: &str| kv.get(k).ok_or_else(|| Error::Config(format!("missing required key {k}")));
        let opt = |k: &str| kv.get(k).map(String::as_str);

        let p = opt("p").map(|v| parse_value::<f64>("p", v)).transpose()?;
        let topology = match opt("topology") {
            Some(name) if name.contains(':') => name.parse()?,
            Some(name) => TopologyKind::from_parts(name, p)?,
            None => TopologyKind::Ring,
        };
        let rho = match opt("rho").map(|v| parse_auto("rho", v)).transpose()?.flatten() {
            None => Rho::Auto,
            Some(v) => Rho::Value(v),
        };
        let mu = match opt("mu").map(|v| parse_auto("mu", v)).transpose()?.flatten() {
            None => StepSize::Auto,
            Some(v) => StepSize::Fixed(v),
        };
        let instance = InstanceSpec {
            n: parse_value("n", req("n")?)?,
            m: parse_value("m", req("m")?)?,
            r: parse_value("r", req("r")?)?,
            nodes: parse_value("J", req("J")?)?,
            topology,
            seed: opt("seed").map(|v| parse_value("seed", v)).transpose()?.unwrap_or(0),
            rho,
        };
        let cfg = Self {
            instance,
            mu,
            max_iters: opt("max_iters")
                .map(|v| parse_value::<f64>("max_iters", v).map(|x| x as usize))
                .transpose()?
                .unwrap_or(DEFAULT_MAX_ITERS),
            tol_grad: opt("tol_grad").map(|v| parse_auto("tol_grad", v)).transpose()?.flatten(),
            tol_consensus: opt("tol_consensus")
                .map(|v| parse_value("tol_consensus", v))
                .transpose()?
                .unwrap_or(DEFAULT_TOL_CONSENSUS),
            tol_gap: opt("tol_gap").map(|v| parse_value("tol_gap", v)).transpose()?.unwrap_or(DEFAULT_TOL_GAP),
            trials: opt("trials").map(|v| parse_value("trials", v)).transpose()?.unwrap_or(1),
            output_dir: opt("output_dir").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
            lazy: opt("lazy").map(|v| parse_bool("lazy", v)).transpose()?.unwrap_or(false),
            engine: opt("engine").map(str::parse).transpose()?.unwrap_or(Engine::DgdLocal),
            safety: opt("safety").map(|v| parse_value("safety", v)).transpose()?.unwrap_or(DEFAULT_SAFETY),
            halt_on_leave: opt("halt_on_leave")
                .map(|v| parse_bool("halt_on_leave", v))
                .transpose()?
                .unwrap_or(false),
            trace_stride: opt("trace_stride").map(|v| parse_value("trace_stride", v)).transpose()?.unwrap_or(1),
        };
        cfg.instance.validate()?;
        if cfg.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        fs::read_to_string(path)?.parse()
    }
}

/// Everything a run needs, derived deterministically from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub y: DenseMatrix,
    pub partition: DataPartition,
    pub graph: Option<Graph>,
    pub mixing: MixingMatrix,
    pub omega: f64,
    pub rho: f64,
    pub run: RunConfig,
    pub dims: NetworkDims,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (y, partition) = gen_instance(&cfg.instance)?;
    let graph = gen_graph(&cfg.instance)?;
    let mixing = match &graph {
        None => MixingMatrix::identity(1),
        Some(g) => metropolis_weights(g)?,
    };
    let mixing = if cfg.lazy { lazy_fix(&mixing) } else { mixing };
    let rho = resolve_rho(cfg.instance.rho, &y)?;
    let run = RunConfig {
        mu: cfg.mu,
        rho,
        max_iters: cfg.max_iters,
        tol_grad: cfg.tol_grad.unwrap_or_else(|| default_tol_grad(&y)),
        tol_consensus: cfg.tol_consensus,
        seed: cfg.instance.seed,
        safety: cfg.safety,
        halt_on_leave: cfg.halt_on_leave,
        trace_stride: cfg.trace_stride,
    };
    run.validate()?;
    let dims = NetworkDims::of(&partition, cfg.instance.r);
    Ok(Prepared {
        omega: omega(&mixing),
        y,
        partition,
        graph,
        mixing,
        rho,
        run,
        dims,
    })
}

/// Seed of Monte-Carlo trial `t`; trial 0 reuses the master seed.
pub fn trial_seed(master: u64, t: usize) -> u64 {
    master.wrapping_add(t as u64)
}

impl Prepared {
    pub fn mu(&self) -> Result<f64> {
        self.run.resolve_mu(&self.mixing, &self.partition)
    }

    pub fn initial_point(&self, trial_seed: u64) -> Result<NetworkPoint> {
        init_in_ball(&self.dims, self.rho, derive_seed(trial_seed, Purpose::Init))
    }

    pub fn run_trial(&self, engine: Engine, trial_seed: u64) -> Result<IterateTrace> {
        let z0 = self.initial_point(trial_seed)?;
        let mut cfg = self.run.clone();
        cfg.seed = trial_seed;
        run(engine, &z0, &cfg, &self.mixing, &self.partition)
    }
}

/// Config echo with every `auto` resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    #[serde(rename = "J")]
    pub nodes: usize,
    pub topology: String,
    pub seed: u64,
    pub mu: f64,
    pub rho: f64,
    pub omega: f64,
    pub widths: Vec<usize>,
    pub max_iters: usize,
    pub tol_grad: f64,
    pub tol_consensus: f64,
    pub tol_gap: f64,
    pub trials: usize,
    pub output_dir: PathBuf,
    pub lazy: bool,
    pub engine: Engine,
    pub safety: f64,
    pub halt_on_leave: bool,
    pub trace_stride: usize,
}

pub fn resolve_config(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ResolvedConfig> {
    Ok(ResolvedConfig {
        n: cfg.instance.n,
        m: cfg.instance.m,
        r: cfg.instance.r,
        nodes: cfg.instance.nodes,
        topology: cfg.instance.topology.to_string(),
        seed: cfg.instance.seed,
        mu: prep.mu()?,
        rho: prep.rho,
        omega: prep.omega,
        widths: prep.partition.widths().to_vec(),
        max_iters: cfg.max_iters,
        tol_grad: prep.run.tol_grad,
        tol_consensus: cfg.tol_consensus,
        tol_gap: cfg.tol_gap,
        trials: cfg.trials,
        output_dir: cfg.output_dir.clone(),
        lazy: cfg.lazy,
        engine: cfg.engine,
        safety: cfg.safety,
        halt_on_leave: cfg.halt_on_leave,
        trace_stride: cfg.trace_stride,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    std::io::Write::write_all(&mut f, b"\n")?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: RunSummary,
    pub trace: IterateTrace,
    pub output_dir: PathBuf,
}

impl ExperimentOutcome {
    /// Process exit status: zero iff the gradient tolerance was met.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.summary.status != Status::GradToleranceMet)
    }
}

/// Run one experiment and write `trace.csv`, `summary.json` and
/// `config.json` into the configured output directory.
pub fn run_experiment_config(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prep = prepare(cfg)?;
    let resolved = resolve_config(cfg, &prep)?;
    let trace = prep.run_trial(cfg.engine, cfg.instance.seed)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    trace.write_csv(BufWriter::new(fs::File::create(dir.join("trace.csv"))?))?;
    let summary = trace.summary();
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("config.json"), &resolved)?;
    Ok(ExperimentOutcome {
        summary,
        trace,
        output_dir: dir.clone(),
    })
}

pub fn run_experiment(path: impl AsRef<Path>) -> Result<ExperimentOutcome> {
    run_experiment_config(&ExperimentConfig::load(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub status: Status,
    pub iters: usize,
    pub final_consensus_err: f64,
    pub final_opt_gap: f64,
    pub rel_opt_gap: f64,
    pub final_grad_norm: f64,
    pub left_ball_ever: bool,
    pub descent_violations: usize,
    /// Consensus and relative gap both within tolerance.
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub mu: f64,
    pub rho: f64,
    pub success_fraction: f64,
    /// Success fraction among trials that never left the ball; `None` when
    /// every trial left it.
    pub in_ball_success_fraction: Option<f64>,
    pub left_ball_fraction: f64,
    pub results: Vec<TrialResult>,
}

fn trial_result(t: usize, seed: u64, trace: &IterateTrace, cfg: &ExperimentConfig, y_norm_sq: f64) -> TrialResult {
    let last = trace.last();
    let rel = last.opt_gap / y_norm_sq.max(f64::MIN_POSITIVE);
    let success = last.consensus_err <= cfg.tol_consensus && rel <= cfg.tol_gap;
    TrialResult {
        trial: t,
        seed,
        status: trace.status,
        iters: trace.iters,
        final_consensus_err: last.consensus_err,
        final_opt_gap: last.opt_gap,
        rel_opt_gap: rel,
        final_grad_norm: last.grad_norm,
        left_ball_ever: trace.left_ball_ever,
        descent_violations: trace.descent_violations,
        success,
    }
}

/// Run `trials` independent initializations on the config's instance.
/// Trial `t` uses seed `seed + t`; results are ordered by trial index.
pub fn monte_carlo(cfg: &ExperimentConfig, trials: usize) -> Result<MonteCarloSummary> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut prep = prepare(cfg)?;
    // only the final record is needed
    prep.run.trace_stride = usize::MAX;
    let mu = prep.mu()?;
    let y_norm_sq = prep.y.frob_norm_sq();
    let one = |t: usize| -> Result<TrialResult> {
        let seed = trial_seed(cfg.instance.seed, t);
        let trace = prep.run_trial(cfg.engine, seed)?;
        Ok(trial_result(t, seed, &trace, cfg, y_norm_sq))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<TrialResult> = {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<TrialResult> = (0..trials).map(one).collect::<Result<_>>()?;

    let frac = |count: usize, of: usize| count as f64 / of as f64;
    let in_ball: Vec<&TrialResult> = results.iter().filter(|r| !r.left_ball_ever).collect();
    Ok(MonteCarloSummary {
        trials,
        mu,
        rho: prep.rho,
        success_fraction: frac(results.iter().filter(|r| r.success).count(), trials),
        in_ball_success_fraction: (!in_ball.is_empty())
            .then(|| frac(in_ball.iter().filter(|r| r.success).count(), in_ball.len())),
        left_ball_fraction: frac(trials - in_ball.len(), trials),
        results,
    })
}

/// Max relative deviation between DGD+LOCAL and gradient descent on `g`
/// over `k` steps from the config's initial point.
pub fn equivalence_for(cfg: &ExperimentConfig, k: usize) -> Result<f64> {
    let prep = prepare(cfg)?;
    let z0 = prep.initial_point(cfg.instance.seed)?;
    equivalence_check(&z0, &prep.mixing, prep.mu()?, &prep.partition, k)
}

/// All bound values for a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub rho: f64,
    pub l0: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub omega: f64,
    /// `L + 2 omega / mu` with `L = max_j l2` and the resolved stepsize.
    pub lg: f64,
    /// `(1 - 2 omega) / max_j l2`; `None` when omega >= 1/2.
    pub mu_generic: Option<f64>,
    /// Windowed bound for matrix factorization; `None` when omega >= 1/2.
    pub mu_mf: Option<f64>,
    pub mu: Option<f64>,
}

pub fn bounds_report(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    let prep = prepare(cfg)?;
    let norms = prep.partition.block_norms();
    let triples: Vec<_> = norms.iter().map(|&y| local_bounds(prep.rho, y)).collect();
    let l2 = triples.iter().map(|b| b.l2).collect::<Vec<_>>();
    let l_max = l2.iter().copied().fold(0.0, f64::max);
    let mu_generic = stepsize_generic(l_max, prep.omega).ok();
    let mu_mf = stepsize_mf(prep.rho, prep.omega, &norms).ok();
    let mu = prep.mu().ok();
    Ok(BoundsReport {
        rho: prep.rho,
        l0: triples.iter().map(|b| b.l0).collect(),
        l1: triples.iter().map(|b| b.l1).collect(),
        l2,
        omega: prep.omega,
        lg: mu.map_or(f64::INFINITY, |mu| lipschitz_lg(l_max, prep.omega, mu)),
        mu_generic,
        mu_mf,
        mu,
    })
}

/// Write `y.txt`, `y_<j>.txt` (one-based), `partition.txt`, `graph.txt`
/// and `mixing.txt` for the config's instance.
pub fn write_instance(cfg: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let prep = prepare(cfg)?;
    let mut written = Vec::new();
    let mut put = |name: String, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        f(&path)?;
        written.push(path);
        Ok(())
    };
    put("y.txt".into(), &|p| prep.y.save(p))?;
    for (j, block) in prep.partition.blocks().iter().enumerate() {
        put(format!("y_{}.txt", j + 1), &|p| block.save(p))?;
    }
    put("partition.txt".into(), &|p| {
        let widths: Vec<String> = prep.partition.widths().iter().map(usize::to_string).collect();
        fs::write(p, format!("{}\n", widths.join(" "))).map_err(Error::from)
    })?;
    if let Some(g) = &prep.graph {
        put("graph.txt".into(), &|p| g.write_text(BufWriter::new(fs::File::create(p)?)))?;
    }
    put("mixing.txt".into(), &|p| prep.mixing.save(p))?;
    Ok(written)
}
