//! Configuration ingestion, subcommand dispatch and reproducibility
//! manifests.
//!
//! A run is a TOML config plus one subcommand. Every output is a tidy CSV
//! or JSON file in the output directory, and each run writes a manifest
//! (`<subcommand>.manifest.json`) echoing the configuration and the
//! SHA-256 of every file it produced. Identical configs (including the
//! seed) produce byte-identical data files, regardless of `--threads`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{self, FlowSolverConfig, TimeToReach};
use crate::lyapunov;
use crate::model::{ChemostatParams, GrowthLaw};
use crate::qsd::{self, derive_seed};
use crate::simulate::{self, RngStream};
use crate::bounds;

/// Version stamp written into every manifest.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------
// configuration file
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConfig {
    pub kind: String,
    pub c: Option<f64>,
    pub m: Option<f64>,
    #[serde(rename = "K")]
    pub half_saturation: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "D")]
    pub d: f64,
    pub s_in: f64,
    pub k: f64,
    pub growth: GrowthConfig,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub max_step: Option<f64>,
    pub root_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    pub l_max: Option<u64>,
    pub ells: Option<Vec<u64>>,
    pub s0: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub x0: u64,
    pub s0: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovBlock {
    pub rho: Option<f64>,
    pub p: Option<f64>,
    pub x_max: Option<u64>,
    pub s_points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QsdBlock {
    pub x0: u64,
    pub s0: f64,
    /// Horizon of the naive conditioned estimate.
    pub t: Option<f64>,
    pub n_paths: Option<u64>,
    pub particles: Option<usize>,
    pub fv_time: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub yaglom_a: Option<(u64, f64)>,
    pub yaglom_b: Option<(u64, f64)>,
    pub yaglom_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PdPbSpec {
    pub n: u64,
    pub ell: u64,
    pub t: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SmallSetBlock {
    pub tau0: f64,
    pub s0: f64,
    pub s1: f64,
    pub mc_paths: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HittingBlock {
    pub n_k: u64,
    pub s_min: f64,
    pub s_max: f64,
    pub start: (u64, f64),
    pub target: (u64, f64),
    pub tau0: f64,
    pub tau: f64,
    pub eps: f64,
    pub delta: f64,
    pub box_halfwidth: Option<f64>,
    pub mc_paths: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InvMomentBlock {
    pub x: u64,
    pub t: f64,
    pub mc_paths: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExpMomentBlock {
    pub x: u64,
    pub s: Option<f64>,
    pub t_cap: Option<f64>,
    pub mc_paths: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsBlock {
    pub pd_pb: Option<Vec<PdPbSpec>>,
    pub smallset: Option<SmallSetBlock>,
    pub hitting: Option<HittingBlock>,
    pub inv_moment: Option<InvMomentBlock>,
    pub exp_moment: Option<ExpMomentBlock>,
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub solver: Option<SolverBlock>,
    pub flow: Option<FlowBlock>,
    pub simulate: Option<SimulateBlock>,
    pub lyapunov: Option<LyapunovBlock>,
    pub qsd: Option<QsdBlock>,
    pub bounds: Option<BoundsBlock>,
}

impl RunConfig {
    /// Builds the growth law, collecting precise per-key complaints.
    fn growth_law(&self, errors: &mut Vec<String>) -> Option<GrowthLaw> {
        let g = &self.model.growth;
        match g.kind.as_str() {
            "linear" => {
                if g.m.is_some() || g.half_saturation.is_some() {
                    errors.push("growth.kind = \"linear\" forbids keys `growth.m` and `growth.K`".into());
                    return None;
                }
                match g.c {
                    Some(c) if c > 0.0 => Some(GrowthLaw::Linear { c }),
                    Some(c) => {
                        errors.push(format!("growth.c must be positive, got {c}"));
                        None
                    }
                    None => {
                        errors.push("growth.kind = \"linear\" requires key `growth.c`".into());
                        None
                    }
                }
            }
            "monod" => {
                if g.c.is_some() {
                    errors.push("growth.kind = \"monod\" forbids key `growth.c`".into());
                    return None;
                }
                match (g.m, g.half_saturation) {
                    (Some(m), Some(kh)) if m > 0.0 && kh > 0.0 => {
                        Some(GrowthLaw::Monod { m, half_saturation: kh })
                    }
                    (Some(m), Some(kh)) => {
                        errors.push(format!("growth.m and growth.K must be positive, got {m} and {kh}"));
                        None
                    }
                    _ => {
                        errors.push("growth.kind = \"monod\" requires keys `growth.m` and `growth.K`".into());
                        None
                    }
                }
            }
            other => {
                errors.push(format!("unknown growth.kind `{other}` (expected \"linear\" or \"monod\")"));
                None
            }
        }
    }

    /// Model parameters after full validation; errors are itemized.
    pub fn params(&self) -> Result<ChemostatParams> {
        let mut errors = Vec::new();
        for (name, v) in [("D", self.model.d), ("s_in", self.model.s_in), ("k", self.model.k)] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("model key `{name}` must be positive and finite, got {v}"));
            }
        }
        let law = self.growth_law(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors.join("; ")));
        }
        ChemostatParams::new(self.model.d, self.model.s_in, self.model.k, law.expect("validated"))
    }

    pub fn solver(&self) -> Result<FlowSolverConfig> {
        let mut cfg = FlowSolverConfig::default();
        if let Some(s) = &self.solver {
            if let Some(v) = s.abs_tol {
                cfg.abs_tol = v;
            }
            if let Some(v) = s.rel_tol {
                cfg.rel_tol = v;
            }
            if let Some(v) = s.max_step {
                cfg.max_step = v;
            }
            if let Some(v) = s.root_tol {
                cfg.root_tol = v;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: RunConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
    cfg.params()?; // surface model errors eagerly, itemized
    cfg.solver()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------
// command line
// ---------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "chemostat-qsd", version, about = "Simulation and certificates for the hybrid chemostat process")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (falls back to the config `out`, then `./runs`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (env CHEMOSTAT_QSD_THREADS as fallback).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub x0: Option<u64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub replicas: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Equilibrium table and the flow with its two inverse maps, as CSV.
    Flow,
    /// Exact trajectories: CSV event log plus a JSON-lines summary.
    Simulate(SimulateArgs),
    /// Drift certificate for the selected Lyapunov parameters, as JSON.
    VerifyLyapunov,
    /// Conditioned-law histogram, extinction-rate report and Yaglom decay.
    Qsd,
    /// Explicit probability bounds with Monte-Carlo cross-checks, as JSON.
    Bounds,
    /// Aggregates the manifests in the output directory.
    Report,
}

/// One produced file, as recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Reproducibility record written at the end of every run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputRecord>,
}

struct RunContext {
    out_dir: PathBuf,
    outputs: Vec<OutputRecord>,
}

impl RunContext {
    fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(RunContext { out_dir: out_dir.to_path_buf(), outputs: Vec::new() })
    }

    /// Writes a data file and records its checksum.
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents)?;
        let digest = Sha256::digest(contents.as_bytes());
        let mut hexs = String::with_capacity(64);
        for b in digest {
            let _ = write!(hexs, "{b:02x}");
        }
        self.outputs.push(OutputRecord { path: name.to_string(), sha256: hexs, bytes: contents.len() as u64 });
        Ok(())
    }

    /// Writes the manifest atomically (temp file + rename).
    fn finish(self, subcommand: &str, config: &RunConfig, seed: Option<u64>, started: Instant) -> Result<()> {
        let manifest = RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).map_err(|e| Error::Invariant(e.to_string()))?,
            seed,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let name = format!("{subcommand}.manifest.json");
        let tmp = self.out_dir.join(format!(".{name}.tmp"));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invariant(e.to_string()))?;
        fs::write(&tmp, text)?;
        fs::rename(&tmp, self.out_dir.join(name))?;
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn to_json(value: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Invariant(format!("serialization failed: {e}")))
}

// ---------------------------------------------------------------------
// subcommand implementations
// ---------------------------------------------------------------------

fn run_flow(cfgfile: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let params = cfgfile.params()?;
    let solver = cfgfile.solver()?;
    let block = cfgfile.flow.clone().unwrap_or(FlowBlock { l_max: None, ells: None, s0: None, times: None });
    let l_max = block.l_max.unwrap_or(20);
    let s1 = params.s_bar_1();
    let ells = block.ells.unwrap_or_else(|| vec![1, 2, 5]);
    let s0s = block.s0.unwrap_or_else(|| vec![0.25 * s1, 0.5 * s1, 1.5 * s1]);
    let times = block.times.unwrap_or_else(|| vec![0.1, 0.5, 1.0, 2.0]);

    let table = flow::EquilibriumTable::new(&params, l_max, &solver)?;
    let mut csv = String::from("ell,s_bar,residual\n");
    for (i, &v) in table.values().iter().enumerate() {
        let ell = i as u64 + 1;
        let residual = params.substrate_rhs(ell, v).abs();
        let _ = writeln!(csv, "{ell},{},{}", fmt_f64(v), fmt_f64(residual));
    }
    ctx.write("equilibria.csv", &csv)?;

    let mut maps = String::from("ell,s0,t,phi,phi_tilde,phi_inv_s\n");
    for &ell in &ells {
        for &s0 in &s0s {
            for &t in &times {
                let phi = flow::flow(&params, ell, s0, t, &solver)?;
                let phit = match flow::time_to_reach(&params, ell, s0, phi, &solver)? {
                    TimeToReach::Finite(v) => fmt_f64(v),
                    TimeToReach::Unreachable { .. } => "inf".into(),
                };
                // near-equilibrium inversions are below solver resolution
                let phis = match flow::initial_for(&params, ell, phi, t, &solver) {
                    Ok(v) => fmt_f64(v),
                    Err(Error::Numeric(_)) => "nan".into(),
                    Err(e) => return Err(e),
                };
                let _ = writeln!(maps, "{ell},{},{},{},{phit},{phis}", fmt_f64(s0), fmt_f64(t), fmt_f64(phi));
            }
        }
    }
    ctx.write("flow_maps.csv", &maps)?;
    Ok(())
}

fn run_simulate(cfgfile: &RunConfig, args: &SimulateArgs, seed: u64, ctx: &mut RunContext) -> Result<()> {
    let params = cfgfile.params()?;
    let solver = cfgfile.solver()?;
    let block = cfgfile
        .simulate
        .clone()
        .or_else(|| match (args.x0, args.s0, args.horizon) {
            (Some(x0), Some(s0), Some(horizon)) => Some(SimulateBlock { x0, s0, horizon }),
            _ => None,
        })
        .ok_or_else(|| Error::Config("simulate needs a [simulate] block or --x0/--s0/--horizon flags".into()))?;
    let x0 = args.x0.unwrap_or(block.x0);
    let s0 = args.s0.unwrap_or(block.s0);
    let horizon = args.horizon.unwrap_or(block.horizon);
    let replicas = args.replicas.or(cfgfile.replicas).unwrap_or(1);
    if replicas == 0 {
        return Err(Error::Config("replicas must be >= 1".into()));
    }

    let paths = simulate::run_replicas(replicas, seed, |_i, rng| {
        simulate::simulate_path(&params, x0, s0, horizon, rng, &solver)
    })?;

    let mut csv = String::from("replica,t,kind,x_after,s\n");
    let mut summary = String::new();
    #[derive(Serialize)]
    struct ReplicaSummary {
        replica: u64,
        extinct_at: Option<f64>,
        events: usize,
        final_x: u64,
        final_s: f64,
    }
    for (i, tr) in paths.iter().enumerate() {
        let _ = writeln!(csv, "{i},0,init,{},{}", tr.initial.x, fmt_f64(tr.initial.s));
        for e in &tr.events {
            let kind = match e.kind {
                simulate::JumpKind::Division => "division",
                simulate::JumpKind::Washout => "washout",
            };
            let _ = writeln!(csv, "{i},{},{kind},{},{}", fmt_f64(e.time), e.x_after, fmt_f64(e.s_at_jump));
        }
        let end = tr.state_at(&params, horizon, &solver)?;
        let _ = writeln!(csv, "{i},{},end,{},{}", fmt_f64(horizon), end.x, fmt_f64(end.s));
        let line = serde_json::to_string(&ReplicaSummary {
            replica: i as u64,
            extinct_at: tr.extinct_at,
            events: tr.events.len(),
            final_x: end.x,
            final_s: end.s,
        })
        .map_err(|e| Error::Invariant(e.to_string()))?;
        summary.push_str(&line);
        summary.push('\n');
    }
    ctx.write("trajectories.csv", &csv)?;
    ctx.write("summary.jsonl", &summary)?;
    Ok(())
}

fn run_verify_lyapunov(cfgfile: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let params = cfgfile.params()?;
    let block = cfgfile
        .lyapunov
        .clone()
        .unwrap_or(LyapunovBlock { rho: None, p: None, x_max: None, s_points: None });
    let rho = block.rho.unwrap_or(2.0);
    let p_max = params
        .p_max()
        .ok_or_else(|| Error::Config("survival hypothesis mu(s_bar_1) > D fails; nothing to certify".into()))?;
    let p = block.p.unwrap_or(0.5 * p_max);
    let config = lyapunov::select_parameters(&params, rho, p)?;
    let mut grid = lyapunov::DriftGrid::default_for(&params);
    if let Some(x_max) = block.x_max {
        grid.x_max = x_max;
    }
    if let Some(s_points) = block.s_points {
        grid.s_points = s_points;
    }
    let cert = lyapunov::verify_drift(&params, &config, &grid);
    #[derive(Serialize)]
    struct CertificateReport {
        validation: crate::model::ValidationReport,
        sandwich_constants: (f64, f64),
        certificate: lyapunov::DriftCertificate,
        zeta_t_at_1: f64,
    }
    let report = CertificateReport {
        validation: crate::model::validate(&params),
        sandwich_constants: lyapunov::sandwich_constants(&config, &params),
        zeta_t_at_1: cert.zeta_t(&params, 1.0),
        certificate: cert,
    };
    ctx.write("lyapunov_certificate.json", &to_json(&report)?)?;
    Ok(())
}

fn histogram_csv(est: &qsd::QsdEstimate) -> String {
    let spec = est.histogram.spec;
    let mut csv = String::from("x,s_bin_lo,s_bin_hi,mass,stderr\n");
    for row in 0..spec.rows() {
        let x_label = if row == spec.x_cap as usize {
            format!(">{}", spec.x_cap)
        } else {
            format!("{}", row as u64 + 1)
        };
        for col in 0..spec.s_bins {
            let idx = row * spec.s_bins + col;
            let mass = est.histogram.mass()[idx];
            if mass == 0.0 {
                continue;
            }
            let (lo, hi) = spec.s_bin_edges(col);
            let _ = writeln!(
                csv,
                "{x_label},{},{},{},{}",
                fmt_f64(lo),
                fmt_f64(hi),
                fmt_f64(mass),
                fmt_f64(est.histogram.cell_stderr(idx))
            );
        }
    }
    csv
}

fn run_qsd(cfgfile: &RunConfig, seed: u64, ctx: &mut RunContext) -> Result<()> {
    let params = cfgfile.params()?;
    let solver = cfgfile.solver()?;
    let block = cfgfile
        .qsd
        .clone()
        .ok_or_else(|| Error::Config("qsd needs a [qsd] block (x0, s0 at least)".into()))?;
    let s1 = params.s_bar_1();
    let t = block.t.unwrap_or(10.0);
    let n_paths = block.n_paths.unwrap_or(20_000);
    let particles = block.particles.unwrap_or(1_000);
    let fv_time = block.fv_time.unwrap_or(20.0);
    let lambda_grid = block.lambda_grid.unwrap_or_else(|| vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
    let yaglom_a = block.yaglom_a.unwrap_or((1, 0.2 * s1));
    let yaglom_b = block.yaglom_b.unwrap_or((4, 0.9 * s1));
    let yaglom_grid = block.yaglom_grid.unwrap_or_else(|| vec![2.0, 5.0, 10.0]);

    // Fleming-Viot estimate (robust at long horizons).
    let ensemble = qsd::ParticleEnsemble::at_point(particles, block.x0, block.s0)?;
    let mut fv_rng = RngStream::new(derive_seed(seed, 0xFEE1), 0).rng();
    let (_final, fv_est, fv_lambda) = qsd::evolve_fleming_viot(&params, &ensemble, fv_time, &mut fv_rng, &solver)?;
    ctx.write("qsd_histogram.csv", &histogram_csv(&fv_est))?;

    // Naive cross-check at the configured horizon.
    let naive = qsd::estimate_qsd_naive(&params, block.x0, block.s0, t, n_paths, derive_seed(seed, 0xA1), &solver);

    // Extinction-rate report: survival regression plus the kill-rate read.
    let lambda_surv =
        qsd::estimate_lambda_survival(&params, block.x0, block.s0, &lambda_grid, n_paths, derive_seed(seed, 0xB2), &solver)?;
    #[derive(Serialize)]
    struct LambdaReport {
        survival_regression: qsd::LambdaEstimate,
        fleming_viot: qsd::LambdaEstimate,
        dilution_rate: f64,
        naive_vs_fv_tv: Option<f64>,
        naive_error: Option<String>,
    }
    let (naive_tv, naive_err) = match naive {
        Ok(est) => {
            // both estimates projected onto a coarse shared binning
            let s_hi = est.histogram.spec.s_hi.max(fv_est.histogram.spec.s_hi);
            let x_cap = est.histogram.spec.x_cap.max(fv_est.histogram.spec.x_cap);
            let tv = crate::stats::HistogramSpec::new(x_cap, 0.0, s_hi, 16).ok().and_then(|shared| {
                est.histogram.project(shared).total_variation(&fv_est.histogram.project(shared)).ok()
            });
            (tv, None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let report = LambdaReport {
        survival_regression: lambda_surv,
        fleming_viot: fv_lambda,
        dilution_rate: params.dilution(),
        naive_vs_fv_tv: naive_tv,
        naive_error: naive_err,
    };
    ctx.write("lambda_report.json", &to_json(&report)?)?;

    // Yaglom decay between the two configured starting points.
    let yag = qsd::yaglom_distance(&params, yaglom_a, yaglom_b, &yaglom_grid, n_paths, derive_seed(seed, 0xC3), &solver)?;
    let mut csv = String::from("t,tv,ci_low,ci_high,survivors_a,survivors_b\n");
    for (j, &tj) in yag.times.iter().enumerate() {
        let e = yag.tv[j];
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            fmt_f64(tj),
            fmt_f64(e.tv),
            fmt_f64(e.ci_low),
            fmt_f64(e.ci_high),
            yag.survivors_a[j],
            yag.survivors_b[j]
        );
    }
    ctx.write("yaglom_decay.csv", &csv)?;
    Ok(())
}

fn run_bounds(cfgfile: &RunConfig, seed: u64, ctx: &mut RunContext) -> Result<()> {
    let params = cfgfile.params()?;
    let solver = cfgfile.solver()?;
    let block = cfgfile.bounds.clone().unwrap_or(BoundsBlock {
        pd_pb: None,
        smallset: None,
        hitting: None,
        inv_moment: None,
        exp_moment: None,
    });
    let s1 = params.s_bar_1();

    #[derive(Serialize)]
    struct PdPbRow {
        n: u64,
        ell: u64,
        t: f64,
        p_death: f64,
        p_birth: f64,
    }
    let mut pd_pb_rows = Vec::new();
    let specs = block.pd_pb.unwrap_or_else(|| {
        vec![PdPbSpec { n: 2, ell: 1, t: 0.4 }, PdPbSpec { n: 3, ell: 2, t: 0.5 }]
    });
    for s in &specs {
        let bd = bounds::BirthDeathSpec::for_params(&params, s.n)?;
        pd_pb_rows.push(PdPbRow {
            n: s.n,
            ell: s.ell,
            t: s.t,
            p_death: bounds::p_death(&bd, s.ell, s.t)?,
            p_birth: bounds::p_birth(&bd, s.ell, s.t)?,
        });
    }

    let smallset_block = block.smallset.unwrap_or(SmallSetBlock {
        tau0: 0.2,
        s0: 0.1 * s1,
        s1: 0.14 * s1,
        mc_paths: None,
    });
    let smallset = bounds::small_set_constant(&params, smallset_block.tau0, smallset_block.s0, smallset_block.s1, &solver)?;

    let hitting = match &block.hitting {
        Some(h) => Some(bounds::hitting_lower_bound(
            &params,
            &bounds::HittingScenario {
                n_k: h.n_k,
                s_min: h.s_min,
                s_max: h.s_max,
                start_x: h.start.0,
                start_s: h.start.1,
                target_x: h.target.0,
                target_s: h.target.1,
                tau0: h.tau0,
                tau: h.tau,
                eps: h.eps,
                delta: h.delta,
                box_halfwidth: h.box_halfwidth.unwrap_or(1e-3 * s1),
            },
            h.mc_paths.map(|n| (n, derive_seed(seed, 0xD4))),
            &solver,
        )?),
        None => None,
    };

    let inv_block = block.inv_moment.unwrap_or(InvMomentBlock { x: 1, t: 0.3, mc_paths: None });
    let inv_moment = bounds::inv_substrate_moment_bound(
        &params,
        inv_block.x,
        inv_block.t,
        inv_block.mc_paths.unwrap_or(20_000),
        derive_seed(seed, 0xE5),
        &solver,
    )?;

    let exp_moment = match &block.exp_moment {
        Some(e) => {
            let g = lyapunov::scan_g_constants(&params)?;
            let (_c, g_cert) = lyapunov::g_drift_check(&params, g.eps, g.beta, g.delta0, g.delta1)?;
            Some((
                g_cert,
                bounds::exp_moment_check(
                    &params,
                    &g,
                    e.x,
                    e.s.unwrap_or(s1),
                    e.t_cap.unwrap_or(25.0),
                    e.mc_paths.unwrap_or(10_000),
                    derive_seed(seed, 0xF6),
                    &solver,
                )?,
            ))
        }
        None => None,
    };

    #[derive(Serialize)]
    struct BoundsReport {
        pd_pb: Vec<PdPbRow>,
        smallset: bounds::SmallSetConstant,
        hitting: Option<bounds::HittingBoundReport>,
        inv_moment: bounds::InvSubstrateMomentReport,
        exp_moment: Option<(lyapunov::GCertificate, bounds::ExpMomentReport)>,
    }
    let report = BoundsReport { pd_pb: pd_pb_rows, smallset, hitting, inv_moment, exp_moment };
    ctx.write("bounds_report.json", &to_json(&report)?)?;
    Ok(())
}

fn run_report(out_dir: &Path, ctx: &mut RunContext) -> Result<()> {
    #[derive(Serialize)]
    struct Summary {
        manifests: Vec<RunManifest>,
        total_outputs: usize,
    }
    let mut manifests = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(out_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().map_or(false, |n| n.to_string_lossy().ends_with(".manifest.json")))
        .collect();
    entries.sort();
    for path in entries {
        let text = fs::read_to_string(&path)?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("unreadable manifest {}: {e}", path.display())))?;
        manifests.push(manifest);
    }
    let total_outputs = manifests.iter().map(|m| m.outputs.len()).sum();
    let summary = Summary { manifests, total_outputs };
    ctx.write("summary.json", &to_json(&summary)?)?;
    Ok(())
}

// ---------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------

fn thread_count(cli: &Cli) -> Option<usize> {
    cli.threads.or_else(|| {
        std::env::var("CHEMOSTAT_QSD_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

/// Runs one parsed invocation; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match try_run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn try_run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let config = match &cli.command {
        // `report` only reads manifests; a config is optional for it.
        Command::Report => cli.config.as_deref().map(parse_config).transpose()?,
        _ => Some(parse_config(cli.config.as_deref().ok_or_else(|| {
            Error::Config("--config <path> is required for this subcommand".into())
        })?)?),
    };
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("runs"));

    let body = || -> Result<()> {
        let mut ctx = RunContext::new(&out_dir)?;
        let (name, seed) = match &cli.command {
            Command::Flow => {
                let cfg = config.as_ref().expect("config required");
                run_flow(cfg, &mut ctx)?;
                ("flow", None)
            }
            Command::Simulate(args) => {
                let cfg = config.as_ref().expect("config required");
                let seed = cli.seed.or(cfg.seed).ok_or_else(|| {
                    Error::Config("a `seed` is required for stochastic subcommands".into())
                })?;
                run_simulate(cfg, args, seed, &mut ctx)?;
                ("simulate", Some(seed))
            }
            Command::VerifyLyapunov => {
                let cfg = config.as_ref().expect("config required");
                run_verify_lyapunov(cfg, &mut ctx)?;
                ("verify-lyapunov", None)
            }
            Command::Qsd => {
                let cfg = config.as_ref().expect("config required");
                let seed = cli.seed.or(cfg.seed).ok_or_else(|| {
                    Error::Config("a `seed` is required for stochastic subcommands".into())
                })?;
                run_qsd(cfg, seed, &mut ctx)?;
                ("qsd", Some(seed))
            }
            Command::Bounds => {
                let cfg = config.as_ref().expect("config required");
                let seed = cli.seed.or(cfg.seed).ok_or_else(|| {
                    Error::Config("a `seed` is required for stochastic subcommands".into())
                })?;
                run_bounds(cfg, seed, &mut ctx)?;
                ("bounds", Some(seed))
            }
            Command::Report => {
                run_report(&out_dir, &mut ctx)?;
                ("report", None)
            }
        };
        match &config {
            Some(cfg) => ctx.finish(name, cfg, seed, started)?,
            None => {
                // report without a config: synthesize a minimal echo
                let placeholder = RunConfig {
                    seed: None,
                    replicas: None,
                    out: Some(out_dir.clone()),
                    model: ModelConfig {
                        d: 1.0,
                        s_in: 1.0,
                        k: 1.0,
                        growth: GrowthConfig { kind: "linear".into(), c: Some(1.0), m: None, half_saturation: None },
                    },
                    solver: None,
                    flow: None,
                    simulate: None,
                    lyapunov: None,
                    qsd: None,
                    bounds: None,
                };
                ctx.finish(name, &placeholder, seed, started)?;
            }
        }
        Ok(())
    };

    match thread_count(cli) {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(body)
        }
        None => body(),
    }
}
