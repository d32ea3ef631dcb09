//! Command-line front end: config loading, subcommand dispatch, artifact
//! writing, exit codes. Exit 0 on success, 1 on usage/config errors (the
//! offending key is named), 2 on model-validation failure, 3 on identity or
//! bound-check failure.

use crate::config::{parse_config, ConfigError, RunConfig};
use crate::jumpalgebra::{self, JumpSequence};
use crate::kernel::DensityEvaluator;
use crate::ledger::{build_ledger, ConstantLedger, LedgerParams};
use crate::model::{symmetrize, validate_model, ProbeConfig};
use crate::pathsim::{self, PathConfig, RngStream};
use crate::series::{
    build_integrated, build_slice, kato_curve, truncated_density, Family, Grid, KatoCurve,
    SliceTables,
};
use crate::verify::{
    check_domination, check_growth_bounds, check_half_domination, check_lower_holder,
    check_sandwich, check_symmetry, BoundReport, HolderPanelCell,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const VERSION: &str = env!("CARGO_PKG_VERSION");

const USAGE: &str = "\
usage: stable-fk <subcommand> [flags]

subcommands:
  validate        check model and perturbation invariants on the probe grid
  simulate        sample paths, write paths.csv (path_id,n_jumps,a_t,x_t)
  mc              Monte Carlo estimates, write mc.csv
  identity-check  exact power-expansion identities, write identity.csv
  qn              perturbation-term tables, write qn.csv (n,t,x,z,q,qbar)
  density         truncated series values, write density.csv (t,x,z,q,tail,p)
  kato            Kato functional curve, write kato.csv (t,c_t)
  constants       constant ledger, write constants.txt
  bounds-report   full verification report, write report.txt

flags:
  --config PATH   sectioned key=value config file (defaults when omitted)
  --out DIR       output directory (default .)
  --seed N        override sim.seed
  --threads N     rayon thread count (0 = automatic)
  --set S.K=V     override one config key (repeatable)
  --n-max N       identity-check: highest power (default 8)
  --trials N      identity-check: random sequences (default 1000)
  --help          this text
";

enum CliError {
    Usage(String),
    Config(ConfigError),
    Io(String),
    Run(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

macro_rules! run_err {
    ($($arg:tt)*) => {
        |e| CliError::Run(format!("{}: {e}", format!($($arg)*)))
    };
}

struct CliArgs {
    subcommand: String,
    config_path: Option<String>,
    out_dir: PathBuf,
    seed: Option<u64>,
    threads: usize,
    overrides: Vec<String>,
    n_max: u32,
    trials: u64,
}

fn parse_args(args: &[String]) -> Result<CliArgs, CliError> {
    let mut parsed = CliArgs {
        subcommand: String::new(),
        config_path: None,
        out_dir: PathBuf::from("."),
        seed: None,
        threads: 0,
        overrides: Vec::new(),
        n_max: 8,
        trials: 1000,
    };
    let mut iter = args.iter();
    let need_value = |iter: &mut std::slice::Iter<String>, flag: &str| {
        iter.next()
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("flag {flag} needs a value")))
    };
    while let Some(arg) = iter.next() {
        match arg.as_str() {
            "--help" | "-h" => return Err(CliError::Usage(String::new())),
            "--config" => parsed.config_path = Some(need_value(&mut iter, "--config")?),
            "--out" => parsed.out_dir = PathBuf::from(need_value(&mut iter, "--out")?),
            "--seed" => {
                let v = need_value(&mut iter, "--seed")?;
                parsed.seed = Some(
                    v.parse()
                        .map_err(|e| CliError::Usage(format!("bad --seed '{v}': {e}")))?,
                );
            }
            "--threads" => {
                let v = need_value(&mut iter, "--threads")?;
                parsed.threads = v
                    .parse()
                    .map_err(|e| CliError::Usage(format!("bad --threads '{v}': {e}")))?;
            }
            "--set" => parsed.overrides.push(need_value(&mut iter, "--set")?),
            "--n-max" => {
                let v = need_value(&mut iter, "--n-max")?;
                parsed.n_max = v
                    .parse()
                    .map_err(|e| CliError::Usage(format!("bad --n-max '{v}': {e}")))?;
            }
            "--trials" => {
                let v = need_value(&mut iter, "--trials")?;
                parsed.trials = v
                    .parse()
                    .map_err(|e| CliError::Usage(format!("bad --trials '{v}': {e}")))?;
            }
            other if other.starts_with('-') => {
                return Err(CliError::Usage(format!("unknown flag '{other}'")));
            }
            other => {
                if parsed.subcommand.is_empty() {
                    parsed.subcommand = other.to_string();
                } else {
                    return Err(CliError::Usage(format!("unexpected argument '{other}'")));
                }
            }
        }
    }
    if parsed.subcommand.is_empty() {
        return Err(CliError::Usage("missing subcommand".to_string()));
    }
    Ok(parsed)
}

fn load_config(args: &CliArgs) -> Result<RunConfig, CliError> {
    let text = match &args.config_path {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config '{path}': {e}")))?,
        None => String::new(),
    };
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("sim.seed={seed}"));
    }
    Ok(parse_config(&text, &overrides)?)
}

fn artifact_header(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# stable-fk {VERSION}");
    let _ = writeln!(out, "# config-hash: {:016x}", cfg.hash);
    let _ = writeln!(out, "# seed: {}", cfg.sim.seed);
    let _ = writeln!(out, "# effective config:");
    for line in cfg.effective.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

fn write_artifact(dir: &Path, name: &str, body: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}

/// Everything the table-driven subcommands share.
struct Workspace {
    grid: Grid,
    eval: DensityEvaluator,
    target_nodes: Vec<usize>,
    signed: Vec<SliceTables>,
    dominating: Vec<SliceTables>,
    kato: KatoCurve,
    ledger: ConstantLedger,
}

fn build_workspace(cfg: &RunConfig) -> Result<Workspace, CliError> {
    let grid = Grid::new(
        cfg.grid.t_max,
        cfg.grid.time_nodes,
        cfg.grid.radius,
        cfg.grid.space_nodes,
        cfg.model.alpha,
    )
    .map_err(run_err!("grid"))?;
    let eval = DensityEvaluator::from_model_with(&cfg.model, cfg.fourier)
        .map_err(run_err!("density evaluator"))?;
    let mut target_nodes = Vec::new();
    for &t in &cfg.series.targets {
        let node = grid.nearest_node(t).map_err(run_err!("target {t}"))?;
        if !target_nodes.contains(&node) {
            target_nodes.push(node);
        }
    }
    let n_max = cfg.series.n_max;
    let mut signed = Vec::new();
    let mut dominating = Vec::new();
    for &z in &target_nodes {
        signed.push(
            build_slice(&cfg.model, &cfg.pert, &grid, &eval, z, n_max, Family::Signed)
                .map_err(run_err!("signed tables at node {z}"))?,
        );
        dominating.push(
            build_slice(
                &cfg.model,
                &cfg.pert,
                &grid,
                &eval,
                z,
                n_max,
                Family::Dominating,
            )
            .map_err(run_err!("dominating tables at node {z}"))?,
        );
    }
    let sym = symmetrize(&cfg.pert);
    let kato = kato_curve(&cfg.model, &sym, &grid, &eval, cfg.series.mu_subdiv)
        .map_err(run_err!("kato curve"))?;
    let ledger = build_ledger(
        &cfg.model,
        &cfg.pert,
        &grid,
        &eval,
        &kato,
        &dominating,
        &LedgerParams {
            target_k: cfg.series.target_k,
            n_max,
            mass_tolerance: 1e-3,
        },
    )
    .map_err(run_err!("ledger"))?;
    Ok(Workspace {
        grid,
        eval,
        target_nodes,
        signed,
        dominating,
        kato,
        ledger,
    })
}

fn path_config(cfg: &RunConfig) -> PathConfig {
    PathConfig {
        epsilon: cfg.sim.epsilon,
        t_horizon: cfg.sim.t_horizon,
        r_sim: cfg.sim.r_sim,
        small_jump_mode: cfg.sim.small_jump_mode,
        floor_ratio: cfg.sim.floor_ratio,
    }
}

fn cmd_validate(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let report = validate_model(&cfg.model, &cfg.pert, &ProbeConfig::default());
    let mut body = artifact_header(cfg);
    if report.is_empty() {
        body.push_str("validation: ok (no sampled invariant violated)\n");
    } else {
        for v in &report {
            let _ = writeln!(body, "violation: {} at {}", v.invariant, v.witness);
        }
    }
    let path = write_artifact(out, "validate.txt", &body)?;
    println!(
        "validate: {} violation(s), report at {}",
        report.len(),
        path.display()
    );
    Ok(if report.is_empty() { 0 } else { 2 })
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let pcfg = path_config(cfg);
    let mut body = artifact_header(cfg);
    let dim = cfg.model.dim;
    let coords: Vec<String> = (0..dim).map(|k| format!("x_t_{k}")).collect();
    let _ = writeln!(body, "path_id,n_jumps,a_t,{}", coords.join(","));
    for i in 0..cfg.sim.paths {
        let path = pathsim::sample_path(
            &cfg.model,
            &cfg.pert,
            &pcfg,
            &vec![0.0; dim],
            RngStream::new(cfg.sim.seed, i),
        )
        .map_err(run_err!("path {i}"))?;
        let a_t = path.additive_functional(&cfg.pert, pcfg.t_horizon);
        let xs: Vec<String> = (0..dim).map(|k| format!("{}", path.x_terminal[k])).collect();
        let _ = writeln!(body, "{i},{},{a_t},{}", path.jumps.len(), xs.join(","));
    }
    let path = write_artifact(out, "paths.csv", &body)?;
    println!("simulate: {} paths written to {}", cfg.sim.paths, path.display());
    Ok(0)
}

fn cmd_mc(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let pcfg = path_config(cfg);
    let dim = cfg.model.dim;
    let x0 = vec![0.0; dim];
    let t = pcfg.t_horizon;
    let stream = RngStream::new(cfg.sim.seed, 0);
    let mut body = artifact_header(cfg);
    let _ = writeln!(body, "quantity,n,estimate,std_error");
    let (fk, fk_se) = pathsim::feynman_kac_mc(
        &cfg.model, &cfg.pert, &pcfg, &x0, |_| 1.0, t, cfg.sim.paths, stream,
    )
    .map_err(run_err!("feynman-kac"))?;
    let _ = writeln!(body, "feynman_kac,0,{fk},{fk_se}");
    for n in 1..=4u32 {
        let (est, se) = pathsim::moment_mc(
            &cfg.model, &cfg.pert, &pcfg, &x0, |_| 1.0, t, n, cfg.sim.paths, stream,
        )
        .map_err(run_err!("moment {n}"))?;
        let _ = writeln!(body, "moment,{n},{est},{se}");
    }
    let path = write_artifact(out, "mc.csv", &body)?;
    println!("mc: estimates written to {}", path.display());
    Ok(0)
}

fn cmd_identity_check(cfg: &RunConfig, args: &CliArgs, out: &Path) -> Result<i32, CliError> {
    let tolerance = 1e-10;
    let seed = args.seed.unwrap_or(cfg.sim.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut body = artifact_header(cfg);
    let _ = writeln!(
        body,
        "# residual = max over both expansions of |lhs - rhs| / max(1, (sum |f_j|)^n)"
    );
    let _ = writeln!(body, "trial,n,lhs,rhs,residual");
    let mut worst = 0.0f64;
    for trial in 0..args.trials {
        let len = 1 + (rng.random::<u64>() % 12) as usize;
        let mut times: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 0.98 + 0.01).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let marks: Vec<(f64, f64)> = times
            .iter()
            .map(|&s| (s, rng.random::<f64>() * 6.0 - 3.0))
            .collect();
        let seq = JumpSequence::from_pairs(&marks, 1.0).map_err(run_err!("sequence"))?;
        for n in 1..=args.n_max {
            let (lhs, rhs) =
                jumpalgebra::power_forward(&seq, n, 1.0).map_err(run_err!("forward"))?;
            let (lhs_b, rhs_b) =
                jumpalgebra::power_backward(&seq, n, 1.0).map_err(run_err!("backward"))?;
            let scale = jumpalgebra::identity_scale(&seq, n, 1.0);
            let residual = jumpalgebra::scaled_residual(lhs, rhs, scale)
                .max(jumpalgebra::scaled_residual(lhs_b, rhs_b, scale));
            worst = worst.max(residual);
            let _ = writeln!(body, "{trial},{n},{lhs},{rhs},{residual}");
        }
    }
    let path = write_artifact(out, "identity.csv", &body)?;
    println!(
        "identity-check: {} trials x n<=..{}, worst residual {worst:e}, csv at {}",
        args.trials,
        args.n_max,
        path.display()
    );
    Ok(if worst <= tolerance { 0 } else { 3 })
}

fn cmd_qn(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let ws = build_workspace(cfg)?;
    let mut body = artifact_header(cfg);
    // Achieved self-convergence under grid halving; a coarse grid is
    // diagnosed, never silently accepted.
    let achieved = crate::series::self_convergence_residual(
        &cfg.model,
        &cfg.pert,
        &ws.grid,
        &ws.eval,
        0.0,
        cfg.series.n_max,
    )
    .map_err(run_err!("self-convergence"))?;
    let _ = writeln!(
        body,
        "# self-convergence residual (relative to each order's row scale): {achieved} (declared tolerance {})",
        cfg.series.tolerance
    );
    if achieved > cfg.series.tolerance {
        eprintln!(
            "warning: grid too coarse for the declared tolerance: achieved residual {achieved} > {}",
            cfg.series.tolerance
        );
    }
    let _ = writeln!(body, "n,t,x,z,q,qbar");
    for (slice_idx, &z_node) in ws.target_nodes.iter().enumerate() {
        let z = ws.grid.node(z_node);
        for &x_node in &ws.target_nodes {
            let x = ws.grid.node(x_node);
            for m in 0..ws.grid.time_count {
                let t = (m + 1) as f64 * ws.grid.time_step;
                for n in 0..=cfg.series.n_max {
                    // Order zero is reported pointwise (the table row holds
                    // the cell-averaged base layer used by the recursion).
                    let (q, qbar) = if n == 0 {
                        (
                            ws.eval.density(t, &[x], &[z]).map_err(run_err!("density"))?,
                            ws.eval
                                .density_bar(t, &[x], &[z])
                                .map_err(run_err!("density"))?,
                        )
                    } else {
                        (
                            ws.signed[slice_idx].value(n, m, x_node),
                            ws.dominating[slice_idx].value(n, m, x_node),
                        )
                    };
                    let _ = writeln!(body, "{n},{t},{x},{z},{q},{qbar}");
                }
            }
        }
    }
    let path = write_artifact(out, "qn.csv", &body)?;
    println!("qn: tables written to {}", path.display());
    Ok(0)
}

fn cmd_density(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let ws = build_workspace(cfg)?;
    let mut body = artifact_header(cfg);
    let _ = writeln!(body, "t,x,z,q,tail,certified,p");
    for (slice_idx, &z_node) in ws.target_nodes.iter().enumerate() {
        let z = ws.grid.node(z_node);
        for &x_node in &ws.target_nodes {
            let x = ws.grid.node(x_node);
            for m in 0..ws.grid.time_count {
                let t = (m + 1) as f64 * ws.grid.time_step;
                let td = truncated_density(
                    &cfg.model,
                    &ws.grid,
                    &ws.eval,
                    &ws.signed[slice_idx],
                    cfg.series.truncation.min(cfg.series.n_max),
                    ws.ledger.tail_coeff,
                    ws.ledger.k_ratio,
                    ws.ledger.t3,
                    t,
                    x_node,
                )
                .map_err(run_err!("density at t={t}"))?;
                let p = ws.eval.density(t, &[x], &[z]).map_err(run_err!("density"))?;
                let _ = writeln!(
                    body,
                    "{t},{x},{z},{},{},{},{p}",
                    td.value, td.tail, td.certified
                );
            }
        }
    }
    let path = write_artifact(out, "density.csv", &body)?;
    println!("density: values written to {}", path.display());
    Ok(0)
}

fn cmd_kato(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let grid = Grid::new(
        cfg.grid.t_max,
        cfg.grid.time_nodes,
        cfg.grid.radius,
        cfg.grid.space_nodes,
        cfg.model.alpha,
    )
    .map_err(run_err!("grid"))?;
    let eval = DensityEvaluator::from_model_with(&cfg.model, cfg.fourier)
        .map_err(run_err!("density evaluator"))?;
    let sym = symmetrize(&cfg.pert);
    let curve =
        kato_curve(&cfg.model, &sym, &grid, &eval, cfg.series.mu_subdiv).map_err(run_err!("kato"))?;
    let mut body = artifact_header(cfg);
    let _ = writeln!(body, "t,c_t");
    for (t, c) in curve.times.iter().zip(&curve.values) {
        let _ = writeln!(body, "{t},{c}");
    }
    let path = write_artifact(out, "kato.csv", &body)?;
    println!("kato: curve written to {}", path.display());
    Ok(0)
}

fn cmd_constants(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let ws = build_workspace(cfg)?;
    let mut body = artifact_header(cfg);
    body.push_str(&ws.ledger.report());
    let path = write_artifact(out, "constants.txt", &body)?;
    println!("constants: ledger written to {}", path.display());
    Ok(0)
}

fn cmd_bounds_report(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let ws = build_workspace(cfg)?;
    let n_max = cfg.series.n_max;
    let mut report = BoundReport::default();
    report
        .checks
        .push(check_domination(&ws.grid, &ws.signed, &ws.dominating, n_max));
    report.checks.push(check_symmetry(
        &ws.grid,
        &ws.dominating,
        n_max,
        10.0 * cfg.series.tolerance,
    ));
    report.checks.extend(
        check_growth_bounds(
            &cfg.model,
            &ws.grid,
            &ws.eval,
            &ws.dominating,
            &ws.ledger,
            &ws.kato,
            n_max,
        )
        .map_err(run_err!("growth bounds"))?,
    );
    report.checks.push(
        check_half_domination(&ws.grid, &ws.eval, &ws.dominating, &ws.ledger)
            .map_err(run_err!("half domination"))?,
    );
    let (sandwich, fit) = check_sandwich(
        &cfg.model,
        &ws.grid,
        &ws.eval,
        &ws.signed,
        &ws.ledger,
        cfg.series.truncation.min(n_max),
        cfg.verify.compositions,
    )
    .map_err(run_err!("sandwich"))?;
    report.checks.push(sandwich);

    // Monte Carlo lower-bound panel on the constant-kernel baseline.
    let holder_t_raw = if cfg.verify.holder_t > 0.0 {
        cfg.verify.holder_t
    } else {
        ws.ledger
            .t1
            .unwrap_or(ws.grid.horizon())
            .min(0.5 * ws.grid.horizon())
    };
    let holder_m = ((holder_t_raw / ws.grid.time_step).floor().max(1.0)) as usize;
    let holder_t = holder_m as f64 * ws.grid.time_step;
    let mut pcfg = path_config(cfg);
    pcfg.t_horizon = pcfg.t_horizon.max(holder_t);
    let mut panel = Vec::new();
    for &r in &cfg.verify.holder_radii {
        for &x in ws.target_nodes.iter().take(2) {
            for &z in ws.target_nodes.iter().take(2) {
                panel.push(HolderPanelCell {
                    x: ws.grid.node(x),
                    z: ws.grid.node(z),
                    r,
                    t: holder_t,
                });
            }
        }
    }
    report.checks.push(
        check_lower_holder(
            &cfg.model,
            &cfg.pert,
            &pcfg,
            &ws.ledger,
            &panel,
            cfg.verify.mc_paths,
            RngStream::new(cfg.sim.seed, 0),
        )
        .map_err(run_err!("lower-bound panel"))?,
    );

    let mut body = artifact_header(cfg);
    body.push_str(&report.render());
    let _ = writeln!(
        body,
        "fitted comparison constants: C3={}, C4={}, C5={}, C6={} (tested up to t={})",
        fit.c3, fit.c4, fit.c5, fit.c6, fit.t_certified
    );
    let _ = writeln!(
        body,
        "certification covers the tested grid only: t in (0, {}] extended to {} by composition, x and z within [{}, {}]",
        ws.grid.horizon(),
        fit.t_certified,
        -ws.grid.radius,
        ws.grid.radius
    );
    body.push_str(&ws.ledger.report());
    let path = write_artifact(out, "report.txt", &body)?;
    println!(
        "bounds-report: {} ({} checks) at {}",
        if report.all_pass() { "PASS" } else { "FAIL" },
        report.checks.len(),
        path.display()
    );
    Ok(if report.all_pass() { 0 } else { 3 })
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(CliError::Usage(msg)) => {
            if msg.is_empty() {
                print!("{USAGE}");
                return 0;
            }
            eprintln!("error: {msg}");
            eprint!("{USAGE}");
            return 1;
        }
        Err(_) => unreachable!("parse_args only raises usage errors"),
    };
    if parsed.threads > 0 {
        // Ignore failure: the global pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(parsed.threads)
            .build_global();
    }
    let cfg = match load_config(&parsed) {
        Ok(cfg) => cfg,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            return 1;
        }
        Err(CliError::Io(e)) => {
            eprintln!("io error: {e}");
            return 1;
        }
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e}");
            return 1;
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let out = parsed.out_dir.clone();
    let result = match parsed.subcommand.as_str() {
        "validate" => cmd_validate(&cfg, &out),
        "simulate" => cmd_simulate(&cfg, &out),
        "mc" => cmd_mc(&cfg, &out),
        "identity-check" => cmd_identity_check(&cfg, &parsed, &out),
        "qn" => cmd_qn(&cfg, &out),
        "density" => cmd_density(&cfg, &out),
        "kato" => cmd_kato(&cfg, &out),
        "constants" => cmd_constants(&cfg, &out),
        "bounds-report" => cmd_bounds_report(&cfg, &out),
        other => {
            eprintln!("error: unknown subcommand '{other}'");
            eprint!("{USAGE}");
            return 1;
        }
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            1
        }
        Err(CliError::Io(e)) => {
            eprintln!("io error: {e}");
            1
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Convenience wrapper reading `std::env::args`.
pub fn run_from_env() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    run(&args)
}

// Integrated-table helper shared with the acceptance suite: the signed
// mass-integrated series evaluated at a node.
pub fn integrated_tables_for(
    cfg: &RunConfig,
) -> Result<(Grid, crate::series::IntegratedTables), String> {
    let grid = Grid::new(
        cfg.grid.t_max,
        cfg.grid.time_nodes,
        cfg.grid.radius,
        cfg.grid.space_nodes,
        cfg.model.alpha,
    )
    .map_err(|e| e.to_string())?;
    let eval = DensityEvaluator::from_model_with(&cfg.model, cfg.fourier)
        .map_err(|e| e.to_string())?;
    let tables = build_integrated(
        &cfg.model,
        &cfg.pert,
        &grid,
        &eval,
        cfg.series.n_max,
        Family::Signed,
    )
    .map_err(|e| e.to_string())?;
    Ok((grid, tables))
}
