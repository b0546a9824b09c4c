//! Command-line driver: evaluate posteriors, run optimizations, sweep the
//! smoothing parameter against the reference semantics, gradient-check
//! losses, and run the Monte-Carlo oracle.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 parse/validation
//! error, 3 all paths vanished, 4 path budget exceeded, 5 non-finite loss.

// `!(x > 0.0)` is deliberate where NaN must take the failure branch, and
// indexed loops over aligned vectors stay as-is.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use degas::cfg::{build_cfg, Cfg, CfgError};
use degas::diff::{self, finite_diff_check, ParamStore};
use degas::frontend::{self, Ast};
use degas::optimize::{
    nll_loss, parse_reach_expr, reachability_loss, run_optimization, Dataset, LossSpec,
    OptimError, OptimizerConfig,
};
use degas::oracle::mc_sample;
use degas::semantics::{
    eval_paths_raw, eval_program, soga_eval, soga_posterior_summary, DeltaRule, Posterior,
    SemanticsError, SmoothConfig,
};

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VANISHED: i32 = 3;
pub const EXIT_PATH_BUDGET: i32 = 4;
pub const EXIT_NONFINITE_LOSS: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(1, e.to_string())
    }
}

impl From<SemanticsError> for CliError {
    fn from(e: SemanticsError) -> Self {
        let code = match &e {
            SemanticsError::AllPathsVanished => EXIT_VANISHED,
            SemanticsError::Cfg(CfgError::PathBudgetExceeded { .. }) => EXIT_PATH_BUDGET,
            _ => 1,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        let code = match &e {
            OptimError::NonFiniteLoss { .. } => EXIT_NONFINITE_LOSS,
            OptimError::Eval { source, .. } => {
                return CliError::new(
                    CliError::from(source.clone()).code,
                    e.to_string(),
                )
            }
            OptimError::BadLossSpec(_) | OptimError::Dataset(_) => EXIT_PARSE,
            _ => 1,
        };
        CliError::new(code, e.to_string())
    }
}

/// Shared command-line options.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Program source file.
    #[arg(long)]
    pub program: PathBuf,
    /// Sidecar parameter file (`name init lo hi` per line).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Smoothing standard deviation.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Threshold-shift rule: `sqrt` or `pow:<k>`.
    #[arg(long, default_value = "sqrt")]
    pub delta: String,
    /// Learning rate for `optimize`.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Step budget for `optimize`; run count for `mc`.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Loss: `nll` (with --data) or a reachability expression such as
    /// `neg(prod(cdf(t6, 19.9, 20.1)))`.
    #[arg(long)]
    pub loss: Option<String>,
    /// Dataset CSV (header of variable names, one observation per row).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output path, `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Output format where applicable: `json` or `csv`.
    #[arg(long, default_value = "json")]
    pub format: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "max-paths", default_value_t = degas::cfg::DEFAULT_MAX_PATHS)]
    pub max_paths: usize,
    /// Worker threads for the Monte-Carlo oracle (results do not depend on
    /// this; program evaluation itself is single-threaded).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Print the control-flow graph in DOT format to stderr.
    #[arg(long, default_value_t = false)]
    pub dump_cfg: bool,
}

#[derive(Debug, Parser)]
#[command(name = "degas", version, about = "Gaussian-mixture program evaluator and optimizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the posterior and write a summary.
    Eval(RunConfig),
    /// Optimize parameters against a loss; writes a trace CSV and a final
    /// parameter JSON.
    Optimize(RunConfig),
    /// Compare the loss gradient against central finite differences.
    Gradcheck(RunConfig),
    /// Sweep the smoothing parameter and tabulate against the reference
    /// semantics (first program variable is the target).
    Converge(RunConfig),
    /// Monte-Carlo simulation of the exact semantics (`--steps` runs).
    Mc(RunConfig),
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Eval(cfg) => cmd_eval(cfg),
        Command::Optimize(cfg) => cmd_optimize(cfg),
        Command::Gradcheck(cfg) => cmd_gradcheck(cfg),
        Command::Converge(cfg) => cmd_converge(cfg),
        Command::Mc(cfg) => cmd_mc(cfg),
    }
}

struct Compiled {
    ast: Ast,
    cfg: Cfg,
    params: ParamStore,
}

fn load(rc: &RunConfig) -> Result<Compiled, CliError> {
    let source = std::fs::read_to_string(&rc.program)?;
    let ast = frontend::parse(&source).map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?;
    let decls = match &rc.params {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            frontend::parse_param_file(&text)
                .map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?
        }
        None => Vec::new(),
    };
    let (ast, params) =
        frontend::validate(ast, decls).map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?;
    let cfg = build_cfg(&ast);
    if rc.dump_cfg {
        eprint!("{}", cfg.to_dot());
    }
    Ok(Compiled { ast, cfg, params })
}

fn smooth_config(rc: &RunConfig) -> Result<SmoothConfig, CliError> {
    if !(rc.epsilon > 0.0) {
        return Err(CliError::new(EXIT_PARSE, "epsilon must be positive"));
    }
    let rule = parse_delta_rule(&rc.delta)?;
    Ok(SmoothConfig::degas(rc.epsilon).with_delta(rule))
}

fn parse_delta_rule(s: &str) -> Result<DeltaRule, CliError> {
    if s == "sqrt" {
        return Ok(DeltaRule::Sqrt);
    }
    if let Some(k) = s.strip_prefix("pow:") {
        let k: f64 = k
            .parse()
            .map_err(|_| CliError::new(EXIT_PARSE, format!("bad delta exponent `{k}`")))?;
        if !(k > 0.0 && k < 1.0) {
            return Err(CliError::new(
                EXIT_PARSE,
                "delta exponent must lie in (0, 1) for consistency",
            ));
        }
        return Ok(DeltaRule::Pow(k));
    }
    Err(CliError::new(EXIT_PARSE, format!("bad delta rule `{s}` (use sqrt or pow:<k>)")))
}

fn write_output(out: &str, content: &str) -> Result<(), CliError> {
    if out == "-" {
        print!("{content}");
        Ok(())
    } else {
        std::fs::write(Path::new(out), content)?;
        Ok(())
    }
}

fn json_f64(v: f64) -> serde_json::Value {
    // JSON has no infinities; vanished log-probabilities become null.
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn posterior_json(rc: &RunConfig, post: &Posterior) -> serde_json::Value {
    let (mean, cov) = post.stats();
    let n = post.n_vars();
    let marginals: Vec<serde_json::Value> = (0..n)
        .map(|v| {
            serde_json::json!({
                "var": post.var_names[v],
                "mean": json_f64(mean[v].value()),
                "std": json_f64(cov.get(v, v).value().max(0.0).sqrt()),
            })
        })
        .collect();
    serde_json::json!({
        "epsilon": rc.epsilon,
        "delta": rc.delta,
        "total_log_prob": json_f64(post.total_log_prob.value()),
        "total_prob": json_f64(post.total_log_prob.value().exp()),
        "paths": post
            .path_log_probs
            .iter()
            .zip(&post.path_weights)
            .enumerate()
            .map(|(i, (lp, w))| {
                serde_json::json!({
                    "index": i,
                    "log_prob": json_f64(lp.value()),
                    "weight": json_f64(w.value()),
                })
            })
            .collect::<Vec<_>>(),
        "components": post
            .weights
            .iter()
            .zip(&post.comps)
            .map(|(w, g)| {
                serde_json::json!({
                    "weight": json_f64(w.value()),
                    "mean": g.mean.iter().map(|m| json_f64(m.value())).collect::<Vec<_>>(),
                    "cov": g.cov.values().iter()
                        .map(|row| row.iter().map(|v| json_f64(*v)).collect::<Vec<_>>())
                        .collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>(),
        "posterior": {
            "mean": mean.iter().map(|m| json_f64(m.value())).collect::<Vec<_>>(),
            "cov": cov.values().iter()
                .map(|row| row.iter().map(|v| json_f64(*v)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        },
        "marginals": marginals,
        "params": post
            .param_snapshot
            .iter()
            .map(|(k, v)| (k.clone(), json_f64(*v)))
            .collect::<serde_json::Map<_, _>>(),
        "vars": post.var_names,
    })
}

pub fn cmd_eval(rc: &RunConfig) -> Result<(), CliError> {
    let c = load(rc)?;
    let smooth = smooth_config(rc)?;
    diff::reset();
    let post = eval_program(&c.cfg, &c.params, &smooth, rc.max_paths)?;
    let content = match rc.format.as_str() {
        "json" => format!("{:#}\n", posterior_json(rc, &post)),
        "csv" => {
            let (mean, cov) = post.stats();
            let mut s = String::from("var,mean,std\n");
            for v in 0..post.n_vars() {
                writeln!(
                    s,
                    "{},{},{}",
                    post.var_names[v],
                    mean[v].value(),
                    cov.get(v, v).value().max(0.0).sqrt()
                )
                .unwrap();
            }
            s
        }
        other => return Err(CliError::new(EXIT_PARSE, format!("bad format `{other}`"))),
    };
    diff::reset();
    write_output(&rc.out, &content)
}

pub fn cmd_converge(rc: &RunConfig) -> Result<(), CliError> {
    let c = load(rc)?;
    let rule = parse_delta_rule(&rc.delta)?;
    if c.cfg.n_vars() == 0 {
        return Err(CliError::new(EXIT_PARSE, "program has no variables to tabulate"));
    }
    let mut s = String::from("epsilon,p,mu,sigma\n");
    for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
        diff::reset();
        let states = eval_paths_raw(
            &c.cfg,
            &c.params,
            &SmoothConfig::degas(eps).with_delta(rule),
            rc.max_paths,
        )?;
        let t = soga_posterior_summary(&states, 0);
        writeln!(s, "{eps},{:.4},{:.4},{:.4}", t.total_prob, t.mean, t.std).unwrap();
    }
    diff::reset();
    let states = soga_eval(&c.cfg, &c.params, rc.max_paths)?;
    let t = soga_posterior_summary(&states, 0);
    writeln!(s, "soga,{:.4},{:.4},{:.4}", t.total_prob, t.mean, t.std).unwrap();
    diff::reset();
    write_output(&rc.out, &s)
}

fn load_loss(rc: &RunConfig) -> Result<LossSpec, CliError> {
    let text = rc
        .loss
        .as_deref()
        .ok_or_else(|| CliError::new(EXIT_PARSE, "--loss is required"))?;
    if text.trim() == "nll" {
        let data = rc
            .data
            .as_ref()
            .ok_or_else(|| CliError::new(EXIT_PARSE, "--data is required for the nll loss"))?;
        let csv = std::fs::read_to_string(data)?;
        let ds = Dataset::from_csv(&csv).map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?;
        Ok(LossSpec::Nll(ds))
    } else {
        let expr =
            parse_reach_expr(text).map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?;
        Ok(LossSpec::Reach(expr))
    }
}

pub fn cmd_optimize(rc: &RunConfig) -> Result<(), CliError> {
    let mut c = load(rc)?;
    let smooth = smooth_config(rc)?;
    let spec = load_loss(rc)?;
    let mut ocfg = OptimizerConfig::new(rc.lr, rc.steps, rc.epsilon);
    ocfg.seed = rc.seed;
    ocfg.max_paths = rc.max_paths;
    let trace = run_optimization(&c.cfg, &mut c.params, &spec, &ocfg, &smooth)?;

    let mut csv = String::from("step,loss");
    let names: Vec<String> = c.params.names().map(str::to_string).collect();
    for n in &names {
        write!(csv, ",{n}").unwrap();
    }
    csv.push_str(",wall_ms\n");
    for (i, st) in trace.steps.iter().enumerate() {
        write!(csv, "{i},{}", st.loss).unwrap();
        for (_, v) in &st.params {
            write!(csv, ",{v}").unwrap();
        }
        writeln!(csv, ",{:.3}", st.wall_ms).unwrap();
    }

    let final_json = serde_json::json!({
        "converged": trace.converged,
        "steps_run": trace.steps.len(),
        "final_loss": trace.steps.last().map(|s| json_f64(s.loss)),
        "params": c
            .params
            .snapshot()
            .into_iter()
            .map(|(k, v)| (k, json_f64(v)))
            .collect::<serde_json::Map<_, _>>(),
        "seed": rc.seed,
    });
    let json_text = format!("{final_json:#}\n");

    if rc.out == "-" {
        print!("{csv}");
        print!("{json_text}");
    } else {
        std::fs::write(Path::new(&rc.out), &csv)?;
        let json_path = params_json_path(&rc.out);
        std::fs::write(&json_path, &json_text)?;
    }
    Ok(())
}

/// Sibling path for the final-parameter JSON written next to the trace CSV.
pub fn params_json_path(out: &str) -> PathBuf {
    let p = Path::new(out);
    match p.extension() {
        Some(_) => p.with_extension("params.json"),
        None => p.with_extension("params.json"),
    }
}

pub fn cmd_gradcheck(rc: &RunConfig) -> Result<(), CliError> {
    let mut c = load(rc)?;
    let smooth = smooth_config(rc)?;
    let spec = match rc.loss.as_deref() {
        None => None,
        Some(_) => Some(load_loss(rc)?),
    };
    let max_paths = rc.max_paths;
    let cfg = &c.cfg;
    let f = |params: &ParamStore| {
        let post = eval_program(cfg, params, &smooth, max_paths).expect("evaluation succeeds");
        match &spec {
            None => post.total_log_prob,
            Some(LossSpec::Nll(ds)) => nll_loss(&post, ds).expect("finite loss"),
            Some(LossSpec::Reach(e)) => reachability_loss(e, &post).expect("valid expression"),
        }
    };
    let max_rel = finite_diff_check(f, &mut c.params, 1e-5)
        .map_err(|e| CliError::new(1, e.to_string()))?;
    let out = serde_json::json!({
        "target": match &spec { None => "total_log_prob", Some(LossSpec::Nll(_)) => "nll", Some(LossSpec::Reach(_)) => "reachability" },
        "max_rel_error": json_f64(max_rel),
        "h": 1e-5,
    });
    write_output(&rc.out, &format!("{out:#}\n"))
}

pub fn cmd_mc(rc: &RunConfig) -> Result<(), CliError> {
    let c = load(rc)?;
    if rc.steps < 1000 {
        return Err(CliError::new(
            EXIT_PARSE,
            "mc needs --steps >= 1000 (number of simulation runs)",
        ));
    }
    let r = mc_sample(&c.ast, &c.params, rc.steps as u64, rc.seed, rc.threads)
        .map_err(|e| CliError::new(1, e.to_string()))?;
    let content = match rc.format.as_str() {
        "json" => {
            let out = serde_json::json!({
                "n_requested": r.n_requested,
                "n_effective": r.n_effective,
                "acceptance_rate": json_f64(r.acceptance_rate),
                "mean": r.mean.iter().map(|v| json_f64(*v)).collect::<Vec<_>>(),
                "cov": r.cov.iter()
                    .map(|row| row.iter().map(|v| json_f64(*v)).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
                "std_error": r.std_error.iter().map(|v| json_f64(*v)).collect::<Vec<_>>(),
                "vars": c.ast.var_names,
                "seed": rc.seed,
            });
            format!("{out:#}\n")
        }
        "csv" => {
            let mut s = String::from("var,mean,std_error\n");
            for (i, v) in c.ast.var_names.iter().enumerate() {
                writeln!(s, "{v},{},{}", r.mean[i], r.std_error[i]).unwrap();
            }
            s
        }
        other => return Err(CliError::new(EXIT_PARSE, format!("bad format `{other}`"))),
    };
    write_output(&rc.out, &content)
}
