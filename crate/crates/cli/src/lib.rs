//! Batch commands behind the `storemkt` binary.
//!
//! Every command returns a [`Report`]: console text plus named artifacts.
//! Artifacts depend only on the config and seed, so two runs produce the
//! same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use storemkt_core::config::{preset, ConfigFile, PRESET_NAMES};
use storemkt_core::dispatch::{q_star_minus, solve_outer, DispatchProblem, SolveResult};
use storemkt_core::experiments::{self, Check};
use storemkt_core::fmt::fmt_sig;
use storemkt_core::mechanism::{day_ahead_payment, DayAheadPayment};
use storemkt_core::prob::DeadlineDistribution;
use storemkt_core::sim;
use storemkt_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unknown config `{0}`: not a readable file or one of the presets")]
    UnknownConfig(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for bad input, 3 for infeasible models.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::NoFeasibleContinuation { .. } | Error::NoFeasibleDispatch) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Console text, artifacts keyed by file name, and experiment checks.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub files: BTreeMap<String, String>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    /// 0, or 4 when any check failed.
    pub fn exit_code(&self) -> i32 {
        if self.failed().is_empty() {
            0
        } else {
            4
        }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }

    fn json(&mut self, name: &str, value: &impl Serialize) {
        let mut s = serde_json::to_string_pretty(value).expect("serializable artifact");
        s.push('\n');
        self.files.insert(name.to_string(), s);
    }

    fn add_checks(&mut self, checks: Vec<Check>) {
        for c in &checks {
            let tag = if c.pass { "PASS" } else { "FAIL" };
            if c.detail.is_empty() {
                self.line(format!("{tag} {}", c.name));
            } else {
                self.line(format!("{tag} {}: {}", c.name, c.detail));
            }
        }
        self.checks.extend(checks);
    }

    /// Writes every artifact under `dir`, in name order.
    pub fn write_dir(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| CliError::Io { path, source })?;
        }
        Ok(())
    }
}

/// A config file path, or a preset name when no such file exists.
pub fn load_config(arg: &str) -> CliResult<ConfigFile> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        return Ok(ConfigFile::load(&text)?);
    }
    if PRESET_NAMES.contains(&arg) {
        return Ok(preset(arg)?);
    }
    Err(CliError::UnknownConfig(arg.to_string()))
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_sig(*x, 12)).collect::<Vec<_>>().join(",")
}

pub fn cmd_validate(config: &ConfigFile) -> CliResult<Report> {
    config.validate()?;
    Ok(Report { text: format!("{}\n", config.to_json()), ..Report::default() })
}

pub fn cmd_solve(config: &ConfigFile) -> CliResult<(SolveResult, Report)> {
    config.validate()?;
    let problem = config.problem()?;
    let solved = solve_outer(&problem, &config.solver_config())?;
    let (j_m, k_hat) = config.j_m(&problem)?;
    let mut r = Report::default();
    r.line(format!("q* = {}", fmt_sig(solved.q_star, 12)));
    r.line(format!("g* = [{}]", join(&solved.g_star)));
    r.line(format!("candidates evaluated = {}", solved.candidates_evaluated));
    if let Some(k) = k_hat {
        r.line(format!("sampled Lipschitz bound K = {}; recommended J_m = 10 K = {}", fmt_sig(k, 12), fmt_sig(j_m, 12)));
    }
    let mut artifact = solved.to_json();
    artifact["j_m"] = serde_json::json!(j_m);
    artifact["lipschitz_k"] = serde_json::json!(k_hat);
    r.json("solve.json", &artifact);
    Ok((solved, r))
}

pub const PAYMENTS_HEADER: &str = "ev,p_da,q_star,q_star_minus,expected_charge,identity_residual";

/// Day-ahead payments under truthful bids.
pub fn payments(problem: &DispatchProblem, config: &ConfigFile) -> CliResult<Vec<DayAheadPayment>> {
    let solver = config.solver_config();
    let solved = solve_outer(problem, &solver)?;
    (0..problem.evs.len())
        .map(|i| Ok(day_ahead_payment(problem, i, &solved, q_star_minus(problem, i, &solver)?)?))
        .collect()
}

pub fn payments_csv(rows: &[DayAheadPayment]) -> String {
    let mut out = format!("{PAYMENTS_HEADER}\n");
    for p in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.ev,
            fmt_sig(p.p_da, 12),
            fmt_sig(p.q_star, 12),
            fmt_sig(p.q_star_minus, 12),
            fmt_sig(p.expected_charge, 12),
            fmt_sig(p.identity_residual, 12)
        ));
    }
    out
}

pub fn cmd_payments(config: &ConfigFile) -> CliResult<Report> {
    config.validate()?;
    let rows = payments(&config.problem()?, config)?;
    let csv = payments_csv(&rows);
    let mut r = Report { text: csv.clone(), ..Report::default() };
    r.files.insert("payments.csv".into(), csv);
    Ok(r)
}

/// `days` overrides the config; the seed is the config's first.
pub fn cmd_simulate(config: &ConfigFile, days: Option<u64>) -> CliResult<Report> {
    config.validate()?;
    let problem = config.problem()?;
    let seed = config.simulation.seeds[0];
    let (j_m, _) = config.j_m(&problem)?;
    let mut settings = config.sim_settings(seed, j_m);
    if let Some(d) = days {
        settings.days = d;
    }
    let out = sim::run_horizon(&problem, &config.strategies()?, &config.solver_config(), &settings)?;
    let d = &out.diagnostics;
    let mut r = Report::default();
    r.line(format!("days = {}, seed = {seed}, J_m = {}", settings.days, fmt_sig(j_m, 12)));
    r.line(format!("q*(bids) = {}, mean beta = {}", fmt_sig(d.q_star_bids, 12), fmt_sig(d.beta.mean, 12)));
    for (i, (u, a)) in d.utility.iter().zip(&d.accounts).enumerate() {
        r.line(format!(
            "ev {i}: mean utility = {} +/- {}, penalties = {}, misses = {}",
            fmt_sig(u.mean, 12),
            fmt_sig(u.half_width, 12),
            a.penalty_count,
            a.missed_deadlines
        ));
    }
    r.files.insert("trace.csv".into(), out.trace.to_csv());
    r.files.insert("ledger.csv".into(), out.trace.ledger_csv());
    r.json("diagnostics.json", &serde_json::json!({ "seed": seed, "j_m": j_m, "diagnostics": d }));
    Ok(r)
}

/// Example 1 sweep points `0.05, 0.10, ..., 0.35`.
pub fn example1_ps() -> Vec<f64> {
    (1..=7).map(|k| k as f64 * 0.05).collect()
}

/// The single-EV preset with pmf `(p, 1 - p)`.
pub fn example1_with(config: &ConfigFile, p: f64) -> ConfigFile {
    let mut c = config.clone();
    for ev in &mut c.evs {
        ev.theta = storemkt_core::config::ThetaSpec::Values(vec![p, 1.0 - p]);
    }
    c
}

pub fn example1_checks(rows: &[experiments::SweepRow]) -> Vec<Check> {
    let worst = rows.iter().map(|r| (r.q_star - (10.0 * r.p).min(2.0)).abs()).fold(0.0, f64::max);
    let flip = rows.iter().all(|r| {
        let want = if r.p < 0.2 - 1e-12 { [1.0, 0.0] } else { [0.0, 1.0] };
        r.g_star == want
    });
    vec![
        Check::new("q* = min(2, 10p)", worst <= 1e-9, format!("max error {worst:e}")),
        Check::new("dispatch flips at p = 0.2", flip, ""),
    ]
}

/// No-EV baseline of the Table I system against the rate-weighted demand.
pub fn table1_checks(config: &ConfigFile) -> CliResult<(Vec<Check>, serde_json::Value)> {
    let problem = config.problem()?;
    let bare = DispatchProblem { evs: vec![], params: vec![], ..problem };
    let solved = solve_outer(&bare, &config.solver_config())?;
    let continuous = match &config.generator_cost {
        storemkt_core::cost::CostForm::Linear { rates, .. } => {
            config.demand_kwh.iter().zip(rates).map(|(d, c)| d * c / 1000.0).sum::<f64>()
        }
        _ => f64::NAN,
    };
    let q = solved.q_star;
    let checks = vec![Check::new(
        "no-EV q* in [6.43, 6.55]",
        (6.43..=6.55).contains(&q),
        format!("q* = {}, g* = [{}], continuous = {}", fmt_sig(q, 12), join(&solved.g_star), fmt_sig(continuous, 12)),
    )];
    let json = serde_json::json!({ "q_star": q, "g_star": solved.g_star, "continuous": continuous });
    Ok((checks, json))
}

/// Lipschitz gap, monotonicity, deadline miss rate, late penalty
/// events and penalty growth on the Table I system.
pub fn lemma_checks(config: &ConfigFile, seed: u64) -> CliResult<(Vec<Check>, serde_json::Value)> {
    let oracle = experiments::dp_vs_oracle(20, seed)?;
    let worst = oracle.iter().map(|c| (c.solver - c.oracle).abs()).fold(0.0, f64::max);
    let pairs = experiments::dominated_pairs(50, seed)?;
    let mono = pairs.iter().filter(|p| !p.monotone).count();
    let lip = pairs.iter().filter(|p| !p.lipschitz).count();
    let miss = experiments::histogram_adversary_miss_rate(config, "theta_A", 5000, seed)?;
    let seeds: Vec<u64> = (0..20).map(|k| seed.wrapping_mul(1000).wrapping_add(k)).collect();
    let late = experiments::truthful_late_events(config, &seeds, 2000, 50)?;
    let late_seeds = late.iter().filter(|l| l.events > 0).count();
    let avg = experiments::fixed_reporter_penalties(config, "theta_A", 1, 100, seed)?;
    let at_100 = avg.last().copied().unwrap_or(0.0);
    let rising = avg.windows(2).skip(9).all(|w| w[1] > w[0]);
    let checks = vec![
        Check::new("dp equals brute force (20 tiny instances)", worst <= 1e-9, format!("max gap {worst:e}")),
        Check::new("q* monotone under dominance (50 pairs)", mono == 0, format!("{mono} violations")),
        Check::new("q* gap within K alpha (50 pairs)", lip == 0, format!("{lip} violations")),
        Check::new(
            "histogram adversary miss rate >= 0.15",
            miss.miss_rate >= 0.15,
            format!("alpha = {}, rate = {}", fmt_sig(miss.alpha, 12), fmt_sig(miss.miss_rate, 12)),
        ),
        Check::new(
            "truthful: at most 1 of 20 seeds penalized after day 50",
            late_seeds <= 1,
            format!("{late_seeds} seeds"),
        ),
        Check::new(
            "fixed reporter average penalty > 1000 by day 100",
            at_100 > 1e3,
            fmt_sig(at_100, 12),
        ),
        Check::new("fixed reporter average penalty increasing from day 10", rising, ""),
    ];
    let json = serde_json::json!({
        "oracle": oracle,
        "pairs": pairs,
        "miss_rate": miss,
        "late_events": late,
        "average_penalty": avg,
    });
    Ok((checks, json))
}

pub fn theorem1_checks(config: &ConfigFile, seeds: &[u64]) -> CliResult<(Vec<Check>, sim::Theorem1Report)> {
    let problem = config.problem()?;
    let (j_m, _) = config.j_m(&problem)?;
    let settings = config.sim_settings(seeds[0], j_m);
    let report = sim::verify_theorem1(
        &problem,
        config.simulation.focal_ev,
        &config.adversaries()?,
        &config.solver_config(),
        &settings,
        seeds,
    )?;
    let mut checks = Vec::new();
    for a in &report.adversaries {
        checks.push(Check::new(
            format!("no profitable deviation: {} (seed {})", a.name, a.seed),
            !a.dsic_violation,
            format!("gain {:.4e} vs band {:.4e}", a.gain, a.band),
        ));
    }
    for c in &report.ir {
        checks.push(Check::new(
            format!("individually rational (seed {})", c.seed),
            c.pass,
            format!("mean utility {:.4e} vs -{:.4e}", c.utility.mean, c.utility.half_width),
        ));
    }
    for e in &report.efficiency {
        checks.push(Check::new(
            format!("efficient (seed {})", e.seed),
            e.pass,
            format!("|mean beta - q*| = {:.4e} vs {:.4e}", e.gap, e.beta.half_width),
        ));
    }
    Ok((checks, report))
}

pub fn cmd_experiment(name: &str, seed: Option<u64>) -> CliResult<Report> {
    let mut config = preset(name)?;
    if let Some(s) = seed {
        config = config.with_seed(s);
    }
    config.validate()?;
    let seed = config.simulation.seeds[0];
    let mut r = Report::default();
    r.line(format!("experiment {name}"));
    match name {
        "example1" => {
            let rows = experiments::example1_sweep(&config, &example1_ps())?;
            r.files.insert("sweep.csv".into(), experiments::sweep_csv(&rows));
            r.add_checks(example1_checks(&rows));
        }
        "table1" => {
            let (checks, json) = table1_checks(&config)?;
            let (solved, _) = cmd_solve(&config)?;
            r.line(format!("q* with fleet = {}", fmt_sig(solved.q_star, 12)));
            r.json("baseline.json", &json);
            r.json("solve.json", &solved.to_json());
            r.files.insert("payments.csv".into(), payments_csv(&payments(&config.problem()?, &config)?));
            r.add_checks(checks);
        }
        "fig2" => {
            let cells = experiments::fig2(&config, &experiments::TABLE1_PROFILES, 4)?;
            r.files.insert("fig2.csv".into(), experiments::fig2_csv(&cells));
            r.add_checks(experiments::fig2_checks(&cells, &experiments::TABLE1_ORDERINGS));
        }
        "lemma-checks" => {
            let (checks, json) = lemma_checks(&config, seed)?;
            r.json("details.json", &json);
            r.add_checks(checks);
        }
        "theorem1" => {
            let (checks, report) = theorem1_checks(&config, &config.simulation.seeds.clone())?;
            r.json("report.json", &report);
            r.add_checks(checks);
        }
        other => return Err(CliError::UnknownConfig(other.to_string())),
    }
    r.json("checks.json", &serde_json::json!({ "experiment": name, "seed": seed, "checks": r.checks }));
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub cases: Vec<experiments::OracleCase>,
    pub max_gap: f64,
}

pub fn cmd_oracle(count: usize, seed: u64) -> CliResult<Report> {
    let cases = experiments::dp_vs_oracle(count, seed)?;
    let max_gap = cases.iter().map(|c| (c.solver - c.oracle).abs()).fold(0.0, f64::max);
    let mut r = Report::default();
    r.line("index,horizon,n_evs,grid_size,solver,oracle");
    for c in &cases {
        r.line(format!(
            "{},{},{},{},{},{}",
            c.index,
            c.horizon,
            c.n_evs,
            c.grid_size,
            fmt_sig(c.solver, 12),
            fmt_sig(c.oracle, 12)
        ));
    }
    r.add_checks(vec![Check::new("solver equals brute force", max_gap <= 1e-9, format!("max gap {max_gap:e}"))]);
    r.json("oracle.json", &OracleSummary { cases, max_gap });
    Ok(r)
}

/// Sized global pool from `STOREMKT_THREADS`, if set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("STOREMKT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("STOREMKT_THREADS = `{v}`: expected a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

/// Deadline law from a comma-separated pmf.
pub fn parse_pmf(text: &str) -> CliResult<DeadlineDistribution> {
    let pmf = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad pmf entry `{s}`"))))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(DeadlineDistribution::new(pmf, 0.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Core(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(Error::NoFeasibleDispatch).exit_code(), 3);
        assert_eq!(CliError::UnknownConfig("x".into()).exit_code(), 2);
    }

    #[test]
    fn example1_solve_threshold() {
        let base = preset("example1").unwrap();
        let (s, r) = cmd_solve(&example1_with(&base, 0.19)).unwrap();
        assert!((s.q_star - 1.9).abs() < 1e-12);
        assert_eq!(s.g_star, vec![1.0, 0.0]);
        assert!(r.text.starts_with("q* = 1.9\ng* = [1,0]\n"));
        let (s, _) = cmd_solve(&example1_with(&base, 0.21)).unwrap();
        assert!((s.q_star - 2.0).abs() < 1e-12);
        assert_eq!(s.g_star, vec![0.0, 1.0]);
    }

    #[test]
    fn example1_payment() {
        let r = cmd_payments(&preset("example1").unwrap()).unwrap();
        let row = r.text.lines().nth(1).unwrap();
        assert!(row.starts_with("0,-0.09,"), "{row}");
    }

    #[test]
    fn pmf_parsing() {
        assert_eq!(parse_pmf("0.19, 0.81").unwrap().pmf(), &[0.19, 0.81]);
        assert!(parse_pmf("0.5,x").is_err());
    }
}
