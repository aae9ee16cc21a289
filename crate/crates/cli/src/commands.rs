//! Command implementations. Every command reads its inputs from files and
//! writes plain CSV/JSON into the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use iomdp::analysis::{
    check_contraction, classify_chain, duality_gap, verify_nu_closed_form, DiagnosticsReport,
};
use iomdp::belief::{
    build_belief_space, build_kernel, lift_cost, lift_reward, write_kernel_csv, write_space_csv,
    BeliefKernel, BeliefSpace, BoundaryMode, SpaceOptions,
};
use iomdp::lp::{
    acoe_residual, build_dual, build_primal, extract_policy, kkt_report, read_policy_csv,
    solution_json, solve_lp, write_policy_csv, AcoeReport, KktReport, LpStatus, OccupancyDuals,
    OccupancyLp, Policy,
};
use iomdp::mdp::{stationary_distribution, validate_mdp, FiniteMdp};
use iomdp::sim::{
    empirical_age_law, simulate as run_simulation, visit_deviation, write_trace, SimConfig,
    SimReport,
};
use iomdp::wireless;
use log::info;
use serde::{Deserialize, Serialize};

use crate::RunConfig;

pub enum Outcome {
    Done,
    Infeasible,
}

impl Outcome {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Outcome::Done => ExitCode::SUCCESS,
            Outcome::Infeasible => ExitCode::from(2),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("missing artifact {}: run `iomdp solve` (or `iomdp reproduce`) into this directory first", path.display())]
pub struct MissingArtifact {
    pub path: PathBuf,
}

/// What `solve` leaves behind for later commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub rho: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub mode: BoundaryMode,
    pub constrained: bool,
    #[serde(rename = "B")]
    pub budget: f64,
    pub status: LpStatus,
    pub n_beliefs: usize,
    pub n_actions: usize,
    pub avg_reward: Option<f64>,
    pub avg_cost: Option<f64>,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct DualityReport {
    primal_objective: f64,
    dual_objective: f64,
    gap: f64,
    acoe: AcoeReport,
    kkt: KktReport,
    duals: OccupancyDuals,
}

fn load_model(cfg: &RunConfig) -> anyhow::Result<FiniteMdp> {
    let path = cfg.model_path.as_ref().expect("command takes a model path");
    let mut model = read_model(path)?;
    if let Some(rho) = cfg.rho {
        model = model.with_rho(rho)?;
    }
    if let Some(b) = cfg.budget {
        model.budget = b;
    }
    validate_mdp(&model).with_context(|| format!("validating {}", path.display()))?;
    Ok(model)
}

fn read_model(path: &Path) -> anyhow::Result<FiniteMdp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    FiniteMdp::from_json_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn require(dir: &Path, name: &str) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(MissingArtifact { path }.into());
    }
    Ok(path)
}

pub fn validate(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let model = load_model(cfg)?;
    let report = validate_mdp(&model)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Outcome::Done)
}

struct Built {
    space: BeliefSpace,
    kernel: BeliefKernel,
    reward: Vec<Vec<f64>>,
    cost: Vec<Vec<f64>>,
}

fn build(model: &FiniteMdp, k: usize, mode: BoundaryMode) -> anyhow::Result<Built> {
    let space = build_belief_space(model, SpaceOptions::new(k))?;
    let kernel = build_kernel(&space, model, Some(mode))?;
    info!("belief space: {} beliefs at depth {k}", space.len());
    Ok(Built {
        reward: lift_reward(&space, model),
        cost: lift_cost(&space, model),
        space,
        kernel,
    })
}

/// Solves one model into `dir` and returns the manifest written there.
fn solve_into(
    model: &FiniteMdp,
    k: usize,
    mode: BoundaryMode,
    constrained: bool,
    dir: &Path,
) -> anyhow::Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let built = build(model, k, mode)?;
    let lp = build_primal(
        &built.space,
        &built.kernel,
        &built.reward,
        &built.cost,
        model.budget,
        constrained,
    )?;
    let sol = solve_lp(&lp.program)?;
    info!(
        "simplex finished after {} pivots: {:?}",
        sol.iterations, sol.status
    );

    let mut files = vec!["model.json", "beliefs.csv", "kernel.csv", "solution.json"];
    write_text(&dir.join("model.json"), &model.to_json_string())?;
    write_space_csv(&built.space, create(&dir.join("beliefs.csv"))?)?;
    write_kernel_csv(&built.kernel, create(&dir.join("kernel.csv"))?)?;
    write_text(&dir.join("solution.json"), &solution_json(&lp, &sol))?;

    let mut manifest = Manifest {
        rho: model.rho,
        k,
        mode,
        constrained,
        budget: model.budget,
        status: sol.status,
        n_beliefs: built.space.len(),
        n_actions: model.n_actions,
        avg_reward: None,
        avg_cost: None,
        files: Vec::new(),
    };
    match sol.status {
        LpStatus::Optimal => {
            let policy = extract_policy(&sol, &built.space)?;
            write_policy_csv(&policy, &built.space, create(&dir.join("policy.csv"))?)?;
            write_duality(&lp, &built.kernel, &sol, &dir.join("duality.json"))?;
            files.extend(["policy.csv", "duality.json"]);
            manifest.avg_reward = Some(lp.average_reward(&sol.x));
            manifest.avg_cost = Some(lp.average_cost(&sol.x));
        }
        LpStatus::Infeasible => {}
        LpStatus::Unbounded => {
            bail!("occupancy program reported unbounded; the model or kernel is malformed")
        }
    }
    files.push("manifest.json");
    manifest.files = files.into_iter().map(String::from).collect();
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_duality(
    lp: &OccupancyLp,
    kernel: &BeliefKernel,
    sol: &iomdp::lp::LpSolution,
    path: &Path,
) -> anyhow::Result<()> {
    let dual = solve_lp(&build_dual(lp))?;
    let gap = duality_gap(sol, &dual)?;
    let duals = OccupancyDuals::from_dual_values(lp, &dual.x);
    let report = DualityReport {
        primal_objective: sol.objective_value,
        dual_objective: dual.objective_value,
        gap,
        acoe: acoe_residual(lp, kernel, &duals, &sol.x),
        kkt: kkt_report(&lp.program, sol),
        duals,
    };
    write_json(path, &report)
}

fn print_manifest(manifest: &Manifest, dir: &Path) {
    match (manifest.avg_reward, manifest.avg_cost) {
        (Some(r), Some(c)) => println!(
            "optimal: average reward {r:.6}, average cost {c:.6} (B = {}), {} beliefs; artifacts in {}",
            manifest.budget,
            manifest.n_beliefs,
            dir.display()
        ),
        _ => println!(
            "{:?}: no policy meets B = {}; artifacts in {}",
            manifest.status,
            manifest.budget,
            dir.display()
        ),
    }
}

pub fn solve(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let model = load_model(cfg)?;
    let manifest = solve_into(&model, cfg.k, cfg.mode, cfg.constrained, &cfg.output_dir)?;
    print_manifest(&manifest, &cfg.output_dir);
    Ok(match manifest.status {
        LpStatus::Optimal => Outcome::Done,
        _ => Outcome::Infeasible,
    })
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    report: &'a SimReport,
    lp_avg_reward: Option<f64>,
    lp_avg_cost: Option<f64>,
    budget: f64,
    age_law_tv: f64,
    /// Against the closed-form occupancy; action-independent models only.
    visit_deviation: Option<f64>,
}

pub fn simulate(cfg: &RunConfig, trace: bool) -> anyhow::Result<Outcome> {
    let dir = &cfg.output_dir;
    let manifest_path = require(dir, "manifest.json")?;
    let model_path = require(dir, "model.json")?;
    let manifest: Manifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path)
            .with_context(|| format!("reading {}", manifest_path.display()))?,
    )
    .with_context(|| format!("parsing {}", manifest_path.display()))?;
    if manifest.status != LpStatus::Optimal {
        bail!(
            "{} records status {:?}; there is no policy to simulate",
            manifest_path.display(),
            manifest.status
        );
    }
    let policy_path = require(dir, "policy.csv")?;
    let model = read_model(&model_path)?;
    if cfg.rho.is_some() || cfg.budget.is_some() {
        log::warn!(
            "simulate uses rho and B from {}; overrides ignored",
            model_path.display()
        );
    }
    let policy: Policy = read_policy_csv(File::open(&policy_path)?)
        .with_context(|| format!("reading {}", policy_path.display()))?;
    let space = build_belief_space(&model, SpaceOptions::new(manifest.k))?;

    let sim_cfg = SimConfig::new(cfg.horizon, cfg.replications, cfg.seed, manifest.k);
    let report = run_simulation(&model, &policy, &space, &sim_cfg)?;
    let deviation = if model.is_action_independent() {
        let gamma = stationary_distribution(&model.p[0])?.gamma;
        Some(visit_deviation(&report, &gamma, model.rho))
    } else {
        None
    };
    let out = SimulationOutput {
        report: &report,
        lp_avg_reward: manifest.avg_reward,
        lp_avg_cost: manifest.avg_cost,
        budget: model.budget,
        age_law_tv: empirical_age_law(&report, model.rho),
        visit_deviation: deviation,
    };
    write_json(&dir.join("simulation.json"), &out)?;
    if trace {
        write_trace(
            &model,
            &policy,
            &space,
            &sim_cfg,
            0,
            create(&dir.join("trace.csv"))?,
        )?;
    }
    println!(
        "average reward {:.6} +- {:.6}, average cost {:.6} +- {:.6}, age-law TV {:.2e}",
        report.avg_reward.mean,
        report.avg_reward.std_err,
        report.avg_cost.mean,
        report.avg_cost.std_err,
        out.age_law_tv
    );
    Ok(Outcome::Done)
}

pub fn analyze(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let model = load_model(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let built = build(&model, cfg.k, cfg.mode)?;

    let mut gaps = [None, None];
    let mut policy = None;
    for (slot, constrained) in [(0, true), (1, false)] {
        let lp = build_primal(
            &built.space,
            &built.kernel,
            &built.reward,
            &built.cost,
            model.budget,
            constrained,
        )?;
        let primal = solve_lp(&lp.program)?;
        if !primal.is_optimal() {
            log::warn!("constrained={constrained}: primal is {:?}", primal.status);
            continue;
        }
        let dual = solve_lp(&build_dual(&lp))?;
        gaps[slot] = Some(duality_gap(&primal, &dual)?);
        if policy.is_none() {
            policy = Some(extract_policy(&primal, &built.space)?);
        }
    }
    let policy = policy.unwrap_or_else(|| Policy::uniform(built.space.len(), model.n_actions));
    let nu = if model.is_action_independent() {
        let gamma = stationary_distribution(&model.p[0])?.gamma;
        Some(verify_nu_closed_form(
            &built.space,
            &built.kernel,
            &gamma,
            model.rho,
        )?)
    } else {
        None
    };
    let report = DiagnosticsReport {
        rho: model.rho,
        k: cfg.k,
        mode: Some(cfg.mode),
        chain: classify_chain(&built.kernel, &policy),
        drift: check_contraction(&built.kernel, model.rho),
        duality_gap_constrained: gaps[0],
        duality_gap_unconstrained: gaps[1],
        nu,
    };
    let path = cfg.output_dir.join("diagnostics.json");
    write_text(&path, &report.to_json())?;
    let fmt_gap = |g: Option<f64>| g.map_or("n/a".to_string(), |g| format!("{g:.1e}"));
    println!(
        "{} recurrent class(es), {} transient beliefs; contraction {}; duality gap {} (constrained), {} (unconstrained); report in {}",
        report.chain.recurrent_classes.len(),
        report.chain.transient.len(),
        if report.drift.passes() { "holds" } else { "VIOLATED" },
        fmt_gap(gaps[0]),
        fmt_gap(gaps[1]),
        path.display()
    );
    Ok(Outcome::Done)
}

pub fn reproduce(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows = wireless::sweep(cfg.k, cfg.mode)?;
    write_text(&dir.join("table1.csv"), &wireless::table_csv(&rows, 0))?;
    write_text(&dir.join("table2.csv"), &wireless::table_csv(&rows, 1))?;
    let diff = wireless::diff_against_published(&rows);
    write_text(&dir.join("diff.csv"), &wireless::diff_csv(&diff))?;
    write_json(&dir.join("sweep.json"), &rows)?;
    for &rho in &wireless::RHO_SWEEP {
        solve_into(
            &wireless::model(rho),
            cfg.k,
            cfg.mode,
            true,
            &dir.join(format!("rho_{rho:.1}")),
        )?;
    }
    let passed = diff.iter().filter(|d| d.pass).count();
    println!(
        "{passed}/{} published entries reproduced; tables in {}",
        diff.len(),
        dir.display()
    );
    Ok(Outcome::Done)
}
