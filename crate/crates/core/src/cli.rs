//! Front end of the `mfd` binary: argument and config resolution, command
//! dispatch, artifact writing and error reporting.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::collapse::{self, CollapseResult, GlmFreeEnergy};
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::experiments::{self, write_records_csv, CloningOptions};
use crate::model::{
    sample_count, sample_dataset, Activation, Center, Ensemble, ManifoldModel, ModelConfig,
};
use crate::speciation;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "MFD_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "mfd-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "mfd",
    version,
    about = "Speciation and collapse times of diffusion models on manifold data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Speciation time from the finite-d and large-d formulas.
    Speciation,
    /// Collapse time of the configured model.
    Collapse,
    /// Collapse time against β for several activations and F ensembles.
    CollapseSweep,
    /// Replica free energy on a time grid.
    FreeEnergy,
    /// Cloning experiment with the empirical score.
    ExpSpeciation,
    /// log Z1 / log Z2 crossing on a sampled dataset.
    ExpCollapse,
    /// Nested Monte-Carlo free energy, matched and mismatched prior.
    ExpFreeEnergy,
    /// Direct check of the REM derivative identity.
    ExpRem,
    /// Oracle suite; exits with 4 if any check fails.
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Speciation => "speciation",
            Command::Collapse => "collapse",
            Command::CollapseSweep => "collapse-sweep",
            Command::FreeEnergy => "free-energy",
            Command::ExpSpeciation => "exp-speciation",
            Command::ExpCollapse => "exp-collapse",
            Command::ExpFreeEnergy => "exp-free-energy",
            Command::ExpRem => "exp-rem",
            Command::Validate => "validate",
        }
    }
}

/// `--key value` overrides; each flag mirrors a key of the TOML config.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML file with `[model]` and `[run]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $MFD_OUTPUT_DIR, else ./mfd-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub p: Option<usize>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub m: Option<f64>,
    #[arg(long, global = true)]
    pub mu_file: Option<PathBuf>,
    #[arg(long, global = true)]
    pub activation: Option<String>,
    #[arg(long, global = true)]
    pub ensemble: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Comma-separated, strictly decreasing times.
    #[arg(long, global = true, value_delimiter = ',')]
    pub t_grid: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub activations: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub t: Option<f64>,
    #[arg(long, global = true)]
    pub n_data: Option<usize>,
    #[arg(long, global = true)]
    pub n_traj: Option<usize>,
    #[arg(long, global = true)]
    pub n_clones: Option<usize>,
    #[arg(long, global = true)]
    pub n_noise: Option<usize>,
    #[arg(long, global = true)]
    pub n_x: Option<usize>,
    #[arg(long, global = true)]
    pub n_latent: Option<usize>,
    #[arg(long, global = true)]
    pub n_rep: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub t_end: Option<f64>,
}

/// Run parameters outside the model. Unset entries take per-command defaults
/// and are filled in before the manifest is written.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_data: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_clones: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_noise: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_latent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rep: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunSettings,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(ov: &Overrides) -> Result<Self> {
        let mut cfg = match &ov.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                Self::from_toml_str(&text)?
            }
            None => Self::default(),
        };
        let m = &mut cfg.model;
        if let Some(v) = ov.d {
            m.d = v;
        }
        // p and beta are alternatives: setting one clears the other
        if let Some(v) = ov.p {
            m.p = Some(v);
            m.beta = None;
        }
        if let Some(v) = ov.beta {
            m.beta = Some(v);
            m.p = None;
        }
        if let Some(v) = ov.alpha {
            m.alpha = v;
        }
        if let Some(v) = ov.rho {
            m.rho = v;
        }
        if let Some(v) = ov.m {
            m.m = Some(v);
            m.mu_file = None;
        }
        if let Some(v) = &ov.mu_file {
            m.mu_file = Some(v.clone());
            m.m = None;
        }
        if let Some(v) = &ov.activation {
            m.activation = v.clone();
        }
        if let Some(v) = &ov.ensemble {
            m.ensemble = v.parse()?;
        }
        if let Some(v) = ov.seed {
            m.seed = v;
        }
        let r = &mut cfg.run;
        macro_rules! take {
            ($($f:ident),*) => {$( if ov.$f.is_some() { r.$f = ov.$f.clone(); } )*};
        }
        take!(
            t_grid,
            betas,
            activations,
            t,
            n_data,
            n_traj,
            n_clones,
            n_noise,
            n_x,
            n_latent,
            n_rep,
            dt,
            t_end
        );
        if ov.out.is_some() {
            r.output_dir = ov.out.clone();
        }
        if r.output_dir.is_none() {
            r.output_dir = Some(
                std::env::var_os(OUTPUT_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            );
        }
        Ok(cfg)
    }
}

/// Files and summary produced by one command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: Value,
    pub files: Vec<(String, Vec<u8>)>,
    pub validation_failed: bool,
}

fn linspace_down(hi: f64, lo: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| hi - k as f64 * step).collect()
}

fn model_json(m: &ManifoldModel) -> Value {
    json!({
        "d": m.d(), "p": m.p(), "beta": m.beta(), "alpha": m.alpha(), "rho": m.rho(), "m": m.m(),
        "activation": m.activation().name(), "ensemble": m.ensemble().to_string(), "hash": m.fingerprint(),
    })
}

fn to_json_bytes(v: &Value) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Runs one command on a resolved config without touching the filesystem.
pub fn execute(command: Command, cfg: &mut RunConfig) -> Result<Outcome> {
    match command {
        Command::Speciation => cmd_speciation(cfg),
        Command::Collapse => cmd_collapse(cfg),
        Command::CollapseSweep => cmd_collapse_sweep(cfg),
        Command::FreeEnergy => cmd_free_energy(cfg),
        Command::ExpSpeciation => cmd_exp_speciation(cfg),
        Command::ExpCollapse => cmd_exp_collapse(cfg),
        Command::ExpFreeEnergy => cmd_exp_free_energy(cfg),
        Command::ExpRem => cmd_exp_rem(cfg),
        Command::Validate => cmd_validate(cfg),
    }
}

fn cmd_speciation(cfg: &mut RunConfig) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let s = speciation::summarize(&model)?;
    let summary = json!({
        "model": model_json(&model),
        "t_s_finite": s.t_s_finite,
        "t_s_asymptotic": s.t_s_asymptotic,
        "rho1": s.rho1,
        "rho_star_sq": s.rho_star_sq,
        "gamma0_sq_sum": s.gamma0_sq_sum,
        "quadrature_nodes": s.quadrature_nodes,
        "curvature_at_t_s": speciation::potential_curvature_at_zero(s.t_s_finite, s.gamma0_sq_sum),
    });
    Ok(Outcome {
        files: vec![("speciation.json".into(), to_json_bytes(&summary)?)],
        summary,
        ..Default::default()
    })
}

/// Theory collapse time with the method implied by (activation, ensemble),
/// plus any alternative routes that apply.
pub fn collapse_dispatch(
    model: &ManifoldModel,
    alpha: f64,
) -> Result<(CollapseResult, Vec<CollapseResult>)> {
    let beta = model.beta();
    match (model.activation().is_linear(), model.ensemble()) {
        (true, Ensemble::DeterministicIsometry) => Ok((
            collapse::collapse_result_linear_isometry(alpha, beta)?,
            vec![],
        )),
        (true, Ensemble::GaussianIid) => {
            let rmt = collapse::collapse_time_linear_rmt(alpha, beta)?;
            let glm = collapse::collapse_time_glm(model, alpha)?;
            Ok((rmt, vec![glm]))
        }
        (false, Ensemble::GaussianIid) => Ok((collapse::collapse_time_glm(model, alpha)?, vec![])),
        (false, Ensemble::DeterministicIsometry) => Err(Error::Unsupported(
            "the replica collapse time for a nonlinear activation needs gaussian_iid F".into(),
        )),
    }
}

fn cmd_collapse(cfg: &mut RunConfig) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let (main, alts) = collapse_dispatch(&model, model.alpha())?;
    let summary = json!({
        "model": model_json(&model),
        "alpha": model.alpha(),
        "beta": model.beta(),
        "t_c": main.t_c,
        "method": main.method,
        "residual": main.residual,
        "alternatives": alts,
    });
    Ok(Outcome {
        files: vec![("collapse.json".into(), to_json_bytes(&summary)?)],
        summary,
        ..Default::default()
    })
}

fn cmd_collapse_sweep(cfg: &mut RunConfig) -> Result<Outcome> {
    let betas = cfg
        .run
        .betas
        .get_or_insert_with(|| (1..=10).map(|k| 0.1 * k as f64).collect())
        .clone();
    let acts = cfg
        .run
        .activations
        .get_or_insert_with(|| vec!["relu".into(), "tanh".into(), "sigmoid".into()])
        .clone();
    let alpha = cfg.model.alpha;
    let (m, rho) = (cfg.model.m.unwrap_or(1.0), cfg.model.rho);
    if betas.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
        return Err(Error::param("beta", "sweep values must lie in (0, 1]"));
    }
    let activations: Vec<Activation> = acts.iter().map(|a| a.parse()).collect::<Result<_>>()?;

    let mut fig1 = String::from(
        "# collapse time t_C (diffusion time units) vs beta = p/d; replica GLM free energy for nonlinear activations, isometric closed form for linear\n",
    );
    fig1.push_str("beta,activation,method,t_c\n");
    let mut rows = Vec::new();
    for &beta in &betas {
        let iso = collapse::collapse_time_linear_isometry(alpha, beta)?;
        fig1.push_str(&format!(
            "{beta:.6},linear,linear_isometry_closed_form,{iso:.12e}\n"
        ));
        for act in &activations {
            let glm = GlmFreeEnergy::new(beta, m, rho, act.clone())?
                .collapse_time(alpha, collapse::TimeBracket::default())?;
            fig1.push_str(&format!(
                "{beta:.6},{},glm_general,{:.12e}\n",
                act.name(),
                glm.t_c
            ));
            rows.push(json!({"beta": beta, "activation": act.name(), "t_c": glm.t_c}));
        }
    }

    let mut fig2 =
        String::from("# collapse time (diffusion time units) vs beta for a linear manifold: isometric F closed form and random gaussian F (Marchenko-Pastur)\n");
    fig2.push_str("beta,t_c_isometry,t_c_rmt,difference\n");
    let mut diffs = Vec::new();
    for &beta in &betas {
        let iso = collapse::collapse_time_linear_isometry(alpha, beta)?;
        let rmt = collapse::collapse_time_linear_rmt(alpha, beta)?.t_c;
        fig2.push_str(&format!(
            "{beta:.6},{iso:.12e},{rmt:.12e},{:.12e}\n",
            rmt - iso
        ));
        diffs.push(json!({"beta": beta, "t_c_isometry": iso, "t_c_rmt": rmt}));
    }
    let summary = json!({ "alpha": alpha, "m": m, "rho": rho, "nonlinear": rows, "linear": diffs });
    Ok(Outcome {
        files: vec![
            ("collapse_sweep_activations.csv".into(), fig1.into_bytes()),
            ("collapse_sweep_linear.csv".into(), fig2.into_bytes()),
            ("collapse_sweep.json".into(), to_json_bytes(&summary)?),
        ],
        summary,
        ..Default::default()
    })
}

fn cmd_free_energy(cfg: &mut RunConfig) -> Result<Outcome> {
    let grid = cfg
        .run
        .t_grid
        .get_or_insert_with(|| vec![2.0, 1.0, 0.5, 0.2, 0.1, 0.05])
        .clone();
    let model = cfg.model.build()?;
    let beta = model.beta();
    let glm = match model.ensemble() {
        Ensemble::GaussianIid => Some(GlmFreeEnergy::from_model(&model)?),
        Ensemble::DeterministicIsometry => {
            if !model.activation().is_linear() {
                return Err(Error::Unsupported(
                    "free energy with isometric F needs a linear activation".into(),
                ));
            }
            None
        }
    };
    let linear = model.activation().is_linear();
    let mut csv = String::from(
        "# (1/d) E log P_t^+(x) in nats per ambient dimension; replica value beta*f_star for gaussian F, isometric closed form otherwise; exact column for linear activation at the model's finite F\n",
    );
    csv.push_str("t,q_star,r_star,f_star,free_energy_per_d,exact_linear\n");
    let mut rows = Vec::new();
    for &t in &grid {
        let (q, r, f, per_d) = match &glm {
            Some(g) => {
                let res = g.f_star(t)?;
                (res.q_star, res.r_star, res.f_star, beta * res.f_star)
            }
            None => {
                // E log P = −½log(2πh) − ½β log(1+ηρ) − ½ per dimension
                let s = DiffusionSchedule::at(t);
                let v = -0.5 * (2.0 * std::f64::consts::PI * s.h).ln()
                    - 0.5 * beta * (s.eta() * model.rho()).ln_1p()
                    - 0.5;
                (f64::NAN, f64::NAN, v / beta, v)
            }
        };
        let exact = if linear {
            collapse::linear_free_energy_exact(&model, t)?
        } else {
            f64::NAN
        };
        csv.push_str(&format!(
            "{t:.9},{q:.12e},{r:.12e},{f:.12e},{per_d:.12e},{exact:.12e}\n"
        ));
        rows.push(json!({"t": t, "q_star": q, "r_star": r, "f_star": f, "free_energy_per_d": per_d, "exact_linear": exact}));
    }
    let summary = json!({"model": model_json(&model), "rows": rows});
    Ok(Outcome {
        files: vec![
            ("free_energy.csv".into(), csv.into_bytes()),
            ("free_energy.json".into(), to_json_bytes(&summary)?),
        ],
        summary,
        ..Default::default()
    })
}

fn cmd_exp_speciation(cfg: &mut RunConfig) -> Result<Outcome> {
    let r = &mut cfg.run;
    let grid = r
        .t_grid
        .get_or_insert_with(|| linspace_down(3.5, 0.5, 0.5))
        .clone();
    let n_data = *r.n_data.get_or_insert(4096);
    let n_traj = *r.n_traj.get_or_insert(32);
    let n_clones = *r.n_clones.get_or_insert(32);
    let opts = CloningOptions {
        dt: *r.dt.get_or_insert(0.05),
        t_end: *r.t_end.get_or_insert(0.25),
        ..Default::default()
    };
    let model = cfg.model.build()?;
    let exp = experiments::speciation_experiment(
        &model,
        n_data,
        &grid,
        n_traj,
        n_clones,
        cfg.model.seed,
        &opts,
    )?;
    let mut csv = Vec::new();
    write_records_csv(&exp.records, &mut csv)?;
    let summary = json!({
        "model": model_json(&model),
        "t_s_empirical": exp.t_s_empirical,
        "t_s_theory_asymptotic": exp.t_s_asymptotic,
        "t_s_theory_finite": exp.t_s_finite,
        "threshold": opts.threshold,
    });
    Ok(Outcome {
        files: vec![
            ("exp_speciation.csv".into(), csv),
            ("exp_speciation.json".into(), to_json_bytes(&summary)?),
        ],
        summary,
        ..Default::default()
    })
}

fn cmd_exp_collapse(cfg: &mut RunConfig) -> Result<Outcome> {
    let model = cfg.model.build()?;
    let r = &mut cfg.run;
    let grid = r
        .t_grid
        .get_or_insert_with(|| linspace_down(0.6, 0.02, 0.02))
        .clone();
    let n_noise = *r.n_noise.get_or_insert(200);
    let n_data = match r.n_data {
        Some(n) => n,
        None => *r.n_data.insert(sample_count(model.alpha(), model.d())?),
    };
    let seed = cfg.model.seed;
    let data = sample_dataset(&model, n_data, seed)?;
    let cross = experiments::collapse_crossing_experiment(&model, &data, &grid, n_noise, seed)?;
    let cond = experiments::condensation_experiment(&model, &data, &grid, n_noise, seed)?;
    let theory = collapse_dispatch(&model, model.alpha())
        .map(|(c, _)| c)
        .ok();
    let mut csv = Vec::new();
    write_records_csv(&cross.records, &mut csv)?;
    let summary = json!({
        "model": model_json(&model),
        "n_data": n_data,
        "t_c_empirical": cross.t_c_empirical,
        "t_star_condensation": cond.t_star,
        "t_c_theory": theory.as_ref().map(|c| c.t_c),
        "theory_method": theory.as_ref().map(|c| c.method),
        "warning": cross.warning,
    });
    Ok(Outcome {
        files: vec![
            ("exp_collapse.csv".into(), csv),
            ("exp_collapse.json".into(), to_json_bytes(&summary)?),
        ],
        summary,
        ..Default::default()
    })
}

fn cmd_exp_free_energy(cfg: &mut RunConfig) -> Result<Outcome> {
    let r = &mut cfg.run;
    let t = *r.t.get_or_insert(0.5);
    let n_x = *r.n_x.get_or_insert(400);
    let n_latent = *r.n_latent.get_or_insert(10_000);
    let model = cfg.model.build()?;
    let pair = experiments::free_energy_mc_paired(&model, t, n_x, n_latent, cfg.model.seed)?;
    let exact = if model.activation().is_linear() {
        Some(collapse::linear_free_energy_exact(&model, t)?)
    } else {
        None
    };
    let mut csv = Vec::new();
    write_records_csv(
        &[pair.matched.record.clone(), pair.mismatched.record.clone()],
        &mut csv,
    )?;
    let summary = json!({
        "model": model_json(&model),
        "matched": pair.matched,
        "mismatched": pair.mismatched,
        "difference": pair.difference,
        "difference_stderr": pair.difference_stderr,
        "exact_linear": exact,
    });
    Ok(Outcome {
        files: vec![
            ("exp_free_energy.csv".into(), csv),
            ("exp_free_energy.json".into(), to_json_bytes(&summary)?),
        ],
        summary,
        ..Default::default()
    })
}

fn cmd_exp_rem(cfg: &mut RunConfig) -> Result<Outcome> {
    let r = &mut cfg.run;
    let t = *r.t.get_or_insert(0.5);
    let n_rep = *r.n_rep.get_or_insert(100_000);
    let model = cfg.model.build()?;
    let rec = experiments::rem_derivative_check(&model, t, n_rep, cfg.model.seed)?;
    let mut csv = Vec::new();
    write_records_csv(std::slice::from_ref(&rec), &mut csv)?;
    let summary = json!({"model": model_json(&model), "record": rec, "expected": 0.5});
    Ok(Outcome {
        files: vec![
            ("exp_rem.csv".into(), csv),
            ("exp_rem.json".into(), to_json_bytes(&summary)?),
        ],
        summary,
        ..Default::default()
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, reference: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            reference,
            tolerance,
            pass: (value - reference).abs() <= tolerance,
        }
    }
}

/// Oracle checks that do not depend on the configured model.
pub fn oracle_checks(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let iso = collapse::collapse_result_linear_isometry(0.5, 0.5)?;
    out.push(Check::new(
        "isometric_closed_form_residual",
        iso.residual,
        0.0,
        1e-12,
    ));

    let glm = GlmFreeEnergy::new(0.5, 1.0, 1.0, Activation::Linear)?;
    let rmt = collapse::collapse_time_linear_rmt(0.5, 0.5)?;
    let via_glm = glm.collapse_time(0.5, collapse::TimeBracket::default())?;
    out.push(Check::new(
        "glm_linear_vs_rmt_collapse_time",
        via_glm.t_c,
        rmt.t_c,
        1e-6,
    ));

    let big = ManifoldModel::new(
        2000,
        1000,
        0.5,
        1.0,
        Center::Scale(1.0),
        Activation::Linear,
        Ensemble::GaussianIid,
        seed,
    )?;
    out.push(Check::new(
        "rmt_logdet_vs_exact_d2000",
        collapse::mp_logdet(1.0, 0.5),
        collapse::logdet_exact(&big, 1.0)?,
        1e-2,
    ));

    let mut worst_psi = 0.0f64;
    for &r in &[0.1, 1.0, 5.0] {
        worst_psi = worst_psi
            .max((collapse::psi_quadrature_check(r, 1.0, 1.0)? - collapse::psi(r, 1.0, 1.0)).abs());
    }
    out.push(Check::new(
        "psi_closed_form_vs_quadrature",
        worst_psi,
        0.0,
        1e-8,
    ));

    let mut worst_big = 0.0f64;
    for &t in &[0.05, 0.3, 1.0] {
        for &q in &[0.0, 0.7, 1.5] {
            let v = collapse::psi_big(q, t, 1.0, 1.0, &Activation::Linear)?;
            worst_big = worst_big.max((v - collapse::psi_big_linear(q, t, 1.0, 1.0)).abs());
        }
    }
    out.push(Check::new(
        "Psi_linear_vs_closed_form",
        worst_big,
        0.0,
        1e-6,
    ));

    let ch = collapse::Channel {
        t: 0.8,
        m: 1.0,
        rho: 1.0,
        activation: &Activation::Tanh,
    };
    let grid = collapse::psi_big_grid(0.5, &ch, &collapse::PsiOptions::default())?;
    let nested = collapse::psi_big_nested(0.5, &ch, &collapse::NestedOptions::default())?;
    out.push(Check::new("Psi_tanh_grid_vs_nested", grid, nested, 1e-5));

    let model = ManifoldModel::new(
        64,
        32,
        0.5,
        1.0,
        Center::Scale(1.0),
        Activation::Tanh,
        Ensemble::GaussianIid,
        seed,
    )?;
    let st = speciation::SpeciationState::from_model(&model)?;
    let ts = speciation::speciation_time_from_sum(st.gamma0_sq_sum)?;
    out.push(Check::new(
        "potential_curvature_at_t_s",
        speciation::potential_curvature_at_zero(ts, st.gamma0_sq_sum),
        0.0,
        1e-10,
    ));

    let rem = experiments::rem_derivative_check(&model, 0.5, 20_000, seed)?;
    out.push(Check::new("rem_derivative_identity", rem.value, 0.5, 0.01));
    Ok(out)
}

fn cmd_validate(cfg: &mut RunConfig) -> Result<Outcome> {
    cfg.model.build()?;
    let checks = oracle_checks(cfg.model.seed)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    let summary = json!({"checks": checks, "failed": failed});
    Ok(Outcome {
        files: vec![("validate.json".into(), to_json_bytes(&summary)?)],
        summary,
        validation_failed: failed > 0,
    })
}

/// Writes the outputs and `manifest.json` into `dir`.
pub fn write_artifacts(
    dir: &Path,
    command: Command,
    cfg: &RunConfig,
    outcome: &Outcome,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, bytes) in &outcome.files {
        std::fs::write(dir.join(name), bytes)?;
        entries.push(json!({"file": name, "sha256": hex::encode(Sha256::digest(bytes))}));
    }
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "outputs": entries,
        "created_unix": created,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, to_json_bytes(&manifest)?)?;
    Ok(path)
}

/// Machine-readable error record printed on stderr.
pub fn error_record(err: &Error) -> Value {
    json!({
        "error": err.kind(),
        "field": err.field(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(std::io::stdout(), "{e}");
                return EXIT_OK;
            }
            let rec = json!({"error": "usage", "field": null, "message": e.to_string(), "exit_code": EXIT_CONFIG});
            eprintln!("{rec}");
            return EXIT_CONFIG;
        }
    };
    match run_command(cli.command, &cli.overrides) {
        Ok(outcome) => {
            // a closed pipe (e.g. `| head`) is not an error of the run
            let _ = writeln!(std::io::stdout(), "{}", outcome.summary);
            if outcome.validation_failed {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            e.exit_code()
        }
    }
}

/// Resolves the config, executes and writes artifacts.
pub fn run_command(command: Command, ov: &Overrides) -> Result<Outcome> {
    let mut cfg = RunConfig::resolve(ov)?;
    let outcome = execute(command, &mut cfg)?;
    let dir = cfg
        .run
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    write_artifacts(&dir, command, &cfg, &outcome)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[model]\nd = 30\nbeta = 0.5\nalpha = 0.2\nrho = 1.0\nm = 1.0\nactivation = \"tanh\"\nensemble = \"gaussian_iid\"\nseed = 1\n[run]\nn_rep = 10\n",
        )
        .unwrap();
        let ov = Overrides {
            config: Some(path),
            p: Some(6),
            n_rep: Some(20),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&ov).unwrap();
        assert_eq!(cfg.model.d, 30);
        assert_eq!(cfg.model.p, Some(6));
        assert_eq!(cfg.model.beta, None);
        assert_eq!(cfg.run.n_rep, Some(20));
        assert!(cfg.run.output_dir.is_some());
    }

    #[test]
    fn unknown_run_key_is_a_config_error() {
        let err = RunConfig::from_toml_str("[run]\nbogus = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn dispatch_rejects_nonlinear_isometry() {
        let m = ManifoldModel::new(
            8,
            4,
            0.5,
            1.0,
            Center::Scale(1.0),
            Activation::Tanh,
            Ensemble::DeterministicIsometry,
            0,
        )
        .unwrap();
        assert!(matches!(
            collapse_dispatch(&m, 0.5),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn grid_helper() {
        let g = linspace_down(0.6, 0.02, 0.02);
        assert_eq!(g.len(), 30);
        assert!((g[29] - 0.02).abs() < 1e-12);
    }
}
