//! Monte-Carlo experiment engine.
//!
//! Experiments draw independent trials (placement + fading + pilots), design
//! filters and compression plans per trial, and aggregate capacity figures
//! into CSV rows plus a JSON-lines run manifest. Trials are parallelized with
//! a worker pool; every trial owns RNG streams keyed by `(seed, trial,
//! purpose)` and results are aggregated in ascending trial order, so output
//! bytes do not depend on the worker count.

mod output;

pub use output::{
    fmt_sig9, plot_spec_convergence, plot_spec_rows, plot_spec_scaling, write_convergence_csv,
    write_figure_outputs, write_rows_csv, write_scaling_csv, FigureFiles, ManifestRecord,
};

use crate::capacity::{
    cutset_bound, sum_capacity_sic, user_capacities_lmmse,
};
use crate::compression::uqn_plan;
use crate::dimred::{
    antenna_reduce, antenna_selection, full_mi, reduce, tcklt_bca, tklt_bank_design, DrMethod,
    FilterBank, BCA_DEFAULT_REL_TOL,
};
use crate::imperfect_csi::{
    bound_capacity, design_filters_imperfect, genie_capacity, genie_component_variances,
    heuristic_plan, mi_lower_bound, reduced_channel_imperfect, whitening,
};
use crate::scenario::streams::{trial_rng, StreamPurpose};
use crate::scenario::{draw_channels, estimate_channels, generate_scenario, ScenarioConfig};
use crate::scenario::ChannelSet;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Default BCA sweep budget.
pub const DEFAULT_J_MAX: usize = 3;

/// Dimension-reduction method selector in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Tcklt,
    Tklt,
    AntennaSelect,
    AntennaReduce,
    None,
}

impl MethodTag {
    pub fn label(self) -> &'static str {
        match self {
            MethodTag::Tcklt => "tcklt",
            MethodTag::Tklt => "tklt",
            MethodTag::AntennaSelect => "antenna_select",
            MethodTag::AntennaReduce => "antenna_reduce",
            MethodTag::None => "none",
        }
    }

    fn to_dr(self) -> DrMethod {
        match self {
            MethodTag::Tcklt => DrMethod::Tcklt,
            MethodTag::Tklt => DrMethod::Tklt,
            MethodTag::AntennaSelect => DrMethod::AntennaSelect,
            MethodTag::AntennaReduce => DrMethod::AntennaReduce,
            MethodTag::None => DrMethod::None,
        }
    }
}

/// Symbol detection at the central processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    Sic,
    Lmmse,
}

/// Reduced-dimension policy: a fixed `N` or the envelope over all valid `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NPolicy {
    Fixed(usize),
    Envelope,
}

impl Serialize for NPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NPolicy::Fixed(n) => s.serialize_u64(*n as u64),
            NPolicy::Envelope => s.serialize_str("envelope"),
        }
    }
}

impl<'de> Deserialize<'de> for NPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(NPolicy::Fixed(n as usize)),
            Raw::Text(t) if t == "envelope" => Ok(NPolicy::Envelope),
            Raw::Text(t) => Err(D::Error::custom(format!(
                "n_policy must be an integer or \"envelope\", got \"{t}\""
            ))),
        }
    }
}

/// Full experiment description, loadable from TOML with unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// Per-receiver fronthaul rates in bpcu, ascending.
    pub rate_grid: Vec<f64>,
    pub n_policy: NPolicy,
    pub methods: Vec<MethodTag>,
    pub detection: Detection,
    pub trials: usize,
    /// Pilot SNRs in dB for the imperfect-CSI experiment.
    pub rho_pl_db: Option<Vec<f64>>,
    /// Transmit SNR grid in dB for the SNR-scaling experiment.
    pub rho_grid_db: Vec<f64>,
    pub output_path: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            rate_grid: (1..=16).map(|i| 2.5 * i as f64).collect(),
            n_policy: NPolicy::Envelope,
            methods: vec![MethodTag::Tcklt, MethodTag::None],
            detection: Detection::Sic,
            trials: 500,
            rho_pl_db: None,
            rho_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            output_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.rate_grid.is_empty() {
            return Err(Error::Config("rate_grid must not be empty".into()));
        }
        if !self.rate_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("rate_grid must be strictly ascending".into()));
        }
        if self.rate_grid.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("rate_grid entries must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if let NPolicy::Fixed(n) = self.n_policy {
            crate::dimred::validate_reduced_dim(
                n,
                self.scenario.m,
                self.scenario.k,
                self.scenario.l,
            )?;
        }
        Ok(())
    }

    /// Candidate reduced dimensions for a method under the current policy.
    pub fn candidate_dims(&self, method: MethodTag) -> Vec<usize> {
        if method == MethodTag::None {
            return vec![self.scenario.m];
        }
        match self.n_policy {
            NPolicy::Fixed(n) => vec![n],
            NPolicy::Envelope => {
                let lo = self.scenario.k.div_ceil(self.scenario.l);
                let hi = self.scenario.m.min(self.scenario.k);
                (lo..=hi).collect()
            }
        }
    }
}

/// Parse a config from TOML text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a config with `key.path=value` overrides applied before validation.
pub fn parse_config_with_overrides(
    text: &str,
    overrides: &[String],
) -> Result<ExperimentConfig> {
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
        let value = parse_override_value(raw.trim());
        insert_dotted(&mut table, path.trim(), value)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// A raw override value: parsed as a TOML literal when possible, else a string.
fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(t) = toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn insert_dotted(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts = path.split('.').collect::<Vec<_>>();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("invalid override key '{path}'")));
    }
    let last = parts.pop().expect("non-empty path");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override key '{path}': '{p}' is not a table"))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// One aggregated CSV row.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub method: String,
    pub r: f64,
    pub n_used: usize,
    pub rho_db: f64,
    pub rho_pl_db: Option<f64>,
    pub mean_sum_capacity: f64,
    pub mean_user_capacity: f64,
    pub outage5_user_capacity: f64,
    pub cutset: f64,
    pub full_mi: f64,
    pub trials: usize,
    pub seed: u64,
}

impl ResultRow {
    fn check(&self) -> Result<()> {
        let fields = [
            self.mean_sum_capacity,
            self.mean_user_capacity,
            self.outage5_user_capacity,
            self.cutset,
            self.full_mi,
        ];
        if fields.iter().any(|v| !v.is_finite() || *v < -1e-9) {
            return Err(Error::InvalidInput(format!(
                "non-finite or negative capacity in row {self:?}"
            )));
        }
        Ok(())
    }
}

/// Run bookkeeping for the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub trials_requested: usize,
    pub trials_ok: usize,
    pub trials_failed: usize,
    /// Points violating SIC <= min(LR, full MI) or sum(LMMSE) <= SIC.
    pub bound_violations: usize,
    pub wall_time_s: f64,
}

/// Mean and pooled 5th percentile of per-user capacities.
fn user_stats(samples: &mut Vec<f64>) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite capacities"));
    let idx = ((samples.len() as f64) * 0.05).floor() as usize;
    (mean, samples[idx.min(samples.len() - 1)])
}

fn design_bank(method: MethodTag, cs: &ChannelSet, n: usize) -> Result<FilterBank> {
    match method {
        MethodTag::Tcklt => Ok(tcklt_bca(cs, n, DEFAULT_J_MAX, BCA_DEFAULT_REL_TOL)?.bank),
        MethodTag::Tklt => tklt_bank_design(cs, n),
        MethodTag::AntennaSelect => antenna_selection(cs, n),
        MethodTag::AntennaReduce => antenna_reduce(cs, n),
        MethodTag::None => Ok(FilterBank::identity(cs.h[0].nrows(), cs.h.len())),
    }
}

/// One point of one trial.
#[derive(Debug, Clone)]
struct PointEval {
    /// Detection-specific sum (SIC log-det, or sum of LMMSE user rates).
    sum: f64,
    /// SIC sum capacity, always evaluated for bound discipline.
    sic: f64,
    /// Per-user LMMSE capacities when requested.
    users: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct SweepTrial {
    /// `[method][candidate_n][rate]`.
    points: Vec<Vec<Vec<PointEval>>>,
    full_mi: f64,
    /// Cut-set value per rate grid point.
    cutset: Vec<f64>,
}

/// Experiment runner with a fixed worker count.
#[derive(Debug, Clone)]
pub struct Runner {
    pub workers: usize,
}

impl Default for Runner {
    fn default() -> Self {
        Self { workers: 0 } // rayon default
    }
}

impl Runner {
    pub fn new(workers: usize) -> Self {
        Self { workers }
    }

    fn run_trials<T: Send>(
        &self,
        trials: usize,
        f: impl Fn(u64) -> Result<T> + Sync,
    ) -> Vec<(u64, Result<T>)> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .expect("worker pool");
        pool.install(|| {
            (0..trials as u64)
                .into_par_iter()
                .map(|t| (t, f(t)))
                .collect()
        })
    }

    /// Rate sweep: methods x candidate dimensions x rate grid (figures 2/8/9).
    pub fn run_rate_sweep(&self, cfg: &ExperimentConfig) -> Result<(Vec<ResultRow>, RunStats)> {
        cfg.validate()?;
        let t0 = std::time::Instant::now();
        let sc_cfg = &cfg.scenario;
        let want_users = cfg.detection == Detection::Lmmse;

        let outcomes = self.run_trials(cfg.trials, |trial| -> Result<SweepTrial> {
            let mut prng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Placement);
            let sc = generate_scenario(sc_cfg, &mut prng)?;
            let mut frng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Fading);
            let cs = draw_channels(&sc, sc_cfg, &mut frng);
            let fmi = full_mi(&cs)?;
            let cutset: Vec<f64> = cfg
                .rate_grid
                .iter()
                .map(|&r| cutset_bound(r, &cs))
                .collect::<Result<_>>()?;

            let mut points = Vec::with_capacity(cfg.methods.len());
            for &method in &cfg.methods {
                let mut per_n = Vec::new();
                for n in cfg.candidate_dims(method) {
                    let fb = design_bank(method, &cs, n)?;
                    let rcs = reduce(&cs, &fb)?;
                    let mut per_r = Vec::with_capacity(cfg.rate_grid.len());
                    for &r in &cfg.rate_grid {
                        let plan = uqn_plan(&rcs, r)?;
                        let deltas = plan.deltas();
                        let sic = sum_capacity_sic(&rcs, &deltas)?;
                        let (sum, users) = if want_users {
                            let (_, caps) = user_capacities_lmmse(&rcs, &deltas)?;
                            (caps.iter().sum(), Some(caps))
                        } else {
                            (sic, None)
                        };
                        per_r.push(PointEval { sum, sic, users });
                    }
                    per_n.push(per_r);
                }
                points.push(per_n);
            }
            Ok(SweepTrial {
                points,
                full_mi: fmi,
                cutset,
            })
        });

        let (rows, mut stats) = aggregate_sweep(cfg, &outcomes)?;
        stats.wall_time_s = t0.elapsed().as_secs_f64();
        Ok((rows, stats))
    }

    /// Dimension-reduction method comparison with paired trials (figure 8).
    ///
    /// All four DR schemes run on the same channel realizations; this is a
    /// rate sweep with the method list pinned.
    pub fn run_dr_comparison(
        &self,
        cfg: &ExperimentConfig,
    ) -> Result<(Vec<ResultRow>, RunStats)> {
        let mut cfg = cfg.clone();
        cfg.methods = vec![
            MethodTag::Tcklt,
            MethodTag::Tklt,
            MethodTag::AntennaSelect,
            MethodTag::AntennaReduce,
        ];
        self.run_rate_sweep(&cfg)
    }

    /// BCA convergence: normalized joint MI vs sweep index (figure 3).
    pub fn run_convergence(&self, cfg: &ExperimentConfig) -> Result<(Vec<ConvergenceRow>, RunStats)> {
        cfg.validate()?;
        let t0 = std::time::Instant::now();
        let sc_cfg = &cfg.scenario;
        let sweeps = 20usize;
        let dims = cfg.candidate_dims(MethodTag::Tcklt);

        let outcomes = self.run_trials(cfg.trials, |trial| -> Result<Vec<Vec<f64>>> {
            let mut prng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Placement);
            let sc = generate_scenario(sc_cfg, &mut prng)?;
            let mut frng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Fading);
            let cs = draw_channels(&sc, sc_cfg, &mut frng);
            dims.iter()
                .map(|&n| {
                    let run = tcklt_bca(&cs, n, sweeps, 0.0)?;
                    let last = run.objective_after_sweep(sweeps);
                    Ok((0..=sweeps)
                        .map(|j| run.objective_after_sweep(j) / last)
                        .collect())
                })
                .collect()
        });

        let mut ok = 0usize;
        let mut acc = vec![vec![0.0f64; sweeps + 1]; dims.len()];
        for (_, out) in &outcomes {
            if let Ok(per_n) = out {
                ok += 1;
                for (ni, series) in per_n.iter().enumerate() {
                    for (j, v) in series.iter().enumerate() {
                        acc[ni][j] += v;
                    }
                }
            }
        }
        if ok == 0 {
            return Err(Error::InvalidInput("all trials failed".into()));
        }
        let mut rows = Vec::new();
        for (ni, &n) in dims.iter().enumerate() {
            for j in 0..=sweeps {
                rows.push(ConvergenceRow {
                    method: "tcklt".into(),
                    n,
                    sweep: j,
                    mean_normalized_mi: acc[ni][j] / ok as f64,
                    trials: ok,
                    seed: sc_cfg.seed,
                });
            }
        }
        let stats = RunStats {
            trials_requested: cfg.trials,
            trials_ok: ok,
            trials_failed: cfg.trials - ok,
            bound_violations: 0,
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        Ok((rows, stats))
    }

    /// Joint-MI scaling with SNR per method and dimension (figure 4).
    pub fn run_snr_scaling(&self, cfg: &ExperimentConfig) -> Result<(Vec<ScalingRow>, RunStats)> {
        cfg.validate()?;
        if cfg.rho_grid_db.is_empty() {
            return Err(Error::Config("rho_grid_db must not be empty".into()));
        }
        let t0 = std::time::Instant::now();
        let sc_cfg = &cfg.scenario;
        let rhos: Vec<f64> = cfg.rho_grid_db.iter().map(|db| 10f64.powf(db / 10.0)).collect();

        struct Cell {
            joint: f64,
            full: f64,
        }
        let outcomes = self.run_trials(cfg.trials, |trial| -> Result<Vec<Vec<Vec<Cell>>>> {
            let mut prng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Placement);
            let sc = generate_scenario(sc_cfg, &mut prng)?;
            let mut frng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Fading);
            let cs0 = draw_channels(&sc, sc_cfg, &mut frng);
            cfg.methods
                .iter()
                .map(|&method| {
                    cfg.candidate_dims(method)
                        .iter()
                        .map(|&n| {
                            rhos.iter()
                                .map(|&rho| {
                                    let cs = ChannelSet {
                                        h: cs0.h.clone(),
                                        rho,
                                    };
                                    let fb = design_bank(method, &cs, n)?;
                                    Ok(Cell {
                                        joint: crate::dimred::joint_mi(&cs, &fb)?,
                                        full: full_mi(&cs)?,
                                    })
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        });

        let mut ok = 0usize;
        let mut joint_acc: Vec<Vec<Vec<f64>>> = cfg
            .methods
            .iter()
            .map(|&m| vec![vec![0.0; rhos.len()]; cfg.candidate_dims(m).len()])
            .collect();
        let mut full_acc = joint_acc.clone();
        for (_, out) in &outcomes {
            if let Ok(grid) = out {
                ok += 1;
                for (mi, per_n) in grid.iter().enumerate() {
                    for (ni, per_rho) in per_n.iter().enumerate() {
                        for (ri, cell) in per_rho.iter().enumerate() {
                            joint_acc[mi][ni][ri] += cell.joint;
                            full_acc[mi][ni][ri] += cell.full;
                        }
                    }
                }
            }
        }
        if ok == 0 {
            return Err(Error::InvalidInput("all trials failed".into()));
        }
        let mut rows = Vec::new();
        for (mi, &method) in cfg.methods.iter().enumerate() {
            for (ni, &n) in cfg.candidate_dims(method).iter().enumerate() {
                for (ri, &db) in cfg.rho_grid_db.iter().enumerate() {
                    let joint = joint_acc[mi][ni][ri] / ok as f64;
                    let full = full_acc[mi][ni][ri] / ok as f64;
                    rows.push(ScalingRow {
                        method: method.label().into(),
                        n,
                        rho_db: db,
                        mean_joint_mi: joint,
                        mean_full_mi: full,
                        mean_fraction: joint / full,
                        trials: ok,
                        seed: sc_cfg.seed,
                    });
                }
            }
        }
        let stats = RunStats {
            trials_requested: cfg.trials,
            trials_ok: ok,
            trials_failed: cfg.trials - ok,
            bound_violations: 0,
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        Ok((rows, stats))
    }

    /// Imperfect-CSI sweep: capacity lower bound and genie value per pilot
    /// SNR, with the perfect-CSI curve alongside (figure 10).
    pub fn run_imperfect_csi(
        &self,
        cfg: &ExperimentConfig,
    ) -> Result<(Vec<ResultRow>, RunStats)> {
        cfg.validate()?;
        let t0 = std::time::Instant::now();
        let sc_cfg = &cfg.scenario;
        let pilots_db: Vec<f64> = cfg
            .rho_pl_db
            .clone()
            .unwrap_or_else(|| vec![0.0, 10.0, 20.0]);
        let dims = cfg.candidate_dims(MethodTag::Tcklt);

        struct ImperfectTrial {
            /// `[pilot][n][rate]` capacity lower bound.
            bound: Vec<Vec<Vec<f64>>>,
            /// `[pilot][n][rate]` genie capacity.
            genie: Vec<Vec<Vec<f64>>>,
            /// `[n][rate]` perfect-CSI SIC capacity.
            perfect: Vec<Vec<f64>>,
            full_mi: f64,
            cutset: Vec<f64>,
        }

        let outcomes = self.run_trials(cfg.trials, |trial| -> Result<ImperfectTrial> {
            let mut prng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Placement);
            let sc = generate_scenario(sc_cfg, &mut prng)?;
            let mut frng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Fading);
            let cs = draw_channels(&sc, sc_cfg, &mut frng);
            let fmi = full_mi(&cs)?;
            let cutset: Vec<f64> = cfg
                .rate_grid
                .iter()
                .map(|&r| cutset_bound(r, &cs))
                .collect::<Result<_>>()?;

            let mut bound = Vec::with_capacity(pilots_db.len());
            let mut genie = Vec::with_capacity(pilots_db.len());
            for &pl_db in &pilots_db {
                // fresh clone of the same pilot stream pairs the noise draws
                // across pilot SNR levels
                let mut pilot_rng = trial_rng(sc_cfg.seed, trial, StreamPurpose::Pilot);
                let est =
                    estimate_channels(&cs, &sc, 10f64.powf(pl_db / 10.0), &mut pilot_rng)?;
                let wcs = whitening(est, cs.rho)?;
                let mut per_n_bound = Vec::with_capacity(dims.len());
                let mut per_n_genie = Vec::with_capacity(dims.len());
                for &n in &dims {
                    let fb =
                        design_filters_imperfect(&wcs, n, DEFAULT_J_MAX, BCA_DEFAULT_REL_TOL)?
                            .bank;
                    let rcs_hat = reduced_channel_imperfect(&wcs, &fb)?;
                    let sigma2 = genie_component_variances(&wcs, &fb, &rcs_hat);
                    let mut bd = Vec::with_capacity(cfg.rate_grid.len());
                    let mut gn = Vec::with_capacity(cfg.rate_grid.len());
                    for &r in &cfg.rate_grid {
                        let plan = heuristic_plan(&rcs_hat, r, None)?;
                        bd.push(bound_capacity(&rcs_hat, &plan)?);
                        let plan_genie = heuristic_plan(&rcs_hat, r, Some(&sigma2))?;
                        gn.push(genie_capacity(&wcs, &fb, &plan_genie)?);
                    }
                    per_n_bound.push(bd);
                    per_n_genie.push(gn);
                }
                bound.push(per_n_bound);
                genie.push(per_n_genie);
            }

            let mut perfect = Vec::with_capacity(dims.len());
            for &n in &dims {
                let fb = tcklt_bca(&cs, n, DEFAULT_J_MAX, BCA_DEFAULT_REL_TOL)?.bank;
                let rcs = reduce(&cs, &fb)?;
                let mut per_r = Vec::with_capacity(cfg.rate_grid.len());
                for &r in &cfg.rate_grid {
                    let plan = uqn_plan(&rcs, r)?;
                    per_r.push(sum_capacity_sic(&rcs, &plan.deltas())?);
                }
                perfect.push(per_r);
            }

            Ok(ImperfectTrial {
                bound,
                genie,
                perfect,
                full_mi: fmi,
                cutset,
            })
        });

        let oks: Vec<&ImperfectTrial> = outcomes
            .iter()
            .filter_map(|(_, o)| o.as_ref().ok())
            .collect();
        let failed = cfg.trials - oks.len();
        if oks.is_empty() {
            return Err(Error::InvalidInput("all trials failed".into()));
        }
        let nt = oks.len() as f64;
        let k = sc_cfg.k as f64;
        let mean_full = oks.iter().map(|t| t.full_mi).sum::<f64>() / nt;
        let mean_cut: Vec<f64> = (0..cfg.rate_grid.len())
            .map(|ri| oks.iter().map(|t| t.cutset[ri]).sum::<f64>() / nt)
            .collect();

        let mut rows = Vec::new();
        // envelope over N per trial for each family of curves
        let env = |get: &dyn Fn(&ImperfectTrial, usize, usize) -> f64| -> Vec<(f64, usize)> {
            (0..cfg.rate_grid.len())
                .map(|ri| {
                    let mut acc = 0.0;
                    let mut chosen = vec![0usize; dims.len()];
                    for t in &oks {
                        let (mut best, mut best_n) = (f64::NEG_INFINITY, 0usize);
                        for ni in 0..dims.len() {
                            let v = get(t, ni, ri);
                            if v > best {
                                best = v;
                                best_n = ni;
                            }
                        }
                        acc += best;
                        chosen[best_n] += 1;
                    }
                    let modal = chosen
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                        .map(|(i, _)| dims[i])
                        .unwrap_or(dims[0]);
                    (acc / nt, modal)
                })
                .collect()
        };

        let mut emit_family =
            |label: &str,
             pl: Option<f64>,
             get: &dyn Fn(&ImperfectTrial, usize, usize) -> f64|
             -> Result<()> {
                for (ni, &n) in dims.iter().enumerate() {
                    for (ri, &r) in cfg.rate_grid.iter().enumerate() {
                        let mean = oks.iter().map(|t| get(t, ni, ri)).sum::<f64>() / nt;
                        let row = ResultRow {
                            method: label.into(),
                            r,
                            n_used: n,
                            rho_db: sc_cfg.rho_db,
                            rho_pl_db: pl,
                            mean_sum_capacity: mean,
                            mean_user_capacity: mean / k,
                            outage5_user_capacity: {
                                let mut s: Vec<f64> =
                                    oks.iter().map(|t| get(t, ni, ri) / k).collect();
                                user_stats(&mut s).1
                            },
                            cutset: mean_cut[ri],
                            full_mi: mean_full,
                            trials: oks.len(),
                            seed: sc_cfg.seed,
                        };
                        row.check()?;
                        rows.push(row);
                    }
                }
                for ((ri, &r), (val, modal)) in
                    cfg.rate_grid.iter().enumerate().zip(env(get))
                {
                    let row = ResultRow {
                        method: format!("{label}_env"),
                        r,
                        n_used: modal,
                        rho_db: sc_cfg.rho_db,
                        rho_pl_db: pl,
                        mean_sum_capacity: val,
                        mean_user_capacity: val / k,
                        outage5_user_capacity: {
                            let mut s: Vec<f64> = oks
                                .iter()
                                .map(|t| {
                                    (0..dims.len())
                                        .map(|ni| get(t, ni, ri))
                                        .fold(f64::NEG_INFINITY, f64::max)
                                        / k
                                })
                                .collect();
                            user_stats(&mut s).1
                        },
                        cutset: mean_cut[ri],
                        full_mi: mean_full,
                        trials: oks.len(),
                        seed: sc_cfg.seed,
                    };
                    row.check()?;
                    rows.push(row);
                }
                Ok(())
            };

        for (pi, &pl) in pilots_db.iter().enumerate() {
            emit_family("tcklt", Some(pl), &|t, ni, ri| t.bound[pi][ni][ri])?;
            emit_family("tcklt_genie", Some(pl), &|t, ni, ri| t.genie[pi][ni][ri])?;
        }
        emit_family("tcklt", None, &|t, ni, ri| t.perfect[ni][ri])?;

        let stats = RunStats {
            trials_requested: cfg.trials,
            trials_ok: oks.len(),
            trials_failed: failed,
            bound_violations: 0,
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        Ok((rows, stats))
    }
}

/// Convergence-table row (figure 3).
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub method: String,
    pub n: usize,
    pub sweep: usize,
    pub mean_normalized_mi: f64,
    pub trials: usize,
    pub seed: u64,
}

/// SNR-scaling row (figure 4).
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub method: String,
    pub n: usize,
    pub rho_db: f64,
    pub mean_joint_mi: f64,
    pub mean_full_mi: f64,
    pub mean_fraction: f64,
    pub trials: usize,
    pub seed: u64,
}

fn aggregate_sweep(
    cfg: &ExperimentConfig,
    outcomes: &[(u64, Result<SweepTrial>)],
) -> Result<(Vec<ResultRow>, RunStats)> {
    let oks: Vec<&SweepTrial> = outcomes.iter().filter_map(|(_, o)| o.as_ref().ok()).collect();
    let failed = cfg.trials - oks.len();
    if oks.is_empty() {
        return Err(Error::InvalidInput("all trials failed".into()));
    }
    let nt = oks.len() as f64;
    let k = cfg.scenario.k as f64;
    let l = cfg.scenario.l as f64;

    let mean_full = oks.iter().map(|t| t.full_mi).sum::<f64>() / nt;
    let mean_cut: Vec<f64> = (0..cfg.rate_grid.len())
        .map(|ri| oks.iter().map(|t| t.cutset[ri]).sum::<f64>() / nt)
        .collect();

    // bound discipline across every evaluated point
    let mut violations = 0usize;
    for t in &oks {
        for per_n in &t.points {
            for per_r in per_n {
                for (ri, &r) in cfg.rate_grid.iter().enumerate() {
                    let p = &per_r[ri];
                    let cut = (l * r).min(t.full_mi);
                    if p.sic > cut + 1e-9 {
                        violations += 1;
                    }
                    if let Some(users) = &p.users {
                        if users.iter().sum::<f64>() > p.sic + 1e-9 {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let dims = cfg.candidate_dims(method);
        // fixed-N rows
        for (ni, &n) in dims.iter().enumerate() {
            for (ri, &r) in cfg.rate_grid.iter().enumerate() {
                let mean_sum = oks.iter().map(|t| t.points[mi][ni][ri].sum).sum::<f64>() / nt;
                let (mean_user, outage5) = match cfg.detection {
                    Detection::Lmmse => {
                        let mut pool: Vec<f64> = oks
                            .iter()
                            .flat_map(|t| {
                                t.points[mi][ni][ri].users.as_ref().expect("lmmse").clone()
                            })
                            .collect();
                        user_stats(&mut pool)
                    }
                    Detection::Sic => {
                        let mut pool: Vec<f64> =
                            oks.iter().map(|t| t.points[mi][ni][ri].sum / k).collect();
                        user_stats(&mut pool)
                    }
                };
                let row = ResultRow {
                    method: method.label().into(),
                    r,
                    n_used: n,
                    rho_db: cfg.scenario.rho_db,
                    rho_pl_db: None,
                    mean_sum_capacity: mean_sum,
                    mean_user_capacity: mean_user,
                    outage5_user_capacity: outage5,
                    cutset: mean_cut[ri],
                    full_mi: mean_full,
                    trials: oks.len(),
                    seed: cfg.scenario.seed,
                };
                row.check()?;
                rows.push(row);
            }
        }
        if dims.len() < 2 {
            continue;
        }
        // curve-level envelope (headline): max over N of the mean curves
        for (ri, &r) in cfg.rate_grid.iter().enumerate() {
            let (mut best, mut best_ni) = (f64::NEG_INFINITY, 0usize);
            for ni in 0..dims.len() {
                let mean_sum = oks.iter().map(|t| t.points[mi][ni][ri].sum).sum::<f64>() / nt;
                if mean_sum > best {
                    best = mean_sum;
                    best_ni = ni;
                }
            }
            let fixed = rows
                .iter()
                .find(|row| {
                    row.method == method.label()
                        && row.n_used == dims[best_ni]
                        && row.r == r
                })
                .expect("fixed row exists")
                .clone();
            let mut row = fixed;
            row.method = format!("{}_env", method.label());
            rows.push(row);
        }
        // per-trial maximization (upper-bounds the curve-level envelope)
        for (ri, &r) in cfg.rate_grid.iter().enumerate() {
            let mut acc = 0.0;
            let mut chosen = vec![0usize; dims.len()];
            let mut user_pool: Vec<f64> = Vec::new();
            for t in &oks {
                let (mut best, mut best_ni) = (f64::NEG_INFINITY, 0usize);
                for ni in 0..dims.len() {
                    let v = t.points[mi][ni][ri].sum;
                    if v > best {
                        best = v;
                        best_ni = ni;
                    }
                }
                acc += best;
                chosen[best_ni] += 1;
                match &t.points[mi][best_ni][ri].users {
                    Some(users) => user_pool.extend(users.iter().cloned()),
                    None => user_pool.push(best / k),
                }
            }
            let modal = chosen
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| dims[i])
                .unwrap_or(dims[0]);
            let (mean_user, outage5) = user_stats(&mut user_pool);
            let row = ResultRow {
                method: format!("{}_trialmax", method.label()),
                r,
                n_used: modal,
                rho_db: cfg.scenario.rho_db,
                rho_pl_db: None,
                mean_sum_capacity: acc / nt,
                mean_user_capacity: mean_user,
                outage5_user_capacity: outage5,
                cutset: mean_cut[ri],
                full_mi: mean_full,
                trials: oks.len(),
                seed: cfg.scenario.seed,
            };
            row.check()?;
            rows.push(row);
        }
    }

    let stats = RunStats {
        trials_requested: cfg.trials,
        trials_ok: oks.len(),
        trials_failed: failed,
        bound_violations: violations,
        wall_time_s: 0.0,
    };
    Ok((rows, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioConfig {
                k: 4,
                l: 2,
                m: 4,
                rho_db: 15.0,
                seed: 3,
                ..ScenarioConfig::default()
            },
            rate_grid: vec![4.0, 8.0, 16.0],
            n_policy: NPolicy::Envelope,
            methods: vec![MethodTag::Tcklt, MethodTag::None],
            detection: Detection::Sic,
            trials: 24,
            rho_pl_db: None,
            rho_grid_db: vec![0.0, 10.0, 20.0],
            output_path: None,
        }
    }

    #[test]
    fn config_roundtrip_and_unknown_key() {
        let text = r#"
            rate_grid = [5.0, 10.0]
            n_policy = "envelope"
            methods = ["tcklt", "none"]
            detection = "sic"
            trials = 10

            [scenario]
            K = 4
            L = 2
            M = 4
            rho_db = 15.0
            seed = 7
        "#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.scenario.k, 4);
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.n_policy, NPolicy::Envelope);

        let bad = text.replace("trials = 10", "trials = 10\nbogus_key = 1");
        let err = parse_config(&bad).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn config_overrides() {
        let text = "[scenario]\nK = 4\nL = 2\nM = 4\n";
        let cfg = parse_config_with_overrides(
            text,
            &[
                "scenario.rho_db=25".into(),
                "trials=17".into(),
                "n_policy=4".into(),
                "methods=[\"tklt\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.scenario.rho_db, 25.0);
        assert_eq!(cfg.trials, 17);
        assert_eq!(cfg.n_policy, NPolicy::Fixed(4));
        assert_eq!(cfg.methods, vec![MethodTag::Tklt]);

        // unknown key is rejected and named
        let err =
            parse_config_with_overrides(text, &["scenario.nope=1".into()]).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");

        // string form of n_policy
        let cfg =
            parse_config_with_overrides(text, &["n_policy=envelope".into()]).unwrap();
        assert_eq!(cfg.n_policy, NPolicy::Envelope);
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = tiny_cfg();
        cfg.rate_grid = vec![];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.rate_grid = vec![5.0, 3.0];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.n_policy = NPolicy::Fixed(9);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_envelope_dominates_and_monotone() {
        let cfg = tiny_cfg();
        let (rows, stats) = Runner::new(2).run_rate_sweep(&cfg).unwrap();
        assert_eq!(stats.trials_failed, 0);
        assert_eq!(stats.bound_violations, 0);

        for &r in &cfg.rate_grid {
            let env = rows
                .iter()
                .find(|row| row.method == "tcklt_env" && row.r == r)
                .unwrap();
            let trialmax = rows
                .iter()
                .find(|row| row.method == "tcklt_trialmax" && row.r == r)
                .unwrap();
            for n in 2..=4usize {
                let fixed = rows
                    .iter()
                    .find(|row| row.method == "tcklt" && row.r == r && row.n_used == n)
                    .unwrap();
                assert!(env.mean_sum_capacity >= fixed.mean_sum_capacity - 1e-12);
                assert!(trialmax.mean_sum_capacity >= env.mean_sum_capacity - 1e-12);
            }
        }

        // mean sum capacity non-decreasing in R per fixed (method, N)
        for n in 2..=4usize {
            let mut prev = f64::NEG_INFINITY;
            for &r in &cfg.rate_grid {
                let row = rows
                    .iter()
                    .find(|row| row.method == "tcklt" && row.r == r && row.n_used == n)
                    .unwrap();
                assert!(row.mean_sum_capacity >= prev - 1e-12);
                prev = row.mean_sum_capacity;
            }
        }
    }

    #[test]
    fn sweep_none_method_uses_full_identity() {
        let mut cfg = tiny_cfg();
        cfg.methods = vec![MethodTag::None];
        let (rows, _) = Runner::new(1).run_rate_sweep(&cfg).unwrap();
        // single candidate dimension M, no envelope rows
        assert!(rows.iter().all(|r| r.method == "none"));
        assert!(rows.iter().all(|r| r.n_used == cfg.scenario.m));
    }

    #[test]
    fn determinism_across_worker_counts() {
        let cfg = tiny_cfg();
        let (rows1, _) = Runner::new(1).run_rate_sweep(&cfg).unwrap();
        let (rows8, _) = Runner::new(8).run_rate_sweep(&cfg).unwrap();
        let csv1 = write_rows_csv(&rows1);
        let csv8 = write_rows_csv(&rows8);
        assert_eq!(csv1, csv8, "CSV must not depend on worker count");
    }

    #[test]
    fn convergence_rows_normalized() {
        let mut cfg = tiny_cfg();
        cfg.trials = 8;
        let (rows, stats) = Runner::new(2).run_convergence(&cfg).unwrap();
        assert_eq!(stats.trials_failed, 0);
        for row in &rows {
            assert!(row.mean_normalized_mi <= 1.0 + 1e-12);
            if row.sweep == 20 {
                assert!((row.mean_normalized_mi - 1.0).abs() < 1e-12);
            }
        }
        // non-decreasing in sweep per N
        for n in 2..=4usize {
            let series: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n)
                .map(|r| r.mean_normalized_mi)
                .collect();
            for w in series.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }

    #[test]
    fn snr_scaling_fraction_behaviour() {
        let mut cfg = tiny_cfg();
        cfg.trials = 8;
        cfg.methods = vec![MethodTag::Tcklt, MethodTag::AntennaReduce];
        let (rows, _) = Runner::new(2).run_snr_scaling(&cfg).unwrap();
        for row in &rows {
            assert!(row.mean_fraction <= 1.0 + 1e-12);
        }
        // full-dimension reduction (N = min(M,K) = M) captures everything
        for row in rows.iter().filter(|r| r.method == "tcklt" && r.n == 4) {
            assert!((row.mean_fraction - 1.0).abs() < 1e-9);
        }
        // fraction non-decreasing in rho for the full-rank T-CKLT reduction
        for n in 2..=4usize {
            let series: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == "tcklt" && r.n == n)
                .map(|r| r.mean_fraction)
                .collect();
            for w in series.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "fraction fell: {series:?}");
            }
        }
    }

    #[test]
    fn imperfect_rows_ordered_by_pilot_quality() {
        let mut cfg = tiny_cfg();
        cfg.trials = 16;
        cfg.rate_grid = vec![6.0, 12.0];
        cfg.rho_pl_db = Some(vec![0.0, 20.0]);
        let (rows, stats) = Runner::new(2).run_imperfect_csi(&cfg).unwrap();
        assert_eq!(stats.trials_failed, 0);
        for &r in &cfg.rate_grid {
            let at = |pl: Option<f64>| {
                rows.iter()
                    .find(|row| {
                        row.method == "tcklt_env" && row.r == r && row.rho_pl_db == pl
                    })
                    .map(|row| row.mean_sum_capacity)
                    .unwrap()
            };
            let low = at(Some(0.0));
            let high = at(Some(20.0));
            let perfect = at(None);
            assert!(low <= high + 1e-9, "pilot ordering broken at R={r}");
            assert!(high <= perfect + 1e-9, "bound above perfect CSI at R={r}");
        }
    }
}
