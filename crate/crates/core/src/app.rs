//! Commands behind the `slos` executable: configuration, fits on real
//! datasets, tuning, permutation tests and simulation studies.
//!
//! Every command computes first and writes its files at the end, so a failed
//! run leaves no partial output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FunctionalData;
use crate::error::{invalid, Result, SlosError};
use crate::io::{fmt_f64, load_csv, CsvLayout, FunctionalDataset, Table};
use crate::simulation::{run_study, Case, Method, ScenarioConfig, StudyReport, StudySettings};
use crate::solver::{DfRule, FitConfig, FitResult, PinRule};
use crate::tuning::{grid_search, m_heuristic, score, Criterion, ScoreTable, TuningGrid};

/// Points at which `β̂` is tabulated for plotting.
pub const BETA_GRID_POINTS: usize = 1001;

/// Run settings read from a `key = value` file. Keys left out take the
/// defaults below; data-dependent ones (knots, grids) are derived per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub data: Option<PathBuf>,
    pub response: Option<String>,
    pub id_column: Option<String>,
    /// `[start, end]`; defaults to the span of the grid header.
    pub domain: Option<[f64; 2]>,
    /// Replace the response by its natural logarithm.
    pub log_response: bool,

    pub num_subintervals: Option<usize>,
    pub degree: usize,
    pub deriv_order: usize,
    pub periodic: bool,
    pub fit_intercept: bool,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    /// `subinterval` or `coefficient`.
    pub pin_rule: String,
    /// `support` or `lqa`.
    pub df_rule: String,
    pub criterion: String,
    /// Fixes `γ` instead of searching over it.
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma_values: Option<Vec<f64>>,
    pub lambda_values: Option<Vec<f64>>,
    pub gamma_points: usize,
    pub lambda_points: usize,

    pub permutations: usize,
    /// Reuse the observed `(γ, λ)` instead of retuning every permutation.
    pub fast: bool,

    pub case: String,
    pub n: usize,
    pub replicates: usize,
    pub test_n: usize,
    pub snr: f64,
    pub mu: f64,
    pub grid_size: usize,
    pub methods: Vec<String>,

    pub seed: u64,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            data: None,
            response: None,
            id_column: None,
            domain: None,
            log_response: false,
            num_subintervals: None,
            degree: 3,
            deriv_order: 2,
            periodic: false,
            fit_intercept: true,
            max_iterations: 100,
            convergence_tol: 1e-6,
            pin_rule: "subinterval".into(),
            df_rule: "support".into(),
            criterion: "bic".into(),
            gamma: None,
            lambda: None,
            gamma_values: None,
            lambda_values: None,
            gamma_points: 8,
            lambda_points: 10,
            permutations: 1000,
            fast: false,
            case: "II".into(),
            n: 450,
            replicates: 20,
            test_n: 5000,
            snr: 4.0,
            mu: 1.0,
            grid_size: 101,
            methods: Method::ALL.iter().map(|m| m.to_string()).collect(),
            seed: 1,
        }
    }
}

impl AppConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SlosError::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SlosError::Config(e.to_string()))
    }

    pub fn criterion(&self) -> Result<Criterion> {
        self.criterion.parse()
    }

    pub fn pin_rule(&self) -> Result<PinRule> {
        match self.pin_rule.trim().to_ascii_lowercase().as_str() {
            "subinterval" => Ok(PinRule::Subinterval),
            "coefficient" => Ok(PinRule::Coefficient),
            other => Err(SlosError::Config(format!("unknown pin_rule {other:?}"))),
        }
    }

    pub fn df_rule(&self) -> Result<DfRule> {
        match self.df_rule.trim().to_ascii_lowercase().as_str() {
            "support" => Ok(DfRule::Support),
            "lqa" => Ok(DfRule::Lqa),
            other => Err(SlosError::Config(format!("unknown df_rule {other:?}"))),
        }
    }

    pub fn case(&self) -> Result<Case> {
        self.case.parse()
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    /// Model settings for a dataset of `n` samples, before `(γ, λ)` are set.
    pub fn fit_template(&self, n: usize) -> Result<FitConfig> {
        let mut c = FitConfig::new(self.num_subintervals.unwrap_or_else(|| m_heuristic(n)));
        c.degree = self.degree;
        c.deriv_order = self.deriv_order;
        c.periodic = self.periodic;
        c.fit_intercept = self.fit_intercept;
        c.max_iterations = self.max_iterations;
        c.convergence_tol = self.convergence_tol;
        c.pin_rule = self.pin_rule()?;
        c.df_rule = self.df_rule()?;
        c.validate()?;
        Ok(c)
    }

    fn layout(&self) -> Result<CsvLayout> {
        let response = self
            .response
            .clone()
            .ok_or_else(|| SlosError::Config("no response column given".into()))?;
        let mut layout = CsvLayout::new(response);
        if let Some(id) = &self.id_column {
            layout = layout.with_id(id.clone());
        }
        if let Some([a, b]) = self.domain {
            layout = layout.with_domain(a, b);
        }
        Ok(layout)
    }

    /// Reads the configured data file.
    pub fn load_dataset(&self) -> Result<FunctionalDataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| SlosError::Config("no data file given".into()))?;
        let mut ds = load_csv(path, &self.layout()?)?;
        if self.log_response {
            if let Some(i) = ds.data.responses.iter().position(|&y| y <= 0.0) {
                return invalid(format!(
                    "cannot take the log of response {} in sample {}",
                    ds.data.responses[i],
                    i + 1
                ));
            }
            ds.data = ds.data.with_responses(ds.data.responses.map(f64::ln))?;
        }
        Ok(ds)
    }

    /// Search grid: explicit values when given, the default grid otherwise,
    /// and a single point on any axis fixed by `gamma` or `lambda`.
    pub fn tuning_grid(&self, data: &FunctionalData, template: &FitConfig) -> Result<TuningGrid> {
        let criterion = self.criterion()?;
        let need_default = (self.gamma.is_none() && self.gamma_values.is_none())
            || (self.lambda.is_none() && self.lambda_values.is_none());
        let default = if need_default {
            let t = match self.gamma {
                Some(g) => template.clone().with_gamma(g),
                None => template.clone(),
            };
            Some(TuningGrid::default_for_sizes(
                data,
                &t,
                criterion,
                self.gamma_points,
                self.lambda_points,
            )?)
        } else {
            None
        };
        let pick = |fixed: Option<f64>, listed: &Option<Vec<f64>>, from_default: fn(&TuningGrid) -> &Vec<f64>| match (
            fixed, listed,
        ) {
            (Some(v), _) => vec![v],
            (None, Some(l)) => l.clone(),
            (None, None) => from_default(default.as_ref().expect("default grid built")).clone(),
        };
        let gammas = pick(self.gamma, &self.gamma_values, |g| &g.gamma_values);
        let lambdas = pick(self.lambda, &self.lambda_values, |g| &g.lambda_values);
        TuningGrid::new(gammas, lambdas, criterion)
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let mut s = ScenarioConfig::new(self.case()?, self.n, self.replicates, self.seed);
        s.test_n = self.test_n;
        s.snr = self.snr;
        s.mu_true = self.mu;
        s.grid_size = self.grid_size;
        s.validate()?;
        Ok(s)
    }

    pub fn study_settings(&self) -> Result<StudySettings> {
        let template = self.fit_template(self.n)?;
        Ok(StudySettings {
            slos_criterion: self.criterion()?,
            slos_subintervals: self.num_subintervals,
            slos_template: Some(template),
            gamma_points: self.gamma_points,
            lambda_points: self.lambda_points,
            ..StudySettings::default()
        })
    }
}

/// `1 − RSS/TSS` with TSS about the response mean; 0 when the response is
/// constant.
pub fn r_squared(rss: f64, responses: &[f64]) -> f64 {
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    let tss: f64 = responses.iter().map(|y| (y - mean).powi(2)).sum();
    if tss <= 0.0 {
        0.0
    } else {
        1.0 - rss / tss
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub fit: FitResult,
    pub table: ScoreTable,
    pub criterion: Criterion,
    pub score: f64,
    pub r2: f64,
}

/// Tunes and fits SLoS on a dataset.
pub fn run_fit(config: &AppConfig, data: &FunctionalData) -> Result<FitOutcome> {
    let template = config.fit_template(data.len())?;
    let grid = config.tuning_grid(data, &template)?;
    let outcome = grid_search(data, &grid, &template)?;
    let fit = outcome.best_fit;
    let score = score(&fit, data, grid.criterion)?;
    let r2 = r_squared(fit.rss, data.responses.as_slice());
    Ok(FitOutcome {
        fit,
        table: outcome.table,
        criterion: grid.criterion,
        score,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationReport {
    pub observed_r2: f64,
    /// By permutation index; failed refits are left out.
    pub permuted_r2: Vec<(usize, f64)>,
    pub num_permutations: usize,
    pub failed: usize,
}

impl PermutationReport {
    /// `(1 + #{permuted ≥ observed}) / (1 + N)` over successful refits.
    pub fn p_value(&self) -> f64 {
        permutation_p_value(self.observed_r2, self.permuted_r2.iter().map(|p| p.1))
    }
}

pub fn permutation_p_value(observed: f64, permuted: impl IntoIterator<Item = f64>) -> f64 {
    let (mut n, mut ge) = (0usize, 0usize);
    for r in permuted {
        n += 1;
        if r >= observed {
            ge += 1;
        }
    }
    (1 + ge) as f64 / (1 + n) as f64
}

/// Largest tolerated share of failed permutation refits.
const MAX_PERMUTATION_FAILURES: f64 = 0.05;

/// Refits SLoS on randomly permuted responses. Permutation `k` draws from
/// its own stream of the seed, so results do not depend on thread count.
pub fn run_permtest(config: &AppConfig, data: &FunctionalData) -> Result<(FitOutcome, PermutationReport)> {
    if config.permutations == 0 {
        return invalid("need at least one permutation");
    }
    let observed = run_fit(config, data)?;
    let fixed = AppConfig {
        gamma: Some(observed.fit.config.gamma),
        lambda: Some(observed.fit.config.lambda()),
        ..config.clone()
    };
    let refit_config = if config.fast { &fixed } else { config };
    let results: Vec<Option<f64>> = (0..config.permutations)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            let mut y: Vec<f64> = data.responses.iter().copied().collect();
            y.shuffle(&mut rng);
            let permuted = data.with_responses(y.into()).ok()?;
            run_fit(refit_config, &permuted).ok().map(|o| o.r2)
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_none()).count();
    if failed as f64 > MAX_PERMUTATION_FAILURES * config.permutations as f64 {
        return Err(SlosError::NoValidConfiguration(format!(
            "{failed} of {} permutation refits failed",
            config.permutations
        )));
    }
    let report = PermutationReport {
        observed_r2: observed.r2,
        permuted_r2: results
            .into_iter()
            .enumerate()
            .filter_map(|(k, r)| r.map(|r| (k, r)))
            .collect(),
        num_permutations: config.permutations,
        failed,
    };
    Ok((observed, report))
}

pub fn run_simulation(config: &AppConfig) -> Result<StudyReport> {
    run_study(&config.scenario()?, &config.methods()?, &config.study_settings()?)
}

/// Where and how command output is written.
#[derive(Debug, Clone)]
pub struct OutputOptions {
    pub out_dir: PathBuf,
    pub timestamp: bool,
}

impl OutputOptions {
    fn comment(&self) -> Option<String> {
        if !self.timestamp {
            return None;
        }
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Some(format!(
            "generated by slos {} at unix time {secs}",
            env!("CARGO_PKG_VERSION")
        ))
    }

    fn write_all(&self, files: &[(&str, Table)], config: &AppConfig) -> Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        let comment = self.comment();
        for (name, table) in files {
            table.write_file(self.out_dir.join(name), comment.as_deref())?;
        }
        let mut sidecar = String::new();
        if let Some(c) = &comment {
            sidecar.push_str(&format!("# {c}\n"));
        }
        sidecar.push_str(&config.to_toml_string()?);
        fs::write(self.out_dir.join("run_config.txt"), sidecar)?;
        Ok(())
    }
}

pub fn beta_table(fit: &FitResult) -> Table {
    let basis = fit.beta_hat.basis();
    let (a, b) = (basis.domain_start(), basis.domain_end());
    let mut t = Table::new(["t", "value"]);
    for k in 0..BETA_GRID_POINTS {
        let x = if k + 1 == BETA_GRID_POINTS {
            b
        } else {
            a + (b - a) * k as f64 / (BETA_GRID_POINTS - 1) as f64
        };
        t.push(vec![fmt_f64(x), fmt_f64(fit.beta_hat.value(x))]);
    }
    t
}

pub fn coefficient_table(fit: &FitResult) -> Table {
    let mut t = Table::new(["term", "value"]);
    if fit.config.fit_intercept {
        t.push(vec!["intercept".into(), fmt_f64(fit.mu_hat)]);
    }
    for (k, c) in fit.beta_hat.coefficients().iter().enumerate() {
        t.push(vec![format!("b{k}"), fmt_f64(*c)]);
    }
    t
}

pub fn active_region_table(fit: &FitResult) -> Table {
    let mut t = Table::new(["start", "end"]);
    for (a, b) in fit.active_intervals() {
        t.push(vec![fmt_f64(a), fmt_f64(b)]);
    }
    t
}

fn metric_table(rows: Vec<(&str, String)>) -> Table {
    let mut t = Table::new(["metric", "value"]);
    for (k, v) in rows {
        t.push(vec![k.to_string(), v]);
    }
    t
}

fn fit_metrics(o: &FitOutcome) -> Vec<(&'static str, String)> {
    let f = &o.fit;
    vec![
        ("n", f.num_samples().to_string()),
        ("num_subintervals", f.config.num_subintervals.to_string()),
        ("gamma", fmt_f64(f.config.gamma)),
        ("lambda", fmt_f64(f.config.lambda())),
        ("criterion", o.criterion.to_string()),
        ("score", fmt_f64(o.score)),
        ("rss", fmt_f64(f.rss)),
        ("df", fmt_f64(f.df)),
        ("r2", fmt_f64(o.r2)),
        ("intercept", fmt_f64(f.mu_hat)),
        (
            "active_subintervals",
            f.active_mask.iter().filter(|a| **a).count().to_string(),
        ),
        ("iterations", f.iterations.to_string()),
        ("converged", f.converged.to_string()),
    ]
}

/// Fits a dataset and writes `β̂`, coefficients, active regions, metrics and
/// the score table.
pub fn cmd_fit(config: &AppConfig, out: &OutputOptions) -> Result<FitOutcome> {
    let ds = config.load_dataset()?;
    let o = run_fit(config, &ds.data)?;
    out.write_all(
        &[
            ("beta_hat.csv", beta_table(&o.fit)),
            ("coefficients.csv", coefficient_table(&o.fit)),
            ("active_regions.csv", active_region_table(&o.fit)),
            ("metrics.csv", metric_table(fit_metrics(&o))),
            ("score_table.csv", o.table.to_table()),
        ],
        config,
    )?;
    Ok(o)
}

/// Runs the grid search only and writes the score table and the selection.
pub fn cmd_tune(config: &AppConfig, out: &OutputOptions) -> Result<FitOutcome> {
    let ds = config.load_dataset()?;
    let o = run_fit(config, &ds.data)?;
    out.write_all(
        &[
            ("score_table.csv", o.table.to_table()),
            ("metrics.csv", metric_table(fit_metrics(&o))),
        ],
        config,
    )?;
    Ok(o)
}

pub fn cmd_permtest(config: &AppConfig, out: &OutputOptions) -> Result<PermutationReport> {
    let ds = config.load_dataset()?;
    let (observed, report) = run_permtest(config, &ds.data)?;
    let mut perm = Table::new(["permutation", "r2"]);
    for (k, r) in &report.permuted_r2 {
        perm.push(vec![k.to_string(), fmt_f64(*r)]);
    }
    let metrics = vec![
        ("observed_r2", fmt_f64(report.observed_r2)),
        ("p_value", fmt_f64(report.p_value())),
        ("num_permutations", report.num_permutations.to_string()),
        ("failed", report.failed.to_string()),
        ("gamma", fmt_f64(observed.fit.config.gamma)),
        ("lambda", fmt_f64(observed.fit.config.lambda())),
        ("fast", config.fast.to_string()),
    ];
    out.write_all(
        &[("permutation.csv", perm), ("metrics.csv", metric_table(metrics))],
        config,
    )?;
    Ok(report)
}

pub fn cmd_simulate(config: &AppConfig, out: &OutputOptions) -> Result<StudyReport> {
    let report = run_simulation(config)?;
    let failed = report
        .failed
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let metrics = vec![
        ("case", report.case.to_string()),
        ("n", report.n.to_string()),
        ("replicates", report.replicates.to_string()),
        ("failed_replicates", failed),
    ];
    out.write_all(
        &[
            ("study_long.csv", report.long_table()),
            ("study_summary.csv", report.summary_table()),
            ("metrics.csv", metric_table(metrics)),
        ],
        config,
    )?;
    Ok(report)
}
