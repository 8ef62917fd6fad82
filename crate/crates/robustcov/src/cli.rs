//! Subcommands of the `robustcov` program.
//!
//! Each `cmd_*` function does the work of one subcommand and returns the
//! report; [`run`] adds file IO and printing on top.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use robustcov_core::approx::{alpha_approx_for, naive_variance, vp_idf_bound, BlockProfile};
use robustcov_core::blocks::{block_mdistances, BlockMDistances, BlockStructure, BlockedVector};
use robustcov_core::chi2::chi2_sf;
use robustcov_core::derate::{
    aligned_whitening, gof_derating, nightmare, nightmare_mixed, simple_derating, NightmareResult, DEFAULT_GAMMA,
};
use robustcov_core::linalg::Cholesky;
use robustcov_core::projection::{build_projection_dense, fit, LinearModel};
use robustcov_core::robust::{combine, FMaxVariant};
use robustcov_core::{BlockCovariance, Matrix, SymmetricMatrix};

use crate::error::CliError;
use crate::io::{
    content_hash, parse_input, Analysis, AnalysisInput, AnalysisReport, ApproxReport, BlockData, BlockReport,
    CombinedReport, DeratingReport, FitReport, InflationReport, LevelReport, Provenance, ToyReport, ToyStatisticReport,
};
use crate::toys::{
    analytic_inflation, coverage_experiment, empirical_inflation, toy_model, CoverageCurve, ToyConfig, ToyStatistic,
    DEFAULT_SEED,
};

/// Note attached to every derating report.
pub const BEST_FIT_NOTE: &str = "derating rescales test statistics only; best-fit parameter values are unchanged";

/// Robust tests for block-structured data with unknown inter-block correlations.
#[derive(Debug, Parser)]
#[command(name = "robustcov", version)]
pub struct Cli {
    /// Subcommand.
    #[command(subcommand)]
    pub command: Command,
    /// Confidence level for derating factors (overrides the input file).
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Seed for all random numbers.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Directory for the report and CSV files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the JSON report instead of a text summary.
    #[arg(long, global = true)]
    pub json: bool,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Combine per-block distances into robust p-values.
    Combine {
        /// Input JSON file.
        input: PathBuf,
        /// Statistic to compute.
        #[arg(long, value_enum, default_value_t = StatisticChoice::All)]
        statistic: StatisticChoice,
    },
    /// Nightmare covariance and derating factors.
    Derate {
        /// Input JSON file.
        input: PathBuf,
        /// Also derate the goodness of fit (or, without a Jacobian, the simple test of all bins).
        #[arg(long)]
        gof: bool,
        /// Build from the covariance components.
        #[arg(long)]
        mixed: bool,
    },
    /// Monte Carlo coverage study; writes CSV files to --out.
    Toy {
        /// Toy configuration JSON; built-in two-block toy if absent.
        config: Option<PathBuf>,
    },
    /// Closed-form approximations for a simple test of all bins.
    Approx {
        /// Block sizes, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Also run the exact nightmare construction.
        #[arg(long)]
        exact: bool,
    },
}

/// Which combined statistics to report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StatisticChoice {
    /// Maximum block M-distance.
    Fitted,
    /// Smallest block p-value.
    Pmin,
    /// f-max-opt.
    Fmaxopt,
    /// All three.
    All,
}

impl StatisticChoice {
    /// The variants selected.
    pub fn variants(self) -> Vec<FMaxVariant> {
        match self {
            StatisticChoice::Fitted => vec![FMaxVariant::Fitted],
            StatisticChoice::Pmin => vec![FMaxVariant::PMin],
            StatisticChoice::Fmaxopt => vec![FMaxVariant::FMaxOpt],
            StatisticChoice::All => FMaxVariant::ALL.to_vec(),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn load(path: &Path, gamma: Option<f64>) -> Result<(Analysis, String), CliError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::input("<file>", e))?;
    let mut input = parse_input(&text)?;
    if gamma.is_some() {
        input.gamma = gamma;
    }
    Ok((input.validate()?, content_hash(&bytes)))
}

fn distances(a: &Analysis) -> Result<BlockMDistances, CliError> {
    match &a.data {
        BlockData::Summary(d) => Ok(d.clone()),
        BlockData::Full {
            covariance,
            observed: Some((x, mu)),
        } => Ok(block_mdistances(x, mu, covariance)?),
        BlockData::Full { observed: None, .. } => Err(CliError::input(
            "blocks",
            "combining needs 'data' and 'expectation' (or summary-mode blocks)",
        )),
    }
}

/// Per-block and combined p-values.
pub fn cmd_combine(
    input: &AnalysisInput,
    statistic: StatisticChoice,
    provenance: Provenance,
) -> Result<AnalysisReport, CliError> {
    let a = input.validate()?;
    combine_analysis(&a, statistic, provenance)
}

fn combine_analysis(
    a: &Analysis,
    statistic: StatisticChoice,
    provenance: Provenance,
) -> Result<AnalysisReport, CliError> {
    let d = distances(a)?;
    let mut report = AnalysisReport::new("combine", provenance);
    for (label, b) in a.labels.iter().zip(d.per_block()) {
        report.blocks.push(BlockReport {
            label: label.clone(),
            d_squared: b.d_squared,
            dof: b.dof,
            p_value: chi2_sf(b.d_squared, b.dof)?,
        });
    }
    for v in statistic.variants() {
        let r = combine(&d, v)?;
        report.combined.push(CombinedReport {
            statistic: v.name().into(),
            value: r.statistic_value.is_finite().then_some(r.statistic_value),
            p_value: r.p_value,
        });
    }
    Ok(report)
}

fn derating_report(kind: &str, mixed: bool, r: &NightmareResult) -> DeratingReport {
    DeratingReport {
        kind: kind.into(),
        mixed,
        alpha: r.alpha,
        n_params: r.n_params,
        weights: r.weights.weights().to_vec(),
        nightmare_correlation: r.v_xi_dagger.iter().map(|m| m.as_matrix().to_rows()).collect(),
        nightmare_covariance: r.v_dagger.as_matrix().to_rows(),
    }
}

/// Sum of the components; its diagonal blocks must reproduce the data blocks.
fn total_covariance(
    components: &[BlockCovariance],
    s0: &BlockCovariance,
    labels: &[String],
) -> Result<SymmetricMatrix, CliError> {
    let n = s0.structure().total_dim();
    let mut sum = Matrix::zeros(n, n);
    for c in components {
        sum = sum.add(c.to_dense().as_matrix());
    }
    for (i, block) in s0.diag_blocks().iter().enumerate() {
        let r = s0.structure().range(i);
        let scale = block.as_matrix().max_abs().max(1.0);
        for (a, ra) in r.clone().enumerate() {
            for (b, rb) in r.clone().enumerate() {
                let d = (sum[(ra, rb)] - block.as_matrix()[(a, b)]).abs();
                if d > 1e-9 * scale {
                    return Err(CliError::input(
                        format!("blocks[{i}].covariance"),
                        format!("components do not sum to block '{}' (deviation {d:e})", labels[i]),
                    ));
                }
            }
        }
    }
    Ok(SymmetricMatrix::new(sum)?)
}

/// Statistics of a fit under a dense assumed covariance.
fn dense_fit(model: &LinearModel, s0: &SymmetricMatrix, x: &[f64]) -> Result<(Vec<f64>, f64, f64), CliError> {
    let proj = build_projection_dense(model.jacobian(), s0)?;
    let dx: Vec<f64> = x.iter().zip(model.reference().values()).map(|(a, b)| a - b).collect();
    let theta = proj.q.matvec(&dx);
    let resid = proj.residual_maker.matvec(&dx);
    let gof = Cholesky::new(s0.as_matrix(), "total covariance")?
        .inv_quad_form(&resid)
        .max(0.0);
    let stat = proj.param_cov.cholesky("S_θ0")?.inv_quad_form(&theta).max(0.0);
    Ok((theta, stat, gof))
}

fn sf(stat: f64, dof: usize) -> Result<f64, CliError> {
    Ok(chi2_sf(stat, dof as u32)?)
}

/// Derating factors for the parameters and, with `gof`, the goodness of fit.
pub fn cmd_derate(
    input: &AnalysisInput,
    gof: bool,
    mixed: bool,
    provenance: Provenance,
) -> Result<AnalysisReport, CliError> {
    let a = input.validate()?;
    derate_analysis(&a, gof, mixed, provenance)
}

fn derate_analysis(a: &Analysis, gof: bool, mixed: bool, provenance: Provenance) -> Result<AnalysisReport, CliError> {
    let (s0, observed) = match &a.data {
        BlockData::Full { covariance, observed } => (covariance, observed),
        BlockData::Summary(_) => {
            return Err(CliError::input(
                "blocks",
                "derating needs covariance blocks (full mode)",
            ))
        }
    };
    if a.model.is_none() && !gof {
        return Err(CliError::input("jacobian", "required unless --gof is given"));
    }
    if mixed && a.components.is_empty() {
        return Err(CliError::input("components", "required with --mixed"));
    }
    let n = s0.structure().total_dim();
    let total = if mixed {
        Some(total_covariance(&a.components, s0, &a.labels)?)
    } else {
        None
    };

    let mut report = AnalysisReport::new("derate", provenance);
    report.gamma = Some(a.gamma);
    report.notes.push(BEST_FIT_NOTE.into());

    let mut alpha_param = None;
    if let Some(model) = &a.model {
        let r = match &total {
            Some(t) => nightmare_mixed(&a.components, model, t, a.gamma)?,
            None => nightmare(&aligned_whitening(s0, model)?, s0, a.gamma)?,
        };
        alpha_param = Some(r.alpha);
        report.derating.push(derating_report("parameter", mixed, &r));
    }
    let mut alpha_gof = None;
    if gof {
        let r = match (&a.model, &total) {
            (Some(model), Some(t)) => {
                if model.n_params() >= model.dim() {
                    return Err(CliError::input(
                        "jacobian",
                        "as many parameters as data points; there is no goodness of fit",
                    ));
                }
                let proj = build_projection_dense(model.jacobian(), t)?;
                let null = LinearModel::new(proj.null_basis, model.reference().clone())?;
                nightmare_mixed(&a.components, &null, t, a.gamma)?
            }
            (Some(model), None) => gof_derating(model, s0, a.gamma)?,
            (None, Some(t)) => nightmare_mixed(
                &a.components,
                &LinearModel::identity(s0.structure().clone()),
                t,
                a.gamma,
            )?,
            (None, None) => simple_derating(s0, a.gamma)?,
        };
        alpha_gof = Some(r.alpha);
        report.derating.push(derating_report("goodness-of-fit", mixed, &r));
    }

    if let Some((x, mu)) = observed {
        let mut f = FitReport {
            theta_hat: Vec::new(),
            parameter_statistic: None,
            parameter_p_value: None,
            gof_statistic: None,
            gof_p_value: None,
            derated_parameter_p_value: None,
            derated_gof_p_value: None,
        };
        let gof_dof;
        match &a.model {
            Some(model) => {
                let (theta, stat, g) = match &total {
                    Some(t) => dense_fit(model, t, x.values())?,
                    None => {
                        let r = fit(model, s0, x)?;
                        (r.theta_hat, r.param_stat, r.gof)
                    }
                };
                let k = model.n_params();
                f.theta_hat = theta;
                f.parameter_statistic = Some(stat);
                f.parameter_p_value = Some(sf(stat, k)?);
                if let Some(al) = alpha_param {
                    f.derated_parameter_p_value = Some(sf(stat / al, k)?);
                }
                gof_dof = n - k;
                if gof_dof > 0 {
                    f.gof_statistic = Some(g);
                }
            }
            None => {
                // Simple test of all bins against the expectation.
                let resid: Vec<f64> = x.values().iter().zip(mu.values()).map(|(a, b)| a - b).collect();
                let g = match &total {
                    Some(t) => Cholesky::new(t.as_matrix(), "total covariance")?.inv_quad_form(&resid),
                    None => {
                        let r = BlockedVector::new(s0.structure().clone(), resid)?;
                        let zero = BlockedVector::new(s0.structure().clone(), vec![0.0; n])?;
                        block_mdistances(&r, &zero, s0)?.d_squared().iter().sum()
                    }
                };
                gof_dof = n;
                f.gof_statistic = Some(g.max(0.0));
            }
        }
        if let Some(g) = f.gof_statistic {
            f.gof_p_value = Some(sf(g, gof_dof)?);
            if let Some(al) = alpha_gof {
                f.derated_gof_p_value = Some(sf(g / al, gof_dof)?);
            }
        }
        report.fit = Some(f);
    }
    Ok(report)
}

/// Closed-form quantities and optionally the exact factor for `A = I`.
pub fn cmd_approx(
    sizes: &[usize],
    gamma: f64,
    exact: bool,
    provenance: Provenance,
) -> Result<AnalysisReport, CliError> {
    let profile = BlockProfile::new(sizes).map_err(|e| CliError::input("--sizes", e))?;
    let vp = vp_idf_bound(&profile, gamma).map_err(|e| CliError::input("--gamma", e))?;
    let (alpha, warning) = alpha_approx_for(&profile, gamma);
    let mut report = AnalysisReport::new("approx", provenance);
    report.gamma = Some(gamma);
    report.warnings.extend(warning);
    if !vp.valid {
        report
            .warnings
            .push("the Vysochanskij–Petunin validity condition fails at this confidence level".into());
    }
    let alpha_exact = if exact {
        let st = BlockStructure::new(sizes)?;
        Some(simple_derating(&BlockCovariance::identity(st), gamma)?.alpha)
    } else {
        None
    };
    report.approx = Some(ApproxReport {
        sizes: profile.sizes().to_vec(),
        k: profile.k(),
        i_bar: profile.i_bar(),
        variance: naive_variance(&profile),
        vp_bound: vp.value,
        vp_alpha_bound: vp.alpha_bound,
        vp_valid: vp.valid,
        alpha_approx: alpha,
        alpha_exact,
    });
    Ok(report)
}

fn default_sizes() -> Vec<usize> {
    vec![5, 5]
}

fn default_rhos() -> Vec<f64> {
    vec![0.0, 0.5, 0.9, 0.99]
}

fn default_samples() -> usize {
    1_000_000
}

fn default_statistics() -> Vec<String> {
    ToyStatistic::ALL.iter().map(|s| s.name().to_string()).collect()
}

fn default_inflation_rho() -> f64 {
    1.0
}

fn default_inflation_samples() -> usize {
    10_000_000
}

/// Inflation estimate settings of a [`ToyFile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationFile {
    /// Correlation of the toy data set.
    #[serde(default = "default_inflation_rho")]
    pub rho: f64,
    /// Draws.
    #[serde(default = "default_inflation_samples")]
    pub n_samples: usize,
}

/// Toy configuration file. Every field has a default; the Jacobian defaults
/// to the built-in toy model when the blocks are two blocks of five.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyFile {
    /// Sizes of the (equal) blocks.
    #[serde(default = "default_sizes")]
    pub block_sizes: Vec<usize>,
    /// True correlations.
    #[serde(default = "default_rhos")]
    pub rho_list: Vec<f64>,
    /// Draws per correlation.
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Statistic names.
    #[serde(default = "default_statistics")]
    pub statistics: Vec<String>,
    /// Jacobian for the projected statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian: Option<Vec<Vec<f64>>>,
    /// Inflation factor for `projected-inflated`; the exact `ρ = 1` value if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Estimate the inflation factor by Monte Carlo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflation: Option<InflationFile>,
}

impl Default for ToyFile {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ToyFile {
    fn config(&self, seed: u64) -> Result<(ToyConfig, Vec<ToyStatistic>), CliError> {
        let structure = BlockStructure::new(&self.block_sizes).map_err(|e| CliError::input("block_sizes", e))?;
        let model = match &self.jacobian {
            Some(rows) => {
                let a = Matrix::from_rows(rows).map_err(|e| CliError::input("jacobian", e))?;
                Some(LinearModel::through_origin(a, structure.clone()).map_err(|e| CliError::input("jacobian", e))?)
            }
            None if self.block_sizes == [5, 5] => Some(toy_model()),
            None => None,
        };
        let statistics = self
            .statistics
            .iter()
            .enumerate()
            .map(|(i, s)| {
                ToyStatistic::from_name(s)
                    .ok_or_else(|| CliError::input(format!("statistics[{i}]"), format!("unknown statistic '{s}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = ToyConfig {
            structure,
            rho_list: self.rho_list.clone(),
            n_samples: self.n_samples,
            seed,
            model,
            alpha: self.alpha,
        };
        cfg.validate().map_err(|e| CliError::input("<config>", e))?;
        Ok((cfg, statistics))
    }
}

/// A finished toy run: report plus the curves behind the CSV files.
#[derive(Clone, Debug)]
pub struct ToyRun {
    /// Summary report.
    pub report: AnalysisReport,
    /// One curve per statistic.
    pub curves: Vec<CoverageCurve>,
}

/// Run the coverage study described by `file`.
pub fn cmd_toy(file: &ToyFile, seed: u64, gamma: f64, provenance: Provenance) -> Result<ToyRun, CliError> {
    let (mut cfg, statistics) = file.config(seed)?;
    if statistics.contains(&ToyStatistic::ProjectedInflated) && cfg.alpha.is_none() {
        let mut one = cfg.clone();
        one.rho_list = vec![1.0];
        cfg.alpha = Some(analytic_inflation(&one, gamma)?);
    }
    let mut report = AnalysisReport::new("toy", provenance);
    report.gamma = Some(gamma);
    let mut curves = Vec::with_capacity(statistics.len());
    let mut stat_reports = Vec::with_capacity(statistics.len());
    for s in statistics {
        let c = coverage_experiment(&cfg, s)?;
        report
            .warnings
            .extend(c.warnings.iter().map(|w| format!("{}: {w}", s.name())));
        stat_reports.push(ToyStatisticReport {
            statistic: s.name().into(),
            levels: c
                .checks
                .iter()
                .map(|l| LevelReport {
                    rho: l.rho,
                    assumed_level: l.assumed_level,
                    real_level: l.real_level,
                    standard_error: l.standard_error,
                    conservative: l.conservative(),
                })
                .collect(),
            ks_distance: c.ks_distance.clone(),
        });
        curves.push(c);
    }
    let inflation = match &file.inflation {
        Some(inf) => {
            let mut one = cfg.clone();
            one.rho_list = vec![inf.rho];
            one.n_samples = inf.n_samples;
            Some(InflationReport {
                rho: inf.rho,
                n_samples: inf.n_samples,
                empirical: empirical_inflation(&one, gamma)?,
                analytic: analytic_inflation(&one, gamma)?,
            })
        }
        None => None,
    };
    report.toy = Some(ToyReport {
        rho_list: cfg.rho_list.clone(),
        n_samples: cfg.n_samples,
        alpha: cfg.alpha,
        statistics: stat_reports,
        inflation,
    });
    Ok(ToyRun { report, curves })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(f))
}

/// Write `<statistic>_cdf.csv` and `<statistic>_levels.csv` into `dir`.
pub fn write_curve_csv(curve: &CoverageCurve, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let name = curve.statistic.name();
    let cdf_path = dir.join(format!("{name}_cdf.csv"));
    let mut w = csv_writer(&cdf_path)?;
    w.write_record(["statistic_value", "rho", "empirical_cdf", "assumed_cdf"])?;
    for (r, rho) in curve.rho_list.iter().enumerate() {
        for (i, s) in curve.statistic_grid.iter().enumerate() {
            w.serialize((s, rho, curve.empirical_cdf[r][i], curve.assumed_cdf[i]))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&cdf_path, e))?;

    let levels_path = dir.join(format!("{name}_levels.csv"));
    let mut w = csv_writer(&levels_path)?;
    w.write_record(["assumed_level", "real_level", "rho"])?;
    for (r, rho) in curve.rho_list.iter().enumerate() {
        for &(a, real) in &curve.assumed_vs_real[r] {
            w.serialize((a, real, rho))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&levels_path, e))?;
    Ok(vec![cdf_path, levels_path])
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Human-readable summary; p-values to three decimals.
pub fn summarize(report: &AnalysisReport) -> String {
    let mut s = String::new();
    for b in &report.blocks {
        let _ = writeln!(
            s,
            "{:<24} D² = {:>10.4}  dof = {:>4}  p = {:.3}",
            b.label, b.d_squared, b.dof, b.p_value
        );
    }
    for c in &report.combined {
        let v = c.value.map_or("-inf".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "{:<8} statistic = {v}  p = {:.3}", c.statistic, c.p_value);
    }
    for d in &report.derating {
        let mixed = if d.mixed { " (mixed)" } else { "" };
        let _ = writeln!(
            s,
            "{} derating{mixed}: alpha = {:.5}  dof = {}",
            d.kind, d.alpha, d.n_params
        );
        let w: Vec<String> = d.weights.iter().map(|w| format!("{w:.5}")).collect();
        let _ = writeln!(s, "  weights: [{}]", w.join(", "));
    }
    if let Some(f) = &report.fit {
        if !f.theta_hat.is_empty() {
            let t: Vec<String> = f.theta_hat.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "theta_hat: [{}]", t.join(", "));
        }
        let pairs = [
            (
                "parameter statistic",
                f.parameter_statistic,
                f.parameter_p_value,
                f.derated_parameter_p_value,
            ),
            ("goodness of fit", f.gof_statistic, f.gof_p_value, f.derated_gof_p_value),
        ];
        for (name, stat, p, dp) in pairs {
            if let (Some(stat), Some(p)) = (stat, p) {
                let _ = write!(s, "{name} = {stat:.4}  p = {p:.3}");
                if let Some(dp) = dp {
                    let _ = write!(s, "  derated p = {dp:.3}");
                }
                s.push('\n');
            }
        }
    }
    if let Some(a) = &report.approx {
        let _ = writeln!(s, "sizes = {:?}  k = {}  i_bar = {:.4}", a.sizes, a.k, a.i_bar);
        let _ = writeln!(s, "variance = {:.4}", a.variance);
        let valid = if a.vp_valid { "" } else { " (validity condition fails)" };
        let _ = writeln!(
            s,
            "VP bound = {:.4}  alpha <= {:.4}{valid}",
            a.vp_bound, a.vp_alpha_bound
        );
        let _ = writeln!(s, "alpha_approx = {:.4}", a.alpha_approx);
        if let Some(e) = a.alpha_exact {
            let _ = writeln!(s, "alpha_exact = {e:.5}");
        }
    }
    if let Some(t) = &report.toy {
        if let Some(a) = t.alpha {
            let _ = writeln!(s, "inflation factor for projected-inflated: {a:.5}");
        }
        for st in &t.statistics {
            let bad = st.levels.iter().filter(|l| !l.conservative).count();
            let verdict = if bad == 0 {
                "conservative at all checked levels".to_string()
            } else {
                format!("{bad} undercovering level(s)")
            };
            let _ = writeln!(s, "{:<20} {verdict}", st.statistic);
            for l in &st.levels {
                let _ = writeln!(
                    s,
                    "  rho = {:<5} assumed = {:<7} real = {:.5} ± {:.5}  {}",
                    l.rho,
                    l.assumed_level,
                    l.real_level,
                    l.standard_error,
                    if l.conservative { "pass" } else { "FAIL" }
                );
            }
        }
        if let Some(i) = &t.inflation {
            let _ = writeln!(
                s,
                "inflation at rho = {}: empirical {:.4}, exact {:.4}",
                i.rho, i.empirical, i.analytic
            );
        }
    }
    for n in &report.notes {
        let _ = writeln!(s, "note: {n}");
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Execute a parsed command line; returns what should go to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let gamma_flag = cli.gamma;
    let gamma = gamma_flag.unwrap_or(DEFAULT_GAMMA);
    let (report, curves) = match &cli.command {
        Command::Combine { input, statistic } => {
            let (a, hash) = load(input, gamma_flag)?;
            (
                combine_analysis(&a, *statistic, Provenance::new(Some(hash), None))?,
                Vec::new(),
            )
        }
        Command::Derate { input, gof, mixed } => {
            let (a, hash) = load(input, gamma_flag)?;
            (
                derate_analysis(&a, *gof, *mixed, Provenance::new(Some(hash), None))?,
                Vec::new(),
            )
        }
        Command::Approx { sizes, exact } => (
            cmd_approx(sizes, gamma, *exact, Provenance::new(None, None))?,
            Vec::new(),
        ),
        Command::Toy { config } => {
            if cli.out.is_none() {
                return Err(CliError::input("--out", "the toy command needs an output directory"));
            }
            let (file, hash) = match config {
                Some(path) => {
                    let bytes = read(path)?;
                    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::input("<file>", e))?;
                    (serde_json::from_str::<ToyFile>(&text)?, Some(content_hash(&bytes)))
                }
                None => (ToyFile::default(), None),
            };
            let run = cmd_toy(&file, cli.seed, gamma, Provenance::new(hash, Some(cli.seed)))?;
            (run.report, run.curves)
        }
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for c in &curves {
            write_curve_csv(c, dir)?;
        }
        write_text(&dir.join("report.json"), &report.to_json())?;
    }
    Ok(if cli.json { report.to_json() } else { summarize(&report) })
}
