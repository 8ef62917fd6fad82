//! JSON input and report documents.
//!
//! Matrices are nested arrays, row-major. An input either gives every block
//! in full (`covariance`, optionally `data` and `expectation`) or only a
//! summary (`d_squared`, `dof`); mixing the two is rejected.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use robustcov_core::blocks::{BlockMDistances, BlockStructure, BlockedVector};
use robustcov_core::derate::{CovarianceComponent, DEFAULT_GAMMA};
use robustcov_core::projection::LinearModel;
use robustcov_core::{BlockCovariance, Matrix, SymmetricMatrix};

use crate::error::CliError;

/// One block of an [`AnalysisInput`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockInput {
    /// Unique name.
    pub label: String,
    /// Full mode: covariance of the block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Full mode: measured values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<f64>>,
    /// Full mode: model expectation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expectation: Option<Vec<f64>>,
    /// Summary mode: squared M-distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_squared: Option<f64>,
    /// Summary mode: degrees of freedom.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<u32>,
}

/// A block of a covariance component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentBlockInput {
    /// Name, unique within the component.
    pub label: String,
    /// Covariance of the block.
    pub covariance: Vec<Vec<f64>>,
}

/// An independent covariance component with its own block structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentInput {
    /// Name of the component.
    pub label: String,
    /// Blocks, in data order, covering every data point.
    pub blocks: Vec<ComponentBlockInput>,
    /// Block pairs of this component known to be uncorrelated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_pairs: Vec<[String; 2]>,
}

/// An analysis input document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisInput {
    /// Target confidence level; [`DEFAULT_GAMMA`] if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Data blocks.
    pub blocks: Vec<BlockInput>,
    /// Jacobian of the linear model, one row per data point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian: Option<Vec<Vec<f64>>>,
    /// Model expectation at `θ = 0`; zero if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
    /// Block pairs known to be uncorrelated, by label.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_pairs: Vec<[String; 2]>,
    /// Covariance components for the mixed construction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentInput>,
}

/// Parse an input document.
pub fn parse_input(text: &str) -> Result<AnalysisInput, CliError> {
    Ok(serde_json::from_str(text)?)
}

/// Serialise an input document.
pub fn emit_input(input: &AnalysisInput) -> String {
    let mut s = serde_json::to_string_pretty(input).expect("input is serialisable");
    s.push('\n');
    s
}

/// Hex SHA-256 of raw input bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Block data after validation.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum BlockData {
    /// Only `(D², dof)` per block.
    Summary(BlockMDistances),
    /// Covariance blocks, with data and expectation if both were given.
    Full {
        /// Known diagonal blocks and known-zero pairs.
        covariance: BlockCovariance,
        /// Measured values and expectation.
        observed: Option<(BlockedVector, BlockedVector)>,
    },
}

/// A validated [`AnalysisInput`].
#[derive(Clone, Debug)]
pub struct Analysis {
    /// Confidence level.
    pub gamma: f64,
    /// Block labels in input order.
    pub labels: Vec<String>,
    /// Block data.
    pub data: BlockData,
    /// Linear model, if a Jacobian was given.
    pub model: Option<LinearModel>,
    /// Covariance components, possibly empty.
    pub components: Vec<CovarianceComponent>,
    /// Labels of the components.
    pub component_labels: Vec<String>,
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<Matrix, CliError> {
    Matrix::from_rows(rows).map_err(|e| CliError::input(field, e))
}

fn symmetric(rows: &[Vec<f64>], field: &str) -> Result<SymmetricMatrix, CliError> {
    SymmetricMatrix::new(matrix(rows, field)?).map_err(|e| CliError::input(field, e))
}

fn finite(values: &[f64], field: &str) -> Result<(), CliError> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(CliError::input(field, format!("non-finite value {v}"))),
        None => Ok(()),
    }
}

fn resolve_pairs(
    pairs: &[[String; 2]],
    structure: &BlockStructure,
    field: &str,
) -> Result<Vec<(usize, usize)>, CliError> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, [a, b])| {
            let find = |l: &str| {
                structure
                    .index_of(l)
                    .ok_or_else(|| CliError::input(format!("{field}[{i}]"), format!("unknown block label '{l}'")))
            };
            Ok((find(a)?, find(b)?))
        })
        .collect()
}

fn unique_labels(labels: &[String], field: &str) -> Result<(), CliError> {
    let mut seen = BTreeSet::new();
    for (i, l) in labels.iter().enumerate() {
        if !seen.insert(l.as_str()) {
            return Err(CliError::input(
                format!("{field}[{i}].label"),
                format!("duplicate label '{l}'"),
            ));
        }
    }
    Ok(())
}

impl AnalysisInput {
    /// Check every invariant and build the numerical objects.
    pub fn validate(&self) -> Result<Analysis, CliError> {
        let gamma = self.gamma.unwrap_or(DEFAULT_GAMMA);
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(CliError::input("gamma", format!("must be in (0, 1), got {gamma}")));
        }
        if self.blocks.is_empty() {
            return Err(CliError::input("blocks", "at least one block is required"));
        }
        let labels: Vec<String> = self.blocks.iter().map(|b| b.label.clone()).collect();
        unique_labels(&labels, "blocks")?;

        let b0 = &self.blocks[0];
        let summary = b0.covariance.is_none() && b0.data.is_none() && b0.expectation.is_none();
        for (i, b) in self.blocks.iter().enumerate() {
            let field = format!("blocks[{i}]");
            let has_full = b.covariance.is_some() || b.data.is_some() || b.expectation.is_some();
            let has_summary = b.d_squared.is_some() || b.dof.is_some();
            if has_full && has_summary {
                return Err(CliError::input(field, "mixes full-mode and summary-mode fields"));
            }
            if summary != !has_full {
                return Err(CliError::input(
                    field,
                    "all blocks must use the same mode (full or summary)",
                ));
            }
            if summary && (b.d_squared.is_none() || b.dof.is_none()) {
                return Err(CliError::input(field, "summary mode needs both 'd_squared' and 'dof'"));
            }
            if !summary && b.covariance.is_none() {
                return Err(CliError::input(field, "full mode needs 'covariance'"));
            }
            if b.data.is_some() != b.expectation.is_some() {
                return Err(CliError::input(
                    field,
                    "'data' and 'expectation' must be given together",
                ));
            }
        }

        let (data, structure) = if summary {
            let pairs: Vec<(f64, u32)> = self
                .blocks
                .iter()
                .map(|b| (b.d_squared.expect("checked"), b.dof.expect("checked")))
                .collect();
            for (i, (d, k)) in pairs.iter().enumerate() {
                if !(d.is_finite() && *d >= 0.0) {
                    return Err(CliError::input(
                        format!("blocks[{i}].d_squared"),
                        format!("must be finite and >= 0, got {d}"),
                    ));
                }
                if *k == 0 {
                    return Err(CliError::input(format!("blocks[{i}].dof"), "must be positive"));
                }
            }
            let sizes: Vec<usize> = pairs.iter().map(|p| p.1 as usize).collect();
            let structure = BlockStructure::with_labels(&sizes, labels.clone())?;
            let d = BlockMDistances::new(&pairs)?;
            (BlockData::Summary(d), structure)
        } else {
            let mut mats = Vec::with_capacity(self.blocks.len());
            for (i, b) in self.blocks.iter().enumerate() {
                let field = format!("blocks[{i}].covariance");
                mats.push(symmetric(b.covariance.as_ref().expect("checked"), &field)?);
            }
            let sizes: Vec<usize> = mats.iter().map(|m| m.dim()).collect();
            let structure = BlockStructure::with_labels(&sizes, labels.clone())?;
            let zero = resolve_pairs(&self.zero_pairs, &structure, "zero_pairs")?;
            let covariance = BlockCovariance::new(structure.clone(), mats, zero)?;
            let observed = if self.blocks[0].data.is_some() {
                let mut x = Vec::new();
                let mut mu = Vec::new();
                for (i, b) in self.blocks.iter().enumerate() {
                    let (d, e) = match (&b.data, &b.expectation) {
                        (Some(d), Some(e)) => (d, e),
                        _ => {
                            return Err(CliError::input(
                                format!("blocks[{i}]"),
                                "either every block or none has data",
                            ))
                        }
                    };
                    for (name, v) in [("data", d), ("expectation", e)] {
                        let field = format!("blocks[{i}].{name}");
                        finite(v, &field)?;
                        if v.len() != sizes[i] {
                            return Err(CliError::input(
                                field,
                                format!("has {} entries, covariance has size {}", v.len(), sizes[i]),
                            ));
                        }
                    }
                    x.extend_from_slice(d);
                    mu.extend_from_slice(e);
                }
                Some((
                    BlockedVector::new(structure.clone(), x)?,
                    BlockedVector::new(structure.clone(), mu)?,
                ))
            } else {
                None
            };
            (BlockData::Full { covariance, observed }, structure)
        };
        if summary && !self.zero_pairs.is_empty() {
            resolve_pairs(&self.zero_pairs, &structure, "zero_pairs")?;
        }

        let n = structure.total_dim();
        let model = match &self.jacobian {
            None => {
                if self.reference.is_some() {
                    return Err(CliError::input("reference", "given without a jacobian"));
                }
                None
            }
            Some(rows) => {
                let a = matrix(rows, "jacobian")?;
                finite(a.as_slice(), "jacobian")?;
                let reference = self.reference.clone().unwrap_or_else(|| vec![0.0; n]);
                finite(&reference, "reference")?;
                if reference.len() != n {
                    return Err(CliError::input(
                        "reference",
                        format!("has {} entries, data has {n}", reference.len()),
                    ));
                }
                let reference = BlockedVector::new(structure.clone(), reference)?;
                Some(LinearModel::new(a, reference).map_err(|e| CliError::input("jacobian", e))?)
            }
        };

        let mut components = Vec::with_capacity(self.components.len());
        let mut component_labels = Vec::with_capacity(self.components.len());
        for (c, comp) in self.components.iter().enumerate() {
            let field = format!("components[{c}]");
            if comp.blocks.is_empty() {
                return Err(CliError::input(field, "no blocks"));
            }
            let labels: Vec<String> = comp.blocks.iter().map(|b| b.label.clone()).collect();
            unique_labels(&labels, &format!("{field}.blocks"))?;
            let mats = comp
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| symmetric(&b.covariance, &format!("{field}.blocks[{i}].covariance")))
                .collect::<Result<Vec<_>, _>>()?;
            let sizes: Vec<usize> = mats.iter().map(|m| m.dim()).collect();
            if sizes.iter().sum::<usize>() != n {
                return Err(CliError::input(
                    field,
                    format!("blocks cover {} data points, expected {n}", sizes.iter().sum::<usize>()),
                ));
            }
            let st = BlockStructure::with_labels(&sizes, labels)?;
            let zero = resolve_pairs(&comp.zero_pairs, &st, &format!("{field}.zero_pairs"))?;
            components.push(BlockCovariance::new(st, mats, zero).map_err(|e| CliError::input(field, e))?);
            component_labels.push(comp.label.clone());
        }

        Ok(Analysis {
            gamma,
            labels,
            data,
            model,
            components,
            component_labels,
        })
    }
}

/// Where a report came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Program name.
    pub tool: String,
    /// Program version.
    pub tool_version: String,
    /// SHA-256 of the input file, if there was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
    /// Seed of the random numbers, if any were used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Provenance {
    /// This program, with the given input hash and seed.
    pub fn new(input_sha256: Option<String>, seed: Option<u64>) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            input_sha256,
            seed,
        }
    }
}

/// Per-block result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    /// Label.
    pub label: String,
    /// Squared M-distance.
    pub d_squared: f64,
    /// Degrees of freedom.
    pub dof: u32,
    /// χ² p-value of the block alone.
    pub p_value: f64,
}

/// One combined test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedReport {
    /// `fitted`, `pmin` or `fmaxopt`.
    pub statistic: String,
    /// Statistic value; absent if not finite.
    pub value: Option<f64>,
    /// Combined p-value.
    pub p_value: f64,
}

/// A derating factor and the nightmare covariance behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeratingReport {
    /// `parameter` or `goodness-of-fit`.
    pub kind: String,
    /// Built from covariance components.
    pub mixed: bool,
    /// Derating factor, at least 1.
    pub alpha: f64,
    /// Degrees of freedom of the nominal χ².
    pub n_params: usize,
    /// Weights of the generalised χ² of the statistic under the nightmare covariance.
    pub weights: Vec<f64>,
    /// Whitened nightmare correlation matrix, one per component.
    pub nightmare_correlation: Vec<Vec<Vec<f64>>>,
    /// Nightmare covariance in data coordinates.
    pub nightmare_covariance: Vec<Vec<f64>>,
}

/// Fit of the linear model to the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Best-fit parameters; empty without a model.
    pub theta_hat: Vec<f64>,
    /// `θ̂ᵀ S_θ0⁻¹ θ̂`.
    pub parameter_statistic: Option<f64>,
    /// Nominal χ²(k) p-value of the parameter statistic.
    pub parameter_p_value: Option<f64>,
    /// Goodness of fit `(x - x̂)ᵀ S₀⁻¹ (x - x̂)`; absent when `k = n`.
    /// Without a model, the distance of the data to the expectation.
    pub gof_statistic: Option<f64>,
    /// Nominal χ²(n - k) p-value of the goodness of fit.
    pub gof_p_value: Option<f64>,
    /// Parameter p-value after dividing by the parameter derating factor.
    pub derated_parameter_p_value: Option<f64>,
    /// Goodness-of-fit p-value after dividing by its derating factor.
    pub derated_gof_p_value: Option<f64>,
}

/// Closed-form quantities for `A = I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    /// Block sizes, descending.
    pub sizes: Vec<usize>,
    /// Total number of bins.
    pub k: usize,
    /// Average block number.
    pub i_bar: f64,
    /// Variance of the naive statistic under the nightmare covariance.
    pub variance: f64,
    /// Vysochanskij–Petunin bound on the quantile.
    pub vp_bound: f64,
    /// The bound as a derating factor.
    pub vp_alpha_bound: f64,
    /// Whether the bound's validity condition holds.
    pub vp_valid: bool,
    /// Approximate derating factor.
    pub alpha_approx: f64,
    /// Exact nightmare derating factor, if requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_exact: Option<f64>,
}

/// Coverage at one nominal level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    /// True correlation.
    pub rho: f64,
    /// Nominal level.
    pub assumed_level: f64,
    /// Observed rejection rate.
    pub real_level: f64,
    /// Binomial standard error.
    pub standard_error: f64,
    /// `real ≤ assumed + 3 SE`.
    pub conservative: bool,
}

/// Summary of one toy statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyStatisticReport {
    /// Statistic name.
    pub statistic: String,
    /// Coverage checks.
    pub levels: Vec<LevelReport>,
    /// Kolmogorov-Smirnov distance to the assumed CDF, per `ρ`.
    pub ks_distance: Vec<f64>,
}

/// Inflation factor estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationReport {
    /// Correlation used.
    pub rho: f64,
    /// Draws.
    pub n_samples: usize,
    /// Monte Carlo estimate.
    pub empirical: f64,
    /// Exact value.
    pub analytic: f64,
}

/// Summary of a toy run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    /// True correlations.
    pub rho_list: Vec<f64>,
    /// Draws per `ρ`.
    pub n_samples: usize,
    /// Inflation factor used by `projected-inflated`.
    pub alpha: Option<f64>,
    /// Per statistic.
    pub statistics: Vec<ToyStatisticReport>,
    /// Inflation estimate, if requested.
    pub inflation: Option<InflationReport>,
}

/// Output of every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Subcommand.
    pub command: String,
    /// Where the report came from.
    pub provenance: Provenance,
    /// Confidence level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Per-block results.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockReport>,
    /// Combined tests.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub combined: Vec<CombinedReport>,
    /// Derating factors.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub derating: Vec<DeratingReport>,
    /// Model fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitReport>,
    /// Closed-form approximations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx: Option<ApproxReport>,
    /// Toy run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyReport>,
    /// Remarks on interpretation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Problems that did not stop the command.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    /// Empty report for `command`.
    pub fn new(command: &str, provenance: Provenance) -> Self {
        AnalysisReport {
            command: command.into(),
            provenance,
            gamma: None,
            blocks: Vec::new(),
            combined: Vec::new(),
            derating: Vec::new(),
            fit: None,
            approx: None,
            toy: None,
            notes: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serialisable");
        s.push('\n');
        s
    }
}
