use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "htenmr", version, about = "Baseline-risk modelling and risk-based network meta-regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// IPD CSV: study_id, treatment, outcome and one column per covariate.
    #[arg(long)]
    pub data: PathBuf,
    /// Covariate schema, a JSON list of covariate declarations.
    #[arg(long)]
    pub schema: PathBuf,
    /// Treatments in registry order, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub treatments: Vec<String>,
    /// Reference treatment (default: the first listed).
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Lasso,
    Prespecified,
    Mle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainArg {
    /// Every arm, blinded to treatment.
    All,
    /// Reference arms only.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EffectsArg {
    Common,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModifierArg {
    Common,
    Random,
    Omitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SlopeArg {
    Common,
    Exchangeable,
    Independent,
    Omitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    PlaceboOnly,
    BlindedFull,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    /// Three-trial network with non-zero effects.
    Default,
    /// Null-effect network with 30 candidate covariates.
    Bias,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    /// Iterations per chain, burn-in included.
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop covariates by missingness, zero variance and correlation; keep complete cases.
    Preprocess {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.5)]
        missing_threshold: f64,
        #[arg(long, default_value_t = 0.7)]
        corr_threshold: f64,
        /// Judge missingness by the worst study instead of pooled over all records.
        #[arg(long)]
        per_study: bool,
        /// Cleaned IPD CSV.
        #[arg(long)]
        out: PathBuf,
        /// Schema of the cleaned data, for the fitting commands.
        #[arg(long)]
        out_schema: PathBuf,
        /// Schema for raw patient input (transforms and merges kept), for `bundle`.
        #[arg(long)]
        out_input_schema: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Minimum development sample size and events per variable.
    Samplesize {
        /// Candidate parameters (expanded design columns).
        #[arg(long)]
        df: u64,
        /// Outcome prevalence.
        #[arg(long)]
        prevalence: f64,
        /// Anticipated Nagelkerke R².
        #[arg(long, conflicts_with = "r2_cox_snell", required_unless_present = "r2_cox_snell")]
        r2_nagelkerke: Option<f64>,
        /// Anticipated Cox-Snell R².
        #[arg(long)]
        r2_cox_snell: Option<f64>,
        #[arg(long, default_value_t = 0.9)]
        shrinkage: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Records available, for the adequacy verdict.
        #[arg(long, requires = "events")]
        available: Option<u64>,
        #[arg(long)]
        events: Option<u64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Fit the baseline-risk model.
    FitRisk {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::Lasso)]
        method: MethodArg,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = TrainArg::All)]
        train: TrainArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap optimism correction of the c-statistic and calibration slope.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 500)]
        bootstrap: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, value_enum, default_value_t = TrainArg::All)]
        train: TrainArg,
        /// Resample within studies.
        #[arg(long)]
        by_study: bool,
        /// Model with the report attached (default: overwrite --model).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the network meta-regression on the scored data.
    FitNmr {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = EffectsArg::Common)]
        treatment_effects: EffectsArg,
        #[arg(long, value_enum, default_value_t = ModifierArg::Common)]
        modifier_effects: ModifierArg,
        #[arg(long, value_enum, default_value_t = SlopeArg::Common)]
        risk_slope: SlopeArg,
        #[arg(long, default_value_t = 1000.0)]
        prior_variance: f64,
        #[arg(long, default_value_t = 1.0)]
        heterogeneity_scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the outcome-rate anchor on one arm (default: the reference arms).
    Anchor {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        arm: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bundle risk model, posterior and anchor into one artifact.
    Bundle {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        anchor: PathBuf,
        /// Schema applied to raw patient input (default: --schema).
        #[arg(long)]
        input_schema: Option<PathBuf>,
        /// Low and high risk-group cutoffs.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.30, 0.50])]
        cutoffs: Vec<f64>,
        /// Seed of the anchor-uncertainty draws.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Use the anchor point estimate without its uncertainty.
        #[arg(long)]
        fixed_anchor: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predicted outcome probability under every treatment for one patient.
    Predict {
        #[arg(long)]
        artifact: PathBuf,
        /// JSON: {"covariates": {...}, "treatments": [...]} (treatments optional).
        #[arg(long)]
        patient: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probability and odds-ratio curves over a grid of baseline risks.
    Curves {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value_t = 99)]
        grid: usize,
        /// Population IPD whose risk range is marked, and summarized by risk group.
        #[arg(long)]
        population: Option<PathBuf>,
        /// Risk-group table with numbers needed to treat (requires --population).
        #[arg(long, requires = "population")]
        groups_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic IPD.
    Simulate {
        /// Generator specification (JSON); overrides --scenario, --n and --seed.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScenarioArg::Default)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Schema of the generated covariates.
        #[arg(long)]
        out_schema: Option<PathBuf>,
        /// Resolved generator specification.
        #[arg(long)]
        out_spec: Option<PathBuf>,
    },
    /// Null-effect simulation contrasting placebo-only and blinded stage-one training.
    BiasDemo {
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        /// Null-effect generator specification (default: the bias scenario).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 4_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = MethodArg::Mle)]
        stage1: MethodArg,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve predictions over HTTP from one artifact.
    Serve {
        #[arg(long)]
        artifact: PathBuf,
        /// Listening port; the HTE_PORT environment variable takes precedence.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}
