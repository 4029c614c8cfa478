use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "framelab", version, about = "Lifted metrics on orthonormal frame bundles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "FRAMELAB_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for artifact files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Exit with status 4 when a checked invariant fails (the default).
    #[arg(long, global = true, overrides_with = "no_strict")]
    #[serde(skip)]
    pub strict: bool,
    #[arg(long = "no-strict", global = true, overrides_with = "strict")]
    #[serde(skip)]
    pub no_strict: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

impl Common {
    pub fn strict(&self) -> bool {
        !self.no_strict
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Dat,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Parse a metric and print its canonical form.
    ParseCheck {
        #[arg(long)]
        metric: String,
    },
    /// Metric, Christoffel symbols, Riemann and Ricci tensors at a point.
    Curvature {
        #[arg(long)]
        metric: String,
        #[arg(long)]
        at: String,
    },
    /// Lifted metric at a chart point, or on a grid over `--region`.
    Lift {
        #[arg(long)]
        metric: String,
        /// Connection metric; defaults to `--metric`.
        #[arg(long)]
        metric2: Option<String>,
        /// Base point, or base point followed by fiber coordinates.
        #[arg(long)]
        at: Option<String>,
        #[arg(long)]
        region: Option<String>,
        /// Grid nodes per axis.
        #[arg(long, default_value_t = 5)]
        samples: usize,
    },
    /// Compare the O'Neill Ricci assembly against direct curvature.
    OneillCheck {
        #[arg(long)]
        metric: String,
        #[arg(long)]
        metric2: Option<String>,
        #[arg(long, alias = "pairs", default_value_t = 20)]
        samples: usize,
        #[arg(long)]
        region: Option<String>,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Holonomy samples at a basepoint and the subgroup they generate.
    Holonomy {
        #[arg(long)]
        metric: String,
        /// Metric measuring loop length; defaults to `--metric`.
        #[arg(long)]
        metric2: Option<String>,
        #[arg(long)]
        at: String,
        /// `lasso:level=r[,radial=0,angular=1,sweep=-2pi]`,
        /// `triangles[:count=30,size=0.3]` or a JSON loop-family file.
        #[arg(long, default_value = "triangles")]
        loops: String,
        #[arg(long, default_value_t = 6)]
        word_length: usize,
        /// Sample cap.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Reuse a saved JSON-lines sample set instead of transporting.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Restricted fiber distance from the identity frame.
    FiberDist {
        #[arg(long)]
        metric: String,
        #[arg(long)]
        at: String,
        #[arg(long, default_value = "triangles")]
        loops: String,
        #[arg(long, default_value_t = 6)]
        word_length: usize,
        /// Angle grid size (two-dimensional bases) or random targets.
        #[arg(long, default_value_t = 360)]
        samples: usize,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Hypothesis sizes and sup |Ric| of the lifted metric over a region.
    BoundReport {
        #[arg(long)]
        metric: String,
        #[arg(long)]
        metric2: Option<String>,
        #[arg(long)]
        region: String,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Gromov–Hausdorff bounds between two metrics on common sample points.
    Gh {
        #[arg(long)]
        metric: String,
        #[arg(long)]
        metric2: String,
        #[arg(long)]
        region: String,
        #[arg(long, default_value_t = 120)]
        samples: usize,
    },
    /// Scripted experiments with their own checks.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    /// Fiber collapse on smoothed cones.
    ConeCollapse {
        #[arg(long, default_value_t = std::f64::consts::SQRT_2 - 1.0)]
        a: f64,
        #[arg(long, default_value = "0.1,0.05,0.02,0.01")]
        caps: String,
        #[arg(long, default_value_t = 50)]
        word_length: usize,
        /// Angle grid size.
        #[arg(long, default_value_t = 360)]
        samples: usize,
    },
    /// Rescaled Eguchi–Hanson holonomy ladder and annulus comparison.
    EguchiHanson {
        /// Holonomy ladder scales.
        #[arg(long, default_value = "4,16,64")]
        scales: String,
        #[arg(long, default_value = "2,4,8")]
        gh_scales: String,
        /// Triangle loops per level.
        #[arg(long, default_value_t = 30)]
        loops: usize,
        /// Annulus sample count.
        #[arg(long, default_value_t = 240)]
        samples: usize,
    },
    /// Lifted metric with equal metrics against the canonical lifting metric.
    CanonicalRecovery {
        #[arg(long, default_value = "builtin:round-sphere")]
        metric: String,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}
