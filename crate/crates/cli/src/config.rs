//! JSON experiment configuration and the objects it builds.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use exdiff_core::cost::{
    isotropic_mse_model, least_squares_model, logistic_model_with_noise, mse_quadratic_model, random_quadratic_model,
    CostModel, DEFAULT_LABEL_NOISE,
};
use exdiff_core::engine::{Algorithm, StepSpec};
use exdiff_core::graph::{build_averaging, build_metropolis, random_connected_graph, CombinationMatrix, Graph};
use exdiff_core::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{read_graph_json, read_matrix_csv};

/// Step sizes used when an algorithm entry gives none.
pub fn default_step(kind: Algorithm) -> f64 {
    match kind {
        Algorithm::ExactDiffusion | Algorithm::ExactDiffusionPrimalDual | Algorithm::ExactDiffusionAdaptive => 0.013,
        Algorithm::Extra => 0.007,
        Algorithm::Diging => 0.0028,
        Algorithm::AugDgm => 0.003,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: Option<ModelSpec>,
    pub graph: GraphSpec,
    #[serde(default)]
    pub matrix: MatrixSpec,
    #[serde(default)]
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_stop")]
    pub stop: f64,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub scan: Option<ScanSpec>,
}

fn default_max_iters() -> usize {
    10_000
}

fn default_stop() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    LeastSquares {
        seed: u64,
        agents: usize,
        dim: usize,
        samples: usize,
        #[serde(default)]
        q: Option<Vec<f64>>,
    },
    Logistic {
        seed: u64,
        agents: usize,
        dim: usize,
        samples: usize,
        ridge: f64,
        #[serde(default = "default_noise")]
        label_noise: f64,
        #[serde(default)]
        q: Option<Vec<f64>>,
    },
    /// Explicit `R_k`, `r_k` per agent.
    MseQuadratic {
        covariances: Vec<Vec<Vec<f64>>>,
        cross: Vec<Vec<f64>>,
        #[serde(default)]
        q: Option<Vec<f64>>,
    },
    /// Seeded random SPD covariances with eigenvalues in `[lo, hi]`.
    RandomQuadratic {
        seed: u64,
        agents: usize,
        dim: usize,
        lo: f64,
        hi: f64,
        #[serde(default)]
        q: Option<Vec<f64>>,
    },
    /// `R_k = σ² I` for every agent.
    Isotropic { agents: usize, sigma2: f64, w_o: Vec<f64> },
}

fn default_noise() -> f64 {
    DEFAULT_LABEL_NOISE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Random { n: usize, seed: u64, edge_probability: f64 },
    Path { n: usize },
    Cycle { n: usize },
    Star { n: usize },
    Complete { n: usize },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    #[default]
    Metropolis,
    Averaging,
    File { path: PathBuf },
    Explicit { entries: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: String,
    /// File stem for outputs; defaults to `name`.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub step: Option<StepConfig>,
    #[serde(default)]
    pub tune: Option<TuneSpec>,
}

impl AlgorithmSpec {
    pub fn stem(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum StepConfig {
    Scalar { mu: f64 },
    PerAgent { mu: Vec<f64> },
    Weighted { q: Vec<f64>, mu_o: f64 },
}

impl StepConfig {
    pub fn to_spec(&self) -> StepSpec {
        match self {
            StepConfig::Scalar { mu } => StepSpec::Uniform(*mu),
            StepConfig::PerAgent { mu } => StepSpec::PerAgent(mu.clone()),
            StepConfig::Weighted { q, mu_o } => StepSpec::Weighted { q: q.clone(), mu_o: *mu_o },
        }
    }
}

/// Grid search for the step giving the fewest communication units to reach `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSpec {
    pub grid: Vec<f64>,
    /// Points of the geometric refinement between the winner's grid neighbours.
    #[serde(default = "default_refine")]
    pub refine: usize,
}

fn default_refine() -> usize {
    5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Zeros,
    Random {
        seed: u64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_scale() -> f64 {
    1.0
}

impl InitSpec {
    pub fn build(&self, n: usize, m: usize) -> DMatrix<f64> {
        match self {
            InitSpec::Zeros => DMatrix::zeros(n, m),
            InitSpec::Random { seed, scale } => random_init(*seed, n, m, *scale),
        }
    }
}

/// Seeded standard-normal `N×M` start.
pub fn random_init(seed: u64, n: usize, m: usize, scale: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::zeros(n, m);
    for k in 0..n {
        for j in 0..m {
            let x: f64 = StandardNormal.sample(&mut rng);
            w[(k, j)] = scale * x;
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    pub grid: GridSpec,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_scan_iters")]
    pub max_iters: usize,
    #[serde(default = "default_scan_stop")]
    pub stop: f64,
    /// Seed of the random start shared by every scan run.
    #[serde(default)]
    pub init_seed: u64,
}

fn default_rel_tol() -> f64 {
    1e-3
}

fn default_scan_iters() -> usize {
    5_000
}

fn default_scan_stop() -> f64 {
    1e-16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GridSpec {
    Points(Vec<f64>),
    Range {
        min: f64,
        max: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::Points(v) => v.clone(),
            GridSpec::Range { min, max, points, log } => {
                if *points == 1 {
                    return vec![*min];
                }
                (0..*points)
                    .map(|i| {
                        let t = i as f64 / (*points - 1) as f64;
                        if *log {
                            (min.ln() + t * (max.ln() - min.ln())).exp()
                        } else {
                            min + t * (max - min)
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Everything a command needs, built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: CostModel,
    pub matrix: CombinationMatrix,
    pub w_init: DMatrix<f64>,
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(path, format!("must be positive and finite, got {x}")))
    }
}

fn nonzero(path: &str, x: usize) -> Result<()> {
    if x == 0 {
        Err(CliError::config(path, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn check_weights(path: &str, q: &Option<Vec<f64>>, n: usize) -> Result<()> {
    if let Some(q) = q {
        if q.len() != n {
            return Err(CliError::config(path, format!("has {} entries for {n} agents", q.len())));
        }
        for (i, x) in q.iter().enumerate() {
            positive(&format!("{path}[{i}]"), *x)?;
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| CliError::Parse { file: path.to_path_buf(), source })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Relative file references are taken from the config file's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let GraphSpec::File { path } = &mut self.graph {
            fix(path);
        }
        if let MatrixSpec::File { path } = &mut self.matrix {
            fix(path);
        }
    }

    /// Replace every seed (model, graph, random start, scan start).
    pub fn override_seed(&mut self, seed: u64) {
        match &mut self.model {
            Some(ModelSpec::LeastSquares { seed: s, .. })
            | Some(ModelSpec::Logistic { seed: s, .. })
            | Some(ModelSpec::RandomQuadratic { seed: s, .. }) => *s = seed,
            _ => {}
        }
        if let GraphSpec::Random { seed: s, .. } = &mut self.graph {
            *s = seed;
        }
        if let InitSpec::Random { seed: s, .. } = &mut self.init {
            *s = seed;
        }
        if let Some(scan) = &mut self.scan {
            scan.init_seed = seed;
        }
    }

    pub fn model_agents(&self) -> usize {
        let Some(model) = &self.model else { return 0 };
        match model {
            ModelSpec::LeastSquares { agents, .. }
            | ModelSpec::Logistic { agents, .. }
            | ModelSpec::RandomQuadratic { agents, .. }
            | ModelSpec::Isotropic { agents, .. } => *agents,
            ModelSpec::MseQuadratic { covariances, .. } => covariances.len(),
        }
    }

    /// Structural checks that need no file access, reported with field paths.
    pub fn validate(&self) -> Result<()> {
        let n = self.model_agents();
        if let Some(model) = &self.model {
        match model {
            ModelSpec::LeastSquares { agents, dim, samples, q, .. } => {
                nonzero("model.agents", *agents)?;
                nonzero("model.dim", *dim)?;
                nonzero("model.samples", *samples)?;
                check_weights("model.q", q, n)?;
            }
            ModelSpec::Logistic { agents, dim, samples, ridge, label_noise, q, .. } => {
                nonzero("model.agents", *agents)?;
                nonzero("model.dim", *dim)?;
                nonzero("model.samples", *samples)?;
                positive("model.ridge", *ridge)?;
                if !(0.0..=1.0).contains(label_noise) {
                    return Err(CliError::config("model.label_noise", format!("{label_noise} not in [0, 1]")));
                }
                check_weights("model.q", q, n)?;
            }
            ModelSpec::MseQuadratic { covariances, cross, q } => {
                nonzero("model.covariances", covariances.len())?;
                if cross.len() != covariances.len() {
                    return Err(CliError::config("model.cross", "needs one vector per covariance"));
                }
                check_weights("model.q", q, n)?;
            }
            ModelSpec::RandomQuadratic { agents, dim, lo, hi, q, .. } => {
                nonzero("model.agents", *agents)?;
                nonzero("model.dim", *dim)?;
                positive("model.lo", *lo)?;
                if !(hi >= lo) || !hi.is_finite() {
                    return Err(CliError::config("model.hi", format!("must be finite and at least lo, got {hi}")));
                }
                check_weights("model.q", q, n)?;
            }
            ModelSpec::Isotropic { agents, sigma2, w_o } => {
                nonzero("model.agents", *agents)?;
                positive("model.sigma2", *sigma2)?;
                nonzero("model.w_o", w_o.len())?;
            }
        }
        }
        match &self.graph {
            GraphSpec::Random { n: gn, edge_probability, .. } => {
                nonzero("graph.n", *gn)?;
                if !(*edge_probability > 0.0 && *edge_probability <= 1.0) {
                    return Err(CliError::config("graph.edge_probability", format!("{edge_probability} not in (0, 1]")));
                }
            }
            GraphSpec::Path { n: gn } | GraphSpec::Cycle { n: gn } | GraphSpec::Star { n: gn } | GraphSpec::Complete { n: gn } => {
                nonzero("graph.n", *gn)?
            }
            GraphSpec::File { path } => {
                if !path.exists() {
                    return Err(CliError::config("graph.path", format!("{} does not exist", path.display())));
                }
            }
        }
        if let MatrixSpec::File { path } = &self.matrix {
            if !path.exists() {
                return Err(CliError::config("matrix.path", format!("{} does not exist", path.display())));
            }
        }
        if self.max_iters == 0 {
            return Err(CliError::config("max_iters", "must be at least 1"));
        }
        if !(self.stop >= 0.0) {
            return Err(CliError::config("stop", format!("must be nonnegative, got {}", self.stop)));
        }
        if let InitSpec::Random { scale, .. } = &self.init {
            positive("init.scale", *scale)?;
        }
        let mut stems = BTreeSet::new();
        for (i, a) in self.algorithms.iter().enumerate() {
            let base = format!("algorithms[{i}]");
            let kind = Algorithm::from_name(&a.name)
                .ok_or_else(|| CliError::config(format!("{base}.name"), format!("unknown algorithm `{}`", a.name)))?;
            if !stems.insert(a.stem().to_string()) {
                return Err(CliError::config(format!("{base}.label"), format!("duplicate output name `{}`", a.stem())));
            }
            if a.stem().is_empty() || a.stem().contains(['/', '\\']) {
                return Err(CliError::config(format!("{base}.label"), "must be a plain file stem"));
            }
            match &a.step {
                Some(StepConfig::Scalar { mu }) => positive(&format!("{base}.step.mu"), *mu)?,
                Some(StepConfig::PerAgent { mu }) => {
                    if matches!(kind, Algorithm::Extra | Algorithm::Diging | Algorithm::ExactDiffusionAdaptive) {
                        return Err(CliError::config(format!("{base}.step"), format!("{} needs a scalar step", a.name)));
                    }
                    if mu.len() != n {
                        return Err(CliError::config(format!("{base}.step.mu"), format!("has {} entries for {n} agents", mu.len())));
                    }
                    for (k, x) in mu.iter().enumerate() {
                        positive(&format!("{base}.step.mu[{k}]"), *x)?;
                    }
                }
                Some(StepConfig::Weighted { q, mu_o }) => {
                    if matches!(kind, Algorithm::Extra | Algorithm::Diging) {
                        return Err(CliError::config(format!("{base}.step"), format!("{} needs a scalar step", a.name)));
                    }
                    positive(&format!("{base}.step.mu_o"), *mu_o)?;
                    check_weights(&format!("{base}.step.q"), &Some(q.clone()), n)?;
                }
                None => {}
            }
            if let Some(t) = &a.tune {
                if t.grid.is_empty() {
                    return Err(CliError::config(format!("{base}.tune.grid"), "must not be empty"));
                }
                for (k, x) in t.grid.iter().enumerate() {
                    positive(&format!("{base}.tune.grid[{k}]"), *x)?;
                }
                if matches!(a.step, Some(StepConfig::PerAgent { .. }) | Some(StepConfig::Weighted { .. })) {
                    return Err(CliError::config(format!("{base}.tune"), "tuning needs a scalar step"));
                }
            }
        }
        if let Some(scan) = &self.scan {
            let pts = scan.grid.points();
            if pts.is_empty() {
                return Err(CliError::config("scan.grid", "must not be empty"));
            }
            for (k, x) in pts.iter().enumerate() {
                positive(&format!("scan.grid[{k}]"), *x)?;
            }
            if pts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::config("scan.grid", "must be strictly increasing"));
            }
            positive("scan.rel_tol", scan.rel_tol)?;
            nonzero("scan.max_iters", scan.max_iters)?;
        }
        Ok(())
    }

    pub fn require_algorithms(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(CliError::config("algorithms", "must list at least one algorithm"));
        }
        Ok(())
    }

    pub fn build_graph(&self) -> Result<Graph> {
        let g = match &self.graph {
            GraphSpec::Random { n, seed, edge_probability } => random_connected_graph(*n, *edge_probability, *seed),
            GraphSpec::Path { n } => Graph::path(*n),
            GraphSpec::Cycle { n } => Graph::cycle(*n),
            GraphSpec::Star { n } => Graph::star(*n),
            GraphSpec::Complete { n } => Graph::complete(*n),
            GraphSpec::File { path } => return read_graph_json(path),
        };
        g.map_err(|e| CliError::config("graph", e.to_string()))
    }

    pub fn build_matrix(&self, graph: &Graph) -> Result<CombinationMatrix> {
        let m = match &self.matrix {
            MatrixSpec::Metropolis => build_metropolis(graph),
            MatrixSpec::Averaging => build_averaging(graph),
            MatrixSpec::File { path } => CombinationMatrix::new(graph.clone(), read_matrix_csv(path)?),
            MatrixSpec::Explicit { entries } => {
                let n = entries.len();
                if entries.iter().any(|r| r.len() != n) {
                    return Err(CliError::config("matrix.entries", "must be square"));
                }
                CombinationMatrix::new(graph.clone(), DMatrix::from_fn(n, n, |i, j| entries[i][j]))
            }
        };
        m.map_err(|e| CliError::config("matrix", e.to_string()))
    }

    pub fn build_model(&self) -> Result<CostModel> {
        let spec = self.model.as_ref().ok_or_else(|| CliError::config("model", "is required for this command"))?;
        let (model, q) = match spec {
            ModelSpec::LeastSquares { seed, agents, dim, samples, q } => {
                (least_squares_model(*seed, *agents, *dim, *samples), q.clone())
            }
            ModelSpec::Logistic { seed, agents, dim, samples, ridge, label_noise, q } => {
                (logistic_model_with_noise(*seed, *agents, *dim, *samples, *ridge, *label_noise), q.clone())
            }
            ModelSpec::MseQuadratic { covariances, cross, q } => {
                let mut covs = Vec::new();
                for (k, c) in covariances.iter().enumerate() {
                    let m = c.len();
                    if c.iter().any(|r| r.len() != m) {
                        return Err(CliError::config(format!("model.covariances[{k}]"), "must be square"));
                    }
                    covs.push(DMatrix::from_fn(m, m, |i, j| c[i][j]));
                }
                let xs = cross.iter().map(|x| DVector::from_column_slice(x)).collect();
                (mse_quadratic_model(covs, xs), q.clone())
            }
            ModelSpec::RandomQuadratic { seed, agents, dim, lo, hi, q } => {
                (random_quadratic_model(*seed, *agents, *dim, *lo, *hi), q.clone())
            }
            ModelSpec::Isotropic { agents, sigma2, w_o } => (isotropic_mse_model(*agents, *sigma2, w_o), None),
        };
        let model = model.map_err(|e| CliError::config("model", e.to_string()))?;
        match q {
            Some(q) => model.with_weights(q).map_err(|e| CliError::config("model.q", e.to_string())),
            None => Ok(model),
        }
    }

    /// Validate and build the model, matrix and start.
    pub fn build(&self) -> Result<Experiment> {
        self.validate()?;
        let graph = self.build_graph()?;
        let model = self.build_model()?;
        if model.n_agents() != graph.n() {
            return Err(CliError::config("model.agents", format!("model has {} agents, graph has {}", model.n_agents(), graph.n())));
        }
        let matrix = self.build_matrix(&graph)?;
        let w_init = self.init.build(graph.n(), model.dim());
        Ok(Experiment { model, matrix, w_init })
    }

    /// Step request of an algorithm entry, falling back to the defaults.
    pub fn step_spec(&self, spec: &AlgorithmSpec) -> StepSpec {
        match &spec.step {
            Some(s) => s.to_spec(),
            None => StepSpec::Uniform(default_step(Algorithm::from_name(&spec.name).expect("validated"))),
        }
    }
}
