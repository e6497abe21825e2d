//! Config file schema and flag merging.
//!
//! The file is TOML with one section per pipeline stage. Precedence is
//! built-in defaults, then the file, then command-line flags. Every key is
//! optional except the domain name; unknown keys and keys that do not apply
//! to the chosen domain are rejected by name before any work starts.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use lodl::domains::{DomainConfig, LinearConfig, PortfolioConfig, WebAdvConfig};
use lodl::harness::Method;
use lodl::losses::{FitConfig, LossKind};
use lodl::sampling::{PerturbStrategy, SampleConfig};

pub const VALID_DOMAINS: &str = "linear, webadv, portfolio";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub domain: DomainSection,
    pub sample: SampleSection,
    pub fit: FitSection,
    pub train: TrainSection,
    pub experiment: ExperimentSection,
    pub ablate: AblateSection,
    pub bench: BenchSection,
}

/// Union of every domain's knobs; resolution rejects the ones that do not
/// apply to the named domain.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSection {
    pub name: Option<String>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub n_test: Option<usize>,
    pub budget: Option<usize>,
    // linear
    pub n_items: Option<usize>,
    pub sinkhorn_eps: Option<f64>,
    pub sinkhorn_iters: Option<usize>,
    // webadv
    pub n_websites: Option<usize>,
    pub n_users: Option<usize>,
    pub ctr_scale: Option<f64>,
    pub ascent_steps: Option<usize>,
    pub ascent_step_size: Option<f64>,
    // portfolio
    pub n_assets: Option<usize>,
    pub risk_aversion: Option<f64>,
    pub window: Option<usize>,
    pub n_factors: Option<usize>,
    pub factor_persistence: Option<f64>,
    pub factor_vol: Option<f64>,
    pub idio_vol: Option<f64>,
    pub solver_tol: Option<f64>,
    pub solver_fail_tol: Option<f64>,
    pub solver_max_iter: Option<usize>,
    pub surrogate_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub strategy: Option<String>,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub family: Option<String>,
    pub w_min: Option<f64>,
    pub rank: Option<usize>,
    pub nn_hidden: Option<usize>,
    pub sweeps: Option<usize>,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub method: Option<String>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    /// Learning rate for training against fitted losses; defaults to `lr`.
    pub lodl_lr: Option<f64>,
    pub dfl_lr: Option<f64>,
    pub dfl_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub seeds: Option<Vec<u64>>,
    pub n_inits: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub random_draws: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub strategies: Option<Vec<String>>,
    pub ks: Option<Vec<usize>>,
    pub families: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub worker_counts: Option<Vec<usize>>,
    pub m: Option<usize>,
}

/// Values set on the command line; each one wins over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub domain: Option<String>,
    pub method: Option<String>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub steps: Option<usize>,
    pub family: Option<String>,
}

#[derive(Debug)]
pub struct TrainSettings {
    pub method: Method,
    pub steps: usize,
    pub lr: f64,
    pub lodl_lr: f64,
    pub dfl_lr: f64,
    pub dfl_steps: Option<usize>,
}

#[derive(Debug)]
pub struct ExperimentSettings {
    pub seeds: Vec<u64>,
    pub n_inits: usize,
    pub methods: Vec<Method>,
    pub random_draws: usize,
}

#[derive(Debug)]
pub struct AblateSettings {
    pub strategies: Vec<PerturbStrategy>,
    pub ks: Vec<usize>,
    pub families: Vec<LossKind>,
}

#[derive(Debug)]
pub struct BenchSettings {
    pub worker_counts: Vec<usize>,
    pub m: usize,
}

/// The fully merged configuration every subcommand runs from.
#[derive(Debug)]
pub struct Resolved {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub domain: DomainConfig,
    pub sample: SampleConfig,
    pub fit: FitConfig,
    pub family: LossKind,
    pub train: TrainSettings,
    pub experiment: ExperimentSettings,
    pub ablate: AblateSettings,
    pub bench: BenchSettings,
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig, String> {
    match path {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("config file {}: {e}", path.display()))
        }
    }
}

fn forbid(domain: &str, keys: &[(&str, bool)]) -> Result<(), String> {
    for (key, set) in keys {
        if *set {
            return Err(format!(
                "key `{key}` in [domain] does not apply to domain `{domain}`"
            ));
        }
    }
    Ok(())
}

fn resolve_domain(section: &DomainSection, name: Option<&str>) -> Result<DomainConfig, String> {
    let name = name
        .map(str::to_string)
        .or_else(|| section.name.clone())
        .ok_or_else(|| {
            format!("missing domain: set [domain].name or --domain (valid: {VALID_DOMAINS})")
        })?;
    let s = section;
    match name.as_str() {
        "linear" => {
            forbid(
                "linear",
                &[
                    ("n_websites", s.n_websites.is_some()),
                    ("n_users", s.n_users.is_some()),
                    ("ctr_scale", s.ctr_scale.is_some()),
                    ("ascent_steps", s.ascent_steps.is_some()),
                    ("ascent_step_size", s.ascent_step_size.is_some()),
                    ("n_assets", s.n_assets.is_some()),
                    ("risk_aversion", s.risk_aversion.is_some()),
                    ("window", s.window.is_some()),
                    ("n_factors", s.n_factors.is_some()),
                    ("factor_persistence", s.factor_persistence.is_some()),
                    ("factor_vol", s.factor_vol.is_some()),
                    ("idio_vol", s.idio_vol.is_some()),
                    ("solver_tol", s.solver_tol.is_some()),
                    ("solver_fail_tol", s.solver_fail_tol.is_some()),
                    ("solver_max_iter", s.solver_max_iter.is_some()),
                    ("surrogate_steps", s.surrogate_steps.is_some()),
                ],
            )?;
            let mut c = LinearConfig::default();
            if let Some(v) = s.n_items {
                c.n_items = v;
            }
            if let Some(v) = s.budget {
                c.budget = v;
            }
            if let Some(v) = s.n_train {
                c.n_train = v;
            }
            if let Some(v) = s.n_val {
                c.n_val = v;
            }
            if let Some(v) = s.n_test {
                c.n_test = v;
            }
            if let Some(v) = s.sinkhorn_eps {
                c.sinkhorn_eps = v;
            }
            if let Some(v) = s.sinkhorn_iters {
                c.sinkhorn_iters = v;
            }
            Ok(DomainConfig::Linear(c))
        }
        "webadv" => {
            forbid(
                "webadv",
                &[
                    ("n_items", s.n_items.is_some()),
                    ("sinkhorn_eps", s.sinkhorn_eps.is_some()),
                    ("sinkhorn_iters", s.sinkhorn_iters.is_some()),
                    ("n_assets", s.n_assets.is_some()),
                    ("risk_aversion", s.risk_aversion.is_some()),
                    ("window", s.window.is_some()),
                    ("n_factors", s.n_factors.is_some()),
                    ("factor_persistence", s.factor_persistence.is_some()),
                    ("factor_vol", s.factor_vol.is_some()),
                    ("idio_vol", s.idio_vol.is_some()),
                    ("solver_tol", s.solver_tol.is_some()),
                    ("solver_fail_tol", s.solver_fail_tol.is_some()),
                    ("solver_max_iter", s.solver_max_iter.is_some()),
                    ("surrogate_steps", s.surrogate_steps.is_some()),
                ],
            )?;
            let mut c = WebAdvConfig::default();
            if let Some(v) = s.n_websites {
                c.n_websites = v;
            }
            if let Some(v) = s.n_users {
                c.n_users = v;
            }
            if let Some(v) = s.budget {
                c.budget = v;
            }
            if let Some(v) = s.n_train {
                c.n_train = v;
            }
            if let Some(v) = s.n_val {
                c.n_val = v;
            }
            if let Some(v) = s.n_test {
                c.n_test = v;
            }
            if let Some(v) = s.ctr_scale {
                c.ctr_scale = v;
            }
            if let Some(v) = s.ascent_steps {
                c.ascent_steps = v;
            }
            if let Some(v) = s.ascent_step_size {
                c.ascent_step_size = v;
            }
            Ok(DomainConfig::WebAdv(c))
        }
        "portfolio" => {
            forbid(
                "portfolio",
                &[
                    ("n_items", s.n_items.is_some()),
                    ("budget", s.budget.is_some()),
                    ("sinkhorn_eps", s.sinkhorn_eps.is_some()),
                    ("sinkhorn_iters", s.sinkhorn_iters.is_some()),
                    ("n_websites", s.n_websites.is_some()),
                    ("n_users", s.n_users.is_some()),
                    ("ctr_scale", s.ctr_scale.is_some()),
                    ("ascent_steps", s.ascent_steps.is_some()),
                    ("ascent_step_size", s.ascent_step_size.is_some()),
                ],
            )?;
            let mut c = PortfolioConfig::default();
            if let Some(v) = s.n_assets {
                c.n_assets = v;
            }
            if let Some(v) = s.risk_aversion {
                c.risk_aversion = v;
            }
            if let Some(v) = s.n_train {
                c.n_train = v;
            }
            if let Some(v) = s.n_val {
                c.n_val = v;
            }
            if let Some(v) = s.n_test {
                c.n_test = v;
            }
            if let Some(v) = s.window {
                c.window = v;
            }
            if let Some(v) = s.n_factors {
                c.n_factors = v;
            }
            if let Some(v) = s.factor_persistence {
                c.factor_persistence = v;
            }
            if let Some(v) = s.factor_vol {
                c.factor_vol = v;
            }
            if let Some(v) = s.idio_vol {
                c.idio_vol = v;
            }
            if let Some(v) = s.solver_tol {
                c.solver_tol = v;
            }
            if let Some(v) = s.solver_fail_tol {
                c.solver_fail_tol = v;
            }
            if let Some(v) = s.solver_max_iter {
                c.solver_max_iter = v;
            }
            if let Some(v) = s.surrogate_steps {
                c.surrogate_steps = v;
            }
            Ok(DomainConfig::Portfolio(c))
        }
        other => Err(format!(
            "unknown domain `{other}`, valid domains: {VALID_DOMAINS}"
        )),
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, String> {
    names.iter().map(|n| n.parse()).collect()
}

fn parse_families(names: &[String]) -> Result<Vec<LossKind>, String> {
    names.iter().map(|n| n.parse()).collect()
}

fn parse_strategies(names: &[String]) -> Result<Vec<PerturbStrategy>, String> {
    names
        .iter()
        .map(|n| n.parse().map_err(|e: lodl::sampling::SampleError| e.to_string()))
        .collect()
}

pub fn resolve(file: FileConfig, ov: Overrides) -> Result<Resolved, String> {
    let seed = ov.seed.or(file.seed).unwrap_or(0);
    let workers = ov.workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        return Err("key `workers` must be at least 1".into());
    }
    let out = ov
        .out
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let domain = resolve_domain(&file.domain, ov.domain.as_deref())?;

    let mut sample = SampleConfig::for_domain(domain.name(), seed);
    if let Some(name) = &file.sample.strategy {
        sample.strategy = name
            .parse()
            .map_err(|e: lodl::sampling::SampleError| e.to_string())?;
    }
    if let Some(v) = file.sample.alpha {
        sample.alpha = v;
    }
    if let Some(v) = file.sample.k {
        sample.k = v;
    }
    if let Some(v) = ov.alpha {
        sample.alpha = v;
    }
    if let Some(v) = ov.k {
        sample.k = v;
    }

    let mut fit = FitConfig {
        seed,
        ..FitConfig::default()
    };
    if let Some(v) = file.fit.w_min {
        fit.w_min = v;
    }
    if let Some(v) = file.fit.rank {
        fit.rank = v;
    }
    if let Some(v) = file.fit.nn_hidden {
        fit.nn_hidden = v;
    }
    if let Some(v) = file.fit.sweeps {
        fit.sweeps = v;
    }
    if let Some(v) = file.fit.iters {
        fit.iters = v;
    }
    if let Some(v) = file.fit.lr {
        fit.lr = v;
    }
    if let Some(v) = file.fit.batch {
        if v == 0 {
            return Err("key `batch` in [fit] must be at least 1".into());
        }
        fit.batch = Some(v);
    }
    let family = ov
        .family
        .as_deref()
        .map(str::to_string)
        .or_else(|| file.fit.family.clone())
        .map(|n| n.parse::<LossKind>())
        .transpose()?
        .unwrap_or(LossKind::DirectedQuadratic);

    let method = ov
        .method
        .as_deref()
        .map(str::to_string)
        .or_else(|| file.train.method.clone())
        .map(|n| n.parse::<Method>())
        .transpose()?
        .unwrap_or(Method::TwoStage);
    let train = TrainSettings {
        method,
        steps: ov.steps.or(file.train.steps).unwrap_or(500),
        lr: file.train.lr.unwrap_or(0.01),
        lodl_lr: file.train.lodl_lr.or(file.train.lr).unwrap_or(0.01),
        dfl_lr: file.train.dfl_lr.unwrap_or(0.005),
        dfl_steps: file.train.dfl_steps,
    };

    let experiment = ExperimentSettings {
        seeds: file.experiment.seeds.unwrap_or_else(|| (0..5).collect()),
        n_inits: file.experiment.n_inits.unwrap_or(3),
        methods: match &file.experiment.methods {
            Some(names) => parse_methods(names)?,
            None => Method::all(),
        },
        random_draws: file.experiment.random_draws.unwrap_or(100),
    };

    let ablate = AblateSettings {
        strategies: match &file.ablate.strategies {
            Some(names) => parse_strategies(names)?,
            None => vec![PerturbStrategy::All],
        },
        ks: file.ablate.ks.clone().unwrap_or_else(|| vec![50, 5000]),
        families: match &file.ablate.families {
            Some(names) => parse_families(names)?,
            None => vec![LossKind::Quadratic],
        },
    };

    let bench = BenchSettings {
        worker_counts: file.bench.worker_counts.unwrap_or_else(|| vec![1, 2, 4, 8]),
        m: file.bench.m.unwrap_or(10),
    };

    Ok(Resolved {
        seed,
        workers,
        out,
        domain,
        sample,
        fit,
        family,
        train,
        experiment,
        ablate,
        bench,
    })
}

/// Print the post-merge configuration so every run states what it ran.
pub fn print_resolved(r: &Resolved) {
    println!("resolved config:");
    println!("  seed = {}", r.seed);
    println!("  workers = {}", r.workers);
    println!("  out = {}", r.out.display());
    println!("  domain = {:?}", r.domain);
    println!(
        "  sample = strategy {}, alpha {}, k {}",
        r.sample.strategy.name(),
        r.sample.alpha,
        r.sample.k
    );
    println!(
        "  fit = family {}, rank {}, iters {}, lr {}, w_min {}, batch {}",
        r.family.name(),
        r.fit.rank,
        r.fit.iters,
        r.fit.lr,
        r.fit.w_min,
        match r.fit.batch {
            Some(b) => b.to_string(),
            None => "full".into(),
        }
    );
    println!(
        "  train = method {}, steps {}, lr {}, lodl_lr {}, dfl_lr {}, dfl_steps {}",
        r.train.method,
        r.train.steps,
        r.train.lr,
        r.train.lodl_lr,
        r.train.dfl_lr,
        r.train.dfl_steps.unwrap_or(r.train.steps)
    );
    let methods: Vec<&str> = r.experiment.methods.iter().map(Method::name).collect();
    println!(
        "  experiment = seeds {:?}, inits {}, draws {}, methods [{}]",
        r.experiment.seeds,
        r.experiment.n_inits,
        r.experiment.random_draws,
        methods.join(", ")
    );
}
