// Scratch calibration driver; not part of the shipped surface.

use std::collections::BTreeMap;
use std::time::Instant;

use lodl::domains::{DomainConfig, LinearConfig, PortfolioConfig, WebAdvConfig};
use lodl::harness::{
    run_experiment, summary_table, ExperimentConfig, Method,
};
use lodl::losses::{FitConfig, LossKind};
use lodl::sampling::{PerturbStrategy, SampleConfig};

fn arg(n: usize, default: f64) -> f64 {
    std::env::args()
        .nth(n)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn per_method(records: &[lodl::harness::RunRecord]) {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry(r.method.to_string())
            .or_default()
            .push(r.normalized_dq);
    }
    for (m, v) in groups {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        println!("  {:<22} mean {:>8.4} std {:>8.4} n {}", m, mean, var.sqrt(), v.len());
    }
}

fn run(cfg: ExperimentConfig, label: &str) {
    let t = Instant::now();
    let result = run_experiment(&cfg).expect("experiment");
    let secs = t.elapsed().as_secs_f64();
    println!("== {} ({:.1} s) ==", label, secs);
    for f in &result.failures {
        println!("  FAIL {} {} seed {} init {}: {} ({})", f.domain, f.method, f.seed, f.init, f.message, f.stage);
    }
    if std::env::var("CELLS").is_ok() {
        for r in &result.records {
            println!(
                "  cell {:<22} seed {} init {} dq {:>8.4}",
                r.method.to_string(),
                r.seed,
                r.init,
                r.normalized_dq
            );
        }
    }
    per_method(&result.records);
    println!("{}", summary_table(&result.records));
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "linear".into());
    match which.as_str() {
        "linear" => {
            // args: k iters steps dfl_steps n_train sinkhorn_iters seeds fit_lr lr_loss rank
            let k = arg(2, 1000.0) as usize;
            let iters = arg(3, 100.0) as usize;
            let steps = arg(4, 500.0) as usize;
            let dfl_steps = arg(5, 60.0) as usize;
            let n_train = arg(6, 120.0) as usize;
            let sk = arg(7, 40.0) as usize;
            let seeds = arg(8, 5.0) as u64;
            let fit_lr = arg(9, 0.01);
            let lr_loss = arg(10, 0.01);
            let rank = arg(11, 2.0) as usize;
            let domain = DomainConfig::Linear(LinearConfig {
                n_items: 50,
                budget: 1,
                n_train,
                n_val: 60,
                n_test: 300,
                sinkhorn_eps: 0.1,
                sinkhorn_iters: sk,
            });
            let cfg = ExperimentConfig {
                methods: vec![
                    Method::Random,
                    Method::Optimal,
                    Method::TwoStage,
                    Method::Lodl(LossKind::WeightedMse),
                    Method::Lodl(LossKind::DirectedWeightedMse),
                    Method::Lodl(LossKind::DirectedQuadratic),
                    Method::Dfl,
                ],
                seeds: (0..seeds).collect(),
                sample: SampleConfig {
                    strategy: PerturbStrategy::All,
                    alpha: 1.0,
                    k,
                    seed: 0,
                },
                fit: FitConfig {
                    iters,
                    lr: fit_lr,
                    rank,
                    ..FitConfig::default()
                },
                steps,
                lr_loss,
                lr_mse: 0.01,
                dfl_steps: Some(dfl_steps),
                ..ExperimentConfig::table1(domain)
            };
            run(cfg, "linear");
        }
        "webadv" => {
            // args: k iters steps n_train seeds batch
            let k = arg(2, 500.0) as usize;
            let iters = arg(3, 120.0) as usize;
            let steps = arg(4, 300.0) as usize;
            let n_train = arg(5, 50.0) as usize;
            let seeds = arg(6, 5.0) as u64;
            let batch = arg(7, 0.0) as usize;
            let domain = DomainConfig::WebAdv(WebAdvConfig {
                n_train,
                n_val: 20,
                n_test: 150,
                ..WebAdvConfig::default()
            });
            let cfg = ExperimentConfig {
                methods: vec![
                    Method::Random,
                    Method::Optimal,
                    Method::TwoStage,
                    Method::Lodl(LossKind::Quadratic),
                    Method::Lodl(LossKind::DirectedQuadratic),
                ],
                seeds: (0..seeds).collect(),
                sample: SampleConfig {
                    strategy: PerturbStrategy::All,
                    alpha: 0.05,
                    k,
                    seed: 0,
                },
                fit: FitConfig {
                    iters,
                    batch: if batch == 0 { None } else { Some(batch) },
                    ..FitConfig::default()
                },
                steps,
                ..ExperimentConfig::table1(domain)
            };
            run(cfg, "webadv");
        }
        "portfolio" => {
            // args: k iters steps dfl_steps n_train n_assets seeds surrogate_steps
            let k = arg(2, 300.0) as usize;
            let iters = arg(3, 100.0) as usize;
            let steps = arg(4, 250.0) as usize;
            let dfl_steps = arg(5, 120.0) as usize;
            let n_train = arg(6, 40.0) as usize;
            let n_assets = arg(7, 12.0) as usize;
            let seeds = arg(8, 5.0) as u64;
            let ss = arg(9, 80.0) as usize;
            let domain = DomainConfig::Portfolio(PortfolioConfig {
                n_assets,
                n_train,
                n_val: 20,
                n_test: 80,
                surrogate_steps: ss,
                ..PortfolioConfig::default()
            });
            let cfg = ExperimentConfig {
                seeds: (0..seeds).collect(),
                sample: SampleConfig {
                    strategy: PerturbStrategy::All,
                    alpha: 0.05,
                    k,
                    seed: 0,
                },
                fit: FitConfig {
                    iters,
                    ..FitConfig::default()
                },
                steps,
                dfl_steps: Some(dfl_steps),
                ..ExperimentConfig::table1(domain)
            };
            run(cfg, "portfolio");
        }
        "fitprobe" => {
            // args: k iters lr rank batch alpha
            let k = arg(2, 1000.0) as usize;
            let iters = arg(3, 100.0) as usize;
            let lr = arg(4, 0.01);
            let rank = arg(5, 2.0) as usize;
            let batch = arg(6, 0.0) as usize;
            let alpha = arg(7, 1.0);
            let domain = DomainConfig::Linear(LinearConfig {
                n_items: 50,
                budget: 1,
                n_train: 20,
                n_val: 5,
                n_test: 5,
                sinkhorn_eps: 0.1,
                sinkhorn_iters: 40,
            });
            let dataset = domain.generate(0).expect("gen");
            let problem = dataset.problem().expect("problem");
            let sample = SampleConfig {
                strategy: PerturbStrategy::All,
                alpha,
                k,
                seed: 0,
            };
            let table = lodl::sampling::sample_dataset(
                problem.as_ref(),
                &sample,
                &dataset,
                lodl::domains::Split::Train,
            )
            .expect("sample");
            let fit = FitConfig {
                iters,
                lr,
                rank,
                batch: if batch == 0 { None } else { Some(batch) },
                ..FitConfig::default()
            };
            for kind in [LossKind::DirectedQuadratic, LossKind::Quadratic] {
                let t = Instant::now();
                let losses =
                    lodl::losses::fit_split(kind, &fit, &dataset, &table).expect("fit");
                let secs = t.elapsed().as_secs_f64();
                let mean_obj = losses.iter().map(|l| l.fit_objective).sum::<f64>()
                    / losses.len() as f64;
                // predict-zero baseline: mean target^2
                let base = table
                    .instances
                    .iter()
                    .map(|row| {
                        let t = row.targets();
                        t.iter().map(|x| x * x).sum::<f64>() / t.len() as f64
                    })
                    .sum::<f64>()
                    / table.instances.len() as f64;
                // gradient scale at a training-like error (model off by ~1 per coord)
                let mut g_norm = 0.0;
                for l in &losses {
                    let yhat: Vec<f64> = l.y.iter().map(|v| v + 1.0).collect();
                    let g = l.grad(&yhat).expect("grad");
                    g_norm += g.iter().map(|x| x * x).sum::<f64>().sqrt();
                }
                g_norm /= losses.len() as f64;
                println!(
                    "{:<20} fit_obj {:>9.4} zero_base {:>9.4} grad@1 {:>9.4} ({:.1} s)",
                    kind.name(),
                    mean_obj,
                    base,
                    g_norm,
                    secs
                );
            }
        }
        other => {
            eprintln!("unknown mode {}", other);
            std::process::exit(1);
        }
    }
}
