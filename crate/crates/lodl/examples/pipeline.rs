//! End-to-end run of the full pipeline on the synthetic top-k domain:
//! generate data, sample the oracle, fit per-instance losses, train all
//! three regimes, and score everything with the exact oracle.

use lodl::domains::{gen_linear_dataset, Instance, LinearConfig, Split};
use lodl::losses::{fit_split, FitConfig, LossKind};
use lodl::models::{
    evaluate_dq, train_dfl, train_two_stage, train_with_lodl, ModelSpec, TrainConfig,
};
use lodl::sampling::{sample_dataset, PerturbStrategy, SampleConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = LinearConfig {
        n_items: 30,
        budget: 5,
        n_train: 40,
        n_val: 20,
        n_test: 60,
        ..LinearConfig::default()
    };
    let seed = 0;
    let ds = gen_linear_dataset(&config, seed)?;
    let problem = ds.problem()?;
    let train: Vec<Instance> = ds.split(Split::Train).cloned().collect();
    let val: Vec<Instance> = ds.split(Split::Val).cloned().collect();
    let test: Vec<Instance> = ds.split(Split::Test).cloned().collect();
    let spec = ModelSpec::for_domain(&ds.config);

    let sample_cfg = SampleConfig {
        strategy: PerturbStrategy::All,
        alpha: 1.0,
        k: 60,
        seed,
    };
    let table = sample_dataset(problem.as_ref(), &sample_cfg, &ds, Split::Train)?;
    let sampling_calls = problem.counters().exact_calls();
    println!(
        "sampled {} instances at k={} ({} exact oracle calls)",
        table.instances.len(),
        sample_cfg.k,
        sampling_calls
    );

    let fit_cfg = FitConfig {
        iters: 200,
        ..FitConfig::default()
    };
    let losses = fit_split(LossKind::DirectedWeightedMse, &fit_cfg, &ds, &table)?;
    println!("fitted {} directed weighted losses", losses.len());

    let optimal: f64 = test
        .iter()
        .map(|i| problem.decision_quality(&i.y, &i.y))
        .sum::<Result<f64, _>>()?
        / test.len() as f64;

    let before = problem.counters().exact_calls();
    let lodl = train_with_lodl(spec, &train, &losses, &TrainConfig::lodl(seed))?;
    assert_eq!(problem.counters().exact_calls(), before, "loss-driven training must not call the oracle");

    let two_stage = train_two_stage(spec, &train, &val, &TrainConfig::two_stage(seed))?;
    let dfl_cfg = TrainConfig {
        steps: 100,
        ..TrainConfig::dfl(seed)
    };
    let dfl = train_dfl(spec, problem.as_ref(), &train, &val, &dfl_cfg)?;

    for (name, outcome) in [("2-stage", two_stage), ("lodl", lodl), ("dfl", dfl)] {
        let (_, mean) = evaluate_dq(&outcome.model, &test, problem.as_ref())?;
        println!(
            "{name:>8}: test decision quality {mean:.4} (optimal {optimal:.4}), final training loss {:.6}",
            outcome.loss_curve.last().unwrap()
        );
    }
    Ok(())
}
