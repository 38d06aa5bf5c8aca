use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowsense::eval::{evaluate, temporal_split, EvalConfig, NaiveDensity};
use flowsense::sensorimotor::make_pairs;
use flowsense::simulator::{simulate, Scenario};
use flowsense::{Execution, ForwardModel};

fn setup() -> (ForwardModel, NaiveDensity, Vec<flowsense::TrainingPair>, flowsense::StreamLog) {
    let mut sc = Scenario::wander(11);
    sc.duration = 40.0;
    let log = simulate(&sc).expect("simulate").log;
    let cfg = EvalConfig::default();
    let pairs = make_pairs(&log, cfg.model.horizon, &cfg.model.layout);
    let (train, test) = temporal_split(&pairs, log.header().cell_count(), 0.7).expect("split");
    let fm = ForwardModel::fit(&cfg.model, train, log.header().shape()).expect("fit");
    let naive = NaiveDensity::fit(train).expect("naive");
    (fm, naive, test.to_vec(), log)
}

fn bench(c: &mut Criterion) {
    let (fm, naive, test, log) = setup();
    let modes = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

    let mut g = c.benchmark_group("evaluate");
    for (name, exec) in modes {
        let cfg = EvalConfig {
            execution: exec,
            ..EvalConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| evaluate(&fm, &naive, &test, cfg).expect("evaluate"))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("predict_grid");
    let frames = &log.frames()[..200];
    for (name, exec) in modes {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                for f in frames {
                    fm.predict_grid_with(f, exec).expect("predict");
                }
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
