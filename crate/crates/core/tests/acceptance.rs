//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use common::{oracle_params, random_genome, SHAPES};
use evolen::fitness::{EvalTask, Evaluator};
use evolen::genome::{infer_shapes, GeneMenu, ImageShape, LayerKind};
use evolen::lengthsearch::make_candidate;
use evolen::{
    count_params, partition, run_length_search, Evolution, EvolutionConfig, LengthSpace, OptimalSpace, SurrogateSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

const CIFAR: EvalTask = EvalTask {
    input_shape: ImageShape::new(32, 32, 3),
    num_classes: 10,
};
const NOISE: f64 = 0.02;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn partition_exact() -> Outcome {
    let start = Instant::now();
    let spaces = partition(24, 4).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let got: Vec<(usize, usize, usize)> = spaces.iter().map(|s| (s.min, s.max, s.candidate_length)).collect();
    let want = vec![
        (0, 4, 2),
        (4, 8, 6),
        (8, 12, 10),
        (12, 16, 14),
        (16, 20, 18),
        (20, 24, 22),
    ];
    check(got == want, || format!("got {got:?}"))?;
    within(elapsed, Duration::from_millis(1))?;
    let labels: Vec<String> = spaces.iter().map(ToString::to_string).collect();
    Ok(format!("{} in {elapsed:?}", labels.join(" ")))
}

fn length_search_recovery() -> Outcome {
    let start = Instant::now();
    let mut summary = Vec::new();
    for (peak, expected) in [
        (2, LengthSpace::nth(1, 4)),
        (6, LengthSpace::nth(2, 4)),
        (10, LengthSpace::nth(3, 4)),
    ] {
        let mut hits = 0;
        for seed in 0..100u64 {
            let cfg = EvolutionConfig {
                master_seed: seed,
                ..EvolutionConfig::default()
            };
            let ev = Evaluator::surrogate(SurrogateSpec::length_peak(peak).with_noise(NOISE, seed), CIFAR);
            if let Ok(report) = run_length_search(&cfg, &ev) {
                if report.optimal.selected == Some(expected) {
                    hits += 1;
                }
            }
        }
        check(hits >= 95, || format!("peak {peak}: {hits}/100 selected {expected}"))?;
        summary.push(format!("peak {peak} -> {expected} {hits}/100"));
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("{} in {elapsed:.2?}", summary.join(", ")))
}

fn out_of_shape_candidates() -> Outcome {
    let menu = GeneMenu::default();
    // a landscape that would score these lengths well if they fit
    let ev = Evaluator::surrogate(SurrogateSpec::length_peak(20), CIFAR);
    let mut checked = 0;
    for space in [LengthSpace::nth(5, 4), LengthSpace::nth(6, 4)] {
        for seed in 0..50u64 {
            let g = make_candidate(&space, &menu, 10, &mut ChaCha8Rng::seed_from_u64(seed));
            let pools = g.layers().filter(|l| l.kind() == LayerKind::Pool).count();
            check(pools >= 9, || format!("{space} candidate has only {pools} pools"))?;
            check(32u64 >> pools == 0, || "expected floor(32/2^p) = 0".into())?;
            check(infer_shapes(&g, CIFAR.input_shape).is_err(), || {
                format!("{space} seed {seed} fits 32x32")
            })?;
            let r = ev.evaluate(&g, &evolen::TrainBudget::probe(), 0);
            check(r.out_of_shape && r.fitness == 0.0, || {
                format!("{space} seed {seed}: {r:?}")
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} candidates from [16-20] and [20-24] out of shape, fitness 0"
    ))
}

fn ga_invariants() -> Outcome {
    let start = Instant::now();
    let cfg = EvolutionConfig::default();
    let space = OptimalSpace::new(LengthSpace::nth(2, 4), cfg.margin);
    let ev = Evaluator::surrogate(SurrogateSpec::length_peak(6).with_noise(NOISE, 0), CIFAR);
    let mut evo = Evolution::start(&cfg, space, &ev).map_err(|e| e.to_string())?;
    let mut best = vec![evo.best().record.fitness];
    let mut longest = 0;
    loop {
        let pop = evo.population();
        check(pop.members.len() == cfg.population_size, || {
            format!("generation {} has {} members", pop.generation, pop.members.len())
        })?;
        longest = longest.max(
            pop.members
                .iter()
                .map(|m| m.individual.genome.effective_length())
                .max()
                .unwrap(),
        );
        if !evo.step() {
            break;
        }
        best.push(evo.best().record.fitness);
    }
    let elapsed = start.elapsed();
    check(best.windows(2).all(|w| w[0] <= w[1]), || {
        format!("best went down: {best:?}")
    })?;
    check(longest <= space.effective_max_length, || {
        format!("length {longest} > {}", space.effective_max_length)
    })?;
    check(best.len() == cfg.generations, || format!("{} generations", best.len()))?;
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "N_i={} N_g={} best {:.4} -> {:.4}, longest {longest} <= {}, {elapsed:.2?}",
        cfg.population_size,
        cfg.generations,
        best[0],
        best.last().unwrap(),
        space.effective_max_length
    ))
}

fn optimization_sanity() -> Outcome {
    let spec = SurrogateSpec::length_peak(6).with_noise(NOISE, 0);
    let space = OptimalSpace::new(LengthSpace::nth(2, 4), 2);

    // enumeration oracle over every reachable length
    let values: Vec<(usize, f64)> = (0..=space.effective_max_length)
        .map(|l| (l, spec.clean_value(l, 0)))
        .collect();
    let top = values.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<usize> = values.iter().filter(|&&(_, v)| v == top).map(|&(l, _)| l).collect();
    check(argmax == [6], || format!("argmax lengths {argmax:?}"))?;
    let runner_up = values
        .iter()
        .filter(|&&(l, _)| l != 6)
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    check(top - runner_up > 2.0 * NOISE, || "noise can reorder lengths".into())?;

    let mut hits = 0;
    for seed in 0..100u64 {
        let cfg = EvolutionConfig {
            master_seed: seed,
            ..EvolutionConfig::default()
        };
        let ev = Evaluator::surrogate(SurrogateSpec::length_peak(6).with_noise(NOISE, seed), CIFAR);
        let out = evolen::evolve(&cfg, space, &ev).map_err(|e| e.to_string())?;
        if out.best.individual.genome.effective_length() == 6 {
            hits += 1;
        }
    }
    check(hits >= 98, || format!("best has length 6 in {hits}/100 runs"))?;
    Ok(format!(
        "length 6 in {hits}/100 runs; oracle argmax {argmax:?}, margin {:.4}",
        top - runner_up
    ))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = root.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"evolution": {"master_seed": 31},
            "backend": {"type": "surrogate", "family": "length_peak", "peak_length": 6, "noise_scale": 0.02, "noise_seed": 31}}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = root.path().join(run);
        let out = out.to_str().unwrap();
        let cfg = config.to_str().unwrap();
        for args in [
            vec!["evolen", "length-search", cfg, "--out", out],
            vec!["evolen", "evolve", cfg, "--out", out],
        ] {
            let (mut so, mut se) = (Vec::new(), Vec::new());
            let code = evolen::cli::run(args.clone(), &mut so, &mut se);
            check(code == 0, || {
                format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&se))
            })?;
        }
        let read = |name: &str| std::fs::read(root.path().join(run).join(name)).map_err(|e| e.to_string());
        outputs.push((read("history.csv")?, read("best.json")?));
    }
    check(outputs[0].0 == outputs[1].0, || "history.csv differs".into())?;
    check(outputs[0].1 == outputs[1].1, || "best.json differs".into())?;
    Ok(format!(
        "history.csv ({} bytes) and best.json ({} bytes) identical",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn parameter_oracle() -> Outcome {
    let mut in_shape = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let g = random_genome(&mut rng, 8);
        let input = SHAPES[seed as usize % SHAPES.len()];
        let ours = count_params(&g, input).ok();
        let oracle = oracle_params(&g, input);
        check(ours == oracle, || {
            format!("seed {seed}: count_params {ours:?}, oracle {oracle:?}")
        })?;
        in_shape += usize::from(oracle.is_some());
    }
    check(in_shape >= 10, || {
        format!("only {in_shape} of 20 genomes fit their input")
    })?;
    Ok(format!(
        "20/20 agree ({in_shape} in shape, {} out of shape)",
        20 - in_shape
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("space partitioning exactness", partition_exact),
        ("length-search recovery", length_search_recovery),
        ("out-of-shape candidates score zero", out_of_shape_candidates),
        ("GA invariants under a full default run", ga_invariants),
        ("optimization sanity on length_peak(6)", optimization_sanity),
        ("determinism of cmd_evolve outputs", determinism),
        ("parameter-count oracle", parameter_oracle),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
