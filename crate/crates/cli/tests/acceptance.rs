//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use signalbench_core::controllers::a2c::a2c_train;
use signalbench_core::controllers::dqn::{dqn_train, q_target, DqnTrainResult};
use signalbench_core::controllers::monopoly::{monopoly_best_action, MonopolyObservation};
use signalbench_core::controllers::{A2cAgent, A2cConfig, Controller, DqnAgent, DqnConfig, Monopoly, MonopolyConfig, RoundRobin};
use signalbench_core::metrics::{fraction_above_half, total_wait, write_step_csv, EpisodeLog};
use signalbench_core::nn::{Activation, Dense, Mlp};
use signalbench_core::runner::{run_episode, run_episode_observed, EpisodeMeta};
use signalbench_core::sim::{Arm, Movement, PhaseKind, TurnKind};
use signalbench_core::traffic::{generate_routes, sample_movements, scenario_probabilities};
use signalbench_core::{GenConfig, RoutePlan, Scenario, SimConfig};

const EVAL_SEEDS: [u64; 5] = [100, 101, 102, 103, 104];
const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Default)]
struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} [{id}] {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed += 1;
        }
    }

    fn skip(&mut self, id: &str, detail: String) {
        println!("SKIP [{id}] {detail}");
    }
}

fn routes(scen: Scenario, seed: u64) -> RoutePlan {
    generate_routes(&GenConfig { seed, ..GenConfig::default() }, scen).unwrap()
}

fn episode(c: &mut dyn Controller, name: &str, scen: Scenario, seed: u64) -> EpisodeLog {
    run_episode(&SimConfig::default(), &routes(scen, seed), c, EpisodeMeta::new(name, scen, seed)).unwrap()
}

struct Trained {
    dqn: Mlp,
    a2c: Mlp,
}

impl Trained {
    /// Fresh evaluation controller of every kind, in a fixed order.
    fn controllers(&self, seed: u64) -> Vec<(&'static str, Box<dyn Controller>)> {
        vec![
            ("rr", Box::new(RoundRobin::default())),
            ("monopoly", Box::new(Monopoly::new(MonopolyConfig::default()))),
            ("dqn", Box::new(DqnAgent::greedy(self.dqn.clone(), DqnConfig::default(), seed))),
            ("a2c", Box::new(A2cAgent::greedy(self.a2c.clone(), A2cConfig::default(), seed))),
        ]
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_fraction(mut make: impl FnMut(u64) -> Box<dyn Controller>, scen: Scenario) -> f64 {
    let fr: Vec<f64> = EVAL_SEEDS
        .iter()
        .map(|&s| fraction_above_half(&episode(make(s).as_mut(), "x", scen, s)).unwrap())
        .collect();
    mean(&fr)
}

fn conservation(r: &mut Report, trained: &Trained) {
    let started = Instant::now();
    let mut violations = 0usize;
    let mut episodes = 0;
    for scen in Scenario::ALL {
        for seed in [7, 8, 9] {
            for (name, mut c) in trained.controllers(seed) {
                run_episode_observed(&SimConfig::default(), &routes(scen, seed), c.as_mut(), EpisodeMeta::new(name, scen, seed), |sim, _| {
                    if sim.spawned_total() != sim.departed_total() + sim.vehicles_on_network() as u64 {
                        violations += 1;
                    }
                })
                .unwrap();
                episodes += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    r.check(
        "1",
        violations == 0 && secs < 5.0,
        format!("conservation over {episodes} episodes x 5400 steps: {violations} violations, {secs:.2}s (limit 5s)"),
    );
}

fn determinism(r: &mut Report, trained: &Trained) {
    let mut differing = Vec::new();
    for scen in Scenario::ALL {
        let bytes = || -> Vec<Vec<u8>> {
            trained
                .controllers(5)
                .into_iter()
                .map(|(name, mut c)| {
                    let mut buf = Vec::new();
                    write_step_csv(&episode(c.as_mut(), name, scen, 5), &mut buf).unwrap();
                    buf
                })
                .collect()
        };
        let (a, b) = (bytes(), bytes());
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if x != y {
                differing.push(format!("{}:{scen}", trained.controllers(0)[i].0));
            }
        }
    }
    r.check("2", differing.is_empty(), format!("repeat eval step CSVs byte-identical for 4 controllers x 3 scenarios; differing: {differing:?}"));
}

fn route_statistics(r: &mut Report) {
    let started = Instant::now();
    let n = 100_000;
    let critical = ChiSquared::new(11.0).unwrap().inverse_cdf(0.99);
    let mut stats = Vec::new();
    for scen in Scenario::ALL {
        let dist = scenario_probabilities(scen);
        let draws = sample_movements(scen, n, 31 + scen.number() as u64);
        let mut counts = std::collections::HashMap::new();
        for m in &draws {
            *counts.entry(*m).or_insert(0usize) += 1;
        }
        let chi2: f64 = Movement::all()
            .map(|m| {
                let e = dist.probability(m) * n as f64;
                (counts.get(&m).copied().unwrap_or(0) as f64 - e).powi(2) / e
            })
            .sum();
        stats.push(chi2);
    }
    let draws = sample_movements(Scenario::Scen1, n, 77);
    let straight = draws.iter().filter(|m| m.kind() == TurnKind::Straight).count() as f64 / n as f64;
    let secs = started.elapsed().as_secs_f64();
    let pass = stats.iter().all(|&c| c < critical) && (straight - 0.75).abs() <= 0.01 && secs < 2.0;
    r.check(
        "3",
        pass,
        format!("chi2 per scenario {stats:.2?} vs critical {critical:.2} (df 11, alpha 0.01); SCEN-1 straight {straight:.4} (0.75 +- 0.01); {secs:.2}s"),
    );
}

fn bellman_oracle(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let reward: f64 = rng.gen_range(-100.0..100.0);
        let gamma: f64 = rng.gen_range(0.0..1.0);
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut best = q[0];
        for &v in &q[1..] {
            if v > best {
                best = v;
            }
        }
        let expected = reward + gamma * best;
        worst = worst.max((q_target(reward, gamma, &q) - expected).abs());
    }
    let hand = q_target(1.0, 0.75, &[2.0, 1.0, 0.0, -1.0]);
    r.check("4", worst <= 1e-12 && hand == 2.5, format!("q_target vs scalar recomputation on 1000 triples: max |err| {worst:e}; hand case {hand}"));
}

fn monopoly_oracle(r: &mut Report) {
    let cfg = MonopolyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut saturation_failures = 0;
    for _ in 0..10_000 {
        let s: f64 = rng.gen_range(0.0..240.0);
        let v: f64 = rng.gen_range(0.1..13.89);
        let got = monopoly_best_action(MonopolyObservation { queue_meters: s, speed: v }, &cfg);
        let mut best = (f64::INFINITY, 0);
        for a in (5..=60).step_by(5) {
            let d = (s - v * a as f64).abs();
            if d < best.0 || (d == best.0 && a > best.1) {
                best = (d, a);
            }
        }
        if got != best.1 {
            mismatches += 1;
        }
        let sat_s = 60.0 * v + rng.gen_range(0.0..100.0);
        if monopoly_best_action(MonopolyObservation { queue_meters: sat_s, speed: v }, &cfg) != 60 {
            saturation_failures += 1;
        }
    }
    r.check(
        "5",
        mismatches == 0 && saturation_failures == 0,
        format!("monopoly_best_action vs brute force on 10^4 pairs: {mismatches} mismatches; saturation violations {saturation_failures}"),
    );
}

fn act(z: &mut Array2<f64>, a: Activation) {
    match a {
        Activation::Linear => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Softmax => {
            for mut row in z.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - m).exp());
                let sum = row.sum();
                row /= sum;
            }
        }
    }
}

/// Central differences (h = 1e-5) of `c · net(x)` for every parameter.
/// All perturbations of one layer go through the rest of the net as a batch.
fn numeric_gradient(layers: &[Dense], x: &[f64], c: &[f64]) -> Vec<f64> {
    const H: f64 = 1e-5;
    let mut inputs = vec![Array1::from(x.to_vec())];
    let mut pre = Vec::new();
    for l in layers {
        let z = l.weights.dot(inputs.last().unwrap()) + &l.bias;
        let mut a = z.clone().insert_axis(Axis(0));
        act(&mut a, l.activation);
        pre.push(z);
        inputs.push(a.row(0).to_owned());
    }
    let c = Array1::from(c.to_vec());
    let mut grad = Vec::new();
    for (li, l) in layers.iter().enumerate() {
        let (out, inp) = l.weights.dim();
        let n = out * inp + out;
        let mut z = Array2::zeros((2 * n, out));
        z.rows_mut().into_iter().for_each(|mut r| r.assign(&pre[li]));
        for p in 0..n {
            let (i, shift) = if p < out * inp { (p / inp, H * inputs[li][p % inp]) } else { (p - out * inp, H) };
            z[[2 * p, i]] += shift;
            z[[2 * p + 1, i]] -= shift;
        }
        act(&mut z, l.activation);
        for next in &layers[li + 1..] {
            z = z.dot(&next.weights.t()) + &next.bias;
            act(&mut z, next.activation);
        }
        let loss = z.dot(&c);
        grad.extend((0..n).map(|p| (loss[2 * p] - loss[2 * p + 1]) / (2.0 * H)));
    }
    grad
}

/// Smallest |pre-activation| over the ReLU layers at `x`. Central differences
/// are only valid when no unit sits within the perturbation of its kink.
fn kink_distance(layers: &[Dense], x: &[f64]) -> f64 {
    let mut a = Array1::from(x.to_vec());
    let mut min = f64::INFINITY;
    for l in layers.iter().filter(|l| l.activation == Activation::Relu) {
        let z = l.weights.dot(&a) + &l.bias;
        min = z.iter().fold(min, |m, v| m.min(v.abs()));
        a = z.mapv(|v| v.max(0.0));
    }
    min
}

/// Inputs closer than this to a ReLU kink are redrawn before differencing.
const KINK_MARGIN: f64 = 1e-3;

fn gradient_check(r: &mut Report) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut redraws = 0;
    for seed in 0..20 {
        let net = Mlp::new(&DqnConfig::default().layer_sizes(), 1000 + seed).unwrap();
        let x = loop {
            let x: Vec<f64> = (0..36).map(|_| if rng.gen::<bool>() { 1.0 } else { rng.gen_range(-1.0..1.0) }).collect();
            if kink_distance(net.layers(), &x) >= KINK_MARGIN {
                break x;
            }
            redraws += 1;
        };
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward_batch(Array2::from_shape_vec((1, 36), x.clone()).unwrap().view()).unwrap();
        let analytic = net.backward(&cache, Array2::from_shape_vec((1, 4), c.clone()).unwrap().view()).unwrap().to_flat();
        let numeric = numeric_gradient(net.layers(), &x, &c);
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / (norm(&analytic) + norm(&numeric)));
    }
    let secs = started.elapsed().as_secs_f64();
    r.check("6", worst < 1e-4 && secs < 10.0, format!("gradient check on 20 nets 36-64x5-4: max relative error {worst:.2e} (limit 1e-4), {redraws} inputs redrawn near ReLU kinks, {secs:.2}s"));
}

fn rr_structure(r: &mut Report, trained: &Trained) {
    let expected = |step: u32| {
        let arm = Arm::ALL[(step % 132 / 33) as usize];
        if step % 33 < 30 { PhaseKind::Green(arm) } else { PhaseKind::Yellow(arm) }
    };
    let mut mismatches = 0;
    for (scen, seed, empty) in [(Scenario::Scen1, 0, true), (Scenario::Scen2, 1, false), (Scenario::Scen3, 2, false)] {
        let plan = if empty { RoutePlan::default() } else { routes(scen, seed) };
        let log = run_episode(&SimConfig::default(), &plan, &mut RoundRobin::default(), EpisodeMeta::new("rr", scen, seed)).unwrap();
        mismatches += log.records.iter().filter(|rec| rec.phase != expected(rec.step)).count();
    }
    let mut queued = Vec::new();
    for (name, mut c) in trained.controllers(0) {
        let log = run_episode(&SimConfig::default(), &RoutePlan::default(), c.as_mut(), EpisodeMeta::new(name, Scenario::Scen1, 0)).unwrap();
        if log.records.iter().any(|rec| rec.total_queue != 0) {
            queued.push(name);
        }
    }
    r.check(
        "7",
        mismatches == 0 && queued.is_empty(),
        format!("RR phase stream vs 132-step cycle under empty/SCEN-2/SCEN-3 traffic: {mismatches} mismatched steps; controllers queueing on empty roads: {queued:?}"),
    );
}

fn moving_average_drop(totals: &[f64]) -> (f64, f64) {
    (mean(&totals[..10]), mean(&totals[totals.len() - 10..]))
}

fn main() {
    let mut r = Report::default();
    println!("acceptance: training DQN on {} seeds and A2C (1 and 4 workers) on {} seeds", TRAIN_SEEDS.len(), TRAIN_SEEDS.len());

    route_statistics(&mut r);
    bellman_oracle(&mut r);
    monopoly_oracle(&mut r);
    gradient_check(&mut r);

    // Serialization round trip.
    {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = Mlp::new(&DqnConfig::default().layer_sizes(), 12).unwrap();
        net.save(&path).unwrap();
        let back = Mlp::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let identical = (0..100).all(|_| {
            let x: Vec<f64> = (0..36).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (a, b) = (net.forward(&x).unwrap(), back.forward(&x).unwrap());
            a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits())
        });
        r.check("11", identical, "save/load forward outputs bit-identical on 100 random inputs".into());
    }

    // DQN training, reused by criteria 1, 2, 7, 8 and 9.
    let mut dqn_runs: Vec<(DqnTrainResult, f64)> = Vec::new();
    for &seed in &TRAIN_SEEDS {
        let t = Instant::now();
        let result = dqn_train(&DqnConfig::default(), &SimConfig::default(), &GenConfig::default(), seed).unwrap();
        dqn_runs.push((result, t.elapsed().as_secs_f64()));
    }

    // A2C training with 1 and 4 workers per seed.
    let mut a2c_runs = Vec::new();
    for &seed in &TRAIN_SEEDS {
        let one = a2c_train(&A2cConfig::default(), &SimConfig::default(), &GenConfig::default(), seed).unwrap();
        let four = a2c_train(&A2cConfig { n_workers: 4, ..A2cConfig::default() }, &SimConfig::default(), &GenConfig::default(), seed).unwrap();
        a2c_runs.push((one, four));
    }

    let trained = Trained { dqn: dqn_runs[0].0.qnet.clone(), a2c: a2c_runs[0].0.net.clone() };
    conservation(&mut r, &trained);
    determinism(&mut r, &trained);
    rr_structure(&mut r, &trained);

    // Heavy scenarios should congest RR; the adaptive controllers should do better.
    let rr = |scen| mean_fraction(|_| Box::new(RoundRobin::default()), scen);
    let (rr1, rr2, rr3) = (rr(Scenario::Scen1), rr(Scenario::Scen2), rr(Scenario::Scen3));
    r.check(
        "8a",
        rr2 - rr1 >= 0.15 && rr3 - rr1 >= 0.15,
        format!("RR fraction_above_half SCEN-1 {rr1:.3}, SCEN-2 {rr2:.3}, SCEN-3 {rr3:.3} (each heavy scenario >= SCEN-1 + 0.15)"),
    );
    let mono2 = mean_fraction(|_| Box::new(Monopoly::new(MonopolyConfig::default())), Scenario::Scen2);
    r.check("8b", rr2 - mono2 >= 0.10, format!("MONOPOLY SCEN-2 {mono2:.3} vs RR SCEN-2 {rr2:.3} (need a gap >= 0.10)"));
    let dqn2 = mean_fraction(|s| Box::new(DqnAgent::greedy(trained.dqn.clone(), DqnConfig::default(), s)), Scenario::Scen2);
    let dqn_secs = dqn_runs[0].1;
    r.check(
        "8c",
        dqn2 < rr2 && dqn_secs <= 900.0,
        format!("trained DQN SCEN-2 {dqn2:.3} vs RR SCEN-2 {rr2:.3}; 100-episode training took {dqn_secs:.0}s (limit 900s)"),
    );

    let improved: Vec<(u64, f64, f64)> = TRAIN_SEEDS
        .iter()
        .zip(&dqn_runs)
        .map(|(&seed, (run, _))| {
            let totals: Vec<f64> = run.curve.iter().map(|e| e.total_wait as f64).collect();
            let (first, last) = moving_average_drop(&totals);
            (seed, first, last)
        })
        .collect();
    let wins = improved.iter().filter(|(_, f, l)| l < f).count();
    r.check(
        "9",
        wins >= 2,
        format!(
            "DQN 10-episode mean total_wait first vs last window: {}; improved on {wins}/3 seeds (need 2)",
            improved.iter().map(|(s, f, l)| format!("seed {s}: {f:.0} -> {l:.0}")).collect::<Vec<_>>().join(", ")
        ),
    );

    let a2c2 = mean_fraction(|s| Box::new(A2cAgent::greedy(trained.a2c.clone(), A2cConfig::default(), s)), Scenario::Scen2);
    r.check("10a", a2c2 < rr2, format!("A2C (1 worker) SCEN-2 {a2c2:.3} vs RR SCEN-2 {rr2:.3}"));

    let sps1 = mean(&a2c_runs.iter().map(|(one, _)| one.steps_per_sec).collect::<Vec<_>>());
    let sps4 = mean(&a2c_runs.iter().map(|(_, four)| four.steps_per_sec).collect::<Vec<_>>());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let ratio = sps4 / sps1;
    let detail = format!("A2C env-steps/s 4 workers {sps4:.0} vs 1 worker {sps1:.0}: ratio {ratio:.2} (need >= 1.5)");
    if cores >= 4 {
        r.check("10b", ratio >= 1.5, detail);
    } else {
        r.skip("10b", format!("{detail}; only {cores} core(s) available, criterion applies on >= 4 cores"));
    }

    let eval_wait = |net: &Mlp| {
        let waits: Vec<f64> = Scenario::ALL
            .iter()
            .flat_map(|&scen| {
                EVAL_SEEDS[..3].iter().map(move |&s| {
                    let mut agent = A2cAgent::greedy(net.clone(), A2cConfig::default(), s);
                    total_wait(&episode(&mut agent, "a2c", scen, s)).unwrap() as f64
                })
            })
            .collect();
        mean(&waits)
    };
    let w1 = mean(&a2c_runs.iter().map(|(one, _)| eval_wait(&one.net)).collect::<Vec<_>>());
    let w4 = mean(&a2c_runs.iter().map(|(_, four)| eval_wait(&four.net)).collect::<Vec<_>>());
    r.check("10c", w4 <= 1.1 * w1, format!("A2C eval total_wait 4 workers {w4:.0} vs 1 worker {w1:.0}: ratio {:.3} (limit 1.1)", w4 / w1));

    println!("acceptance: {} failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
