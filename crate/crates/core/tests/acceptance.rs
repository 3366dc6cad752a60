//! Acceptance suite. Every test prints one `[PASS]` or `[FAIL]` line, then
//! asserts the same condition.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use adforest::adf::{AdfParams, AdfState, AfAction, ForestRole, TfAction};
use adforest::dataset::{class_scenario, Attribute, Batch, Record, Schema, Value};
use adforest::evalstat::{nemenyi_cd, run_experiment, sign_test, ExperimentConfig, Method};
use adforest::geometry::{aabb_of_records, sat_split, NewSide};
use adforest::repair::{find_perturbed_leaves, leaf_confidences, perturbed_ratio};
use adforest::rng::{derive_seed, substream};
use adforest::streamgen::{
    drift_stream, generate_house_dataset, rearrange_scenarios, simulate_batches, DriftConfig,
};
use adforest::tree::{build_forest, ForestMode, InductionParams};
use common::{majorities, mean, say, serial, test_accuracy, verdict, walk, RandomTask};
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[test]
fn criterion_01_perturbation_matches_brute_force() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = substream(11, "acceptance-perturbation", 0);
    let (mut instances, mut mismatches, mut bad_ratio, mut replay_nonzero) = (0, 0, 0, 0);
    for i in 0..120u64 {
        let task = RandomTask::new(&mut rng);
        let (n_first, n_next, noise) = (rng.gen_range(40..=500), rng.gen_range(1..=500), rng.gen_range(0.0..0.6));
        let first = task.batch(&mut rng, n_first, 0.05, 1);
        let next = task.batch(&mut rng, n_next, noise, 2);
        let params = InductionParams {
            min_leaf_size: rng.gen_range(2..=20),
            rng_seed: derive_seed(11, "forest", i),
            ..InductionParams::default()
        };
        let mode = if rng.gen_bool(0.5) { ForestMode::RfStyle } else { ForestMode::SysForStyle };
        let forest = build_forest(&first, rng.gen_range(1..=5), mode, &params).unwrap();
        let epsilon = [0.0, 0.02, 0.1][rng.gen_range(0..3)];

        // Brute force: route every record by hand and count majority hits.
        let confidences = |b: &Batch| -> Vec<BTreeMap<u32, Option<f64>>> {
            forest
                .trees
                .iter()
                .map(|t| {
                    let mut maj = BTreeMap::new();
                    majorities(t.root(), &mut maj);
                    let mut tally: BTreeMap<u32, (u32, u32)> = maj.keys().map(|&id| (id, (0, 0))).collect();
                    for r in &b.records {
                        let id = walk(t.root(), r);
                        let e = tally.get_mut(&id).unwrap();
                        e.0 += 1;
                        e.1 += u32::from(r.label == Some(maj[&id]));
                    }
                    tally
                        .into_iter()
                        .map(|(id, (n, hit))| (id, (n > 0).then(|| f64::from(hit) / f64::from(n))))
                        .collect()
                })
                .collect()
        };
        let before = confidences(&first);
        let after = confidences(&next);

        let stats = leaf_confidences(&forest, &first);
        for (k, tree) in before.iter().enumerate() {
            for (id, c) in tree {
                if stats.get(k, *id).map(|s| s.confidence) != Some(*c) {
                    mismatches += 1;
                }
            }
        }
        let flags = find_perturbed_leaves(&next, &forest, epsilon, &stats).unwrap();
        let mut expected_total = 0;
        for (k, (b, a)) in before.iter().zip(&after).enumerate() {
            for (id, prev) in b {
                let want = matches!((prev, a[id]), (Some(p), Some(c)) if *p > c + epsilon);
                expected_total += usize::from(want);
                if flags.is_flagged(k, *id) != want {
                    mismatches += 1;
                }
            }
        }
        let ratio = perturbed_ratio(&flags).unwrap();
        let leaves: usize = before.iter().map(BTreeMap::len).sum();
        if !(0.0..=1.0).contains(&ratio) || flags.f_total != expected_total || flags.l_total != leaves {
            bad_ratio += 1;
        }
        let replay = find_perturbed_leaves(&first, &forest, epsilon, &stats).unwrap();
        if perturbed_ratio(&replay).unwrap() != 0.0 {
            replay_nonzero += 1;
        }
        instances += 1;
    }
    let elapsed = started.elapsed();
    let pass = mismatches == 0 && bad_ratio == 0 && replay_nonzero == 0 && elapsed < Duration::from_secs(30);
    verdict(
        1,
        "perturbation flags vs brute force",
        pass,
        &format!(
            "{instances} instances, {mismatches} mismatches, {bad_ratio} bad ratios, {replay_nonzero} non-zero replays, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_separating_axis_soundness() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = substream(12, "acceptance-sat", 0);
    let (mut pairs, mut wrong_none, mut unsound) = (0, 0, 0);
    for _ in 0..1500 {
        let dims = rng.gen_range(1..=5);
        let attrs = (0..dims).map(|j| Attribute::numeric(format!("x{j}"))).chain([Attribute::numeric("y")]);
        let schema = Schema::new(attrs.collect(), dims, vec!["a".into()]).unwrap();
        let cloud = |rng: &mut adforest::rng::StreamRng, n: usize, lo: Vec<f64>, span: f64| -> Vec<Record> {
            (0..n)
                .map(|_| {
                    let mut v: Vec<Value> = lo
                        .iter()
                        .map(|&l| Value::Num(l + (rng.gen_range(0.0..span) * 2.0).round() / 2.0))
                        .collect();
                    v.push(Value::Missing);
                    Record::new(v, Some(0))
                })
                .collect()
        };
        let lo_a: Vec<f64> = (0..dims).map(|_| rng.gen_range(0..12) as f64).collect();
        let lo_b: Vec<f64> = (0..dims).map(|_| rng.gen_range(0..12) as f64).collect();
        let (na, nb) = (rng.gen_range(1..30), rng.gen_range(1..30));
        let (sa, sb) = (rng.gen_range(0.5..6.0), rng.gen_range(0.5..6.0));
        let old = cloud(&mut rng, na, lo_a, sa);
        let new = cloud(&mut rng, nb, lo_b, sb);

        let bounds = |rs: &[Record], j: usize| {
            let xs = rs.iter().map(|r| r.values[j].as_num().unwrap());
            (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max))
        };
        let overlap_everywhere = (0..dims).all(|j| {
            let ((a0, a1), (b0, b1)) = (bounds(&old, j), bounds(&new, j));
            a0 <= b1 && b0 <= a1
        });
        let split = sat_split(&aabb_of_records(&old, &schema).unwrap(), &aabb_of_records(&new, &schema).unwrap()).unwrap();
        match split {
            None if !overlap_everywhere => wrong_none += 1,
            Some(_) if overlap_everywhere => wrong_none += 1,
            Some(s) => {
                let left = |r: &Record| r.values[s.attr_index].as_num().unwrap() <= s.split_value;
                let old_left = s.new_side == NewSide::Right;
                if !old.iter().all(|r| left(r) == old_left) || !new.iter().all(|r| left(r) != old_left) {
                    unsound += 1;
                }
            }
            None => {}
        }
        pairs += 1;
    }
    let elapsed = started.elapsed();
    let pass = wrong_none == 0 && unsound == 0 && elapsed < Duration::from_secs(10);
    verdict(
        2,
        "separating axis on random boxes",
        pass,
        &format!(
            "{pairs} pairs, {wrong_none} overlap disagreements, {unsound} unsound splits, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_ablation_on_mixed_batches() {
    let _g = serial();
    let started = Instant::now();
    let methods = [Method::AdfIsat, Method::AdfSatOnly, Method::AdfEntropyOnly];
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let data = generate_house_dataset(20_000, seed).unwrap();
        let (batches, manifest) = simulate_batches(&data, seed).unwrap();
        let steps = common::steps(&batches, &manifest);
        let config = ExperimentConfig { methods: methods.to_vec(), params: common::adf(seed) };
        let table = run_experiment(&steps, &config).unwrap();
        let mixed: Vec<usize> = (0..table.batches.len()).filter(|&i| table.batches[i].1 == "MKUC").collect();
        let m: Vec<f64> = methods
            .iter()
            .map(|meth| {
                let acc = table.accuracies(meth.name()).unwrap();
                mean(&mixed.iter().map(|&i| acc[i]).collect::<Vec<_>>())
            })
            .collect();
        say(&format!(
            "    seed {seed}: mixed-batch accuracy isat {:.4} sat-only {:.4} entropy-only {:.4}",
            m[0], m[1], m[2]
        ));
        per_seed.push(m);
    }
    let avg = |j: usize| mean(&per_seed.iter().map(|m| m[j]).collect::<Vec<_>>());
    let strict = |j: usize| per_seed.iter().filter(|m| m[0] > m[j]).count();
    let elapsed = started.elapsed();
    let pass = avg(0) >= avg(1)
        && avg(0) >= avg(2)
        && strict(1) >= 3
        && strict(2) >= 3
        && elapsed < Duration::from_secs(300);
    verdict(
        3,
        "isat >= sat-only and entropy-only on mixed batches",
        pass,
        &format!(
            "means {:.4} / {:.4} / {:.4}, strictly better on {} and {} of 5 seeds, {:.1}s",
            avg(0),
            avg(1),
            avg(2),
            strict(1),
            strict(2),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn drift_run(seed: u64, temporary_forest: bool) -> (Vec<f64>, Vec<ForestRole>) {
    let stream = drift_stream(&DriftConfig { seed, ..DriftConfig::default() }).unwrap();
    let mut adf = AdfState::new(AdfParams { temporary_forest, ..common::adf(seed) }).unwrap();
    let mut accs = Vec::new();
    let mut recs = Vec::new();
    for (train, test) in &stream {
        recs.push(adf.learn(train).unwrap().recommendation);
        accs.push(test_accuracy(&adf, test));
    }
    (accs, recs)
}

#[test]
fn criterion_04_drift_recovery() {
    let _g = serial();
    let started = Instant::now();
    let shift = DriftConfig::default().shift_at;
    let lambda = AdfParams::default().lambda as usize;
    let (mut switched, mut gaps) = (0, Vec::new());
    for seed in SEEDS {
        let (with_tf, recs) = drift_run(seed, true);
        let (without, _) = drift_run(seed, false);
        let first_tf = (shift..=shift + lambda).find(|&b| recs[b - 1] == ForestRole::Tf);
        switched += usize::from(first_tf.is_some());
        let gap = mean(&with_tf[19..34]) - mean(&without[19..34]);
        say(&format!(
            "    seed {seed}: TF recommended at batch {first_tf:?}, batches 20-34 adf {:.4} vs no-tf {:.4}",
            mean(&with_tf[19..34]),
            mean(&without[19..34])
        ));
        gaps.push(gap);
    }
    let elapsed = started.elapsed();
    let pass = switched == SEEDS.len() && mean(&gaps) >= 0.05 && elapsed < Duration::from_secs(300);
    verdict(
        4,
        "drift recovery through the temporary forest",
        pass,
        &format!(
            "switch within {} batches on {switched}/5 seeds, mean gain {:.4}, {:.1}s",
            lambda + 1,
            mean(&gaps),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_knowledge_retention() {
    let _g = serial();
    let (mut pf_acc, mut win_acc) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let data = generate_house_dataset(20_000, seed).unwrap();
        let (batches, _) = simulate_batches(&data, seed).unwrap();
        let params = common::adf(seed);
        let mut adf = AdfState::new(params.clone()).unwrap();
        for (train, _) in &batches {
            adf.learn(train).unwrap();
        }
        // Test sets of batches 1-4 were never trained on.
        let held = Batch::concat(batches[..4].iter().map(|(_, t)| t), 0).unwrap();
        let n = batches.len();
        let window = Batch::concat(batches[n - params.gamma..].iter().map(|(t, _)| t), 0).unwrap();
        let induction = InductionParams { rng_seed: derive_seed(seed, "window-forest", 0), ..params.induction };
        let fresh = build_forest(&window, params.ensemble_size, params.mode, &induction).unwrap();
        let (p, w) = (adf.pf.as_ref().unwrap().accuracy_on(&held), fresh.accuracy_on(&held));
        say(&format!("    seed {seed}: permanent forest {p:.4}, window-only forest {w:.4}"));
        pf_acc.push(p);
        win_acc.push(w);
    }
    let pass = mean(&pf_acc) >= mean(&win_acc);
    verdict(
        5,
        "permanent forest retains early batches",
        pass,
        &format!("mean accuracy on batches 1-4: permanent {:.4}, window-only {:.4}", mean(&pf_acc), mean(&win_acc)),
    );
    assert!(pass);
}

/// One class per batch, every record at the same point: each tree is a single
/// leaf and a batch with an unseen class drops every leaf's confidence to 0.
fn single_class(schema: &std::sync::Arc<Schema>, class: u32, id: u64) -> Batch {
    let records = (0..60).map(|_| Record::new(vec![Value::Num(1.0), Value::Missing], Some(class))).collect();
    Batch::new(schema.clone(), records, id).unwrap()
}

#[test]
fn criterion_06_drift_state_machine() {
    let _g = serial();
    let mut failures = Vec::new();
    for lambda in 1..=4u32 {
        let classes: Vec<String> = (0..lambda + 4).map(|c| format!("k{c}")).collect();
        let schema = std::sync::Arc::new(
            Schema::new(vec![Attribute::numeric("x"), Attribute::categorical("y", Vec::<String>::new())], 1, classes)
                .unwrap(),
        );
        let mut adf = AdfState::new(AdfParams { lambda, ..AdfParams::default() }).unwrap();
        adf.learn(&single_class(&schema, 0, 1)).unwrap();
        let mut promoted_at = None;
        let mut measured: Vec<Record> = Vec::new();
        for b in 1..=lambda + 1 {
            let r = adf.learn(&single_class(&schema, b, u64::from(b) + 1)).unwrap();
            let unrepairable = r.theta_a.unwrap() > 0.4 && r.theta_t.map_or(true, |t| t > 0.4);
            if !unrepairable {
                failures.push(format!("lambda {lambda}: batch {} was repairable", b + 1));
            }
            if r.promoted() {
                promoted_at.get_or_insert(b);
                measured = adf.window.iter().flat_map(|w| w.records.clone()).collect();
            } else if r.cdf != b {
                failures.push(format!("lambda {lambda}: cdf {} after {b} drifting batches", r.cdf));
            }
        }
        if promoted_at != Some(lambda + 1) {
            failures.push(format!("lambda {lambda}: promoted at drift count {promoted_at:?}"));
        }
        // One more drifting batch brings a temporary forest back ...
        let r = adf.learn(&single_class(&schema, lambda + 2, u64::from(lambda) + 3)).unwrap();
        if r.cdf != 1 || r.tf != TfAction::Built || adf.tf.is_none() {
            failures.push(format!("lambda {lambda}: no fresh temporary forest after promotion ({r:?})"));
        }
        // ... and replaying the window the promoted forest was measured on
        // makes it repairable, which resets the counter and drops the TF.
        let calm = Batch::new(schema.clone(), measured, 99).unwrap();
        let r = adf.learn(&calm).unwrap();
        if r.af != AfAction::Repaired || r.cdf != 0 || r.tf != TfAction::Discarded || adf.tf.is_some() {
            failures.push(format!("lambda {lambda}: repairable batch gave {r:?}"));
        }
    }
    let pass = failures.is_empty();
    verdict(
        6,
        "drift counter and promotion",
        pass,
        &if pass { "promotion exactly at cdf = lambda+1 for lambda 1..4; repairable batch resets".into() } else { failures.join("; ") },
    );
    assert!(pass, "{failures:?}");
}

#[test]
fn criterion_07_statistics() {
    let _g = serial();
    let a = sign_test(17, 8).unwrap();
    let b = sign_test(25, 0).unwrap();
    let cd_err = [1usize, 5, 34, 100, 1000]
        .iter()
        .map(|&n| (nemenyi_cd(2, n, 0.05).unwrap() - 1.960 * (1.0 / n as f64).sqrt()).abs())
        .fold(0.0, f64::max);
    let pass = a == 1.6 && b == 4.8 && cd_err < 1e-6;
    verdict(
        7,
        "sign test and Nemenyi reduction",
        pass,
        &format!("z(17,8) = {a}, z(25,0) = {b}, max |CD - 1.960/sqrt(N)| = {cd_err:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_simulation_fidelity() {
    let _g = serial();
    // Block order as published, one entry per batch.
    let expand = |plan: &[(&str, usize)]| -> Vec<String> {
        plan.iter().flat_map(|&(s, n)| std::iter::repeat(s.to_owned()).take(n)).collect()
    };
    let standard = expand(&[("MKC", 8), ("SKC", 3), ("SUC", 3), ("MUC", 8), ("MKUC", 12)]);
    let rearranged_blocks = expand(&[
        ("MKC-1", 4),
        ("MKC-2", 4),
        ("MKUC-1", 4),
        ("MKUC-2", 4),
        ("MUC-1", 4),
        ("MUC-2", 4),
        ("MKUC-3", 4),
    ]);
    let mut problems = Vec::new();
    for seed in SEEDS {
        let data = generate_house_dataset(20_000, seed).unwrap();
        let (batches, manifest) = simulate_batches(&data, seed).unwrap();
        let known: BTreeSet<_> = manifest.pools.half_classes[0].iter().copied().collect();
        let observed: Vec<String> = batches
            .iter()
            .map(|(t, _)| class_scenario(&t.class_set(), &known).unwrap().to_string())
            .collect();
        if observed != standard {
            problems.push(format!("seed {seed}: schedule {observed:?}"));
        }
        let rearranged = rearrange_scenarios(&manifest, &data, seed).unwrap();
        let blocks: Vec<String> = rearranged.batches.iter().map(|b| b.block.label().to_owned()).collect();
        if blocks != rearranged_blocks {
            problems.push(format!("seed {seed}: rearranged {blocks:?}"));
        }
        for spec in manifest.batches.iter().chain(&rearranged.batches) {
            let train: BTreeSet<_> = spec.train_rows.iter().collect();
            if spec.test_rows.iter().any(|r| train.contains(r)) {
                problems.push(format!("seed {seed}: batch {} shares rows", spec.batch_id));
            }
        }
    }
    let pass = problems.is_empty();
    verdict(
        8,
        "simulated schedules and train/test disjointness",
        pass,
        &if pass { "34-batch and 28-batch schedules exact on 5 seeds, no shared rows".into() } else { problems.join("; ") },
    );
    assert!(pass);
}

fn training_time(n: usize, trees: usize) -> f64 {
    let data = generate_house_dataset(n, 21).unwrap();
    let (batches, _) = simulate_batches(&data, 21).unwrap();
    let mut runs: Vec<f64> = (0..3)
        .map(|_| {
            let mut adf = AdfState::new(AdfParams { ensemble_size: trees, ..common::adf(21) }).unwrap();
            let t = Instant::now();
            for (train, _) in &batches {
                adf.learn(train).unwrap();
            }
            t.elapsed().as_secs_f64()
        })
        .collect();
    runs.sort_by(f64::total_cmp);
    runs[1]
}

#[test]
fn criterion_09_scaling() {
    let _g = serial();
    let base = training_time(10_000, 10);
    let double_m = training_time(10_000, 20);
    let double_n = training_time(20_000, 10);
    let (rm, rn) = (double_m / base, double_n / base);
    let pass = rm <= 2.4 && rn <= 2.4;
    verdict(
        9,
        "training time grows at most linearly",
        pass,
        &format!("base {base:.3}s, 2M x{rm:.2}, 2n x{rn:.2} (limit 2.4)"),
    );
    assert!(pass);
}

fn adf_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_adf")).args(args).env_clear().output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn criterion_10_checkpoint_resume_is_byte_identical() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let (stream, full, stopped, killed) =
        (dir.path().join("stream"), dir.path().join("full"), dir.path().join("stopped"), dir.path().join("killed"));
    assert!(adf_bin(&["simulate", "-o", path(&stream), "--seed", "5"]).status.success());
    let learn = |out: &Path, extra: &[&str]| {
        let mut args = vec!["learn", "-s", path(&stream), "-o", path(out), "--seed", "5"];
        args.extend_from_slice(extra);
        adf_bin(&args)
    };
    assert!(learn(&full, &[]).status.success());

    // Clean stop after batch 17, then resume.
    assert!(learn(&stopped, &["--stop-after", "17"]).status.success());
    let ckpt = stopped.join("checkpoint.json");
    assert!(learn(&stopped, &["--resume", path(&ckpt)]).status.success());

    // Hard kill as soon as the first checkpoint lands, then resume.
    let mut child = Command::new(env!("CARGO_BIN_EXE_adf"))
        .args(["learn", "-s", path(&stream), "-o", path(&killed), "--seed", "5"])
        .env_clear()
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let kill_ckpt = killed.join("checkpoint.json");
    let deadline = Instant::now() + Duration::from_secs(60);
    while !kill_ckpt.exists() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(1));
    }
    let _ = child.kill();
    let _ = child.wait();
    let seen = AdfState::from_checkpoint(&std::fs::read_to_string(&kill_ckpt).unwrap()).unwrap().batches_seen;
    assert!(learn(&killed, &["--resume", path(&kill_ckpt)]).status.success());

    let reference = std::fs::read(full.join("checkpoint.json")).unwrap();
    let a = std::fs::read(&ckpt).unwrap();
    let b = std::fs::read(&kill_ckpt).unwrap();
    let pass = a == reference && b == reference;
    verdict(
        10,
        "checkpoint resume",
        pass,
        &format!(
            "stop at 17 + resume identical: {}, kill after batch {seen} + resume identical: {}",
            a == reference,
            b == reference
        ),
    );
    assert!(pass);
}
