mod common;

use adforest::adf::{AdfParams, AdfState, AfAction, ForestRole, TfAction};
use adforest::rng::substream;
use common::RandomTask;
use proptest::prelude::*;
use rand::Rng;

fn noisy_stream(seed: u64, len: usize) -> (RandomTask, Vec<adforest::dataset::Batch>) {
    let mut rng = substream(seed, "controller", 0);
    let task = RandomTask::new(&mut rng);
    let batches = (0..len)
        .map(|b| {
            let noise = rng.gen_range(0.0..0.7);
            task.batch(&mut rng, 120, noise, b as u64 + 1)
        })
        .collect();
    (task, batches)
}

fn small(seed: u64, lambda: u32, gamma: usize, theta: f64) -> AdfParams {
    let mut p = AdfParams { seed, lambda, gamma, theta, ensemble_size: 3, ..AdfParams::default() };
    p.induction.min_leaf_size = 5;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn counters_and_window_stay_bounded(
        seed in any::<u64>(), lambda in 1u32..4, gamma in 1usize..5, theta in 0.0f64..0.6
    ) {
        let (_, batches) = noisy_stream(seed, 10);
        let mut adf = AdfState::new(small(seed, lambda, gamma, theta)).unwrap();
        for (i, b) in batches.iter().enumerate() {
            let before = adf.cdf;
            let r = adf.learn(b).unwrap();
            prop_assert_eq!(adf.batches_seen, i as u64 + 1);
            prop_assert!(adf.pf.is_some() && adf.af.is_some());
            prop_assert!(r.window_len <= gamma && adf.window.len() <= gamma);
            prop_assert_eq!(r.cdf, adf.cdf);
            if i > 0 {
                prop_assert!(r.theta_p.is_some());
                match r.af {
                    AfAction::Repaired => prop_assert_eq!(r.cdf, 0),
                    AfAction::Replaced => {
                        prop_assert!(before + 1 > lambda);
                        prop_assert!(adf.tf.is_none());
                    }
                    _ => prop_assert_eq!(r.cdf, before + 1),
                }
            }
            if r.recommendation == ForestRole::Tf {
                prop_assert!(adf.tf.is_some());
            }
        }
    }

    #[test]
    fn without_temporary_forest_af_is_only_repaired(seed in any::<u64>()) {
        let (_, batches) = noisy_stream(seed, 6);
        let mut p = small(seed, 1, 3, 0.0);
        p.temporary_forest = false;
        let mut adf = AdfState::new(p).unwrap();
        for b in &batches {
            let r = adf.learn(b).unwrap();
            prop_assert!(adf.tf.is_none() && adf.window.is_empty());
            prop_assert_eq!(r.cdf, 0);
            prop_assert!(r.af != AfAction::Replaced);
            prop_assert_eq!(r.tf, TfAction::Untouched);
        }
    }
}

#[test]
fn learning_is_pure_and_checkpoints_resume() {
    let (_, batches) = noisy_stream(11, 8);
    let mut a = AdfState::new(small(11, 2, 3, 0.3)).unwrap();
    for b in &batches[..4] {
        a.learn(b).unwrap();
    }
    let restored = AdfState::from_checkpoint(&a.to_checkpoint().unwrap()).unwrap();
    assert_eq!(restored, a);
    let mut b = restored;
    for batch in &batches[4..] {
        let (next, report) = a.learn_batch(batch).unwrap();
        let (again, same) = a.learn_batch(batch).unwrap();
        assert_eq!(next, again);
        assert_eq!(report, same);
        a = next;
        assert_eq!(b.learn(batch).unwrap(), report);
    }
    assert_eq!(a.to_checkpoint().unwrap(), b.to_checkpoint().unwrap());
}

#[test]
fn untrained_state_refuses_to_predict() {
    let (task, batches) = noisy_stream(3, 1);
    let adf = AdfState::new(small(3, 1, 1, 0.4)).unwrap();
    assert!(!adf.is_trained());
    assert!(adf.predict(&batches[0].records[0].unlabeled()).is_err());
    let _ = task;
}

#[test]
fn bad_parameters_are_rejected() {
    for p in [
        AdfParams { gamma: 0, ..AdfParams::default() },
        AdfParams { ensemble_size: 0, ..AdfParams::default() },
        AdfParams { theta: 1.5, ..AdfParams::default() },
        AdfParams { epsilon: -0.1, ..AdfParams::default() },
    ] {
        assert!(AdfState::new(p).is_err());
    }
}
