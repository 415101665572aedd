use clarep_core::cadistill::{
    evaluate, pgd_attack, train_student, AttackConfig, BayesRule, ClaRepPool, DistillConfig, StudentArch,
    StudentModel,
};
use clarep_core::clarid::ClaRepBundle;
use clarep_core::numerics::{stream, Matrix, Rng};
use clarep_core::toy_data::sample_dataset;
use proptest::prelude::*;

fn bundle(id: usize, cond: usize) -> ClaRepBundle {
    ClaRepBundle {
        seed_sample_id: id,
        t_e: 100,
        k: 1,
        latent: [0.0, 0.0],
        canonical_sample: [cond as f64 * 4.0, 0.0],
        canonical_feature: vec![id as f64; 3],
        cond,
    }
}

#[test]
fn pool_draws_are_uniform_per_class() {
    let sizes = [7usize, 5];
    let mut bundles = Vec::new();
    let mut id = 0;
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            bundles.push(bundle(id, c));
            id += 1;
        }
    }
    let pool = ClaRepPool::from_bundles(bundles, 2).unwrap();
    let draws = 100_000;
    let mut rng = Rng::new(17);
    for (c, &n) in sizes.iter().enumerate() {
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..draws {
            let b = pool.sample(c, &mut rng).unwrap();
            assert_eq!(b.cond, c);
            *counts.entry(b.seed_sample_id).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), n);
        let p = 1.0 / n as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for (&k, &v) in &counts {
            let z = (v as f64 - draws as f64 * p) / sd;
            assert!(z.abs() <= 3.0, "class {c} entry {k}: {v} draws, z = {z}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pgd_stays_in_the_ball_after_every_step(
        eps in 0.01f64..0.5,
        step_frac in 0.1f64..2.0,
        steps in 1usize..=5,
        random_start in any::<bool>(),
        sharpness in 0.1f64..5.0,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let x = Matrix::from_vec(8, 2, (0..16).map(|_| rng.uniform_range(-1.0, 5.0)).collect()).unwrap();
        let y: Vec<usize> = (0..8).map(|_| rng.below(2)).collect();
        let clf = BayesRule { sharpness };
        // With a fixed rng, an s-step run is the first s steps of any longer run.
        for s in 1..=steps {
            let atk = AttackConfig { epsilon: eps, steps: s, step_size: step_frac * eps, random_start };
            let adv = pgd_attack(&clf, &x, &y, &atk, &mut Rng::new(seed ^ 1)).unwrap();
            for (a, x0) in adv.data().iter().zip(x.data()) {
                prop_assert!(*a >= x0 - eps && *a <= x0 + eps);
                prop_assert!((a - x0).abs() <= eps + 1e-9);
            }
        }
    }
}

#[test]
fn pgd_on_a_student_respects_the_ball() {
    let mut rng = Rng::new(2);
    let student = StudentModel::new(StudentArch::default(), &mut rng);
    let x = Matrix::from_vec(64, 2, (0..128).map(|_| rng.uniform_range(-1.0, 5.0)).collect()).unwrap();
    let y: Vec<usize> = (0..64).map(|_| rng.below(2)).collect();
    let atk = AttackConfig::default();
    let adv = pgd_attack(&student, &x, &y, &atk, &mut rng).unwrap();
    for (a, x0) in adv.data().iter().zip(x.data()) {
        assert!((a - x0).abs() <= atk.epsilon + 1e-9);
    }
}

#[test]
fn untrained_students_are_at_chance() {
    let test = sample_dataset(2000, &mut Rng::new(0).split(stream::EVAL)).unwrap();
    let (x, y) = (test.points(), test.labels());
    let inits = 1000;
    let mut rng = Rng::new(9);
    let mean: f64 = (0..inits)
        .map(|_| {
            let s = StudentModel::new(StudentArch::default(), &mut rng);
            evaluate("untrained", &s, &x, &y, None, &mut rng).unwrap().clean_accuracy
        })
        .sum::<f64>()
        / inits as f64;
    assert!((mean - 0.5).abs() <= 0.05, "mean untrained accuracy {mean}");
}

#[test]
fn vanilla_student_learns_the_toy_task() {
    let rng = Rng::new(0);
    let train = sample_dataset(1000, &mut rng.split(stream::DATA)).unwrap();
    let test = sample_dataset(2000, &mut rng.split(stream::EVAL)).unwrap();
    let (s, log) = train_student(&train, None, StudentArch::default(), &DistillConfig::vanilla(), &rng).unwrap();
    assert!(log.epochs.iter().all(|e| e.align.is_none() && e.dist.is_none()));
    let r = evaluate("vanilla", &s, &test.points(), &test.labels(), None, &mut rng.split(stream::ATTACK)).unwrap();
    assert!(r.clean_accuracy >= 0.95, "clean accuracy {}", r.clean_accuracy);
}
