use proptest::prelude::*;
use slogan_core::datasets::make_synthetic_8gauss;
use slogan_core::metrics::{
    ari, assign_cluster, evaluate, frechet_distance, icfid, mean_cov, nmi, EvalOptions, Partition,
};
use slogan_core::numerics::{Mat, Rng};
use slogan_core::trainer::{TrainConfig, TrainState};
use slogan_core::Error;

fn labels(k: usize, n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

proptest! {
    #[test]
    fn relabeling_leaves_scores_unchanged(a in labels(4, 60), b in labels(5, 60), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let perm_a = rng.permutation(4);
        let perm_b = rng.permutation(5);
        let pa = Partition::new(a.clone(), 4).unwrap();
        let pb = Partition::new(b.clone(), 5).unwrap();
        let qa = Partition::new(a.iter().map(|&l| perm_a[l]).collect(), 4).unwrap();
        let qb = Partition::new(b.iter().map(|&l| perm_b[l]).collect(), 5).unwrap();
        let (r0, r1) = (ari(&pa, &pb).unwrap(), ari(&qa, &qb).unwrap());
        prop_assert!((r0 - r1).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&r0));
        let (n0, n1) = (nmi(&pa, &pb).unwrap(), nmi(&qa, &qb).unwrap());
        prop_assert!((n0 - n1).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&n0));
    }

    #[test]
    fn cluster_probabilities_ignore_encoding_scale(
        e in prop::collection::vec(-2.0f64..2.0, 3),
        mu in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 4),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(e.iter().any(|v| v.abs() > 0.1));
        prop_assume!(mu.iter().all(|m| m.iter().any(|v| v.abs() > 0.1)));
        let (p, h) = assign_cluster(&e, &mu).unwrap();
        let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
        let (q, g) = assign_cluster(&scaled, &mu).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(h, g);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_self(seed in any::<u64>(), d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let mut draw = |shift: f64| -> (Vec<f64>, Mat) {
            let s: Vec<Vec<f64>> = (0..20).map(|_| (0..d).map(|_| shift + rng.normal()).collect()).collect();
            mean_cov(&s, 0).unwrap()
        };
        let (m1, c1) = draw(0.0);
        let (m2, c2) = draw(1.0);
        let ab = frechet_distance(&m1, &c1, &m2, &c2).unwrap();
        let ba = frechet_distance(&m2, &c2, &m1, &c1).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(frechet_distance(&m1, &c1, &m1, &c1).unwrap().abs() < 1e-9);
    }

    #[test]
    fn frechet_matches_one_dimensional_closed_form(m1 in -3.0f64..3.0, m2 in -3.0f64..3.0, s1 in 0.1f64..3.0, s2 in 0.1f64..3.0) {
        let d = frechet_distance(&[m1], &Mat::from_diag(&[s1 * s1]), &[m2], &Mat::from_diag(&[s2 * s2])).unwrap();
        prop_assert!((d - ((m1 - m2).powi(2) + (s1 - s2).powi(2))).abs() < 1e-10);
    }

    #[test]
    fn icfid_follows_cluster_permutations(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let real: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|g| (0..30).map(|_| vec![2.0 * g as f64 + rng.normal(), rng.normal()]).collect())
            .collect();
        let gen: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|g| (0..30).map(|_| vec![2.0 * g as f64 + 0.3 + rng.normal(), rng.normal()]).collect())
            .collect();
        let perm = rng.permutation(4);
        let permuted: Vec<Vec<Vec<f64>>> = perm.iter().map(|&p| gen[p].clone()).collect();
        let a = icfid(&real, &gen).unwrap();
        let b = icfid(&real, &permuted).unwrap();
        prop_assert!((a.icfid - b.icfid).abs() < 1e-12);
        for y in 0..4 {
            prop_assert_eq!(perm[b.assignment[y]], a.assignment[y]);
        }
        let mut seen = a.assignment.clone();
        seen.sort();
        prop_assert_eq!(seen, vec![0, 1, 2, 3]);
        let mean = a.per_class.iter().map(|m| m.fid).sum::<f64>() / 4.0;
        prop_assert!((mean - a.icfid).abs() < 1e-12);
    }
}

#[test]
fn random_partitions_have_zero_mean_ari() {
    let mut rng = Rng::new(11);
    let mut total = 0.0;
    for _ in 0..100 {
        let a: Vec<usize> = (0..1000).map(|_| rng.below(4)).collect();
        let b: Vec<usize> = (0..1000).map(|_| rng.below(4)).collect();
        total += ari(&Partition::new(a, 4).unwrap(), &Partition::new(b, 4).unwrap()).unwrap();
    }
    assert!((total / 100.0).abs() < 0.02, "mean ARI {}", total / 100.0);
}

#[test]
fn untrained_state_evaluates() {
    let ds = make_synthetic_8gauss(0, &[40; 8]).unwrap();
    let cfg = TrainConfig { k: 8, latent_dim: 4, hidden: 8, batch_b: 8, ..TrainConfig::default() };
    let st = TrainState::new(cfg, 2).unwrap();
    let opts = EvalOptions { n_gen_per_cluster: 20, ..EvalOptions::default() };
    let r = evaluate(&st, &ds, &opts).unwrap();
    assert!(r.fid.is_finite() && r.icfid.unwrap().is_finite());
    assert!(r.ari.unwrap().is_finite() && r.nmi.unwrap().is_finite());
    assert_eq!(r.assignment.len(), 8);
    assert_eq!(r, evaluate(&st, &ds, &opts).unwrap());
    let one = EvalOptions { n_gen_per_cluster: 1, ..opts };
    assert!(matches!(evaluate(&st, &ds, &one), Err(Error::GroupTooSmall { .. })));
}
