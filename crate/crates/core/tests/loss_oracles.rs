use clarep_core::cadistill::{
    l_align, l_cano, l_dist, total_loss, CanonicalPart, DistillBatch, DistillConfig, StudentArch, StudentModel,
    CKA_CLAMP,
};
use clarep_core::numerics::{dot, linear_cka, Matrix, Rng};
use proptest::prelude::*;

fn unit_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        let n = dot(&v, &v).sqrt();
        m.row_mut(i).iter_mut().zip(&v).for_each(|(d, s)| *d = s / n);
    }
    m
}

fn labels(b: usize, rng: &mut Rng) -> Vec<usize> {
    (0..b).map(|_| rng.below(2)).collect()
}

/// Mean over anchors of the average negative log-softmax of each positive.
fn align_oracle(z: &Matrix, zt: &Matrix, y: &[usize], tau: f64) -> f64 {
    let b = y.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut denom = 0.0;
        for k in 0..b {
            denom += (dot(z.row(i), zt.row(k)) / tau).exp();
        }
        let mut acc = 0.0;
        let mut count = 0.0;
        for j in 0..b {
            if y[j] == y[i] {
                acc += ((dot(z.row(i), zt.row(j)) / tau).exp() / denom).ln();
                count += 1.0;
            }
        }
        total -= acc / count;
    }
    total / b as f64
}

fn cano_oracle(zt: &Matrix, y: &[usize], tau: f64) -> f64 {
    let b = y.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut denom = 0.0;
        for k in 0..b {
            if k != i {
                denom += (dot(zt.row(i), zt.row(k)) / tau).exp();
            }
        }
        let mut acc = 0.0;
        let mut count = 0.0;
        for j in 0..b {
            if j != i && y[j] == y[i] {
                acc += ((dot(zt.row(i), zt.row(j)) / tau).exp() / denom).ln();
                count += 1.0;
            }
        }
        total += if count > 0.0 { -acc / count } else { denom.ln() };
    }
    total / b as f64
}

fn every_anchor_has_partner(y: &[usize]) -> bool {
    (0..y.len()).all(|i| (0..y.len()).any(|j| j != i && y[j] == y[i]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn contrastive_losses_match_double_loop(b in 2usize..=32, d in 1usize..=8, tau in 0.05f64..1.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let z = unit_rows(b, d, &mut rng);
        let zt = unit_rows(b, d, &mut rng);
        let y = labels(b, &mut rng);
        let a = l_align(&z, &zt, &y, tau).unwrap();
        let ao = align_oracle(&z, &zt, &y, tau);
        prop_assert!((a - ao).abs() <= 1e-8 * ao.abs().max(1.0), "{} vs {}", a, ao);
        prop_assert!(a >= 0.0);
        let c = l_cano(&zt, &y, tau).unwrap();
        let co = cano_oracle(&zt, &y, tau);
        prop_assert!((c - co).abs() <= 1e-8 * co.abs().max(1.0), "{} vs {}", c, co);
        if every_anchor_has_partner(&y) {
            prop_assert!(c >= 0.0);
        }
    }

    #[test]
    fn dist_recombines_from_linear_cka(b in 3usize..=32, d in 1usize..=8, dt in 1usize..=10, lambda in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let gauss = |r: usize, c: usize, rng: &mut Rng| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap();
        let z = gauss(b, d, &mut rng);
        let zt = gauss(b, d, &mut rng);
        let a = gauss(b, dt, &mut rng);
        let v = l_dist(&z, &zt, &a, lambda).unwrap();
        let term = |x: &Matrix| (1.0 - linear_cka(x, &a).unwrap().min(CKA_CLAMP)).ln();
        let want = lambda * term(&z) + (1.0 - lambda) * term(&zt);
        prop_assert!((v - want).abs() <= 1e-10, "{} vs {}", v, want);
        prop_assert!(v <= 0.0);
    }

    #[test]
    fn lambdas_only_rescale_the_total(
        lcs in 0.0f64..2.0, lcf in 0.0f64..=1.0, ldist in 0.0f64..2.0, lcka in 0.0f64..=1.0, seed in any::<u64>()
    ) {
        let mut rng = Rng::new(seed);
        let student = StudentModel::new(StudentArch { hidden: 16, ..Default::default() }, &mut rng);
        let b = 12;
        let gauss = |r: usize, c: usize, rng: &mut Rng| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap();
        let batch = DistillBatch {
            x: gauss(b, 2, &mut rng),
            labels: labels(b, &mut rng),
            canonical: Some(CanonicalPart { x: gauss(b, 2, &mut rng), features: gauss(b, 5, &mut rng) }),
        };
        let cfg = DistillConfig { lambda_cs: lcs, lambda_cf: lcf, lambda_dist: ldist, lambda_cka: lcka, ..Default::default() };
        let (l, _) = total_loss(&student, &batch, &cfg).unwrap();
        let (align, cano, dist) = (l.align.unwrap(), l.cano.unwrap(), l.dist.unwrap());
        let want = l.cls + lcs * (lcf * align + (1.0 - lcf) * cano) + ldist * dist;
        prop_assert!((l.total - want).abs() <= 1e-12 * want.abs().max(1.0));
        prop_assert!(l.cls >= 0.0 && align >= 0.0);
        // Component values do not depend on the weights combining them.
        let (base, _) = total_loss(&student, &batch, &DistillConfig { lambda_cka: lcka, ..Default::default() }).unwrap();
        prop_assert_eq!(base.align, l.align);
        prop_assert_eq!(base.cano, l.cano);
        prop_assert_eq!(base.cls, l.cls);
    }
}
