use serde::{Deserialize, Serialize};

use super::losses::{cross_entropy_tape, l_align_tape, l_cano_tape, l_dist_tape, LossBreakdown};
use super::pool::ClaRepPool;
use super::student::{StudentArch, StudentModel};
use crate::error::{invalid, Error, Result};
use crate::numerics::{stream, Adam, Matrix, Rng, Sgd, Tape};
use crate::toy_data::ToyDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgdm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub tau: f64,
    pub lambda_cs: f64,
    pub lambda_cf: f64,
    pub lambda_dist: f64,
    pub lambda_cka: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Momentum for [`OptimizerKind::Sgdm`].
    pub momentum: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda_cs: 0.4,
            lambda_cf: 0.5,
            lambda_dist: 1.0,
            lambda_cka: 0.5,
            epochs: 100,
            batch_size: 128,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
        }
    }
}

impl DistillConfig {
    /// Plain cross-entropy training.
    pub fn vanilla() -> Self {
        Self {
            lambda_cs: 0.0,
            lambda_dist: 0.0,
            ..Self::default()
        }
    }

    pub fn uses_pool(&self) -> bool {
        self.lambda_cs != 0.0 || self.lambda_dist != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tau > 0.0
            && (0.0..=1.0).contains(&self.lambda_cf)
            && (0.0..=1.0).contains(&self.lambda_cka)
            && self.lambda_cs >= 0.0
            && self.lambda_dist >= 0.0
            && self.epochs >= 1
            && self.batch_size >= 2
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid distillation config {self:?}")))
        }
    }
}

/// Training rows plus, per row, one CLARep of the same class.
#[derive(Debug, Clone)]
pub struct DistillBatch {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub canonical: Option<CanonicalPart>,
}

#[derive(Debug, Clone)]
pub struct CanonicalPart {
    /// Canonical Samples, `b x 2`.
    pub x: Matrix,
    /// Teacher Canonical Features, `b x d'`.
    pub features: Matrix,
}

/// Rows `idx` of `data`; with a pool, each row draws a same-class CLARep.
pub fn draw_distill_batch(
    data: &ToyDataset,
    idx: &[usize],
    pool: Option<&ClaRepPool>,
    rng: &mut Rng,
) -> Result<DistillBatch> {
    let x = Matrix::from_vec(idx.len(), 2, idx.iter().flat_map(|&i| data.samples[i].x).collect())?;
    let labels: Vec<usize> = idx.iter().map(|&i| data.samples[i].y).collect();
    let canonical = match pool {
        None => None,
        Some(pool) => {
            let mut xs = Vec::with_capacity(2 * idx.len());
            let mut fs = Vec::with_capacity(pool.feature_dim() * idx.len());
            for &y in &labels {
                let b = pool.sample(y, rng)?;
                xs.extend_from_slice(&b.canonical_sample);
                fs.extend_from_slice(&b.canonical_feature);
            }
            Some(CanonicalPart {
                x: Matrix::from_vec(idx.len(), 2, xs)?,
                features: Matrix::from_vec(idx.len(), pool.feature_dim(), fs)?,
            })
        }
    };
    Ok(DistillBatch { x, labels, canonical })
}

/// Total objective and its components, with gradients for
/// [`StudentModel::params_mut`].
pub fn total_loss(student: &StudentModel, batch: &DistillBatch, cfg: &DistillConfig) -> Result<(LossBreakdown, Vec<Matrix>)> {
    if batch.labels.is_empty() {
        return invalid("empty batch");
    }
    let mut tape = Tape::new();
    let vars = student.leaves(&mut tape);
    let x = tape.constant(batch.x.clone());
    let (z, logits) = vars.forward(&mut tape, x);
    let cls = cross_entropy_tape(&mut tape, logits, &batch.labels)?;
    let mut total = cls;
    let mut parts = (None, None, None);
    match &batch.canonical {
        Some(canon) => {
            let xt = tape.constant(canon.x.clone());
            let (zt, _) = vars.forward(&mut tape, xt);
            let zn = tape.normalize_rows(z);
            let ztn = tape.normalize_rows(zt);
            let align = l_align_tape(&mut tape, zn, ztn, &batch.labels, cfg.tau)?;
            let cano = l_cano_tape(&mut tape, ztn, &batch.labels, cfg.tau)?;
            let dist = l_dist_tape(&mut tape, z, zt, &canon.features, cfg.lambda_cka)?;
            let a = tape.scale(align, cfg.lambda_cs * cfg.lambda_cf);
            let c = tape.scale(cano, cfg.lambda_cs * (1.0 - cfg.lambda_cf));
            let d = tape.scale(dist, cfg.lambda_dist);
            let ac = tape.add(a, c);
            let acd = tape.add(ac, d);
            total = tape.add(cls, acd);
            parts = (
                Some(tape.value(align).item()),
                Some(tape.value(cano).item()),
                Some(tape.value(dist).item()),
            );
        }
        None if cfg.uses_pool() => {
            return Err(Error::Config("distillation weights are non-zero but no CLARep pool was given".into()));
        }
        None => {}
    }
    let mut grads = tape.backward(total)?;
    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        cls: tape.value(cls).item(),
        align: parts.0,
        cano: parts.1,
        dist: parts.2,
    };
    Ok((breakdown, vars.all().iter().map(|&v| grads.take(v)).collect()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentLog {
    /// Batch-averaged components per epoch.
    pub epochs: Vec<LossBreakdown>,
}

enum Optimizer {
    Adam(Adam),
    Sgdm(Sgd),
}

impl Optimizer {
    fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        match self {
            Optimizer::Adam(o) => o.step(params, grads),
            Optimizer::Sgdm(o) => o.step(params, grads),
        }
    }
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let avg = |f: &dyn Fn(&LossBreakdown) -> Option<f64>| -> Option<f64> {
        parts.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
    };
    LossBreakdown {
        total: parts.iter().map(|p| p.total).sum::<f64>() / n,
        cls: parts.iter().map(|p| p.cls).sum::<f64>() / n,
        align: avg(&|p| p.align),
        cano: avg(&|p| p.cano),
        dist: avg(&|p| p.dist),
    }
}

/// Mini-batch training. Initialization uses `rng.split(INIT)`, batch order
/// `rng.split(TRAIN)` and CLARep draws `rng.split(POOL)`, so vanilla and
/// distilled runs from one seed share weights at start and batch order.
/// Trailing batches with fewer than two rows are skipped.
pub fn train_student(
    data: &ToyDataset,
    pool: Option<&ClaRepPool>,
    arch: StudentArch,
    cfg: &DistillConfig,
    rng: &Rng,
) -> Result<(StudentModel, StudentLog)> {
    cfg.validate()?;
    if data.len() < 2 {
        return invalid("student training needs at least two samples");
    }
    let pool = if cfg.uses_pool() {
        let p = pool.ok_or_else(|| Error::Config("distillation weights are non-zero but no CLARep pool was given".into()))?;
        if p.num_classes() < arch.num_classes {
            return Err(Error::Config(format!("pool has no CLARep for class {}", p.num_classes())));
        }
        Some(p)
    } else {
        None
    };
    let mut student = StudentModel::new(arch, &mut rng.split(stream::INIT));
    let mut order_rng = rng.split(stream::TRAIN);
    let mut pool_rng = rng.split(stream::POOL);
    let mut opt = match cfg.optimizer {
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(cfg.lr, 0.9, 0.999, 1e-8)),
        OptimizerKind::Sgdm => Optimizer::Sgdm(Sgd::new(cfg.lr, cfg.momentum)),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = StudentLog::default();
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut parts = Vec::new();
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let batch = draw_distill_batch(data, chunk, pool, &mut pool_rng)?;
            let (b, grads) = total_loss(&student, &batch, cfg)?;
            if !b.total.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    detail: format!("loss became {}", b.total),
                });
            }
            opt.step(&mut student.params_mut(), &grads);
            parts.push(b);
        }
        if !student.params_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                detail: "parameters became non-finite".into(),
            });
        }
        log.epochs.push(mean_breakdown(&parts));
    }
    Ok((student, log))
}

impl StudentLog {
    /// `epoch,total,cls,align,cano,dist` with six decimals; absent terms
    /// are left empty.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut s = String::from("epoch,total,cls,align,cano,dist\n");
        for (i, b) in self.epochs.iter().enumerate() {
            s.push_str(&format!(
                "{i},{:.6},{:.6},{},{},{}\n",
                b.total,
                b.cls,
                f(b.align),
                f(b.cano),
                f(b.dist)
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clarid::ClaRepBundle;
    use crate::toy_data::sample_dataset;

    fn toy_pool(rng: &mut Rng) -> ClaRepPool {
        let bundles = (0..10)
            .map(|i| ClaRepBundle {
                seed_sample_id: i,
                t_e: 500,
                k: 1,
                latent: [0.0, 0.0],
                canonical_sample: [4.0 * (i % 2) as f64 + 0.05 * rng.normal(), 0.05 * rng.normal()],
                canonical_feature: (0..8).map(|_| rng.normal()).collect(),
                cond: i % 2,
            })
            .collect();
        ClaRepPool::from_bundles(bundles, 2).unwrap()
    }

    #[test]
    fn components_recombine() {
        let mut rng = Rng::new(3);
        let data = sample_dataset(32, &mut rng).unwrap();
        let pool = toy_pool(&mut rng);
        let student = StudentModel::new(StudentArch::default(), &mut rng);
        let idx: Vec<usize> = (0..16).collect();
        let batch = draw_distill_batch(&data, &idx, Some(&pool), &mut rng).unwrap();
        let cfg = DistillConfig::default();
        let (b, _) = total_loss(&student, &batch, &cfg).unwrap();
        let want = b.cls
            + cfg.lambda_cs * (cfg.lambda_cf * b.align.unwrap() + (1.0 - cfg.lambda_cf) * b.cano.unwrap())
            + cfg.lambda_dist * b.dist.unwrap();
        assert!((b.total - want).abs() < 1e-12);
        let zero = DistillConfig {
            lambda_cs: 0.0,
            lambda_dist: 0.0,
            ..cfg
        };
        let (b0, _) = total_loss(&student, &batch, &zero).unwrap();
        assert!((b0.total - b0.cls).abs() < 1e-15);
        assert!(b0.align.is_some());
    }

    #[test]
    fn missing_pool_is_config_error() {
        let data = sample_dataset(8, &mut Rng::new(0)).unwrap();
        let err = train_student(&data, None, StudentArch::default(), &DistillConfig::default(), &Rng::new(0)).unwrap_err();
        assert_eq!(err.code(), "config");
    }

    #[test]
    fn deterministic_logs() {
        let mut rng = Rng::new(5);
        let data = sample_dataset(64, &mut rng).unwrap();
        let pool = toy_pool(&mut rng);
        let cfg = DistillConfig {
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        let a = train_student(&data, Some(&pool), StudentArch::default(), &cfg, &Rng::new(1)).unwrap();
        let b = train_student(&data, Some(&pool), StudentArch::default(), &cfg, &Rng::new(1)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.epochs.len(), 3);
    }

    #[test]
    fn sgdm_runs() {
        let data = sample_dataset(64, &mut Rng::new(2)).unwrap();
        let cfg = DistillConfig {
            epochs: 2,
            batch_size: 16,
            optimizer: OptimizerKind::Sgdm,
            lr: 0.01,
            ..DistillConfig::vanilla()
        };
        let (_, log) = train_student(&data, None, StudentArch::default(), &cfg, &Rng::new(1)).unwrap();
        assert!(log.epochs.iter().all(|b| b.align.is_none() && b.total.is_finite()));
    }
}
