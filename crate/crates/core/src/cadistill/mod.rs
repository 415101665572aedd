//! Distillation of a student classifier from CLAReps, and PGD robustness
//! evaluation.

mod attack;
mod losses;
mod pool;
mod student;
mod train;

pub use attack::{evaluate, pgd_attack, AttackConfig, BayesRule, Classifier, MetricsReport};
pub use losses::{
    cka_tape, cross_entropy, cross_entropy_tape, l_align, l_align_tape, l_cano, l_cano_tape, l_dist, l_dist_tape,
    LossBreakdown, CKA_CLAMP,
};
pub use pool::{select_pool_indices, ClaRepPool};
pub use student::{argmax_rows, StudentArch, StudentModel, StudentVars};
pub use train::{draw_distill_batch, total_loss, train_student, CanonicalPart, DistillBatch, DistillConfig, OptimizerKind, StudentLog};
