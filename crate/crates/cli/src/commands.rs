use std::fs;
use std::path::{Path, PathBuf};

use clarep_core::cadistill::{
    evaluate, select_pool_indices, train_student, BayesRule, ClaRepPool, MetricsReport, StudentArch, StudentLog,
    StudentModel,
};
use clarep_core::checkpoint::Checkpoint;
use clarep_core::clarid::{clarid_many, feature_quality, find_te, inverted_features, ClaRepBundle, QualityReport, TeSearchReport};
use clarep_core::diffusion::{ddim_decode, train_cdm, CdmModel, Condition};
use clarep_core::numerics::{stream, Matrix, Rng};
use clarep_core::toy_data::{distance_to_core_segment, sample_dataset, LabeledSample, ToyDataset, CLASS_SHIFT};
use clarep_core::{Error, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Pipeline stages, in recipe order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Stage {
    /// Sample the train and test sets.
    GenData,
    /// Train the conditional diffusion model.
    TrainCdm,
    /// Sweep the extraneous timestep and pick the saturation point.
    FindTe,
    /// Run CLARID on a batch of training samples.
    Clarid,
    /// Build the class-stratified CLARep pool.
    BuildPool,
    /// Compare clustering quality of original and canonical features.
    EvalFeatures,
    /// Train the vanilla and CaDistill students.
    TrainStudent,
    /// Clean and PGD accuracy of the students.
    Attack,
    /// Merge stage reports into summary.csv.
    Report,
}

impl Stage {
    pub const RECIPE: [Stage; 9] = [
        Stage::GenData,
        Stage::TrainCdm,
        Stage::FindTe,
        Stage::Clarid,
        Stage::BuildPool,
        Stage::EvalFeatures,
        Stage::TrainStudent,
        Stage::Attack,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainCdm => "train-cdm",
            Stage::FindTe => "find-te",
            Stage::Clarid => "clarid",
            Stage::BuildPool => "build-pool",
            Stage::EvalFeatures => "eval-features",
            Stage::TrainStudent => "train-student",
            Stage::Attack => "attack",
            Stage::Report => "report",
        }
    }

    fn needs_t_e(self) -> bool {
        matches!(self, Stage::Clarid | Stage::BuildPool)
    }
}

/// Runs one stage into `out`: settles `t_e` if the stage needs it, echoes
/// the resolved config, then writes the stage's artifacts.
pub fn run_stage(stage: Stage, cfg: ExperimentConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mut ctx = Context {
        cfg,
        out: out.to_path_buf(),
    };
    if stage.needs_t_e() {
        ctx.resolve_t_e()?;
    }
    ctx.echo(stage.name())?;
    match stage {
        Stage::GenData => gen_data(&ctx),
        Stage::TrainCdm => train_cdm_cmd(&ctx),
        Stage::FindTe => find_te_cmd(&ctx),
        Stage::Clarid => clarid_cmd(&ctx),
        Stage::BuildPool => build_pool(&ctx),
        Stage::EvalFeatures => eval_features(&ctx),
        Stage::TrainStudent => train_student_cmd(&ctx),
        Stage::Attack => attack_cmd(&ctx),
        Stage::Report => report(&ctx),
    }
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Datasets {
    pub train: ToyDataset,
    pub test: ToyDataset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaridSummary {
    pub count: usize,
    pub class: usize,
    pub t_e: usize,
    pub median_distance_original: f64,
    pub median_distance_plain: f64,
    pub median_distance_cfg: f64,
    pub median_distance_canonical: f64,
    /// Share of decodes with `x₁` within 0.2 of the class shift.
    pub core_band_fraction_plain: f64,
    pub core_band_fraction_canonical: f64,
    pub median_abs_x2_original: f64,
    pub median_abs_x2_canonical: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureReport {
    pub n: usize,
    pub t_r: usize,
    pub layer: usize,
    pub original: QualityReport,
    pub canonical: QualityReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentLogs {
    pub vanilla: StudentLog,
    pub cadistill: StudentLog,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub reports: Vec<MetricsReport>,
    pub loss_trajectories: StudentLogs,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn rng(&self) -> Rng {
        Rng::new(self.cfg.seed)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> Result<()> {
        let mut s = String::new();
        for it in items {
            s.push_str(&serde_json::to_string(it)?);
            s.push('\n');
        }
        self.write(name, &s)
    }

    fn require(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            return Err(Error::Config(format!("missing {}; run `clarep {stage}` first", p.display())));
        }
        Ok(p)
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str, stage: &str) -> Result<T> {
        let text = fs::read_to_string(self.require(name, stage)?)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn read_jsonl<T: DeserializeOwned>(&self, name: &str, stage: &str) -> Result<Vec<T>> {
        let text = fs::read_to_string(self.require(name, stage)?)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }

    fn datasets(&self) -> Result<Datasets> {
        self.read_json("dataset.json", "gen-data")
    }

    fn cdm(&self) -> Result<CdmModel> {
        CdmModel::from_checkpoint(&Checkpoint::load(&self.require("cdm.json", "train-cdm")?)?)
    }

    fn student(&self, name: &str) -> Result<StudentModel> {
        StudentModel::from_checkpoint(&Checkpoint::load(&self.require(name, "train-student")?)?)
    }

    /// Echoes the fully resolved config next to the outputs.
    pub fn echo(&self, sub: &str) -> Result<()> {
        self.write(&format!("resolved_{sub}.toml"), &self.cfg.to_toml())
    }

    /// Fills `t_e = 0` from the saturation report.
    pub fn resolve_t_e(&mut self) -> Result<()> {
        if self.cfg.t_e == 0 {
            let report: TeSearchReport = self.read_json("te_report.json", "find-te")?;
            self.cfg.t_e = report.chosen;
        }
        Ok(())
    }
}

fn write_dataset_csv(ds: &ToyDataset) -> Result<String> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("ascii csv"))
}

pub fn gen_data(ctx: &Context) -> Result<()> {
    let rng = ctx.rng();
    let train = sample_dataset(ctx.cfg.n_train, &mut rng.split(stream::DATA))?;
    let test = sample_dataset(ctx.cfg.n_test, &mut rng.split(stream::EVAL))?;
    ctx.write("data.csv", &write_dataset_csv(&train)?)?;
    ctx.write("test.csv", &write_dataset_csv(&test)?)?;
    ctx.write_json("dataset.json", &Datasets { train, test })
}

pub fn train_cdm_cmd(ctx: &Context) -> Result<()> {
    let ds = ctx.datasets()?;
    let sched = ctx.cfg.schedule()?;
    let (model, log) = train_cdm(&ds.train, ctx.cfg.cdm_arch(), &sched, &ctx.cfg.cdm_train()?, &ctx.rng())?;
    model.to_checkpoint().save(&ctx.path("cdm.json"))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in log.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l:.6}\n"));
    }
    ctx.write("cdm_loss.csv", &csv)
}

pub fn bayes_label(x: [f64; 2]) -> usize {
    usize::from(x[0] > 2.0)
}

pub fn find_te_cmd(ctx: &Context) -> Result<()> {
    let model = ctx.cdm()?;
    let sched = ctx.cfg.schedule()?;
    let report = find_te(
        &model,
        &sched,
        &bayes_label,
        &ctx.cfg.grid()?,
        ctx.cfg.te_m,
        &ctx.rng().split(stream::SAMPLING),
        ctx.cfg.te_tol,
        ctx.cfg.cfg_scale,
    )?;
    ctx.write("te_curve.csv", &report.to_csv())?;
    ctx.write_json("te_report.json", &report)
}

fn run_clarid(ctx: &Context, model: &CdmModel, samples: &[(usize, LabeledSample)]) -> Result<Vec<clarep_core::clarid::ClaridTrace>> {
    let sched = ctx.cfg.schedule()?;
    clarid_many(samples, model, &sched, &ctx.cfg.clarid(ctx.cfg.t_e), &ctx.rng().split(stream::SAMPLING))
}

fn in_core_band(x: [f64; 2], y: usize) -> bool {
    (x[0] - CLASS_SHIFT * y as f64).abs() <= 0.2
}

pub fn clarid_cmd(ctx: &Context) -> Result<()> {
    let ds = ctx.datasets()?;
    let model = ctx.cdm()?;
    let sched = ctx.cfg.schedule()?;
    let class = ctx.cfg.clarid_class;
    let samples: Vec<(usize, LabeledSample)> = ds
        .train
        .of_class(class)
        .take(ctx.cfg.clarid_count)
        .map(|(i, s)| (i, *s))
        .collect();
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("no training samples of class {class}")));
    }
    let traces = run_clarid(ctx, &model, &samples)?;
    let rng = ctx.rng().split(stream::SAMPLING);
    let baselines = traces
        .par_iter()
        .map(|t| -> Result<([f64; 2], [f64; 2])> {
            let mut r = rng.split(t.bundle.seed_sample_id as u64);
            let plain = ddim_decode(&t.x_te, &model, &sched, 1.0, &mut r)?;
            let guided = ddim_decode(&t.x_te, &model, &sched, ctx.cfg.baseline_cfg_scale, &mut r)?;
            Ok((plain, guided))
        })
        .collect::<Result<Vec<_>>>()?;

    let bundles: Vec<ClaRepBundle> = traces.iter().map(|t| t.bundle.clone()).collect();
    ctx.write_jsonl("clarid.jsonl", &bundles)?;

    let mut csv =
        String::from("id,label,k,orig_x1,orig_x2,plain_x1,plain_x2,cfg_x1,cfg_x2,canonical_x1,canonical_x2\n");
    let (mut d_orig, mut d_plain, mut d_cfg, mut d_canon) = (vec![], vec![], vec![], vec![]);
    for ((id, s), (b, (plain, guided))) in samples.iter().zip(bundles.iter().zip(&baselines)) {
        let c = b.canonical_sample;
        csv.push_str(&format!(
            "{id},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.y, b.k, s.x[0], s.x[1], plain[0], plain[1], guided[0], guided[1], c[0], c[1]
        ));
        d_orig.push(distance_to_core_segment(s.x, class)?);
        d_plain.push(distance_to_core_segment(*plain, class)?);
        d_cfg.push(distance_to_core_segment(*guided, class)?);
        d_canon.push(distance_to_core_segment(c, class)?);
    }
    ctx.write("clarid_samples.csv", &csv)?;
    let n = samples.len() as f64;
    let band = |xs: &mut dyn Iterator<Item = [f64; 2]>| xs.filter(|x| in_core_band(*x, class)).count() as f64 / n;
    let summary = ClaridSummary {
        count: samples.len(),
        class,
        t_e: ctx.cfg.t_e,
        median_distance_original: median(&d_orig),
        median_distance_plain: median(&d_plain),
        median_distance_cfg: median(&d_cfg),
        median_distance_canonical: median(&d_canon),
        core_band_fraction_plain: band(&mut baselines.iter().map(|b| b.0)),
        core_band_fraction_canonical: band(&mut bundles.iter().map(|b| b.canonical_sample)),
        median_abs_x2_original: median(&samples.iter().map(|(_, s)| s.x[1].abs()).collect::<Vec<_>>()),
        median_abs_x2_canonical: median(&bundles.iter().map(|b| b.canonical_sample[1].abs()).collect::<Vec<_>>()),
    };
    ctx.write_json("clarid_summary.json", &summary)
}

pub fn build_pool(ctx: &Context) -> Result<()> {
    let ds = ctx.datasets()?;
    let model = ctx.cdm()?;
    let idx = select_pool_indices(&ds.train, ctx.cfg.pool_fraction, &mut ctx.rng().split(stream::POOL))?;
    let samples: Vec<(usize, LabeledSample)> = idx.iter().map(|&i| (i, ds.train.samples[i])).collect();
    let bundles: Vec<ClaRepBundle> = run_clarid(ctx, &model, &samples)?.into_iter().map(|t| t.bundle).collect();
    ClaRepPool::from_bundles(bundles.clone(), model.arch.num_classes)?;
    ctx.write_jsonl("pool.jsonl", &bundles)
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::from_vec(rows.len(), cols, rows.concat())
}

pub fn eval_features(ctx: &Context) -> Result<()> {
    let ds = ctx.datasets()?;
    let model = ctx.cdm()?;
    let sched = ctx.cfg.schedule()?;
    let bundles: Vec<ClaRepBundle> = ctx.read_jsonl("pool.jsonl", "build-pool")?;
    let labels: Vec<usize> = bundles.iter().map(|b| b.cond).collect();
    let original = bundles
        .par_iter()
        .map(|b| {
            let s = ds
                .train
                .samples
                .get(b.seed_sample_id)
                .ok_or_else(|| Error::InvalidInput(format!("pool refers to missing sample {}", b.seed_sample_id)))?;
            inverted_features(s.x, Condition::Class(s.y), &model, &sched, ctx.cfg.t_r, ctx.cfg.feature_layer)
        })
        .collect::<Result<Vec<_>>>()?;
    let canonical: Vec<Vec<f64>> = bundles.iter().map(|b| b.canonical_feature.clone()).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let rng = ctx.rng().split(stream::CLUSTER);
    let report = FeatureReport {
        n: bundles.len(),
        t_r: ctx.cfg.t_r,
        layer: ctx.cfg.feature_layer,
        original: feature_quality(&rows_to_matrix(&original)?, &labels, classes, &mut rng.clone())?,
        canonical: feature_quality(&rows_to_matrix(&canonical)?, &labels, classes, &mut rng.clone())?,
    };
    ctx.write_json("features.json", &report)
}

fn student_arch(ctx: &Context) -> StudentArch {
    StudentArch {
        hidden: ctx.cfg.student_hidden,
        ..StudentArch::default()
    }
}

pub fn train_student_cmd(ctx: &Context) -> Result<()> {
    let ds = ctx.datasets()?;
    let bundles: Vec<ClaRepBundle> = ctx.read_jsonl("pool.jsonl", "build-pool")?;
    let arch = student_arch(ctx);
    let pool = ClaRepPool::from_bundles(bundles, arch.num_classes)?;
    let rng = ctx.rng();
    let (vanilla, vlog) = train_student(&ds.train, None, arch, &ctx.cfg.distill(false)?, &rng)?;
    let (cad, clog) = train_student(&ds.train, Some(&pool), arch, &ctx.cfg.distill(true)?, &rng)?;
    vanilla.to_checkpoint().save(&ctx.path("student_vanilla.json"))?;
    cad.to_checkpoint().save(&ctx.path("student_cadistill.json"))?;
    let mut csv = String::from("model,epoch,total,cls,align,cano,dist\n");
    for (name, log) in [("vanilla", &vlog), ("cadistill", &clog)] {
        for line in log.to_csv().lines().skip(1) {
            csv.push_str(&format!("{name},{line}\n"));
        }
    }
    ctx.write("student_loss.csv", &csv)?;
    ctx.write_json(
        "student_logs.json",
        &StudentLogs {
            vanilla: vlog,
            cadistill: clog,
        },
    )
}

pub fn attack_cmd(ctx: &Context) -> Result<()> {
    let ds = ctx.datasets()?;
    let x = ds.test.points();
    let y = ds.test.labels();
    let atk = ctx.cfg.attack();
    let rng = ctx.rng().split(stream::ATTACK);
    let vanilla = ctx.student("student_vanilla.json")?;
    let cad = ctx.student("student_cadistill.json")?;
    let reports = vec![
        evaluate("vanilla", &vanilla, &x, &y, Some(&atk), &mut rng.clone())?,
        evaluate("cadistill", &cad, &x, &y, Some(&atk), &mut rng.clone())?,
        evaluate("bayes_rule", &BayesRule { sharpness: 1.0 }, &x, &y, Some(&atk), &mut rng.clone())?,
    ];
    let logs: StudentLogs = ctx.read_json("student_logs.json", "train-student")?;
    ctx.write_json(
        "metrics.json",
        &Metrics {
            reports,
            loss_trajectories: logs,
        },
    )
}

fn present(ctx: &Context, name: &str) -> bool {
    ctx.path(name).exists()
}

pub fn report(ctx: &Context) -> Result<()> {
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    let mut push = |section: &str, metric: &str, v: f64| rows.push((section.into(), metric.into(), v));
    if present(ctx, "te_report.json") {
        let r: TeSearchReport = ctx.read_json("te_report.json", "find-te")?;
        push("find_te", "chosen_t_e", r.chosen as f64);
        push("find_te", "max_accuracy", r.accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    if present(ctx, "clarid_summary.json") {
        let s: ClaridSummary = ctx.read_json("clarid_summary.json", "clarid")?;
        push("clarid", "median_distance_original", s.median_distance_original);
        push("clarid", "median_distance_plain", s.median_distance_plain);
        push("clarid", "median_distance_cfg", s.median_distance_cfg);
        push("clarid", "median_distance_canonical", s.median_distance_canonical);
        push("clarid", "core_band_fraction_canonical", s.core_band_fraction_canonical);
        push("clarid", "median_abs_x2_canonical", s.median_abs_x2_canonical);
    }
    if present(ctx, "features.json") {
        let f: FeatureReport = ctx.read_json("features.json", "eval-features")?;
        push("features", "nmi_original", f.original.nmi);
        push("features", "nmi_canonical", f.canonical.nmi);
        push("features", "within_class_variance_original", f.original.pooled_within_class_variance);
        push("features", "within_class_variance_canonical", f.canonical.pooled_within_class_variance);
    }
    if present(ctx, "metrics.json") {
        let m: Metrics = ctx.read_json("metrics.json", "attack")?;
        for r in &m.reports {
            push("attack", &format!("{}_clean_accuracy", r.model), r.clean_accuracy);
            if let Some(v) = r.robust_accuracy {
                push("attack", &format!("{}_robust_accuracy", r.model), v);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("no stage reports found in {}", ctx.out.display())));
    }
    let mut csv = String::from("section,metric,value\n");
    for (s, m, v) in rows {
        csv.push_str(&format!("{s},{m},{v:.6}\n"));
    }
    ctx.write("summary.csv", &csv)
}

pub fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p)?;
    Ok(())
}
