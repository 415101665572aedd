//! Flat experiment configuration: built-in defaults, overlaid by an optional
//! TOML file, overlaid by `--set key=value` pairs.

use std::fs;
use std::path::Path;

use clarep_core::cadistill::{AttackConfig, DistillConfig, OptimizerKind};
use clarep_core::clarid::{default_grid, ClaridConfig};
use clarep_core::diffusion::{CdmArch, NoiseSchedule, TrainConfig};
use clarep_core::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,

    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
    pub ddim_eta: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub cdm_epochs: usize,
    pub cdm_batch_size: usize,
    pub cdm_lr: f64,
    pub label_drop: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    /// Comma-separated timesteps; empty means tenths of `t_max`.
    pub te_grid: String,
    pub te_m: usize,
    pub te_tol: f64,

    /// Projection timestep; 0 takes the value chosen by `find-te`.
    pub t_e: usize,
    pub n_directions: usize,
    pub cfg_scale: f64,
    pub baseline_cfg_scale: f64,
    pub t_r: usize,
    pub feature_layer: usize,
    pub clarid_class: usize,
    pub clarid_count: usize,

    pub pool_fraction: f64,

    pub student_hidden: usize,
    pub student_epochs: usize,
    pub student_batch_size: usize,
    pub student_lr: f64,
    pub student_optimizer: String,
    pub student_momentum: f64,
    pub tau: f64,
    pub lambda_cs: f64,
    pub lambda_cf: f64,
    pub lambda_dist: f64,
    pub lambda_cka: f64,

    pub pgd_epsilon: f64,
    pub pgd_steps: usize,
    pub pgd_step_size: f64,
    pub pgd_random_start: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let distill = DistillConfig::default();
        let atk = AttackConfig::default();
        let arch = CdmArch::default();
        Self {
            seed: 0,
            n_train: 1000,
            n_test: 2000,
            t_max: arch.t_max,
            beta_start: 1e-4,
            beta_end: 0.02,
            ddim_steps: 100,
            ddim_eta: 0.0,
            hidden: arch.hidden,
            embed_dim: arch.embed_dim,
            cdm_epochs: train.epochs,
            cdm_batch_size: train.batch_size,
            cdm_lr: train.lr,
            label_drop: train.label_drop,
            adam_beta1: train.beta1,
            adam_beta2: train.beta2,
            adam_eps: train.adam_eps,
            te_grid: String::new(),
            te_m: 100,
            te_tol: 0.02,
            t_e: 0,
            n_directions: 2,
            cfg_scale: 1.0,
            baseline_cfg_scale: 3.0,
            t_r: 100,
            feature_layer: 1,
            clarid_class: 1,
            clarid_count: 100,
            pool_fraction: 0.1,
            student_hidden: 64,
            student_epochs: distill.epochs,
            student_batch_size: distill.batch_size,
            student_lr: distill.lr,
            student_optimizer: "adam".into(),
            student_momentum: distill.momentum,
            tau: distill.tau,
            lambda_cs: distill.lambda_cs,
            lambda_cf: distill.lambda_cf,
            lambda_dist: distill.lambda_dist,
            lambda_cka: distill.lambda_cka,
            pgd_epsilon: atk.epsilon,
            pgd_steps: atk.steps,
            pgd_step_size: atk.step_size,
            pgd_random_start: atk.random_start,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Overlays `layer` onto `base`, rejecting unknown keys and promoting
/// integers where the default is a float.
fn overlay(base: &mut Table, layer: Table, origin: &str) -> Result<()> {
    for (k, v) in layer {
        let Some(current) = base.get(&k) else {
            return Err(config_err(format!("unknown config key '{k}' ({origin})")));
        };
        let v = match (current, v) {
            (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
            (_, v) => v,
        };
        if std::mem::discriminant(current) != std::mem::discriminant(&v) {
            return Err(config_err(format!(
                "config key '{k}' expects a {}, got {} ({origin})",
                current.type_str(),
                v.type_str()
            )));
        }
        base.insert(k, v);
    }
    Ok(())
}

/// `key=value`, with `value` read as a TOML literal and otherwise as a bare
/// string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{s}' is not key=value")))?;
    let k = k.trim().to_string();
    let v = v.trim();
    let value = format!("v = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k, value))
}

/// Resolves defaults < file < overrides < explicit seed, returning the
/// config and a line per layer applied.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<(ExperimentConfig, Vec<String>)> {
    let mut table = Table::try_from(ExperimentConfig::default()).map_err(|e| config_err(e.to_string()))?;
    let mut trail = vec!["defaults".to_string()];
    if let Some(path) = file {
        let text = fs::read_to_string(path)?;
        let layer: Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_err(format!("{}: {}", path.display(), e.message())))?;
        overlay(&mut table, layer, &path.display().to_string())?;
        trail.push(format!("file {}", path.display()));
    }
    if !overrides.is_empty() {
        let mut layer = Table::new();
        for o in overrides {
            let (k, v) = parse_override(o)?;
            layer.insert(k, v);
        }
        overlay(&mut table, layer, "--set")?;
        trail.push(format!("overrides {}", overrides.join(" ")));
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| config_err("seed must fit in a signed 64-bit integer"))?;
        table.insert("seed".into(), Value::Integer(s));
        trail.push(format!("--seed {s}"));
    }
    let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
    cfg.validate()?;
    Ok((cfg, trail))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.cdm_train()?.validate()?;
        self.grid()?;
        self.distill(true)?.validate()?;
        self.attack().validate()?;
        if self.n_train < 2 || self.n_test < 1 {
            return Err(config_err("n_train must be >= 2 and n_test >= 1"));
        }
        if self.te_m == 0 || self.clarid_count == 0 {
            return Err(config_err("te_m and clarid_count must be positive"));
        }
        if self.feature_layer >= CdmArch::NUM_HIDDEN_LAYERS {
            return Err(config_err(format!("feature_layer must be < {}", CdmArch::NUM_HIDDEN_LAYERS)));
        }
        if self.t_r == 0 || self.t_r > self.t_max || self.t_e > self.t_max {
            return Err(config_err("t_r must lie in 1..=t_max and t_e in 0..=t_max"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_max, self.beta_start, self.beta_end, self.ddim_steps, self.ddim_eta)
            .map_err(|e| config_err(e.to_string()))
    }

    pub fn cdm_arch(&self) -> CdmArch {
        CdmArch {
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            t_max: self.t_max,
            ..CdmArch::default()
        }
    }

    pub fn cdm_train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.cdm_epochs,
            batch_size: self.cdm_batch_size,
            lr: self.cdm_lr,
            label_drop: self.label_drop,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Vec<usize>> {
        if self.te_grid.trim().is_empty() {
            return Ok(default_grid(self.t_max));
        }
        let grid = self
            .te_grid
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| config_err(format!("te_grid: {e}")))?;
        if grid.iter().any(|&t| t == 0 || t > self.t_max) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("te_grid must be strictly ascending within 1..=t_max"));
        }
        Ok(grid)
    }

    pub fn clarid(&self, t_e: usize) -> ClaridConfig {
        ClaridConfig {
            t_e,
            n: self.n_directions,
            cfg_scale: self.cfg_scale,
            t_r: self.t_r,
            layer: self.feature_layer,
        }
    }

    /// Distillation settings; `cadistill = false` zeroes the CLARep terms.
    pub fn distill(&self, cadistill: bool) -> Result<DistillConfig> {
        let optimizer = match self.student_optimizer.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgdm" => OptimizerKind::Sgdm,
            other => return Err(config_err(format!("student_optimizer '{other}' is not adam or sgdm"))),
        };
        let (lambda_cs, lambda_dist) = if cadistill {
            (self.lambda_cs, self.lambda_dist)
        } else {
            (0.0, 0.0)
        };
        Ok(DistillConfig {
            tau: self.tau,
            lambda_cs,
            lambda_cf: self.lambda_cf,
            lambda_dist,
            lambda_cka: self.lambda_cka,
            epochs: self.student_epochs,
            batch_size: self.student_batch_size,
            lr: self.student_lr,
            optimizer,
            momentum: self.student_momentum,
        })
    }

    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.pgd_epsilon,
            steps: self.pgd_steps,
            step_size: self.pgd_step_size,
            random_start: self.pgd_random_start,
        }
    }
}
