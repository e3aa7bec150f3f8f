//! Experiment configuration: a flat key-value text format with dotted keys
//! (diff-friendly), a JSON mirror, and command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use hetsense::optim::{
    OptimizerConfig, Parameterization, RadiusMode, ShrinkageConfig, TauMode, TruncationConfig,
};
use hetsense::sensing::MeasurementKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SingleRun,
    SweepHeterogeneity,
    SweepStepsize,
    ComparePooled,
    CompareParameterization,
    VerifyRip,
    VerifyController,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "single-run" => Self::SingleRun,
            "sweep-heterogeneity" => Self::SweepHeterogeneity,
            "sweep-stepsize" => Self::SweepStepsize,
            "compare-pooled" => Self::ComparePooled,
            "compare-parameterization" => Self::CompareParameterization,
            "verify-rip" => Self::VerifyRip,
            "verify-controller" => Self::VerifyController,
            other => bail!("unknown experiment kind: {other}"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SingleRun => "single-run",
            Self::SweepHeterogeneity => "sweep-heterogeneity",
            Self::SweepStepsize => "sweep-stepsize",
            Self::ComparePooled => "compare-pooled",
            Self::CompareParameterization => "compare-parameterization",
            Self::VerifyRip => "verify-rip",
            Self::VerifyController => "verify-controller",
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self, Self::SweepHeterogeneity | Self::SweepStepsize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Hetero,
    Pooled,
    Quadratic,
    Exact,
}

impl RunMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "hetero" => Self::Hetero,
            "pooled" => Self::Pooled,
            "quadratic" => Self::Quadratic,
            "exact" => Self::Exact,
            other => bail!("unknown run mode: {other} (hetero|pooled|quadratic|exact)"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Hetero => "hetero",
            Self::Pooled => "pooled",
            Self::Quadratic => "quadratic",
            Self::Exact => "exact",
        }
    }
}

/// Everything a run needs, resolved. Field defaults reproduce the
/// desk-scale configuration; `--full` switches the scale fields to the
/// simulation-study values (d=100, m=8000, 5 seeds).
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub model: ModelConfig,
    pub dist: DistConfig,
    pub optimizer: OptimizerSection,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub mode: String,
    pub verify: VerifySection,
    pub plot: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub r1: usize,
    pub r2: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d: 50, r1: 1, r2: 1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistConfig {
    /// `uniform-diagonal` or `two-point`.
    pub kind: String,
    /// Heterogeneity half-width M for `uniform-diagonal`.
    pub het: f64,
    /// Magnitude for `two-point`.
    pub a: f64,
}

impl Default for DistConfig {
    fn default() -> Self {
        Self { kind: "uniform-diagonal".to_string(), het: 10.0, a: 2000.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub eta: f64,
    pub alpha: f64,
    /// 0 means the `ceil(10 ln(1/alpha)/eta)` default.
    pub steps: usize,
    pub m: usize,
    /// `overparam-d` or `exact`.
    pub parameterization: String,
    /// `gaussian` or `rank-one`.
    pub measurement: String,
    /// `off`, `log-inv-delta`, or `fixed:<value>`.
    pub truncation: String,
    /// `off`, `oracle`, or `moment-estimate`.
    pub shrinkage: String,
    /// 0 means the `10 sqrt(r1 (1+M1))` default.
    pub divergence_threshold: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            eta: 0.1,
            alpha: 1e-3,
            steps: 0,
            m: 3000,
            parameterization: "overparam-d".to_string(),
            measurement: "gaussian".to_string(),
            truncation: "off".to_string(),
            shrinkage: "off".to_string(),
            divergence_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub rank: usize,
    pub trials: usize,
    pub delta_margin: f64,
    /// Controller parameters.
    pub p: f64,
    pub steps: usize,
    pub replicates: usize,
    pub delta: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { rank: 2, trials: 200, delta_margin: 0.05, p: 0.1, steps: 200, replicates: 10_000, delta: 1e-4 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "single-run".to_string(),
            model: ModelConfig::default(),
            dist: DistConfig::default(),
            optimizer: OptimizerSection::default(),
            grid: Vec::new(),
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("out"),
            mode: "hetero".to_string(),
            verify: VerifySection::default(),
            plot: false,
        }
    }
}

impl ExperimentConfig {
    pub fn kind(&self) -> Result<ExperimentKind> {
        ExperimentKind::parse(&self.experiment)
    }

    pub fn run_mode(&self) -> Result<RunMode> {
        RunMode::parse(&self.mode)
    }

    /// Parse either layout by file extension: `.json` is the JSON mirror,
    /// anything else the flat key-value format.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        } else {
            Self::from_kv(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }

    /// Flat `key = value` lines with dotted keys; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", lineno + 1))?;
        }
        Ok(cfg)
    }

    /// Apply one dotted-key assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value.parse::<T>().map_err(|e| anyhow!("{key}: {e}"))
        }
        match key {
            "experiment" => {
                ExperimentKind::parse(value)?;
                self.experiment = value.to_string();
            }
            "mode" => {
                RunMode::parse(value)?;
                self.mode = value.to_string();
            }
            "model.d" => self.model.d = num(key, value)?,
            "model.r1" => self.model.r1 = num(key, value)?,
            "model.r2" => self.model.r2 = num(key, value)?,
            "dist.kind" => self.dist.kind = value.to_string(),
            "dist.het" => self.dist.het = num(key, value)?,
            "dist.a" => self.dist.a = num(key, value)?,
            "optimizer.eta" => self.optimizer.eta = num(key, value)?,
            "optimizer.alpha" => self.optimizer.alpha = num(key, value)?,
            "optimizer.steps" => {
                self.optimizer.steps =
                    if value == "auto" { 0 } else { num(key, value)? };
            }
            "optimizer.m" => self.optimizer.m = num(key, value)?,
            "optimizer.parameterization" => self.optimizer.parameterization = value.to_string(),
            "optimizer.measurement" => self.optimizer.measurement = value.to_string(),
            "optimizer.truncation" => self.optimizer.truncation = value.to_string(),
            "optimizer.shrinkage" => self.optimizer.shrinkage = value.to_string(),
            "optimizer.divergence_threshold" => {
                self.optimizer.divergence_threshold =
                    if value == "auto" { 0.0 } else { num(key, value)? };
            }
            "grid" => {
                self.grid = value
                    .split(',')
                    .map(|s| num::<f64>("grid entry", s.trim()))
                    .collect::<Result<_>>()?;
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| num::<u64>("seed entry", s.trim()))
                    .collect::<Result<_>>()?;
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "plot" => self.plot = num(key, value)?,
            "verify.rank" => self.verify.rank = num(key, value)?,
            "verify.trials" => self.verify.trials = num(key, value)?,
            "verify.delta_margin" => self.verify.delta_margin = num(key, value)?,
            "verify.p" => self.verify.p = num(key, value)?,
            "verify.steps" => self.verify.steps = num(key, value)?,
            "verify.replicates" => self.verify.replicates = num(key, value)?,
            "verify.delta" => self.verify.delta = num(key, value)?,
            other => bail!("unknown config key: {other}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if self.seeds.is_empty() {
            bail!("need at least one seed");
        }
        if kind.is_sweep() && self.grid.is_empty() {
            bail!("{} needs a nonempty grid", kind.name());
        }
        if self.model.r1 < 1 || self.model.r1 + self.model.r2 > self.model.d {
            bail!("model ranks must satisfy 1 <= r1 and r1 + r2 <= d");
        }
        match self.dist.kind.as_str() {
            "uniform-diagonal" | "two-point" => {}
            other => bail!("unknown dist.kind: {other}"),
        }
        self.optimizer_config()?.validate().map_err(|e| anyhow!(e))?;
        self.run_mode()?;
        Ok(())
    }

    pub fn environment_distribution(&self) -> Result<hetsense::sensing::EnvironmentDistribution> {
        use hetsense::sensing::EnvironmentDistribution as Dist;
        Ok(match self.dist.kind.as_str() {
            "uniform-diagonal" => Dist::uniform_diagonal(self.model.r2, self.dist.het)?,
            "two-point" => Dist::two_point(self.model.r2, self.dist.a)?,
            other => bail!("unknown dist.kind: {other}"),
        })
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let parameterization = match self.optimizer.parameterization.as_str() {
            "overparam-d" => Parameterization::OverparamFull,
            "exact" => Parameterization::Exact,
            other => bail!("unknown parameterization: {other}"),
        };
        let measurement = match self.optimizer.measurement.as_str() {
            "gaussian" => MeasurementKind::Gaussian,
            "rank-one" => MeasurementKind::RankOne,
            other => bail!("unknown measurement kind: {other}"),
        };
        let truncation = match self.optimizer.truncation.as_str() {
            "off" => None,
            "log-inv-delta" => Some(TruncationConfig { radius: RadiusMode::LogInvDelta }),
            other => match other.strip_prefix("fixed:") {
                Some(v) => Some(TruncationConfig {
                    radius: RadiusMode::Fixed(v.parse().map_err(|e| anyhow!("truncation: {e}"))?),
                }),
                None => bail!("unknown truncation setting: {other}"),
            },
        };
        let shrinkage = match self.optimizer.shrinkage.as_str() {
            "off" => None,
            "oracle" => Some(ShrinkageConfig { tau: TauMode::Oracle }),
            "moment-estimate" => Some(ShrinkageConfig { tau: TauMode::MomentEstimate }),
            other => bail!("unknown shrinkage setting: {other}"),
        };
        Ok(OptimizerConfig {
            eta: self.optimizer.eta,
            alpha: self.optimizer.alpha,
            steps: if self.optimizer.steps == 0 { None } else { Some(self.optimizer.steps) },
            batch_size: self.optimizer.m,
            parameterization,
            measurement,
            truncation,
            shrinkage,
            divergence_threshold: if self.optimizer.divergence_threshold == 0.0 {
                None
            } else {
                Some(self.optimizer.divergence_threshold)
            },
        })
    }

    /// Canonical dump of every result-affecting field, in stable order.
    pub fn canonical_entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("experiment".into(), self.experiment.clone());
        m.insert("mode".into(), self.mode.clone());
        m.insert("model.d".into(), self.model.d.to_string());
        m.insert("model.r1".into(), self.model.r1.to_string());
        m.insert("model.r2".into(), self.model.r2.to_string());
        m.insert("dist.kind".into(), self.dist.kind.clone());
        m.insert("dist.het".into(), format!("{:e}", self.dist.het));
        m.insert("dist.a".into(), format!("{:e}", self.dist.a));
        m.insert("optimizer.eta".into(), format!("{:e}", self.optimizer.eta));
        m.insert("optimizer.alpha".into(), format!("{:e}", self.optimizer.alpha));
        m.insert("optimizer.steps".into(), self.optimizer.steps.to_string());
        m.insert("optimizer.m".into(), self.optimizer.m.to_string());
        m.insert("optimizer.parameterization".into(), self.optimizer.parameterization.clone());
        m.insert("optimizer.measurement".into(), self.optimizer.measurement.clone());
        m.insert("optimizer.truncation".into(), self.optimizer.truncation.clone());
        m.insert("optimizer.shrinkage".into(), self.optimizer.shrinkage.clone());
        m.insert(
            "optimizer.divergence_threshold".into(),
            format!("{:e}", self.optimizer.divergence_threshold),
        );
        m.insert(
            "grid".into(),
            self.grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        m.insert(
            "seeds".into(),
            self.seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        m.insert("verify.rank".into(), self.verify.rank.to_string());
        m.insert("verify.trials".into(), self.verify.trials.to_string());
        m.insert("verify.delta_margin".into(), format!("{:e}", self.verify.delta_margin));
        m.insert("verify.p".into(), format!("{:e}", self.verify.p));
        m.insert("verify.steps".into(), self.verify.steps.to_string());
        m.insert("verify.replicates".into(), self.verify.replicates.to_string());
        m.insert("verify.delta".into(), format!("{:e}", self.verify.delta));
        m
    }

    /// SHA-256 over the canonical entries: equal digests mean equal results.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (k, v) in self.canonical_entries() {
            h.update(k.as_bytes());
            h.update([b'=']);
            h.update(v.as_bytes());
            h.update([b'\n']);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrips_the_basics() {
        let text = "\
# comment
experiment = sweep-heterogeneity
model.d = 100
model.r1 = 1
model.r2 = 1
optimizer.eta = 0.1
optimizer.m = 8000
optimizer.steps = auto
grid = 0, 1, 2, 3, 5, 8, 10, 15
seeds = 1,2,3,4,5
output_dir = out/het
";
        let cfg = ExperimentConfig::from_kv(text).unwrap();
        assert_eq!(cfg.kind().unwrap(), ExperimentKind::SweepHeterogeneity);
        assert_eq!(cfg.model.d, 100);
        assert_eq!(cfg.grid.len(), 8);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        cfg.validate().unwrap();
    }

    #[test]
    fn json_mirror_parses() {
        let text = r#"{
            "experiment": "single-run",
            "model": {"d": 40, "r1": 1, "r2": 1},
            "optimizer": {"eta": 0.05, "m": 2000},
            "seeds": [7]
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.model.d, 40);
        assert_eq!(cfg.optimizer.eta, 0.05);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_kv("bogus.key = 3\n").is_err());
    }

    #[test]
    fn digest_tracks_every_parameter() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.set("optimizer.eta", "0.2").unwrap();
        assert_ne!(a.digest(), b.digest());
        let mut c = ExperimentConfig::default();
        c.set("seeds", "9").unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn truncation_and_shrinkage_settings_resolve() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("optimizer.measurement", "rank-one").unwrap();
        cfg.set("optimizer.truncation", "fixed:7.5").unwrap();
        cfg.set("optimizer.shrinkage", "oracle").unwrap();
        let oc = cfg.optimizer_config().unwrap();
        assert_eq!(oc.truncation, Some(TruncationConfig { radius: RadiusMode::Fixed(7.5) }));
        assert_eq!(oc.shrinkage, Some(ShrinkageConfig { tau: TauMode::Oracle }));
    }
}
