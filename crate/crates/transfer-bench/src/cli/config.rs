//! Structured-text (TOML) configuration files for the `transfer` and
//! `defend` subcommands. Unknown keys are rejected; omitted attack fields
//! fall back to the pinned defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::attack::{AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::harness::{NetRef, Scenario, ScenarioCase};

/// Attack description with optional overrides on top of the kind's defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: Option<f64>,
    pub steps: Option<usize>,
    pub theta: Option<f64>,
    pub jsma_budget: Option<f64>,
    pub jsma_max_iters: Option<usize>,
    pub jsma_patience: Option<usize>,
    pub jsma_min_progress: Option<f64>,
    pub pgd_radius: Option<f64>,
    pub pgd_random_start: Option<bool>,
    pub lbfgs_c_init: Option<f64>,
    pub lbfgs_c_growth: Option<f64>,
    pub lbfgs_bisection_steps: Option<usize>,
    pub lbfgs_inner_iters: Option<usize>,
    pub deepfool_max_iter: Option<usize>,
    pub deepfool_overshoot: Option<f64>,
}

impl AttackSpec {
    pub fn lower(&self) -> AttackConfig {
        let mut cfg = match self.kind {
            AttackKind::Ifgsm => AttackConfig::ifgsm(0.1, 10),
            AttackKind::Jsma => AttackConfig::jsma(0.1),
            AttackKind::Lbfgs => AttackConfig::lbfgs(),
            AttackKind::Pgd => AttackConfig::pgd(),
            AttackKind::Deepfool => AttackConfig::deepfool(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        take!(
            epsilon,
            steps,
            theta,
            jsma_budget,
            jsma_patience,
            jsma_min_progress,
            pgd_radius,
            pgd_random_start,
            lbfgs_c_init,
            lbfgs_c_growth,
            lbfgs_bisection_steps,
            lbfgs_inner_iters,
            deepfool_max_iter,
            deepfool_overshoot
        );
        if self.jsma_max_iters.is_some() {
            cfg.jsma_max_iters = self.jsma_max_iters;
        }
        cfg
    }
}

fn parse_net(s: &str) -> Result<NetRef> {
    let (arch, dataset) = s
        .split_once('@')
        .ok_or_else(|| Error::Config(format!("network `{s}` is not of the form arch@dataset")))?;
    Ok(NetRef::new(arch.parse()?, dataset))
}

/// One explicit case in the suite config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub scenario: Scenario,
    pub sn: String,
    pub tn: String,
    pub attack: AttackSpec,
    pub sample_count: Option<usize>,
    pub seed: Option<u64>,
}

/// One grid entry: the standard five-attack sweep over a fixed (SN, TN)
/// pair. Omitted lists default to the usual parameter grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub scenario: Scenario,
    pub sn: String,
    pub tn: String,
    pub ifgsm_eps: Option<Vec<f64>>,
    pub jsma_theta: Option<Vec<f64>>,
    pub lbfgs: Option<bool>,
    pub pgd: Option<bool>,
    pub deepfool: Option<bool>,
    pub sample_count: Option<usize>,
    pub seed: Option<u64>,
}

pub const DEFAULT_IFGSM_EPS_GRID: [f64; 3] = [0.1, 0.01, 0.001];
pub const DEFAULT_JSMA_THETA_GRID: [f64; 2] = [0.1, 0.01];

/// Suite configuration (the `transfer` subcommand).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: Option<u64>,
    pub sample_count: Option<usize>,
    /// Dataset name -> cache file path.
    pub datasets: BTreeMap<String, PathBuf>,
    /// "arch@dataset" -> checkpoint file path.
    pub models: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub cases: Vec<CaseSpec>,
    #[serde(default)]
    pub grid: Vec<GridSpec>,
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SuiteConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.cases.is_empty() && self.grid.is_empty() {
            // an empty suite is legal; it renders an empty matrix
        }
        for key in self.models.keys() {
            parse_net(key)?;
        }
        Ok(())
    }

    pub fn model_entries(&self) -> Result<Vec<(NetRef, PathBuf)>> {
        self.models
            .iter()
            .map(|(k, v)| Ok((parse_net(k)?, v.clone())))
            .collect()
    }

    /// Expand explicit cases plus grid entries into runnable cases.
    pub fn expand_cases(&self) -> Result<Vec<ScenarioCase>> {
        let default_count = self.sample_count.unwrap_or(250);
        let default_seed = self.seed.unwrap_or(7);
        let mut out = Vec::new();
        for c in &self.cases {
            let mut case = ScenarioCase::new(
                c.scenario,
                parse_net(&c.sn)?,
                parse_net(&c.tn)?,
                c.attack.lower(),
            );
            case.sample_count = c.sample_count.unwrap_or(default_count);
            case.seed = c.seed.unwrap_or(default_seed);
            out.push(case);
        }
        for g in &self.grid {
            let sn = parse_net(&g.sn)?;
            let tn = parse_net(&g.tn)?;
            let count = g.sample_count.unwrap_or(default_count);
            let seed = g.seed.unwrap_or(default_seed);
            let mut attacks: Vec<AttackConfig> = Vec::new();
            for &eps in g.ifgsm_eps.as_deref().unwrap_or(&DEFAULT_IFGSM_EPS_GRID) {
                attacks.push(AttackConfig::ifgsm(eps, 10));
            }
            for &theta in g.jsma_theta.as_deref().unwrap_or(&DEFAULT_JSMA_THETA_GRID) {
                attacks.push(AttackConfig::jsma(theta));
            }
            if g.lbfgs.unwrap_or(true) {
                attacks.push(AttackConfig::lbfgs());
            }
            if g.pgd.unwrap_or(true) {
                attacks.push(AttackConfig::pgd());
            }
            if g.deepfool.unwrap_or(true) {
                attacks.push(AttackConfig::deepfool());
            }
            for attack in attacks {
                let mut case = ScenarioCase::new(g.scenario, sn.clone(), tn.clone(), attack);
                case.sample_count = count;
                case.seed = seed;
                out.push(case);
            }
        }
        Ok(out)
    }
}

/// Defense configuration (the `defend` subcommand).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseFileConfig {
    pub kind: String,
    pub seed: Option<u64>,
    pub dataset_cache: PathBuf,
    pub sn_checkpoint: PathBuf,
    /// CNN target for mpa-finetune; original CNN target for arch-mismatch.
    pub tn_checkpoint: PathBuf,
    /// LSTM target, required by arch-mismatch.
    pub lstm_checkpoint: Option<PathBuf>,
    pub finetune_epochs: Option<usize>,
    pub adversarial_mix_ratio: Option<f64>,
    pub attacks: Vec<AttackSpec>,
}

impl DefenseFileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
            seed = 1
            bogus_key = true
            [datasets]
            [models]
        "#;
        let err = toml::from_str::<SuiteConfig>(text).unwrap_err();
        assert!(err.to_string().contains("bogus_key") || err.to_string().contains("unknown"));
    }

    #[test]
    fn grid_expands_to_the_standard_eight_configs() {
        let text = r#"
            seed = 3
            sample_count = 50
            [datasets]
            A = "a.spdz"
            [models]
            "spritz1@A" = "s1a.sptz"
            "spritz2@A" = "s2a.sptz"
            [[grid]]
            scenario = "cross-model"
            sn = "spritz1@A"
            tn = "spritz2@A"
        "#;
        let cfg: SuiteConfig = toml::from_str(text).unwrap();
        let cases = cfg.expand_cases().unwrap();
        // 3 eps + 2 theta + lbfgs + pgd + deepfool
        assert_eq!(cases.len(), 8);
        assert!(cases.iter().all(|c| c.sample_count == 50 && c.seed == 3));
        assert!(cases.iter().all(|c| c.sn.arch == Arch::Spritz1));
    }

    #[test]
    fn attack_spec_overrides_only_named_fields() {
        let spec: AttackSpec =
            toml::from_str("kind = \"ifgsm\"\nepsilon = 0.001\n").unwrap();
        let cfg = spec.lower();
        assert_eq!(cfg.epsilon, 0.001);
        assert_eq!(cfg.steps, 10);
        let err = toml::from_str::<AttackSpec>("kind = \"ifgsm\"\nepsilonn = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn bad_net_key_is_a_config_error() {
        let text = r#"
            [datasets]
            [models]
            "spritz1-A" = "x.sptz"
        "#;
        let cfg: SuiteConfig = toml::from_str(text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
