//! TOML experiment configuration. Every section and key is optional; flags
//! given on the command line take precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use slownav::agent::PpoConfig;
use slownav::hsfa::{LayerSpec, NetworkConfig};
use slownav::sfa::NodeParams;
use slownav::worldsim::LayoutKind;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub layout: Option<String>,
    /// Layout config file (`key = value` text); overrides `layout`.
    pub layout_file: Option<PathBuf>,
    pub max_steps: Option<usize>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub hsfa: HsfaSection,
    #[serde(default)]
    pub ppo: PpoSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_steps: Option<usize>,
    pub reset_every: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsfaSection {
    pub seed: Option<u64>,
    pub layers: Option<Vec<LayerSection>>,
    pub top: Option<NodeSection>,
    pub skip_boundaries: Option<bool>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub rf: [usize; 2],
    pub stride: [usize; 2],
    pub mid_dim: Option<usize>,
    pub out_dim: Option<usize>,
    pub noise_std: Option<f64>,
    pub clip_bound: Option<f64>,
}

impl LayerSection {
    fn node(&self) -> NodeSection {
        NodeSection {
            mid_dim: self.mid_dim,
            out_dim: self.out_dim,
            noise_std: self.noise_std,
            clip_bound: self.clip_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub mid_dim: Option<usize>,
    pub out_dim: Option<usize>,
    pub noise_std: Option<f64>,
    pub clip_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSection {
    pub learning_rate: Option<f64>,
    pub n_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub n_epochs: Option<usize>,
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub clip_range: Option<f64>,
    pub ent_coef: Option<f64>,
    pub vf_coef: Option<f64>,
    pub max_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub total_steps: Option<usize>,
    pub seeds: Option<usize>,
    pub seed: Option<u64>,
    pub eval_episodes: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(name) = &self.layout {
            name.parse::<LayoutKind>()?;
        }
        if self.max_steps == Some(0) {
            bail!("max_steps must be positive");
        }
        if self.dataset.n_steps == Some(0) || self.dataset.reset_every == Some(0) {
            bail!("dataset n_steps and reset_every must be positive");
        }
        self.ppo().validate()?;
        self.network(0).geometries()?;
        Ok(())
    }

    pub fn ppo(&self) -> PpoConfig {
        let d = PpoConfig::default();
        let p = &self.ppo;
        PpoConfig {
            learning_rate: p.learning_rate.unwrap_or(d.learning_rate),
            n_steps: p.n_steps.unwrap_or(d.n_steps),
            batch_size: p.batch_size.unwrap_or(d.batch_size),
            n_epochs: p.n_epochs.unwrap_or(d.n_epochs),
            gamma: p.gamma.unwrap_or(d.gamma),
            gae_lambda: p.gae_lambda.unwrap_or(d.gae_lambda),
            clip_range: p.clip_range.unwrap_or(d.clip_range),
            ent_coef: p.ent_coef.unwrap_or(d.ent_coef),
            vf_coef: p.vf_coef.unwrap_or(d.vf_coef),
            max_grad_norm: p.max_grad_norm.unwrap_or(d.max_grad_norm),
        }
    }

    /// Network configuration; `seed` is used unless the file sets one.
    pub fn network(&self, seed: u64) -> NetworkConfig {
        let seed = self.hsfa.seed.unwrap_or(seed);
        let mut net = NetworkConfig::standard(seed);
        let node = |s: &NodeSection, d: NodeParams, k: u64| NodeParams {
            mid_dim: s.mid_dim.unwrap_or(d.mid_dim),
            out_dim: s.out_dim.unwrap_or(d.out_dim),
            noise_std: s.noise_std.unwrap_or(d.noise_std),
            clip_bound: s.clip_bound.unwrap_or(d.clip_bound),
            rank_tol: d.rank_tol,
            seed: seed.wrapping_add(k),
        };
        if let Some(layers) = &self.hsfa.layers {
            net.layers = layers
                .iter()
                .enumerate()
                .map(|(k, l)| LayerSpec {
                    rf: (l.rf[0], l.rf[1]),
                    stride: (l.stride[0], l.stride[1]),
                    node: node(&l.node(), NodeParams::default(), k as u64),
                })
                .collect();
        }
        let top = self.hsfa.top.unwrap_or_default();
        net.top = node(&top, net.top, net.layers.len() as u64);
        net
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.ppo(), PpoConfig::default());
        assert_eq!(cfg.network(3), NetworkConfig::standard(3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("layuot = \"fourrooms\"").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[ppo]\nlr = 0.1").is_err());
    }

    #[test]
    fn sections_override_defaults() {
        let text = r#"
            layout = "wallgap"
            [ppo]
            clip_range = 0.2
            [hsfa]
            seed = 7
            layers = [{ rf = [10, 10], stride = [5, 5], out_dim = 16 }]
            top = { out_dim = 8 }
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.ppo().clip_range, 0.2);
        let net = cfg.network(0);
        assert_eq!(net.layers.len(), 1);
        assert_eq!(net.layers[0].node.out_dim, 16);
        assert_eq!(net.layers[0].node.seed, 7);
        assert_eq!(net.top.out_dim, 8);
        assert_eq!(net.top.seed, 8);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let cfg: ExperimentConfig = toml::from_str("[ppo]\nclip_range = 1.5").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: ExperimentConfig = toml::from_str("layout = \"maze\"").unwrap();
        assert!(cfg.validate().is_err());
    }
}
