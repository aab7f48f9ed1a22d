//! The single JSON run configuration with per-block sections.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentParams;
use crate::baselines::VariogramKind;
use crate::error::Result;
use crate::scene::{EnvLabel, GridSpec, NormBounds, OracleParams, SceneGenConfig};

/// Name of the environment variable that overrides the config seed.
pub const SEED_ENV_VAR: &str = "RADIOLAM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneSection,
    pub augment: AugmentParams,
    pub generation: GenerationSection,
    pub election: ElectionSection,
    pub baselines: BaselinesSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSection {
    pub grid: GridSpec,
    pub envs: Vec<EnvLabel>,
    pub scenes_per_env: usize,
    pub k_samples: usize,
    pub freq_mhz: f64,
    pub tx_count_min: usize,
    pub tx_count_max: usize,
    pub tx_power_dbm_min: f64,
    pub tx_power_dbm_max: f64,
    pub tx_height_m_min: f64,
    pub tx_height_m_max: f64,
    pub oracle: OracleParams,
    pub bounds: NormBounds,
    pub terrain_amp_m: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        let g = SceneGenConfig::default();
        SceneSection {
            grid: g.grid,
            envs: EnvLabel::ALL.to_vec(),
            scenes_per_env: 40,
            k_samples: 16,
            freq_mhz: g.freq_mhz,
            tx_count_min: g.tx_count_min,
            tx_count_max: g.tx_count_max,
            tx_power_dbm_min: g.tx_power_dbm_min,
            tx_power_dbm_max: g.tx_power_dbm_max,
            tx_height_m_min: g.tx_height_m_min,
            tx_height_m_max: g.tx_height_m_max,
            oracle: g.oracle,
            bounds: g.bounds,
            terrain_amp_m: g.terrain_amp_m,
        }
    }
}

impl SceneSection {
    pub fn gen_config(&self, env: EnvLabel) -> SceneGenConfig {
        SceneGenConfig {
            grid: self.grid.clone(),
            env_label: env,
            freq_mhz: self.freq_mhz,
            tx_count_min: self.tx_count_min,
            tx_count_max: self.tx_count_max,
            tx_power_dbm_min: self.tx_power_dbm_min,
            tx_power_dbm_max: self.tx_power_dbm_max,
            tx_height_m_min: self.tx_height_m_min,
            tx_height_m_max: self.tx_height_m_max,
            oracle: self.oracle,
            bounds: self.bounds,
            terrain_amp_m: self.terrain_amp_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSection {
    pub t_max: usize,
    pub beta_1: f64,
    pub beta_t: f64,
    pub ddim_steps: usize,
    pub candidates: usize,
    pub guidance: f64,
    pub lr: f64,
    pub shared_epochs: usize,
    pub domain_epochs: usize,
    pub router_epochs: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            t_max: 200,
            beta_1: 1e-4,
            beta_t: 0.02,
            ddim_steps: 10,
            candidates: 16,
            guidance: 0.8,
            lr: 1e-3,
            shared_epochs: 18,
            domain_epochs: 18,
            router_epochs: 30,
            finetune_epochs: 3,
            finetune_lr: 2e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElectionSection {
    pub rounds: usize,
    pub sigma0: f64,
    pub delta_sigma: f64,
    pub sigma_max: f64,
    /// Fixed variance threshold; when absent, the first round's observed
    /// variance calibrates it for the rest of the run.
    pub var_threshold: Option<f64>,
}

impl Default for ElectionSection {
    fn default() -> Self {
        ElectionSection {
            rounds: 1,
            sigma0: 0.05,
            delta_sigma: 0.05,
            sigma_max: 0.3,
            var_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselinesSection {
    pub variogram: VariogramKind,
    pub bins: usize,
}

impl Default for BaselinesSection {
    fn default() -> Self {
        BaselinesSection { variogram: VariogramKind::Exponential, bins: 12 }
    }
}

impl RunConfig {
    /// Load from JSON, honoring the `RADIOLAM_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(crate::error::Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg: RunConfig = serde_json::from_slice(&fs::read(path)?)?;
        cfg.apply_seed_override();
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self) {
        if let Ok(v) = std::env::var(SEED_ENV_VAR) {
            if let Ok(seed) = v.trim().parse::<u64>() {
                self.seed = seed;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_partial_json_fills_in() {
        let cfg = RunConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        cfg.save(&p).unwrap();
        let loaded = RunConfig::load(&p).unwrap();
        assert_eq!(cfg, loaded);

        let partial = r#"{ "seed": 7, "generation": { "candidates": 4 } }"#;
        fs::write(&p, partial).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.generation.candidates, 4);
        assert_eq!(c.generation.t_max, 200);
    }
}
