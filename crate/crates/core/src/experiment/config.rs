use std::path::Path;

use crate::agents::RewardConfig;
use crate::dataset::DatasetSize;
use crate::error::{Error, Result};
use crate::eval::EvalThresholds;
use crate::kv::{self, KvFields};
use crate::losses::LossParams;
use crate::matching::MatchConfig;
use crate::model::{ModelDims, Variant};
use crate::pose::RansacConfig;
use crate::synth::SceneSpec;

/// Settings of the planted informative-query experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub m: usize,
    pub k: usize,
    pub channels: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Step size on the scores in warm-up epochs.
    pub lr_warmup: f64,
    /// Step size on the scores in reward-guided epochs.
    pub lr_reward: f64,
    pub runs: usize,
    /// A run counts as a recovery when at least this many planted queries
    /// end up selected.
    pub min_recovered: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            m: 32,
            k: 12,
            channels: 32,
            epochs: 50,
            steps_per_epoch: 20,
            lr_warmup: 0.05,
            lr_reward: 0.5,
            runs: 20,
            min_recovered: 10,
        }
    }
}

crate::kv::kv_fields!(PlantedConfig {
    "m" => m,
    "k" => k,
    "channels" => channels,
    "epochs" => epochs,
    "steps_per_epoch" => steps_per_epoch,
    "lr_warmup" => lr_warmup,
    "lr_reward" => lr_reward,
    "runs" => runs,
    "min_recovered" => min_recovered,
});

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub k: usize,
    pub m: usize,
    pub n_layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub phase: bool,
    pub rai: bool,
    pub tri: bool,
    pub topk: bool,
    pub adaptor_hidden: usize,
    pub init_gain: f64,
    pub adaptor_gain: f64,
    pub pos_encoding: bool,
    /// Patch/superpoint overlap at or above which a coarse pair is a
    /// training positive.
    pub coarse_pos_overlap: f64,
    /// Seeds of the ablation grid.
    pub ablate_seeds: usize,
    pub reward: RewardConfig,
    pub loss: LossParams,
    pub matching: MatchConfig,
    pub ransac: RansacConfig,
    pub eval: EvalThresholds,
    pub scene: SceneSpec,
    pub data: DatasetSize,
    pub planted: PlantedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let v = Variant::M8;
        ExperimentConfig {
            seed: 7,
            k: 12,
            m: 32,
            n_layers: 3,
            epochs: 50,
            lr: 1e-2,
            phase: v.phase,
            rai: v.rai,
            tri: v.tri,
            topk: v.topk,
            adaptor_hidden: 8,
            init_gain: 0.5,
            adaptor_gain: 0.5,
            pos_encoding: false,
            coarse_pos_overlap: 0.3,
            ablate_seeds: 3,
            reward: RewardConfig::default(),
            loss: LossParams::default(),
            matching: MatchConfig::default(),
            ransac: RansacConfig::default(),
            eval: EvalThresholds::default(),
            scene: SceneSpec::default(),
            data: DatasetSize::default(),
            planted: PlantedConfig::default(),
        }
    }
}

crate::kv::kv_fields!(ExperimentConfig {
    "seed" => seed,
    "k" => k,
    "m" => m,
    "n_layers" => n_layers,
    "epochs" => epochs,
    "lr" => lr,
    "phase" => phase,
    "rai" => rai,
    "tri" => tri,
    "topk" => topk,
    "adaptor_hidden" => adaptor_hidden,
    "init_gain" => init_gain,
    "adaptor_gain" => adaptor_gain,
    "pos_encoding" => pos_encoding,
    "coarse_pos_overlap" => coarse_pos_overlap,
    "ablate_seeds" => ablate_seeds,
});

impl ExperimentConfig {
    fn sections(&mut self) -> [(&'static str, &mut dyn KvFields); 8] {
        [
            ("reward.", &mut self.reward),
            ("loss.", &mut self.loss),
            ("match.", &mut self.matching),
            ("ransac.", &mut self.ransac),
            ("eval.", &mut self.eval),
            ("scene.", &mut self.scene),
            ("data.", &mut self.data),
            ("planted.", &mut self.planted),
        ]
    }

    /// Defaults overridden by `key = value` lines. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = ExperimentConfig::default();
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; an unreadable file is a config error.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.kv_set(key, value)? {
            return Ok(());
        }
        for (prefix, section) in self.sections() {
            if let Some(rest) = key.strip_prefix(prefix) {
                if section.kv_set(rest, value)? {
                    return Ok(());
                }
            }
        }
        Err(Error::Config(format!("unknown config key {key:?}")))
    }

    /// Every key with its current value, in a fixed order.
    pub fn render(&self) -> String {
        let mut entries: Vec<(String, String)> = self
            .kv_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let mut copy = *self;
        for (prefix, section) in copy.sections() {
            entries.extend(
                section
                    .kv_pairs()
                    .into_iter()
                    .map(|(k, v)| (format!("{prefix}{k}"), v)),
            );
        }
        kv::render(&entries)
    }

    pub fn variant(&self) -> Variant {
        Variant {
            phase: self.phase,
            rai: self.rai,
            tri: self.tri,
            topk: self.topk,
        }
    }

    pub fn set_variant(&mut self, v: Variant) {
        self.phase = v.phase;
        self.rai = v.rai;
        self.tri = v.tri;
        self.topk = v.topk;
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            channels: self.scene.feature_dim,
            m: self.m,
            k: self.k,
            n_layers: self.n_layers,
            adaptor_hidden: self.adaptor_hidden,
            init_gain: self.init_gain,
            adaptor_gain: self.adaptor_gain,
            pos_encoding: self.pos_encoding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.k > self.m {
            return bad(format!("need 1 <= k={} <= m={}", self.k, self.m));
        }
        if self.n_layers == 0 || self.adaptor_hidden == 0 {
            return bad("n_layers and adaptor_hidden must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        if !(self.init_gain >= 0.0 && self.adaptor_gain >= 0.0) {
            return bad("gains must be non-negative".into());
        }
        if !(self.coarse_pos_overlap > 0.0 && self.coarse_pos_overlap <= 1.0) {
            return bad("coarse_pos_overlap must lie in (0, 1]".into());
        }
        if self.ablate_seeds == 0 {
            return bad("ablate_seeds must be positive".into());
        }
        if self.tri && !self.rai {
            return bad("tri needs rai: the schedule selects agents".into());
        }
        if self.topk && !self.rai {
            return bad("topk needs rai: the schedule selects agents".into());
        }
        let p = &self.planted;
        if p.k == 0 || p.k > p.m || p.channels <= p.k || p.runs == 0 || p.min_recovered > p.k {
            return bad("planted task needs 1 <= k <= m, channels > k, runs > 0, min_recovered <= k".into());
        }
        if !(p.lr_warmup > 0.0 && p.lr_reward > 0.0) {
            return bad("planted step sizes must be positive".into());
        }
        self.reward.validate()?;
        self.loss.validate()?;
        self.matching.validate()?;
        self.ransac.validate()?;
        self.eval.validate()?;
        self.scene.validate()?;
        if self.data.scenes == 0 {
            return bad("data.scenes must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ExperimentConfig::default();
        let text = cfg.render();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
        assert!(text.contains("reward.tau = 20.0"));
        assert!(text.contains("k = 12"));
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg = ExperimentConfig::parse("epochs = 30\nreward.beta_mask = 0.5\nscene.grid_rows = 4\n").unwrap();
        assert_eq!(cfg.epochs, 30);
        assert_eq!(cfg.reward.beta_mask, 0.5);
        assert_eq!(cfg.scene.grid_rows, 4);
        for bad in [
            "nope = 1\n",
            "reward.nope = 1\n",
            "k = twelve\n",
            "k = 40\n",
            "epochs = 1\nepochs = 2\n",
            "just text\n",
            "reward.beta_mask = 1.0\n",
        ] {
            assert!(matches!(ExperimentConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
