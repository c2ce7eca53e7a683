//! Run configuration. Every section and key is optional; absent keys take
//! the defaults below, unknown keys are rejected.

use std::path::{Path, PathBuf};

use mwslc::coding::CodingKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scene: SceneSection,
    pub array: ArraySection,
    pub stft: StftSection,
    pub coding: CodingSection,
    pub conditioning: ConditioningSection,
    pub decode: DecodeSection,
    pub beamform: BeamformSection,
    pub metrics: MetricsSection,
    pub estimator: EstimatorSection,
    pub pipeline: PipelineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            scene: SceneSection::default(),
            array: ArraySection::default(),
            stft: StftSection::default(),
            coding: CodingSection::default(),
            conditioning: ConditioningSection::default(),
            decode: DecodeSection::default(),
            beamform: BeamformSection::default(),
            metrics: MetricsSection::default(),
            estimator: EstimatorSection::default(),
            pipeline: PipelineSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub doas_deg: Vec<f64>,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub distance_m: f64,
    pub span_deg: f64,
    pub min_gap_deg: f64,
    pub array_center_m: [f64; 3],
    pub room: Option<RoomSection>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            doas_deg: vec![60.0, 200.0],
            duration_s: 2.0,
            sample_rate_hz: 16_000,
            distance_m: 1.5,
            span_deg: 360.0,
            min_gap_deg: 15.0,
            array_center_m: [0.0, 0.0, 0.0],
            room: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSection {
    pub dims_m: [f64; 3],
    pub absorption: f64,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArraySection {
    pub mic_count: usize,
    pub spacing_m: f64,
    pub speed_of_sound: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            mic_count: 4,
            spacing_m: 0.05,
            speed_of_sound: 343.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSection {
    pub win_len: usize,
    pub hop: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        Self { win_len: 512, hop: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindName {
    Sbc,
    Slc,
    MwSbc,
    MwSlc,
    MwSlcSum,
}

impl KindName {
    pub fn kind(self) -> CodingKind {
        match self {
            KindName::Sbc => CodingKind::Sbc,
            KindName::Slc => CodingKind::Slc,
            KindName::MwSbc => CodingKind::MwSbc,
            KindName::MwSlc => CodingKind::MwSlc,
            KindName::MwSlcSum => CodingKind::MwSlcSum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodingSection {
    pub kind: KindName,
    pub theta_count: usize,
    pub sigma_deg: f64,
    pub eps_m_db: f64,
}

impl Default for CodingSection {
    fn default() -> Self {
        Self {
            kind: KindName::MwSlc,
            theta_count: 720,
            sigma_deg: 6.0,
            eps_m_db: -35.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditioningSection {
    pub theta_counts: Vec<usize>,
}

impl Default for ConditioningSection {
    fn default() -> Self {
        Self {
            theta_counts: vec![90, 180, 360, 720, 1440],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    /// Fixed detection threshold. When absent, the pipeline calibrates one.
    pub eps_theta: Option<f64>,
    pub delta_theta_deg: f64,
    pub min_support_frac: f64,
    pub calibration_candidates: Vec<f64>,
    pub calibration_scenes: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            eps_theta: None,
            delta_theta_deg: 6.0,
            min_support_frac: 0.05,
            calibration_candidates: (1..20).map(|i| f64::from(i) * 0.05).collect(),
            calibration_scenes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamformSection {
    pub loading: f64,
    pub block_frames: Option<usize>,
}

impl Default for BeamformSection {
    fn default() -> Self {
        Self {
            loading: 1e-6,
            block_frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub tolerance_deg: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { tolerance_deg: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub target: KindName,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub output_bias_init: f64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub duration_s: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            target: KindName::MwSlc,
            hidden_dim: 64,
            learning_rate: 0.001,
            decay_factor: 0.63,
            decay_every: 10,
            epochs: 100,
            batch_size: 5,
            patience: 10,
            output_bias_init: 0.0,
            train_scenes: 5,
            val_scenes: 2,
            duration_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    Oracle,
    Corrupted,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub mode: PipelineMode,
    pub noise_std: f64,
    pub blur_cells: usize,
    /// Trained estimator parameters for `estimated` mode.
    pub params: Option<PathBuf>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            mode: PipelineMode::Oracle,
            noise_std: 0.05,
            blur_cells: 0,
            params: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Canonical text used for the report hash.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.scene.doas_deg.is_empty() {
            return bad("scene.doas_deg must list at least one direction".into());
        }
        if !(self.scene.duration_s > 0.0) {
            return bad("scene.duration_s must be positive".into());
        }
        if self.coding.theta_count < 2 {
            return bad("coding.theta_count must be at least 2".into());
        }
        if !(self.coding.sigma_deg > 0.0) {
            return bad("coding.sigma_deg must be positive".into());
        }
        if let Some(e) = self.decode.eps_theta {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("decode.eps_theta {e} outside (0, 1)"));
            }
        }
        if self.decode.calibration_candidates.is_empty() {
            return bad("decode.calibration_candidates must not be empty".into());
        }
        if self.decode.calibration_scenes == 0 {
            return bad("decode.calibration_scenes must be positive".into());
        }
        if self.estimator.train_scenes == 0 || self.estimator.val_scenes == 0 {
            return bad("estimator needs at least one training and one validation scene".into());
        }
        Ok(())
    }
}
