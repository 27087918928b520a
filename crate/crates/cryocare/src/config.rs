//! Versioned TOML run configuration.
//!
//! Every section has defaults, so a config only needs the keys it changes.
//! Unknown keys are rejected. `validate` runs before any work is done.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cryocare_core::downstream::Connectivity;
use cryocare_core::nn::{AdamConfig, TrainConfig, UNetConfig};
use cryocare_core::pairing::Scheme;
use cryocare_core::phantom::{dose_symmetric, tilt_range, AcquisitionSpec, DensityLevels, PhantomSpec};
use cryocare_core::Rng;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEMO: &str = include_str!("../configs/demo.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("schema_version {0} is not supported (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub phantom: PhantomSection,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub segmentation: SegmentationSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

fn default_scheme() -> String {
    Scheme::T2tDf.as_str().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    /// `[nz, ny, nx]`
    pub shape: [usize; 3],
    pub membranes: usize,
    pub filaments: usize,
    pub blobs: usize,
    pub blob_radius: [f64; 2],
    pub background: f32,
    pub membrane_density: f32,
    pub filament_density: f32,
    pub blob_density: f32,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let s = PhantomSpec::default();
        let d = s.density_levels;
        Self {
            shape: s.shape,
            membranes: s.n_membranes,
            filaments: s.n_filaments,
            blobs: s.n_blobs,
            blob_radius: [s.blob_radius_range.0, s.blob_radius_range.1],
            background: d.background,
            membrane_density: d.membrane,
            filament_density: d.filament,
            blob_density: d.blob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiltOrder {
    Sequential,
    DoseSymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSection {
    /// Largest tilt magnitude in degrees; tilts cover `[-max_tilt, max_tilt]`.
    pub max_tilt: f64,
    pub tilt_step: f64,
    pub order: TiltOrder,
    pub frames_per_tilt: usize,
    pub dose_per_frame: f64,
    pub readout_sigma: f64,
    pub drift_per_frame: [f64; 2],
    pub contrast: f64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        let a = AcquisitionSpec::default();
        Self {
            max_tilt: 60.0,
            tilt_step: 2.0,
            order: TiltOrder::Sequential,
            frames_per_tilt: a.frames_per_tilt,
            dose_per_frame: 5.0,
            readout_sigma: a.readout_sigma,
            drift_per_frame: a.drift_per_frame,
            contrast: a.contrast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub depth: usize,
    pub kernel: usize,
    /// Channels of the first level for projection (2D) schemes.
    pub base_channels_2d: usize,
    /// Channels of the first level for tomogram (3D) schemes.
    pub base_channels_3d: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            depth: 2,
            kernel: 3,
            base_channels_2d: 8,
            base_channels_3d: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    /// Edge of the cubic training patches cut from tomogram pairs.
    pub patch: usize,
    /// Patch pairs per tomogram pair; both orderings are used.
    pub patches: usize,
    /// Edge of the prediction tiles.
    pub tile: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: 8,
            batch_size: 4,
            learning_rate: t.adam.learning_rate,
            validation_fraction: t.validation_fraction,
            patch: 32,
            patches: 60,
            tile: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationSection {
    pub base_channels: usize,
    pub epochs: usize,
    pub patch: usize,
    pub patches: usize,
    pub min_sizes: Vec<usize>,
    pub connectivity: u32,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        Self {
            base_channels: 8,
            epochs: 8,
            patch: 24,
            patches: 80,
            min_sizes: vec![0, 5, 10, 20, 30, 40, 60, 80, 100, 150],
            connectivity: 26,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Median,
    Nad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub kind: FilterKind,
    pub median_radius: usize,
    pub nad_steps: usize,
    pub nad_dt: f64,
    /// Edge threshold; the robust gradient scale of the input when absent.
    pub nad_lambda: Option<f64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            kind: FilterKind::Nad,
            median_radius: 1,
            nad_steps: 10,
            nad_dt: 0.1,
            nad_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub shell_width: f64,
    pub fsc_band: [f64; 2],
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            shell_width: 1.0,
            fsc_band: [0.1, 0.3],
        }
    }
}

/// Independent seeds for each stage, derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub phantom: u64,
    pub acquisition: u64,
    pub training: u64,
    pub patches: u64,
    pub segmentation: u64,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `demo` selects the bundled demo configuration.
    pub fn load(source: &str) -> Result<Self, ConfigError> {
        if source == "demo" {
            return Self::parse(DEMO);
        }
        let text = std::fs::read_to_string(Path::new(source)).map_err(|e| ConfigError::Io {
            path: source.to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        self.scheme.parse().map_err(|_| invalid(format!("unknown scheme {:?}", self.scheme)))
    }

    pub fn seeds(&self) -> Seeds {
        let root = Rng::new(self.seed);
        let s = |k| root.stream(k).next_u64();
        Seeds {
            phantom: s(0),
            acquisition: s(1),
            training: s(2),
            patches: s(3),
            segmentation: s(4),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version(self.schema_version));
        }
        self.scheme()?;
        self.phantom_spec().validate().map_err(|e| invalid(format!("phantom: {e}")))?;
        self.acquisition_spec()?
            .validate()
            .map_err(|e| invalid(format!("acquisition: {e}")))?;
        if self.acquisition.frames_per_tilt < 2 {
            return Err(invalid("acquisition: frame-based pairing needs at least 2 frames per tilt"));
        }
        for cfg in [self.unet(2), self.unet(3), self.segmenter_unet()] {
            cfg.validate().map_err(|e| invalid(format!("network: {e}")))?;
        }
        let g = self.unet(3).granularity();
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 || t.patches == 0 {
            return Err(invalid("training: epochs, batch_size and patches must be positive"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(invalid("training: learning_rate must be positive"));
        }
        if !(t.validation_fraction > 0.0 && t.validation_fraction < 1.0) {
            return Err(invalid("training: validation_fraction must lie in (0, 1)"));
        }
        if t.patch == 0 || t.patch % g != 0 || t.tile == 0 || t.tile % g != 0 {
            return Err(invalid(format!("training: patch and tile must be positive multiples of {g}")));
        }
        if t.patch > *self.phantom.shape.iter().min().unwrap() {
            return Err(invalid("training: patch exceeds the volume"));
        }
        let s = &self.segmentation;
        if s.epochs == 0 || s.patches == 0 || s.patch == 0 || s.patch % g != 0 {
            return Err(invalid(format!(
                "segmentation: epochs and patches must be positive, patch a multiple of {g}"
            )));
        }
        if s.min_sizes.is_empty() || s.min_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("segmentation: min_sizes must be nonempty and strictly ascending"));
        }
        Connectivity::from_code(s.connectivity).map_err(|e| invalid(format!("segmentation: {e}")))?;
        let f = &self.filter;
        if f.nad_steps == 0 || !(f.nad_dt > 0.0) {
            return Err(invalid("filter: nad_steps and nad_dt must be positive"));
        }
        if f.nad_lambda.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("filter: nad_lambda must be positive"));
        }
        let m = &self.metrics;
        if !(m.shell_width > 0.0) || !(0.0 <= m.fsc_band[0] && m.fsc_band[0] < m.fsc_band[1]) {
            return Err(invalid("metrics: shell_width must be positive and fsc_band ascending"));
        }
        Ok(())
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        let p = &self.phantom;
        PhantomSpec {
            shape: p.shape,
            n_membranes: p.membranes,
            n_filaments: p.filaments,
            n_blobs: p.blobs,
            blob_radius_range: (p.blob_radius[0], p.blob_radius[1]),
            density_levels: DensityLevels {
                background: p.background,
                membrane: p.membrane_density,
                filament: p.filament_density,
                blob: p.blob_density,
            },
            seed: self.seeds().phantom,
        }
    }

    pub fn angles(&self) -> Result<Vec<f64>, ConfigError> {
        let a = &self.acquisition;
        match a.order {
            TiltOrder::Sequential => tilt_range(-a.max_tilt, a.max_tilt, a.tilt_step),
            TiltOrder::DoseSymmetric => dose_symmetric(a.max_tilt, a.tilt_step),
        }
        .map_err(|e| invalid(format!("acquisition: {e}")))
    }

    pub fn acquisition_spec(&self) -> Result<AcquisitionSpec, ConfigError> {
        let a = &self.acquisition;
        Ok(AcquisitionSpec {
            angles: self.angles()?,
            frames_per_tilt: a.frames_per_tilt,
            dose_per_frame: a.dose_per_frame,
            readout_sigma: a.readout_sigma,
            drift_per_frame: a.drift_per_frame,
            contrast: a.contrast,
            noise: true,
            seed: self.seeds().acquisition,
        })
    }

    pub fn unet(&self, spatial_dims: usize) -> UNetConfig {
        let n = &self.network;
        UNetConfig {
            spatial_dims,
            depth: n.depth,
            kernel: n.kernel,
            base_channels: if spatial_dims == 2 { n.base_channels_2d } else { n.base_channels_3d },
        }
    }

    pub fn segmenter_unet(&self) -> UNetConfig {
        UNetConfig {
            base_channels: self.segmentation.base_channels,
            ..self.unet(3)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                ..AdamConfig::default()
            },
            validation_fraction: t.validation_fraction,
            seed: self.seeds().training,
            normalize_targets: true,
        }
    }

    pub fn segmenter_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.segmentation.epochs,
            seed: self.seeds().segmentation,
            normalize_targets: false,
            ..self.train_config()
        }
    }

    pub fn wedge_half_angle(&self) -> f64 {
        self.angles()
            .map(|a| a.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .unwrap_or(self.acquisition.max_tilt)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_parses_and_round_trips() {
        let c = PipelineConfig::load("demo").unwrap();
        let again = PipelineConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = PipelineConfig::parse("schema_version = 1").unwrap();
        assert_eq!(c.scheme().unwrap(), Scheme::T2tDf);
        assert_eq!(c.angles().unwrap().len(), 61);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(matches!(
            PipelineConfig::parse("schema_version = 1\nbogus = 3"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            PipelineConfig::parse("schema_version = 1\n[training]\nepoch = 3"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(PipelineConfig::parse("schema_version = 7"), Err(ConfigError::Version(7))));
        assert!(matches!(PipelineConfig::parse("seed = 1"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn rejects_inconsistent_values() {
        for bad in [
            "scheme = \"p2p-xx\"",
            "[training]\npatch = 30",
            "[segmentation]\nmin_sizes = [5, 5]",
            "[segmentation]\nconnectivity = 8",
            "[acquisition]\nframes_per_tilt = 1",
            "[network]\nkernel = 4",
        ] {
            let text = format!("schema_version = 1\n{bad}");
            assert!(matches!(PipelineConfig::parse(&text), Err(ConfigError::Invalid(_))), "{bad}");
        }
    }

    #[test]
    fn stage_seeds_differ_and_follow_the_run_seed() {
        let mut c = PipelineConfig::parse("schema_version = 1").unwrap();
        let a = c.seeds();
        c.seed = 1;
        let b = c.seeds();
        assert_ne!(a, b);
        assert_ne!(a.phantom, a.acquisition);
    }
}
