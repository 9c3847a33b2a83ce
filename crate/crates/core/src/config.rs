//! Pipeline configuration (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AcquisitionGeometry, ElevationGrid};
use crate::heightfusion::FusionConfig;
use crate::inversion::SelectionConfig;
use crate::io::sha256_hex;
use crate::nonlocal::FilterConfig;
use crate::simulator::{NoiseSpec, SceneSpec};
use crate::stack::PixelSpacing;
use crate::validation::{ComparisonConfig, FractionBasis, RegistrationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub wavelength: f64,
    pub slant_range: f64,
    /// Along-track position of each pair's master (m).
    pub masters: Vec<f64>,
    /// Bistatic baseline of each pair (m).
    pub baselines: Vec<f64>,
}

impl GeometryConfig {
    pub fn build(&self) -> Result<AcquisitionGeometry> {
        AcquisitionGeometry::from_arrays(self.wavelength, self.slant_range, &self.masters, &self.baselines)
    }
}

/// Elevation grid; unset bounds follow the scene, unset spacing is the
/// default fraction of the Rayleigh resolution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub spacing: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub truncation: f64,
    pub bin_width: f64,
    pub fraction_basis: FractionBasis,
    pub coregister: bool,
    pub registration: RegistrationConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        let c = ComparisonConfig::default();
        Self {
            truncation: c.truncation,
            bin_width: c.bin_width,
            fraction_basis: c.fraction_basis,
            coregister: true,
            registration: RegistrationConfig::default(),
        }
    }
}

impl ValidationConfig {
    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            truncation: self.truncation,
            bin_width: self.bin_width,
            fraction_basis: self.fraction_basis,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for parallel stages; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub pixel_spacing: Option<PixelSpacing>,
    pub scene: SceneSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub inversion: SelectionConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks every section before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        let geometry = self.geometry.build().map_err(wrap)?;
        self.grid(&geometry).map_err(wrap)?;
        self.filter.validate().map_err(wrap)?;
        self.inversion.validate().map_err(wrap)?;
        self.fusion.validate().map_err(wrap)?;
        self.fusion.loss_spec(1.0).validate().map_err(wrap)?;
        self.validation.registration.validate().map_err(wrap)?;
        if !(self.validation.truncation > 0.0 && self.validation.bin_width > 0.0) {
            return Err(Error::Config("validation truncation and bin_width must be > 0".into()));
        }
        if let Some(s) = self.pixel_spacing {
            if !(s.range > 0.0 && s.azimuth > 0.0) {
                return Err(Error::Config("pixel spacing must be positive".into()));
            }
        }
        if (self.fusion.incidence_angle_deg - self.scene.incidence_angle_deg).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "fusion incidence angle {} differs from scene incidence angle {}",
                self.fusion.incidence_angle_deg, self.scene.incidence_angle_deg
            )));
        }
        if self.scene.width == 0 || self.scene.height == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<AcquisitionGeometry> {
        self.geometry.build()
    }

    pub fn pixel_spacing(&self) -> PixelSpacing {
        self.pixel_spacing.unwrap_or_default()
    }

    pub fn grid(&self, geometry: &AcquisitionGeometry) -> Result<ElevationGrid> {
        let min = self.grid.min.unwrap_or(self.scene.elevation_min);
        let max = self.grid.max.unwrap_or(self.scene.elevation_max);
        match self.grid.spacing {
            Some(s) => ElevationGrid::covering(min, max, s),
            None => ElevationGrid::for_geometry(geometry, min, max),
        }
    }

    /// Hash of everything except execution settings (workers, output dir).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.out = PathBuf::new();
        section_hash(&c)
    }
}

/// SHA-256 of the canonical JSON encoding of a section.
pub fn section_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config sections serialize"))
}
