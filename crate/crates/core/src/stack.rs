//! Bistatic interferogram stacks: per layer a complex interferogram
//! (slave times conjugate master) and the two intensity channels.

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AcquisitionGeometry;
use crate::raster::Raster;

/// Ground sampling of the radar grid in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelSpacing {
    pub range: f64,
    pub azimuth: f64,
}

impl Default for PixelSpacing {
    fn default() -> Self {
        // TanDEM-X stripmap slant-range x azimuth resolution.
        Self {
            range: 1.2,
            azimuth: 3.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackLayer {
    pub interferogram: Raster<Complex32>,
    pub master_intensity: Raster<f32>,
    pub slave_intensity: Raster<f32>,
}

impl StackLayer {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            interferogram: Raster::filled(width, height, Complex32::new(0.0, 0.0)),
            master_intensity: Raster::filled(width, height, 0.0),
            slave_intensity: Raster::filled(width, height, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterferogramStack {
    geometry: AcquisitionGeometry,
    pixel_spacing: PixelSpacing,
    layers: Vec<StackLayer>,
}

impl InterferogramStack {
    pub fn new(
        geometry: AcquisitionGeometry,
        pixel_spacing: PixelSpacing,
        layers: Vec<StackLayer>,
    ) -> Result<Self> {
        if layers.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "{} layers for {} acquisitions",
                layers.len(),
                geometry.len()
            )));
        }
        let (w, h) = (
            layers[0].interferogram.width(),
            layers[0].interferogram.height(),
        );
        for layer in &layers {
            let ok = [
                (layer.interferogram.width(), layer.interferogram.height()),
                (layer.master_intensity.width(), layer.master_intensity.height()),
                (layer.slave_intensity.width(), layer.slave_intensity.height()),
            ]
            .iter()
            .all(|&d| d == (w, h));
            if !ok {
                return Err(Error::Dimension("stack layers differ in size".into()));
            }
        }
        Ok(Self {
            geometry,
            pixel_spacing,
            layers,
        })
    }

    pub fn geometry(&self) -> &AcquisitionGeometry {
        &self.geometry
    }

    pub fn pixel_spacing(&self) -> PixelSpacing {
        self.pixel_spacing
    }

    pub fn layers(&self) -> &[StackLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [StackLayer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn width(&self) -> usize {
        self.layers[0].interferogram.width()
    }

    pub fn height(&self) -> usize {
        self.layers[0].interferogram.height()
    }

    /// Interferogram samples of one pixel across all layers.
    pub fn pixel_vector(&self, row: usize, col: usize) -> Vec<Complex64> {
        self.layers
            .iter()
            .map(|l| {
                let z = l.interferogram.get(row, col);
                Complex64::new(z.re as f64, z.im as f64)
            })
            .collect()
    }

    /// Checks `I1, I2 >= 0` and `|z| <= sqrt(I1 I2)` up to a relative
    /// tolerance. Returns the worst coherence magnitude seen.
    pub fn check_invariants(&self, rel_tol: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for (n, layer) in self.layers.iter().enumerate() {
            for ((z, &i1), &i2) in layer
                .interferogram
                .data()
                .iter()
                .zip(layer.master_intensity.data())
                .zip(layer.slave_intensity.data())
            {
                if !(i1 >= 0.0 && i2 >= 0.0) || !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::Internal(format!(
                        "layer {n}: negative or non-finite sample"
                    )));
                }
                let bound = ((i1 as f64) * (i2 as f64)).sqrt();
                let mag = (z.re as f64).hypot(z.im as f64);
                if mag > bound * (1.0 + rel_tol) + 1e-30 {
                    return Err(Error::Internal(format!(
                        "layer {n}: |z| = {mag} exceeds sqrt(I1 I2) = {bound}"
                    )));
                }
                if bound > 0.0 {
                    worst = worst.max(mag / bound);
                }
            }
        }
        Ok(worst)
    }

    /// Transposes every image (rows <-> columns).
    pub fn transposed(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| StackLayer {
                interferogram: l.interferogram.transpose(),
                master_intensity: l.master_intensity.transpose(),
                slave_intensity: l.slave_intensity.transpose(),
            })
            .collect();
        Self {
            geometry: self.geometry.clone(),
            pixel_spacing: PixelSpacing {
                range: self.pixel_spacing.azimuth,
                azimuth: self.pixel_spacing.range,
            },
            layers,
        }
    }
}
