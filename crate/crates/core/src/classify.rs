//! Dot-density factory classifier.

use serde::{Deserialize, Serialize};

use crate::dataset::Factory;
use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubClassifierConfig {
    pub density_threshold: f64,
    pub dark_cutoff: u8,
}

/// Midpoint fitted on unblurred synthetic crops of both styles.
impl Default for StubClassifierConfig {
    fn default() -> Self {
        Self {
            density_threshold: 0.08,
            dark_cutoff: DEFAULT_DARK_CUTOFF,
        }
    }
}

/// Gray level below which a pixel counts as ink.
pub const DEFAULT_DARK_CUTOFF: u8 = 80;

impl StubClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density_threshold > 0.0 && self.density_threshold < 1.0) {
            return Err(Error::Config(format!(
                "density_threshold must lie in (0, 1), got {}",
                self.density_threshold
            )));
        }
        Ok(())
    }
}

pub trait ClassifierAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn classify(&self, crop: &ImageBuffer) -> Result<Factory>;
}

/// Fraction of dark pixels inside the bounding box of all dark pixels of the
/// crop, i.e. over the printed code rather than over the crop margin. A crop
/// without dark pixels has density 0.
pub fn dot_density(crop: &ImageBuffer, dark_cutoff: u8) -> f64 {
    let gray = crop.luma_u8();
    let w = crop.width() as usize;
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    let mut dark = 0usize;
    for (i, &g) in gray.iter().enumerate() {
        if g < dark_cutoff {
            dark += 1;
            let (x, y) = (i % w, i / w);
            bbox = Some(match bbox {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    match bbox {
        None => 0.0,
        Some((x0, y0, x1, y1)) => dark as f64 / ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64,
    }
}

/// F1 prints the denser dots: density at or above the threshold is F1.
pub fn stub_classify(config: &StubClassifierConfig, crop: &ImageBuffer) -> Result<Factory> {
    if crop.data().is_empty() {
        return Err(Error::EmptyCrop);
    }
    Ok(if dot_density(crop, config.dark_cutoff) >= config.density_threshold {
        Factory::F1
    } else {
        Factory::F2
    })
}

/// Threshold at the midpoint of the two class-mean densities.
pub fn stub_fit_densities(samples: &[(f64, Factory)], dark_cutoff: u8) -> Result<StubClassifierConfig> {
    let mean = |f: Factory| {
        let v: Vec<f64> = samples.iter().filter(|s| s.1 == f).map(|s| s.0).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    match (mean(Factory::F1), mean(Factory::F2)) {
        (Some(a), Some(b)) => Ok(StubClassifierConfig {
            density_threshold: (a + b) / 2.0,
            dark_cutoff,
        }),
        _ => Err(Error::SingleClassTrainingSet),
    }
}

pub fn stub_fit(crops: &[(ImageBuffer, Factory)], dark_cutoff: u8) -> Result<StubClassifierConfig> {
    let densities: Vec<(f64, Factory)> = crops
        .iter()
        .map(|(c, f)| (dot_density(c, dark_cutoff), *f))
        .collect();
    stub_fit_densities(&densities, dark_cutoff)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubClassifier {
    pub config: StubClassifierConfig,
}

impl StubClassifier {
    pub fn new(config: StubClassifierConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl ClassifierAdapter for StubClassifier {
    fn name(&self) -> &str {
        "stub"
    }

    fn classify(&self, crop: &ImageBuffer) -> Result<Factory> {
        stub_classify(&self.config, crop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_crop_is_f2() {
        let cfg = StubClassifierConfig::default();
        let crop = ImageBuffer::filled(20, 10, [255; 3]);
        assert_eq!(dot_density(&crop, cfg.dark_cutoff), 0.0);
        assert_eq!(stub_classify(&cfg, &crop).unwrap(), Factory::F2);
    }

    #[test]
    fn density_is_measured_over_the_inked_box() {
        // 2 dark pixels spanning a 3x1 box inside a large white margin
        let mut crop = ImageBuffer::filled(30, 30, [255; 3]);
        crop.put_pixel(10, 10, [0; 3]);
        crop.put_pixel(12, 10, [0; 3]);
        assert!((dot_density(&crop, 80) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn midpoint_threshold() {
        let cfg = stub_fit_densities(&[(0.30, Factory::F1), (0.10, Factory::F2)], 80).unwrap();
        assert!((cfg.density_threshold - 0.20).abs() < 1e-12);
        let again = stub_fit_densities(&[(0.30, Factory::F1), (0.10, Factory::F2)], 80).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            stub_fit_densities(&[(0.3, Factory::F1), (0.2, Factory::F1)], 80),
            Err(Error::SingleClassTrainingSet)
        ));
    }

    #[test]
    fn threshold_validation() {
        assert!(StubClassifier::new(StubClassifierConfig {
            density_threshold: 1.0,
            dark_cutoff: 80
        })
        .is_err());
    }
}
