//! Layered configuration: defaults, then config files, then explicit overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EngineConfig;
use crate::quality::AuditThresholds;

/// Environment variable naming an optional config file.
pub const CONFIG_ENV: &str = "PCCSE_CONFIG";

/// A config layer; every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub delta: Option<f64>,
    pub presence_threshold: Option<f64>,
    pub kappa: Option<f64>,
    pub canonical_height: Option<f64>,
    pub hand_foot_radius_factor: Option<f64>,
    pub audit: Option<AuditLayer>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditLayer {
    pub bone_distance_max: Option<f64>,
    pub mask_in_bbox_min: Option<f64>,
    pub points_in_mask_min: Option<f64>,
}

impl ConfigLayer {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), "config", e.to_string()))
    }
}

/// Fully resolved settings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Settings {
    pub engine: EngineConfig,
    pub audit: AuditThresholds,
    /// The canonical height came from a config layer rather than the default,
    /// so it takes precedence over the mesh file's value.
    pub canonical_height_overridden: bool,
}

impl Settings {
    /// Applies one layer on top of the current values.
    pub fn apply(&mut self, layer: &ConfigLayer) {
        let e = &mut self.engine;
        if let Some(v) = layer.delta {
            e.delta = v;
        }
        if let Some(v) = layer.presence_threshold {
            e.presence_threshold = v;
        }
        if let Some(v) = layer.kappa {
            e.kappa = v;
        }
        if let Some(v) = layer.canonical_height {
            e.canonical_height = v;
            self.canonical_height_overridden = true;
        }
        if let Some(v) = layer.hand_foot_radius_factor {
            e.hand_foot_radius_factor = v;
        }
        if let Some(a) = &layer.audit {
            if let Some(v) = a.bone_distance_max {
                self.audit.bone_distance_max = v;
            }
            if let Some(v) = a.mask_in_bbox_min {
                self.audit.mask_in_bbox_min = v;
            }
            if let Some(v) = a.points_in_mask_min {
                self.audit.points_in_mask_min = v;
            }
        }
    }

    /// Defaults, then the file named by `PCCSE_CONFIG`, then `file`, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &ConfigLayer) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(env) = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()) {
            s.apply(&ConfigLayer::load(Path::new(&env))?);
        }
        if let Some(f) = file {
            s.apply(&ConfigLayer::load(f)?);
        }
        s.apply(overrides);
        s.validate()?;
        Ok(s)
    }

    /// Uses the mesh's canonical height unless a layer set one explicitly.
    pub fn with_mesh_height(mut self, mesh_height: Option<f64>) -> Self {
        if let (false, Some(h)) = (self.canonical_height_overridden, mesh_height) {
            self.engine.canonical_height = h;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        let a = &self.audit;
        if !(a.bone_distance_max.is_finite() && a.bone_distance_max >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "audit.bone_distance_max must be >= 0, got {}",
                a.bone_distance_max
            )));
        }
        for (name, v) in [
            ("audit.mask_in_bbox_min", a.mask_in_bbox_min),
            ("audit.points_in_mask_min", a.points_in_mask_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_layers_win() {
        let mut s = Settings::default();
        s.apply(&ConfigLayer {
            delta: Some(0.1),
            kappa: Some(0.3),
            ..Default::default()
        });
        s.apply(&ConfigLayer {
            delta: Some(0.05),
            ..Default::default()
        });
        assert_eq!(s.engine.delta, 0.05);
        assert_eq!(s.engine.kappa, 0.3);
        assert!(!s.canonical_height_overridden);
        assert_eq!(s.with_mesh_height(Some(1.8)).engine.canonical_height, 1.8);
    }

    #[test]
    fn explicit_height_beats_mesh() {
        let mut s = Settings::default();
        s.apply(&ConfigLayer {
            canonical_height: Some(1.6),
            ..Default::default()
        });
        assert_eq!(s.with_mesh_height(Some(1.8)).engine.canonical_height, 1.6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ConfigLayer>(r#"{"delt": 1}"#).is_err());
        let l: ConfigLayer = serde_json::from_str(r#"{"audit": {"mask_in_bbox_min": 0.5}}"#).unwrap();
        let mut s = Settings::default();
        s.apply(&l);
        assert_eq!(s.audit.mask_in_bbox_min, 0.5);
    }

    #[test]
    fn invalid_audit_threshold() {
        let mut s = Settings::default();
        s.audit.points_in_mask_min = 1.5;
        assert!(s.validate().is_err());
    }
}
