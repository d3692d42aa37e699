use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use super::descriptor::{DescriptorViolation, DriverDescriptor};

const BUILTIN: [(&str, &str); 2] = [
    ("gmp252.yaml", include_str!("../../drivers/gmp252.yaml")),
    ("alphatracer.yaml", include_str!("../../drivers/alphatracer.yaml")),
];

/// The documented driver template, shipped as a valid descriptor.
pub const TEMPLATE_YAML: &str = include_str!("../../drivers/template.yaml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("unknown sensor type {requested:?}; registered types: {}", known.join(", "))]
    UnknownSensorType { requested: String, known: Vec<String> },
    #[error("sensor type {0:?} is already registered")]
    AlreadyRegistered(String),
    #[error("descriptor {sensor_type:?} is invalid: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidDescriptor {
        sensor_type: String,
        violations: Vec<DescriptorViolation>,
    },
    #[error("cannot load descriptor {path}: {detail}")]
    Load { path: PathBuf, detail: String },
}

/// Sensor type → descriptor. Built once at startup, then shared read-only.
#[derive(Debug, Clone, Default)]
pub struct DriverRegistry {
    entries: BTreeMap<String, Arc<DriverDescriptor>>,
}

impl DriverRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding the shipped GMP252 and AlphaTRACER descriptors.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for (name, text) in BUILTIN {
            let d = DriverDescriptor::from_yaml(text)
                .unwrap_or_else(|e| panic!("shipped descriptor {name} does not parse: {e}"));
            r.register(d)
                .unwrap_or_else(|e| panic!("shipped descriptor {name} rejected: {e}"));
        }
        r
    }

    /// Adds a descriptor after validating it.
    pub fn register(&mut self, descriptor: DriverDescriptor) -> Result<(), RegistryError> {
        let key = descriptor.sensor_type.to_ascii_lowercase();
        let violations = descriptor.validate();
        if !violations.is_empty() {
            return Err(RegistryError::InvalidDescriptor {
                sensor_type: descriptor.sensor_type,
                violations,
            });
        }
        if self.entries.contains_key(&key) {
            return Err(RegistryError::AlreadyRegistered(key));
        }
        self.entries.insert(key, Arc::new(descriptor));
        Ok(())
    }

    pub fn register_yaml(&mut self, text: &str, origin: &Path) -> Result<(), RegistryError> {
        let d = DriverDescriptor::from_yaml(text).map_err(|e| RegistryError::Load {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        self.register(d)
    }

    /// Registers every `*.yaml` / `*.yml` file in `dir`, in file name order.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, RegistryError> {
        let load_err = |path: &Path, e: std::io::Error| RegistryError::Load {
            path: path.to_path_buf(),
            detail: e.to_string(),
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| load_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("yaml" | "yml")))
            .collect();
        files.sort();
        for path in &files {
            let text = std::fs::read_to_string(path).map_err(|e| load_err(path, e))?;
            self.register_yaml(&text, path)?;
        }
        Ok(files.len())
    }

    /// Case-insensitive lookup.
    pub fn lookup(&self, sensor_type: &str) -> Result<Arc<DriverDescriptor>, RegistryError> {
        self.entries
            .get(&sensor_type.to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| RegistryError::UnknownSensorType {
                requested: sensor_type.to_string(),
                known: self.keys(),
            })
    }

    pub fn keys(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &Arc<DriverDescriptor>> {
        self.entries.values()
    }
}
