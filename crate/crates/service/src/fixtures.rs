use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use compass_core::engine::{EngineError, Model};
use compass_core::fixtures;
use serde::Serialize;

/// Named workflow, property and scenario sources the service can run.
#[derive(Debug, Default)]
pub struct FixtureSet {
    pub workflows: BTreeMap<String, String>,
    pub properties: BTreeMap<String, String>,
    pub scenarios: BTreeMap<String, String>,
    models: Mutex<HashMap<(String, String), Arc<Model>>>,
}

#[derive(Debug, Serialize)]
pub struct FixtureListing {
    pub workflows: Vec<String>,
    pub properties: Vec<String>,
    pub scenarios: Vec<String>,
}

impl FixtureSet {
    /// The bundled travel booking fixtures.
    pub fn builtin() -> Self {
        let mut set = FixtureSet::default();
        set.workflows
            .insert("tbs".into(), fixtures::TBS_WORKFLOW.into());
        set.properties
            .insert("tbs".into(), fixtures::TBS_PROPERTIES.into());
        set.scenarios
            .insert("t1".into(), fixtures::T1_SCENARIO.into());
        set.scenarios
            .insert("t2".into(), fixtures::T2_SCENARIO.into());
        set
    }

    /// Built-ins plus every `*.wf`, `*.props` and `*.scn` file in `dir`,
    /// keyed by file stem.
    pub fn with_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = FixtureSet::builtin();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let (Some(stem), Some(ext)) = (
                path.file_stem().and_then(|s| s.to_str()),
                path.extension().and_then(|s| s.to_str()),
            ) else {
                continue;
            };
            let target = match ext {
                "wf" => &mut set.workflows,
                "props" => &mut set.properties,
                "scn" => &mut set.scenarios,
                _ => continue,
            };
            target.insert(stem.to_string(), std::fs::read_to_string(&path)?);
        }
        Ok(set)
    }

    pub fn listing(&self) -> FixtureListing {
        FixtureListing {
            workflows: self.workflows.keys().cloned().collect(),
            properties: self.properties.keys().cloned().collect(),
            scenarios: self.scenarios.keys().cloned().collect(),
        }
    }

    /// Compiled model for a workflow/property pair, built once and shared.
    /// `None` if either name is unknown.
    pub fn model(
        &self,
        workflow: &str,
        properties: &str,
    ) -> Option<Result<Arc<Model>, EngineError>> {
        let wf = self.workflows.get(workflow)?;
        let props = self.properties.get(properties)?;
        let key = (workflow.to_string(), properties.to_string());
        let mut cache = self.models.lock().unwrap();
        if let Some(m) = cache.get(&key) {
            return Some(Ok(m.clone()));
        }
        Some(Model::load(wf, props).map(|m| {
            let m = Arc::new(m);
            cache.insert(key, m.clone());
            m
        }))
    }
}
