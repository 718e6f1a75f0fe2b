#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use bemtrace_core::geom::Tolerances;
use bemtrace_core::ingest::IngestReport;
use bemtrace_core::model::ModelSnapshot;
use bemtrace_core::pipeline::{load_model, ConversionConfig, InputFormat};
use serde::Deserialize;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn load(name: &str) -> (ModelSnapshot, Option<IngestReport>) {
    let format = InputFormat::from_path(&fixture_path(name)).unwrap();
    load_model(&fixture(name), format, &Tolerances::default()).unwrap()
}

pub fn load_config(name: &str) -> ConversionConfig {
    ConversionConfig::from_json(&fixture(name)).unwrap()
}

/// Authored facts written by the fixture generator alongside each file.
#[derive(Debug, Deserialize)]
pub struct Expected {
    pub entities_total: usize,
    pub primary_counts: BTreeMap<String, usize>,
    pub elements: BTreeSet<String>,
    pub spaces: BTreeSet<String>,
    pub boundaries: BTreeSet<String>,
    pub pairs: Vec<Vec<String>>,
    pub storeys: BTreeMap<String, String>,
}

pub fn expected(stem: &str) -> Expected {
    serde_json::from_slice(&fixture(&format!("{stem}.expected.json"))).unwrap()
}
