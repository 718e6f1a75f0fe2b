//! STEP parser and ingest checks against independent text counts of the
//! fixture files.

mod common;

use std::collections::BTreeMap;

use bemtrace_core::bimlite::{parse_bimlite, write_bimlite};
use bemtrace_core::geom::Tolerances;
use bemtrace_core::ingest::{ingest_step, primary_type_counts, IngestError, PRIMARY_TYPES};
use bemtrace_core::step::{parse_step, StepError};
use common::{expected, fixture, fixture_path, load};

/// Counts `#n=TYPE(` occurrences by scanning lines; knows nothing about
/// STEP beyond one instance per line, which the generator guarantees.
fn text_counts(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { continue };
        let Some(eq) = rest.find('=') else { continue };
        if !rest[..eq].chars().all(|c| c.is_ascii_digit()) {
            continue;
        }
        let body = &rest[eq + 1..];
        let Some(paren) = body.find('(') else { continue };
        *out.entry(body[..paren].to_string()).or_insert(0) += 1;
    }
    out
}

const FIXTURES: [&str; 4] = ["house", "usecase3", "usecase4", "usecase5"];

#[test]
fn parser_counts_match_text_counts_and_authored_counts() {
    for stem in FIXTURES {
        let bytes = fixture(&format!("{stem}.ifc"));
        let file = parse_step(&bytes).unwrap();
        let text = text_counts(std::str::from_utf8(&bytes).unwrap());
        let exp = expected(stem);

        assert_eq!(file.entities.len(), text.values().sum::<usize>(), "{stem}");
        assert_eq!(file.entities.len(), exp.entities_total, "{stem}");
        let mut parsed: BTreeMap<String, usize> = BTreeMap::new();
        for e in &file.entities {
            *parsed.entry(e.type_name.clone()).or_insert(0) += 1;
        }
        assert_eq!(parsed, text, "{stem}");

        let primary_text: BTreeMap<String, usize> =
            text.into_iter().filter(|(k, _)| PRIMARY_TYPES.contains(&k.as_str())).collect();
        assert_eq!(primary_type_counts(&file), primary_text, "{stem}");
        assert_eq!(primary_type_counts(&file), exp.primary_counts, "{stem}");
    }
}

#[test]
fn house_authored_counts() {
    let c = expected("house").primary_counts;
    assert_eq!(c["IFCWALL"], 8);
    assert_eq!(c["IFCWALLSTANDARDCASE"], 2);
    assert_eq!(c["IFCSLAB"], 4);
    assert_eq!(c["IFCWINDOW"], 8);
    assert_eq!(c["IFCSPACE"], 7);
    assert_eq!(c["IFCRELSPACEBOUNDARY2NDLEVEL"], 56);
}

#[test]
fn ingest_report_accounts_for_every_entity() {
    let bytes = fixture("house.ifc");
    let file = parse_step(&bytes).unwrap();
    let (snap, report) = ingest_step(&bytes, &Tolerances::default()).unwrap();
    assert_eq!(report.extracted.total(), snap.elements().len() + snap.spaces().len() + snap.boundaries().len());
    assert_eq!(report.length_unit_scale, 1.0);
    assert_eq!(report.schema, vec!["IFC4".to_string()]);
    let primary = primary_type_counts(&file).values().sum::<usize>();
    assert_eq!(report.extracted.total() + report.skipped.len(), primary);
}

#[test]
fn dangling_reference_is_rejected() {
    let bytes = fixture("broken.ifc");
    match parse_step(&bytes) {
        Err(StepError::DanglingReferences(ids)) => assert_eq!(ids, vec![99999]),
        other => panic!("{other:?}"),
    }
    match ingest_step(&bytes, &Tolerances::default()) {
        Err(IngestError::Step(StepError::DanglingReferences(ids))) => assert_eq!(ids, vec![99999]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncated_fixture_reports_position() {
    let bytes = fixture("house.ifc");
    let cut = &bytes[..bytes.len() / 2];
    match parse_step(cut) {
        Err(StepError::Syntax { line, .. }) => assert!(line > 1),
        other => panic!("{other:?}"),
    }
}

/// The checked-in BIM-lite twin of the house. Regenerate with
/// `UPDATE_FIXTURES=1 cargo test -p bemtrace-core --test parser`.
#[test]
fn bimlite_fixture_matches_ingested_house() {
    let (snap, _) = load("house.ifc");
    let written = write_bimlite(&snap);
    let path = fixture_path("house.bimlite.json");
    if std::env::var_os("UPDATE_FIXTURES").is_some() {
        std::fs::write(&path, &written).unwrap();
    }
    let on_disk = std::fs::read(&path).expect("house.bimlite.json missing; run with UPDATE_FIXTURES=1");
    assert!(on_disk == written, "house.bimlite.json is stale");
    let back = parse_bimlite(&on_disk).unwrap();
    assert_eq!(back.parts(), snap.parts());
}
