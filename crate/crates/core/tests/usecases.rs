//! Headless replays of the interactive use cases on the fixture variants.

mod common;

use std::collections::BTreeMap;

use bemtrace_core::classify::classify_spaces;
use bemtrace_core::conflict::{detect_conflicts, resolve};
use bemtrace_core::geom::Tolerances;
use bemtrace_core::model::{ConflictKind, Id, ResolutionKind, SpaceClass};
use bemtrace_core::pipeline::{convert, ConversionConfig};
use bemtrace_core::wrangle::pair_boundaries;
use common::{load, load_config};

fn label_histogram(labels: &BTreeMap<Id, String>, prefix: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in labels.values().filter(|l| l.starts_with(prefix)) {
        *out.entry(l.clone()).or_insert(0) += 1;
    }
    out
}

#[test]
fn misclassification_then_overrides() {
    let (snap, report) = load("house.ifc");
    let bad = convert(&snap, report.clone(), &load_config("usecase2_misclassified.json")).unwrap();
    assert_eq!(bad.report.class_counts.internal, 7);
    assert_eq!(bad.network.connections.iter().filter(|c| c.category.is_external()).count(), 0);

    let fixed = convert(&snap, report, &load_config("usecase2_overrides.json")).unwrap();
    let c = &fixed.report.class_counts;
    assert_eq!((c.internal, c.air, c.earth), (4, 2, 1));
    let external = fixed.network.connections.iter().filter(|c| c.category.is_external()).count();
    assert_eq!(external, 24);
    assert_eq!(fixed.network, convert(&snap, None, &ConversionConfig::default()).unwrap().network);
}

#[test]
fn flipped_window_normals_split_labels() {
    let (snap, _) = load("usecase3.ifc");
    let conv = convert(&snap, None, &ConversionConfig::default()).unwrap();
    let windows = label_histogram(&conv.report.composition_labels, "AF");
    assert_eq!(windows, BTreeMap::from([("AF1".to_string(), 6), ("AF2".to_string(), 2)]));
    assert_eq!(conv.report.composition_labels[&Id::new("win-07")], "AF2");

    let (house, _) = load("house.ifc");
    let conv = convert(&house, None, &ConversionConfig::default()).unwrap();
    assert_eq!(label_histogram(&conv.report.composition_labels, "AF"), BTreeMap::from([("AF1".to_string(), 8)]));
}

#[test]
fn multiple_external_adjacency_resolved_by_keeping_upper() {
    let tol = Tolerances::default();
    let (snap, report) = load("usecase4.ifc");
    let cfg = ConversionConfig::default();
    let blocked = convert(&snap, report.clone(), &cfg).unwrap();
    let mea: Vec<_> = blocked.conflicts.iter().filter(|c| c.kind == ConflictKind::MultipleExternalAdjacency).collect();
    assert_eq!(mea.len(), 1);
    assert!(blocked.report.blocked);
    let c = mea[0];
    assert!(c.involved.elements.contains(&Id::new("win-05")));
    let upper = c.resolutions.iter().find(|r| r.note.starts_with("keep the upper")).expect("an upper-side option");
    assert_eq!(
        upper.kind,
        ResolutionKind::KeepBoundaryOfPair { keep: Id::new("sb-au-win-05"), drop: Id::new("sb-al-win-05-stray") }
    );

    // interactive path: resolve, then convert the new version
    let classes = classify_spaces(&snap, &cfg.classifier, snap.overrides(), &tol).unwrap();
    let conflicts = detect_conflicts(&snap, &classes, &tol);
    let next = resolve(&snap, &conflicts, &c.id, upper).unwrap();
    assert_eq!(next.version(), snap.version() + 1);
    let done = convert(&next, None, &cfg).unwrap();
    assert_eq!(done.report.open_conflicts, 0, "{:#?}", done.conflicts);
    assert!(done.resolved.ledger().iter().any(|e| e.conflict == c.id));
    for r in done.network.rooms.iter().filter(|r| r.class == SpaceClass::Internal) {
        assert!((r.coverage_ratio - 1.0).abs() <= 1e-6, "{} {}", r.id, r.coverage_ratio);
    }

    // headless path through the config file gives the same network
    let headless = convert(&snap, report, &load_config("usecase4_resolve.json")).unwrap();
    assert_eq!(headless.network, done.network);
    assert_eq!(headless.report.applied_resolutions.len(), 1);
}

#[test]
fn embedded_test_slab_conflicts_clear_after_ignoring_it() {
    let (snap, report) = load("usecase5.ifc");
    let conv = convert(&snap, report.clone(), &ConversionConfig::default()).unwrap();
    let slabs = [Id::new("slab-1a"), Id::new("slab-test")];
    let overlap: Vec<_> = conv.conflicts.iter().filter(|c| c.kind == ConflictKind::ElementOverlap).collect();
    assert_eq!(overlap.len(), 1);
    assert!(slabs.iter().all(|s| overlap[0].involved.elements.contains(s)));
    let boundary_overlaps: Vec<_> =
        conv.conflicts.iter().filter(|c| c.kind == ConflictKind::OverlappingBoundaries).collect();
    assert!(!boundary_overlaps.is_empty());
    for c in &boundary_overlaps {
        assert!(slabs.iter().all(|s| c.involved.elements.contains(s)), "{c:?}");
        assert!(c.resolutions.iter().any(|r| r.kind == ResolutionKind::IgnoreElement { id: Id::new("slab-test") }));
    }

    let fixed = convert(&snap, report, &load_config("usecase5_resolve.json")).unwrap();
    assert_eq!(fixed.report.open_conflicts, 0, "{:#?}", fixed.conflicts);
    assert!(fixed.network.connections.iter().all(|c| c.element.as_str() != "slab-test"));
    for r in fixed.network.rooms.iter().filter(|r| r.class == SpaceClass::Internal) {
        assert!((r.coverage_ratio - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn stray_boundary_is_left_unmatched_before_resolution() {
    let (snap, _) = load("usecase4.ifc");
    let (pairs, unmatched) = pair_boundaries(&snap, &Tolerances::default());
    assert_eq!(pairs.len(), 28);
    assert_eq!(unmatched.len(), 1);
}

#[test]
fn conversion_is_deterministic() {
    let (snap, report) = load("usecase4.ifc");
    let a = convert(&snap, report.clone(), &ConversionConfig::default()).unwrap();
    let b = convert(&snap, report, &ConversionConfig::default()).unwrap();
    assert_eq!(bemtrace_core::network::export_bem(&a.network), bemtrace_core::network::export_bem(&b.network));
    assert_eq!(a.report.to_json(), b.report.to_json());
}
