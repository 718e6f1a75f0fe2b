//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

// `check!` negates float comparisons so NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use bemtrace_core::classify::classify_spaces;
use bemtrace_core::conflict::{detect_conflicts, resolve};
use bemtrace_core::geom::{boolean_2d, union_all, Basis, BoolOp, Polygon2D, Tolerances, Vec3};
use bemtrace_core::ingest::{ingest_step, primary_type_counts};
use bemtrace_core::model::{ConflictKind, Id, ModelSnapshot, ResolutionKind, SbType, SpaceBoundary, SpaceClass};
use bemtrace_core::pipeline::{convert, Conversion, ConversionConfig};
use bemtrace_core::step::parse_step;
use bemtrace_core::trace::{selection_context, ObjectKind, Selection, ViewKind};
use bemtrace_core::wrangle::remove_recesses;
use common::{code, fixture, run, s, stderr};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn load(name: &str) -> ModelSnapshot {
    let bytes = std::fs::read(fixture(name)).unwrap();
    ingest_step(&bytes, &Tolerances::default()).unwrap().0
}

fn config(name: &str) -> ConversionConfig {
    ConversionConfig::from_json(&std::fs::read(fixture(name)).unwrap()).unwrap()
}

fn default_convert(snap: &ModelSnapshot) -> Conversion {
    convert(snap, None, &ConversionConfig::default()).unwrap()
}

fn internal_rooms_watertight(conv: &Conversion) -> Result<usize, String> {
    let mut n = 0;
    for r in conv.network.rooms.iter().filter(|r| r.class == SpaceClass::Internal) {
        check!((r.coverage_ratio - 1.0).abs() <= 1e-6, "room {} coverage {}", r.id, r.coverage_ratio);
        n += 1;
    }
    Ok(n)
}

// geometry

const GRID: i32 = 16;
const REL: f64 = 1e-9;
const CASES: u32 = 1000;

fn rect() -> impl Strategy<Value = (i32, i32, i32, i32)> {
    (0..GRID - 1, 0..GRID - 1).prop_flat_map(|(x, y)| (Just(x), Just(y), 1..=GRID - x, 1..=GRID - y))
}

fn basis(k: usize) -> Basis {
    match k % 3 {
        0 => Basis { origin: Vec3::ZERO, u: Vec3::X, v: Vec3::Y },
        1 => Basis { origin: Vec3::new(0.0, 2.0, 0.0), u: Vec3::X, v: Vec3::Z },
        _ => Basis { origin: Vec3::new(1.0, 1.0, 1.0), u: Vec3::new(0.6, 0.8, 0.0), v: Vec3::Z },
    }
}

fn poly(b: &Basis, (x, y, w, h): (i32, i32, i32, i32)) -> Polygon2D {
    Polygon2D::rect(*b, x as f64, y as f64, w as f64, h as f64)
}

fn area(ps: &[Polygon2D]) -> f64 {
    ps.iter().map(Polygon2D::area).sum()
}

fn inside((x, y, w, h): (i32, i32, i32, i32), cx: f64, cy: f64) -> bool {
    cx > x as f64 && cx < (x + w) as f64 && cy > y as f64 && cy < (y + h) as f64
}

fn raster(pred: impl Fn(f64, f64) -> bool) -> f64 {
    let n = GRID * 4;
    let hits = (0..n * n).filter(|k| pred((*k / n) as f64 / 4.0 + 0.125, (*k % n) as f64 / 4.0 + 0.125)).count();
    hits as f64 / 16.0
}

fn runner() -> TestRunner {
    TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() })
}

fn geometry() -> Outcome {
    let t = Instant::now();
    let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= REL * scale.max(1.0);
    runner()
        .run(&(rect(), rect(), 0usize..3), |(a, b, k)| {
            let bs = basis(k);
            let (pa, pb) = (poly(&bs, a), poly(&bs, b));
            let (aa, ab) = ((a.2 * a.3) as f64, (b.2 * b.3) as f64);
            let u = area(&boolean_2d(&pa, &pb, BoolOp::Union));
            let i = area(&boolean_2d(&pa, &pb, BoolOp::Intersection));
            let d = area(&boolean_2d(&pa, &pb, BoolOp::Difference));
            prop_assert!(close(u + i, aa + ab, aa + ab));
            prop_assert!(close(d, aa - i, aa + ab));
            prop_assert!((u - raster(|x, y| inside(a, x, y) || inside(b, x, y))).abs() <= 1e-3);
            prop_assert!((d - raster(|x, y| inside(a, x, y) && !inside(b, x, y))).abs() <= 1e-3);
            let snap = Tolerances::default().snap_tol;
            let once = union_all(&[pa, pb], snap);
            prop_assert!(close(area(&union_all(&once, snap)), area(&once), aa + ab));
            Ok(())
        })
        .map_err(|e| format!("booleans: {e}"))?;

    let tol = Tolerances::default();
    runner()
        .run(
            &(6i32..=GRID, 4i32..=GRID, prop::collection::vec((0i32..2, 1i32..3), 1..4), 0usize..3),
            |(w, h, slots, k)| {
                let bs = basis(k);
                let wall = poly(&bs, (0, 0, w, h)).to_planar();
                let col = (w - 1) / slots.len() as i32;
                let mut openings = Vec::new();
                let mut cut = 0.0;
                for (n, (dy, ww)) in slots.iter().enumerate() {
                    let ww = (*ww).min(col - 1);
                    let hh = (h - 3 - dy).min(2);
                    if ww < 1 || hh < 1 {
                        continue;
                    }
                    cut += (ww * hh) as f64;
                    openings
                        .push((Id::new(format!("o{n}")), poly(&bs, (1 + n as i32 * col, 1 + dy, ww, hh)).to_planar()));
                }
                let n = wall.plane.normal;
                let mut b = SpaceBoundary {
                    id: Id::new("b"),
                    space: Id::new("s"),
                    element: Id::new("e"),
                    sb_type: SbType::TypeA,
                    raw: wall,
                    enhanced: None,
                    edits: vec![],
                    normal_into_element: n,
                };
                let before = (w * h) as f64;
                let out = remove_recesses(&b, &openings, &tol).unwrap();
                prop_assert!(close(before - out.enhanced.area(), cut, before));
                b.enhanced = Some(out.enhanced.clone());
                let again = remove_recesses(&b, &openings, &tol).unwrap();
                prop_assert!(again.edit.is_none());
                prop_assert!(close(again.enhanced.area(), out.enhanced.area(), before));
                Ok(())
            },
        )
        .map_err(|e| format!("recesses: {e}"))?;
    let took = t.elapsed();
    check!(took < Duration::from_secs(30), "took {took:?}");
    Ok(format!("{} cases, {:.2} s", 2 * CASES, took.as_secs_f64()))
}

fn watertight() -> Outcome {
    let conv = default_convert(&load("house.ifc"));
    let n = internal_rooms_watertight(&conv)?;
    check!(n == 4, "{n} internal rooms");
    Ok(format!("{n} internal rooms at coverage 1"))
}

/// `#n=TYPE(` per line, independent of the STEP parser.
fn text_counts(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { continue };
        let Some((num, body)) = rest.split_once('=') else { continue };
        if num.chars().all(|c| c.is_ascii_digit()) {
            if let Some((ty, _)) = body.split_once('(') {
                *out.entry(ty.to_string()).or_insert(0) += 1;
            }
        }
    }
    out
}

fn mutate(rng: &mut StdRng, src: &[u8]) -> Vec<u8> {
    let mut b = src.to_vec();
    for _ in 0..rng.gen_range(1..=8) {
        if b.is_empty() {
            break;
        }
        let at = rng.gen_range(0..b.len());
        match rng.gen_range(0..20) {
            0..=4 => b[at] = rng.gen(),
            5..=9 => b[at] = b"#=(),;'$*.\\0123456789"[rng.gen_range(0..21)],
            10..=13 => {
                b.remove(at);
            }
            14..=18 => b.insert(at, rng.gen()),
            _ => b.truncate(at),
        }
    }
    b
}

fn parser() -> Outcome {
    let bytes = std::fs::read(fixture("house.ifc")).unwrap();
    let file = parse_step(&bytes).map_err(|e| e.to_string())?;
    let text = text_counts(std::str::from_utf8(&bytes).unwrap());
    check!(file.entities.len() == text.values().sum::<usize>(), "entity total differs from text count");
    let primary = primary_type_counts(&file);
    for (ty, n) in &primary {
        check!(text.get(ty) == Some(n), "{ty}: parser {n}, text {:?}", text.get(ty));
    }
    let authored = [
        ("IFCWALL", 8),
        ("IFCWALLSTANDARDCASE", 2),
        ("IFCSLAB", 4),
        ("IFCWINDOW", 8),
        ("IFCSPACE", 7),
        ("IFCRELSPACEBOUNDARY2NDLEVEL", 56),
    ];
    for (ty, n) in authored {
        check!(primary.get(ty) == Some(&n), "{ty}: {:?} != {n}", primary.get(ty));
    }

    let mut rng = StdRng::seed_from_u64(0x5eed);
    let tol = Tolerances::default();
    let (mut parsed, mut ingested) = (0, 0);
    for k in 0..10_000 {
        let m = mutate(&mut rng, &bytes);
        let r = catch_unwind(AssertUnwindSafe(|| {
            let ok = parse_step(&m).is_ok();
            let ing = ok && ingest_step(&m, &tol).is_ok();
            (ok, ing)
        }));
        let (p, i) = r.map_err(|_| format!("panic on mutation {k}"))?;
        parsed += p as usize;
        ingested += i as usize;
    }
    Ok(format!("counts match; 10000 mutations, {parsed} still parse, {ingested} still ingest, no panic"))
}

fn use_case_2() -> Outcome {
    let snap = load("house.ifc");
    let bad = convert(&snap, None, &config("usecase2_misclassified.json")).unwrap();
    let ext = |c: &Conversion| c.network.connections.iter().filter(|c| c.category.is_external()).count();
    check!(ext(&bad) == 0, "{} external connections while misclassified", ext(&bad));
    let fixed = convert(&snap, None, &config("usecase2_overrides.json")).unwrap();
    let c = &fixed.report.class_counts;
    check!((c.internal, c.air, c.earth) == (4, 2, 1), "class counts {c:?}");
    check!(ext(&fixed) > 0, "no external connections after overrides");
    Ok(format!("0 external before, 4/2/1 rooms and {} external after", ext(&fixed)))
}

fn window_labels(conv: &Conversion) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in conv.report.composition_labels.values().filter(|l| l.starts_with("AF")) {
        *out.entry(l.clone()).or_insert(0) += 1;
    }
    out
}

fn use_case_3() -> Outcome {
    let split = window_labels(&default_convert(&load("usecase3.ifc")));
    let want = BTreeMap::from([("AF1".to_string(), 6), ("AF2".to_string(), 2)]);
    check!(split == want, "flipped: {split:?}");
    let merged = window_labels(&default_convert(&load("house.ifc")));
    check!(merged == BTreeMap::from([("AF1".to_string(), 8)]), "restored: {merged:?}");
    Ok("AF1(6)/AF2(2), restored AF1(8)".into())
}

fn use_case_4() -> Outcome {
    let snap = load("usecase4.ifc");
    let cfg = ConversionConfig::default();
    let tol = cfg.tolerances;
    let classes = classify_spaces(&snap, &cfg.classifier, snap.overrides(), &tol).map_err(|e| e.to_string())?;
    let conflicts = detect_conflicts(&snap, &classes, &tol);
    let mea: Vec<_> = conflicts.iter().filter(|c| c.kind == ConflictKind::MultipleExternalAdjacency).collect();
    check!(mea.len() == 1, "{} MultipleExternalAdjacency conflicts", mea.len());
    let upper = mea[0]
        .resolutions
        .iter()
        .find(|r| matches!(&r.kind, ResolutionKind::KeepBoundaryOfPair { keep, .. } if keep.as_str().starts_with("sb-au")))
        .ok_or("no KeepBoundaryOfPair keeping the upper space")?;
    let next = resolve(&snap, &conflicts, &mea[0].id, upper).map_err(|e| e.to_string())?;
    let done = default_convert(&next);
    check!(done.report.open_conflicts == 0, "{} open conflicts after resolving", done.report.open_conflicts);
    let n = internal_rooms_watertight(&done)?;
    Ok(format!("1 conflict; resolved, {n} internal rooms watertight"))
}

fn use_case_5() -> Outcome {
    let snap = load("usecase5.ifc");
    let conv = default_convert(&snap);
    let slabs = [Id::new("slab-1a"), Id::new("slab-test")];
    let names_both = |k: ConflictKind| {
        conv.conflicts.iter().filter(|c| c.kind == k).any(|c| slabs.iter().all(|s| c.involved.elements.contains(s)))
    };
    check!(names_both(ConflictKind::ElementOverlap), "no ElementOverlap naming both slabs");
    check!(names_both(ConflictKind::OverlappingBoundaries), "no OverlappingBoundaries naming both slabs");
    let fixed = convert(&snap, None, &config("usecase5_resolve.json")).unwrap();
    check!(fixed.report.open_conflicts == 0, "{} open after IgnoreElement", fixed.report.open_conflicts);
    Ok(format!("{} conflicts, 0 after IgnoreElement(slab-test)", conv.report.open_conflicts))
}

fn trace_round_trip() -> Outcome {
    let conv = default_convert(&load("house.ifc"));
    let ix = &conv.trace;
    let set = |v: &[Id]| v.iter().cloned().collect::<BTreeSet<Id>>();
    for c in &conv.network.connections {
        let sel = Selection { kind: ObjectKind::Connection, id: c.id.clone(), source: ViewKind::BemView };
        let ctx = |target| selection_context(ix, &sel, target).map(|h| set(&h.context)).map_err(|e| e.to_string());
        check!(ctx(ViewKind::RelationshipView)? == set(&c.boundaries), "{}: boundaries", c.id);
        check!(ctx(ViewKind::ElementView)? == set(std::slice::from_ref(&c.element)), "{}: element", c.id);
        check!(ctx(ViewKind::SpaceView)? == set(&c.spaces), "{}: spaces", c.id);
        for b in &c.boundaries {
            let back = Selection { kind: ObjectKind::Boundary, id: b.clone(), source: ViewKind::RelationshipView };
            let h = selection_context(ix, &back, ViewKind::BemView).map_err(|e| e.to_string())?;
            check!(h.context == vec![c.id.clone()], "{b} does not lead back to {}", c.id);
        }
    }
    Ok(format!("{} connections", conv.network.connections.len()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let (bem, rep) = (dir.path().join(format!("{k}.bem.json")), dir.path().join(format!("{k}.report.json")));
        let o = run(&["convert", s(&fixture("house.ifc")), "-o", s(&bem), "--report", s(&rep)]);
        check!(code(&o) == 0, "exit {}: {}", code(&o), stderr(&o));
        outputs.push((std::fs::read(&bem).unwrap(), std::fs::read(&rep).unwrap()));
    }
    check!(outputs[0].0 == outputs[1].0, "bem/1 bytes differ");
    check!(outputs[0].1 == outputs[1].1, "report bytes differ");
    Ok(format!("{} + {} bytes identical", outputs[0].0.len(), outputs[0].1.len()))
}

fn runtime() -> Outcome {
    let bytes = std::fs::read(fixture("house.ifc")).unwrap();
    let t = Instant::now();
    let cfg = ConversionConfig::default();
    let (snap, ingest) = ingest_step(&bytes, &cfg.tolerances).map_err(|e| e.to_string())?;
    let conv = convert(&snap, Some(ingest), &cfg).map_err(|e| e.to_string())?;
    let took = t.elapsed();
    check!(conv.network.rooms.len() == 7, "{} rooms", conv.network.rooms.len());
    check!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!("{:.0} ms", took.as_secs_f64() * 1e3))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("geometry property suite", geometry),
        ("watertightness", watertight),
        ("parser counts and mutation robustness", parser),
        ("use case 2 replay", use_case_2),
        ("use case 3 replay", use_case_3),
        ("use case 4 replay", use_case_4),
        ("use case 5 replay", use_case_5),
        ("trace round trip", trace_round_trip),
        ("determinism", determinism),
        ("end-to-end runtime", runtime),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        match catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or(e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        }) {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
