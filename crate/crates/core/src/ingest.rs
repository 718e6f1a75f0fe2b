//! IFC (STEP) subset to [`ModelSnapshot`].
//!
//! Walls, slabs, windows, doors, spaces and space boundaries become typed
//! entities; placement, profile, face-set, material and unit entities are
//! consumed while evaluating them. Every other entity type is listed in the
//! report as an opaque record.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    extrude_profile, project_onto, ring_signed_area, triangulate_rings, PlanarPolygon, Plane, Tolerances, TriMesh,
    Vec3, P2,
};
use crate::model::{
    Element, ElementKind, Id, Layer, ModelSnapshot, SbType, SnapshotParts, Space, SpaceBoundary, SpaceClass,
};
use crate::step::{parse_step_unchecked, StepEntity, StepError, StepFile, StepValue};

/// Entity types that become snapshot entities.
pub const PRIMARY_TYPES: &[&str] = &[
    "IFCWALL",
    "IFCWALLSTANDARDCASE",
    "IFCSLAB",
    "IFCWINDOW",
    "IFCDOOR",
    "IFCSPACE",
    "IFCRELSPACEBOUNDARY",
    "IFCRELSPACEBOUNDARY1STLEVEL",
    "IFCRELSPACEBOUNDARY2NDLEVEL",
];

/// Entity types read while evaluating primary entities.
pub const AUXILIARY_TYPES: &[&str] = &[
    "IFCBUILDINGSTOREY",
    "IFCRELCONTAINEDINSPATIALSTRUCTURE",
    "IFCRELAGGREGATES",
    "IFCMATERIAL",
    "IFCMATERIALLAYER",
    "IFCMATERIALLAYERSET",
    "IFCMATERIALLAYERSETUSAGE",
    "IFCRELASSOCIATESMATERIAL",
    "IFCSIUNIT",
    "IFCCONVERSIONBASEDUNIT",
    "IFCMEASUREWITHUNIT",
    "IFCDIMENSIONALEXPONENTS",
    "IFCUNITASSIGNMENT",
    "IFCCARTESIANPOINT",
    "IFCDIRECTION",
    "IFCAXIS2PLACEMENT2D",
    "IFCAXIS2PLACEMENT3D",
    "IFCLOCALPLACEMENT",
    "IFCPOLYLINE",
    "IFCARBITRARYCLOSEDPROFILEDEF",
    "IFCARBITRARYPROFILEDEFWITHVOIDS",
    "IFCRECTANGLEPROFILEDEF",
    "IFCEXTRUDEDAREASOLID",
    "IFCCARTESIANPOINTLIST3D",
    "IFCPOLYGONALFACESET",
    "IFCINDEXEDPOLYGONALFACE",
    "IFCINDEXEDPOLYGONALFACEWITHVOIDS",
    "IFCSHAPEREPRESENTATION",
    "IFCPRODUCTDEFINITIONSHAPE",
    "IFCCONNECTIONSURFACEGEOMETRY",
    "IFCCURVEBOUNDEDPLANE",
    "IFCPLANE",
];

pub fn is_supported_type(name: &str) -> bool {
    PRIMARY_TYPES.contains(&name) || AUXILIARY_TYPES.contains(&name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub instance_id: u64,
    pub type_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntity {
    pub instance_id: u64,
    pub type_name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub instance_id: u64,
    pub entity: Id,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtractCounts {
    pub elements: usize,
    pub spaces: usize,
    pub boundaries: usize,
}

impl ExtractCounts {
    pub fn total(&self) -> usize {
        self.elements + self.spaces + self.boundaries
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub schema: Vec<String>,
    /// Meters per file length unit.
    pub length_unit_scale: f64,
    pub extracted: ExtractCounts,
    /// Primary-type entities that did not make it into the snapshot.
    pub skipped: Vec<SkippedEntity>,
    /// Entities of types outside the supported subset, kept by reference.
    pub opaque: Vec<EntityRef>,
    pub repairs: Vec<Repair>,
}

impl IngestReport {
    pub fn is_clean(&self) -> bool {
        self.skipped.is_empty() && self.repairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("no usable length unit: {0}")]
    UnitError(String),
    #[error("the file contains no space boundaries")]
    NoSpaceBoundaries,
    #[error("cannot evaluate placement of #{entity}: {reason}")]
    GeometryError { entity: u64, reason: String },
}

/// Parses and extracts in one go. Dangling references are an error only when
/// a supported entity holds them.
pub fn ingest_step(bytes: &[u8], tol: &Tolerances) -> Result<(ModelSnapshot, IngestReport), IngestError> {
    let file = parse_step_unchecked(bytes)?;
    let mut dangling: Vec<u64> = file
        .entities
        .iter()
        .filter(|e| is_supported_type(&e.type_name))
        .flat_map(|e| e.references())
        .filter(|r| file.get(*r).is_none())
        .collect();
    dangling.sort_unstable();
    dangling.dedup();
    if !dangling.is_empty() {
        return Err(StepError::DanglingReferences(dangling).into());
    }
    extract_snapshot(&file, tol)
}

pub fn extract_snapshot(file: &StepFile, tol: &Tolerances) -> Result<(ModelSnapshot, IngestReport), IngestError> {
    if !file.entities.iter().any(|e| e.type_name.starts_with("IFCRELSPACEBOUNDARY")) {
        return Err(IngestError::NoSpaceBoundaries);
    }
    let scale = length_scale(file)?;
    let cx = Ctx { file, scale, tol: *tol };
    let mut report = IngestReport { schema: file.header.schemas(), length_unit_scale: scale, ..Default::default() };
    for e in &file.entities {
        if !is_supported_type(&e.type_name) {
            report.opaque.push(EntityRef { instance_id: e.instance_id, type_name: e.type_name.clone() });
        }
    }

    let storeys = storey_map(file);
    let materials = material_map(&cx);
    let mut parts = SnapshotParts::default();
    let mut by_instance: HashMap<u64, Id> = HashMap::new();

    let skip = |report: &mut IngestReport, e: &StepEntity, reason: String| {
        report.skipped.push(SkippedEntity { instance_id: e.instance_id, type_name: e.type_name.clone(), reason });
    };

    for e in &file.entities {
        let kind = match e.type_name.as_str() {
            "IFCWALL" | "IFCWALLSTANDARDCASE" => ElementKind::Wall,
            "IFCSLAB" => ElementKind::Slab,
            "IFCWINDOW" => ElementKind::Window,
            "IFCDOOR" => ElementKind::Door,
            "IFCSPACE" => {
                match cx.product(e) {
                    Ok((id, _, _)) if parts.spaces.contains_key(&id) || parts.elements.contains_key(&id) => {
                        skip(&mut report, e, format!("duplicate id {id}"))
                    }
                    Ok((id, _, mesh)) => {
                        by_instance.insert(e.instance_id, id.clone());
                        parts.insert_space(Space {
                            id,
                            volume: mesh,
                            classification: SpaceClass::Unclassified,
                            storey: storeys.get(&e.instance_id).cloned().unwrap_or_default(),
                        });
                    }
                    Err(Fail::Fatal(err)) => return Err(err),
                    Err(Fail::Skip(reason)) => skip(&mut report, e, reason),
                }
                continue;
            }
            _ => continue,
        };
        match cx.product(e) {
            Ok((id, _, _)) if parts.elements.contains_key(&id) || parts.spaces.contains_key(&id) => {
                skip(&mut report, e, format!("duplicate id {id}"))
            }
            Ok((id, frame, solid)) => {
                let (layers, usage) = materials.get(&e.instance_id).cloned().unwrap_or_default();
                let reference_normal = match usage {
                    Some((axis, sense)) => frame.axis(axis) * sense,
                    None => frame.z,
                };
                by_instance.insert(e.instance_id, id.clone());
                parts.insert_element(Element {
                    id,
                    kind,
                    solid,
                    layers,
                    reference_normal,
                    storey: storeys.get(&e.instance_id).cloned().unwrap_or_default(),
                });
            }
            Err(Fail::Fatal(err)) => return Err(err),
            Err(Fail::Skip(reason)) => skip(&mut report, e, reason),
        }
    }

    for e in file.entities.iter().filter(|e| e.type_name.starts_with("IFCRELSPACEBOUNDARY")) {
        match cx.boundary(e, &by_instance, &parts, &mut report.repairs) {
            Ok(b) if parts.boundaries.contains_key(&b.id) => skip(&mut report, e, format!("duplicate id {}", b.id)),
            Ok(b) => parts.insert_boundary(b),
            Err(Fail::Fatal(err)) => return Err(err),
            Err(Fail::Skip(reason)) => skip(&mut report, e, reason),
        }
    }

    report.extracted = ExtractCounts {
        elements: parts.elements.len(),
        spaces: parts.spaces.len(),
        boundaries: parts.boundaries.len(),
    };
    Ok((ModelSnapshot::new(parts), report))
}

enum Fail {
    Fatal(IngestError),
    Skip(String),
}

type R<T> = Result<T, Fail>;

fn skip<T>(reason: impl Into<String>) -> R<T> {
    Err(Fail::Skip(reason.into()))
}

/// Orthonormal frame; `apply` maps local coordinates (already in meters).
#[derive(Debug, Clone, Copy)]
struct Frame {
    origin: Vec3,
    x: Vec3,
    y: Vec3,
    z: Vec3,
}

impl Frame {
    const IDENTITY: Frame = Frame { origin: Vec3::ZERO, x: Vec3::X, y: Vec3::Y, z: Vec3::Z };

    fn apply(&self, p: Vec3) -> Vec3 {
        self.origin + self.rotate(p)
    }

    fn rotate(&self, d: Vec3) -> Vec3 {
        self.x * d.x + self.y * d.y + self.z * d.z
    }

    /// `self` expressed in `parent`'s coordinates, mapped to world.
    fn within(&self, parent: &Frame) -> Frame {
        Frame {
            origin: parent.apply(self.origin),
            x: parent.rotate(self.x),
            y: parent.rotate(self.y),
            z: parent.rotate(self.z),
        }
    }

    fn axis(&self, name: &str) -> Vec3 {
        match name {
            "AXIS1" => self.x,
            "AXIS2" => self.y,
            _ => self.z,
        }
    }
}

struct Ctx<'a> {
    file: &'a StepFile,
    scale: f64,
    tol: Tolerances,
}

impl<'a> Ctx<'a> {
    fn ent(&self, id: u64) -> R<&'a StepEntity> {
        self.file.get(id).ok_or_else(|| Fail::Skip(format!("#{id} does not exist")))
    }

    fn ref_attr(&self, e: &StepEntity, i: usize) -> R<&'a StepEntity> {
        match e.attr(i).and_then(StepValue::as_ref_id) {
            Some(r) => self.ent(r),
            None => skip(format!("#{} attribute {i} is not a reference", e.instance_id)),
        }
    }

    fn opt_ref_attr(&self, e: &StepEntity, i: usize) -> R<Option<&'a StepEntity>> {
        match e.attr(i) {
            None | Some(StepValue::Unset) => Ok(None),
            _ => self.ref_attr(e, i).map(Some),
        }
    }

    fn ref_list(&self, e: &StepEntity, i: usize) -> R<Vec<&'a StepEntity>> {
        match e.attr(i) {
            Some(StepValue::List(v)) => v
                .iter()
                .map(|x| match x.as_ref_id() {
                    Some(r) => self.ent(r),
                    None => skip(format!("#{} attribute {i} holds a non-reference", e.instance_id)),
                })
                .collect(),
            None | Some(StepValue::Unset) => Ok(Vec::new()),
            _ => skip(format!("#{} attribute {i} is not a list", e.instance_id)),
        }
    }

    fn num(&self, e: &StepEntity, i: usize) -> R<f64> {
        match e.attr(i).and_then(StepValue::as_f64) {
            Some(v) if v.is_finite() => Ok(v),
            _ => skip(format!("#{} attribute {i} is not a number", e.instance_id)),
        }
    }

    fn expect_type(&self, e: &StepEntity, names: &[&str]) -> R<()> {
        if names.contains(&e.type_name.as_str()) {
            Ok(())
        } else {
            skip(format!("#{} is {}, expected {}", e.instance_id, e.type_name, names.join(" or ")))
        }
    }

    fn coords(&self, e: &StepEntity) -> R<Vec<f64>> {
        self.expect_type(e, &["IFCCARTESIANPOINT"])?;
        let list = e.attr(0).and_then(StepValue::as_list).unwrap_or(&[]);
        let v: Option<Vec<f64>> = list.iter().map(StepValue::as_f64).collect();
        match v {
            Some(v) if (1..=3).contains(&v.len()) && v.iter().all(|c| c.is_finite()) => {
                Ok(v.into_iter().map(|c| c * self.scale).collect())
            }
            _ => skip(format!("#{} has malformed coordinates", e.instance_id)),
        }
    }

    fn point3(&self, e: &StepEntity) -> R<Vec3> {
        let c = self.coords(e)?;
        Ok(Vec3::new(c[0], c.get(1).copied().unwrap_or(0.0), c.get(2).copied().unwrap_or(0.0)))
    }

    fn direction(&self, e: &StepEntity) -> R<Vec3> {
        self.expect_type(e, &["IFCDIRECTION"])?;
        let list = e.attr(0).and_then(StepValue::as_list).unwrap_or(&[]);
        let v: Option<Vec<f64>> = list.iter().map(StepValue::as_f64).collect();
        match v {
            Some(v) if (2..=3).contains(&v.len()) => Vec3::new(v[0], v[1], v.get(2).copied().unwrap_or(0.0))
                .normalized()
                .ok_or_else(|| Fail::Skip(format!("#{} is a zero direction", e.instance_id))),
            _ => skip(format!("#{} has malformed direction ratios", e.instance_id)),
        }
    }

    fn axis2(&self, e: &StepEntity) -> R<Frame> {
        match e.type_name.as_str() {
            "IFCAXIS2PLACEMENT3D" => {
                let origin = self.point3(self.ref_attr(e, 0)?)?;
                let z = match self.opt_ref_attr(e, 1)? {
                    Some(d) => self.direction(d)?,
                    None => Vec3::Z,
                };
                let x0 = match self.opt_ref_attr(e, 2)? {
                    Some(d) => self.direction(d)?,
                    None if z.x.abs() < 0.9 => Vec3::X,
                    None => Vec3::Y,
                };
                let x = (x0 - z * x0.dot(z))
                    .normalized()
                    .ok_or_else(|| Fail::Skip(format!("#{} has RefDirection parallel to Axis", e.instance_id)))?;
                Ok(Frame { origin, x, y: z.cross(x), z })
            }
            "IFCAXIS2PLACEMENT2D" => {
                let origin = self.point3(self.ref_attr(e, 0)?)?;
                let x = match self.opt_ref_attr(e, 1)? {
                    Some(d) => {
                        let d = self.direction(d)?;
                        Vec3::new(d.x, d.y, 0.0)
                            .normalized()
                            .ok_or_else(|| Fail::Skip(format!("#{} has a vertical RefDirection", e.instance_id)))?
                    }
                    None => Vec3::X,
                };
                Ok(Frame { origin: Vec3::new(origin.x, origin.y, 0.0), x, y: Vec3::Z.cross(x), z: Vec3::Z })
            }
            other => skip(format!("#{} is {other}, expected an axis placement", e.instance_id)),
        }
    }

    /// World frame of an object placement. Failures here are fatal.
    fn placement(&self, e: &StepEntity, depth: usize) -> Result<Frame, IngestError> {
        let fatal = |reason: String| IngestError::GeometryError { entity: e.instance_id, reason };
        if depth > 64 {
            return Err(fatal("placement chain too deep or cyclic".into()));
        }
        if e.type_name != "IFCLOCALPLACEMENT" {
            return Err(fatal(format!("{} is not a supported placement", e.type_name)));
        }
        let rel = self.ref_attr(e, 1).and_then(|a| self.axis2(a)).map_err(|f| match f {
            Fail::Skip(r) => fatal(r),
            Fail::Fatal(err) => err,
        })?;
        match e.attr(0) {
            None | Some(StepValue::Unset) => Ok(rel),
            Some(StepValue::Ref(r)) => {
                let parent = self.file.get(*r).ok_or_else(|| fatal(format!("#{r} does not exist")))?;
                Ok(rel.within(&self.placement(parent, depth + 1)?))
            }
            _ => Err(fatal("PlacementRelTo is not a reference".into())),
        }
    }

    fn object_frame(&self, e: &StepEntity) -> R<Frame> {
        match e.attr(5) {
            None | Some(StepValue::Unset) => Ok(Frame::IDENTITY),
            Some(StepValue::Ref(r)) => match self.file.get(*r) {
                Some(p) => self.placement(p, 0).map_err(Fail::Fatal),
                None => Err(Fail::Fatal(IngestError::GeometryError {
                    entity: e.instance_id,
                    reason: format!("placement #{r} does not exist"),
                })),
            },
            _ => Err(Fail::Fatal(IngestError::GeometryError {
                entity: e.instance_id,
                reason: "ObjectPlacement is not a reference".into(),
            })),
        }
    }

    fn global_id(&self, e: &StepEntity) -> Id {
        match e.attr(0).and_then(StepValue::as_str) {
            Some(s) if !s.is_empty() => Id::new(s),
            _ => Id::new(format!("#{}", e.instance_id)),
        }
    }

    /// Id, world frame and closed body mesh of a product.
    fn product(&self, e: &StepEntity) -> R<(Id, Frame, TriMesh)> {
        let id = self.global_id(e);
        let frame = self.object_frame(e)?;
        let Some(shape) = self.opt_ref_attr(e, 6)? else {
            return skip("no representation");
        };
        self.expect_type(shape, &["IFCPRODUCTDEFINITIONSHAPE"])?;
        let reps = self.ref_list(shape, 2)?;
        let body: Vec<_> = reps
            .iter()
            .filter(|r| r.attr(1).and_then(StepValue::as_str).is_none_or(|s| s.eq_ignore_ascii_case("body")))
            .collect();
        let mut mesh = TriMesh::default();
        let mut last_err = None;
        for rep in body {
            self.expect_type(rep, &["IFCSHAPEREPRESENTATION"])?;
            for item in self.ref_list(rep, 3)? {
                match self.item_mesh(item, &frame) {
                    Ok(m) => append_mesh(&mut mesh, m),
                    Err(Fail::Skip(r)) => last_err = Some(r),
                    Err(f) => return Err(f),
                }
            }
        }
        if mesh.triangles.is_empty() {
            return skip(last_err.unwrap_or_else(|| "no body geometry".into()));
        }
        if !(mesh.signed_volume().abs() > self.tol.snap_tol.powi(3)) {
            return skip("degenerate geometry: zero volume");
        }
        if mesh.signed_volume() < 0.0 {
            mesh.flip();
        }
        Ok((id, frame, mesh))
    }

    fn item_mesh(&self, item: &StepEntity, frame: &Frame) -> R<TriMesh> {
        match item.type_name.as_str() {
            "IFCEXTRUDEDAREASOLID" => {
                let (outer, holes) = self.profile(self.ref_attr(item, 0)?)?;
                let pos = match self.opt_ref_attr(item, 1)? {
                    Some(p) => self.axis2(p)?,
                    None => Frame::IDENTITY,
                };
                let dir = self.direction(self.ref_attr(item, 2)?)?;
                let depth = self.num(item, 3)? * self.scale;
                if !(depth > 0.0) {
                    return skip(format!("degenerate geometry: #{} has non-positive depth", item.instance_id));
                }
                if dir.z.abs() < 1e-9 {
                    return skip(format!(
                        "degenerate geometry: #{} extrudes within its profile plane",
                        item.instance_id
                    ));
                }
                let world = pos.within(frame);
                Ok(extrude_profile(&outer, &holes, |p| world.apply(p), dir * depth))
            }
            "IFCPOLYGONALFACESET" => {
                let list = self.ref_attr(item, 0)?;
                self.expect_type(list, &["IFCCARTESIANPOINTLIST3D"])?;
                let pts = self.point_list(list)?.into_iter().map(|p| frame.apply(p)).collect::<Vec<_>>();
                let faces = self.ref_list(item, 2)?;
                let mut mesh = TriMesh { vertices: pts.clone(), triangles: Vec::new() };
                for f in faces {
                    self.expect_type(f, &["IFCINDEXEDPOLYGONALFACE", "IFCINDEXEDPOLYGONALFACEWITHVOIDS"])?;
                    let outer = index_list(f.attr(0))
                        .ok_or_else(|| Fail::Skip(format!("#{} bad index list", f.instance_id)))?;
                    let holes = match f.attr(1).and_then(StepValue::as_list) {
                        Some(l) if f.type_name.ends_with("WITHVOIDS") => l
                            .iter()
                            .map(|h| index_list(Some(h)))
                            .collect::<Option<Vec<_>>>()
                            .ok_or_else(|| Fail::Skip(format!("#{} bad void index list", f.instance_id)))?,
                        _ => Vec::new(),
                    };
                    let all = outer.iter().chain(holes.iter().flatten());
                    if all.clone().any(|&i| i == 0 || i > pts.len()) {
                        return skip(format!("#{} indexes outside the point list", f.instance_id));
                    }
                    let ring3 = |r: &[usize]| r.iter().map(|&i| pts[i - 1]).collect::<Vec<_>>();
                    let normal = newell(&ring3(&outer))
                        .ok_or_else(|| Fail::Skip(format!("degenerate geometry: face #{}", f.instance_id)))?;
                    let basis = Plane { origin: pts[outer[0] - 1], normal }.basis();
                    let ring2 = |r: &[usize]| r.iter().map(|&i| basis.to_2d(pts[i - 1])).collect::<Vec<P2>>();
                    let holes2: Vec<Vec<P2>> = holes.iter().map(|h| ring2(h)).collect();
                    let flat: Vec<usize> = outer.iter().chain(holes.iter().flatten()).copied().collect();
                    for t in triangulate_rings(&ring2(&outer), &holes2) {
                        mesh.triangles.push(t.map(|i| (flat[i] - 1) as u32));
                    }
                }
                Ok(mesh)
            }
            other => skip(format!("unsupported body item {other} (#{})", item.instance_id)),
        }
    }

    fn point_list(&self, e: &StepEntity) -> R<Vec<Vec3>> {
        let rows = e.attr(0).and_then(StepValue::as_list).unwrap_or(&[]);
        rows.iter()
            .map(|row| {
                let c: Option<Vec<f64>> = row.as_list().and_then(|l| l.iter().map(StepValue::as_f64).collect());
                match c {
                    Some(c) if c.len() == 3 && c.iter().all(|v| v.is_finite()) => {
                        Ok(Vec3::new(c[0], c[1], c[2]) * self.scale)
                    }
                    _ => skip(format!("#{} has a malformed coordinate row", e.instance_id)),
                }
            })
            .collect()
    }

    /// Closed polyline as an open 2D ring (closing vertex dropped).
    fn polyline2d(&self, e: &StepEntity, frame: &Frame) -> R<Vec<P2>> {
        self.expect_type(e, &["IFCPOLYLINE"])?;
        let mut ring = Vec::new();
        for p in self.ref_list(e, 0)? {
            let q = frame.apply(self.point3(p)?);
            ring.push([q.x, q.y]);
        }
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        Ok(ring)
    }

    fn profile(&self, e: &StepEntity) -> R<(Vec<P2>, Vec<Vec<P2>>)> {
        let (outer, holes) = match e.type_name.as_str() {
            "IFCARBITRARYCLOSEDPROFILEDEF" | "IFCARBITRARYPROFILEDEFWITHVOIDS" => {
                let outer = self.polyline2d(self.ref_attr(e, 2)?, &Frame::IDENTITY)?;
                let holes = if e.type_name.ends_with("WITHVOIDS") {
                    self.ref_list(e, 3)?
                        .into_iter()
                        .map(|c| self.polyline2d(c, &Frame::IDENTITY))
                        .collect::<R<Vec<_>>>()?
                } else {
                    Vec::new()
                };
                (outer, holes)
            }
            "IFCRECTANGLEPROFILEDEF" => {
                let pos = match self.opt_ref_attr(e, 2)? {
                    Some(p) => self.axis2(p)?,
                    None => Frame::IDENTITY,
                };
                let (w, h) = (self.num(e, 3)? * self.scale / 2.0, self.num(e, 4)? * self.scale / 2.0);
                let ring = [[-w, -h], [w, -h], [w, h], [-w, h]]
                    .iter()
                    .map(|p| {
                        let q = pos.apply(Vec3::new(p[0], p[1], 0.0));
                        [q.x, q.y]
                    })
                    .collect();
                (ring, Vec::new())
            }
            other => return skip(format!("unsupported profile {other} (#{})", e.instance_id)),
        };
        let snap = self.tol.snap_tol;
        let outer = dedup_ring(outer, snap).0;
        let holes: Vec<_> = holes.into_iter().map(|h| dedup_ring(h, snap).0).collect();
        if outer.len() < 3 || holes.iter().any(|h| h.len() < 3) || ring_signed_area(&outer).abs() <= snap * snap {
            return skip(format!("degenerate geometry: profile #{}", e.instance_id));
        }
        Ok((outer, holes))
    }

    fn boundary(
        &self,
        e: &StepEntity,
        by_instance: &HashMap<u64, Id>,
        parts: &SnapshotParts,
        repairs: &mut Vec<Repair>,
    ) -> R<SpaceBoundary> {
        let id = self.global_id(e);
        let space_ent = self.ref_attr(e, 4)?;
        let Some(space) = by_instance.get(&space_ent.instance_id).filter(|s| parts.spaces.contains_key(*s)) else {
            return skip(format!("relating space #{} was not extracted", space_ent.instance_id));
        };
        let Some(elem_ent) = self.opt_ref_attr(e, 5)? else {
            return skip("virtual boundary without a building element");
        };
        let Some(element) = by_instance.get(&elem_ent.instance_id).filter(|s| parts.elements.contains_key(*s)) else {
            return skip(format!(
                "related element #{} ({}) was not extracted",
                elem_ent.instance_id, elem_ent.type_name
            ));
        };
        let Some(geom) = self.opt_ref_attr(e, 6)? else {
            return skip("no connection geometry");
        };
        self.expect_type(geom, &["IFCCONNECTIONSURFACEGEOMETRY"])?;
        let surf = self.ref_attr(geom, 0)?;
        self.expect_type(surf, &["IFCCURVEBOUNDEDPLANE"])?;
        let plane = self.ref_attr(surf, 0)?;
        self.expect_type(plane, &["IFCPLANE"])?;
        let local = self.axis2(self.ref_attr(plane, 0)?)?;
        let world = local.within(&self.object_frame(space_ent)?);

        let snap = self.tol.snap_tol;
        let mut fixed = 0;
        let mut ring = |c: &StepEntity| -> R<Vec<Vec3>> {
            let (r, n) = dedup_ring(self.polyline2d(c, &Frame::IDENTITY)?, snap);
            fixed += n;
            Ok(r.iter().map(|p| world.apply(Vec3::new(p[0], p[1], 0.0))).collect())
        };
        let outer = ring(self.ref_attr(surf, 1)?)?;
        let holes = self.ref_list(surf, 2)?.into_iter().map(&mut ring).collect::<R<Vec<_>>>()?;
        if fixed > 0 {
            repairs.push(Repair {
                instance_id: e.instance_id,
                entity: id.clone(),
                detail: format!("removed {fixed} coincident consecutive vertices"),
            });
        }
        if outer.len() < 3 || holes.iter().any(|h| h.len() < 3) {
            return skip("degenerate geometry: boundary ring with fewer than 3 vertices");
        }
        let raw = PlanarPolygon { plane: Plane { origin: world.origin, normal: world.z }, outer, holes };
        let raw = project_onto(&raw, &raw.plane.basis()).to_planar();
        if !(raw.area() > snap * snap) {
            return skip("degenerate geometry: zero-area boundary");
        }
        let sb_type = match e.attr(3).and_then(StepValue::as_str) {
            Some(d) if d.trim().eq_ignore_ascii_case("2b") => SbType::TypeB,
            _ => SbType::TypeA,
        };
        Ok(SpaceBoundary {
            id,
            space: space.clone(),
            element: element.clone(),
            sb_type,
            raw,
            enhanced: None,
            edits: Vec::new(),
            normal_into_element: world.z,
        })
    }
}

fn index_list(v: Option<&StepValue>) -> Option<Vec<usize>> {
    let l = v?.as_list()?;
    let out: Option<Vec<usize>> = l
        .iter()
        .map(|x| match x {
            StepValue::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => None,
        })
        .collect();
    out.filter(|o| o.len() >= 3)
}

fn newell(ring: &[Vec3]) -> Option<Vec3> {
    let mut n = Vec3::ZERO;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        n = n + Vec3::new((a.y - b.y) * (a.z + b.z), (a.z - b.z) * (a.x + b.x), (a.x - b.x) * (a.y + b.y));
    }
    n.normalized()
}

/// Drops vertices within `snap` of their predecessor (cyclically). Returns the
/// ring and how many vertices were removed.
fn dedup_ring(ring: Vec<P2>, snap: f64) -> (Vec<P2>, usize) {
    let close = |a: P2, b: P2| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= snap;
    let before = ring.len();
    let mut out: Vec<P2> = Vec::with_capacity(before);
    for p in ring {
        if out.last().is_none_or(|q| !close(*q, p)) {
            out.push(p);
        }
    }
    while out.len() > 1 && close(out[0], out[out.len() - 1]) {
        out.pop();
    }
    let removed = before - out.len();
    (out, removed)
}

fn append_mesh(into: &mut TriMesh, m: TriMesh) {
    let off = into.vertices.len() as u32;
    into.vertices.extend(m.vertices);
    into.triangles.extend(m.triangles.into_iter().map(|t| t.map(|i| i + off)));
}

fn length_scale(file: &StepFile) -> Result<f64, IngestError> {
    let mut saw_assignment = false;
    for ua in file.of_type("IFCUNITASSIGNMENT") {
        saw_assignment = true;
        let units = ua.attr(0).and_then(StepValue::as_list).unwrap_or(&[]);
        for u in units.iter().filter_map(StepValue::as_ref_id).filter_map(|r| file.get(r)) {
            if u.attr(1).and_then(StepValue::as_enum) == Some("LENGTHUNIT") {
                return unit_scale(file, u, 0);
            }
        }
    }
    Err(IngestError::UnitError(if saw_assignment {
        "unit assignment has no LENGTHUNIT".into()
    } else {
        "no IFCUNITASSIGNMENT".into()
    }))
}

fn unit_scale(file: &StepFile, u: &StepEntity, depth: usize) -> Result<f64, IngestError> {
    let err = |m: String| IngestError::UnitError(format!("#{}: {m}", u.instance_id));
    if depth > 8 {
        return Err(err("unit definition nested too deeply".into()));
    }
    match u.type_name.as_str() {
        "IFCSIUNIT" => {
            if u.attr(3).and_then(StepValue::as_enum) != Some("METRE") {
                return Err(err("length unit is not based on METRE".into()));
            }
            let prefix = match u.attr(2) {
                None | Some(StepValue::Unset) => 1.0,
                Some(StepValue::Enum(p)) => si_prefix(p).ok_or_else(|| err(format!("unknown prefix {p}")))?,
                _ => return Err(err("malformed prefix".into())),
            };
            Ok(prefix)
        }
        "IFCCONVERSIONBASEDUNIT" => {
            let m = u.attr(3).and_then(StepValue::as_ref_id).and_then(|r| file.get(r));
            let m = m.ok_or_else(|| err("missing conversion factor".into()))?;
            let value =
                m.attr(0).and_then(StepValue::as_f64).ok_or_else(|| err("malformed conversion value".into()))?;
            let base = m.attr(1).and_then(StepValue::as_ref_id).and_then(|r| file.get(r));
            let base = base.ok_or_else(|| err("missing conversion base unit".into()))?;
            let s = value * unit_scale(file, base, depth + 1)?;
            if s.is_finite() && s > 0.0 {
                Ok(s)
            } else {
                Err(err("non-positive conversion factor".into()))
            }
        }
        other => Err(err(format!("unsupported unit type {other}"))),
    }
}

fn si_prefix(p: &str) -> Option<f64> {
    Some(match p {
        "EXA" => 1e18,
        "PETA" => 1e15,
        "TERA" => 1e12,
        "GIGA" => 1e9,
        "MEGA" => 1e6,
        "KILO" => 1e3,
        "HECTO" => 1e2,
        "DECA" => 1e1,
        "DECI" => 1e-1,
        "CENTI" => 1e-2,
        "MILLI" => 1e-3,
        "MICRO" => 1e-6,
        "NANO" => 1e-9,
        "PICO" => 1e-12,
        "FEMTO" => 1e-15,
        "ATTO" => 1e-18,
        _ => return None,
    })
}

/// Product instance id to storey name.
fn storey_map(file: &StepFile) -> HashMap<u64, String> {
    let name = |id: u64| -> Option<String> {
        let s = file.get(id).filter(|s| s.type_name == "IFCBUILDINGSTOREY")?;
        Some(match s.attr(2).and_then(StepValue::as_str) {
            Some(n) if !n.is_empty() => n.to_string(),
            _ => s.attr(0).and_then(StepValue::as_str).unwrap_or_default().to_string(),
        })
    };
    let mut out = HashMap::new();
    let rels = file
        .of_type("IFCRELCONTAINEDINSPATIALSTRUCTURE")
        .map(|r| (r.attr(5), r.attr(4)))
        .chain(file.of_type("IFCRELAGGREGATES").map(|r| (r.attr(4), r.attr(5))));
    for (parent, children) in rels {
        let Some(storey) = parent.and_then(StepValue::as_ref_id).and_then(name) else { continue };
        for c in children.and_then(StepValue::as_list).unwrap_or(&[]).iter().filter_map(StepValue::as_ref_id) {
            out.insert(c, storey.clone());
        }
    }
    out
}

type MaterialInfo = (Vec<Layer>, Option<(&'static str, f64)>);

/// Product instance id to (layers, layer-direction axis and sense).
fn material_map(cx: &Ctx) -> HashMap<u64, MaterialInfo> {
    let mut out = HashMap::new();
    for rel in cx.file.of_type("IFCRELASSOCIATESMATERIAL") {
        let Ok(info) = cx.ref_attr(rel, 5).and_then(|m| material_info(cx, m)) else { continue };
        for obj in rel.attr(4).and_then(StepValue::as_list).unwrap_or(&[]).iter().filter_map(StepValue::as_ref_id) {
            out.insert(obj, info.clone());
        }
    }
    out
}

fn material_info(cx: &Ctx, m: &StepEntity) -> R<MaterialInfo> {
    match m.type_name.as_str() {
        "IFCMATERIALLAYERSETUSAGE" => {
            let (layers, _) = material_info(cx, cx.ref_attr(m, 0)?)?;
            let axis = match m.attr(1).and_then(StepValue::as_enum) {
                Some("AXIS1") => "AXIS1",
                Some("AXIS2") => "AXIS2",
                _ => "AXIS3",
            };
            let sense = if m.attr(2).and_then(StepValue::as_enum) == Some("NEGATIVE") { -1.0 } else { 1.0 };
            Ok((layers, Some((axis, sense))))
        }
        "IFCMATERIALLAYERSET" => {
            let layers = cx
                .ref_list(m, 0)?
                .into_iter()
                .map(|l| {
                    cx.expect_type(l, &["IFCMATERIALLAYER"])?;
                    let material = match cx.opt_ref_attr(l, 0)? {
                        Some(mat) => mat.attr(0).and_then(StepValue::as_str).unwrap_or_default().to_string(),
                        None => String::new(),
                    };
                    Ok(Layer { material, thickness: cx.num(l, 1)? * cx.scale })
                })
                .collect::<R<Vec<_>>>()?;
            Ok((layers, None))
        }
        _ => Ok((Vec::new(), None)),
    }
}

/// Entity counts by type for a parsed file, restricted to primary types.
pub fn primary_type_counts(file: &StepFile) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for e in file.entities.iter().filter(|e| PRIMARY_TYPES.contains(&e.type_name.as_str())) {
        *out.entry(e.type_name.clone()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::step::parse_step;
    use crate::validate::validate_snapshot;

    /// One 4 m x 0.2 m x 3 m wall (millimeter file), one 4x3x3 m space and
    /// one boundary on the wall face.
    fn tiny(boundary_points: &str) -> String {
        format!(
            "ISO-10303-21;
HEADER;FILE_DESCRIPTION((''),'2;1');FILE_NAME('t','',(''),(''),'','','');FILE_SCHEMA(('IFC4'));ENDSEC;
DATA;
#1=IFCPROJECT('p',$,'P',$,$,$,$,$,#2);
#2=IFCUNITASSIGNMENT((#3));
#3=IFCSIUNIT(*,.LENGTHUNIT.,.MILLI.,.METRE.);
#10=IFCCARTESIANPOINT((0.,0.,0.));
#11=IFCAXIS2PLACEMENT3D(#10,$,$);
#12=IFCLOCALPLACEMENT($,#11);
#20=IFCCARTESIANPOINT((0.,0.));
#21=IFCCARTESIANPOINT((4000.,0.));
#22=IFCCARTESIANPOINT((4000.,200.));
#23=IFCCARTESIANPOINT((0.,200.));
#24=IFCPOLYLINE((#20,#21,#22,#23,#20));
#25=IFCARBITRARYCLOSEDPROFILEDEF(.AREA.,$,#24);
#26=IFCDIRECTION((0.,0.,1.));
#27=IFCEXTRUDEDAREASOLID(#25,#11,#26,3000.);
#28=IFCSHAPEREPRESENTATION($,'Body','SweptSolid',(#27));
#29=IFCPRODUCTDEFINITIONSHAPE($,$,(#28));
#30=IFCWALL('wall-1',$,'W',$,$,#12,#29,$,$);
#40=IFCCARTESIANPOINT((0.,-3000.));
#41=IFCCARTESIANPOINT((4000.,-3000.));
#42=IFCCARTESIANPOINT((4000.,0.));
#43=IFCPOLYLINE((#20,#42,#41,#40,#20));
#44=IFCARBITRARYCLOSEDPROFILEDEF(.AREA.,$,#43);
#45=IFCEXTRUDEDAREASOLID(#44,#11,#26,3000.);
#46=IFCSHAPEREPRESENTATION($,'Body','SweptSolid',(#45));
#47=IFCPRODUCTDEFINITIONSHAPE($,$,(#46));
#48=IFCSPACE('space-1',$,'S',$,$,#12,#47,$,$,$,$);
#50=IFCDIRECTION((0.,1.,0.));
#51=IFCDIRECTION((1.,0.,0.));
#52=IFCAXIS2PLACEMENT3D(#10,#50,#51);
#53=IFCPLANE(#52);
#54=IFCPOLYLINE(({boundary_points}));
#55=IFCCURVEBOUNDEDPLANE(#53,#54,());
#56=IFCCONNECTIONSURFACEGEOMETRY(#55,$);
#57=IFCRELSPACEBOUNDARY('sb-1',$,$,$,#48,#30,#56,.PHYSICAL.,.INTERNAL.);
#60=IFCBUILDINGSTOREY('st',$,'Level 0',$,$,$,$,$,.ELEMENT.,0.);
#61=IFCRELCONTAINEDINSPATIALSTRUCTURE('r1',$,$,$,(#30),#60);
#62=IFCRELAGGREGATES('r2',$,$,$,#60,(#48));
ENDSEC;
END-ISO-10303-21;
"
        )
    }

    const SQUARE: &str = "#70,#71,#72,#73,#70";

    fn with_points(extra: &str, order: &str) -> String {
        tiny(order).replace("ENDSEC;\nEND", &format!("{extra}ENDSEC;\nEND"))
    }

    fn square_points() -> &'static str {
        "#70=IFCCARTESIANPOINT((0.,0.));\n#71=IFCCARTESIANPOINT((4000.,0.));\n#72=IFCCARTESIANPOINT((4000.,3000.));\n#73=IFCCARTESIANPOINT((0.,3000.));\n"
    }

    #[test]
    fn millimeter_file_becomes_meters() {
        let src = with_points(square_points(), SQUARE);
        let (snap, report) = ingest_step(src.as_bytes(), &Tolerances::default()).unwrap();
        assert_eq!(report.length_unit_scale, 1e-3);
        let wall = snap.element(&Id::from("wall-1")).unwrap();
        let bb = wall.solid.aabb().unwrap();
        assert!(((bb.max.x - bb.min.x) - 4.0).abs() < 1e-12);
        assert!(((bb.max.z - bb.min.z) - 3.0).abs() < 1e-12);
        assert_eq!(wall.storey, "Level 0");
        let b = snap.boundary(&Id::from("sb-1")).unwrap();
        assert!((b.raw.area() - 12.0).abs() < 1e-9);
        assert_eq!(b.normal_into_element, Vec3::Y);
        assert_eq!(snap.space(&Id::from("space-1")).unwrap().storey, "Level 0");
        assert!(report.is_clean(), "{report:?}");
        assert_eq!(report.opaque, vec![EntityRef { instance_id: 1, type_name: "IFCPROJECT".into() }]);
        assert!(validate_snapshot(&snap).is_empty(), "{:?}", validate_snapshot(&snap));
    }

    #[test]
    fn coincident_vertices_are_repaired_and_reported() {
        let extra = format!("{}#74=IFCCARTESIANPOINT((4000.,3000.));\n", square_points());
        let src = with_points(&extra, "#70,#71,#72,#74,#73,#70");
        let (snap, report) = ingest_step(src.as_bytes(), &Tolerances::default()).unwrap();
        assert_eq!(snap.boundary(&Id::from("sb-1")).unwrap().raw.outer.len(), 4);
        assert_eq!(report.repairs.len(), 1);
        assert_eq!(report.repairs[0].entity, Id::from("sb-1"));
    }

    #[test]
    fn missing_units_and_boundaries_are_errors() {
        let src =
            with_points(square_points(), SQUARE).replace("#2=IFCUNITASSIGNMENT((#3));", "#2=IFCUNITASSIGNMENT(());");
        assert!(matches!(ingest_step(src.as_bytes(), &Tolerances::default()), Err(IngestError::UnitError(_))));
        let src = with_points(square_points(), SQUARE).replace("#57=IFCRELSPACEBOUNDARY", "#57=IFCRELFOO");
        assert_eq!(ingest_step(src.as_bytes(), &Tolerances::default()).unwrap_err(), IngestError::NoSpaceBoundaries);
    }

    #[test]
    fn cyclic_placement_is_a_geometry_error() {
        let src = with_points(square_points(), SQUARE)
            .replace("#12=IFCLOCALPLACEMENT($,#11);", "#12=IFCLOCALPLACEMENT(#12,#11);");
        assert!(matches!(ingest_step(src.as_bytes(), &Tolerances::default()), Err(IngestError::GeometryError { .. })));
    }

    #[test]
    fn conservation_counts_skips() {
        // boundary to an element that is not in the subset
        let src = with_points(square_points(), SQUARE).replace("#30=IFCWALL(", "#30=IFCCOLUMN(");
        let file = parse_step(src.as_bytes()).unwrap();
        let (_, report) = extract_snapshot(&file, &Tolerances::default()).unwrap();
        let primary: usize = primary_type_counts(&file).values().sum();
        assert_eq!(report.extracted.total() + report.skipped.len(), primary);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.opaque.iter().any(|o| o.type_name == "IFCCOLUMN"));
    }
}
