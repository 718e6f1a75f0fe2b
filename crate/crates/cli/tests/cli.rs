//! The `bemtrace` binary on the fixture models.

mod common;

use bemtrace_core::network::import_bem;
use common::{bemtrace, code, fixture, run, s, stderr, Server};
use serde_json::Value;

fn json(path: &std::path::Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn convert_house() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("house.bem.json");
    let rep = dir.path().join("house.report.json");
    let o = run(&["convert", s(&fixture("house.ifc")), "-o", s(&out), "--report", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let net = import_bem(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(net.rooms.len(), 7);
    let report = json(&rep);
    assert_eq!(report["schema"], "bemtrace-report/1");
    assert_eq!(report["blocked"], false);
}

#[test]
fn convert_broken_file_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let o = run(&["convert", s(&fixture("broken.ifc")), "-o", s(&out)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("broken.ifc") && err.contains("99999"), "{err}");
    assert!(!out.exists());
}

#[test]
fn convert_usecase4_is_blocked_but_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("uc4.bem.json");
    let rep = dir.path().join("uc4.report.json");
    let o = run(&["convert", s(&fixture("usecase4.ifc")), "-o", s(&out), "--report", s(&rep)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(out.exists());
    let report = json(&rep);
    let mea =
        report["conflicts"].as_array().unwrap().iter().filter(|c| c["kind"] == "MultipleExternalAdjacency").count();
    assert_eq!(mea, 1);
    assert_eq!(report["blocked"], true);

    let o = run(&[
        "convert",
        s(&fixture("usecase4.ifc")),
        "-o",
        s(&out),
        "--config",
        s(&fixture("usecase4_resolve.json")),
        "--report",
        s(&rep),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&rep)["applied_resolutions"].as_array().unwrap().len(), 1);
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, br#"{"tolerances":{"snap_tol":"tiny"}}"#).unwrap();
    let o = run(&["convert", s(&fixture("house.ifc")), "-o", s(&dir.path().join("o.json")), "--config", s(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tolerances.snap_tol"), "{}", stderr(&o));
}

#[test]
fn unsupported_extension_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("model.step");
    std::fs::write(&input, b"ISO-10303-21;").unwrap();
    assert_eq!(code(&run(&["convert", s(&input), "-o", s(&dir.path().join("o"))])), 1);
    assert_eq!(code(&run(&["convert"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn validate_codes() {
    let o = run(&["validate", s(&fixture("house.ifc"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["validation"]["violations"], Value::Array(vec![]));
    assert_eq!(doc["open_conflicts"], 0);
    assert_eq!(code(&run(&["validate", s(&fixture("usecase4.ifc"))])), 2);
    assert_eq!(code(&run(&["validate", s(&fixture("broken.ifc"))])), 1);
    assert_eq!(code(&run(&["validate", s(&fixture("house.bimlite.json"))])), 0);
}

#[test]
fn report_prints_the_conversion_report() {
    let o = run(&["report", s(&fixture("usecase5.ifc")), "--config", s(&fixture("usecase5_resolve.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["open_conflicts"], 0);
}

#[test]
fn bimlite_twin_round_trips_and_converts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let twin = dir.path().join("house.bimlite.json");
    assert_eq!(code(&run(&["to-bimlite", s(&fixture("house.ifc")), "-o", s(&twin)])), 0);
    assert!(std::fs::read(&twin).unwrap() == std::fs::read(fixture("house.bimlite.json")).unwrap());
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert_eq!(code(&run(&["convert", s(&fixture("house.ifc")), "-o", s(&a)])), 0);
    assert_eq!(code(&run(&["convert", s(&twin), "-o", s(&b)])), 0);
    assert!(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap());
}

#[test]
fn log_level_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.json");
    let input = fixture("house.ifc");
    let args = ["convert", s(&input), "-o", s(&out)];
    let quiet = bemtrace().args(args).output().unwrap();
    assert!(!stderr(&quiet).contains("INFO"), "{}", stderr(&quiet));
    let loud = bemtrace().args(args).env("BEMTRACE_LOG", "info").output().unwrap();
    assert!(stderr(&loud).contains("INFO"), "{}", stderr(&loud));
    assert!(stderr(&loud).contains("7 rooms"));
}

#[test]
fn serve_empty_then_interrupt() {
    let server = Server::start(&[]);
    let (status, body) = server.request("GET", "/models", b"");
    assert_eq!(status, 200);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), Value::Array(vec![]));
    assert_eq!(server.interrupt(), 0);
}

#[test]
fn serve_preloaded_dir_matches_cli_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models");
    std::fs::create_dir(&models).unwrap();
    std::fs::copy(fixture("house.ifc"), models.join("house.ifc")).unwrap();
    std::fs::write(models.join("notes.txt"), b"ignored").unwrap();
    let server = Server::start(&["--models", s(&models)]);
    let (_, body) = server.request("GET", "/models", b"");
    let list: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["name"], "house.ifc");

    let (status, _) = server.request("POST", "/models/m1/convert", b"");
    assert_eq!(status, 200);
    let (status, served) = server.request("GET", "/models/m1/bem", b"");
    assert_eq!(status, 200);
    let out = dir.path().join("cli.bem.json");
    assert_eq!(code(&run(&["convert", s(&fixture("house.ifc")), "-o", s(&out)])), 0);
    assert!(served == std::fs::read(&out).unwrap());
    assert_eq!(server.interrupt(), 0);
}

#[test]
fn serve_fails_on_bound_port_and_bad_models_dir() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = run(&["serve", "--port", &port]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bind"), "{}", stderr(&o));
    let o = run(&["serve", "--port", "0", "--models", "/nonexistent/models"]);
    assert_eq!(code(&o), 1);
}
