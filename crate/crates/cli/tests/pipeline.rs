use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use caster_cli::export::{export, export_file, ExportRequest};
use caster_cli::scenario::CastingScenario;
use caster_cli::simulate::{plan, simulate, view_definition};
use caster_cli::Client;
use caster_core::connectors::csv::read_csv;
use caster_core::model::IndexRange;
use caster_core::model::{AssetId, SeriesId};
use caster_core::store::QuerySpec;
use caster_service::{BackgroundServer, ServiceConfig};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn demo(views: bool) -> BackgroundServer {
    let mut cfg = ServiceConfig::load(&root().join("config/demo.toml")).unwrap();
    cfg.views_enabled = views;
    cfg.maintenance_interval_s = 0;
    let p = cfg.build_platform().unwrap();
    BackgroundServer::start(Arc::new(p), cfg.batch_size()).unwrap()
}

fn quiet() -> CastingScenario {
    CastingScenario { speed_noise: 0.0, duration: 45.0, ..CastingScenario::default() }
}

#[test]
fn demo_config_ships_valid() {
    let cfg = ServiceConfig::load(&root().join("config/demo.toml")).unwrap();
    let p = cfg.build_platform().unwrap();
    assert_eq!(p.bindings().len(), 1);
    let s = CastingScenario::load(&root().join("scenarios/default.toml")).unwrap();
    assert_eq!(s, CastingScenario::default());
}

#[test]
fn simulate_posts_the_scenario() {
    let server = demo(true);
    let c = Client::new(&server.url());
    let s = CastingScenario::default();
    let report = simulate(&c, &s).unwrap();
    assert_eq!(report.points, 3600);
    assert_eq!(report.batches, 6);
    assert_eq!(report.cuts, 8);
    assert!(report.view_defined);
    let p = server.platform();
    let strand = SeriesId::new("strand-1").unwrap();
    assert_eq!(p.store().layout(&strand).unwrap().points, 3600);
    let billets: Vec<_> = p.assets().into_iter().filter(|a| a.asset_type == "billet").collect();
    assert_eq!(billets.len(), 8);
    let products = p.view_products(&caster_core::model::ViewId::new("billets").unwrap()).unwrap();
    assert_eq!(products.len(), 8);

    // posting again changes nothing
    let cuts = SeriesId::new("cuts-1").unwrap();
    simulate(&c, &s).unwrap();
    assert_eq!(p.store().layout(&strand).unwrap().points, 3600);
    assert_eq!(p.store().layout(&cuts).unwrap().points, 8);
    assert_eq!(p.assets().len(), 10);
}

#[test]
fn pipeline_provenance_matches_analytic_bounds() {
    let server = demo(true);
    let s = quiet();
    simulate(&Client::new(&server.url()), &s).unwrap();
    let p = server.platform();
    let start = s.start_ns().unwrap();
    let mm_per_ns = s.base_speed * 1000.0 / 60.0e9;
    let t_at = |x: f64| start as f64 + x / mm_per_ns;
    let tol = (1.0 / mm_per_ns).ceil();
    let def = view_definition(&s);
    let sim = plan(&s).unwrap();
    assert_eq!(sim.billets.len() as i64, s.expected_billets());
    let mut cells = 0;
    for b in &sim.billets {
        let table = p.query_view(&def.id, &AssetId::new(b.id.clone()).unwrap()).unwrap();
        for row in &table.rows {
            for (cell, sensor) in row.cells.iter().zip(&s.sensors) {
                let cell = cell.expect("noise-free billets are fully covered");
                let d = sensor.offset_mm as f64;
                let lo = t_at(b.start_mm as f64 + d);
                let hi = t_at(b.end_mm as f64 + d);
                let t = cell.source_time as f64;
                assert!(t >= lo - tol && t <= hi + tol, "{} at {}: {t} outside [{lo}, {hi}]", b.id, row.position);
                let exact = t_at((b.start_mm + row.position) as f64 + d);
                assert!((t - exact).abs() <= tol, "{} at {}: {t} vs {exact}", b.id, row.position);
                cells += 1;
            }
        }
    }
    assert_eq!(cells, sim.billets.len() * 12 * 3);
}

#[test]
fn simulate_without_views() {
    let server = demo(false);
    let report = simulate(&Client::new(&server.url()), &quiet()).unwrap();
    assert!(!report.view_defined);
    assert_eq!(report.cuts as i64, quiet().expected_billets());
}

#[test]
fn simulate_reports_unreachable_service() {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", l.local_addr().unwrap());
    drop(l);
    let e = simulate(&Client::new(&url), &quiet()).unwrap_err();
    assert!(matches!(e, caster_cli::simulate::SimError::ServiceUnreachable(_)), "{e}");
}

#[test]
fn export_round_trips_through_the_csv_connector() {
    let server = demo(true);
    let c = Client::new(&server.url());
    let s = quiet();
    simulate(&c, &s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("strand.csv");
    let req = ExportRequest {
        series: "strand-1".into(),
        from: Some("2026-01-01T00:10:00Z".into()),
        to: Some("2026-01-01T00:20:00Z".into()),
        channels: None,
    };
    assert_eq!(export_file(&c, &req, &out).unwrap(), 600);
    let p = server.platform();
    let id = SeriesId::new("strand-1").unwrap();
    let back = read_csv(&out, &p.schema(&id).unwrap()).unwrap();
    let range =
        IndexRange::new(s.start_ns().unwrap() + 600_000_000_000, s.start_ns().unwrap() + 1_200_000_000_000).unwrap();
    let want = p.query(&id, &QuerySpec::range(range)).unwrap().result.frame;
    assert!(back.bit_eq(&want));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("index,v_c,T_l,T_s,Q_w\n1767226200000000000,2.5,"), "{}", &text[..80]);

    let mut buf = Vec::new();
    let sub = ExportRequest { channels: Some(vec!["T_s".into()]), ..req.clone() };
    export(&c, &sub, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("index,T_s\n"));

    let missing = dir.path().join("none.csv");
    assert!(export_file(&c, &ExportRequest { series: "nope".into(), ..req }, &missing).is_err());
    assert!(!missing.exists());
}

#[test]
fn export_fails_on_broken_federated_segment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(root().join("config/legacy/conformance-r10.csv"), dir.path().join("legacy.csv")).unwrap();
    let text = std::fs::read_to_string(root().join("config/demo.toml"))
        .unwrap()
        .replace("legacy/conformance-r10.csv", "legacy.csv");
    let cfg_path = dir.path().join("demo.toml");
    std::fs::write(&cfg_path, text).unwrap();
    let cfg = ServiceConfig::load(&cfg_path).unwrap();
    let server = BackgroundServer::start(Arc::new(cfg.build_platform().unwrap()), 10).unwrap();
    let c = Client::new(&server.url());
    let req = ExportRequest { series: "conformance.r10".into(), ..Default::default() };
    let out = dir.path().join("out.csv");
    assert_eq!(export_file(&c, &req, &out).unwrap(), 240);
    std::fs::remove_file(dir.path().join("legacy.csv")).unwrap();
    assert!(export_file(&c, &req, &out).is_err());
    assert!(!out.exists());
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn binary_subcommands() {
    let exe = env!("CARGO_BIN_EXE_caster");
    let help = Command::new(exe).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["serve", "simulate", "conformance", "export"] {
        assert!(text.contains(sub), "{text}");
    }

    let port = free_port();
    let mut serve = Command::new(exe)
        .args(["serve", "--config"])
        .arg(root().join("config/demo.toml"))
        .env("CASTER_LISTEN", format!("127.0.0.1:{port}"))
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}");
    let c = Client::new(&url);
    let up = (0..100).any(|_| {
        std::thread::sleep(std::time::Duration::from_millis(100));
        c.health().is_ok()
    });
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("short.toml");
    std::fs::write(
        &scenario,
        std::fs::read_to_string(root().join("scenarios/default.toml"))
            .unwrap()
            .replace("duration = 60", "duration = 30"),
    )
    .unwrap();
    let sim = Command::new(exe).args(["simulate", "--url", &url, "--scenario"]).arg(&scenario).output().unwrap();
    let out = dir.path().join("cuts.csv");
    let exp = Command::new(exe)
        .args(["export", "--url", &url, "--series", "cuts-1", "--from", "0", "--to", "2000000000000000000", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    let bad = Command::new(exe).args(["simulate", "--url", &url, "--scenario", "/nonexistent.toml"]).output().unwrap();
    serve.kill().unwrap();
    serve.wait().unwrap();

    assert!(up, "service did not come up on CASTER_LISTEN");
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(String::from_utf8_lossy(&sim.stdout).contains("points posted:     1800"));
    assert!(exp.status.success(), "{}", String::from_utf8_lossy(&exp.stderr));
    // 30 min at 2.5 m/min: 75 m cast, 25 m past the cutter, two billets
    let cuts = std::fs::read_to_string(&out).unwrap();
    assert_eq!(cuts.lines().count(), 3, "{cuts}");
    assert!(cuts.starts_with("index,product_id,start_mm,end_mm\n"));
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("invalid scenario"));
}
