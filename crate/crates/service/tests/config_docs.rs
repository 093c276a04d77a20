use std::path::Path;

use caster_service::ServiceConfig;

fn root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

fn toml_blocks(md: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur: Option<String> = None;
    for line in md.lines() {
        match (&mut cur, line.trim_start()) {
            (None, "```toml") => cur = Some(String::new()),
            (Some(b), "```") => {
                out.push(std::mem::take(b));
                cur = None;
            }
            (Some(b), _) => {
                b.push_str(line);
                b.push('\n');
            }
            _ => {}
        }
    }
    out
}

#[test]
fn documented_declarations_apply() {
    let md = std::fs::read_to_string(root().join("docs/config.md")).unwrap();
    let blocks = toml_blocks(&md);
    assert!(blocks.len() >= 7);
    // every block is a table array, so top-level keys go first
    let text = format!("maintenance_interval_s = 0\n{}", blocks.concat());
    let config_path = root().join("config/docs-example.toml");
    let cfg = ServiceConfig::parse(&text, Some(&config_path)).unwrap();
    let p = cfg.build_platform().unwrap();
    assert_eq!(p.series_schemas().len(), 2);
    assert_eq!(p.assets().len(), 1);
    assert_eq!(p.views().unwrap().len(), 1);
}

#[test]
fn errors_carry_file_line_and_column() {
    let e = ServiceConfig::parse("listen = \"127.0.0.1:1\"\nbatch_size = 0\n", Some(Path::new("x.toml"))).unwrap_err();
    assert_eq!(e.to_string(), "x.toml:2:14: batch_size must be within 1..=100000");
}

#[test]
fn entry_errors_point_at_the_table() {
    let text = "listen = \"127.0.0.1:1\"\n\n[[series]]\nid = \"s\"\nindexKind = \"time\"\nseriesKind = \"historical\"\nchannels = []\n";
    let e = ServiceConfig::parse(text, Some(Path::new("x.toml"))).unwrap_err();
    assert_eq!(e.to_string(), "x.toml:3:1: series[0]: series needs at least one channel");
}
