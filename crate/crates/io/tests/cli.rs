use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seaice_core::driver::State;
use seaice_core::{DiagRecord, Grid, ScalarField, VectorField};
use seaice_io::config::{parse_config, InitialSpec, RunConfig};
use seaice_io::diagnostics::{read_diagnostics, to_csv, write_diagnostics};
use seaice_io::snapshot::{read_manifest, SnapshotError};
use seaice_io::{read_snapshot, write_snapshot};

fn seaice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seaice")).args(args).output().expect("binary runs")
}

/// A small random-smooth config written into `dir`.
fn small_config(dir: &Path, t_end: f64) -> PathBuf {
    let mut cfg = RunConfig {
        initial: InitialSpec::RandomSmooth { h_range: [0.6, 1.4], a_range: [0.0, 1.0], u_amp: 0.05, modes: 2 },
        t_end,
        seed: 3,
        out_dir: dir.join("out"),
        ..RunConfig::default()
    };
    cfg.grid.nx = 8;
    cfg.grid.ny = 8;
    let path = dir.join("cfg.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn bits(s: &State) -> Vec<u64> {
    [&s.u.x, &s.u.y, &s.h, &s.a].iter().flat_map(|f| f.values().iter().map(|v| v.to_bits())).chain([s.t.to_bits()]).collect()
}

fn sample_state(t: f64) -> State {
    let g = Grid::new(5, 4, 2.0, 1.5).unwrap();
    let f = |c: f64| ScalarField::from_fn(g, move |x, y| c + x * 0.37 - y * y * 1.3);
    State::new(VectorField::new(f(0.1), f(-0.2)), f(1.0), f(0.25), t).unwrap()
}

#[test]
fn zero_horizon_run_writes_snapshot_and_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 0.0);
    let out = seaice(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let init = read_snapshot(&o.join("initial.json")).unwrap();
    let fin = read_snapshot(&o.join("final.json")).unwrap();
    assert_eq!(bits(&init), bits(&fin));
    let diag = read_diagnostics(&o.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.len(), 1);
    assert_eq!(diag[0].t, 0.0);
}

#[test]
fn missing_config_is_an_error() {
    let out = seaice(&["run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn invalid_config_is_rejected_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"initial": {"family": "constant", "u": [0, 0], "h": 1.0, "a": 1.5}}"#).unwrap();
    let out = seaice(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("initial.a"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn check_invariants_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 0.0);
    let out = seaice(&["check-invariants", "--config", cfg.to_str().unwrap(), "--strict"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(!stdout.contains("FAIL"));
    assert_eq!(stdout.lines().count(), 7);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 0.01);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let od = dir.path().join(format!("run{k}"));
        let out = seaice(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", od.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<Vec<u8>> = ["initial.bin", "final.bin", "final.json", "diagnostics.csv", "violations.csv"].iter().map(|f| fs::read(od.join(f)).unwrap()).collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn overrides_apply_to_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 0.0);
    let od = dir.path().join("ov");
    let out = seaice(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", od.to_str().unwrap(), "--nx", "6", "--seed", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_manifest(&od.join("final.json")).unwrap();
    assert_eq!((m.grid.nx, m.grid.ny), (6, 6));
}

#[test]
fn config_round_trips_through_json() {
    let mut cfg = RunConfig { initial: InitialSpec::Constant { u: [0.1, -0.2], h: 1.5, a: 0.75 }, slab_cap: Some(0.01), seed: 42, ..RunConfig::default() };
    cfg.regularization.eps = 0.05;
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(parse_config(&text).unwrap(), cfg);
}

#[test]
fn bundled_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["standard.json", "random_smooth.json"] {
        let cfg = seaice_io::load_config(&root.join(name)).unwrap();
        cfg.initial_state().unwrap();
    }
}

#[test]
fn snapshot_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let s = sample_state(0.125);
    let p = dir.path().join("s.json");
    write_snapshot(&s, &p).unwrap();
    assert_eq!(bits(&read_snapshot(&p).unwrap()), bits(&s));
}

#[test]
fn truncated_payload_is_a_length_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    write_snapshot(&sample_state(0.0), &p).unwrap();
    let bin = p.with_extension("bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
    match read_snapshot(&p) {
        Err(SnapshotError::LengthMismatch { expected, actual, .. }) => assert_eq!(expected, actual + 8),
        other => panic!("expected a length mismatch, got {other:?}"),
    }
}

/// Reads the payload using only the manifest's documented layout.
#[test]
fn manifest_is_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    let s = sample_state(0.5);
    write_snapshot(&s, &p).unwrap();
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(m["endianness"], "little");
    assert_eq!(m["dtype"], "f64");
    let (nx, ny) = (m["grid"]["nx"].as_u64().unwrap() as usize, m["grid"]["ny"].as_u64().unwrap() as usize);
    let payload = fs::read(dir.path().join(m["payload"].as_str().unwrap())).unwrap();
    let field = |name: &str| -> Vec<f64> {
        let e = m["fields"].as_array().unwrap().iter().find(|f| f["name"] == name).unwrap();
        let (off, len) = (e["offset"].as_u64().unwrap() as usize, e["len"].as_u64().unwrap() as usize);
        assert_eq!(len, nx * ny);
        payload[off..off + 8 * len].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
    };
    assert_eq!(field("h"), s.h.values());
    assert_eq!(field("A"), s.a.values());
    assert_eq!(field("u_x"), s.u.x.values());
    assert_eq!(field("u_y"), s.u.y.values());
    // row-major: index = j * nx + i
    assert_eq!(field("h")[2 * nx + 1], s.h.get(1, 2));
    assert_eq!(m["t"].as_f64(), Some(0.5));
}

fn record(t: f64) -> DiagRecord {
    let mut v = [0.0; 16];
    for (k, x) in v.iter_mut().enumerate() {
        *x = t + (k as f64).sqrt() / 3.0;
    }
    DiagRecord {
        t,
        h_min: v[1],
        h_max: v[2],
        a_min: v[3],
        a_max: v[4],
        mass: v[5],
        u_h3: v[6],
        h_h3: v[7],
        a_h3: v[8],
        energy: v[9],
        frak_energy: v[10],
        picard_ratio: f64::NAN,
        picard_iterations: 12,
        cg_iterations: 345,
        cg_residual: 1e-300,
        div_growth: -v[15],
    }
}

#[test]
fn empty_series_writes_header_only() {
    let text = String::from_utf8(to_csv(&[]).unwrap()).unwrap();
    assert_eq!(text.trim_end(), DiagRecord::COLUMNS.join(","));
}

#[test]
fn diagnostics_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    for series in [vec![record(0.0)], vec![record(0.0), record(1.0 / 3.0), record(0.7)]] {
        write_diagnostics(&series, &p).unwrap();
        let back = read_diagnostics(&p).unwrap();
        assert_eq!(back.len(), series.len());
        for (a, b) in series.iter().zip(&back) {
            assert_eq!(a.values().map(f64::to_bits), b.values().map(f64::to_bits));
        }
    }
    let text = fs::read_to_string(&p).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[12], "12");
    assert_eq!(row[13], "345");
    assert_eq!(row[11], "NaN");
}
