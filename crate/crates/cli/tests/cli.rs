use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vpot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpot")).args(args).env("VPOT_THREADS", "1").output().expect("runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/ot").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn distance(args: &[&str]) -> f64 {
    let o = vpot(args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    stdout(&o).trim().parse().expect("a number")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

/// Column `name` of a CSV file as numbers (empty cells skipped).
fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.filter_map(|l| l.split(',').nth(k).filter(|c| !c.is_empty()).map(|c| c.parse().unwrap())).collect()
}

const FREE: &str = r#"
scenario = "free-streaming-small"
particles = 256
seed = 11
dt = 0.05
t_end = 1.0

[initial]
kind = "gaussian-blob"
sigma = 0.5
velocity_sigma = 0.1

[grid]
half_width = 4.0
cells = 16

[twin.a]
model = "free"

[twin.b]
model = "free"
perturbation = { kind = "velocity-shift", delta = [0.0, 0.02, 0.0] }

[ot]
stride = 5
max_points = 128
loglip_pairs = 256

[output]
snapshot_every = 0
dumps = false
"#;

const IDENTITY: &str = r#"
scenario = "identity"
particles = 512
seed = 3
dt = 0.05
t_end = 0.5

[initial]
kind = "gaussian-blob"
sigma = 0.5
velocity_sigma = 0.1

[grid]
half_width = 3.0
cells = 16

[twin.a]
model = "grid"

[twin.b]
model = "grid"

[ot]
stride = 5
max_points = 128
loglip_pairs = 256

[output]
snapshot_every = 0
dumps = false
"#;

const BLOB: &str = r#"
scenario = "blob-small"
particles = 1024
seed = 5
dt = 0.04
t_end = 0.8

[initial]
kind = "gaussian-blob"
sigma = 0.5
velocity_sigma = 0.1

[grid]
half_width = 3.0
cells = 24

[twin.a]
model = "grid"

[twin.b]
model = "grid"
cells = 16

[ot]
stride = 5
max_points = 256
loglip_pairs = 256

[output]
snapshot_every = 0
dumps = false
"#;

#[test]
fn ot_fixtures() {
    let (a2, b2) = (fixture("two-point-a.txt"), fixture("two-point-b.txt"));
    assert_eq!(distance(&["ot", &a2, &a2]), 0.0);
    assert!((distance(&["ot", "--exact", &a2, &b2]) - 0.1).abs() < 1e-12);

    let (a, b) = (fixture("blob64-a.txt"), fixture("blob64-b.txt"));
    let exact = distance(&["ot", &a, &b]);
    let entropic = distance(&["ot", "--sinkhorn", &a, &b]);
    assert!((entropic - exact).abs() / exact <= 0.02, "{entropic} vs {exact}");
    assert!(entropic >= exact - 1e-12);
}

#[test]
fn ot_plan_output() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.txt");
    let (a, b) = (fixture("two-point-a.txt"), fixture("two-point-b.txt"));
    distance(&["ot", &a, &b, "--plan-out", plan.to_str().unwrap()]);
    let text = fs::read_to_string(&plan).unwrap();
    let mut entries: Vec<(usize, usize)> = text
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    entries.sort();
    assert_eq!(entries, vec![(0, 1), (1, 0)]);
}

#[test]
fn ot_rejects_conflicting_flags() {
    let a = fixture("two-point-a.txt");
    assert_eq!(vpot(&["ot", "--exact", "--sinkhorn", &a, &a]).status.code(), Some(2));
    assert_eq!(vpot(&["ot", &a, "/nonexistent/cloud.txt"]).status.code(), Some(2));
}

#[test]
fn config_errors_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad_key = FREE.replace("t_end = 1.0", "t_end = 1.0\nbogus = 3");
    let line = bad_key.lines().position(|l| l.starts_with("bogus")).unwrap() + 1;
    let cfg = write_config(dir.path(), &bad_key);
    let o = vpot(&["twin", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&format!("config.toml:{line}:")), "{}", stderr(&o));

    let bad_value = FREE.replace("dt = 0.05", "dt = -0.05");
    let line = bad_value.lines().position(|l| l.starts_with("dt =")).unwrap() + 1;
    let cfg = write_config(dir.path(), &bad_value);
    let o = vpot(&["simulate", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&format!("config.toml:{line}:")), "{}", stderr(&o));

    assert_eq!(vpot(&["twin", "--scenario", "no-such", "--out", out.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn step_size_violation_is_a_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &IDENTITY.replace("dt = 0.05", "dt = 5.0").replace("t_end = 0.5", "t_end = 10.0"));
    let o = vpot(&["simulate", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn single_particle_streams_freely() {
    let dir = tempfile::tempdir().unwrap();
    let text = FREE.replace("particles = 256", "particles = 1").replace("snapshot_every = 0", "snapshot_every = 5");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = vpot(&["simulate", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let x0: Vec<f64> = ["x", "y", "z", "vx", "vy", "vz"]
        .iter()
        .map(|c| column(&out.join("snapshots/step_000000.csv"), c)[0])
        .collect();
    for step in [5usize, 10, 15, 20] {
        let snap = out.join(format!("snapshots/step_{step:06}.csv"));
        let t = 0.05 * step as f64;
        for (a, c) in ["x", "y", "z"].iter().enumerate() {
            let x = column(&snap, c)[0];
            assert!((x - (x0[a] + t * x0[a + 3])).abs() < 1e-12, "step {step} {c}");
        }
    }
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &IDENTITY.replace("dumps = false", "dumps = true"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(vpot(&["simulate", &cfg, "-o", a.to_str().unwrap()]).status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_vpot"))
        .args(["simulate", &cfg, "-o", b.to_str().unwrap()])
        .env("VPOT_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let (ma, mb) = (fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(ma, mb);
    assert!(String::from_utf8(ma).unwrap().contains("dumps/density_000000.bin"));
}

#[test]
fn identical_twins_have_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), IDENTITY);
    let out = dir.path().join("out");
    let o = vpot(&["twin", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let q = column(&out.join("records.csv"), "q");
    assert!(!q.is_empty() && q.iter().all(|&v| v == 0.0));
}

#[test]
fn free_streaming_gap_has_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FREE);
    let out = dir.path().join("out");
    let o = vpot(&["twin", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let records = out.join("records.csv");
    let (t, q) = (column(&records, "t"), column(&records, "q"));
    for (t, q) in t.iter().zip(&q) {
        let exact = 0.5 * 0.02 * 0.02 * (1.0 + t * t);
        assert!((q - exact).abs() <= 1e-12 * exact, "t {t}: {q} vs {exact}");
    }

    // Certifying the records again passes with vanishing field terms.
    let cert = dir.path().join("cert");
    let o = vpot(&["certify", records.to_str().unwrap(), "--fit-constants", "--out", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("gronwall      PASS"));
    assert!(column(&records, "t1").iter().chain(&column(&records, "t2")).all(|&v| v == 0.0));

    // Growth of Q at rate 5 with no field terms violates the gap inequality.
    let text = fs::read_to_string(&records).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for line in lines.iter_mut().skip(1) {
        let mut cells: Vec<String> = line.split(',').map(String::from).collect();
        let (t, q): (f64, f64) = (cells[1].parse().unwrap(), cells[2].parse().unwrap());
        cells[2] = format!("{:e}", q * (5.0 * t).exp());
        cells[3] = String::new();
        *line = cells.join(",");
    }
    let jumped = dir.path().join("jumped.csv");
    fs::write(&jumped, lines.join("\n") + "\n").unwrap();
    let o = vpot(&["certify", jumped.to_str().unwrap(), "--out", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("gronwall      FAIL"));
    let o = vpot(&["certify", records.to_str().unwrap(), "--prop31-tol", "-0.999", "--out", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_gap_records_certify_trivially() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), IDENTITY);
    let out = dir.path().join("out");
    vpot(&["twin", &cfg, "--out", out.to_str().unwrap()]);
    let o = vpot(&["certify", out.join("records.csv").to_str().unwrap(), "--fit-constants", "--window", "0.1", "0.4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    assert!(out.join("certification.csv").exists() && out.join("certify-manifest.json").exists());
}

#[test]
fn two_resolution_blob_twin_feeds_certify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BLOB);
    let out = dir.path().join("out");
    let o = vpot(&["twin", &cfg, "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let cert = dir.path().join("cert");
    let o = vpot(&["certify", out.join("records.csv").to_str().unwrap(), "--no-containment", "-o", cert.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    assert!(stdout(&o).contains("prop31        PASS"), "{}", stdout(&o));
    for r in column(&out.join("records.csv"), "prop31_ratio") {
        assert!(r <= 1.05);
    }
}

#[test]
fn report_rejects_tampered_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), IDENTITY);
    let out = dir.path().join("out");
    vpot(&["twin", &cfg, "--out", out.to_str().unwrap()]);
    fs::write(out.join("summary.txt"), "edited\n").unwrap();
    let o = vpot(&["report", out.join("manifest.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

fn golden_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Runs a twin and its report, and compares the report files with the
/// golden copies (rewritten instead when `VPOT_BLESS` is set).
fn check_golden(name: &str, config: &str) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), config);
    let out = dir.path().join("out");
    let o = vpot(&["twin", &cfg, "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let o = vpot(&["report", out.join("manifest.json").to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let golden = golden_dir(name);
    for file in ["report.txt", "tables/gap.csv", "tables/prop31.csv"] {
        let got = fs::read_to_string(out.join(file)).unwrap();
        let path = golden.join(file);
        if std::env::var_os("VPOT_BLESS").is_some() {
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(&path, &got).unwrap();
        } else {
            let want = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
            assert!(got == want, "{name}/{file} differs from the golden copy");
        }
    }
}

#[test]
fn golden_identity() {
    check_golden("identity", IDENTITY);
}

#[test]
fn golden_free_streaming() {
    check_golden("free-streaming", FREE);
}

#[test]
fn golden_blob() {
    check_golden("blob", BLOB);
}

#[test]
fn bundled_scenarios_listed() {
    let o = vpot(&["scenarios"]);
    let names = stdout(&o);
    for n in ["gaussian-blob", "uniform-ball", "two-blob-merger", "free-streaming", "monokinetic-hubble"] {
        assert!(names.lines().any(|l| l == n));
    }
    let o = vpot(&["scenarios", "uniform-ball"]);
    assert!(stdout(&o).contains("scenario = \"uniform-ball\""));
}
