use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fbmfg_cli::RunConfig;

fn fbmfg(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fbmfg"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("FBMFG_THREADS", t),
        None => cmd.env_remove("FBMFG_THREADS"),
    };
    cmd.output().expect("spawn fbmfg")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const HEAT: &str = "model = \"decoupled-heat\"\ngrid.dim = 1\ngrid.n = 16\ngrid.nt = 20\ngrid.T = 0.1\n";

#[test]
fn decoupled_heat_run_converges_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "heat.toml", HEAT);
    let out = dir.path().join("o");
    let res = fbmfg(&["run", &cfg, "--out", out.to_str().unwrap()], Some("2"));
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let series = fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next(), Some("iter,d,gamma,norm_u_w21p,norm_u_c10,norm_m_c10,min_m,max_Du"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.len() <= 2);
    assert_eq!(rows.last().unwrap()[1].parse::<f64>().unwrap(), 0.0);
    // 17 significant digits
    assert_eq!(rows[0][6], "5.0000000000000000e-1");

    for name in ["fields_t0.csv", "fields_thalf.csv", "fields_tT.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.starts_with("x1,u,m\n"));
    }
}

#[test]
fn manifest_echoes_the_configuration_and_digests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "heat.toml", &format!("{HEAT}truncation.K = 50.0\niteration.max_iter = 7\n"));
    let out = dir.path().join("o");
    assert_eq!(fbmfg(&["run", &cfg, "--out", out.to_str().unwrap()], None).status.code(), Some(0));

    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    let echoed = RunConfig::from_manifest(&manifest).unwrap();
    let mut expected = RunConfig::load(Path::new(&cfg)).unwrap();
    expected.output.dir = out.clone();
    assert_eq!(echoed, expected);

    let doc: toml::Table = manifest.parse().unwrap();
    assert_eq!(doc["resolved"]["K"].as_float(), Some(50.0));
    for key in ["M1", "L_h", "C0"] {
        assert!(doc["resolved"][key].as_float().is_some(), "{key}");
    }
    assert_eq!(doc["result"]["status"].as_str(), Some("converged"));
    assert!(doc["result"]["wall_clock_secs"].as_float().is_some());
    let artifacts = doc["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 4);
    for a in artifacts {
        let bytes = fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        let digest = sha2_hex(&bytes);
        assert_eq!(a["sha256"].as_str(), Some(digest.as_str()));
    }

    // re-running from the manifest alone reproduces the series
    let again = dir.path().join("again.toml");
    fs::write(&again, echoed.to_toml().replace(out.to_str().unwrap(), dir.path().join("p").to_str().unwrap())).unwrap();
    assert_eq!(fbmfg(&["run", again.to_str().unwrap()], None).status.code(), Some(0));
    assert_eq!(fs::read(out.join("series.csv")).unwrap(), fs::read(dir.path().join("p/series.csv")).unwrap());
}

fn sha2_hex(bytes: &[u8]) -> String {
    // computed by the system tool, independently of the runner
    let tmp = tempfile::NamedTempFile::new().unwrap();
    fs::write(tmp.path(), bytes).unwrap();
    let out = Command::new("sha256sum").arg(tmp.path()).output().expect("sha256sum");
    String::from_utf8(out.stdout).unwrap().split_whitespace().next().unwrap().to_string()
}

#[test]
fn counterexample_near_critical_time_exits_2_with_note() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "model = \"linear-counterexample\"\ngrid.dim = 1\ngrid.n = 32\ngrid.nt = 64\ngrid.T = 0.0139\n\
         params.alpha = -3.0\niteration.max_iter = 300\noutput.fields = false\n",
    );
    let out = dir.path().join("o");
    let res = fbmfg(&["run", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(2));
    let doc: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    let note = &doc["counterexample"];
    assert!((note["critical_time"].as_float().unwrap() - 0.013_914_087_181_483_8).abs() < 1e-15);
    assert!(note["relative_distance"].as_float().unwrap().abs() < 2e-3);
    assert!(note["note"].as_str().unwrap().contains("critical time"));
    assert!(!out.join("fields_t0.csv").exists());
}

#[test]
fn quadratic_mfg_example_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", "model = \"quadratic-mfg\"\ngrid.dim = 1\ngrid.n = 32\ngrid.nt = 64\ngrid.T = 0.05\n");
    let out = dir.path().join("o");
    assert_eq!(fbmfg(&["run", &cfg, "--out", out.to_str().unwrap()], None).status.code(), Some(0));
    let series = fs::read_to_string(out.join("series.csv")).unwrap();
    for line in series.lines().skip(2) {
        let gamma: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(gamma < 1.0);
    }
}

#[test]
fn sweep_of_decoupled_heat_is_all_true() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "heat.toml", HEAT);
    let out = dir.path().join("s");
    let res = fbmfg(&["sweep", &cfg, "--T-list", "0.2,0.05,0.1", "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(0));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("T,nt,converged,"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let ts: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ts, vec![0.05, 0.1, 0.2]);
    assert!(rows.iter().all(|r| r[2] == "true" && r[4] == "0"));
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), vec!["10", "20", "40"]);
}

#[test]
fn configuration_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &format!("{HEAT}grid.colour = 3\n"));
    assert_eq!(fbmfg(&["run", &bad], None).status.code(), Some(1));
    assert_eq!(fbmfg(&["run", "/nonexistent/config.toml"], None).status.code(), Some(1));
    let cfg = write(dir.path(), "heat.toml", HEAT);
    let out = dir.path().join("o");
    assert_eq!(fbmfg(&["run", &cfg, "--out", out.to_str().unwrap()], Some("zero")).status.code(), Some(1));
    assert_eq!(fbmfg(&["sweep", &cfg, "--T-list", "0.1,abc"], None).status.code(), Some(1));
    // K below the admissible minimum
    let low = write(dir.path(), "low.toml", &format!("{HEAT}truncation.K = 1.0\n"));
    assert_eq!(fbmfg(&["run", &low, "--out", out.to_str().unwrap()], None).status.code(), Some(1));
}
