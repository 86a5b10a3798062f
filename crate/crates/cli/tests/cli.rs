use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bloch-homog"))
}

fn run(args: &[&str], config: Option<&str>, out: &Path) -> Output {
    let mut cmd = bin();
    cmd.args(args).arg("--out").arg(out).arg("--quiet");
    if let Some(text) = config {
        let path = out.with_extension("toml");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn effective_reports_harmonic_mean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eff");
    let o = run(&["effective"], None, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("effective.json")).unwrap();
    assert!(text.contains("1.7320508075688772e0"));
    let g0 = json(&out.join("effective.json"))["g0"]["re"][0][0].as_f64().unwrap();
    assert!((g0 - 3f64.sqrt()).abs() < 1e-12);
}

#[test]
fn germ_classifies_hermitian_model_as_general() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("germ");
    let cfg = "schema_version = 1\n[model]\nname = \"hermitian_2d\"\nparams = { c = 0.1 }\n";
    let o = run(&["germ"], Some(cfg), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let c = &json(&out.join("classification.json"))["classification"];
    assert_eq!(c["label"], "general only");
    let n0 = c["n0_max"].as_f64().unwrap();
    assert!((n0 - 1.5e-3).abs() < 1e-4, "{n0}");
    let csv = std::fs::read_to_string(out.join("germ.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "theta_1,theta_2,gamma_1,mu_1,nu_1,n_norm,n0_norm,ambiguous");
    assert_eq!(csv.lines().count(), 65);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "schema_version = 2\n",
        "schema_version = 1\ncutoff = -1.0\n",
        "schema_version = 1\ns = 3.5\n",
        "schema_version = 1\neps_list = []\n",
        "schema_version = 1\nunknown_key = 1\n",
        "schema_version = 1\n[model]\nname = \"no_such_model\"\n",
        "schema_version = 1\n[model]\nname = \"acoustics_1d\"\nparams = { bogus = 1.0 }\n",
        "not toml at all [",
    ];
    for (i, cfg) in cases.iter().enumerate() {
        let o = run(&["effective"], Some(cfg), &dir.path().join(format!("c{i}")));
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["effective", "--cutoff", "-2"], None, &dir.path().join("neg"));
    assert_eq!(o.status.code(), Some(2));
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn enhanced_probe_on_general_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "schema_version = 1\nlaw = \"enhanced\"\ntheta_grid = 16\n[model]\nname = \"hermitian_2d\"\nparams = { c = 0.2 }\n";
    let o = run(&["sharpness"], Some(cfg), &dir.path().join("p"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inline_model_matches_named_model() {
    let dir = tempfile::tempdir().unwrap();
    let named = dir.path().join("named");
    let inline = dir.path().join("inline");
    let cfg = "schema_version = 1\n[model]\nname = \"custom\"\n[model.inline]\nlattice = [[1.0]]\nb = [{ re = [[1.0]] }]\ng = \"2 + cos(2*pi*x1)\"\ndefault_cutoff = 100.5\n";
    assert_eq!(run(&["effective"], None, &named).status.code(), Some(0));
    let o = run(&["effective"], Some(cfg), &inline);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = json(&named.join("effective.json"))["g0"]["re"][0][0].as_f64().unwrap();
    let b = json(&inline.join("effective.json"))["g0"]["re"][0][0].as_f64().unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "schema_version = 1\ntheta_grid = 16\neps_list = [0.125, 0.0625, 0.03125]\ntau_list = [1.0, 100.0]\n\
               [model]\nname = \"hermitian_2d\"\nparams = { c = 0.2 }\n[k_grid]\noctaves = 8\nper_octave = 2\nangles = 8\n";
    for cmd in ["effective", "germ", "sweep"] {
        let a = dir.path().join(format!("{cmd}_a"));
        let b = dir.path().join(format!("{cmd}_b"));
        assert_eq!(run(&[cmd, "--threads", "1"], Some(cfg), &a).status.code(), Some(0));
        assert_eq!(run(&[cmd, "--threads", "3"], Some(cfg), &b).status.code(), Some(0));
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(!names.is_empty());
        for n in names {
            assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{cmd} {n:?}");
        }
    }
}

#[test]
fn cauchy_table_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cauchy");
    let cfg = "schema_version = 1\ns = 3.0\nlaw = \"general\"\n[cauchy]\neps_list = [0.0625, 0.03125, 0.015625]\nfiber_cutoff = 40.0\n";
    let o = run(&["cauchy"], Some(cfg), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = json(&out.join("cauchy.json"));
    assert!((t["fitted_slope"].as_f64().unwrap() - 1.0).abs() < 0.05);
    let csv = std::fs::read_to_string(out.join("cauchy.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "eps,tau,l2_error,bound,ratio,data_norm,nodes");
}

#[test]
fn validate_exit_codes_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "schema_version = 1\n[validate]\nrandom_fields = 4\nmodels = [\"acoustics_1d\"]\n";
    let (a, b) = (dir.path().join("va"), dir.path().join("vb"));
    assert_eq!(run(&["validate"], Some(cfg), &a).status.code(), Some(0));
    assert_eq!(run(&["validate"], Some(cfg), &b).status.code(), Some(0));
    for f in ["validate.csv", "validate.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // a coarse basis misses the harmonic mean and the notch checks
    let o = run(&["validate", "--cutoff", "13"], Some(cfg), &dir.path().join("coarse"));
    assert_eq!(o.status.code(), Some(1));
    let csv = std::fs::read_to_string(dir.path().join("coarse/validate.csv")).unwrap();
    assert!(csv.lines().any(|l| l.ends_with(",false")));
}
