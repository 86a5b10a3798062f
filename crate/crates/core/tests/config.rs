use bloch_homog::cauchy::Centering;
use bloch_homog::cell::EffectiveData;
use bloch_homog::config::{CauchyMode, RunConfig, SCHEMA_VERSION};
use bloch_homog::expsweep::Law;
use bloch_homog::lattice::FourierBasis;
use bloch_homog::Error;

fn example() -> String {
    std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example.toml")).unwrap()
}

#[test]
fn example_config_parses() {
    let cfg = RunConfig::from_toml(&example()).unwrap();
    assert_eq!(cfg.schema_version, SCHEMA_VERSION);
    assert_eq!(cfg.model.name, "hermitian_2d");
    assert_eq!(cfg.model.params["c"], 0.1);
    assert_eq!(cfg.law, Some(Law::Enhanced));
    assert_eq!(cfg.cauchy.mode, CauchyMode::LongTime);
    assert!(matches!(cfg.cauchy.centering, Centering::Worst { .. }));
    assert_eq!(cfg.bands.thetas.len(), 2);
    assert_eq!(cfg.validate_options().seed, 20240611);
    cfg.model.build().unwrap();
}

#[test]
fn config_round_trips_through_toml() {
    for cfg in [RunConfig::default(), RunConfig::from_toml(&example()).unwrap()] {
        let text = cfg.to_toml();
        let again = RunConfig::from_toml(&text).unwrap();
        assert_eq!(again.to_toml(), text);
    }
}

#[test]
fn minimal_config_takes_defaults() {
    let cfg = RunConfig::from_toml("schema_version = 1\n").unwrap();
    assert_eq!(cfg.model.name, "acoustics_1d");
    assert!(cfg.cutoff.is_none());
    assert_eq!(cfg.s, 2.0);
    assert!(!cfg.eps_list.is_empty() && !cfg.tau_list.is_empty());
}

#[test]
fn invariants_are_enforced() {
    let bad = [
        "",
        "schema_version = 7\n",
        "schema_version = 1\ncutoff = 0.0\n",
        "schema_version = 1\ns = -0.1\n",
        "schema_version = 1\ns = 3.01\n",
        "schema_version = 1\ntau_list = []\n",
        "schema_version = 1\neps_list = [0.1, -0.1]\n",
        "schema_version = 1\ntheta_grid = 0\n",
        "schema_version = 1\n[cauchy]\neps_list = []\n",
        "schema_version = 1\n[sharpness]\ntau_list = []\n",
        "schema_version = 1\nlaw = \"fastest\"\n",
        "schema_version = 1\nextra = true\n",
    ];
    for text in bad {
        assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text:?}");
    }
}

#[test]
fn inline_matrix_model_builds() {
    // 2D scalar conductivity given by coefficient records
    let text = r#"
schema_version = 1
[model]
name = "layered"
[model.inline]
lattice = [[1.0, 0.0], [0.0, 1.0]]
b = [{ re = [[1.0], [0.0]] }, { re = [[0.0], [1.0]] }]
g = [
  { freq = [0, 0], re = [[2.0, 0.0], [0.0, 2.0]] },
  { freq = [1, 0], re = [[0.5, 0.0], [0.0, 0.5]] },
  { freq = [-1, 0], re = [[0.5, 0.0], [0.0, 0.5]] },
]
default_cutoff = 80.0
"#;
    let cfg = RunConfig::from_toml(text).unwrap();
    let m = cfg.model.build().unwrap();
    assert_eq!((m.spec.m, m.spec.n), (2, 1));
    let basis = FourierBasis::new(&m.spec.lattice, m.default_cutoff).unwrap();
    let eff = EffectiveData::compute(&m.spec, &basis).unwrap();
    // laminate across x1: harmonic mean along e1, arithmetic mean along e2
    let g0 = &eff.g0;
    assert!((g0[(0, 0)].re - 3f64.sqrt()).abs() < 1e-7, "{}", g0[(0, 0)]);
    assert!((g0[(1, 1)].re - 2.0).abs() < 1e-12);
    assert!(g0[(0, 1)].norm() < 1e-12);
}

#[test]
fn scalar_expression_rejected_for_matrix_field() {
    let text = r#"
schema_version = 1
[model.inline]
lattice = [[1.0, 0.0], [0.0, 1.0]]
b = [{ re = [[1.0], [0.0]] }, { re = [[0.0], [1.0]] }]
g = "2 + cos(2*pi*x1)"
"#;
    let cfg = RunConfig::from_toml(text).unwrap();
    assert!(matches!(cfg.model.build(), Err(Error::Config(_))));
}
