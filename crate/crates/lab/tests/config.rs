use hclm_core::surrogates::SurrogateKind;
use hclm_core::thermostat::ThermoMode;
use hclm_lab::config::{load_config, parse_config, to_json, ExperimentConfig, InitialDensity};
use hclm_langevin::PotentialSpec;

#[test]
fn emitted_config_loads_back_identically() {
    let mut cfg = ExperimentConfig {
        tag: "roundtrip".into(),
        ..ExperimentConfig::default()
    };
    cfg.run.energy.beta = 0.37;
    cfg.run.thermo.mode = ThermoMode::RlThermostat;
    cfg.run.thermo.r_star = Some(-0.1);
    cfg.run.minibatch = Some(64);
    cfg.sweep.betas = vec![0.1 + 0.2, 1.0 / 3.0];
    cfg.sweep.surrogates = vec![SurrogateKind::Variance];
    cfg.langevin.potential = PotentialSpec::DoubleWell { height: 0.7, tilt: -0.2 };
    cfg.fokker_planck.dt = Some(1e-4);
    cfg.fokker_planck.initial = InitialDensity::PointMass { cell: 3 };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, to_json(&cfg).unwrap()).unwrap();
    assert_eq!(load_config(&path).unwrap(), cfg);
}

#[test]
fn partial_documents_fill_defaults() {
    let cfg = parse_config(r#"{"sweep": {"betas": [0.5]}, "memory": {"trials": 3}}"#).unwrap();
    assert_eq!(cfg.sweep.betas, vec![0.5]);
    assert_eq!(cfg.sweep.modes, ThermoMode::ALL.to_vec());
    assert_eq!(cfg.memory.trials, 3);
    assert_eq!(cfg.run, ExperimentConfig::default().run);
}

#[test]
fn type_errors_name_the_key() {
    let msg = parse_config(r#"{"sweep": {"betas": [0.1, "x"]}}"#).unwrap_err().to_string();
    assert!(msg.contains("sweep.betas"), "{msg}");
    let msg = parse_config(r#"{"run": {"energy": {"surrogate": {"kind": "gaussian"}}}}"#).unwrap_err().to_string();
    assert!(msg.contains("run.energy.surrogate.kind"), "{msg}");
}

#[test]
fn tags_cannot_escape_the_output_tree() {
    let cfg = ExperimentConfig {
        tag: "../elsewhere".into(),
        ..ExperimentConfig::default()
    };
    assert!(cfg.validate().is_err());
}
