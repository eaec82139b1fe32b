use thzce::SystemConfig;
use thzce_bench::experiments::{self, Combo, ExperimentSpec, Models};

fn spec(samples: usize, combos: &str) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(SystemConfig::desk());
    spec.samples = samples;
    spec.combos = combos.split(',').map(|c| c.parse::<Combo>().unwrap()).collect();
    spec
}

#[test]
fn more_pilots_lower_error() {
    let mut s = spec(20, "somp-pd,msbl-pd");
    s.m_grid = vec![16, 64];
    s.iterations.msbl = 30;
    let r = experiments::vs_m(&s, &Models::default()).unwrap();
    for (alg, dict) in [("somp", "PD"), ("msbl", "PD")] {
        let lo = r.find("16", alg, dict).unwrap().nmse_db;
        let hi = r.find("64", alg, dict).unwrap().nmse_db;
        assert!(hi < lo - 1.0, "{alg}: M=16 {lo} dB, M=64 {hi} dB");
    }
}

#[test]
fn sparsity_rows() {
    let r = experiments::sparsity_structure(&spec(10, "somp-pd"), 10.0, 20).unwrap();
    let pd = r.find("10", "jaccard", "PD").unwrap().nmse_db;
    let ad = r.find("10", "jaccard", "common-AD").unwrap().nmse_db;
    assert!((0.0..=1.0).contains(&pd) && (0.0..=1.0).contains(&ad));
    assert!(pd > ad, "{pd} vs {ad}");
}
