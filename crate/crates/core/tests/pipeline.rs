use thzce::channel::sample_channel;
use thzce::dictionary::{build_dictionaries, build_grid, DictionaryKind};
use thzce::estimators::{amp_sbl, msbl, nmse, reconstruct, somp};
use thzce::measurement::{generate_pilot_matrix, measure};
use thzce::rng::stream;
use thzce::unfolded::{load_model, save_model, unfolded_forward, UnfoldedModel};
use thzce::SystemConfig;

fn problem(seed: u64, m: usize, snr_db: f64) -> (SystemConfig, thzce::channel::ChannelRealization, thzce::measurement::MeasurementSet) {
    let cfg = SystemConfig { seed, m, snr_db, ..SystemConfig::desk() };
    let ch = sample_channel(&cfg, &mut stream(seed, 1)).unwrap();
    let w = generate_pilot_matrix(m, cfg.n, &mut stream(seed, 0));
    let dicts = build_dictionaries(&cfg, DictionaryKind::Polar);
    let set = measure(&ch.h, w, &dicts, cfg.noise_variance(), &mut stream(seed, 2)).unwrap();
    (cfg, ch, set)
}

#[test]
fn classic_estimators_recover_channel() {
    let (cfg, ch, set) = problem(21, 48, 20.0);
    let dicts = build_dictionaries(&cfg, DictionaryKind::Polar);

    let s = somp(&set.y, &set.phi, 6).unwrap();
    let somp_db = nmse(&ch.h, &reconstruct(&dicts, &s.x).unwrap()).unwrap().db;
    let b = msbl(&set.y, &set.phi, set.sigma2, 50).unwrap();
    let msbl_db = nmse(&ch.h, &reconstruct(&dicts, &b.mu).unwrap()).unwrap().db;
    let a = amp_sbl(&set.y, &set.phi, set.sigma2, 50).unwrap();
    let amp_db = nmse(&ch.h, &reconstruct(&dicts, &a.mu).unwrap()).unwrap().db;

    assert_eq!(s.support.len(), 6);
    assert!(somp_db < -2.0, "SOMP {somp_db}");
    assert!(msbl_db < -5.0, "MSBL {msbl_db}");
    assert!(amp_db.is_finite());
    // more pilots, same channel: MSBL error drops
    let (_, ch2, set2) = problem(21, 64, 20.0);
    assert_eq!(ch.h, ch2.h);
    let b2 = msbl(&set2.y, &set2.phi, set2.sigma2, 50).unwrap();
    let msbl64 = nmse(&ch.h, &reconstruct(&dicts, &b2.mu).unwrap()).unwrap().db;
    assert!(msbl64 < msbl_db, "{msbl64} vs {msbl_db}");
}

#[test]
fn saved_model_gives_same_estimate() {
    let (cfg, _, set) = problem(4, 32, 10.0);
    let grid = build_grid(&cfg);
    let model = UnfoldedModel::new(3, grid.s, grid.q, 16, &mut stream(9, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let loaded = load_model(dir.path()).unwrap();
    let a = unfolded_forward(&set.y, &set.phi, set.sigma2, 32, 10.0, &model, false).unwrap();
    let b = unfolded_forward(&set.y, &set.phi, set.sigma2, 32, 10.0, &loaded, false).unwrap();
    assert_eq!(a.mu, b.mu);
    assert_eq!(a.mu.len(), cfg.k);
    assert_eq!(a.mu[0].len(), grid.s * grid.q);
}
