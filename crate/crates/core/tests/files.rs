//! Save/load through the filesystem.

use hac_core::dataset::{generate_random_dataset, Dataset};
use hac_core::dynamics::{fit_dynamics, DynamicsModel, FitConfig};
use hac_core::env::{MountainCarEnv, PendulumEnv};
use hac_core::policy::Policy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn dataset_model_and_policy_survive_disk() {
    let dir = tempfile::tempdir().unwrap();
    let env = PendulumEnv::benchmark();
    let data = generate_random_dataset(&env, 300, 2, 1.0).unwrap();
    data.save(dir.path().join("d.pmds")).unwrap();
    assert_eq!(Dataset::load(dir.path().join("d.pmds")).unwrap(), data);

    let cfg = FitConfig { epochs: 2, hidden: 8, ..FitConfig::default() };
    let (model, _) = fit_dynamics(data.transitions(), 2, 1, &cfg).unwrap();
    model.save(dir.path().join("m.bin")).unwrap();
    assert_eq!(DynamicsModel::load(dir.path().join("m.bin")).unwrap(), model);

    // Bounded action space, so the squashing scale is stored too.
    let policy = Policy::for_env(&MountainCarEnv::benchmark(), 8, &mut ChaCha8Rng::seed_from_u64(1));
    policy.save(dir.path().join("p.bin")).unwrap();
    assert_eq!(Policy::load(dir.path().join("p.bin")).unwrap(), policy);
}

#[test]
fn truncated_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pmds");
    generate_random_dataset(&PendulumEnv::benchmark(), 10, 0, 1.0).unwrap().save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(Dataset::load(&path).is_err());
    std::fs::write(&path, b"XXXX").unwrap();
    assert!(Dataset::load(&path).is_err());
}
