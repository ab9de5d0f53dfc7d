use dobs::harness::{simulate_sphere_features, train_sphere_model, SphereSetup};
use dobs::io::{Container, ObserverSettings, SavedModel};
use dobs::observer::{frame_clock_observer, Init};

#[test]
fn sphere_pipeline_end_to_end() {
    let setup = SphereSetup {
        covariance_window: 15,
        ..SphereSetup::default()
    };
    let data = simulate_sphere_features(&setup, 0.024, 200, 4).unwrap();
    let trained = train_sphere_model(&setup, &data.feats).unwrap();
    let model = &trained.embedding.model;
    assert_eq!(model.m, setup.coords);
    assert!(model.mu[1..].windows(2).all(|w| w[0] >= w[1]));
    assert!(model.lambda[1..=model.m].iter().all(|l| l.unwrap() > 0.0));
    assert!(trained.observer.contraction_rate() < 1.0);

    let traj = trained.observer.run(&data.feats, Init::FirstCoordinate).unwrap();
    assert_eq!(traj.states.shape(), (201, setup.coords));
    assert!(traj.states.iter().all(|v| v.is_finite()));
}

#[test]
fn saved_model_reproduces_observer_output() {
    let setup = SphereSetup {
        covariance_window: 15,
        ..SphereSetup::default()
    };
    let data = simulate_sphere_features(&setup, 0.016, 150, 9).unwrap();
    let trained = train_sphere_model(&setup, &data.feats).unwrap();
    let mut saved = SavedModel::new(trained.embedding.model.clone(), data.feats.clone(), &trained.embedding.covariances);
    saved.lift = Some(trained.lift.clone());
    saved.observer = Some(ObserverSettings {
        gamma: setup.gamma,
        dt_eff: None,
    });

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dob");
    saved.save(&path).unwrap();
    let back = SavedModel::load(&path).unwrap();
    assert_eq!(Container::load(&path).unwrap().kind, "model");

    let again = frame_clock_observer(&back.model, back.lift.clone().unwrap(), back.observer.unwrap().gamma, None).unwrap();
    let a = trained.observer.run(&data.feats, Init::Zero).unwrap();
    let b = again.run(&back.features, Init::Zero).unwrap();
    assert_eq!(a.states, b.states);
    let covs = back.covariances();
    for (x, y) in covs.inverses.iter().zip(&trained.embedding.covariances.inverses) {
        assert_eq!(x.factor, y.factor);
        assert!((&x.pinv - &y.pinv).amax() <= 1e-10 * (1.0 + y.pinv.amax()));
    }
}
