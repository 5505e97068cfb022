use slnet_demo::Demo;

#[test]
fn session_runs_every_operation() {
    let mut demo = Demo::new(4, 120, 1.0).unwrap();
    assert_eq!((demo.width(), demo.height(), demo.frames()), (64, 64, 120));
    assert_eq!(demo.frame_rgba("raw", 0).unwrap().len(), 64 * 64 * 4);

    let median = demo.baseline("median", 0).unwrap();
    let rolling = demo.baseline("rolling-ball", 10).unwrap();
    assert!((0.0..=100.0).contains(&median) && (0.0..=100.0).contains(&rolling));

    let first = demo.train_epoch(12.0).unwrap();
    let second = demo.train_epoch(12.0).unwrap();
    assert!(first.is_finite() && second.is_finite());
    assert_eq!(demo.epochs_trained(), 2);
    let net = demo.decompose().unwrap();
    assert!(net > median, "slnet {net} vs median {median}");
    assert_eq!(demo.frame_rgba("lowrank", 119).unwrap().len(), 64 * 64 * 4);

    assert!(demo.localize().unwrap() > 0);
    assert_eq!(demo.render_rgba(4).unwrap().len(), 256 * 256 * 4);

    // Changing alpha restarts training from a fresh model.
    demo.train_epoch(3.0).unwrap();
    assert_eq!(demo.epochs_trained(), 1);
}
