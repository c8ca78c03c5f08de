use letsne::*;

fn small_config(mode: EmbedMode) -> TrainConfig {
    let mut c = TrainConfig::for_mode(mode);
    c.hidden = vec![32, 16];
    c.batch_size = 64;
    c.epochs = 30;
    c.perplexity = 10.0;
    c.seed = 7;
    c
}

fn blobs() -> Data {
    make_blobs::<f64>(40, 3, 10, 1.5, 2).unwrap()
}

fn labels_of(data: &Data) -> Vec<usize> {
    data.labels().unwrap().iter().map(|l| l.unwrap()).collect()
}

#[test]
fn labelled_mode_separates_blobs() {
    let data = blobs();
    let (_, out) = train(&data, &small_config(EmbedMode::Labelled), None).unwrap();
    assert_eq!(out.embedding.dim(), (120, 2));
    let acc = knn_classify_accuracy(out.embedding.view(), &labels_of(&data), 1).unwrap();
    assert!(acc >= 0.95, "1-NN accuracy {acc}");
}

#[test]
fn zero_epochs_returns_initial_projection() {
    let data = blobs();
    let mut cfg = small_config(EmbedMode::Visualization);
    cfg.epochs = 0;
    let (model, out) = train(&data, &cfg, None).unwrap();
    let init = Model::init(data.d(), &cfg.hidden, 2, cfg.seed).unwrap();
    assert_eq!(model, init);
    assert_eq!(out.embedding, init.predict(data.values().view()).unwrap());
    assert!(out.history.is_empty());
}

#[test]
fn training_is_deterministic() {
    let data = blobs();
    let cfg = small_config(EmbedMode::Visualization);
    let (_, a) = train(&data, &cfg, None).unwrap();
    let (_, b) = train(&data, &cfg, None).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed += 1;
    let (_, c) = train(&data, &other, None).unwrap();
    assert_ne!(a.embedding, c.embedding);
}

#[test]
fn loss_decreases_over_training() {
    let data = blobs();
    let (_, out) = train(&data, &small_config(EmbedMode::Labelled), None).unwrap();
    assert_eq!(out.history.len(), 30);
    let first = out.history[0].total;
    let last = out.history.last().unwrap().total;
    assert!(last < first, "loss went from {first} to {last}");
    for (i, e) in out.history.iter().enumerate() {
        assert_eq!(e.epoch, i + 1);
    }
}

#[derive(Default)]
struct Recorder(Vec<BatchEvent>);

impl TrainObserver for Recorder {
    fn on_batch(&mut self, event: &BatchEvent) {
        self.0.push(*event);
    }
}

#[test]
fn modes_wire_their_graph_and_divergence() {
    let cube = make_quadrant_cube::<f64>(8, 3, 0.2, 1).unwrap();
    let grid = cube.grid().unwrap();
    let ids: Vec<usize> = (0..64).map(|p| 2 * usize::from(p / 8 >= 4) + usize::from(p % 8 >= 4)).collect();
    let regions = RegionMap::new(grid.height, grid.width, ids).unwrap();
    let cases = [
        (EmbedMode::Visualization, AdjacencyMode::Knn, KlDirection::Forward),
        (EmbedMode::Labelled, AdjacencyMode::Label, KlDirection::Reverse),
        (EmbedMode::Region, AdjacencyMode::Region, KlDirection::Reverse),
    ];
    for (mode, adjacency, direction) in cases {
        let mut cfg = small_config(mode);
        cfg.epochs = 2;
        cfg.batch_size = 30;
        let mut rec = Recorder::default();
        train_observed(&cube, &cfg, Some(&regions), &mut rec).unwrap();
        // 64 samples in batches of 30: sizes 30, 30, 4
        assert!(rec.0.iter().all(|e| e.adjacency == adjacency && e.direction == direction));
        assert!(rec.0.iter().all(|e| e.size >= 4));
        assert_eq!(rec.0.len(), 2 * 3);
    }
}

#[test]
fn tail_batches_below_minimum_are_skipped() {
    let data = make_blobs::<f64>(11, 3, 4, 1.0, 0).unwrap();
    let mut cfg = small_config(EmbedMode::Visualization);
    cfg.epochs = 1;
    cfg.batch_size = 10;
    let mut rec = Recorder::default();
    train_observed(&data, &cfg, None, &mut rec).unwrap();
    let sizes: Vec<usize> = rec.0.iter().map(|e| e.size).collect();
    assert_eq!(sizes, vec![10, 10, 10]);
}

#[test]
fn labelled_mode_embeds_unlabelled_samples_too() {
    let data = blobs().hide_labels(&[0, 50, 100]);
    let (_, out) = train(&data, &small_config(EmbedMode::Labelled), None).unwrap();
    assert_eq!(out.embedding.nrows(), 120);
    assert!(out.embedding.iter().all(|v| v.is_finite()));
}

#[test]
fn missing_structure_is_a_mode_error() {
    let bare = DataMatrix::new(blobs().values().clone()).unwrap();
    assert!(matches!(train(&bare, &small_config(EmbedMode::Labelled), None), Err(Error::Mode(_))));
    assert!(matches!(train(&bare, &small_config(EmbedMode::Region), None), Err(Error::Mode(_))));
    let mut bad = small_config(EmbedMode::Visualization);
    bad.cf = 0.5;
    assert!(matches!(train(&bare, &bad, None), Err(Error::Param(_))));
}

#[test]
fn saved_model_reproduces_embedding() {
    let data = blobs();
    let (model, out) = train(&data, &small_config(EmbedMode::Labelled), None).unwrap();
    let dir = std::env::temp_dir().join(format!("letsne-model-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.bin");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(back.predict(data.values().view()).unwrap(), out.embedding);
}
