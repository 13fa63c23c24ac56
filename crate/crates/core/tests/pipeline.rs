use shiftscope_core::bench::auroc;
use shiftscope_core::clustering::{cluster_test_split, rank_clusters};
use shiftscope_core::data::write_embeddings;
use shiftscope_core::dre::{train_dre, TrainConfig};
use shiftscope_core::projection::Projection;
use shiftscope_core::scoring::{score_dataset, Scorer};
use shiftscope_core::store::StoreDir;
use shiftscope_core::synth;

fn run(root: &std::path::Path, src: &std::path::Path) {
    let dir = StoreDir::new(root);
    let _lock = dir.lock().unwrap();
    let store = dir
        .ingest(&src.join("manifest.json"), &src.join("emb.dsem"), "synthetic")
        .unwrap();
    let outcome = train_dre(&store, "synthetic", &TrainConfig { seed: 3, ..TrainConfig::default() }).unwrap();
    dir.save_model(&outcome.trained).unwrap();
    dir.save_space(&outcome.latent).unwrap();
    let store = store.with_space(outcome.latent).unwrap();
    let scores = score_dataset(&store, "synthetic", Scorer::DensityRatio(Some(&outcome.trained.model))).unwrap();
    dir.save_scores(&store, &scores).unwrap();
    let clusters = cluster_test_split(&store, "dre", 12).unwrap();
    dir.save_clusters(&store, &clusters, 5).unwrap();
    let projection = Projection::pca_of_test_split(&store, "dre").unwrap();
    dir.save_projection(&store, &projection, Some("dre")).unwrap();
}

#[test]
fn store_pipeline_is_deterministic_and_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    std::fs::create_dir_all(&src).unwrap();
    let ds = synth::gaussian_shift(300, 270, 30, [5.0, 5.0], 9);
    ds.manifest.save(src.join("manifest.json")).unwrap();
    write_embeddings(src.join("emb.dsem"), &ds.space).unwrap();

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&a, &src);
    run(&b, &src);
    for file in ["manifest.json", "spaces/synthetic.dsem", "spaces/dre.dsem", "model.json", "scores.csv", "clusters.csv", "projection.csv", "artifacts.json"] {
        let (x, y) = (std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
        assert!(x == y, "{file} differs between identical runs");
    }
    // Overwriting in place also leaves the bytes unchanged.
    let before = std::fs::read(a.join("scores.csv")).unwrap();
    run(&a, &src);
    assert_eq!(std::fs::read(a.join("scores.csv")).unwrap(), before);

    let loaded = StoreDir::new(&a).open().unwrap();
    let store = &loaded.store;
    assert_eq!(store.spaces().count(), 2);
    let scores = store.scores.as_ref().unwrap();
    let clusters = store.clusters.as_ref().unwrap();
    assert_eq!(clusters.n_clusters, 12);
    assert_eq!(store.projection.as_ref().unwrap().points.len(), 300);
    let ranked = rank_clusters(clusters, scores, 5).unwrap();
    assert_eq!(ranked.len(), 5);

    let shifted = ds.attribute("shifted");
    let test = store.test_indices();
    let suspicion: Vec<f64> = test.iter().map(|&i| scores.suspicion(i).unwrap()).collect();
    let labels: Vec<bool> = test.iter().map(|&i| shifted[i]).collect();
    assert!(auroc(&suspicion, &labels).unwrap() > 0.95);
}
