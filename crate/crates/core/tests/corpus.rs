//! Corpus round trip: synthesize regions, write them, split, reload and score
//! the cloudy observations against the clear frames.

use plfm::dataset::{
    load_index, split_dataset, synth_scene, write_index, write_series, DatasetIndex, SceneConfig,
    SplitConfig, SplitLabel,
};
use plfm::evaluation::{evaluate_pair, parse_rows, rows_to_tsv, summarize};
use plfm::metrics::{EvalConfig, MetricId};

fn build(root: &std::path::Path, rois: usize) -> DatasetIndex {
    let scene = SceneConfig {
        size: 16,
        ..SceneConfig::default()
    };
    let mut index = DatasetIndex::empty(root);
    for i in 0..rois {
        let series = synth_scene(format!("roi{i:02}"), 100 + i as u64, &scene).unwrap();
        index.entries.extend(write_series(root, &series).unwrap());
    }
    write_index(&index, root).unwrap();
    index
}

#[test]
fn split_survives_a_reload() {
    let dir = tempfile::tempdir().unwrap();
    let mut index = build(dir.path(), 10);
    let cfg = SplitConfig {
        iterations: 50,
        sample_size: 8,
        ..SplitConfig::default()
    };
    let split = split_dataset(&index, &cfg).unwrap();
    assert_eq!(
        (
            split.train_ids.len(),
            split.val_ids.len(),
            split.test_ids.len()
        ),
        (7, 2, 1)
    );
    index.set_split(&split.train_ids, &split.val_ids, &split.test_ids);
    write_index(&index, dir.path()).unwrap();

    let loaded = load_index(dir.path()).unwrap();
    assert_eq!(loaded.entries.len(), 10 * 4);
    assert_eq!(loaded.rois_in(SplitLabel::Val).unwrap(), split.val_ids);
    assert_eq!(loaded.rois_in(SplitLabel::Test).unwrap(), split.test_ids);

    let again = split_dataset(&loaded, &cfg).unwrap();
    assert_eq!(again.dissimilarity.to_bits(), split.dissimilarity.to_bits());
}

#[test]
fn frames_reload_at_storage_precision() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneConfig {
        size: 16,
        ..SceneConfig::default()
    };
    let series = synth_scene("roi", 7, &scene).unwrap();
    let index = build(dir.path(), 0);
    let mut index = DatasetIndex {
        entries: write_series(dir.path(), &series).unwrap(),
        ..index
    };
    write_index(&index, dir.path()).unwrap();
    index = load_index(dir.path()).unwrap();
    let roi = index.load_roi("roi").unwrap();
    for (a, b) in roi.optical.iter().zip(&series.optical) {
        for (x, y) in a.raster.data().iter().zip(b.raster.data()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    for t in 0..series.optical.len() {
        assert!((roi.coverage[t] - series.coverage(t)).abs() < 1e-12);
    }
}

#[test]
fn cloudy_frames_score_below_clear_ones() {
    let dir = tempfile::tempdir().unwrap();
    build(dir.path(), 4);
    let index = load_index(dir.path()).unwrap();
    let cfg = EvalConfig::raw();
    let mut rows = Vec::new();
    for id in index.roi_ids() {
        let roi = index.load_roi(&id).unwrap();
        for t in 0..roi.optical.len() {
            let clear = evaluate_pair(
                &format!("{id}_t{t}"),
                &roi.optical[t],
                &roi.optical[t],
                0.0,
                &cfg,
            )
            .unwrap();
            assert_eq!(clear.get(MetricId::Psnr), 100.0);
            rows.push(
                evaluate_pair(
                    &format!("{id}_t{t}"),
                    &roi.cloudy[t],
                    &roi.optical[t],
                    roi.coverage[t],
                    &cfg,
                )
                .unwrap(),
            );
        }
    }
    let reparsed = parse_rows(&rows_to_tsv(&rows)).unwrap();
    assert_eq!(reparsed.len(), rows.len());
    let counted: usize = summarize(&reparsed).iter().map(|s| s.count).sum();
    assert!(counted <= rows.len());
    for r in &reparsed {
        if r.coverage > 0.2 {
            assert!(r.get(MetricId::Psnr) < 100.0, "{}", r.image_id);
        }
    }
}
