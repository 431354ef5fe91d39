use vcr_core::embed_metrics::{
    coverage_gaps, decode_binary_table, encode_binary_table, read_embeddings, read_score_channel,
    write_embeddings, write_score_channel, EmbeddingKind,
};
use vcr_core::pool_metric::read_detections;
use vcr_core::synthetic::{SyntheticWorld, WorldConfig};

fn world() -> SyntheticWorld {
    SyntheticWorld::generate(&WorldConfig {
        n_images: 4,
        ..Default::default()
    })
}

#[test]
fn embedding_store_round_trips() {
    let w = world();
    for store in [&w.clip, &w.mcip, &w.bert] {
        let mut buf = b"# checkpoint: synthetic\n".to_vec();
        write_embeddings(store, &mut buf).unwrap();
        let back = read_embeddings(buf.as_slice()).unwrap();
        assert_eq!(&back, store);
    }
}

#[test]
fn binary_tables_round_trip() {
    let w = world();
    let table = w.mcip.caption.as_ref().unwrap();
    let back = decode_binary_table(&encode_binary_table(table), EmbeddingKind::Caption).unwrap();
    for id in table.ids() {
        let a = table.vector(id).unwrap();
        let b = back.vector(id).unwrap();
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6));
    }
    assert_eq!(back.len(), table.len());
}

#[test]
fn channels_round_trip_and_cover_corpus() {
    let w = world();
    let vilt = &w.channels["vilt"];
    let mut buf = Vec::new();
    write_score_channel(vilt, &mut buf).unwrap();
    let back = read_score_channel(buf.as_slice(), "vilt").unwrap();
    assert_eq!(&back, vilt);
    let ids: Vec<&str> = w.corpus.iter().map(|s| s.sample_id.as_str()).collect();
    assert!(back.missing(ids.iter().copied()).is_empty());
    let captions = w.mcip.caption.as_ref().unwrap();
    assert!(coverage_gaps(captions, ids.iter().copied()).is_empty());
}

#[test]
fn detections_file_reads_every_image() {
    let w = world();
    let mut text = String::from("# detectors: yolov3 detr ssd\n");
    for dets in w.detections.values() {
        for d in dets {
            text.push_str(&serde_json::to_string(d).unwrap());
            text.push('\n');
        }
    }
    let back = read_detections(text.as_bytes()).unwrap();
    assert_eq!(back, w.detections);
}
