use explet_core::harness::pipeline::extract_all;
use explet_core::harness::{
    gen_synthetic, mean_frame_centroid_accuracy, run_on_raw, PipelineConfig, SyntheticSpec, Variant,
};
use explet_core::umm::Alignment;

fn small_config(variants: Vec<Variant>) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.pca_dim = 16;
    cfg.ks = vec![16];
    cfg.t = 64;
    cfg.embed_dim = 64;
    cfg.em.max_iters = 100;
    cfg.em.max_rows = Some(20_000);
    cfg.protocol = "kfold:3:1".parse().unwrap();
    cfg.variants = variants;
    cfg
}

fn spec(warp: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_subjects: 6,
        n_classes: 3,
        clips_per: 3,
        warp,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn fisher_vectors_reach_centroid_floor_on_easy_data() {
    let seqs = gen_synthetic(&spec(0.0, 31)).unwrap();
    let floor = mean_frame_centroid_accuracy(&seqs);
    let cfg = small_config(vec![Variant::Fv]);
    let raws = extract_all(&seqs, &cfg.extract).unwrap();
    let acc = run_on_raw(&cfg, &raws).unwrap().results[0].report.acc;
    assert!(acc >= floor, "fv {acc} < centroid floor {floor}");
}

#[test]
fn soft_alignment_matches_rigid_blocks_on_warped_data() {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 40..43 {
        let seqs = gen_synthetic(&spec(1.0, seed)).unwrap();
        let mut cfg = small_config(vec![Variant::Explet, Variant::Rigid]);
        cfg.align = Alignment::Soft;
        cfg.em.seed = seed;
        let raws = extract_all(&seqs, &cfg.extract).unwrap();
        let report = run_on_raw(&cfg, &raws).unwrap();
        let soft = report.get(Variant::Explet, 16).unwrap().report.acc;
        let rigid = report.get(Variant::Rigid, 16).unwrap().report.acc;
        wins += usize::from(soft >= rigid);
        lines.push(format!("seed {seed}: soft {soft:.1} rigid {rigid:.1}"));
    }
    assert!(wins >= 2, "soft ≥ rigid in {wins}/3: {}", lines.join("; "));
}
