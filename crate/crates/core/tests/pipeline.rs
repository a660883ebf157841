//! Library-level pipeline on a synthetic fixture.

use scuba_core::caption_retrieval::{best_of_r, CaptionBank};
use scuba_core::encoder::{evaluate_r2, fit, optimal_embeddings, FitConfig};
use scuba_core::projection::ProjectionConfig;
use scuba_core::synth::{generate, SynthConfig};

#[test]
fn planted_captions_are_recovered() {
    let cfg = SynthConfig::default();
    let fx = generate(&cfg, 11).unwrap();
    let enc = fit(&fx.train_x, &fx.train_y, &FitConfig::default()).unwrap();
    let r2 = evaluate_r2(&enc, &fx.test_x, &fx.test_y).unwrap();
    assert!(r2.r2.iter().all(|r| r.unwrap() >= 0.99));
    let opt = optimal_embeddings(&enc).unwrap();
    let bank = CaptionBank::new(fx.captions.clone(), fx.caption_embeddings.clone()).unwrap();
    let set = best_of_r(&opt.embeddings, &fx.banks, &bank, &ProjectionConfig::default(), 5).unwrap();
    let planted = fx.planted_caption_ids();
    let hits = set
        .voxels
        .iter()
        .zip(&planted)
        .filter(|(v, &p)| v.caption_id == p)
        .count();
    let rate = hits as f64 / planted.len() as f64;
    eprintln!("planted caption recovery {rate:.3}");
    assert!(rate >= 0.95, "recovery {rate}");
}
