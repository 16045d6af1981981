//! End-to-end behaviour on synthetic scenarios.

use trackletlab_core::aggregation::{evaluate_tracklets, Strategy};
use trackletlab_core::clustering::{run_census, CensusConfig};
use trackletlab_core::datamodel::Split;
use trackletlab_core::explain::{assemble_probes, curve_auc, perturbation_curve, PerturbationOrder};
use trackletlab_core::retrieval::{balanced_top1, build_gallery, eval_probes};
use trackletlab_core::synth::{
    crossing_scenario, gen_mot_scenario, gen_patch_scenario, gen_reid_scenario, PatchSpec, ReidSpec,
};
use trackletlab_core::tracking::{evaluate, run_tracker, TrackerConfig};
use trackletlab_core::vecmath::dot;

#[test]
fn separable_identities_are_all_recovered() {
    let spec = ReidSpec {
        identities: 16,
        max_centroid_cosine: Some(0.6),
        noise: 0.3,
        ..Default::default()
    };
    let s = gen_reid_scenario(&spec).unwrap();
    let m = &s.manifest;
    let ids = m.tracklet_index();
    let identity = |r: &trackletlab_core::datamodel::EmbeddingRecord| ids[r.tracklet_id.as_str()].identity.clone();
    let (mut intra, mut inter) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, a) in m.records.iter().enumerate() {
        for b in &m.records[i + 1..] {
            let c = dot(&a.vector, &b.vector);
            if identity(a) == identity(b) {
                intra = intra.min(c);
            } else {
                inter = inter.max(c);
            }
        }
    }
    assert!(intra >= inter + 0.2, "intra {intra} inter {inter}");

    let g = build_gallery(m, Split::Test).unwrap();
    assert_eq!(balanced_top1(&g, &eval_probes(m, Split::Test), 5).unwrap(), 1.0);
    for strategy in [Strategy::Majority, Strategy::Confidence, Strategy::EmbeddingMean] {
        let e = evaluate_tracklets(m, &g, Split::Test, strategy, 5).unwrap();
        assert_eq!(e.report.balanced_top1, 1.0, "{strategy}");
    }
}

#[test]
fn aggregation_absorbs_corrupted_frames() {
    let spec = ReidSpec {
        frames_per_tracklet: 10,
        corrupt_fraction: 0.4,
        max_centroid_cosine: Some(0.6),
        ..Default::default()
    };
    let s = gen_reid_scenario(&spec).unwrap();
    let m = &s.manifest;
    let g = build_gallery(m, Split::Test).unwrap();
    let frame = balanced_top1(&g, &eval_probes(m, Split::Test), 5).unwrap();
    assert!(frame < 0.9, "frame-level {frame}");
    for strategy in [Strategy::Majority, Strategy::EmbeddingMean] {
        let e = evaluate_tracklets(m, &g, Split::Test, strategy, 5).unwrap();
        assert_eq!(e.report.balanced_top1, 1.0, "{strategy}");
    }
}

#[test]
fn relevant_patches_carry_the_decision() {
    let s = gen_patch_scenario(&PatchSpec::default()).unwrap();
    let probes = assemble_probes(&s.manifest, s.grids.clone(), s.relevance.clone()).unwrap();
    let g = build_gallery(&s.manifest, Split::Test).unwrap();
    let fr: Vec<f64> = (0..=16).map(|i| i as f64 / 16.0).collect();
    let morf = perturbation_curve(&probes, &s.embedder, &g, PerturbationOrder::Morf, &fr, 5).unwrap();
    let lerf = perturbation_curve(&probes, &s.embedder, &g, PerturbationOrder::Lerf, &fr, 5).unwrap();
    assert!(curve_auc(&morf) < curve_auc(&lerf));
    assert!(lerf.accuracy[12] >= 0.9 * lerf.accuracy[0]);
    assert_eq!(morf.accuracy[0], lerf.accuracy[0]);
    assert_eq!(morf.accuracy[16], lerf.accuracy[16]);
}

fn fragmenting_population() -> ReidSpec {
    ReidSpec {
        dim: 256,
        identities: 16,
        encounters_per_identity: 10,
        social_groups: 4,
        co_occurrence: true,
        noise: 0.1,
        encounter_drift: 0.3,
        encounter_shared: 1.2,
        ..Default::default()
    }
}

#[test]
fn constraints_defragment_the_census() {
    for seed in 0..5 {
        let s = gen_reid_scenario(&ReidSpec {
            seed,
            ..fragmenting_population()
        })
        .unwrap();
        let free = run_census(&s.manifest, &CensusConfig::default()).unwrap();
        let tied = run_census(
            &s.manifest,
            &CensusConfig {
                constrained: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(free.population >= 32, "seed {seed}: {}", free.population);
        assert!(tied.population.abs_diff(16) <= 1, "seed {seed}: {}", tied.population);
        assert!(tied.ari.unwrap() >= 0.95);
        assert!(tied.violations.is_empty());
    }
}

#[test]
fn appearance_resolves_the_crossing() {
    for seed in 0..5 {
        let s = gen_mot_scenario(&crossing_scenario(seed)).unwrap();
        let run = |lambda_app: f64| {
            let cfg = TrackerConfig {
                lambda_app,
                ..Default::default()
            };
            evaluate(&s.gt, &run_tracker(&s.detections, &cfg).unwrap(), 0.5)
        };
        assert_eq!(run(0.25).idsw, 0, "seed {seed}");
        assert!(run(0.0).idsw >= 1, "seed {seed}");
    }
}
