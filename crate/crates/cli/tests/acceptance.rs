//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackletlab_core::aggregation::{evaluate_tracklets, Strategy};
use trackletlab_core::clustering::{
    ami, ari, dbscan, hac, hdbscan, run_census, Algorithm, CannotLinks, CensusConfig, ClusterUnit, Linkage, StopRule,
};
use trackletlab_core::datamodel::mot::{BBox, GroundTruthTrack};
use trackletlab_core::datamodel::{EncounterKey, Split};
use trackletlab_core::explain::{
    assemble_probes, curve_auc, grad_knn_margin, grad_proto_margin, perturbation_curve, score_knn_margin,
    score_proto_margin, PerturbationOrder, PrototypeWeighting, ProxyContext,
};
use trackletlab_core::retrieval::{
    balanced_top1, build_gallery, eval_probes, knn_batch, Gallery, GalleryBuilder, Neighbor, Query,
};
use trackletlab_core::synth::{
    crossing_scenario, gen_mot_scenario, gen_patch_scenario, gen_reid_scenario, PatchSpec, ReidSpec,
};
use trackletlab_core::tracking::{evaluate, run_tracker, TrackerConfig};
use trackletlab_core::vecmath::dot;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

// Tallies shared between criteria: every retrieval and every constrained
// clustering run in this suite feeds them.
static NEIGHBORS_SEEN: AtomicUsize = AtomicUsize::new(0);
static SAME_ENCOUNTER: AtomicUsize = AtomicUsize::new(0);
static CONSTRAINED_RUNS: AtomicUsize = AtomicUsize::new(0);
static CONSTRAINT_VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

fn audit_neighbors(g: &Gallery, probe_encounter: &EncounterKey, neighbors: &[Neighbor], enc_of: &BTreeMap<u64, usize>) {
    NEIGHBORS_SEEN.fetch_add(neighbors.len(), Ordering::Relaxed);
    let bad = neighbors
        .iter()
        .filter(|n| g.encounter(enc_of[&n.record_id]) == probe_encounter)
        .count();
    SAME_ENCOUNTER.fetch_add(bad, Ordering::Relaxed);
}

fn row_index(g: &Gallery) -> BTreeMap<u64, usize> {
    (0..g.len()).map(|i| (g.record_id(i), i)).collect()
}

fn audit_constrained(violations: usize) {
    CONSTRAINED_RUNS.fetch_add(1, Ordering::Relaxed);
    CONSTRAINT_VIOLATIONS.fetch_add(violations, Ordering::Relaxed);
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn encounter(loc: usize, day: u32) -> EncounterKey {
    EncounterKey {
        location_id: format!("loc{loc}"),
        date: NaiveDate::from_ymd_opt(2024, 1, day).unwrap(),
    }
}

// ---------------------------------------------------------------- retrieval

/// Gallery whose vectors come from a coarse lattice, so exact similarity ties
/// (and duplicate rows) are common.
fn random_gallery(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Gallery, Vec<EncounterKey>) {
    let encounters: Vec<EncounterKey> = (0..rng.random_range(2..12))
        .map(|i| encounter(i % 3, 1 + i as u32))
        .collect();
    let mut b = GalleryBuilder::with_capacity(dim, n);
    let mut prev: Option<Vec<f64>> = None;
    for i in 0..n {
        let v = match &prev {
            Some(p) if rng.random_bool(0.1) => p.clone(),
            _ => loop {
                let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-2i32..=2) as f64).collect();
                if raw.iter().any(|&x| x != 0.0) {
                    break unit(raw);
                }
            },
        };
        let enc = &encounters[rng.random_range(0..encounters.len())];
        let id = format!("id{}", rng.random_range(0..20));
        // Shuffled record ids so tie-breaks are not just insertion order.
        let rid = (i as u64).wrapping_mul(2_654_435_761) % 1_000_003;
        b.push(rid, &v, &id, enc, Split::Test).unwrap();
        prev = Some(v);
    }
    (b.build().unwrap(), encounters)
}

fn oracle(g: &Gallery, q: &[f64], exclude: &EncounterKey, k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = (0..g.len())
        .filter(|&i| g.encounter(i) != exclude)
        .map(|i| (g.record_id(i), dot(q, g.row(i))))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn c1_retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t0 = Instant::now();
    let mut queries_checked = 0;
    for gi in 0..50 {
        let dim = if gi % 2 == 0 { 8 } else { 256 };
        let n = rng.random_range(1..=2000);
        let (g, encounters) = random_gallery(&mut rng, n, dim);
        let enc_of = row_index(&g);
        let k = rng.random_range(1..=12);
        let mut vecs = Vec::new();
        let mut excl = Vec::new();
        for qi in 0..20 {
            // Half the probes are gallery rows, so exact self-similarity ties appear.
            let v = if qi % 2 == 0 {
                g.row(rng.random_range(0..g.len())).to_vec()
            } else {
                unit((0..dim).map(|_| rng.random_range(-2i32..=2) as f64 + 0.01).collect())
            };
            vecs.push(v);
            excl.push(encounters[rng.random_range(0..encounters.len())].clone());
        }
        let queries: Vec<Query<'_>> = vecs
            .iter()
            .zip(&excl)
            .enumerate()
            .map(|(i, (v, e))| Query {
                record_id: i as u64,
                vector: v,
                encounter: e,
            })
            .collect();
        let batch = knn_batch(&g, &queries, k);
        for ((q, r), e) in queries.iter().zip(batch).zip(&excl) {
            let want = oracle(&g, q.vector, e, k);
            let single = g.search(q.vector, e, k);
            if want.is_empty() {
                check!(
                    r.is_err() && single.is_err(),
                    "gallery {gi}: expected no eligible neighbours"
                );
                continue;
            }
            let r = r.map_err(|e| format!("gallery {gi}: {e}"))?;
            let got: Vec<(u64, f64)> = r.neighbors.iter().map(|n| (n.record_id, n.similarity)).collect();
            check!(
                got == want,
                "gallery {gi} (n={n}, d={dim}, k={k}): batch {got:?} != oracle {want:?}"
            );
            let single = single.map_err(|e| format!("gallery {gi}: {e}"))?;
            check!(
                single == r.neighbors,
                "gallery {gi}: single and batched search disagree"
            );
            audit_neighbors(&g, e, &r.neighbors, &enc_of);
            queries_checked += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check!(secs < 10.0, "took {secs:.2} s");
    Ok(format!(
        "{queries_checked} queries over 50 galleries match the oracle in {secs:.2} s"
    ))
}

fn c2_exclusion() -> Outcome {
    // Synthetic scenario with several tracklets per encounter, so naive search
    // would happily return same-encounter frames.
    let s = gen_reid_scenario(&ReidSpec {
        tracklets_per_encounter: 3,
        distractors: 4,
        train_identities: 4,
        seed: 2,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let m = &s.manifest;
    let g = build_gallery(m, Split::Test).map_err(|e| e.to_string())?;
    let enc_of = row_index(&g);
    let probes = eval_probes(m, Split::Test);
    let queries: Vec<Query<'_>> = probes
        .iter()
        .map(|p| Query {
            record_id: p.record_id,
            vector: p.vector,
            encounter: &p.encounter,
        })
        .collect();
    for (p, r) in probes.iter().zip(knn_batch(&g, &queries, 10)) {
        let r = r.map_err(|e| e.to_string())?;
        audit_neighbors(&g, &p.encounter, &r.neighbors, &enc_of);
    }
    let (seen, bad) = (
        NEIGHBORS_SEEN.load(Ordering::Relaxed),
        SAME_ENCOUNTER.load(Ordering::Relaxed),
    );
    check!(
        bad == 0,
        "{bad} of {seen} returned neighbours share the probe's encounter"
    );
    check!(seen > 0, "no neighbours were audited");
    Ok(format!("0 of {seen} returned neighbours share the probe's encounter"))
}

fn c3_separability() -> Outcome {
    let s = gen_reid_scenario(&ReidSpec {
        identities: 16,
        max_centroid_cosine: Some(0.6),
        noise: 0.3,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let centroids: Vec<&Vec<f64>> = s.centroids.values().collect();
    let mut max_cos = f64::NEG_INFINITY;
    for (i, a) in centroids.iter().enumerate() {
        for b in &centroids[i + 1..] {
            max_cos = max_cos.max(dot(a, b));
        }
    }
    check!(
        1.0 - max_cos >= 0.4,
        "inter-centroid cosine gap {:.3} < 0.4",
        1.0 - max_cos
    );
    let m = &s.manifest;
    let (mut intra, mut inter) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, a) in m.records.iter().enumerate() {
        for b in &m.records[i + 1..] {
            let c = dot(&a.vector, &b.vector);
            if s.truth[&a.tracklet_id] == s.truth[&b.tracklet_id] {
                intra = intra.min(c);
            } else {
                inter = inter.max(c);
            }
        }
    }
    check!(
        intra >= inter + 0.2,
        "min intra-sim {intra:.3} < max inter-sim {inter:.3} + 0.2"
    );
    let g = build_gallery(m, Split::Test).map_err(|e| e.to_string())?;
    let frame = balanced_top1(&g, &eval_probes(m, Split::Test), 5).map_err(|e| e.to_string())?;
    check!(frame == 1.0, "frame-level balanced Top-1 {frame}");
    let mut parts = vec![format!("frame 1.000")];
    for strategy in [Strategy::Majority, Strategy::Confidence, Strategy::EmbeddingMean] {
        let e = evaluate_tracklets(m, &g, Split::Test, strategy, 5).map_err(|e| e.to_string())?;
        check!(
            e.report.balanced_top1 == 1.0,
            "{strategy}: balanced Top-1 {}",
            e.report.balanced_top1
        );
        parts.push(format!("{strategy} 1.000"));
    }
    Ok(format!(
        "gap {:.3}, intra-inter margin {:.3}; {}",
        1.0 - max_cos,
        intra - inter,
        parts.join(", ")
    ))
}

fn c4_aggregation() -> Outcome {
    let s = gen_reid_scenario(&ReidSpec {
        frames_per_tracklet: 10,
        corrupt_fraction: 0.4,
        max_centroid_cosine: Some(0.6),
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let m = &s.manifest;
    let g = build_gallery(m, Split::Test).map_err(|e| e.to_string())?;
    let frame = balanced_top1(&g, &eval_probes(m, Split::Test), 5).map_err(|e| e.to_string())?;
    check!(frame < 0.9, "frame-level accuracy {frame:.3} is not below 0.9");
    for strategy in [Strategy::EmbeddingMean, Strategy::Majority] {
        let e = evaluate_tracklets(m, &g, Split::Test, strategy, 5).map_err(|e| e.to_string())?;
        check!(e.report.balanced_top1 == 1.0, "{strategy}: {}", e.report.balanced_top1);
    }
    Ok(format!("frame {frame:.3}; embedding mean and majority 1.000"))
}

// ---------------------------------------------------------------- explain

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn central_difference(ctx: &ProxyContext, f: impl Fn(&ProxyContext) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..ctx.query.len())
        .map(|i| {
            let mut plus = ctx.clone();
            plus.query[i] += h;
            let mut minus = ctx.clone();
            minus.query[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn c5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = rng.random_range(2..=32);
        let friends = (0..rng.random_range(1..=8)).map(|_| random_unit(&mut rng, d)).collect();
        let foes: Vec<Vec<f64>> = (0..rng.random_range(1..=10))
            .map(|_| random_unit(&mut rng, d))
            .collect();
        let k_hard = rng.random_range(1..=foes.len());
        let mut ctx = ProxyContext::new(random_unit(&mut rng, d), friends, foes)
            .with_temperature(rng.random_range(0.1..1.0))
            .with_hard_negatives(k_hard)
            .with_seed(i);
        if i % 2 == 1 {
            ctx.friend_weighting = PrototypeWeighting::Uniform;
            ctx.foe_weighting = PrototypeWeighting::Softmax;
        }
        let knn = relative_error(
            &grad_knn_margin(&ctx).map_err(|e| e.to_string())?,
            &central_difference(&ctx, |c| score_knn_margin(c).unwrap()),
        );
        let proto = relative_error(
            &grad_proto_margin(&ctx).map_err(|e| e.to_string())?,
            &central_difference(&ctx, |c| score_proto_margin(c).unwrap()),
        );
        check!(knn < 1e-6, "context {i}: k-NN margin gradient relative error {knn:.2e}");
        check!(
            proto < 1e-6,
            "context {i}: proto-margin gradient relative error {proto:.2e}"
        );
        worst = worst.max(knn).max(proto);
    }
    Ok(format!("100 contexts, worst relative error {worst:.2e}"))
}

fn c6_faithfulness() -> Outcome {
    let s = gen_patch_scenario(&PatchSpec::default()).map_err(|e| e.to_string())?;
    let probes = assemble_probes(&s.manifest, s.grids.clone(), s.relevance.clone()).map_err(|e| e.to_string())?;
    let g = build_gallery(&s.manifest, Split::Test).map_err(|e| e.to_string())?;
    let fractions: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let curve = |order| perturbation_curve(&probes, &s.embedder, &g, order, &fractions, 5).map_err(|e| e.to_string());
    let morf = curve(PerturbationOrder::Morf)?;
    let lerf = curve(PerturbationOrder::Lerf)?;
    let (am, al) = (curve_auc(&morf), curve_auc(&lerf));
    check!(am < al, "AUC(MoRF) {am:.4} is not below AUC(LeRF) {al:.4}");
    let full = lerf.accuracy[0];
    // Removing the 75% least relevant patches keeps only the top quarter.
    let top_quarter = lerf.accuracy[15];
    check!(
        top_quarter >= 0.9,
        "accuracy with the top 25% of patches is {top_quarter:.3}"
    );
    check!(top_quarter >= 0.9 * full, "top 25% keeps {top_quarter:.3} of {full:.3}");
    check!(morf.accuracy[0] == lerf.accuracy[0], "curves differ at f=0");
    check!(morf.accuracy[20] == lerf.accuracy[20], "curves differ at f=1");
    Ok(format!(
        "{} probes; AUC MoRF {am:.3} < LeRF {al:.3}; top 25% keeps {top_quarter:.3} (full {full:.3})",
        probes.len()
    ))
}

// ---------------------------------------------------------------- clustering

fn comb2(n: usize) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

fn same_partition(a: &[i64], b: &[i64]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// ARI from explicit pair counting.
fn ari_oracle(a: &[i64], b: &[i64]) -> f64 {
    if same_partition(a, b) {
        return 1.0;
    }
    let n = a.len();
    let (mut both, mut only_a, mut only_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                _ => {}
            }
        }
    }
    let total = comb2(n);
    let (sa, sb) = (both + only_a, both + only_b);
    let expected = sa * sb / total;
    let denom = 0.5 * (sa + sb) - expected;
    if denom == 0.0 {
        0.0
    } else {
        (both - expected) / denom
    }
}

fn cluster_sizes(a: &[i64]) -> Vec<usize> {
    let mut m: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in a {
        *m.entry(l).or_default() += 1;
    }
    m.into_values().collect()
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// AMI with arithmetic-mean normalization; E[MI] by direct summation over the
/// hypergeometric distribution with binomial coefficients.
fn ami_oracle(a: &[i64], b: &[i64]) -> f64 {
    if same_partition(a, b) {
        return 1.0;
    }
    let n = a.len();
    let nf = n as f64;
    let h = |s: &[usize]| -> f64 { s.iter().map(|&c| c as f64 / nf).map(|p| -p * p.ln()).sum() };
    let (sa, sb) = (cluster_sizes(a), cluster_sizes(b));
    let mut joint: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((*x, *y)).or_default() += 1;
    }
    let joint: Vec<usize> = joint.into_values().collect();
    let mi = (h(&sa) + h(&sb) - h(&joint)).max(0.0);
    let mut emi = 0.0;
    for &ai in &sa {
        for &bj in &sb {
            for nij in 1..=ai.min(bj) {
                let p = binom(bj, nij) * binom(n - bj, ai - nij) / binom(n, ai);
                if p > 0.0 {
                    let x = nij as f64;
                    emi += p * x / nf * (nf * x / (ai as f64 * bj as f64)).ln();
                }
            }
        }
    }
    let mut denom = 0.5 * (h(&sa) + h(&sb)) - emi;
    denom = if denom < 0.0 {
        denom.min(-f64::EPSILON)
    } else {
        denom.max(f64::EPSILON)
    };
    (mi - emi) / denom
}

fn c7_partition_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_ari, mut worst_ami): (f64, f64) = (0.0, 0.0);
    for t in 0..200 {
        let n = rng.random_range(1..=30);
        let ka = rng.random_range(1..=n);
        let kb = rng.random_range(1..=n);
        let a: Vec<i64> = (0..n).map(|_| rng.random_range(0..ka) as i64 - 1).collect();
        let b: Vec<i64> = (0..n).map(|_| rng.random_range(0..kb) as i64 * 7).collect();
        let got_ari = ari(&a, &b).map_err(|e| e.to_string())?;
        let got_ami = ami(&a, &b).map_err(|e| e.to_string())?;
        let (ea, em) = (
            (got_ari - ari_oracle(&a, &b)).abs(),
            (got_ami - ami_oracle(&a, &b)).abs(),
        );
        check!(ea <= 1e-10, "partition {t} (n={n}): ARI off by {ea:.2e}");
        check!(em <= 1e-10, "partition {t} (n={n}): AMI off by {em:.2e}");
        worst_ari = worst_ari.max(ea);
        worst_ami = worst_ami.max(em);
        // A relabelled copy is the same partition.
        let relabelled: Vec<i64> = a.iter().map(|&l| 100 - 3 * l).collect();
        check!(
            ari(&a, &relabelled).unwrap() == 1.0,
            "partition {t}: identical ARI != 1"
        );
        check!(
            ami(&a, &relabelled).unwrap() == 1.0,
            "partition {t}: identical AMI != 1"
        );
    }
    Ok(format!(
        "200 partitions; max deviation ARI {worst_ari:.1e}, AMI {worst_ami:.1e}; identical -> 1.0"
    ))
}

fn fragmenting_population(seed: u64) -> ReidSpec {
    ReidSpec {
        dim: 256,
        identities: 16,
        encounters_per_identity: 10,
        social_groups: 4,
        co_occurrence: true,
        noise: 0.1,
        encounter_drift: 0.3,
        encounter_shared: 1.2,
        seed,
        ..Default::default()
    }
}

fn c8_defragmentation() -> Outcome {
    let mut lines = Vec::new();
    for seed in 0..3 {
        let s = gen_reid_scenario(&fragmenting_population(seed)).map_err(|e| e.to_string())?;
        let free = run_census(&s.manifest, &CensusConfig::default()).map_err(|e| e.to_string())?;
        let tied = run_census(
            &s.manifest,
            &CensusConfig {
                constrained: true,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        audit_constrained(tied.violations.len());
        let a = tied.ari.unwrap_or(0.0);
        check!(
            free.population >= 32,
            "seed {seed}: unconstrained HAC found only {} clusters",
            free.population
        );
        check!(
            tied.population.abs_diff(16) <= 1,
            "seed {seed}: constrained HAC found {} clusters",
            tied.population
        );
        check!(a >= 0.95, "seed {seed}: constrained ARI {a:.3}");
        lines.push(format!(
            "seed {seed}: {} -> {} (ARI {a:.3})",
            free.population, tied.population
        ));
    }
    Ok(format!("K=16; {}", lines.join("; ")))
}

fn c9_constraint_audit() -> Outcome {
    // Census with every algorithm and both units on a co-occurring population.
    let s = gen_reid_scenario(&ReidSpec {
        identities: 8,
        encounters_per_identity: 3,
        social_groups: 2,
        co_occurrence: true,
        encounter_shared: 1.0,
        noise: 0.2,
        seed: 9,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let algorithms = [
        Algorithm::default_hac(),
        Algorithm::Hac {
            linkage: Linkage::Complete,
            stop: StopRule::Threshold(2.0),
        },
        Algorithm::Hac {
            linkage: Linkage::Ward,
            stop: StopRule::Threshold(0.9),
        },
        Algorithm::default_dbscan(),
        Algorithm::Dbscan { eps: 0.9, min_pts: 2 },
        Algorithm::default_hdbscan(),
    ];
    for algorithm in &algorithms {
        for unit in [ClusterUnit::Tracklet, ClusterUnit::Frame] {
            let cfg = CensusConfig {
                unit,
                algorithm: algorithm.clone(),
                constrained: true,
                ..Default::default()
            };
            let r = run_census(&s.manifest, &cfg).map_err(|e| e.to_string())?;
            audit_constrained(r.violations.len());
        }
    }
    // The raw algorithms under random cannot-link sets.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for t in 0..30 {
        let n = rng.random_range(5..60);
        let points: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, 4)).collect();
        let pairs: Vec<(usize, usize)> = (0..rng.random_range(0..2 * n))
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .filter(|(a, b)| a != b)
            .collect();
        let cl = CannotLinks::from_pairs(n, pairs);
        let runs = [
            hac(&points, Linkage::Average, StopRule::Threshold(1.5), Some(&cl)).map(|r| r.0),
            hac(&points, Linkage::Complete, StopRule::Threshold(2.0), Some(&cl)).map(|r| r.0),
            hac(&points, Linkage::Ward, StopRule::Threshold(0.5), Some(&cl)).map(|r| r.0),
            dbscan(&points, 0.8, 2, Some(&cl)),
            hdbscan(&points, 3, None, Some(&cl)),
        ];
        for r in runs {
            let labels = r.map_err(|e| format!("random case {t}: {e}"))?;
            audit_constrained(cl.violations(&labels).len());
        }
    }
    let (runs, bad) = (
        CONSTRAINED_RUNS.load(Ordering::Relaxed),
        CONSTRAINT_VIOLATIONS.load(Ordering::Relaxed),
    );
    check!(
        bad == 0,
        "{bad} violated cannot-link pairs over {runs} constrained runs"
    );
    Ok(format!("0 violated pairs over {runs} constrained runs"))
}

// ---------------------------------------------------------------- tracking

fn walker(id: i64, x: impl Fn(u32) -> f64) -> GroundTruthTrack {
    GroundTruthTrack {
        video_id: "v".into(),
        gt_track_id: id,
        boxes: (0..100).map(|f| (f, BBox::new(x(f), 0.0, 20.0, 40.0))).collect(),
    }
}

fn c10_mot_metrics() -> Outcome {
    let gt = vec![walker(1, |f| f as f64), walker(2, |f| 500.0 - f as f64)];
    let same = evaluate(&gt, &gt, 0.5);
    check!(
        same.hota == 1.0 && same.idf1 == 1.0 && same.idsw == 0,
        "pred == gt gave {same:?}"
    );

    let mut split = Vec::new();
    for (k, t) in gt.iter().enumerate() {
        let (a, b): (BTreeMap<_, _>, BTreeMap<_, _>) = t.boxes.iter().partition(|(&f, _)| f < 50);
        split.push(GroundTruthTrack {
            video_id: "v".into(),
            gt_track_id: 10 + 2 * k as i64,
            boxes: a,
        });
        split.push(GroundTruthTrack {
            video_id: "v".into(),
            gt_track_id: 11 + 2 * k as i64,
            boxes: b,
        });
    }
    let s = evaluate(&gt, &split, 0.5);
    check!((s.hota - 0.5f64.sqrt()).abs() <= 0.01, "split-track HOTA {:.4}", s.hota);

    let swapped = |f: u32| (30..50).contains(&f);
    let swap = vec![
        GroundTruthTrack {
            boxes: (0..100)
                .map(|f| (f, if swapped(f) { gt[1].boxes[&f] } else { gt[0].boxes[&f] }))
                .collect(),
            ..gt[0].clone()
        },
        GroundTruthTrack {
            boxes: (0..100)
                .map(|f| (f, if swapped(f) { gt[0].boxes[&f] } else { gt[1].boxes[&f] }))
                .collect(),
            ..gt[1].clone()
        },
    ];
    let d = evaluate(&gt, &swap, 0.5);
    check!(d.idsw == 4, "double swap gave IDSW {}", d.idsw);
    Ok(format!(
        "identity 1/1/0; split HOTA {:.4} (sqrt 0.5 = 0.7071); double swap IDSW {}",
        s.hota, d.idsw
    ))
}

fn c11_tracker() -> Outcome {
    let mut parts = Vec::new();
    for seed in 0..5 {
        let s = gen_mot_scenario(&crossing_scenario(seed)).map_err(|e| e.to_string())?;
        let idsw = |lambda_app: f64| -> Result<u64, String> {
            let cfg = TrackerConfig {
                lambda_app,
                ..Default::default()
            };
            let tracks = run_tracker(&s.detections, &cfg).map_err(|e| e.to_string())?;
            Ok(evaluate(&s.gt, &tracks, 0.5).idsw)
        };
        let (with, without) = (idsw(0.25)?, idsw(0.0)?);
        check!(with == 0, "seed {seed}: lambda_app 0.25 gave {with} switches");
        check!(without >= 1, "seed {seed}: lambda_app 0 gave no switch");
        parts.push(format!("{with}/{without}"));
    }
    Ok(format!(
        "IDSW with/without appearance over 5 seeds: {}",
        parts.join(" ")
    ))
}

// ---------------------------------------------------------------- performance

fn c12_performance() -> Outcome {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dim = 256;
    let encounters: Vec<EncounterKey> = (0..50).map(|i| encounter(i % 5, 1 + i as u32 % 28)).collect();
    let mut b = GalleryBuilder::with_capacity(dim, 100_000);
    for i in 0..100_000u64 {
        let v = random_unit(&mut rng, dim);
        b.push(
            i,
            &v,
            &format!("id{}", i % 500),
            &encounters[i as usize % 50],
            Split::Test,
        )
        .unwrap();
    }
    let g = b.build().map_err(|e| e.to_string())?;
    let probes: Vec<Vec<f64>> = (0..1000).map(|_| random_unit(&mut rng, dim)).collect();
    let queries: Vec<Query<'_>> = probes
        .iter()
        .enumerate()
        .map(|(i, v)| Query {
            record_id: i as u64,
            vector: v,
            encounter: &encounters[i % 50],
        })
        .collect();
    let t0 = Instant::now();
    let results = knn_batch(&g, &queries, 5);
    let search = t0.elapsed().as_secs_f64();
    let enc_of = row_index(&g);
    for (q, r) in queries.iter().zip(&results) {
        let r = r.as_ref().map_err(|e| e.to_string())?;
        audit_neighbors(&g, q.encounter, &r.neighbors, &enc_of);
    }

    // 150 identities x 10 encounters = 1,500 tracklets.
    let s = gen_reid_scenario(&ReidSpec {
        identities: 150,
        encounters_per_identity: 10,
        frames_per_tracklet: 2,
        social_groups: 10,
        seed: 12,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    check!(
        s.manifest.tracklets.len() == 1500,
        "scenario has {} tracklets",
        s.manifest.tracklets.len()
    );
    let t1 = Instant::now();
    let r = run_census(
        &s.manifest,
        &CensusConfig {
            constrained: true,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let census = t1.elapsed().as_secs_f64();
    audit_constrained(r.violations.len());

    check!(
        search < 30.0,
        "1,000 x 100,000 x 256 retrieval took {search:.1} s on {cores} core(s)"
    );
    check!(
        census < 60.0,
        "constrained HAC on 1,500 tracklets took {census:.1} s on {cores} core(s)"
    );
    Ok(format!(
        "retrieval 1,000 x 100,000 x 256 in {search:.2} s; constrained HAC on 1,500 tracklets in {census:.2} s ({cores} core(s))"
    ))
}

// ---------------------------------------------------------------- determinism

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trackletlab")
}

fn run_cli(dir: &Path, threads: usize, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin())
        .current_dir(dir)
        .env_remove("TRACKLETLAB_THREADS")
        .args(["--seed", "7", "--threads", &threads.to_string()])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

/// Every subcommand, writing all its outputs under `dir` with relative paths.
fn pipeline(dir: &Path, threads: usize) -> Result<(), String> {
    let crossing = serde_json::to_string(&crossing_scenario(3)).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("crossing.json"), crossing).map_err(|e| e.to_string())?;
    let frag = serde_json::json!({
        "identities": 8, "encounters_per_identity": 4, "social_groups": 2, "co_occurrence": true,
        "encounter_shared": 1.0, "noise": 0.2
    });
    std::fs::write(dir.join("frag.json"), frag.to_string()).map_err(|e| e.to_string())?;
    let steps: &[&[&str]] = &[
        &["synth", "reid", "--out", "reid"],
        &["synth", "reid", "--spec", "frag.json", "--out", "frag"],
        &["synth", "mot", "--spec", "crossing.json", "--out", "mot"],
        &["synth", "patch", "--out", "patch"],
        &[
            "reid",
            "eval",
            "--manifest",
            "reid/manifest.jsonl",
            "--report",
            "eval.csv",
        ],
        &[
            "reid",
            "eval",
            "--manifest",
            "reid/manifest.jsonl",
            "--level",
            "tracklet",
            "--strategy",
            "majority",
            "--report",
            "eval.json",
        ],
        &[
            "explain",
            "curve",
            "--manifest",
            "patch/manifest.jsonl",
            "--patches",
            "patch/patches.jsonl",
            "--relevance",
            "patch/relevance.rlv",
            "--embedder",
            "patch/embedder.json",
            "--report",
            "curve.json",
        ],
        &[
            "explain",
            "score",
            "--manifest",
            "reid/manifest.jsonl",
            "--gradient",
            "--report",
            "score.json",
        ],
        &[
            "census",
            "--manifest",
            "frag/manifest.jsonl",
            "--constrained",
            "--report",
            "census.json",
        ],
        &[
            "census",
            "--manifest",
            "frag/manifest.jsonl",
            "--algo",
            "hdbscan",
            "--unit",
            "frame",
            "--report",
            "census_hdbscan.json",
        ],
        &[
            "track",
            "--det",
            "mot/det.txt",
            "--appearance",
            "mot/emb.bin",
            "--out",
            "pred.txt",
            "--report",
            "track.json",
        ],
        &[
            "mot-eval",
            "--gt",
            "mot/gt.txt",
            "--pred",
            "pred.txt",
            "--report",
            "mot_eval.json",
        ],
        &[
            "validate",
            "--manifest",
            "reid/manifest.jsonl",
            "--report",
            "validate.json",
        ],
    ];
    for s in steps {
        run_cli(dir, threads, s)?;
    }
    Ok(())
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c13_determinism() -> Outcome {
    let runs: Vec<(usize, tempfile::TempDir)> = [1, 1, 4]
        .into_iter()
        .map(|t| (t, tempfile::tempdir().unwrap()))
        .collect();
    for (t, dir) in &runs {
        pipeline(dir.path(), *t)?;
    }
    let base = files(runs[0].1.path());
    for (t, dir) in &runs[1..] {
        let other = files(dir.path());
        check!(
            base.keys().eq(other.keys()),
            "different output files with {t} thread(s)"
        );
        for (name, bytes) in &base {
            check!(
                &other[name] == bytes,
                "{} differs between runs ({t} thread(s))",
                name.display()
            );
        }
    }
    Ok(format!(
        "13 invocations, {} output files byte-identical across 2 runs and 1 vs 4 threads",
        base.len()
    ))
}

fn main() {
    let criteria: [Criterion; 13] = [
        (1, "retrieval oracle", c1_retrieval_oracle),
        (3, "separability", c3_separability),
        (4, "aggregation robustness", c4_aggregation),
        (5, "gradient fidelity", c5_gradients),
        (6, "faithfulness shape", c6_faithfulness),
        (7, "ARI/AMI correctness", c7_partition_metrics),
        (8, "de-fragmentation", c8_defragmentation),
        (10, "MOT metric sanity", c10_mot_metrics),
        (11, "tracker behaviour", c11_tracker),
        (12, "performance", c12_performance),
        (13, "determinism", c13_determinism),
        // These two audit tallies collected by the runs above.
        (2, "exclusion protocol", c2_exclusion),
        (9, "constraint audit", c9_constraint_audit),
    ];
    let mut results = Vec::new();
    for (n, name, f) in criteria {
        let t0 = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .map_or("panicked".into(), |m| format!("panicked: {m}")))
        });
        results.push((n, name, r, t0.elapsed().as_secs_f64()));
    }
    results.sort_by_key(|r| r.0);
    println!();
    for (n, name, r, secs) in &results {
        match r {
            Ok(detail) => println!("PASS  {n:>2} {name} ({secs:.1} s): {detail}"),
            Err(why) => println!("FAIL  {n:>2} {name} ({secs:.1} s): {why}"),
        }
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("\nacceptance: {} passed, {failed} failed\n", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
