// Scratch probe for tuning acceptance fixtures. Not part of the deliverable.

use std::sync::Arc;
use std::time::Instant;

use qvcache::bench::{ground_truth, run_benchmark, BenchConfig};
use qvcache::{
    generate_trace, perturb, sample_dataset, train, CacheConfig, GaussianMixture, Vector,
    WorkloadParams,
};
use rand::{Rng, SeedableRng};

fn main() {
    let std: f32 = std::env::var("STD").map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let intrinsic: usize = std::env::var("INTRINSIC").map(|s| s.parse().unwrap()).unwrap_or(8);
    let n: usize = std::env::var("N").map(|s| s.parse().unwrap()).unwrap_or(100_000);
    let nq: usize = std::env::var("NQ").map(|s| s.parse().unwrap()).unwrap_or(2_000);
    let dev: f64 = std::env::var("DEV").map(|s| s.parse().unwrap()).unwrap_or(0.1);

    let t0 = Instant::now();
    let mixture = if intrinsic == 0 {
        GaussianMixture::random(64, 32, std, 1001)
    } else {
        GaussianMixture::random_low_rank(64, 32, std, intrinsic, 1001).unwrap()
    };
    let dataset = mixture.sample(n, 1002);
    let queries = mixture.sample(nq, 1003).into_vectors();
    println!("dataset {}x{} std {std} intrinsic {intrinsic}  ({:?})", n, 64, t0.elapsed());

    // Overlap curve (criterion 2 shape).
    let t0 = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(777);
    let sample_queries: Vec<&Vector> = queries.iter().take(300).collect();
    for eta in [0.01, 0.1, 0.3, 0.5] {
        let mut total = 0.0;
        for q in &sample_queries {
            let r = dataset.vector(rng.gen_range(0..dataset.len()) as u64).unwrap();
            let q2 = perturb(q, r, eta).unwrap();
            let base: Vec<u64> = dataset.brute_force_search(q, 10).unwrap().iter().map(|n| n.id).collect();
            let moved = dataset.brute_force_search(&q2, 10).unwrap();
            total += moved.iter().filter(|n| base.contains(&n.id)).count() as f64 / 10.0;
        }
        println!("overlap eta {eta}: {:.3}", total / sample_queries.len() as f64);
    }
    println!("overlap time {:?}", t0.elapsed());

    // Default benchmark run.
    let t0 = Instant::now();
    let params = WorkloadParams { seed: 1006, ..WorkloadParams::default() };
    let trace = generate_trace(&queries, &dataset, &params).unwrap();
    println!("trace {} entries ({:?})", trace.len(), t0.elapsed());

    let t0 = Instant::now();
    let projector = train(&sample_dataset(&dataset, 0.01, 1004).unwrap(), 16, 8, 1005).unwrap();
    println!("projector ({:?})", t0.elapsed());

    let t0 = Instant::now();
    let truth = ground_truth(&dataset, &trace, 10).unwrap();
    println!("ground truth ({:?})", t0.elapsed());

    let w = qvcache::bench::estimate_working_set(&trace, &truth);
    println!("working set estimate: {w}");

    let t0 = Instant::now();
    let config = BenchConfig {
        k: 10,
        cache: CacheConfig {
            k_max: 10,
            deviation_factor: dev,
            deterministic_mode: true,
            ..CacheConfig::default()
        },
        ..BenchConfig::default()
    };
    let report = run_benchmark(&dataset, &trace, &projector, &config, Some(&truth)).unwrap();
    println!("run time {:?}", t0.elapsed());
    println!("aggregate hit {:.4} recall {:.4}", report.aggregate_hit_ratio, report.aggregate_recall.unwrap());
    let _ = Arc::new(0);
    for s in &report.steps {
        println!(
            "step {:>2}: hit {:>6.4} recall {:.4} live {:>6} regions {:>5} scanned {:.2}",
            s.window_step, s.hit_ratio, s.recall_at_k.unwrap(), s.live_cached_vectors, s.active_regions, s.mean_mini_indexes_scanned
        );
    }
    // Per-position summary for criteria 3 and 4.
    println!("drops at slides:");
    for p in 1..7 {
        let prev = report.steps[3 * p - 1].hit_ratio;
        let first = report.steps[3 * p].hit_ratio;
        println!("  position {p}: prev {prev:.4} first {first:.4} drop {:.4}", prev - first);
    }
}
