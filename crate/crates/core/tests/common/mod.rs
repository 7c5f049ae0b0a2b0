#![allow(dead_code)]

use ipgan::evaluation::FeatureMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Retrieval scores computed with explicit loops, sharing nothing with the
/// library implementation beyond the tie tolerance: squared distances of
/// unit vectors, positions found by pairwise precedence counts.
pub struct OracleScores {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub skipped: usize,
}

pub fn brute_force_retrieval(q: &FeatureMatrix, g: &FeatureMatrix, k: usize) -> OracleScores {
    fn unit(v: &[f64]) -> Vec<f64> {
        let mut n = 0.0;
        for x in v {
            n += x * x;
        }
        let n = n.sqrt();
        v.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect()
    }
    let mut hits_at = vec![0usize; k];
    let mut ap_sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for qi in 0..q.len() {
        let qv = unit(q.row(qi));
        let (qid, qcam) = (q.identities[qi], q.cameras[qi]);
        let mut order: Vec<(f64, usize)> = Vec::new();
        for gi in 0..g.len() {
            let gid = g.identities[gi];
            if gid == -1 || (gid == qid && g.cameras[gi] == qcam) {
                continue;
            }
            let gv = unit(g.row(gi));
            let mut d = 0.0;
            for t in 0..gv.len() {
                d += (qv[t] - gv[t]) * (qv[t] - gv[t]);
            }
            order.push((d, gi));
        }
        // position = number of entries that precede it; near-equal distances
        // count as ties and fall back to gallery order
        let precedes = |a: &(f64, usize), b: &(f64, usize)| {
            if (a.0 - b.0).abs() <= ipgan::evaluation::TIE_TOLERANCE {
                a.1 < b.1
            } else {
                a.0 < b.0
            }
        };
        let mut ranked = vec![(0.0, 0); order.len()];
        for a in &order {
            let position = order.iter().filter(|b| precedes(b, a)).count();
            ranked[position] = *a;
        }
        let order = ranked;
        let relevant: Vec<bool> = order.iter().map(|&(_, gi)| g.identities[gi] == qid).collect();
        let total = relevant.iter().filter(|&&r| r).count();
        if total == 0 {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        let mut found = 0;
        let mut precision_sum = 0.0;
        let mut first = None;
        for (rank, &r) in relevant.iter().enumerate() {
            if r {
                found += 1;
                precision_sum += found as f64 / (rank + 1) as f64;
                first.get_or_insert(rank);
            }
        }
        ap_sum += precision_sum / total as f64;
        let first = first.unwrap();
        for (depth, slot) in hits_at.iter_mut().enumerate() {
            if first <= depth {
                *slot += 1;
            }
        }
    }
    let denom = evaluated.max(1) as f64;
    OracleScores {
        cmc: hits_at.iter().map(|&h| h as f64 / denom).collect(),
        map: if evaluated == 0 { 0.0 } else { ap_sum / denom },
        skipped,
    }
}

/// Random retrieval instance. Features are drawn from a small integer grid
/// so exact distance ties occur regularly; identities include junk (-1).
pub fn random_instance(seed: u64, max_q: usize, max_g: usize) -> (FeatureMatrix, FeatureMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=6);
    let ids = rng.random_range(1..=8i64);
    let cams = rng.random_range(1..=4u32);
    let coarse = rng.random_bool(0.5);
    let draw = |n: usize, junk: bool, rng: &mut ChaCha8Rng| {
        let mut rows = Vec::with_capacity(n);
        let mut idv = Vec::with_capacity(n);
        let mut camv = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..dim)
                .map(|_| if coarse { rng.random_range(-2..=2) as f64 } else { rng.random_range(-1.0..1.0) })
                .collect();
            // avoid the all-zero direction, which has no defined normalization
            let row = if row.iter().all(|&v| v == 0.0) { vec![1.0; dim] } else { row };
            rows.push(row);
            idv.push(if junk && rng.random_bool(0.1) { -1 } else { rng.random_range(0..ids) });
            camv.push(rng.random_range(1..=cams));
        }
        FeatureMatrix::new(rows, idv, camv).unwrap()
    };
    let nq = rng.random_range(1..=max_q);
    let ng = rng.random_range(1..=max_g);
    let q = draw(nq, false, &mut rng);
    let g = draw(ng, true, &mut rng);
    (q, g)
}

use ipgan::datasets::{generate_synthetic_dataset, LoadedDataset, SyntheticSpec};
use ipgan::gan::{DomainDiscriminatorConfig, GeneratorConfig};
use ipgan::reid::ReIdConfig;
use ipgan::training::{GanSetup, TrainConfig};

/// 3 identities x 2 cameras of 16x8 images: source, target, query, gallery.
pub fn tiny_corpus(seed: u64) -> [LoadedDataset; 4] {
    let spec = SyntheticSpec::new(3, 2, 2, 16, 8).unwrap();
    let c = generate_synthetic_dataset(&spec, seed).unwrap();
    [c.source_train, c.target_train, c.query, c.gallery].map(|m| LoadedDataset::from_manifest(m, None).unwrap())
}

pub fn tiny_reid_arch() -> ReIdConfig {
    ReIdConfig {
        stem_channels: 4,
        stage_channels: vec![4, 8, 8, 8],
        blocks_per_stage: vec![1, 1, 1, 1],
        embedding_dim: 16,
        ..ReIdConfig::desk(16, 8, 3, 3)
    }
}

pub fn tiny_classifier_train(epochs: usize) -> TrainConfig {
    TrainConfig { total_epochs: epochs, batch_size: 4, ..TrainConfig::classifier_default() }
}

pub fn tiny_gan_setup(epochs: usize, with_semantic: bool) -> GanSetup {
    GanSetup {
        generator: GeneratorConfig { base_width: 4, residual_blocks: 1, edge_kernel: 3, ..GeneratorConfig::new(16, 8, 3, 3) },
        discriminator: DomainDiscriminatorConfig { base_width: 4, layers: 2, ..DomainDiscriminatorConfig::new(16, 8, 3, 3) },
        train: TrainConfig { total_epochs: epochs, batch_size: 4, with_semantic, checkpoint_every: 1, ..TrainConfig::gan_default() },
    }
}
