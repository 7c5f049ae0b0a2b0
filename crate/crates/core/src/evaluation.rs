//! Retrieval features, single-query CMC / mAP, and classification audits.

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::datasets::LoadedDataset;
use crate::error::{Error, Result};
use crate::nn::{Mode, ModelParams};
use crate::reid::{reid_config, reid_forward};
use crate::training::dataset_tensor;

const CHUNK: usize = 128;

/// Features aligned with a manifest's records.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
    pub identities: Vec<i64>,
    pub cameras: Vec<u32>,
    normalized: bool,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, identities: Vec<i64>, cameras: Vec<u32>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape(format!("rows of length {dim}"), "ragged rows"));
        }
        if identities.len() != rows.len() || cameras.len() != rows.len() {
            return Err(Error::shape(format!("{} labels", rows.len()), format!("{}/{}", identities.len(), cameras.len())));
        }
        Ok(Self {
            dim,
            data: rows.concat(),
            identities,
            cameras,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rescales every row to unit length (zero rows stay zero).
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        for r in out.data.chunks_mut(self.dim.max(1)) {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out.normalized = true;
        out
    }
}

/// Eval-mode features of every record, in record order, L2-normalized.
pub fn extract_features(params: &ModelParams, data: &LoadedDataset) -> Result<FeatureMatrix> {
    let cfg = reid_config(params)?;
    let shape = data.manifest.image_shape();
    if shape != (cfg.height, cfg.width, cfg.channels) {
        return Err(Error::shape(
            format!("{}x{}x{} images", cfg.height, cfg.width, cfg.channels),
            format!("{}x{}x{}", shape.0, shape.1, shape.2),
        ));
    }
    let images = dataset_tensor(data, DType::F32)?;
    let frozen = params.frozen();
    let mut rows = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(CHUNK) {
        let len = CHUNK.min(data.len() - start);
        let out = reid_forward(&frozen, &images.narrow(0, start, len)?, Mode::Eval)?;
        let f = out.feature(cfg.feature_source).to_dtype(DType::F64)?.to_vec2::<f64>()?;
        rows.extend(f);
    }
    let ids = data.manifest.records.iter().map(|r| r.identity).collect();
    let cams = data.manifest.records.iter().map(|r| r.camera).collect();
    Ok(FeatureMatrix::new(rows, ids, cams)?.l2_normalized())
}

/// Squared distances closer than this are one tie. Mathematically equal
/// distances can differ in the last bits after normalization.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// How the ranking was scored, recorded with every result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub metric: String,
    pub exclusion: String,
    pub junk: String,
    pub ties: String,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            metric: "euclidean on l2-normalized features".into(),
            exclusion: "gallery entries sharing the query's identity and camera".into(),
            junk: "identity -1 ignored in ranking, AP and CMC".into(),
            ties: format!("distances within {TIE_TOLERANCE:e} of each other are equal and ordered by gallery index"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `cmc[k - 1]` is the rank-k accuracy.
    pub cmc: Vec<f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    /// AP of each evaluated query, in query order.
    pub per_query_ap: Vec<f64>,
    /// Query indices that were evaluated (aligned with `per_query_ap`).
    pub evaluated_queries: Vec<usize>,
    /// Queries without any valid gallery match.
    pub skipped_queries: usize,
    pub protocol: Protocol,
}

impl EvalResult {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }

    pub fn to_report(&self) -> String {
        serde_json::to_string_pretty(self).expect("eval result serializes")
    }
}

/// Reorders runs of near-equal distances by gallery index. A run is anchored
/// at its first element, so it never chains across a real gap.
fn settle_ties(order: &mut [(f64, usize)]) {
    let mut start = 0;
    while start < order.len() {
        let anchor = order[start].0;
        let end = start + order[start..].iter().take_while(|(d, _)| d - anchor <= TIE_TOLERANCE).count();
        order[start..end].sort_by_key(|&(_, i)| i);
        start = end;
    }
}

/// Single-query ranking with the same-identity-same-camera exclusion and junk
/// removal. Both sides are L2-normalized here, whatever their flag says.
pub fn compute_cmc_map(queries: &FeatureMatrix, gallery: &FeatureMatrix, k: usize) -> Result<EvalResult> {
    if k < 1 {
        return Err(Error::Precondition("CMC depth K must be at least 1".into()));
    }
    if queries.dim != gallery.dim && !queries.is_empty() && !gallery.is_empty() {
        return Err(Error::shape(format!("{}-d gallery features", queries.dim), format!("{}-d", gallery.dim)));
    }
    let q = if queries.normalized { queries.clone() } else { queries.l2_normalized() };
    let g = if gallery.normalized { gallery.clone() } else { gallery.l2_normalized() };
    let mut cmc = vec![0.0; k];
    let mut aps = Vec::new();
    let mut evaluated = Vec::new();
    let mut skipped = 0;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(g.len());
    for qi in 0..q.len() {
        let (qid, qcam) = (q.identities[qi], q.cameras[qi]);
        order.clear();
        for gi in 0..g.len() {
            let (gid, gcam) = (g.identities[gi], g.cameras[gi]);
            if gid < 0 || (gid == qid && gcam == qcam) {
                continue;
            }
            let d: f64 = q.row(qi).iter().zip(g.row(gi)).map(|(a, b)| (a - b) * (a - b)).sum();
            order.push((d, gi));
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        settle_ties(&mut order);
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first_hit = None;
        for (rank, &(_, gi)) in order.iter().enumerate() {
            if g.identities[gi] == qid {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
                first_hit.get_or_insert(rank);
            }
        }
        let Some(first) = first_hit.filter(|_| qid >= 0) else {
            skipped += 1;
            continue;
        };
        for c in cmc.iter_mut().skip(first) {
            *c += 1.0;
        }
        aps.push(precision_sum / hits as f64);
        evaluated.push(qi);
    }
    let n = aps.len();
    if n > 0 {
        cmc.iter_mut().for_each(|c| *c /= n as f64);
    }
    let map = if n > 0 { aps.iter().sum::<f64>() / n as f64 } else { 0.0 };
    Ok(EvalResult {
        cmc,
        map,
        per_query_ap: aps,
        evaluated_queries: evaluated,
        skipped_queries: skipped,
        protocol: Protocol::default(),
    })
}

/// Eval-mode argmax class of every record, mapped through the vocabulary.
pub fn predict_labels(classifier: &ModelParams, data: &LoadedDataset) -> Result<Vec<i64>> {
    let vocab = classifier
        .vocabulary
        .as_ref()
        .ok_or_else(|| Error::Vocabulary("classifier carries no label vocabulary".into()))?;
    let images = dataset_tensor(data, DType::F32)?;
    let frozen = classifier.frozen();
    let mut out = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(CHUNK) {
        let len = CHUNK.min(data.len() - start);
        let logits = reid_forward(&frozen, &images.narrow(0, start, len)?, Mode::Eval)?.logits;
        let idx = logits.argmax(1)?.to_dtype(DType::U32)?.to_vec1::<u32>()?;
        out.extend(idx.into_iter().map(|i| vocab[i as usize]));
    }
    Ok(out)
}

/// Fraction of records whose predicted identity equals their label.
pub fn identity_preservation_accuracy(classifier: &ModelParams, translated: &LoadedDataset) -> Result<f64> {
    let vocab = classifier
        .vocabulary
        .as_ref()
        .ok_or_else(|| Error::Vocabulary("classifier carries no label vocabulary".into()))?;
    if let Some(r) = translated.manifest.records.iter().find(|r| !vocab.contains(&r.identity)) {
        return Err(Error::Vocabulary(format!("identity {} is not a class of the classifier", r.identity)));
    }
    let truth: Vec<i64> = translated.manifest.records.iter().map(|r| r.identity).collect();
    accuracy(&predict_labels(classifier, translated)?, &truth)
}

/// Fraction of records a camera classifier assigns to their camera field.
pub fn camera_assignment_accuracy(classifier: &ModelParams, data: &LoadedDataset) -> Result<f64> {
    let truth: Vec<i64> = data.manifest.records.iter().map(|r| r.camera as i64).collect();
    accuracy(&predict_labels(classifier, data)?, &truth)
}

fn accuracy(pred: &[i64], truth: &[i64]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Precondition("accuracy of an empty set".into()));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
}
