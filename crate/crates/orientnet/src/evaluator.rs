//! Runs a trained model against test manifests under named protocols and
//! produces accuracy, per-class recall and confusion matrices, plus the
//! protocol-comparison table.
//!
//! Evaluation never rejects: every sample receives a prediction. Samples
//! may be scored in parallel; the counts are integers merged associatively,
//! so reports are independent of ordering.

use crate::datapipe::{
    preprocess, rotate_image, DatasetManifest, OrientationLabel, Protocol,
};
use crate::error::{Error, Result};
use crate::imageio;
use crate::layers::{softmax, Network, CLASS_COUNT};
use crate::netspec::Checkpoint;
use crate::tensor::Tensor;
use crate::threads;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// A checkpointed network plus the preprocessing statistics it was trained
/// with. Read-only; predictions are deterministic.
pub struct Predictor {
    net: Network,
    mean_rgb: [f32; 3],
    input_side: usize,
}

impl Predictor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Predictor> {
        let net = ckpt.instantiate()?;
        let (_, side, _) = net.input_shape();
        Ok(Predictor {
            net,
            mean_rgb: ckpt.meta.mean_rgb,
            input_side: side,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn mean_rgb(&self) -> [f32; 3] {
        self.mean_rgb
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    /// Mean subtraction and resize into network input space.
    pub fn preprocess_input(&self, raw: &Tensor) -> Result<Tensor> {
        preprocess(raw, self.mean_rgb, Some(self.input_side))
    }

    /// Argmax label and the four softmax probabilities for one raw
    /// [3,h,w] image in 0..=255.
    pub fn predict(&self, raw: &Tensor) -> Result<(OrientationLabel, [f32; 4])> {
        let input = self.preprocess_input(raw)?;
        let mut shape = vec![1];
        shape.extend_from_slice(input.shape());
        let batch = input.reshape(&shape)?;
        let logits = self.net.forward_inference(&batch)?;
        let probs = softmax(&logits)?;
        let row = &probs.data()[0..CLASS_COUNT];
        let mut best = 0usize;
        for j in 1..CLASS_COUNT {
            if row[j] > row[best] {
                best = j;
            }
        }
        let mut out = [0.0f32; 4];
        out.copy_from_slice(row);
        Ok((OrientationLabel::new(best as u8)?, out))
    }
}

/// Per-protocol evaluation result. Confusion rows are true classes,
/// columns are predictions; recall is None for classes absent from the
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: String,
    pub dataset: String,
    pub n_samples: usize,
    pub accuracy: f64,
    pub per_class_recall: [Option<f64>; 4],
    pub confusion: [[u64; 4]; 4],
}

impl EvalReport {
    fn from_confusion(protocol: &str, dataset: &str, confusion: [[u64; 4]; 4]) -> EvalReport {
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..4).map(|i| confusion[i][i]).sum();
        let mut recall = [None; 4];
        for (i, r) in recall.iter_mut().enumerate() {
            let row: u64 = confusion[i].iter().sum();
            if row > 0 {
                *r = Some(confusion[i][i] as f64 / row as f64);
            }
        }
        EvalReport {
            protocol: protocol.to_string(),
            dataset: dataset.to_string(),
            n_samples: total as usize,
            accuracy: if total > 0 {
                trace as f64 / total as f64
            } else {
                0.0
            },
            per_class_recall: recall,
            confusion,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering for terminals.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "protocol {}  dataset {}  n {}  accuracy {:.2}\n",
            self.protocol,
            self.dataset,
            self.n_samples,
            self.accuracy * 100.0
        );
        out.push_str("theta  recall   confusion (pred 0/90/180/270)\n");
        for i in 0..4 {
            let recall = match self.per_class_recall[i] {
                Some(r) => format!("{:6.2}", r * 100.0),
                None => "     -".to_string(),
            };
            out.push_str(&format!(
                "{:>5}  {}   {:>6} {:>6} {:>6} {:>6}\n",
                i * 90,
                recall,
                self.confusion[i][0],
                self.confusion[i][1],
                self.confusion[i][2],
                self.confusion[i][3]
            ));
        }
        out
    }
}

/// Full-pass evaluation of an arbitrary classifier over a manifest. Each
/// entry's upright source is decoded, rotated by its label, and scored.
pub fn evaluate_with<F>(
    classify: F,
    manifest: &DatasetManifest,
    protocol: Protocol,
    dataset: &str,
) -> Result<EvalReport>
where
    F: Fn(&Tensor) -> Result<OrientationLabel> + Sync,
{
    if manifest.is_empty() {
        return Err(Error::Data("evaluation manifest is empty".into()));
    }
    let chunk_size = 32usize;
    let n_chunks = manifest.len().div_ceil(chunk_size);
    let mut partials: Vec<(u64, [[u64; 4]; 4], Option<String>)> =
        vec![(0, [[0; 4]; 4], None); n_chunks];
    threads::par_chunks_mut(&mut partials, 1, |ci, slot| {
        let start = ci * chunk_size;
        let end = (start + chunk_size).min(manifest.len());
        let mut conf = [[0u64; 4]; 4];
        for entry in &manifest.entries[start..end] {
            let decoded = match imageio::decode(&entry.path) {
                Ok(d) => d,
                Err(e) => {
                    slot[0].2 = Some(e.to_string());
                    return;
                }
            };
            let sample = rotate_image(&decoded.pixels, entry.theta);
            match classify(&sample) {
                Ok(pred) => {
                    conf[entry.theta.theta() as usize][pred.theta() as usize] += 1;
                }
                Err(e) => {
                    slot[0].2 = Some(e.to_string());
                    return;
                }
            }
        }
        slot[0] = ((end - start) as u64, conf, None);
    });
    let mut confusion = [[0u64; 4]; 4];
    for (_, partial, err) in &partials {
        if let Some(e) = err {
            return Err(Error::Data(format!("evaluation failed: {e}")));
        }
        for i in 0..4 {
            for j in 0..4 {
                confusion[i][j] += partial[i][j];
            }
        }
    }
    Ok(EvalReport::from_confusion(protocol.name(), dataset, confusion))
}

/// Evaluates a trained predictor; no rejection option exists.
pub fn evaluate(
    predictor: &Predictor,
    manifest: &DatasetManifest,
    protocol: Protocol,
    dataset: &str,
) -> Result<EvalReport> {
    evaluate_with(
        |img| predictor.predict(img).map(|(label, _)| label),
        manifest,
        protocol,
        dataset,
    )
}

/// One report per protocol, each from a protocol-specific resampling of
/// the same upright source pool.
pub fn compare_protocols(
    predictor: &Predictor,
    sources: &DatasetManifest,
    protocols: &[Protocol],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(protocols.len());
    for &protocol in protocols {
        let manifest = crate::datapipe::sample_protocol(sources, protocol, None, rng)?;
        reports.push(evaluate(predictor, &manifest, protocol, &sources.source)?);
    }
    Ok(reports)
}

/// CSV of the comparison grid: rows are protocols, columns are dataset
/// tags, cells are accuracy in percent (2 decimals).
pub fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut protocols: Vec<&str> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !protocols.contains(&r.protocol.as_str()) {
            protocols.push(&r.protocol);
        }
    }
    let mut out = String::from("protocol");
    for d in &datasets {
        out.push(',');
        out.push_str(d);
    }
    out.push('\n');
    for p in &protocols {
        out.push_str(p);
        for d in &datasets {
            out.push(',');
            match reports
                .iter()
                .find(|r| r.protocol == *p && r.dataset == *d)
            {
                Some(r) => out.push_str(&format!("{:.2}", r.accuracy * 100.0)),
                None => out.push('-'),
            }
        }
        out.push('\n');
    }
    out
}
