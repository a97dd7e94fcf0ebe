// Feature hallucination end to end: dense proposals around a box, a running
// per-class Gaussian fed by their features, sampling probabilities from an
// indicator vector and synthesized features for the selected classes.

use bacl::fhm::{dense_proposals, sampling_probs_from, select_classes, synthesize, FeatureDistribution};
use bacl::rng::{RngStreams, Stream};
use bacl::{BBox, Result};
use rand::Rng;
use rand_distr::StandardNormal;

pub struct Outcome {
    pub min_iou: f64,
    pub sampling_probs: Vec<f64>,
    pub selected: Vec<usize>,
    pub synthesized_mean: Vec<f64>,
    pub mu: Vec<f64>,
}

pub fn run_example() -> Result<Outcome> {
    let streams = RngStreams::new(11);
    let mut boxes = streams.stream(Stream::BoxGen);
    let mut noise = streams.stream(Stream::FhmNoise);
    let mut select = streams.stream(Stream::FhmSelect);

    let gt = BBox::new(0.2, 0.2, 0.6, 0.5)?;
    let proposals = dense_proposals(&gt, &mut boxes)?;
    let min_iou = proposals.iter().map(|p| p.bbox.iou(&gt)).fold(1.0, f64::min);

    // class 1's instance feature, jittered once per proposal
    let base = [1.0, -2.0, 0.5];
    let feats: Vec<Vec<f64>> = proposals
        .iter()
        .map(|p| {
            let s = 0.05 * p.mean_abs_offset();
            base.iter().map(|&v| v + s * boxes.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    let labels = vec![1; feats.len()];
    let mut dist = FeatureDistribution::new(4, 3);
    dist.update(&feats, &labels, 0.9)?;

    // a low indicator (rare, poorly served) means a high chance of selection
    let sp = sampling_probs_from(&[0.9, 0.05, 0.6, 1.0]);
    let selected = select_classes(&sp, 2, &mut select);
    let batch = synthesize(&dist, 1, 2000, &mut noise)?;
    let n = batch.len() as f64;
    let synthesized_mean = (0..3)
        .map(|k| batch.features.iter().map(|f| f[k]).sum::<f64>() / n)
        .collect();
    Ok(Outcome {
        min_iou,
        sampling_probs: sp,
        selected,
        synthesized_mean,
        mu: dist.mu[1].clone(),
    })
}

fn main() -> Result<()> {
    let o = run_example()?;
    println!("min IoU of 16 proposals: {:.4} (bound 4/9 = {:.4})", o.min_iou, 4.0 / 9.0);
    println!("sampling probabilities:  {:?}", o.sampling_probs);
    println!("selected classes:        {:?}", o.selected);
    println!("class-1 mu:              {:?}", o.mu);
    println!("mean of 2000 synthesized {:?}", o.synthesized_mean);
    Ok(())
}
