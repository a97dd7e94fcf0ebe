//! Feature hallucination: dense proposals around ground-truth boxes, EMA
//! feature distributions per class, tail-biased class selection and
//! reparametrized feature synthesis.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::IndicatorSnapshot;
use crate::params::IndicatorKind;
use crate::rng::StreamRng;
use crate::types::BBox;

pub const PROPOSALS_PER_INSTANCE: usize = 16;
const MAX_REDRAWS: usize = 100;

/// A jittered copy of a ground-truth box with the offsets that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub eta: [f64; 4],
}

impl Proposal {
    pub fn mean_abs_offset(&self) -> f64 {
        self.eta.iter().map(|e| e.abs()).sum::<f64>() / 4.0
    }
}

/// Moves each corner coordinate by `eta_k` sixths of the box side.
pub fn jitter_box(b: &BBox, eta: [f64; 4]) -> BBox {
    let w = b.width() / 6.0;
    let h = b.height() / 6.0;
    BBox {
        x1: b.x1 + eta[0] * w,
        y1: b.y1 + eta[1] * h,
        x2: b.x2 + eta[2] * w,
        y2: b.y2 + eta[3] * h,
    }
}

pub fn dense_proposals(b: &BBox, rng: &mut StreamRng) -> Result<Vec<Proposal>> {
    if !b.is_valid() {
        return Err(Error::InvalidBox {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        });
    }
    let mut out = Vec::with_capacity(PROPOSALS_PER_INSTANCE);
    let mut misses = 0;
    while out.len() < PROPOSALS_PER_INSTANCE {
        let eta: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let bbox = jitter_box(b, eta);
        if bbox.is_valid() {
            out.push(Proposal { bbox, eta });
            misses = 0;
        } else {
            misses += 1;
            if misses > MAX_REDRAWS {
                return Err(Error::DegenerateBoxes(misses));
            }
        }
    }
    Ok(out)
}

/// The 16 dense proposal boxes for one ground-truth box.
pub fn generate_boxes(b: &BBox, rng: &mut StreamRng) -> Result<Vec<BBox>> {
    Ok(dense_proposals(b, rng)?.into_iter().map(|p| p.bbox).collect())
}

/// Per-class prototype `mu` and per-dimension standard deviation `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistribution {
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub seen: Vec<u64>,
}

impl FeatureDistribution {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        FeatureDistribution {
            mu: vec![vec![0.0; dim]; num_classes],
            sigma: vec![vec![0.0; dim]; num_classes],
            seen: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.seen.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    pub fn is_eligible(&self, class: usize) -> bool {
        self.seen.get(class).is_some_and(|&n| n > 0)
    }

    /// EMA update from one step's features. Each class present gets its batch
    /// mean and population standard deviation blended in with rate `beta`;
    /// the first observation of a class is taken as-is.
    pub fn update<F: AsRef<[f64]>>(&mut self, features: &[F], labels: &[usize], beta: f64) -> Result<()> {
        let d = self.dim();
        let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
        for (f, &l) in features.iter().zip(labels) {
            let f = f.as_ref();
            if l >= self.num_classes() {
                return Err(Error::InvalidLabel(format!("distribution update with label {l}")));
            }
            if f.len() != d {
                return Err(Error::Shape {
                    context: "distribution feature",
                    expected: d,
                    actual: f.len(),
                });
            }
            groups.entry(l).or_default().push(f);
        }
        for (class, rows) in groups {
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
            let spread: Vec<f64> = (0..d)
                .map(|k| (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt())
                .collect();
            if self.seen[class] == 0 {
                self.mu[class] = mean;
                self.sigma[class] = spread;
            } else {
                for k in 0..d {
                    self.mu[class][k] = beta * self.mu[class][k] + (1.0 - beta) * mean[k];
                    self.sigma[class][k] = beta * self.sigma[class][k] + (1.0 - beta) * spread[k];
                }
            }
            self.seen[class] += rows.len() as u64;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header = vec!["class".to_string(), "seen".to_string()];
        header.extend((0..d).map(|k| format!("mu_{k}")));
        header.extend((0..d).map(|k| format!("sigma_{k}")));
        writeln!(w, "{}", header.join(","))?;
        for c in 0..self.num_classes() {
            let mut row = vec![c.to_string(), self.seen[c].to_string()];
            row.extend(self.mu[c].iter().map(f64::to_string));
            row.extend(self.sigma[c].iter().map(f64::to_string));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Sampling weights proportional to `1 - l_i`; uniform when every `l_i` is 1.
pub fn sampling_probs_from(values: &[f64]) -> Vec<f64> {
    let comp: Vec<f64> = values.iter().map(|&l| (1.0 - l).max(0.0)).collect();
    let total: f64 = comp.iter().sum();
    if total > 0.0 {
        comp.into_iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / values.len() as f64; values.len()]
    }
}

pub fn sampling_probs(snapshot: &IndicatorSnapshot, kind: IndicatorKind) -> Vec<f64> {
    sampling_probs_from(&snapshot.fhm_values(kind))
}

/// Weighted draw of `count` distinct classes. Once every class with non-zero
/// weight is taken, the remainder comes uniformly from the zero-weight ones.
pub fn select_classes(sp: &[f64], count: usize, rng: &mut StreamRng) -> Vec<usize> {
    let c = sp.len();
    if count >= c {
        return (0..c).collect();
    }
    let positive: Vec<usize> = (0..c).filter(|&k| sp[k] > 0.0).collect();
    if count <= positive.len() {
        return index::sample_weighted(rng, positive.len(), |k| sp[positive[k]], count)
            .expect("finite positive weights")
            .into_iter()
            .map(|k| positive[k])
            .collect();
    }
    let mut picked = positive;
    let zeros: Vec<usize> = (0..c).filter(|&k| sp[k] <= 0.0).collect();
    let extra = count - picked.len();
    picked.extend(index::sample(rng, zeros.len(), extra).into_iter().map(|k| zeros[k]));
    picked
}

#[derive(Debug, Clone, PartialEq)]
pub struct HallucinatedBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl HallucinatedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn extend(&mut self, other: HallucinatedBatch) {
        self.features.extend(other.features);
        self.labels.extend(other.labels);
    }
}

/// `m` features `mu + eps * sigma` for `class`, fresh standard-normal `eps`
/// per feature.
pub fn synthesize(
    dist: &FeatureDistribution,
    class: usize,
    m: usize,
    rng: &mut StreamRng,
) -> Result<HallucinatedBatch> {
    if !dist.is_eligible(class) {
        return Err(Error::UnseenClass(class));
    }
    let mu = &dist.mu[class];
    let sigma = &dist.sigma[class];
    let features = (0..m)
        .map(|_| {
            mu.iter()
                .zip(sigma)
                .map(|(&u, &s)| u + rng.sample::<f64, _>(StandardNormal) * s)
                .collect()
        })
        .collect();
    Ok(HallucinatedBatch {
        features,
        labels: vec![class; m],
    })
}
