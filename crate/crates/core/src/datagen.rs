//! Synthetic long-tailed classification tasks.
//!
//! Foreground class `i` (zero-based) receives `round(max_count * (i+1)^-power)`
//! training examples, so class 0 is the head and class `C-1` the tail. Each
//! class draws isotropic Gaussian features around a prototype; one abundant
//! background class draws from a broad Gaussian that overlaps every
//! prototype. Every example also carries a random box in the unit canvas,
//! used only by the dense-proposal generator.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RngStreams, Stream, StreamRng};
use crate::types::{BBox, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub max_count: usize,
    pub min_count: usize,
    pub power: f64,
    pub background_count: usize,
    /// Standard deviation of the isotropic prototype distribution.
    pub class_sep: f64,
    /// Within-class standard deviation.
    pub noise_scale: f64,
    /// Standard deviation of the zero-mean background generator.
    pub background_scale: f64,
    /// Held-out examples per foreground class.
    pub test_per_class: usize,
    pub test_background: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::long_tailed(30, 32, 5000, 5)
    }
}

impl TaskSpec {
    /// Power-law task whose counts run exactly from `max_count` down to
    /// `min_count` over `num_classes` classes.
    pub fn long_tailed(
        num_classes: usize,
        feature_dim: usize,
        max_count: usize,
        min_count: usize,
    ) -> Self {
        let power = if num_classes > 1 && min_count > 0 {
            (max_count as f64 / min_count as f64).ln() / (num_classes as f64).ln()
        } else {
            0.0
        };
        TaskSpec {
            num_classes,
            feature_dim,
            max_count,
            min_count,
            power,
            background_count: 8000,
            class_sep: 1.0,
            noise_scale: 0.7,
            background_scale: 1.5,
            test_per_class: 100,
            test_background: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, value: String, range| {
            Err(Error::InvalidParam {
                field,
                value,
                range,
            })
        };
        if self.num_classes < 3 {
            return bad(
                "task.num_classes",
                self.num_classes.to_string(),
                ">= 3 so that rare, common and frequent groups can all be populated",
            );
        }
        if self.feature_dim == 0 {
            return bad("task.feature_dim", "0".into(), ">= 1");
        }
        if self.min_count == 0 {
            return bad("task.min_count", "0".into(), ">= 1");
        }
        if self.max_count < self.min_count {
            return bad(
                "task.max_count",
                self.max_count.to_string(),
                ">= task.min_count",
            );
        }
        if !(self.power.is_finite() && self.power >= 0.0) {
            return bad("task.power", self.power.to_string(), "finite and >= 0");
        }
        for (field, v) in [
            ("task.class_sep", self.class_sep),
            ("task.noise_scale", self.noise_scale),
            ("task.background_scale", self.background_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, v.to_string(), "finite and >= 0");
            }
        }
        Ok(())
    }

    /// Training count of each foreground class, head first.
    pub fn class_counts(&self) -> Vec<usize> {
        (1..=self.num_classes)
            .map(|i| {
                let raw = (self.max_count as f64 * (i as f64).powf(-self.power)).round();
                (raw as usize).clamp(self.min_count, self.max_count)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub label: Label,
    pub features: Vec<f64>,
    pub bbox: BBox,
}

/// Ground-truth generator of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGenerator {
    pub mean: Vec<f64>,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub seed: u64,
    /// `C` foreground generators followed by the background generator.
    pub generators: Vec<ClassGenerator>,
    pub counts: Vec<usize>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn groups(&self) -> GroupAssignment {
        group_classes(&self.counts)
    }

    /// Fraction of foreground training examples per class.
    pub fn class_fractions(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        self.counts
            .iter()
            .map(|&n| n as f64 / total as f64)
            .collect()
    }
}

fn draw_example(gen: &ClassGenerator, label: Label, rng: &mut StreamRng) -> Example {
    let features = gen
        .mean
        .iter()
        .map(|m| m + gen.spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Example {
        label,
        features,
        bbox: random_box(rng),
    }
}

fn random_box(rng: &mut StreamRng) -> BBox {
    let w = rng.random_range(0.05..0.5);
    let h = rng.random_range(0.05..0.5);
    let x1 = rng.random_range(0.0..1.0 - w);
    let y1 = rng.random_range(0.0..1.0 - h);
    BBox {
        x1,
        y1,
        x2: x1 + w,
        y2: y1 + h,
    }
}

pub fn make_task(spec: &TaskSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngStreams::new(seed).stream(Stream::Data);
    let d = spec.feature_dim;

    let mut generators: Vec<ClassGenerator> = (0..spec.num_classes)
        .map(|_| ClassGenerator {
            mean: (0..d)
                .map(|_| spec.class_sep * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            spread: spec.noise_scale,
        })
        .collect();
    generators.push(ClassGenerator {
        mean: vec![0.0; d],
        spread: spec.background_scale,
    });

    let counts = spec.class_counts();
    let bg = &generators[spec.num_classes];

    let mut train = Vec::with_capacity(counts.iter().sum::<usize>() + spec.background_count);
    for (i, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            train.push(draw_example(&generators[i], Label::Foreground(i), &mut rng));
        }
    }
    for _ in 0..spec.background_count {
        train.push(draw_example(bg, Label::Background, &mut rng));
    }

    let mut test = Vec::new();
    for (i, gen) in generators.iter().take(spec.num_classes).enumerate() {
        for _ in 0..spec.test_per_class {
            test.push(draw_example(gen, Label::Foreground(i), &mut rng));
        }
    }
    for _ in 0..spec.test_background {
        test.push(draw_example(bg, Label::Background, &mut rng));
    }

    Ok(Dataset {
        spec: spec.clone(),
        seed,
        generators,
        counts,
        train,
        test,
    })
}

/// Uniformly samples `batch_size` distinct training indices, with no class
/// rebalancing.
pub fn sample_batch_indices(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<Vec<usize>> {
    let n = dataset.train.len();
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidParam {
            field: "batch_size",
            value: batch_size.to_string(),
            range: "1..=dataset size",
        });
    }
    Ok(index::sample(rng, n, batch_size).into_vec())
}

pub fn sample_batch<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<Vec<&'a Example>> {
    Ok(sample_batch_indices(dataset, batch_size, rng)?
        .into_iter()
        .map(|i| &dataset.train[i])
        .collect())
}

/// One shuffled pass over `n` items, cut into batches (the last may be short).
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Rare,
    Common,
    Frequent,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Rare, Group::Common, Group::Frequent];

    pub fn of_count(n: usize) -> Group {
        match n {
            0..=10 => Group::Rare,
            11..=100 => Group::Common,
            _ => Group::Frequent,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Rare => "rare",
            Group::Common => "common",
            Group::Frequent => "frequent",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment(pub Vec<Group>);

impl GroupAssignment {
    pub fn members(&self, g: Group) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t == g)
            .map(|(i, _)| i)
    }

    pub fn get(&self, class: usize) -> Group {
        self.0[class]
    }
}

pub fn group_classes(counts: &[usize]) -> GroupAssignment {
    GroupAssignment(counts.iter().map(|&n| Group::of_count(n)).collect())
}

const DATASET_HEADER: &str = "# bacl-dataset v1";

/// Writes examples one per line: `label x1 y1 x2 y2 f_0 .. f_{d-1}`, with
/// `bg` as the background label and zero-based foreground indices.
pub fn write_examples<W: Write>(mut w: W, examples: &[Example]) -> std::io::Result<()> {
    writeln!(w, "{DATASET_HEADER}")?;
    writeln!(w, "# label x1 y1 x2 y2 features...")?;
    for ex in examples {
        match ex.label {
            Label::Foreground(i) => write!(w, "{i}")?,
            Label::Background => write!(w, "bg")?,
        }
        let b = &ex.bbox;
        write!(w, " {} {} {} {}", b.x1, b.y1, b.x2, b.y2)?;
        for v in &ex.features {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(r: R, source: &str) -> Result<Vec<Example>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut dim = None;
    for (lineno, line) in r.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if lineno == 1 && line.trim() != DATASET_HEADER {
            return Err(parse_err(lineno, format!("expected header `{DATASET_HEADER}`")));
        }
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let label = match toks.next() {
            Some("bg") => Label::Background,
            Some(t) => Label::Foreground(
                t.parse()
                    .map_err(|_| parse_err(lineno, format!("bad label `{t}`")))?,
            ),
            None => continue,
        };
        let vals = toks
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad number `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() < 5 {
            return Err(parse_err(lineno, "need 4 box coordinates and features".into()));
        }
        let d = vals.len() - 4;
        if *dim.get_or_insert(d) != d {
            return Err(parse_err(lineno, format!("feature width {d} differs")));
        }
        let bbox = BBox::new(vals[0], vals[1], vals[2], vals[3])
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        out.push(Example {
            label,
            features: vals[4..].to_vec(),
            bbox,
        });
    }
    Ok(out)
}
