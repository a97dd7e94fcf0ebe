// Streaming long-term indicators and the pairwise margins they induce.
//
// A biased scorer favours class 0; after a few hundred observations the
// confusion row of class 2 shows where its mass goes. Class 0 then gets a
// negative margin against class 2 (its samples suppress class 2 less), and
// class 2 a positive one against class 0.

use bacl::indicators::LongTermIndicators;
use bacl::rng::{RngStreams, Stream};
use bacl::{IndicatorKind, Result};
use rand::Rng;

pub struct Outcome {
    pub confusion_row: Vec<f64>,
    pub head_margins: Vec<f64>,
    pub tail_margins: Vec<f64>,
    pub tpr: Vec<f64>,
}

pub fn run_example() -> Result<Outcome> {
    let c = 3;
    let counts = [500.0, 50.0, 5.0];
    let total: f64 = counts.iter().sum();
    let fractions: Vec<f64> = counts.iter().map(|n| n / total).collect();
    let mut ind = LongTermIndicators::new(c, &fractions, &counts)?;

    let mut rng = RngStreams::new(7).stream(Stream::Data);
    for _ in 0..300 {
        let label = rng.random_range(0..c);
        let mut z: Vec<f64> = (0..=c).map(|_| rng.random_range(-1.0..1.0)).collect();
        z[label] += 1.0;
        z[0] += 1.2; // head-class bias
        ind.observe(&[z], &[label], 0.9)?;
    }
    let snap = ind.snapshot();
    let kind = IndicatorKind::ConfusionSoft;
    let row = snap.confusion(kind).expect("confusion kind")[2 * c..3 * c].to_vec();
    Ok(Outcome {
        confusion_row: row,
        head_margins: snap.margin_row(kind, 0, 0.85)?.0,
        tail_margins: snap.margin_row(kind, 2, 0.85)?.0,
        tpr: snap.tpr.clone(),
    })
}

fn main() -> Result<()> {
    let o = run_example()?;
    println!("soft confusion row of class 2: {:?}", o.confusion_row);
    println!("margins for class 0 vs j:      {:?}", o.head_margins);
    println!("margins for class 2 vs j:      {:?}", o.tail_margins);
    println!("online TPR:                    {:?}", o.tpr);
    Ok(())
}
