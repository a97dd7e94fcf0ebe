// The three losses on one logit vector, with their analytic gradients
// checked against central differences.
//
// Run with `cargo run --example loss_gradients`.

use bacl::losses::{bce_objectness, fcbl, inference_probs, pairwise_margin, softmax_ce, weight_terms, LossResult, MarginRow};
use bacl::{Label, Result};

fn rel_error(z: &[f64], r: &LossResult, f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-5;
    let mut num = Vec::with_capacity(z.len());
    for k in 0..z.len() {
        let mut up = z.to_vec();
        let mut dn = z.to_vec();
        up[k] += h;
        dn[k] -= h;
        num.push((f(&up) - f(&dn)) / (2.0 * h));
    }
    let diff: f64 = num.iter().zip(&r.grad_z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

pub fn run_example() -> Result<Vec<(String, f64, f64)>> {
    // three foreground classes and the objectness channel
    let z = vec![1.2, -0.3, 0.4, -1.0];
    let gt = Label::Foreground(1);
    let mut rows = Vec::new();

    let ce = softmax_ce(&z, 1)?;
    let err = rel_error(&z, &ce, |z| softmax_ce(z, 1).unwrap().loss);
    rows.push(("softmax_ce".to_string(), ce.loss, err));

    let bce = bce_objectness(&z, gt)?;
    let err = rel_error(&z, &bce, |z| bce_objectness(z, gt).unwrap().loss);
    rows.push(("bce_objectness".to_string(), bce.loss, err));

    // class 1 is rare (indicator 0.1), classes 0 and 2 are well served
    let l = [0.9, 0.1, 0.6];
    let mut margins = MarginRow::zeros(3);
    for j in [0, 2] {
        margins.0[j] = pairwise_margin(l[1], l[j], 0.85)?;
    }
    let weights = weight_terms(&inference_probs(&z), 1, 0.7);
    let fb = fcbl(&z, gt, &margins, &weights)?;
    let err = rel_error(&z, &fb, |z| fcbl(z, gt, &margins, &weights).unwrap().loss);
    rows.push(("fcbl".to_string(), fb.loss, err));

    Ok(rows)
}

fn main() -> Result<()> {
    println!("{:<16} {:>10} {:>14}", "loss", "value", "grad rel.err");
    for (name, loss, err) in run_example()? {
        println!("{name:<16} {loss:>10.6} {err:>14.3e}");
    }
    Ok(())
}
