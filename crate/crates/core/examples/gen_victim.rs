//! Regenerates the frozen victim classifier and its base inputs.
//!
//! Trains a linear softmax model on three Gaussian blobs in 16 dimensions by
//! full-batch gradient descent, then keeps 25 correctly classified class-0
//! test points. Run with `cargo run -p prozo-core --example gen_victim [dir]`
//! and update the hashes in `problems/attack.rs` with the printed values.

use std::path::PathBuf;

use prozo::problems::attack::sha256_hex;
use prozo::rng::sample_gaussian;
use prozo::{Matrix, RngStream, VictimClassifier};

const CLASSES: usize = 3;
const FEATURES: usize = 16;
const PER_CLASS: usize = 200;

fn blobs(means: &Matrix, stream: &RngStream, per_class: usize) -> (Matrix, Vec<usize>) {
    let noise = sample_gaussian(stream, CLASSES * per_class, FEATURES);
    let labels: Vec<usize> = (0..CLASSES * per_class).map(|i| i / per_class).collect();
    let x = Matrix::from_fn(CLASSES * per_class, FEATURES, |i, j| {
        means[(labels[i], j)] + noise[(i, j)]
    });
    (x, labels)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets"));
    let root = RngStream::new(20240601);
    let means = sample_gaussian(&root.spawn(0), CLASSES, FEATURES).scale(0.8);
    let (x, y) = blobs(&means, &root.spawn(1), PER_CLASS);

    let n = x.rows();
    let mut w = Matrix::zeros(CLASSES, FEATURES);
    let mut b = vec![0.0; CLASSES];
    for _ in 0..2000 {
        let mut gw = Matrix::zeros(CLASSES, FEATURES);
        let mut gb = vec![0.0; CLASSES];
        for i in 0..n {
            let model = VictimClassifier::new(w.clone(), b.clone()).unwrap();
            let p = softmax(&model.logits(x.row(i)));
            for k in 0..CLASSES {
                let d = p[k] - f64::from(u8::from(y[i] == k));
                gb[k] += d / n as f64;
                for j in 0..FEATURES {
                    gw[(k, j)] += d * x[(i, j)] / n as f64;
                }
            }
        }
        gw.axpy(1e-3, &w);
        w.axpy(-0.5, &gw);
        for k in 0..CLASSES {
            b[k] -= 0.5 * gb[k];
        }
    }
    // round so the asset text is short and exactly reproducible
    let round = |v: f64| (v * 1e6).round() / 1e6;
    let w = Matrix::from_fn(CLASSES, FEATURES, |i, j| round(w[(i, j)]));
    let b: Vec<f64> = b.into_iter().map(round).collect();
    let victim = VictimClassifier::new(w, b).unwrap();
    let train_acc = (0..n).filter(|&i| victim.predict(x.row(i)) == y[i]).count() as f64 / n as f64;

    let (tx, ty) = blobs(&means, &root.spawn(2), 100);
    let mut inputs = String::from("label");
    for j in 0..FEATURES {
        inputs.push_str(&format!(",f{j}"));
    }
    inputs.push('\n');
    let mut kept = 0;
    for i in 0..tx.rows() {
        if ty[i] != 0 || victim.predict(tx.row(i)) != 0 {
            continue;
        }
        let row: Vec<String> = tx.row(i).iter().map(|v| format!("{}", round(*v))).collect();
        inputs.push_str(&format!("0,{}\n", row.join(",")));
        kept += 1;
        if kept == 25 {
            break;
        }
    }
    assert_eq!(kept, 25, "not enough correctly classified inputs");

    let victim_csv = victim.to_csv_string();
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("victim.csv"), &victim_csv).unwrap();
    std::fs::write(dir.join("victim_inputs.csv"), &inputs).unwrap();
    println!("train accuracy {train_acc:.3}");
    println!("victim.csv        {}", sha256_hex(victim_csv.as_bytes()));
    println!("victim_inputs.csv {}", sha256_hex(inputs.as_bytes()));
}
