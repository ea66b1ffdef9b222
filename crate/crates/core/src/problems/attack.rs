//! Black-box adversarial perturbation on an `ℓ₂` sphere.
//!
//! The victim is a frozen linear softmax classifier shipped as a CSV asset.
//! A perturbation `ε·δ` with `‖δ‖ = 1` is shared by every base input; the
//! per-input loss is the margin loss
//!
//! ```text
//! c · max(Z_t(b + εδ) − max_{k≠t} Z_k(b + εδ) + κ, 0) + ‖εδ‖²
//! ```
//!
//! which reaches its floor `ε²` once the input is misclassified with margin
//! at least `κ`.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifold::ManifoldKind;

use super::io::parse_matrix_csv;
use super::Problem;

const VICTIM_CSV: &str = include_str!("../../assets/victim.csv");
const VICTIM_SHA256: &str = "02bcff729ee201f57787375568a149a86daf1e73201c5254b5caebe10a066501";
const INPUTS_CSV: &str = include_str!("../../assets/victim_inputs.csv");
const INPUTS_SHA256: &str = "d9f5482c3d509328f6106e6524ebd971afc9ea8b58ebee74142afe37979941b7";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn verify_asset(name: &str, text: &str, expected: &str) -> Result<()> {
    let got = sha256_hex(text.as_bytes());
    if got != expected {
        return Err(Error::Asset {
            name: name.into(),
            msg: format!("content hash {got} does not match {expected}"),
        });
    }
    Ok(())
}

/// Linear softmax model `Z(x) = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct VictimClassifier {
    weights: Matrix,
    bias: Vec<f64>,
}

const VICTIM_HEADER: &str = "# victim-linear-softmax";

impl VictimClassifier {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() || weights.rows() < 2 {
            return Err(Error::Asset {
                name: "victim".into(),
                msg: format!(
                    "need >= 2 classes and one bias per class ({} weights rows, {} biases)",
                    weights.rows(),
                    bias.len()
                ),
            });
        }
        Ok(Self { weights, bias })
    }

    /// The checked-in victim, verified against its content hash.
    pub fn builtin() -> Result<Self> {
        verify_asset("victim.csv", VICTIM_CSV, VICTIM_SHA256)?;
        Self::from_csv_str(VICTIM_CSV)
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn features(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Parses the asset format: a header line
    /// `# victim-linear-softmax classes=C features=D` followed by `C` rows of
    /// `D` weights and one bias.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Asset {
            name: "victim".into(),
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let rest = header
            .strip_prefix(VICTIM_HEADER)
            .ok_or_else(|| bad(format!("missing header {VICTIM_HEADER:?}")))?;
        let mut classes = None;
        let mut features = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("classes", v)) => classes = v.parse::<usize>().ok(),
                Some(("features", v)) => features = v.parse::<usize>().ok(),
                _ => return Err(bad(format!("unknown header field {kv:?}"))),
            }
        }
        let (Some(c), Some(d)) = (classes, features) else {
            return Err(bad("header needs classes= and features=".into()));
        };
        let body: String = lines.collect::<Vec<_>>().join("\n");
        let table = parse_matrix_csv(&body, "victim.csv".as_ref())?;
        if table.shape() != (c, d + 1) {
            return Err(bad(format!(
                "table is {:?}, header promises {c}x{}",
                table.shape(),
                d + 1
            )));
        }
        let weights = Matrix::from_fn(c, d, |i, j| table[(i, j)]);
        let bias = (0..c).map(|i| table[(i, d)]).collect();
        Self::new(weights, bias)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!(
            "{VICTIM_HEADER} classes={} features={}\n",
            self.classes(),
            self.features()
        );
        for i in 0..self.classes() {
            let row: Vec<String> = self
                .weights
                .row(i)
                .iter()
                .chain(std::iter::once(&self.bias[i]))
                .map(|v| format!("{v:e}"))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        (0..self.classes())
            .map(|k| {
                self.weights
                    .row(k)
                    .iter()
                    .zip(input)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + self.bias[k]
            })
            .collect()
    }

    pub fn predict(&self, input: &[f64]) -> usize {
        argmax(&self.logits(input))
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Base inputs and their labels from the checked-in asset.
pub fn builtin_inputs() -> Result<(Matrix, Vec<usize>)> {
    verify_asset("victim_inputs.csv", INPUTS_CSV, INPUTS_SHA256)?;
    inputs_from_csv_str(INPUTS_CSV)
}

/// Rows `label,f_0,…,f_{d−1}` with an optional header line.
pub fn inputs_from_csv_str(text: &str) -> Result<(Matrix, Vec<usize>)> {
    let table = parse_matrix_csv(text, "inputs.csv".as_ref())?;
    let (n, w) = table.shape();
    if w < 2 {
        return Err(Error::Asset {
            name: "inputs".into(),
            msg: "need a label column and at least one feature".into(),
        });
    }
    let labels = (0..n).map(|i| table[(i, 0)] as usize).collect();
    let inputs = Matrix::from_fn(n, w - 1, |i, j| table[(i, j + 1)]);
    Ok((inputs, labels))
}

#[derive(Clone, Debug)]
pub struct SphereAttackProblem {
    victim: VictimClassifier,
    inputs: Matrix,
    labels: Vec<usize>,
    epsilon: f64,
    c: f64,
    kappa: f64,
    manifold: ManifoldKind,
}

impl SphereAttackProblem {
    pub fn new(
        victim: VictimClassifier,
        inputs: Matrix,
        labels: Vec<usize>,
        epsilon: f64,
        c: f64,
        kappa: f64,
    ) -> Result<Self> {
        if inputs.cols() != victim.features() {
            return Err(Error::DimensionMismatch {
                expected: (inputs.rows(), victim.features()),
                found: inputs.shape(),
            });
        }
        if labels.len() != inputs.rows() || labels.iter().any(|&l| l >= victim.classes()) {
            return Err(Error::InvalidConfig(
                "labels do not match inputs or classes".into(),
            ));
        }
        if !(epsilon > 0.0 && c > 0.0 && kappa >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need epsilon > 0, c > 0, kappa >= 0 (got {epsilon}, {c}, {kappa})"
            )));
        }
        let manifold = ManifoldKind::sphere(victim.features(), 1)?;
        Ok(Self {
            victim,
            inputs,
            labels,
            epsilon,
            c,
            kappa,
            manifold,
        })
    }

    /// Built-in victim and inputs.
    pub fn builtin(epsilon: f64, c: f64, kappa: f64) -> Result<Self> {
        let (inputs, labels) = builtin_inputs()?;
        Self::new(
            VictimClassifier::builtin()?,
            inputs,
            labels,
            epsilon,
            c,
            kappa,
        )
    }

    pub fn victim(&self) -> &VictimClassifier {
        &self.victim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn input(&self, j: usize) -> &[f64] {
        self.inputs.row(j)
    }

    fn perturbed(&self, delta: &Matrix, j: usize) -> Vec<f64> {
        self.inputs
            .row(j)
            .iter()
            .zip(delta.as_slice())
            .map(|(b, d)| b + self.epsilon * d)
            .collect()
    }

    /// `(Z_t − max_{k≠t} Z_k, argmax_{k≠t} Z_k)` at the perturbed input.
    fn margin(&self, delta: &Matrix, j: usize) -> (f64, usize) {
        let z = self.victim.logits(&self.perturbed(delta, j));
        let t = self.labels[j];
        let (k, zk) = z.iter().enumerate().filter(|&(k, _)| k != t).fold(
            (usize::MAX, f64::NEG_INFINITY),
            |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
        );
        (z[t] - zk, k)
    }

    /// Loss of the unperturbed input (margin term only).
    pub fn clean_loss(&self, j: usize) -> f64 {
        let zero = Matrix::zeros(self.victim.features(), 1);
        self.c * (self.margin(&zero, j).0 + self.kappa).max(0.0)
    }

    /// Inputs whose predicted label differs from the true label under `δ`.
    pub fn flipped(&self, delta: &Matrix) -> usize {
        (0..self.inputs.rows())
            .filter(|&j| self.victim.predict(&self.perturbed(delta, j)) != self.labels[j])
            .count()
    }
}

impl Problem for SphereAttackProblem {
    fn name(&self) -> &str {
        "attack"
    }

    fn manifold(&self) -> &ManifoldKind {
        &self.manifold
    }

    fn n_samples(&self) -> usize {
        self.inputs.rows()
    }

    fn term(&self, delta: &Matrix, j: usize) -> f64 {
        let (m, _) = self.margin(delta, j);
        self.c * (m + self.kappa).max(0.0) + self.epsilon * self.epsilon * delta.norm_sq()
    }

    fn add_term_grad(&self, delta: &Matrix, j: usize, weight: f64, out: &mut Matrix) {
        let (m, k) = self.margin(delta, j);
        let t = self.labels[j];
        let eps = self.epsilon;
        if m + self.kappa > 0.0 {
            let wt = self.victim.weights.row(t);
            let wk = self.victim.weights.row(k);
            for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
                *o += weight * self.c * eps * (wt[i] - wk[i]);
            }
        }
        out.axpy(weight * 2.0 * eps * eps, delta);
    }

    fn partition_keys(&self) -> Option<Vec<f64>> {
        Some((0..self.n_samples()).map(|j| self.clean_loss(j)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::testutil::fd_gradient_error;
    use crate::rng::{sample_unit_sphere, RngStream};

    fn toy() -> SphereAttackProblem {
        let w = Matrix::from_rows(&[
            &[1.0, 0.5, 0.0, 0.0],
            &[-0.5, 1.0, 0.0, 0.0],
            &[0.0, -1.0, 0.0, 0.0],
        ]);
        let victim = VictimClassifier::new(w, vec![0.1, 0.0, -0.1]).unwrap();
        let inputs = Matrix::from_rows(&[&[1.0, 0.2, 0.3, -0.1], &[0.8, -0.1, 0.0, 0.5]]);
        SphereAttackProblem::new(victim, inputs, vec![0, 0], 0.7, 1.0, 0.05).unwrap()
    }

    #[test]
    fn confident_misclassification_hits_the_floor() {
        let prob = toy();
        // push hard toward class 1 with ε large enough
        let strong = SphereAttackProblem::new(
            prob.victim.clone(),
            prob.inputs.clone(),
            prob.labels.clone(),
            5.0,
            1.0,
            0.05,
        )
        .unwrap();
        let dir = Matrix::column(&[-1.0, 0.5, 0.0, 0.0]);
        let delta = dir.scale(1.0 / dir.norm());
        for j in 0..2 {
            assert!(strong.margin(&delta, j).0 < -0.05);
            assert!((strong.term(&delta, j) - 25.0).abs() < 1e-12);
        }
        assert_eq!(strong.flipped(&delta), 2);
    }

    #[test]
    fn null_direction_leaves_the_margin_unchanged() {
        let prob = toy();
        // e3 is orthogonal to every weight row
        let delta = Matrix::column(&[0.0, 0.0, 1.0, 0.0]);
        for j in 0..2 {
            let want = prob.clean_loss(j) + 0.49;
            assert!((prob.term(&delta, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_recomputation() {
        let prob = toy();
        let delta = sample_unit_sphere(&RngStream::new(3), 4, 1);
        let w = prob.victim.weights();
        let bias = [0.1, 0.0, -0.1];
        for j in 0..2 {
            let mut z = [0.0; 3];
            for k in 0..3 {
                z[k] = bias[k];
                for i in 0..4 {
                    z[k] += w[(k, i)] * (prob.inputs[(j, i)] + 0.7 * delta[(i, 0)]);
                }
            }
            let other = z[1].max(z[2]);
            let want = (z[0] - other + 0.05).max(0.0) + 0.49 * delta.norm_sq();
            assert!((prob.term(&delta, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kinks() {
        let prob = toy();
        assert!(fd_gradient_error(&prob, 20, 4, 0.3) < 1e-4);
    }

    #[test]
    fn victim_csv_round_trip() {
        let prob = toy();
        let text = prob.victim.to_csv_string();
        assert_eq!(VictimClassifier::from_csv_str(&text).unwrap(), prob.victim);
        assert!(VictimClassifier::from_csv_str("1,2\n").is_err());
        assert!(VictimClassifier::from_csv_str(
            "# victim-linear-softmax classes=2 features=3\n1,2,3,4\n"
        )
        .is_err());
    }

    #[test]
    fn builtin_assets_are_consistent() {
        let victim = VictimClassifier::builtin().unwrap();
        let (inputs, labels) = builtin_inputs().unwrap();
        assert_eq!(inputs.rows(), 25);
        assert_eq!(inputs.cols(), victim.features());
        for j in 0..25 {
            assert_eq!(
                victim.predict(inputs.row(j)),
                labels[j],
                "input {j} misclassified"
            );
        }
        assert!(verify_asset("x", "tampered", VICTIM_SHA256).is_err());
    }
}
