use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, LabeledCase, N_CLASSES};
use crate::error::{Error, Result};

/// Hidden layer widths of the stage classifier.
pub const HIDDEN_LAYERS: [usize; 2] = [300, 100];

/// Trainable parameter count `sum_i (d_i d_{i+1} + d_{i+1})` of a dense stack.
pub fn parameter_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Dense feedforward network with ReLU hidden layers and a softmax output.
/// `weights[l]` is `d_l × d_{l+1}`, so a batch is propagated as `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-limit..limit))
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases: sizes[1..].iter().map(|&d| Array1::zeros(d)).collect(),
            seed,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let mut p = Self::init(sizes, 0)?;
        p.weights.iter_mut().for_each(|w| w.fill(0.0));
        Ok(p)
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.sizes)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn check_input(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature vector has {d} entries, model expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Output logits for a batch (rows are samples).
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = a.dot(w) + b;
            if l < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(a)
    }

    /// Class probabilities for a batch, dropout disabled.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut z = self.logits(x)?;
        for mut row in z.rows_mut() {
            softmax_inplace(
                row.as_slice_mut()
                    .expect("rows of a standard layout array are contiguous"),
            );
        }
        Ok(z)
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, step: impl Fn(&mut f64, f64)) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.zip_mut_with(g, |p, &g| step(p, g));
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.zip_mut_with(g, |p, &g| step(p, g));
        }
    }

    /// Writes a one-line JSON header (`sizes`, `seed`, plus `extra`) followed
    /// by one line of space-separated weights and one of biases per layer.
    pub fn save(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = serde_json::json!({ "sizes": self.sizes, "seed": self.seed, "extra": extra });
        writeln!(w, "{header}")?;
        for (wt, b) in self.weights.iter().zip(&self.biases) {
            write_row(&mut w, wt.iter())?;
            write_row(&mut w, b.iter())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let path = path.as_ref();
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header: ModelHeader =
            serde_json::from_str(&lines.next().ok_or_else(|| format("empty model file".into()))??)?;
        let mut params = Self::zeros(&header.sizes).map_err(|e| format(e.to_string()))?;
        params.seed = header.seed;
        for l in 0..params.weights.len() {
            for target in [params.weights[l].as_slice_mut(), params.biases[l].as_slice_mut()] {
                let target = target.expect("freshly allocated arrays are contiguous");
                let line = lines
                    .next()
                    .ok_or_else(|| format(format!("missing parameters for layer {l}")))??;
                let values = line
                    .split_ascii_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| format(format!("layer {l}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if values.len() != target.len() {
                    return Err(format(format!(
                        "layer {l}: {} values, expected {}",
                        values.len(),
                        target.len()
                    )));
                }
                target.copy_from_slice(&values);
            }
        }
        Ok((params, header.extra))
    }
}

#[derive(Deserialize)]
struct ModelHeader {
    sizes: Vec<usize>,
    seed: u64,
    #[serde(default)]
    extra: serde_json::Value,
}

fn write_row<'a>(w: &mut impl Write, values: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            write!(w, " ")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    writeln!(w)
}

pub(crate) fn softmax_inplace(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl Classifier for MlpParams {
    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, features.len()), features).expect("one row");
        Ok(self.predict_batch(x)?.into_raw_vec_and_offset().0)
    }
}

/// Mean categorical cross-entropy of a batch and its gradient. With
/// `dropout = Some((rate, rng))` an inverted dropout mask is drawn after every
/// hidden layer. Also returns the number of correct argmax predictions.
pub fn loss_and_gradient(
    params: &MlpParams,
    x: ArrayView2<f64>,
    labels: &[usize],
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(f64, Gradients, usize)> {
    params.check_input(x.ncols())?;
    let batch = x.nrows();
    if batch == 0 || labels.len() != batch {
        return Err(Error::invalid("batch and label counts differ or are zero"));
    }
    let n_out = *params.sizes.last().expect("at least two layers");
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_out) {
        return Err(Error::invalid(format!("label {bad} out of range for {n_out} outputs")));
    }
    let last = params.weights.len() - 1;
    let mut rng_rate = dropout;

    // activations[l] feeds layer l; masks[l] is the derivative of
    // activations[l + 1] with respect to its pre-activation
    let mut activations = vec![x.to_owned()];
    let mut masks: Vec<Array2<f64>> = Vec::with_capacity(last);
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = activations[l].dot(w) + b;
        if l < last {
            let mut mask = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            if let Some((rate, rng)) = rng_rate.as_mut() {
                let keep = 1.0 - *rate;
                mask.mapv_inplace(|m| if rng.random::<f64>() < *rate { 0.0 } else { m / keep });
            }
            z.zip_mut_with(&mask, |v, &m| *v = if m == 0.0 { 0.0 } else { *v * m });
            masks.push(mask);
        }
        activations.push(z);
    }

    let mut delta = activations.pop().expect("output layer");
    let mut loss = 0.0;
    let mut correct = 0;
    for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
        let r = row.as_slice_mut().expect("contiguous row");
        let argmax = r
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("nonempty output");
        correct += usize::from(argmax == y);
        let max = r[argmax];
        let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - r[y];
        for v in r.iter_mut() {
            *v = (*v - lse).exp() / batch as f64;
        }
        r[y] -= 1.0 / batch as f64;
    }
    loss /= batch as f64;

    let mut gw = Vec::with_capacity(params.weights.len());
    let mut gb = Vec::with_capacity(params.weights.len());
    for l in (0..=last).rev() {
        gw.push(activations[l].t().dot(&delta));
        gb.push(delta.sum_axis(Axis(0)));
        if l > 0 {
            let mut back = delta.dot(&params.weights[l].t());
            back *= &masks[l - 1];
            delta = back;
        }
    }
    gw.reverse();
    gb.reverse();
    Ok((
        loss,
        Gradients {
            weights: gw,
            biases: gb,
        },
        correct,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            epsilon: 1e-7,
            dropout: 0.2,
            hidden: HIDDEN_LAYERS.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return Err(Error::invalid("learning rate and epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("rmsprop decay and dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-epoch training curves; loss and accuracy are averaged over the
/// epoch's dropout-perturbed minibatches, validation curves use clean passes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurves {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

pub(crate) fn design_matrix(cases: &[LabeledCase]) -> Result<(Array2<f64>, Vec<usize>)> {
    let d = cases.first().ok_or_else(|| Error::invalid("no cases"))?.features.len();
    let mut x = Array2::zeros((cases.len(), d));
    for (mut row, c) in x.rows_mut().into_iter().zip(cases) {
        if c.features.len() != d {
            return Err(Error::invalid(format!(
                "case `{}` has {} features, expected {d}",
                c.subject_id,
                c.features.len()
            )));
        }
        row.assign(&ndarray::ArrayView1::from(&c.features[..]));
    }
    Ok((x, cases.iter().map(|c| c.stage as usize).collect()))
}

pub(crate) fn require_two_classes(labels: &[usize]) -> Result<()> {
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::invalid("training set needs at least two classes"));
    }
    Ok(())
}

/// RMSprop minibatch training. Deterministic for a fixed config: the seed
/// drives initialization, shuffling and dropout masks.
pub fn mlp_train(
    train: &[LabeledCase],
    cfg: &TrainConfig,
    validation: Option<&[LabeledCase]>,
) -> Result<(MlpParams, TrainCurves)> {
    cfg.validate()?;
    let (x, y) = design_matrix(train)?;
    require_two_classes(&y)?;
    let val = validation.filter(|v| !v.is_empty()).map(design_matrix).transpose()?;

    let mut sizes = vec![x.ncols()];
    sizes.extend(&cfg.hidden);
    sizes.push(N_CLASSES);
    let mut params = MlpParams::init(&sizes, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut sq = Gradients {
        weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
        biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
    };
    let (rho, lr, eps) = (cfg.rmsprop_decay, cfg.learning_rate, cfg.epsilon);

    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut curves = TrainCurves::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut rng));
            let (loss, grads, ok) = loss_and_gradient(&params, xb.view(), &yb, dropout)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            for (v, g) in sq.weights.iter_mut().zip(&grads.weights) {
                v.zip_mut_with(g, |v, &g| *v = rho * *v + (1.0 - rho) * g * g);
            }
            for (v, g) in sq.biases.iter_mut().zip(&grads.biases) {
                v.zip_mut_with(g, |v, &g| *v = rho * *v + (1.0 - rho) * g * g);
            }
            for l in 0..params.weights.len() {
                ndarray::Zip::from(&mut params.weights[l])
                    .and(&grads.weights[l])
                    .and(&sq.weights[l])
                    .for_each(|p, &g, &v| *p -= lr * g / (v.sqrt() + eps));
                ndarray::Zip::from(&mut params.biases[l])
                    .and(&grads.biases[l])
                    .and(&sq.biases[l])
                    .for_each(|p, &g, &v| *p -= lr * g / (v.sqrt() + eps));
            }
        }
        curves.loss.push(loss_sum / x.nrows() as f64);
        curves.accuracy.push(correct as f64 / x.nrows() as f64);
        if let Some((vx, vy)) = &val {
            let (loss, _, ok) = loss_and_gradient(&params, vx.view(), vy, None)?;
            curves.val_loss.push(loss);
            curves.val_accuracy.push(ok as f64 / vy.len() as f64);
        }
    }
    Ok((params, curves))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_of_default_architecture() {
        assert_eq!(parameter_count(&[144, 300, 100, 5]), 74_105);
        assert_eq!(
            MlpParams::init(&[144, 300, 100, 5], 0).unwrap().parameter_count(),
            74_105
        );
        assert_eq!(
            parameter_count(&[36, 300, 100, 5]),
            36 * 300 + 300 + 300 * 100 + 100 + 100 * 5 + 5
        );
    }

    #[test]
    fn zero_weights_give_uniform() {
        let p = MlpParams::zeros(&[4, 3, 5]).unwrap();
        let prob = p.predict_proba(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(prob.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(p.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let params = MlpParams::init(&[6, 7, 4, 5], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
        let labels = [0, 3, 1, 4, 2];
        let (_, grads, _) = loss_and_gradient(&params, x.view(), &labels, None).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for l in 0..params.weights.len() {
            for idx in 0..params.weights[l].len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.weights[l].as_slice_mut().unwrap()[idx] += h;
                minus.weights[l].as_slice_mut().unwrap()[idx] -= h;
                let lp = loss_and_gradient(&plus, x.view(), &labels, None).unwrap().0;
                let lm = loss_and_gradient(&minus, x.view(), &labels, None).unwrap().0;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grads.weights[l].as_slice().unwrap()[idx];
                worst = worst.max((numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn save_load_round_trip() {
        let p = MlpParams::init(&[3, 4, 5], 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        p.save(&path, serde_json::json!({"kind": "mlp"})).unwrap();
        let (q, extra) = MlpParams::load(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(extra["kind"], "mlp");
    }
}
