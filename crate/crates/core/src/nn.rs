//! Small fully connected network with hand-written backpropagation, and the
//! synthetic datasets used for the regression and classification tasks.
//!
//! Parameters live in one flat [`ParamVector`]. For each layer the weights come
//! first, row-major as `out × in`, followed by the `out` biases.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamVector, RngStream};

/// Floor on the standard deviation used to standardise targets.
pub const MIN_TARGET_STD: f64 = 1e-12;

/// Fraction of generated samples that go to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Gelu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_derivative(x),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean over the batch of the summed squared residuals.
    L2,
    /// Mean softmax cross-entropy over integer class labels.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_widths: Vec<usize>,
    hidden_activation: Activation,
    loss: LossKind,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, hidden_activation: Activation, loss: LossKind) -> Result<Self> {
        if layer_widths.len() < 3 {
            return Err(Error::invalid(
                "layer_widths",
                "need input, at least one hidden layer, and output",
            ));
        }
        if layer_widths.contains(&0) {
            return Err(Error::invalid("layer_widths", "widths must be >= 1"));
        }
        if loss == LossKind::CrossEntropy && *layer_widths.last().unwrap() < 2 {
            return Err(Error::invalid(
                "layer_widths",
                "classification needs at least two output logits",
            ));
        }
        Ok(Self {
            layer_widths,
            hidden_activation,
            loss,
        })
    }

    pub fn regression(layer_widths: Vec<usize>) -> Result<Self> {
        Self::new(layer_widths, Activation::Gelu, LossKind::L2)
    }

    pub fn classification(layer_widths: Vec<usize>) -> Result<Self> {
        Self::new(layer_widths, Activation::Gelu, LossKind::CrossEntropy)
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_widths.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|(i, o)| o * i + o).sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamVector {
        let mut out = Vec::with_capacity(self.num_params());
        for (fan_in, fan_out) in self.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            out.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            out.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector::from_raw(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Row-major `batch × output_dim` values.
    Values { data: Vec<f64>, dim: usize },
    Classes { labels: Vec<usize>, num_classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    input_dim: usize,
    targets: Targets,
}

impl Batch {
    pub fn regression(inputs: Vec<f64>, input_dim: usize, targets: Vec<f64>, output_dim: usize) -> Result<Self> {
        Self::build(
            inputs,
            input_dim,
            Targets::Values {
                data: targets,
                dim: output_dim,
            },
        )
    }

    pub fn classification(inputs: Vec<f64>, input_dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::build(inputs, input_dim, Targets::Classes { labels, num_classes })
    }

    fn build(inputs: Vec<f64>, input_dim: usize, targets: Targets) -> Result<Self> {
        if input_dim == 0 || inputs.is_empty() || !inputs.len().is_multiple_of(input_dim) {
            return Err(Error::invalid("inputs", "shape is not batch × input_dim with batch >= 1"));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch inputs"));
        }
        let n = inputs.len() / input_dim;
        match &targets {
            Targets::Values { data, dim } => {
                Error::check_len(n * dim, data.len())?;
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("batch targets"));
                }
            }
            Targets::Classes { labels, num_classes } => {
                Error::check_len(n, labels.len())?;
                if labels.iter().any(|&l| l >= *num_classes) {
                    return Err(Error::invalid("targets", "class label out of range"));
                }
            }
        }
        Ok(Self {
            inputs,
            input_dim,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Rows picked by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let d = self.input_dim;
        let inputs = indices
            .iter()
            .flat_map(|&i| self.inputs[i * d..(i + 1) * d].iter().copied())
            .collect();
        let targets = match &self.targets {
            Targets::Values { data, dim } => Targets::Values {
                data: indices
                    .iter()
                    .flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied())
                    .collect(),
                dim: *dim,
            },
            Targets::Classes { labels, num_classes } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        };
        Batch {
            inputs,
            input_dim: d,
            targets,
        }
    }

    fn fingerprint(&self, params: &ParamVector) -> u64 {
        let mut h = DefaultHasher::new();
        params.iter().for_each(|v| v.to_bits().hash(&mut h));
        self.inputs.iter().for_each(|v| v.to_bits().hash(&mut h));
        match &self.targets {
            Targets::Values { data, .. } => data.iter().for_each(|v| v.to_bits().hash(&mut h)),
            Targets::Classes { labels, .. } => labels.hash(&mut h),
        }
        h.finish()
    }
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    /// Pre-activations of each layer, `batch × width`.
    pre: Vec<Vec<f64>>,
    /// Inputs to each layer (the batch inputs, then each hidden activation).
    post: Vec<Vec<f64>>,
    /// Network outputs, or softmax probabilities for classification.
    outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }
}

fn check_shapes(spec: &MlpSpec, params: &ParamVector, batch: &Batch) -> Result<()> {
    Error::check_len(spec.num_params(), params.len())?;
    Error::check_len(spec.input_dim(), batch.input_dim)?;
    match (&batch.targets, spec.loss) {
        (Targets::Values { dim, .. }, LossKind::L2) => Error::check_len(spec.output_dim(), *dim),
        (Targets::Classes { num_classes, .. }, LossKind::CrossEntropy) => {
            Error::check_len(spec.output_dim(), *num_classes)
        }
        _ => Err(Error::Usage("batch targets do not match the network's loss".into())),
    }
}

/// Mean batch loss and the activations needed to differentiate it.
pub fn forward(spec: &MlpSpec, params: &ParamVector, batch: &Batch) -> Result<(f64, ForwardCache)> {
    check_shapes(spec, params, batch)?;
    let n = batch.len();
    let p = params.as_slice();
    let num_layers = spec.layer_widths.len() - 1;

    let mut pre = Vec::with_capacity(num_layers);
    let mut post = vec![batch.inputs.clone()];
    let mut offset = 0;
    for (layer, (fan_in, fan_out)) in spec.layers().enumerate() {
        let w = &p[offset..offset + fan_in * fan_out];
        let b = &p[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;

        let input = post.last().unwrap();
        let mut z = vec![0.0; n * fan_out];
        for r in 0..n {
            let x = &input[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                z[r * fan_out + o] = b[o] + row.iter().zip(x).fold(0.0, |acc, (a, c)| acc + a * c);
            }
        }
        if layer + 1 < num_layers {
            post.push(z.iter().map(|&v| spec.hidden_activation.apply(v)).collect());
        }
        pre.push(z);
    }

    let logits = pre.last().unwrap();
    let k = spec.output_dim();
    let (loss, outputs) = match &batch.targets {
        Targets::Values { data, .. } => {
            let sse = logits
                .iter()
                .zip(data)
                .fold(0.0, |acc, (y, t)| acc + (y - t) * (y - t));
            (sse / n as f64, logits.clone())
        }
        Targets::Classes { labels, .. } => {
            let mut probs = vec![0.0; n * k];
            let mut total = 0.0;
            for r in 0..n {
                let row = &logits[r * k..(r + 1) * k];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_sum = sum.ln() + max;
                total += log_sum - row[labels[r]];
                for (c, v) in row.iter().enumerate() {
                    probs[r * k + c] = (v - log_sum).exp();
                }
            }
            (total / n as f64, probs)
        }
    };

    Ok((
        loss,
        ForwardCache {
            fingerprint: batch.fingerprint(params),
            pre,
            post,
            outputs,
        },
    ))
}

/// Gradient of the mean batch loss with respect to every parameter.
pub fn backward(spec: &MlpSpec, params: &ParamVector, batch: &Batch, cache: &ForwardCache) -> Result<ParamVector> {
    check_shapes(spec, params, batch)?;
    if cache.fingerprint != batch.fingerprint(params) {
        return Err(Error::Usage(
            "forward cache was computed for different parameters or batch".into(),
        ));
    }
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let k = spec.output_dim();
    let p = params.as_slice();

    // dL/dz for the output layer
    let mut delta: Vec<f64> = match &batch.targets {
        Targets::Values { data, .. } => cache
            .outputs
            .iter()
            .zip(data)
            .map(|(y, t)| 2.0 * (y - t) * scale)
            .collect(),
        Targets::Classes { labels, .. } => {
            let mut d = cache.outputs.clone();
            for (r, &l) in labels.iter().enumerate() {
                d[r * k + l] -= 1.0;
            }
            d.iter_mut().for_each(|v| *v *= scale);
            d
        }
    };

    let layers: Vec<(usize, usize)> = spec.layers().collect();
    let mut offsets = Vec::with_capacity(layers.len());
    let mut acc = 0;
    for &(fan_in, fan_out) in &layers {
        offsets.push(acc);
        acc += fan_in * fan_out + fan_out;
    }

    let mut grad = vec![0.0; spec.num_params()];
    for (layer, &(fan_in, fan_out)) in layers.iter().enumerate().rev() {
        let off = offsets[layer];
        let input = &cache.post[layer];
        {
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for r in 0..n {
                let x = &input[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let d = delta[r * fan_out + o];
                    gb[o] += d;
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
        }
        if layer == 0 {
            break;
        }
        let w = &p[off..off + fan_in * fan_out];
        let z_prev = &cache.pre[layer - 1];
        let mut next = vec![0.0; n * fan_in];
        for r in 0..n {
            let out_row = &mut next[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let d = delta[r * fan_out + o];
                for (acc, wi) in out_row.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *acc += wi * d;
                }
            }
            for (i, v) in out_row.iter_mut().enumerate() {
                *v *= spec.hidden_activation.derivative(z_prev[r * fan_in + i]);
            }
        }
        delta = next;
    }
    Ok(ParamVector::from_raw(grad))
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(spec: &MlpSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    let Targets::Classes { labels, .. } = &batch.targets else {
        return Err(Error::Usage("accuracy needs a classification batch".into()));
    };
    let (_, cache) = forward(spec, params, batch)?;
    let k = spec.output_dim();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| {
            let row = &cache.outputs[r * k..(r + 1) * k];
            let best = (0..k)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            best == l
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Random polynomial in four variables with every monomial of total degree
/// up to `degree`, coefficients uniform on [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTask {
    pub num_vars: usize,
    pub degree: u32,
    /// `(exponents, coefficient)` in graded lexicographic order.
    pub terms: Vec<([u32; 4], f64)>,
}

impl PolyTask {
    pub const NUM_VARS: usize = 4;

    pub fn random(degree: u32, rng: &mut RngStream) -> Self {
        let mut terms = Vec::new();
        for total in 0..=degree {
            for a in (0..=total).rev() {
                for b in (0..=total - a).rev() {
                    for c in (0..=total - a - b).rev() {
                        let d = total - a - b - c;
                        terms.push(([a, b, c, d], rng.random_range(-1.0..=1.0)));
                    }
                }
            }
        }
        Self {
            num_vars: Self::NUM_VARS,
            degree,
            terms,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(0.0, |acc, (e, c)| {
            acc + c * x
                .iter()
                .zip(e)
                .map(|(xi, &p)| xi.powi(p as i32))
                .product::<f64>()
        })
    }
}

fn split_count(n: usize) -> usize {
    ((n as f64 * TRAIN_FRACTION) as usize).clamp(1, n - 1)
}

/// Inputs uniform on [-1, 1]⁴, targets standardised with the training
/// split's mean and standard deviation.
pub fn gen_poly_data(task: &PolyTask, n: usize, rng: &mut RngStream) -> Result<(Batch, Batch)> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two samples"));
    }
    let d = task.num_vars;
    let inputs: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let raw: Vec<f64> = inputs.chunks(d).map(|x| task.eval(x)).collect();

    let n_train = split_count(n);
    let (mean, std) = shifted_mean_std(&raw[..n_train]);
    let denom = std.max(MIN_TARGET_STD);
    let targets: Vec<f64> = raw.iter().map(|y| (y - mean) / denom).collect();

    let train = Batch::regression(inputs[..n_train * d].to_vec(), d, targets[..n_train].to_vec(), 1)?;
    let val = Batch::regression(inputs[n_train * d..].to_vec(), d, targets[n_train..].to_vec(), 1)?;
    Ok((train, val))
}

/// Mean and population standard deviation, accumulated relative to the first
/// sample so that a constant series gives exactly its value and zero spread.
fn shifted_mean_std(xs: &[f64]) -> (f64, f64) {
    let pivot = xs[0];
    let n = xs.len() as f64;
    let mean_shift = xs.iter().fold(0.0, |acc, x| acc + (x - pivot)) / n;
    let var = xs
        .iter()
        .fold(0.0, |acc, x| acc + (x - pivot - mean_shift).powi(2))
        / n;
    (pivot + mean_shift, var.sqrt())
}

pub const BLOB_RADIUS: f64 = 3.0;
pub const BLOB_STD: f64 = 0.5;

/// Isotropic Gaussian clusters in the plane. Centres sit evenly on a circle
/// of radius [`BLOB_RADIUS`] with a seeded rotation; labels are the cluster
/// index.
pub fn gen_blobs_classification(k: usize, n: usize, rng: &mut RngStream) -> Result<(Batch, Batch)> {
    if k < 2 {
        return Err(Error::invalid("classes", format!("need at least 2, got {k}")));
    }
    if n < 2 {
        return Err(Error::invalid("n", "need at least two samples"));
    }
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let centers: Vec<[f64; 2]> = (0..k)
        .map(|j| {
            let a = phase + 2.0 * PI * j as f64 / k as f64;
            [BLOB_RADIUS * a.cos(), BLOB_RADIUS * a.sin()]
        })
        .collect();
    let noise = Normal::new(0.0, BLOB_STD).expect("valid normal");
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let j = rng.random_range(0..k);
        inputs.push(centers[j][0] + noise.sample(rng));
        inputs.push(centers[j][1] + noise.sample(rng));
        labels.push(j);
    }
    let n_train = split_count(n);
    let train = Batch::classification(inputs[..2 * n_train].to_vec(), 2, labels[..n_train].to_vec(), k)?;
    let val = Batch::classification(inputs[2 * n_train..].to_vec(), 2, labels[n_train..].to_vec(), k)?;
    Ok((train, val))
}

/// Writes a header row (`x0..`, then `y0..` or `label`) and one sample per line.
pub fn write_batch_csv<W: Write>(batch: &Batch, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..batch.input_dim).map(|i| format!("x{i}")).collect();
    match &batch.targets {
        Targets::Values { dim, .. } => header.extend((0..*dim).map(|i| format!("y{i}"))),
        Targets::Classes { .. } => header.push("label".into()),
    }
    w.write_record(&header)?;
    for r in 0..batch.len() {
        let mut row: Vec<String> = batch.input_row(r).iter().map(|v| v.to_string()).collect();
        match &batch.targets {
            Targets::Values { data, dim } => {
                row.extend(data[r * dim..(r + 1) * dim].iter().map(|v| v.to_string()))
            }
            Targets::Classes { labels, .. } => row.push(labels[r].to_string()),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the format produced by [`write_batch_csv`]. For classification data
/// the class count must be supplied, since a sample need not contain every
/// class.
pub fn read_batch_csv<R: Read>(input: R, num_classes: Option<usize>) -> Result<Batch> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let input_dim = header.iter().filter(|h| h.starts_with('x')).count();
    let target_dim = header.iter().filter(|h| h.starts_with('y')).count();
    let has_label = header.iter().any(|h| h == "label");
    if input_dim + target_dim + usize::from(has_label) != header.len() {
        return Err(Error::invalid("csv header", "expected columns x*, then y* or label"));
    }
    let mut inputs = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        for (i, field) in rec.iter().enumerate() {
            let parse_err = || Error::invalid("csv", format!("bad number `{field}`"));
            if i < input_dim {
                inputs.push(field.trim().parse::<f64>().map_err(|_| parse_err())?);
            } else if has_label {
                labels.push(field.trim().parse::<usize>().map_err(|_| parse_err())?);
            } else {
                values.push(field.trim().parse::<f64>().map_err(|_| parse_err())?);
            }
        }
    }
    if has_label {
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Batch::classification(inputs, input_dim, labels, k)
    } else {
        Batch::regression(inputs, input_dim, values, target_dim)
    }
}
