//! Residential / non-residential tile classifier: 14 engineered image
//! features and an L2-regularized logistic model trained by full-batch
//! gradient descent.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tiler::TileImage;

pub const FEATURE_COUNT: usize = 14;
/// Identifies the feature layout below; stored in model files.
pub const FEATURE_SPEC_ID: &str = "gridpop-tile-features-v1";
pub const L2_PENALTY: f64 = 1e-4;
pub const DECISION_THRESHOLD: f64 = 0.5;

const WHITE_LEVEL: u8 = 240;
const DARK_LEVEL: u8 = 40;
const ORIENTATION_PERCENTILE: f64 = 0.75;

/// Feature layout:
///
/// | index | feature |
/// |-------|---------|
/// | 0-2   | channel means (R, G, B), scaled to [0, 1] |
/// | 3-5   | channel standard deviations, scaled to [0, 1] |
/// | 6     | mean gradient magnitude of luma, scaled to [0, 1] |
/// | 7-10  | edge orientation histogram, bins 0, 45, 90, 135 degrees |
/// | 11    | white pixel ratio (all channels >= 240) |
/// | 12    | dark pixel ratio (all channels <= 40) |
/// | 13    | Shannon entropy (bits) of a 16-bin luma histogram |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn orientation_histogram(&self) -> [f64; 4] {
        [self.0[7], self.0[8], self.0[9], self.0[10]]
    }
}

fn luma(px: [u8; 3]) -> f64 {
    (px[0] as f64 + 2.0 * px[1] as f64 + px[2] as f64) / 4.0
}

/// Compute the feature vector of a tile image.
///
/// Gradients are central differences of luma `(r + 2g + b) / 4` over
/// interior pixels. Orientation votes come from pixels whose non-zero
/// gradient magnitude is at least the 75th percentile (nearest rank), with
/// `atan2(gy, gx)` folded into [0, 180) and rounded to the nearest 45
/// degree bin.
pub fn extract_features(tile: &TileImage) -> FeatureVector {
    let side = tile.side_px;
    let n = tile.pixel_count() as f64;
    let mut f = [0.0; FEATURE_COUNT];

    let mut sum = [0.0f64; 3];
    let mut white = 0usize;
    let mut dark = 0usize;
    let mut hist = [0usize; 16];
    let mut lum = Vec::with_capacity(tile.pixel_count());
    for px in tile.pixels.chunks_exact(3) {
        let px = [px[0], px[1], px[2]];
        for c in 0..3 {
            sum[c] += px[c] as f64;
        }
        white += usize::from(px.iter().all(|&v| v >= WHITE_LEVEL));
        dark += usize::from(px.iter().all(|&v| v <= DARK_LEVEL));
        let l = luma(px);
        hist[((l / 16.0) as usize).min(15)] += 1;
        lum.push(l);
    }
    let mean = sum.map(|s| s / n);
    let mut var = [0.0f64; 3];
    for px in tile.pixels.chunks_exact(3) {
        for c in 0..3 {
            let d = px[c] as f64 - mean[c];
            var[c] += d * d;
        }
    }
    for c in 0..3 {
        f[c] = mean[c] / 255.0;
        f[3 + c] = (var[c] / n).sqrt() / 255.0;
    }

    if side >= 3 {
        let mut mags = Vec::with_capacity((side - 2) * (side - 2));
        let mut angles = Vec::with_capacity(mags.capacity());
        for y in 1..side - 1 {
            for x in 1..side - 1 {
                let gx = (lum[y * side + x + 1] - lum[y * side + x - 1]) / 2.0;
                let gy = (lum[(y + 1) * side + x] - lum[(y - 1) * side + x]) / 2.0;
                mags.push((gx * gx + gy * gy).sqrt());
                angles.push(gy.atan2(gx));
            }
        }
        f[6] = mags.iter().sum::<f64>() / mags.len() as f64 / 255.0;

        let mut sorted = mags.clone();
        let rank = ((ORIENTATION_PERCENTILE * sorted.len() as f64).ceil() as usize).max(1) - 1;
        let (_, &mut threshold, _) = sorted.select_nth_unstable_by(rank, f64::total_cmp);
        let mut bins = [0usize; 4];
        for (&m, &a) in mags.iter().zip(&angles) {
            if m > 0.0 && m >= threshold {
                let mut deg = a.to_degrees();
                if deg < 0.0 {
                    deg += 180.0;
                }
                bins[((deg / 45.0).round() as usize) % 4] += 1;
            }
        }
        let votes: usize = bins.iter().sum();
        if votes > 0 {
            for k in 0..4 {
                f[7 + k] = bins[k] as f64 / votes as f64;
            }
        }
    }

    f[11] = white as f64 / n;
    f[12] = dark as f64 / n;
    f[13] = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0);
    FeatureVector(f)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub final_loss: f64,
}

/// Trained logistic model over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub feature_spec_id: String,
    /// Per-feature (mean, std) from the training split; zero-variance
    /// features carry std 1 and a weight pinned to 0.
    pub normalization: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_meta: TrainingMeta,
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean cross-entropy plus `lambda / 2 * |w|^2` and its gradient with respect
/// to the weights and the bias. `xs` are already standardized; the bias is
/// not penalized.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    xs: &[[f64; FEATURE_COUNT]],
    ys: &[u8],
    lambda: f64,
) -> (f64, [f64; FEATURE_COUNT], f64) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut gw = [0.0; FEATURE_COUNT];
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = bias + x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
        let y = y as f64;
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for k in 0..FEATURE_COUNT {
            gw[k] += r * x[k];
        }
        gb += r;
    }
    let penalty: f64 = weights.iter().map(|w| w * w).sum::<f64>() * lambda / 2.0;
    for k in 0..FEATURE_COUNT {
        gw[k] = gw[k] / n + lambda * weights[k];
    }
    (loss / n + penalty, gw, gb / n)
}

fn loss_only(weights: &[f64], bias: f64, xs: &[[f64; FEATURE_COUNT]], ys: &[u8], lambda: f64) -> f64 {
    loss_and_gradient(weights, bias, xs, ys, lambda).0
}

fn canonical_order(a: &(FeatureVector, u8), b: &(FeatureVector, u8)) -> Ordering {
    a.1.cmp(&b.1).then_with(|| {
        a.0 .0
            .iter()
            .zip(&b.0 .0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn is_zero_variance(mean: f64, std: f64) -> bool {
    std <= 1e-12 * mean.abs().max(1.0)
}

/// Fit a logistic model by full-batch gradient descent.
///
/// Examples are put in a canonical order first, so the result depends only
/// on the multiset of examples. Weights start at zero and the bias at the
/// log-odds of the positive class. When a step would raise the loss the
/// learning rate is halved until it does not. `seed` is recorded in the
/// training metadata; the procedure itself is deterministic.
pub fn train_logistic(train: &[(FeatureVector, u8)], learning_rate: f64, epochs: usize, seed: u64) -> Result<Model> {
    let positives = train.iter().filter(|(_, y)| *y == 1).count();
    let negatives = train.iter().filter(|(_, y)| *y == 0).count();
    if train.len() < 2 || positives == 0 || negatives == 0 || positives + negatives != train.len() {
        return Err(Error::SingleClass { positives, negatives });
    }
    if let Some(i) = train.iter().position(|(f, _)| f.0.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteFeature(i));
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate {learning_rate} must be positive")));
    }

    let mut data = train.to_vec();
    data.sort_by(canonical_order);
    let n = data.len() as f64;

    let mut normalization = Vec::with_capacity(FEATURE_COUNT);
    let mut pinned = [false; FEATURE_COUNT];
    for k in 0..FEATURE_COUNT {
        let mean = data.iter().map(|(f, _)| f.0[k]).sum::<f64>() / n;
        let var = data.iter().map(|(f, _)| (f.0[k] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if is_zero_variance(mean, std) {
            pinned[k] = true;
            normalization.push((mean, 1.0));
        } else {
            normalization.push((mean, std));
        }
    }
    let xs: Vec<[f64; FEATURE_COUNT]> = data
        .iter()
        .map(|(f, _)| {
            let mut x = [0.0; FEATURE_COUNT];
            for k in 0..FEATURE_COUNT {
                x[k] = if pinned[k] {
                    0.0
                } else {
                    (f.0[k] - normalization[k].0) / normalization[k].1
                };
            }
            x
        })
        .collect();
    let ys: Vec<u8> = data.iter().map(|(_, y)| *y).collect();

    let prior = positives as f64 / n;
    let mut weights = [0.0; FEATURE_COUNT];
    let mut bias = (prior / (1.0 - prior)).ln();
    let mut loss = loss_only(&weights, bias, &xs, &ys, L2_PENALTY);
    let mut lr = learning_rate;

    'epochs: for _ in 0..epochs {
        let (_, gw, gb) = loss_and_gradient(&weights, bias, &xs, &ys, L2_PENALTY);
        loop {
            let mut cand = weights;
            for k in 0..FEATURE_COUNT {
                if !pinned[k] {
                    cand[k] -= lr * gw[k];
                }
            }
            let cand_bias = bias - lr * gb;
            let cand_loss = loss_only(&cand, cand_bias, &xs, &ys, L2_PENALTY);
            if cand_loss <= loss {
                weights = cand;
                bias = cand_bias;
                loss = cand_loss;
                break;
            }
            lr /= 2.0;
            if lr < 1e-15 {
                break 'epochs;
            }
        }
    }

    Ok(Model {
        feature_spec_id: FEATURE_SPEC_ID.to_owned(),
        normalization,
        weights: weights.to_vec(),
        bias,
        training_meta: TrainingMeta {
            epochs,
            learning_rate,
            seed,
            final_loss: loss,
        },
    })
}

/// `sigmoid(w . normalize(f) + b)`.
pub fn predict_proba(model: &Model, features: &[f64]) -> Result<f64> {
    if features.len() != model.weights.len() || model.normalization.len() != model.weights.len() {
        return Err(Error::FeatureLength {
            expected: model.weights.len(),
            found: features.len(),
        });
    }
    let z = model.bias
        + features
            .iter()
            .zip(&model.normalization)
            .zip(&model.weights)
            .map(|((x, (m, s)), w)| w * (x - m) / s)
            .sum::<f64>();
    Ok(sigmoid(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    /// 0 when nothing is predicted positive.
    pub precision: f64,
    /// 0 when there are no positives.
    pub recall: f64,
}

/// Confusion counts and rates at [`DECISION_THRESHOLD`] (probability at or
/// above it predicts residential).
pub fn evaluate(model: &Model, dataset: &[(FeatureVector, u8)]) -> Result<Metrics> {
    let predictions = dataset
        .iter()
        .map(|(f, _)| predict_proba(model, f.as_slice()).map(|p| p >= DECISION_THRESHOLD))
        .collect::<Result<Vec<_>>>()?;
    metrics_from_predictions(&predictions, &dataset.iter().map(|(_, y)| *y).collect::<Vec<_>>())
}

pub fn metrics_from_predictions(predicted: &[bool], labels: &[u8]) -> Result<Metrics> {
    if predicted.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p, y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Metrics {
        n: predicted.len(),
        accuracy: ratio(tp + tn, predicted.len()),
        true_positive: tp,
        true_negative: tn,
        false_positive: fp,
        false_negative: fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(" ")
}

/// Five-line plain-text model file.
pub fn write_model(model: &Model) -> String {
    let m = &model.training_meta;
    let mut out = String::new();
    writeln!(out, "{}", model.feature_spec_id).unwrap();
    writeln!(out, "{}", join(&model.normalization, |(a, b)| format!("{a:?}:{b:?}"))).unwrap();
    writeln!(out, "{}", join(&model.weights, |w| format!("{w:?}"))).unwrap();
    writeln!(out, "{:?}", model.bias).unwrap();
    writeln!(
        out,
        "epochs={} learning_rate={:?} seed={} final_loss={:?}",
        m.epochs, m.learning_rate, m.seed, m.final_loss
    )
    .unwrap();
    out
}

fn num(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::ModelFile(format!("bad {what} value {s:?}")))
}

pub fn parse_model(text: &str) -> Result<Model> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 5 {
        return Err(Error::ModelFile(format!("expected 5 lines, found {}", lines.len())));
    }
    let feature_spec_id = lines[0].trim().to_owned();
    if feature_spec_id != FEATURE_SPEC_ID {
        return Err(Error::ModelFile(format!(
            "feature spec {feature_spec_id:?} does not match {FEATURE_SPEC_ID:?}"
        )));
    }
    let normalization = lines[1]
        .split_whitespace()
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| Error::ModelFile(format!("bad normalization pair {pair:?}")))?;
            Ok((num(a, "mean")?, num(b, "std")?))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = lines[2]
        .split_whitespace()
        .map(|w| num(w, "weight"))
        .collect::<Result<Vec<_>>>()?;
    if weights.len() != FEATURE_COUNT || normalization.len() != FEATURE_COUNT {
        return Err(Error::FeatureLength {
            expected: FEATURE_COUNT,
            found: weights.len().min(normalization.len()),
        });
    }
    if normalization.iter().any(|&(_, s)| !(s > 0.0)) {
        return Err(Error::ModelFile("normalization std must be positive".into()));
    }
    let bias = num(lines[3].trim(), "bias")?;
    let mut meta = TrainingMeta {
        epochs: 0,
        learning_rate: 0.0,
        seed: 0,
        final_loss: 0.0,
    };
    for kv in lines[4].split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::ModelFile(format!("bad training_meta entry {kv:?}")))?;
        match k {
            "epochs" => meta.epochs = v.parse().map_err(|_| Error::ModelFile(format!("bad epochs {v:?}")))?,
            "learning_rate" => meta.learning_rate = num(v, "learning_rate")?,
            "seed" => meta.seed = v.parse().map_err(|_| Error::ModelFile(format!("bad seed {v:?}")))?,
            "final_loss" => meta.final_loss = num(v, "final_loss")?,
            _ => {}
        }
    }
    Ok(Model {
        feature_spec_id,
        normalization,
        weights,
        bias,
        training_meta: meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiler::Cell;

    fn tile_from(side: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> TileImage {
        let mut px = Vec::with_capacity(side * side * 3);
        for y in 0..side {
            for x in 0..side {
                px.extend_from_slice(&f(x, y));
            }
        }
        TileImage::from_rgb(Cell::new(0, 0), side, px).unwrap()
    }

    #[test]
    fn constant_gray_tile() {
        let f = extract_features(&tile_from(32, |_, _| [120, 120, 120]));
        assert!((f.0[0] - 120.0 / 255.0).abs() < 1e-15);
        assert_eq!(&f.0[3..11], &[0.0; 8]);
        assert_eq!(f.0[13], 0.0);
    }

    #[test]
    fn vertical_stripes_concentrate_in_one_bin() {
        let f = extract_features(&tile_from(64, |x, _| if (x / 8) % 2 == 0 { [0; 3] } else { [255; 3] }));
        let h = f.orientation_histogram();
        assert_eq!(h, [1.0, 0.0, 0.0, 0.0]);
        // two equiprobable luma bins
        assert!((f.0[13] - 1.0).abs() < 1e-12);
        assert!((f.0[11] - 0.5).abs() < 1e-12 && (f.0[12] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn horizontal_stripes_use_90_degree_bin() {
        let f = extract_features(&tile_from(64, |_, y| if (y / 8) % 2 == 0 { [0; 3] } else { [255; 3] }));
        assert_eq!(f.orientation_histogram(), [0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn tiny_tiles_have_no_gradients() {
        let f = extract_features(&tile_from(2, |x, _| [x as u8 * 200; 3]));
        assert_eq!(f.0[6], 0.0);
        assert_eq!(f.orientation_histogram(), [0.0; 4]);
    }

    fn two_clusters() -> Vec<(FeatureVector, u8)> {
        (0..40)
            .map(|i| {
                let y = (i % 2) as u8;
                let mut f = [0.0; FEATURE_COUNT];
                for (k, v) in f.iter_mut().enumerate() {
                    *v = ((i * 7 + k * 3) % 11) as f64 / 11.0;
                }
                f[0] += if y == 1 { 5.0 } else { -5.0 };
                (FeatureVector(f), y)
            })
            .collect()
    }

    #[test]
    fn zero_epochs_is_prior() {
        let data = two_clusters();
        let m = train_logistic(&data[..3], 0.1, 0, 1).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert!((m.bias - (1.0f64 / 2.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn single_class_and_nan_rejected() {
        let data: Vec<_> = two_clusters().into_iter().filter(|(_, y)| *y == 1).collect();
        assert!(matches!(train_logistic(&data, 0.1, 10, 0), Err(Error::SingleClass { .. })));
        let mut data = two_clusters();
        data[3].0 .0[2] = f64::NAN;
        assert!(matches!(train_logistic(&data, 0.1, 10, 0), Err(Error::NonFiniteFeature(3))));
    }

    #[test]
    fn constant_feature_is_pinned() {
        let mut data = two_clusters();
        for (f, _) in &mut data {
            f.0[5] = 0.3;
        }
        let m = train_logistic(&data, 0.5, 50, 0).unwrap();
        assert_eq!(m.normalization[5].1, 1.0);
        assert_eq!(m.weights[5], 0.0);
    }

    #[test]
    fn predict_checks_length() {
        let m = train_logistic(&two_clusters(), 0.5, 5, 0).unwrap();
        assert!(matches!(predict_proba(&m, &[0.0; 3]), Err(Error::FeatureLength { .. })));
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = Model {
            feature_spec_id: FEATURE_SPEC_ID.into(),
            normalization: vec![(0.0, 1.0); FEATURE_COUNT],
            weights: vec![0.0; FEATURE_COUNT],
            bias: 0.0,
            training_meta: TrainingMeta {
                epochs: 0,
                learning_rate: 0.1,
                seed: 0,
                final_loss: 0.0,
            },
        };
        assert_eq!(predict_proba(&m, &[3.0; FEATURE_COUNT]).unwrap(), 0.5);
        let mut prev = 0.0;
        for b in [-50.0, -3.0, 0.0, 2.0, 40.0] {
            let p = predict_proba(&Model { bias: b, ..m.clone() }, &[0.0; FEATURE_COUNT]).unwrap();
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn metrics_examples() {
        let m = metrics_from_predictions(&[true; 3], &[1, 0, 0]).unwrap();
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.false_positive, 2);
        let perfect = metrics_from_predictions(&[true, false].repeat(5), &[1, 0].repeat(5)).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert_eq!(perfect.false_positive + perfect.false_negative, 0);
        assert!(metrics_from_predictions(&[], &[]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let m = train_logistic(&two_clusters(), 0.5, 25, 9).unwrap();
        let text = write_model(&m);
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with(FEATURE_SPEC_ID));
        assert_eq!(parse_model(&text).unwrap(), m);
        assert!(parse_model("bogus\n").is_err());
    }
}
