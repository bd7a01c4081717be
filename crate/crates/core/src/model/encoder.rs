use ndarray::{s, Array2, ArrayView2, Axis};

use super::params::{EncoderConfig, EncoderParams, Layer, LayerSlot};
use crate::error::{Error, Result};
use crate::imgproc::{ImageBuffer, CHANNELS};

/// Anything that maps fixed-size patches to features and can backpropagate.
pub trait Encoder {
    fn config(&self) -> &EncoderConfig;

    /// Runs the batch and keeps the activations needed for `backward_batch`.
    fn forward_batch(&self, patches: &[&ImageBuffer]) -> Result<EncoderCache>;

    /// Flat parameter gradient given upstream gradients on the head output
    /// (`batch x feature_dim`) and/or the pooled backbone features
    /// (`batch x hidden`). Contributions are summed over the batch.
    fn backward_batch(
        &self,
        cache: &EncoderCache,
        d_out: Option<&Array2<f64>>,
        d_pooled: Option<&Array2<f64>>,
    ) -> Result<Vec<f64>>;

    /// Unnormalized head output for one patch.
    fn forward(&self, patch: &ImageBuffer) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[patch])?.output.row(0).to_vec())
    }

    /// Pooled backbone features for one patch (the head is not applied).
    fn embed(&self, patch: &ImageBuffer) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[patch])?.pooled.row(0).to_vec())
    }

    fn backward(&self, patch: &ImageBuffer, upstream: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_batch(&[patch])?;
        let d = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        self.backward_batch(&cache, Some(&d), None)
    }
}

/// Reference encoder type: the parameters are the model.
pub type PatchMlp = EncoderParams;

/// Activations from a batched forward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    pub batch: usize,
    tokens: Array2<f64>,
    h0: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    /// `batch x hidden` mean-pooled backbone features.
    pub pooled: Array2<f64>,
    z1: Array2<f64>,
    /// `batch x feature_dim` unnormalized head output.
    pub output: Array2<f64>,
}

impl EncoderCache {
    /// Which ReLU units are active, across every rectified layer.
    pub fn activation_signs(&self) -> Vec<bool> {
        self.h1
            .iter()
            .chain(self.h2.iter())
            .chain(self.z1.iter())
            .map(|&v| v > 0.0)
            .collect()
    }
}

fn weight<'a>(values: &'a [f64], slot: &LayerSlot) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((slot.fan_in, slot.fan_out), &values[slot.weight.clone()])
        .expect("layout matches shape")
}

fn affine(x: &Array2<f64>, values: &[f64], slot: &LayerSlot) -> Array2<f64> {
    let mut y = x.dot(&weight(values, slot));
    let b = ndarray::ArrayView1::from(&values[slot.bias.clone()]);
    y += &b;
    y
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Writes `x^T d` and the column sums of `d` into the layer's gradient slice,
/// and returns `d W^T`.
fn affine_backward(
    x: &Array2<f64>,
    d: &Array2<f64>,
    values: &[f64],
    slot: &LayerSlot,
    grad: &mut [f64],
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    let gw = x.t().dot(d);
    grad[slot.weight.clone()].copy_from_slice(gw.as_slice().expect("standard layout"));
    let gb = d.sum_axis(Axis(0));
    grad[slot.bias.clone()].copy_from_slice(gb.as_slice().expect("standard layout"));
    need_input_grad.then(|| d.dot(&weight(values, slot).t()))
}

fn relu_mask(d: &mut Array2<f64>, act: &Array2<f64>) {
    ndarray::Zip::from(d).and(act).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

impl EncoderParams {
    /// Splits every patch into `P x P x 3` tokens, one row per token,
    /// optionally centered per channel.
    fn tokenize(&self, patches: &[&ImageBuffer]) -> Result<Array2<f64>> {
        let cfg = self.config();
        let (s, p) = (cfg.input_size, cfg.patch);
        let g = s / p;
        let t = cfg.tokens();
        let d = cfg.token_dim();
        let mut out = Array2::<f64>::zeros((patches.len() * t, d));
        for (b, img) in patches.iter().enumerate() {
            if img.dims() != (s, s) {
                return Err(Error::invalid(format!(
                    "patch is {}x{}, encoder expects {s}x{s}",
                    img.height(),
                    img.width()
                )));
            }
            let data = img.data();
            for gy in 0..g {
                for gx in 0..g {
                    let mut row = out.row_mut(b * t + gy * g + gx);
                    let row = row.as_slice_mut().expect("standard layout");
                    for py in 0..p {
                        let src = ((gy * p + py) * s + gx * p) * CHANNELS;
                        let dst = py * p * CHANNELS;
                        row[dst..dst + p * CHANNELS].copy_from_slice(&data[src..src + p * CHANNELS]);
                    }
                    if cfg.center_tokens {
                        let mut mean = [0.0; CHANNELS];
                        for (i, v) in row.iter().enumerate() {
                            mean[i % CHANNELS] += v;
                        }
                        let n = (p * p) as f64;
                        for (i, v) in row.iter_mut().enumerate() {
                            *v -= mean[i % CHANNELS] / n;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Zeroes the gradient slices of `frozen` layers.
    pub fn mask_frozen(&self, grad: &mut [f64], frozen: &[Layer]) {
        for slot in self.config().layout() {
            if frozen.contains(&slot.layer) {
                grad[slot.span()].fill(0.0);
            }
        }
    }
}

impl Encoder for EncoderParams {
    fn config(&self) -> &EncoderConfig {
        EncoderParams::config(self)
    }

    fn forward_batch(&self, patches: &[&ImageBuffer]) -> Result<EncoderCache> {
        if patches.is_empty() {
            return Err(Error::invalid("empty patch batch"));
        }
        let layout = self.config().layout();
        let v = self.values();
        let t = self.config().tokens();
        let tokens = self.tokenize(patches)?;
        let h0 = affine(&tokens, v, &layout[0]);
        let mut h1 = affine(&h0, v, &layout[1]);
        relu_inplace(&mut h1);
        let mut h2 = affine(&h1, v, &layout[2]);
        relu_inplace(&mut h2);
        let hidden = self.config().hidden;
        let pooled = h2
            .view()
            .into_shape_with_order((patches.len(), t, hidden))
            .expect("token rows are grouped per patch")
            .mean_axis(Axis(1))
            .expect("at least one token");
        let mut z1 = affine(&pooled, v, &layout[3]);
        relu_inplace(&mut z1);
        let output = affine(&z1, v, &layout[4]);
        if output.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("encoder output".into()));
        }
        Ok(EncoderCache {
            batch: patches.len(),
            tokens,
            h0,
            h1,
            h2,
            pooled,
            z1,
            output,
        })
    }

    fn backward_batch(
        &self,
        cache: &EncoderCache,
        d_out: Option<&Array2<f64>>,
        d_pooled: Option<&Array2<f64>>,
    ) -> Result<Vec<f64>> {
        let cfg = self.config();
        let layout = cfg.layout();
        let v = self.values();
        let b = cache.batch;
        let check = |d: &Array2<f64>, cols: usize, what: &str| {
            if d.dim() != (b, cols) {
                Err(Error::invalid(format!(
                    "{what} gradient is {:?}, expected ({b}, {cols})",
                    d.dim()
                )))
            } else {
                Ok(())
            }
        };
        let mut grad = vec![0.0; self.len()];
        let mut dp = Array2::<f64>::zeros((b, cfg.hidden));
        if let Some(d) = d_out {
            check(d, cfg.feature_dim, "output")?;
            let mut dz1 = affine_backward(&cache.z1, d, v, &layout[4], &mut grad, true).unwrap();
            relu_mask(&mut dz1, &cache.z1);
            dp = affine_backward(&cache.pooled, &dz1, v, &layout[3], &mut grad, true).unwrap();
        }
        if let Some(d) = d_pooled {
            check(d, cfg.hidden, "pooled")?;
            dp += d;
        }
        let t = cfg.tokens();
        let mut dh2 = Array2::<f64>::zeros((b * t, cfg.hidden));
        let inv_t = 1.0 / t as f64;
        for i in 0..b {
            let row = dp.row(i).mapv(|x| x * inv_t);
            dh2.slice_mut(s![i * t..(i + 1) * t, ..]).assign(&row);
        }
        relu_mask(&mut dh2, &cache.h2);
        let mut dh1 = affine_backward(&cache.h1, &dh2, v, &layout[2], &mut grad, true).unwrap();
        relu_mask(&mut dh1, &cache.h1);
        let dh0 = affine_backward(&cache.h0, &dh1, v, &layout[1], &mut grad, true).unwrap();
        affine_backward(&cache.tokens, &dh0, v, &layout[0], &mut grad, false);
        Ok(grad)
    }
}
