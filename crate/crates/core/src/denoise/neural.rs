//! Small noise-prediction networks with hand-written backpropagation.
//!
//! Two architectures share one flat parameter vector layout (each layer's
//! weights followed by its bias, in layer order):
//!
//! * `Mlp`: `[x, emb(t)] -> hidden -> hidden -> dim`, three dense layers.
//! * `Conv`: `[x, emb(t) broadcast as planes] -> hidden -> hidden -> hidden
//!   -> channels`, four 3x3 same-padded convolutions.
//!
//! Hidden layers use SiLU; the output layer is linear.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ILVRNET1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Mlp {
        dim: usize,
        hidden: usize,
        embed: usize,
    },
    Conv {
        channels: usize,
        height: usize,
        width: usize,
        hidden: usize,
        embed: usize,
    },
}

impl Architecture {
    pub fn data_shape(&self) -> Vec<usize> {
        match *self {
            Architecture::Mlp { dim, .. } => vec![dim],
            Architecture::Conv {
                channels,
                height,
                width,
                ..
            } => vec![channels, height, width],
        }
    }

    pub fn data_len(&self) -> usize {
        self.data_shape().iter().product()
    }

    fn embed(&self) -> usize {
        match *self {
            Architecture::Mlp { embed, .. } | Architecture::Conv { embed, .. } => embed,
        }
    }

    fn layers(&self) -> Vec<Layer> {
        match *self {
            Architecture::Mlp { dim, hidden, embed } => vec![
                Layer::Dense {
                    inp: dim + embed,
                    out: hidden,
                },
                Layer::Dense {
                    inp: hidden,
                    out: hidden,
                },
                Layer::Dense { inp: hidden, out: dim },
            ],
            Architecture::Conv {
                channels,
                height: h,
                width: w,
                hidden,
                embed,
            } => vec![
                Layer::Conv {
                    inp: channels + embed,
                    out: hidden,
                    h,
                    w,
                },
                Layer::Conv {
                    inp: hidden,
                    out: hidden,
                    h,
                    w,
                },
                Layer::Conv {
                    inp: hidden,
                    out: hidden,
                    h,
                    w,
                },
                Layer::Conv {
                    inp: hidden,
                    out: channels,
                    h,
                    w,
                },
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::param_count).sum()
    }

    fn validate(&self) -> Result<()> {
        let sizes = self.header_sizes();
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("zero-sized architecture {self:?}")));
        }
        if !self.embed().is_multiple_of(2) {
            return Err(Error::InvalidConfig("time embedding size must be even".into()));
        }
        Ok(())
    }

    fn code(&self) -> u32 {
        match self {
            Architecture::Mlp { .. } => 1,
            Architecture::Conv { .. } => 2,
        }
    }

    fn header_sizes(&self) -> Vec<u32> {
        let sizes = match *self {
            Architecture::Mlp { dim, hidden, embed } => vec![dim, hidden, embed],
            Architecture::Conv {
                channels,
                height,
                width,
                hidden,
                embed,
            } => vec![channels, height, width, hidden, embed],
        };
        sizes.into_iter().map(|s| s as u32).collect()
    }

    fn from_header(code: u32, sizes: &[u32]) -> Result<Self> {
        let s: Vec<usize> = sizes.iter().map(|&v| v as usize).collect();
        let arch = match (code, s.as_slice()) {
            (1, &[dim, hidden, embed]) => Architecture::Mlp { dim, hidden, embed },
            (2, &[channels, height, width, hidden, embed]) => Architecture::Conv {
                channels,
                height,
                width,
                hidden,
                embed,
            },
            _ => {
                return Err(Error::MalformedCheckpoint(format!(
                    "architecture code {code} with {} sizes",
                    sizes.len()
                )))
            }
        };
        arch.validate().map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, Copy)]
enum Layer {
    Dense { inp: usize, out: usize },
    Conv { inp: usize, out: usize, h: usize, w: usize },
}

impl Layer {
    fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense { inp, out } => inp * out,
            Layer::Conv { inp, out, .. } => inp * out * 9,
        }
    }

    fn out_len(&self) -> usize {
        match *self {
            Layer::Dense { out, .. } => out,
            Layer::Conv { out, h, w, .. } => out * h * w,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inp, .. } => inp,
            Layer::Conv { inp, .. } => inp * 9,
        }
    }

    fn bias_count(&self) -> usize {
        match *self {
            Layer::Dense { out, .. } | Layer::Conv { out, .. } => out,
        }
    }

    fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    fn forward(&self, params: &[f64], input: &[f64], output: &mut [f64]) {
        let (weights, bias) = params.split_at(self.weight_count());
        match *self {
            Layer::Dense { inp, out } => {
                for o in 0..out {
                    let row = &weights[o * inp..(o + 1) * inp];
                    output[o] = bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                }
            }
            Layer::Conv { inp, out, h, w } => {
                let plane = h * w;
                for o in 0..out {
                    let dst = &mut output[o * plane..(o + 1) * plane];
                    dst.fill(bias[o]);
                    for i in 0..inp {
                        let src = &input[i * plane..(i + 1) * plane];
                        let k = &weights[(o * inp + i) * 9..(o * inp + i + 1) * 9];
                        for_each_tap(h, w, |y, x, sy, sx, tap| {
                            dst[y * w + x] += k[tap] * src[sy * w + sx];
                        });
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, params: &[f64], input: &[f64], grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let weights = &params[..self.weight_count()];
        let (gw, gb) = grad_params.split_at_mut(self.weight_count());
        match *self {
            Layer::Dense { inp, out } => {
                let mut grad_in = vec![0.0; inp];
                for o in 0..out {
                    let g = grad_out[o];
                    gb[o] += g;
                    let row = &weights[o * inp..(o + 1) * inp];
                    let grow = &mut gw[o * inp..(o + 1) * inp];
                    for i in 0..inp {
                        grow[i] += g * input[i];
                        grad_in[i] += g * row[i];
                    }
                }
                grad_in
            }
            Layer::Conv { inp, out, h, w } => {
                let plane = h * w;
                let mut grad_in = vec![0.0; inp * plane];
                for o in 0..out {
                    let g = &grad_out[o * plane..(o + 1) * plane];
                    gb[o] += g.iter().sum::<f64>();
                    for i in 0..inp {
                        let src = &input[i * plane..(i + 1) * plane];
                        let base = (o * inp + i) * 9;
                        let k = &weights[base..base + 9];
                        let gk = &mut gw[base..base + 9];
                        let gi = &mut grad_in[i * plane..(i + 1) * plane];
                        for_each_tap(h, w, |y, x, sy, sx, tap| {
                            let go = g[y * w + x];
                            gk[tap] += go * src[sy * w + sx];
                            gi[sy * w + sx] += go * k[tap];
                        });
                    }
                }
                grad_in
            }
        }
    }
}

/// Visits every (output pixel, in-bounds source pixel, tap index) triple of a
/// zero-padded 3x3 convolution.
#[inline]
fn for_each_tap(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    for y in 0..h {
        for ky in 0..3 {
            let sy = y + ky;
            if sy == 0 || sy > h {
                continue;
            }
            for x in 0..w {
                for kx in 0..3 {
                    let sx = x + kx;
                    if sx == 0 || sx > w {
                        continue;
                    }
                    f(y, x, sy - 1, sx - 1, ky * 3 + kx);
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal embedding of the step index: `[sin(t f_i), cos(t f_i)]` with
/// geometrically spaced frequencies `f_i = 10000^(-i / half)`.
pub fn time_embedding(t: usize, size: usize) -> Vec<f64> {
    let half = size / 2;
    let mut out = Vec::with_capacity(size);
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp())
        .collect();
    out.extend(freqs.iter().map(|f| (t as f64 * f).sin()));
    out.extend(freqs.iter().map(|f| (t as f64 * f).cos()));
    out
}

/// One training or probe example: network input `x_t`, its step and the
/// target noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// A noise predictor `eps(x_t, t)` with all parameters in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDenoiser {
    arch: Architecture,
    params: Vec<f64>,
}

struct Trace {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl NeuralDenoiser {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for layer in arch.layers() {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            params.extend((0..layer.param_count()).map(|_| rng.random_range(-bound..bound)));
        }
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: vec![0.0; arch.param_count()],
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::InvalidConfig(format!(
                "{} parameters for an architecture needing {}",
                params.len(),
                arch.param_count()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn data_shape(&self) -> Vec<usize> {
        self.arch.data_shape()
    }

    fn network_input(&self, x: &[f64], t: usize) -> Vec<f64> {
        let emb = time_embedding(t, self.arch.embed());
        let mut input = x.to_vec();
        match self.arch {
            Architecture::Mlp { .. } => input.extend(emb),
            Architecture::Conv { height, width, .. } => {
                for e in emb {
                    input.extend(std::iter::repeat_n(e, height * width));
                }
            }
        }
        input
    }

    fn run(&self, x: &[f64], t: usize) -> (Vec<f64>, Trace) {
        let layers = self.arch.layers();
        let mut trace = Trace {
            inputs: Vec::with_capacity(layers.len()),
            pre: Vec::with_capacity(layers.len()),
        };
        let mut act = self.network_input(x, t);
        let mut offset = 0;
        for (idx, layer) in layers.iter().enumerate() {
            let p = &self.params[offset..offset + layer.param_count()];
            offset += layer.param_count();
            let mut z = vec![0.0; layer.out_len()];
            layer.forward(p, &act, &mut z);
            let next = if idx + 1 == layers.len() {
                z.clone()
            } else {
                z.iter().map(|&v| silu(v)).collect()
            };
            trace.inputs.push(std::mem::replace(&mut act, next));
            trace.pre.push(z);
        }
        (act, trace)
    }

    /// Predicted noise for flattened `x_t`.
    pub fn forward(&self, x: &[f64], t: usize) -> Vec<f64> {
        self.run(x, t).0
    }

    pub fn predict(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        if x_t.shape() != self.data_shape().as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.data_shape(),
                actual: x_t.shape().to_vec(),
            });
        }
        let flat = x_t.as_standard_layout();
        let out = self.forward(flat.as_slice().expect("standard layout"), t);
        Ok(Tensor::from_shape_vec(self.data_shape(), out).expect("output matches data shape"))
    }

    /// Mean over the batch of the per-example mean squared noise error.
    pub fn loss(&self, batch: &[Example]) -> f64 {
        let per: f64 = batch
            .iter()
            .map(|ex| {
                let pred = self.forward(&ex.x_t, ex.t);
                mse(&pred, &ex.eps)
            })
            .sum();
        per / batch.len() as f64
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[Example]) -> (f64, Vec<f64>) {
        let layers = self.arch.layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for ex in batch {
            let (pred, trace) = self.run(&ex.x_t, ex.t);
            loss += scale * mse(&pred, &ex.eps);
            let d = pred.len() as f64;
            let mut g: Vec<f64> = pred
                .iter()
                .zip(&ex.eps)
                .map(|(p, e)| 2.0 * (p - e) * scale / d)
                .collect();
            let mut end = self.params.len();
            for idx in (0..layers.len()).rev() {
                let layer = &layers[idx];
                let start = end - layer.param_count();
                if idx + 1 != layers.len() {
                    for (gi, &z) in g.iter_mut().zip(&trace.pre[idx]) {
                        *gi *= silu_grad(z);
                    }
                }
                g = layer.backward(&self.params[start..end], &trace.inputs[idx], &g, &mut grad[start..end]);
                end = start;
            }
        }
        (loss, grad)
    }

    /// Writes the `ILVRNET1` checkpoint: magic, architecture code (u32),
    /// size count (u32), sizes (u32 each), then parameters as f32, all
    /// little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&self.arch.code().to_le_bytes())?;
        let sizes = self.arch.header_sizes();
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for s in sizes {
            w.write_all(&s.to_le_bytes())?;
        }
        for &p in &self.params {
            w.write_all(&(p as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let code = cur.u32()?;
        let count = cur.u32()? as usize;
        if count > 16 {
            return Err(Error::MalformedCheckpoint(format!("{count} header sizes")));
        }
        let sizes = (0..count).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let arch = Architecture::from_header(code, &sizes)?;
        let expected = arch.param_count() * 4;
        let rest = &bytes[cur.pos..];
        if rest.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: rest.len(),
            });
        }
        let params = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        Self::from_params(arch, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::fs::File::open(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_mlp() -> Architecture {
        Architecture::Mlp {
            dim: 2,
            hidden: 8,
            embed: 4,
        }
    }

    fn tiny_conv() -> Architecture {
        Architecture::Conv {
            channels: 1,
            height: 4,
            width: 4,
            hidden: 3,
            embed: 2,
        }
    }

    #[test]
    fn zero_network_predicts_zero() {
        for arch in [tiny_mlp(), tiny_conv()] {
            let net = NeuralDenoiser::zeros(arch).unwrap();
            let x: Vec<f64> = (0..arch.data_len()).map(|i| i as f64 - 3.0).collect();
            for t in [1, 50, 200] {
                assert!(net.forward(&x, t).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn output_shape_matches_data() {
        for arch in [tiny_mlp(), tiny_conv()] {
            let net = NeuralDenoiser::new(arch, 3).unwrap();
            let x = Tensor::zeros(arch.data_shape());
            assert_eq!(net.predict(&x, 7).unwrap().shape(), x.shape());
            assert!(net.predict(&Tensor::zeros(vec![5]), 7).is_err());
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(tiny_mlp().param_count(), (6 * 8 + 8) + (8 * 8 + 8) + (8 * 2 + 2));
        assert_eq!(
            tiny_conv().param_count(),
            (3 * 3 * 9 + 3) + 2 * (3 * 3 * 9 + 3) + (3 * 9 + 1)
        );
    }

    #[test]
    fn embedding_layout() {
        let e = time_embedding(0, 6);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = time_embedding(3, 2);
        assert_eq!(e, vec![3f64.sin(), 3f64.cos()]);
    }

    #[test]
    fn final_bias_gradient_is_scaled_residual() {
        let arch = tiny_mlp();
        let net = NeuralDenoiser::new(arch, 5).unwrap();
        let ex = Example {
            x_t: vec![0.3, -0.4],
            t: 10,
            eps: vec![1.0, -2.0],
        };
        let pred = net.forward(&ex.x_t, ex.t);
        let (_, grad) = net.loss_and_grad(std::slice::from_ref(&ex));
        let bias = &grad[grad.len() - 2..];
        for d in 0..2 {
            let want = 2.0 * (pred[d] - ex.eps[d]) / 2.0;
            assert!((bias[d] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_f32_exact() {
        for arch in [tiny_mlp(), tiny_conv()] {
            let net = NeuralDenoiser::new(arch, 9).unwrap();
            let mut buf = Vec::new();
            net.write_checkpoint(&mut buf).unwrap();
            assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
            assert_eq!(
                buf.len(),
                8 + 4 + 4 + 4 * arch.header_sizes().len() + 4 * arch.param_count()
            );
            let back = NeuralDenoiser::read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(back.architecture(), &arch);
            for (a, b) in net.params().iter().zip(back.params()) {
                assert_eq!(*a as f32 as f64, *b);
            }
            let mut again = Vec::new();
            back.write_checkpoint(&mut again).unwrap();
            assert_eq!(again, buf);
        }
    }

    #[test]
    fn checkpoint_errors() {
        let net = NeuralDenoiser::new(tiny_mlp(), 1).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(
            NeuralDenoiser::read_checkpoint(bad.as_slice()),
            Err(Error::BadMagic { .. })
        ));

        let short = &buf[..buf.len() - 4];
        assert!(matches!(
            NeuralDenoiser::read_checkpoint(short),
            Err(Error::Truncated { .. })
        ));

        let mut arch = buf.clone();
        arch[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            NeuralDenoiser::read_checkpoint(arch.as_slice()),
            Err(Error::MalformedCheckpoint(_))
        ));
    }

    #[test]
    fn golden_checkpoint_header() {
        let net = NeuralDenoiser::zeros(Architecture::Mlp {
            dim: 2,
            hidden: 1,
            embed: 2,
        })
        .unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let mut want = b"ILVRNET1".to_vec();
        for v in [1u32, 3, 2, 1, 2] {
            want.extend(v.to_le_bytes());
        }
        want.extend(std::iter::repeat_n(0u8, 4 * net.params().len()));
        assert_eq!(buf, want);
    }
}
