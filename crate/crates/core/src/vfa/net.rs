//! Per-courier post-decision value network: location embedding, an LSTM
//! over the queued orders, and a dense ReLU head with a scalar output.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::FeatureVector;
use super::nn::{sigmoid, MlpShape};
use crate::error::{OdpError, Result};

/// Scalars appended to the LSTM state before the dense head.
const HEAD_EXTRA: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueArch {
    pub n_locations: usize,
    pub d_embed: usize,
    pub hidden: usize,
    pub dense: Vec<usize>,
    /// Normalisers for the raw features.
    pub minute_scale: f64,
    pub shift_length: f64,
    pub n_couriers: usize,
    pub queue_max: usize,
    /// Network output is multiplied by this to give reward units.
    pub value_scale: f64,
}

impl ValueArch {
    pub fn new(n_locations: usize, n_couriers: usize, queue_max: usize, shift_length: f64, value_scale: f64) -> Self {
        Self {
            n_locations,
            d_embed: 8,
            hidden: 32,
            dense: vec![64, 32],
            minute_scale: 60.0,
            shift_length,
            n_couriers,
            queue_max,
            value_scale,
        }
    }

    fn head(&self) -> MlpShape {
        let mut sizes = vec![self.hidden + HEAD_EXTRA];
        sizes.extend(&self.dense);
        sizes.push(1);
        MlpShape::new(sizes)
    }

    fn layout(&self) -> Layout {
        let d_in = self.d_embed + 1;
        let g = 4 * self.hidden;
        let emb = 0;
        let w = emb + self.n_locations * self.d_embed;
        let u = w + g * d_in;
        let b = u + g * self.hidden;
        let head = b + g;
        Layout {
            w,
            u,
            b,
            head,
            total: head + self.head().n_params(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w: usize,
    u: usize,
    b: usize,
    head: usize,
    total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub arch: ValueArch,
    pub params: Vec<f64>,
}

struct LstmStep {
    dest: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct Trace {
    steps: Vec<LstmStep>,
    acts: Vec<Vec<f64>>,
}

impl ValueNet {
    /// Random initialisation; the output layer starts at zero so a fresh
    /// network values every state at 0.
    pub fn new(arch: ValueArch, seed: u64) -> Self {
        let lay = arch.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; lay.total];
        for p in &mut params[..lay.w] {
            *p = rng.random_range(-0.1..0.1);
        }
        let k = 1.0 / (arch.hidden as f64).sqrt();
        for p in &mut params[lay.w..lay.b] {
            *p = rng.random_range(-k..k);
        }
        // forget-gate bias
        params[lay.b + arch.hidden..lay.b + 2 * arch.hidden].fill(1.0);
        arch.head().init(&mut params[lay.head..], true, &mut rng);
        Self { arch, params }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter-group boundaries: embedding, recurrent, dense head.
    pub fn groups(&self) -> [(&'static str, std::ops::Range<usize>); 3] {
        let l = self.arch.layout();
        [("embedding", 0..l.w), ("recurrent", l.w..l.head), ("dense", l.head..l.total)]
    }

    pub fn same_arch(&self, other: &ValueNet) -> bool {
        self.arch == other.arch && self.params.len() == other.params.len()
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn head_input(&self, f: &FeatureVector, h: &[f64]) -> Vec<f64> {
        let a = &self.arch;
        let n = a.n_couriers.max(1) as f64;
        let mut x = Vec::with_capacity(a.hidden + HEAD_EXTRA);
        x.extend_from_slice(h);
        x.extend([
            f.ret / a.minute_scale,
            f.to_shift_end / a.shift_length,
            f64::from(u8::from(f.at_depot)),
            f.time,
            f.others_off_shift / n,
            f.others_at_depot / n,
            f.others_occupancy,
            f.arrivals / n,
            f.queue.len() as f64 / a.queue_max as f64,
        ]);
        x
    }

    /// Raw network output (before `value_scale`) and the trace needed for
    /// [`ValueNet::backward`].
    pub fn forward_trace(&self, f: &FeatureVector) -> (f64, Trace) {
        let a = &self.arch;
        let lay = a.layout();
        let hdim = a.hidden;
        let d_in = a.d_embed + 1;
        let p = &self.params;
        let mut h = vec![0.0; hdim];
        let mut c = vec![0.0; hdim];
        let mut steps = Vec::with_capacity(f.queue.len());
        for item in &f.queue {
            let dest = item.dest.min(a.n_locations - 1);
            let mut x = p[dest * a.d_embed..(dest + 1) * a.d_embed].to_vec();
            x.push(item.slack / a.minute_scale);
            let mut gates = vec![0.0; 4 * hdim];
            for (r, z) in gates.iter_mut().enumerate() {
                let mut s = p[lay.b + r];
                let wr = &p[lay.w + r * d_in..lay.w + (r + 1) * d_in];
                for (wi, xi) in wr.iter().zip(&x) {
                    s += wi * xi;
                }
                let ur = &p[lay.u + r * hdim..lay.u + (r + 1) * hdim];
                for (ui, hi) in ur.iter().zip(&h) {
                    s += ui * hi;
                }
                *z = s;
            }
            for j in 0..hdim {
                gates[j] = sigmoid(gates[j]);
                gates[hdim + j] = sigmoid(gates[hdim + j]);
                gates[2 * hdim + j] = gates[2 * hdim + j].tanh();
                gates[3 * hdim + j] = sigmoid(gates[3 * hdim + j]);
            }
            let c_prev = c.clone();
            let h_prev = h.clone();
            let mut tanh_c = vec![0.0; hdim];
            for j in 0..hdim {
                c[j] = gates[hdim + j] * c_prev[j] + gates[j] * gates[2 * hdim + j];
                tanh_c[j] = c[j].tanh();
                h[j] = gates[3 * hdim + j] * tanh_c[j];
            }
            steps.push(LstmStep {
                dest,
                x,
                h_prev,
                c_prev,
                gates,
                tanh_c,
            });
        }
        let input = self.head_input(f, &h);
        let mut acts = Vec::new();
        a.head().forward(&p[lay.head..], &input, &mut acts);
        let out = acts.last().unwrap()[0];
        (out, Trace { steps, acts })
    }

    pub fn raw(&self, f: &FeatureVector) -> f64 {
        self.forward_trace(f).0
    }

    /// Value in reward units.
    pub fn value(&self, f: &FeatureVector) -> Result<f64> {
        let v = self.raw(f) * self.arch.value_scale;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OdpError::ModelCorruption(format!("value network produced {v}")))
        }
    }

    /// Adds `d_out * d(raw output)/d(params)` into `grad`.
    pub fn backward(&self, trace: &Trace, d_out: f64, grad: &mut [f64]) {
        let a = &self.arch;
        let lay = a.layout();
        let hdim = a.hidden;
        let d_in = a.d_embed + 1;
        let p = &self.params;
        let d_head_in = a.head().backward(&p[lay.head..], &trace.acts, &[d_out], &mut grad[lay.head..]);
        let mut dh = d_head_in[..hdim].to_vec();
        let mut dc = vec![0.0; hdim];
        let mut dz = vec![0.0; 4 * hdim];
        for step in trace.steps.iter().rev() {
            let g = &step.gates;
            for j in 0..hdim {
                let (i, f, gg, o) = (g[j], g[hdim + j], g[2 * hdim + j], g[3 * hdim + j]);
                let tc = step.tanh_c[j];
                let do_ = dh[j] * tc;
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                dz[j] = dcj * gg * i * (1.0 - i);
                dz[hdim + j] = dcj * step.c_prev[j] * f * (1.0 - f);
                dz[2 * hdim + j] = dcj * i * (1.0 - gg * gg);
                dz[3 * hdim + j] = do_ * o * (1.0 - o);
                dc[j] = dcj * f;
            }
            let mut dx = vec![0.0; d_in];
            let mut dh_prev = vec![0.0; hdim];
            for (r, &z) in dz.iter().enumerate() {
                if z == 0.0 {
                    continue;
                }
                grad[lay.b + r] += z;
                for k in 0..d_in {
                    grad[lay.w + r * d_in + k] += z * step.x[k];
                    dx[k] += z * p[lay.w + r * d_in + k];
                }
                for k in 0..hdim {
                    grad[lay.u + r * hdim + k] += z * step.h_prev[k];
                    dh_prev[k] += z * p[lay.u + r * hdim + k];
                }
            }
            dh = dh_prev;
            for k in 0..a.d_embed {
                grad[step.dest * a.d_embed + k] += dx[k];
            }
        }
    }
}
