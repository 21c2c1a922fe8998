//! Trained-model file.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "LSAE1\n"
//! u32 dx, u32 dy, u32 dz          input dims
//! u32 layer_count
//! per layer: u8 kind, u32 in_ch, u32 out_ch, u8 activation, u8 batch_norm,
//!            u8 output_padding[3]
//! per layer: f64 weights[in·out·27], f64 bias[out],
//!            if batch_norm: f64 gamma[out], beta[out], running_mean[out],
//!            running_var[out]
//! ```

use super::net::{architecture, Activation, AEParams, BatchNorm, LayerKind, LayerParams, LayerSpec};
use super::AutoencoderError;

pub const MODEL_MAGIC: &[u8] = b"LSAE1\n";

pub fn encode_model(params: &AEParams) -> Vec<u8> {
    let mut out = MODEL_MAGIC.to_vec();
    for d in params.input_dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        let s = l.spec;
        out.push(match s.kind {
            LayerKind::Conv3d => 0,
            LayerKind::ConvTranspose3d => 1,
        });
        out.extend_from_slice(&(s.in_channels as u32).to_le_bytes());
        out.extend_from_slice(&(s.out_channels as u32).to_le_bytes());
        out.push(match s.activation {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        });
        out.push(u8::from(s.batch_norm));
        out.extend(s.output_padding.map(|p| p as u8));
    }
    let mut put = |v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    for l in &params.layers {
        put(&l.weights);
        put(&l.bias);
        if let Some(bn) = &l.bn {
            put(&bn.gamma);
            put(&bn.beta);
            put(&bn.running_mean);
            put(&bn.running_var);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutoencoderError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            AutoencoderError::Format(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, AutoencoderError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, AutoencoderError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, AutoencoderError> {
        let len = n.checked_mul(8).ok_or_else(|| AutoencoderError::Format("parameter count overflow".into()))?;
        let b = self.take(len)?;
        let v: Vec<f64> = b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(AutoencoderError::Format("non-finite parameter".into()));
        }
        Ok(v)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<AEParams, AutoencoderError> {
    if !bytes.starts_with(MODEL_MAGIC) {
        return Err(AutoencoderError::Format("bad magic, expected LSAE1".into()));
    }
    let mut r = Reader { bytes, pos: MODEL_MAGIC.len() };
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    // The layer table must equal the fixed architecture for these dims; this
    // also bounds every allocation below by the dims themselves.
    let expected = architecture(dims).map_err(|e| AutoencoderError::Format(e.to_string()))?;
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(AutoencoderError::Format(format!("expected {} layers, found {count}", expected.len())));
    }
    let mut specs = Vec::with_capacity(count);
    for want in &expected {
        let kind = match r.u8()? {
            0 => LayerKind::Conv3d,
            1 => LayerKind::ConvTranspose3d,
            k => return Err(AutoencoderError::Format(format!("unknown layer kind {k}"))),
        };
        let in_channels = r.u32()? as usize;
        let out_channels = r.u32()? as usize;
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            a => return Err(AutoencoderError::Format(format!("unknown activation {a}"))),
        };
        let batch_norm = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(AutoencoderError::Format(format!("bad batch-norm flag {b}"))),
        };
        let op = r.take(3)?;
        let spec = LayerSpec {
            kind,
            in_channels,
            out_channels,
            activation,
            batch_norm,
            output_padding: [op[0] as usize, op[1] as usize, op[2] as usize],
        };
        if spec != *want {
            return Err(AutoencoderError::Format(format!("layer table mismatch: {spec:?}")));
        }
        specs.push(spec);
    }
    let mut layers = Vec::with_capacity(count);
    for spec in specs {
        let weights = r.f64s(spec.weight_len())?;
        let bias = r.f64s(spec.out_channels)?;
        let bn = if spec.batch_norm {
            let c = spec.out_channels;
            let bn = BatchNorm { gamma: r.f64s(c)?, beta: r.f64s(c)?, running_mean: r.f64s(c)?, running_var: r.f64s(c)? };
            if bn.running_var.iter().any(|&v| v < 0.0) {
                return Err(AutoencoderError::Format("negative running variance".into()));
            }
            Some(bn)
        } else {
            None
        };
        layers.push(LayerParams { spec, weights, bias, bn });
    }
    if r.pos != bytes.len() {
        return Err(AutoencoderError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    AEParams::from_layers(dims, layers)
}
