//! Binary model archive.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header : magic "DSQA" | version u32 (= 1) | record_count u32
//! record : name_len u16 | name (UTF-8)
//!          kind u8      0 dense weight, 1 conv weight, 2 bias, 3 activation quantizer
//!          encoding u8  0 signed i8 codes, 1 f64 values
//!          attrs u32    bit 0 ReLU, bit 1 quantize weights, bit 2 quantize
//!                       activations, bits 8..16 conv padding
//!          ndim u8 | dims u32 * ndim
//!          bits u8 | lower f64 | upper f64 | alpha f64
//!          payload_len u64 | payload
//! ```
//!
//! A code `c` stands for level `c + 2^(bits-1)` of the record's quantizer.
//! Networks are stored as `layerN.weight`, `layerN.bias` and `layerN.act`
//! records; the `act` record has an empty payload and only carries the
//! activation quantizer.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{init_clipping, Activation, ClipPolicy, LayerKind, Network, QuantizedLayer};
use crate::quant::{uniform_level, QuantParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DSQA";
pub const VERSION: u32 = 1;

pub const ATTR_RELU: u32 = 1;
pub const ATTR_QUANT_WEIGHTS: u32 = 1 << 1;
pub const ATTR_QUANT_ACTS: u32 = 1 << 2;
const PADDING_SHIFT: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    DenseWeight = 0,
    ConvWeight = 1,
    Bias = 2,
    ActQuant = 3,
}

impl RecordKind {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Self::DenseWeight,
            1 => Self::ConvWeight,
            2 => Self::Bias,
            3 => Self::ActQuant,
            other => return Err(fmt_err(format!("unknown record kind {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Codes(Vec<i8>),
    Values(Vec<f64>),
}

/// Quantizer fields exactly as stored; not validated for `f64` records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantFields {
    pub bits: u8,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
}

impl From<&QuantParams> for QuantFields {
    fn from(q: &QuantParams) -> Self {
        Self {
            bits: q.bits(),
            lower: q.lower(),
            upper: q.upper(),
            alpha: q.alpha(),
        }
    }
}

impl QuantFields {
    pub fn params(&self) -> Result<QuantParams> {
        QuantParams::new(self.bits, self.lower, self.upper, self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRecord {
    pub name: String,
    pub kind: RecordKind,
    pub attrs: u32,
    pub shape: Vec<usize>,
    pub quant: QuantFields,
    pub payload: Payload,
}

impl ArchiveRecord {
    /// Values of the record, decoding codes through the quantizer levels.
    pub fn values(&self) -> Result<Vec<f64>> {
        match &self.payload {
            Payload::Values(v) => Ok(v.clone()),
            Payload::Codes(c) => {
                let qp = self.quant.params()?;
                let half = 1i32 << (qp.bits() - 1);
                c.iter()
                    .map(|&c| {
                        let j = c as i32 + half;
                        if j < 0 || j as usize >= qp.levels() {
                            Err(fmt_err(format!(
                                "code {c} outside the {}-bit range in `{}`",
                                qp.bits(),
                                self.name
                            )))
                        } else {
                            Ok(qp.level(j as usize))
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.values()?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelArchive {
    pub records: Vec<ArchiveRecord>,
}

fn fmt_err(message: String) -> Error {
    Error::Format {
        format: "archive",
        message,
    }
}

/// Quantizes `t` to signed codes of `qp` (any supported bit width).
fn encode_codes(t: &Tensor, qp: &QuantParams) -> Vec<i8> {
    let half = 1i32 << (qp.bits() - 1);
    t.data()
        .iter()
        .map(|&x| (uniform_level(x, qp) as i32 - half) as i8)
        .collect()
}

impl ModelArchive {
    /// Snapshot of a network. With `codes`, the weights of layers that
    /// quantize them are stored as integer codes (their hard-quantized
    /// values); all other tensors are stored as `f64`.
    pub fn from_network(net: &Network, codes: bool) -> Self {
        let mut records = Vec::new();
        for (i, layer) in net.layers().iter().enumerate() {
            let mut attrs = 0;
            if layer.activation == Activation::Relu {
                attrs |= ATTR_RELU;
            }
            if layer.quantize_weights {
                attrs |= ATTR_QUANT_WEIGHTS;
            }
            if layer.quantize_acts {
                attrs |= ATTR_QUANT_ACTS;
            }
            let kind = match layer.kind {
                LayerKind::Dense { .. } => RecordKind::DenseWeight,
                LayerKind::Conv2d { padding, .. } => {
                    attrs |= (padding as u32) << PADDING_SHIFT;
                    RecordKind::ConvWeight
                }
            };
            let payload = if codes && layer.quantize_weights {
                Payload::Codes(encode_codes(&layer.weights, &layer.weight_qp))
            } else {
                Payload::Values(layer.weights.data().to_vec())
            };
            records.push(ArchiveRecord {
                name: format!("layer{i}.weight"),
                kind,
                attrs,
                shape: layer.weights.shape().to_vec(),
                quant: (&layer.weight_qp).into(),
                payload,
            });
            records.push(ArchiveRecord {
                name: format!("layer{i}.bias"),
                kind: RecordKind::Bias,
                attrs: 0,
                shape: vec![layer.bias.len()],
                quant: (&layer.weight_qp).into(),
                payload: Payload::Values(layer.bias.clone()),
            });
            records.push(ArchiveRecord {
                name: format!("layer{i}.act"),
                kind: RecordKind::ActQuant,
                attrs: 0,
                shape: vec![0],
                quant: (&layer.act_qp).into(),
                payload: Payload::Values(Vec::new()),
            });
        }
        Self { records }
    }

    pub fn find(&self, name: &str) -> Option<&ArchiveRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Rebuilds a network from `layerN.*` records.
    pub fn to_network(&self) -> Result<Network> {
        let mut layers = Vec::new();
        for i in 0.. {
            let Some(w) = self.find(&format!("layer{i}.weight")) else {
                break;
            };
            let missing = |what: &str| fmt_err(format!("missing record layer{i}.{what}"));
            let bias = self
                .find(&format!("layer{i}.bias"))
                .ok_or_else(|| missing("bias"))?;
            let act = self
                .find(&format!("layer{i}.act"))
                .ok_or_else(|| missing("act"))?;
            let weights = w.tensor()?;
            let mut layer = match w.kind {
                RecordKind::DenseWeight => QuantizedLayer::dense(weights, w.quant.bits)?,
                RecordKind::ConvWeight => QuantizedLayer::conv2d(
                    weights,
                    ((w.attrs >> PADDING_SHIFT) & 0xff) as usize,
                    w.quant.bits,
                )?,
                other => return Err(fmt_err(format!("layer{i}.weight has kind {other:?}"))),
            };
            layer.weight_qp = w.quant.params()?;
            layer.act_qp = act.quant.params()?;
            layer = layer
                .with_quantization(
                    w.attrs & ATTR_QUANT_WEIGHTS != 0,
                    w.attrs & ATTR_QUANT_ACTS != 0,
                )
                .with_bias(bias.values()?)?;
            if w.attrs & ATTR_RELU != 0 {
                layer = layer.with_activation(Activation::Relu);
            }
            layers.push(layer);
        }
        Network::new(layers)
    }

    /// Post-training quantization: every `f64` weight record of an inner
    /// layer gets clipping bounds from `policy` and is replaced by `bits`-bit
    /// codes. First and last layers stay in full precision.
    pub fn quantize(&self, bits: u8, policy: ClipPolicy, ma_decay: f64) -> Result<Self> {
        crate::gemm::mac_budget(bits)?;
        let weights: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r.kind, RecordKind::DenseWeight | RecordKind::ConvWeight))
            .map(|(i, _)| i)
            .collect();
        let mut out = self.clone();
        for (pos, &idx) in weights.iter().enumerate() {
            if pos == 0 || pos + 1 == weights.len() {
                continue;
            }
            let rec = &mut out.records[idx];
            let Payload::Values(v) = &rec.payload else {
                continue;
            };
            let t = Tensor::new(rec.shape.clone(), v.clone())?;
            let (l, u) = init_clipping(&t, policy, ma_decay)?;
            let qp = QuantParams::with_clamped_alpha(bits, l, u, rec.quant.alpha)?;
            rec.payload = Payload::Codes(crate::gemm::quantize_to_codes(&t, &qp)?.codes().to_vec());
            rec.quant = (&qp).into();
            rec.attrs |= ATTR_QUANT_WEIGHTS;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count =
            u32::try_from(self.records.len()).map_err(|_| fmt_err("too many records".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for r in &self.records {
            let name_len = u16::try_from(r.name.len())
                .map_err(|_| fmt_err(format!("name `{}` too long", r.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.kind as u8);
            out.push(match r.payload {
                Payload::Codes(_) => 0,
                Payload::Values(_) => 1,
            });
            out.extend_from_slice(&r.attrs.to_le_bytes());
            let ndim =
                u8::try_from(r.shape.len()).map_err(|_| fmt_err("too many dimensions".into()))?;
            out.push(ndim);
            for &d in &r.shape {
                let d =
                    u32::try_from(d).map_err(|_| fmt_err(format!("dimension {d} too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(r.quant.bits);
            for v in [r.quant.lower, r.quant.upper, r.quant.alpha] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let count = r.shape.iter().product::<usize>();
            match &r.payload {
                Payload::Codes(c) => {
                    if c.len() != count {
                        return Err(fmt_err(format!(
                            "`{}` holds {} codes for shape {:?}",
                            r.name,
                            c.len(),
                            r.shape
                        )));
                    }
                    out.extend_from_slice(&(c.len() as u64).to_le_bytes());
                    out.extend(c.iter().map(|&v| v as u8));
                }
                Payload::Values(v) => {
                    if v.len() != count {
                        return Err(fmt_err(format!(
                            "`{}` holds {} values for shape {:?}",
                            r.name,
                            v.len(),
                            r.shape
                        )));
                    }
                    out.extend_from_slice(&((v.len() * 8) as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(fmt_err("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| fmt_err("record name is not UTF-8".into()))?;
            let kind = RecordKind::from_u8(r.u8()?)?;
            let encoding = r.u8()?;
            let attrs = r.u32()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let quant = QuantFields {
                bits: r.u8()?,
                lower: r.f64()?,
                upper: r.f64()?,
                alpha: r.f64()?,
            };
            let len = usize::try_from(r.u64()?).map_err(|_| fmt_err("payload too large".into()))?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| fmt_err("shape overflow".into()))?;
            let body = r.take(len)?;
            let payload = match encoding {
                0 => {
                    if len != count {
                        return Err(fmt_err(format!(
                            "`{name}`: {len} code bytes for shape {shape:?}"
                        )));
                    }
                    let qp = quant.params()?;
                    let half = 1i16 << (qp.bits() - 1);
                    let codes: Vec<i8> = body.iter().map(|&b| b as i8).collect();
                    if let Some(c) = codes
                        .iter()
                        .find(|&&c| (c as i16) < -half || (c as i16) >= half)
                    {
                        return Err(fmt_err(format!(
                            "`{name}`: code {c} outside the {}-bit range",
                            qp.bits()
                        )));
                    }
                    Payload::Codes(codes)
                }
                1 => {
                    if len != count * 8 {
                        return Err(fmt_err(format!(
                            "`{name}`: {len} value bytes for shape {shape:?}"
                        )));
                    }
                    Payload::Values(
                        body.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                other => return Err(fmt_err(format!("`{name}`: unknown encoding {other}"))),
            };
            records.push(ArchiveRecord {
                name,
                kind,
                attrs,
                shape,
                quant,
                payload,
            });
        }
        if r.pos != bytes.len() {
            return Err(fmt_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| fmt_err("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::QuantPass;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        Network::mlp(3, &[6, 5], 2, 2, &mut rng).unwrap()
    }

    #[test]
    fn byte_round_trip() {
        for codes in [false, true] {
            let a = ModelArchive::from_network(&net(), codes);
            let bytes = a.to_bytes().unwrap();
            assert_eq!(&bytes[..4], b"DSQA");
            let b = ModelArchive::from_bytes(&bytes).unwrap();
            assert_eq!(a, b);
            assert_eq!(b.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn float_archive_restores_network() {
        let n = net();
        let back = ModelArchive::from_network(&n, false).to_network().unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn coded_archive_keeps_hard_forward() {
        let n = net();
        let back = ModelArchive::from_network(&n, true).to_network().unwrap();
        let x = Tensor::new(
            vec![4, 3],
            (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        assert_eq!(
            back.forward(&x, &QuantPass::hard()).unwrap(),
            n.forward(&x, &QuantPass::hard()).unwrap()
        );
    }

    #[test]
    fn rejects_corruption() {
        let bytes = ModelArchive::from_network(&net(), true).to_bytes().unwrap();
        assert!(ModelArchive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelArchive::from_bytes(&bad).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(ModelArchive::from_bytes(&trailing).is_err());
    }

    #[test]
    fn post_training_quantization() {
        let a = ModelArchive::from_network(&net(), false)
            .quantize(2, ClipPolicy::Learned, 0.9)
            .unwrap();
        let inner = a.find("layer1.weight").unwrap();
        let Payload::Codes(c) = &inner.payload else {
            panic!("inner layer not coded")
        };
        assert!(c.iter().all(|&v| (-2..=1).contains(&v)));
        assert!(matches!(
            a.find("layer0.weight").unwrap().payload,
            Payload::Values(_)
        ));
        assert!(ModelArchive::from_network(&net(), false)
            .quantize(5, ClipPolicy::Learned, 0.9)
            .is_err());
    }
}
