//! Flat named-array container used for parameter and trace fixtures.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"LQNA"   version u32 = 1   count u32
//! count x { name_len u32, name utf-8, rank u32, dims u64 x rank, data f64 x prod(dims) }
//! ```
//!
//! Entries are written in name order, so equal maps encode to equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use super::{NnError, Tensor};

const MAGIC: &[u8; 4] = b"LQNA";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedArrays {
    arrays: BTreeMap<String, Tensor>,
}

impl NamedArrays {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.arrays
            .get(name)
            .ok_or_else(|| NnError::Container(format!("missing array `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64, NnError> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(NnError::Container(format!("`{name}` is not a scalar")));
        }
        Ok(t.data()[0])
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Container("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Container(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut out = NamedArrays::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| NnError::Container("array name is not utf-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_, _>>()?;
            out.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(NnError::Container("trailing bytes".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|e| NnError::Container(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Container("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parameter sets that flatten into a [`NamedArrays`] under a name prefix.
pub trait ParamSet: Sized {
    fn export(&self, prefix: &str, out: &mut NamedArrays);
    fn import(prefix: &str, arrays: &NamedArrays) -> Result<Self, NnError>;
}

use super::{
    AsppParams, AtrousBranch, ChannelAttentionParams, ConvParams, LinearParams, MhaParams,
    SpatialAttentionParams,
};

impl ParamSet for LinearParams {
    fn export(&self, prefix: &str, out: &mut NamedArrays) {
        out.insert(format!("{prefix}.weight"), self.weight.clone());
        out.insert(format!("{prefix}.bias"), self.bias.clone());
    }

    fn import(prefix: &str, a: &NamedArrays) -> Result<Self, NnError> {
        Ok(LinearParams {
            weight: a.get(&format!("{prefix}.weight"))?.clone(),
            bias: a.get(&format!("{prefix}.bias"))?.clone(),
        })
    }
}

impl ParamSet for ConvParams {
    fn export(&self, prefix: &str, out: &mut NamedArrays) {
        out.insert(format!("{prefix}.weight"), self.weight.clone());
        out.insert(format!("{prefix}.bias"), self.bias.clone());
    }

    fn import(prefix: &str, a: &NamedArrays) -> Result<Self, NnError> {
        Ok(ConvParams {
            weight: a.get(&format!("{prefix}.weight"))?.clone(),
            bias: a.get(&format!("{prefix}.bias"))?.clone(),
        })
    }
}

impl ParamSet for MhaParams {
    fn export(&self, prefix: &str, out: &mut NamedArrays) {
        out.insert(format!("{prefix}.heads"), Tensor::scalar(self.heads as f64));
        self.query.export(&format!("{prefix}.query"), out);
        self.key.export(&format!("{prefix}.key"), out);
        self.value.export(&format!("{prefix}.value"), out);
        self.output.export(&format!("{prefix}.output"), out);
    }

    fn import(prefix: &str, a: &NamedArrays) -> Result<Self, NnError> {
        Ok(MhaParams {
            heads: a.scalar(&format!("{prefix}.heads"))? as usize,
            query: LinearParams::import(&format!("{prefix}.query"), a)?,
            key: LinearParams::import(&format!("{prefix}.key"), a)?,
            value: LinearParams::import(&format!("{prefix}.value"), a)?,
            output: LinearParams::import(&format!("{prefix}.output"), a)?,
        })
    }
}

impl ParamSet for ChannelAttentionParams {
    fn export(&self, prefix: &str, out: &mut NamedArrays) {
        self.squeeze.export(&format!("{prefix}.squeeze"), out);
        self.excite.export(&format!("{prefix}.excite"), out);
    }

    fn import(prefix: &str, a: &NamedArrays) -> Result<Self, NnError> {
        Ok(ChannelAttentionParams {
            squeeze: LinearParams::import(&format!("{prefix}.squeeze"), a)?,
            excite: LinearParams::import(&format!("{prefix}.excite"), a)?,
        })
    }
}

impl ParamSet for SpatialAttentionParams {
    fn export(&self, prefix: &str, out: &mut NamedArrays) {
        self.conv.export(&format!("{prefix}.conv"), out);
    }

    fn import(prefix: &str, a: &NamedArrays) -> Result<Self, NnError> {
        Ok(SpatialAttentionParams {
            conv: ConvParams::import(&format!("{prefix}.conv"), a)?,
        })
    }
}

impl ParamSet for AsppParams {
    fn export(&self, prefix: &str, out: &mut NamedArrays) {
        self.project.export(&format!("{prefix}.project"), out);
        let rates: Vec<f64> = self.atrous.iter().map(|b| b.rate as f64).collect();
        out.insert(
            format!("{prefix}.rates"),
            Tensor::from_vec(&[rates.len()], rates).expect("rank-1"),
        );
        for (i, b) in self.atrous.iter().enumerate() {
            b.conv.export(&format!("{prefix}.atrous{i}"), out);
        }
        self.pooled.export(&format!("{prefix}.pooled"), out);
        self.merge.export(&format!("{prefix}.merge"), out);
    }

    fn import(prefix: &str, a: &NamedArrays) -> Result<Self, NnError> {
        let rates = a.get(&format!("{prefix}.rates"))?;
        let atrous = rates
            .data()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(AtrousBranch {
                    conv: ConvParams::import(&format!("{prefix}.atrous{i}"), a)?,
                    rate: *r as usize,
                })
            })
            .collect::<Result<_, NnError>>()?;
        Ok(AsppParams {
            project: ConvParams::import(&format!("{prefix}.project"), a)?,
            atrous,
            pooled: ConvParams::import(&format!("{prefix}.pooled"), a)?,
            merge: ConvParams::import(&format!("{prefix}.merge"), a)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::aspp::DEFAULT_RATES;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encodes_little_endian_layout() {
        let mut a = NamedArrays::new();
        a.insert("x", Tensor::from_vec(&[2], vec![1.0, -2.5]).unwrap());
        let b = a.to_bytes();
        assert_eq!(&b[..4], b"LQNA");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        let tail = &b[b.len() - 16..];
        assert_eq!(f64::from_le_bytes(tail[..8].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(tail[8..].try_into().unwrap()), -2.5);
        assert_eq!(NamedArrays::from_bytes(&b).unwrap(), a);
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let mut a = NamedArrays::new();
        a.insert("x", Tensor::zeros(&[3, 2]));
        let b = a.to_bytes();
        assert!(NamedArrays::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(NamedArrays::from_bytes(b"nope").is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(NamedArrays::from_bytes(&extra).is_err());
    }

    #[test]
    fn params_survive_export_import() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mha = MhaParams::init(8, 4, &mut r).unwrap();
        let aspp = AsppParams::init(4, 3, 6, &DEFAULT_RATES, &mut r);
        let mut arrays = NamedArrays::new();
        mha.export("m", &mut arrays);
        aspp.export("a", &mut arrays);
        let decoded = NamedArrays::from_bytes(&arrays.to_bytes()).unwrap();
        assert_eq!(MhaParams::import("m", &decoded).unwrap(), mha);
        assert_eq!(AsppParams::import("a", &decoded).unwrap(), aspp);
        assert!(MhaParams::import("missing", &decoded).is_err());
    }
}
