//! Binary model persistence: a standalone factor file for MF and a named
//! block container for everything else. All integers are little-endian.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::codes::{BinaryCodeSet, DelegateMatrix};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::grouping::{Codebook, GroupProfile};
use crate::mf::FactorMatrix;

const MF_MAGIC: &[u8; 7] = b"CGAHMF1";
const CONTAINER_MAGIC: &[u8; 8] = b"CGAHMDL1";
const CONTAINER_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_u64s(buf: &mut Vec<u8>, vals: &[u64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::ModelFormat("truncated block".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        (0..n).map(|_| self.u64()).collect()
    }
}

/// Persist MF factors: magic, `n`, `m`, `r` as u32, then row-major f64 user
/// factors followed by item factors.
pub fn write_mf_model(path: &Path, factors: &FactorMatrix) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MF_MAGIC);
    put_u32(&mut buf, factors.n_users() as u32);
    put_u32(&mut buf, factors.n_items() as u32);
    put_u32(&mut buf, factors.r as u32);
    put_f64s(&mut buf, factors.user_factors());
    put_f64s(&mut buf, factors.item_factors());
    File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_mf_model(path: &Path) -> Result<FactorMatrix> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    if data.len() < 7 || &data[..7] != MF_MAGIC {
        return Err(Error::ModelFormat("missing CGAHMF1 magic".into()));
    }
    let mut cur = Cursor::new(&data[7..]);
    let n = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    let r = cur.u32()? as usize;
    let users = cur.f64s(n * r)?;
    let items = cur.f64s(m * r)?;
    FactorMatrix::from_parts(n, m, r, users, items)
}

/// Ordered named-block container; block order is part of the byte format,
/// so rewriting the same blocks reproduces identical files.
#[derive(Debug, Clone, Default)]
pub struct ModelContainer {
    blocks: Vec<(String, Vec<u8>)>,
}

impl ModelContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, payload: Vec<u8>) {
        self.blocks.push((name.to_string(), payload));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, p)| p.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(n, _)| n.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CONTAINER_MAGIC);
        put_u32(&mut buf, CONTAINER_VERSION);
        put_u32(&mut buf, self.blocks.len() as u32);
        for (name, payload) in &self.blocks {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            buf.extend_from_slice(payload);
        }
        File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        File::open(path)?.read_to_end(&mut data)?;
        if data.len() < 8 || &data[..8] != CONTAINER_MAGIC {
            return Err(Error::ModelFormat("missing CGAHMDL1 magic".into()));
        }
        let mut cur = Cursor::new(&data[8..]);
        let version = cur.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::ModelFormat(format!("unsupported container version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::ModelFormat("non-utf8 block name".into()))?;
            let payload_len = cur.u64()? as usize;
            blocks.push((name, cur.take(payload_len)?.to_vec()));
        }
        Ok(Self { blocks })
    }
}

// Block encodings. Each block repeats enough dimension info to be
// self-describing.

pub fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u32(&mut buf, cb.kappa() as u32);
    put_u32(&mut buf, cb.dim() as u32);
    put_f64s(&mut buf, cb.centroids());
    buf
}

pub fn decode_codebook(data: &[u8]) -> Result<Codebook> {
    let mut cur = Cursor::new(data);
    let kappa = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    Codebook::from_centroids(kappa, dim, cur.f64s(kappa * dim)?)
}

pub fn encode_profile(p: &GroupProfile) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u32(&mut buf, p.count() as u32);
    put_u32(&mut buf, p.kappa() as u32);
    put_f64s(&mut buf, p.rows());
    buf
}

pub fn decode_profile(data: &[u8]) -> Result<GroupProfile> {
    let mut cur = Cursor::new(data);
    let count = cur.u32()? as usize;
    let kappa = cur.u32()? as usize;
    GroupProfile::from_rows(count, kappa, cur.f64s(count * kappa)?)
}

pub fn encode_codes(c: &BinaryCodeSet) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u32(&mut buf, c.count() as u32);
    put_u32(&mut buf, c.code_len() as u32);
    put_u64s(&mut buf, c.words());
    buf
}

pub fn decode_codes(data: &[u8]) -> Result<BinaryCodeSet> {
    let mut cur = Cursor::new(data);
    let count = cur.u32()? as usize;
    let r = cur.u32()? as usize;
    BinaryCodeSet::from_words(count, r, cur.u64s(count * r.div_ceil(64))?)
}

pub fn encode_delegate(d: &DelegateMatrix) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u32(&mut buf, d.count() as u32);
    put_u32(&mut buf, d.code_len() as u32);
    put_f64s(&mut buf, d.values());
    buf
}

pub fn decode_delegate(data: &[u8]) -> Result<DelegateMatrix> {
    let mut cur = Cursor::new(data);
    let count = cur.u32()? as usize;
    let r = cur.u32()? as usize;
    DelegateMatrix::from_values(count, r, cur.f64s(count * r)?)
}

pub fn encode_encoder(e: &EncoderParams) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u32(&mut buf, e.input_dim as u32);
    put_u32(&mut buf, e.hidden_dim as u32);
    buf.extend_from_slice(&e.corruption.to_le_bytes());
    put_f64s(&mut buf, &e.w1);
    put_f64s(&mut buf, &e.b1);
    put_f64s(&mut buf, &e.w2);
    put_f64s(&mut buf, &e.b2);
    buf
}

pub fn decode_encoder(data: &[u8]) -> Result<EncoderParams> {
    let mut cur = Cursor::new(data);
    let input_dim = cur.u32()? as usize;
    let hidden_dim = cur.u32()? as usize;
    let corruption = cur.f64()?;
    Ok(EncoderParams {
        input_dim,
        hidden_dim,
        w1: cur.f64s(hidden_dim * input_dim)?,
        b1: cur.f64s(hidden_dim)?,
        w2: cur.f64s(input_dim * hidden_dim)?,
        b2: cur.f64s(input_dim)?,
        corruption,
    })
}

/// Key-value manifest block, `key=value` lines in insertion order.
pub fn encode_meta(pairs: &[(String, String)]) -> Vec<u8> {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out.into_bytes()
}

pub fn decode_meta(data: &[u8]) -> Result<Vec<(String, String)>> {
    let text =
        std::str::from_utf8(data).map_err(|_| Error::ModelFormat("non-utf8 meta block".into()))?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

/// Grouping artifacts persisted between the `group` and `train-cgah` stages.
#[derive(Debug, Clone)]
pub struct GroupsModel {
    pub codebook: Codebook,
    pub p: GroupProfile,
    pub q: GroupProfile,
}

impl GroupsModel {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut c = ModelContainer::new();
        c.push("K", encode_codebook(&self.codebook));
        c.push("P", encode_profile(&self.p));
        c.push("Q", encode_profile(&self.q));
        c.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = ModelContainer::read(path)?;
        let need = |name: &str| {
            c.get(name).ok_or_else(|| Error::ModelFormat(format!("missing block {name}")))
        };
        Ok(Self {
            codebook: decode_codebook(need("K")?)?,
            p: decode_profile(need("P")?)?,
            q: decode_profile(need("Q")?)?,
        })
    }
}

/// Encoder pair persisted by the `pretrain-dae` stage.
#[derive(Debug, Clone)]
pub struct EncodersModel {
    pub users: EncoderParams,
    pub items: EncoderParams,
}

impl EncodersModel {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut c = ModelContainer::new();
        c.push("ENC_U", encode_encoder(&self.users));
        c.push("ENC_I", encode_encoder(&self.items));
        c.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = ModelContainer::read(path)?;
        let need = |name: &str| {
            c.get(name).ok_or_else(|| Error::ModelFormat(format!("missing block {name}")))
        };
        Ok(Self { users: decode_encoder(need("ENC_U")?)?, items: decode_encoder(need("ENC_I")?)? })
    }
}

/// The full trained model: codes, delegates, profiles, codebook, optional
/// encoders, and a manifest.
#[derive(Debug, Clone)]
pub struct CgahModel {
    pub meta: Vec<(String, String)>,
    pub codebook: Codebook,
    pub p: GroupProfile,
    pub q: GroupProfile,
    pub b: BinaryCodeSet,
    pub d: BinaryCodeSet,
    pub x: DelegateMatrix,
    pub y: DelegateMatrix,
    pub enc_users: Option<EncoderParams>,
    pub enc_items: Option<EncoderParams>,
}

impl CgahModel {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut c = ModelContainer::new();
        c.push("META", encode_meta(&self.meta));
        c.push("K", encode_codebook(&self.codebook));
        c.push("P", encode_profile(&self.p));
        c.push("Q", encode_profile(&self.q));
        c.push("B", encode_codes(&self.b));
        c.push("D", encode_codes(&self.d));
        c.push("X", encode_delegate(&self.x));
        c.push("Y", encode_delegate(&self.y));
        if let Some(e) = &self.enc_users {
            c.push("ENC_U", encode_encoder(e));
        }
        if let Some(e) = &self.enc_items {
            c.push("ENC_I", encode_encoder(e));
        }
        c.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = ModelContainer::read(path)?;
        let need = |name: &str| {
            c.get(name).ok_or_else(|| Error::ModelFormat(format!("missing block {name}")))
        };
        Ok(Self {
            meta: decode_meta(need("META")?)?,
            codebook: decode_codebook(need("K")?)?,
            p: decode_profile(need("P")?)?,
            q: decode_profile(need("Q")?)?,
            b: decode_codes(need("B")?)?,
            d: decode_codes(need("D")?)?,
            x: decode_delegate(need("X")?)?,
            y: decode_delegate(need("Y")?)?,
            enc_users: c.get("ENC_U").map(decode_encoder).transpose()?,
            enc_items: c.get("ENC_I").map(decode_encoder).transpose()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mf_model_round_trip() {
        let f = FactorMatrix::from_parts(
            2,
            3,
            2,
            vec![0.1, -0.2, 0.3, 0.4],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mf");
        write_mf_model(&path, &f).unwrap();
        let back = read_mf_model(&path).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn mf_model_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mf");
        std::fs::write(&path, b"NOTAMODEL").unwrap();
        assert!(read_mf_model(&path).is_err());
    }

    #[test]
    fn container_round_trip_and_determinism() {
        let mut c = ModelContainer::new();
        c.push("A", vec![1, 2, 3]);
        c.push("B2", vec![9; 100]);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.bin");
        let p2 = dir.path().join("two.bin");
        c.write(&p1).unwrap();
        c.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = ModelContainer::read(&p1).unwrap();
        assert_eq!(back.get("A"), Some(&[1u8, 2, 3][..]));
        assert_eq!(back.get("B2").map(|b| b.len()), Some(100));
        assert_eq!(back.get("missing"), None);
    }

    #[test]
    fn cgah_model_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let codes = |count: usize, r: usize, rng: &mut ChaCha8Rng| {
            let rows: Vec<Vec<i8>> = (0..count)
                .map(|_| (0..r).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
                .collect();
            BinaryCodeSet::pack(&rows).unwrap()
        };
        let model = CgahModel {
            meta: vec![("mode".into(), "cf".into()), ("config_hash".into(), "abc".into())],
            codebook: Codebook::from_centroids(2, 3, vec![1.0, 0.0, 0.5, -1.0, 0.2, 0.0]).unwrap(),
            p: GroupProfile::from_rows(4, 2, (0..8).map(|i| i as f64 / 10.0).collect()).unwrap(),
            q: GroupProfile::from_rows(5, 2, (0..10).map(|i| i as f64 / 20.0).collect()).unwrap(),
            b: codes(4, 20, &mut rng),
            d: codes(5, 20, &mut rng),
            x: DelegateMatrix::from_values(4, 20, (0..80).map(|i| i as f64).collect()).unwrap(),
            y: DelegateMatrix::from_values(5, 20, (0..100).map(|i| i as f64).collect()).unwrap(),
            enc_users: Some(EncoderParams::init(3, 20, 0.2, 1).unwrap()),
            enc_items: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cgah");
        model.write(&path).unwrap();
        let back = CgahModel::read(&path).unwrap();
        assert_eq!(back.meta_value("mode"), Some("cf"));
        assert_eq!(back.b, model.b);
        assert_eq!(back.d, model.d);
        assert_eq!(back.p, model.p);
        assert_eq!(back.x, model.x);
        assert_eq!(back.enc_users, model.enc_users);
        assert!(back.enc_items.is_none());
    }
}
