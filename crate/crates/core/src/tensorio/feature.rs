use std::io::{self, Read, Write};

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PBFT";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: u64 = 24;

/// An `h × w` grid of `d`-dimensional patch tokens for one image.
///
/// `data` is row-major over patches with the feature index varying fastest:
/// token `p = row * w + col` occupies `data[p * d..(p + 1) * d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub image_id: String,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(image_id: impl Into<String>, h: usize, w: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        let map = FeatureMap {
            image_id: image_id.into(),
            h,
            w,
            d,
            data,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.d == 0 {
            return Err(Error::Invariant(format!(
                "feature map dims must be positive, got {}x{}x{}",
                self.h, self.w, self.d
            )));
        }
        let expected = self.h * self.w * self.d;
        if self.data.len() != expected {
            return Err(Error::Invariant(format!(
                "feature map data length {} != h*w*d = {expected}",
                self.data.len()
            )));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.h * self.w
    }

    pub fn token(&self, index: usize) -> &[f32] {
        &self.data[index * self.d..(index + 1) * self.d]
    }

    pub fn token_at(&self, row: usize, col: usize) -> &[f32] {
        self.token(row * self.w + col)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        // write_all may have pushed part of `bytes`; the offset reported is
        // where this field started.
        self.inner.write_all(bytes).map_err(|source| Error::Stream {
            offset: self.written,
            source,
        })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Serializes `map` as a `PBFT` container and returns the number of bytes
/// written.
///
/// Layout, little-endian throughout: magic `PBFT`, `u32` version, `u32` h,
/// `u32` w, `u32` d, `u32` image-id length, the UTF-8 image id, then
/// `h*w*d` `f32` values.
pub fn write_feature_map<W: Write>(map: &FeatureMap, sink: W) -> Result<u64> {
    map.validate()?;
    let dim = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| Error::Invariant(format!("{name} = {v} does not fit in u32")))
    };
    let id = map.image_id.as_bytes();
    let mut out = CountingWriter { inner: sink, written: 0 };
    out.put(&MAGIC)?;
    out.put(&FORMAT_VERSION.to_le_bytes())?;
    out.put(&dim(map.h, "h")?.to_le_bytes())?;
    out.put(&dim(map.w, "w")?.to_le_bytes())?;
    out.put(&dim(map.d, "d")?.to_le_bytes())?;
    out.put(&dim(id.len(), "image_id length")?.to_le_bytes())?;
    out.put(id)?;
    let mut payload = Vec::with_capacity(map.data.len() * 4);
    for v in &map.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.put(&payload)?;
    Ok(out.written)
}

fn read_exact_or_length<R: Read>(src: &mut R, buf: &mut [u8], consumed: u64, expected_total: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Length {
                    expected: expected_total,
                    actual: consumed + filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(source) => {
                return Err(Error::Stream {
                    offset: consumed + filled as u64,
                    source,
                })
            }
        }
    }
    Ok(())
}

/// Parses a `PBFT` container, validating magic, version, payload length and
/// finiteness.
pub fn read_feature_map<R: Read>(mut source: R) -> Result<FeatureMap> {
    let mut header = [0u8; HEADER_LEN as usize];
    read_exact_or_length(&mut source, &mut header, 0, HEADER_LEN)?;
    if header[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            &header[..4],
            MAGIC
        )));
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = field(0);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (h, w, d, id_len) = (field(1) as usize, field(2) as usize, field(3) as usize, field(4) as u64);
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::Format(format!("zero dimension in header: {h}x{w}x{d}")));
    }
    let n = (h as u64)
        .checked_mul(w as u64)
        .and_then(|v| v.checked_mul(d as u64))
        .ok_or_else(|| Error::Format("h*w*d overflows".into()))?;
    let total = HEADER_LEN + id_len + 4 * n;

    let mut id = vec![0u8; id_len as usize];
    read_exact_or_length(&mut source, &mut id, HEADER_LEN, total)?;
    let image_id = String::from_utf8(id).map_err(|_| Error::Format("image_id is not UTF-8".into()))?;

    let mut payload = vec![0u8; 4 * n as usize];
    read_exact_or_length(&mut source, &mut payload, HEADER_LEN + id_len, total)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(FeatureMap { image_id, h, w, d, data })
}
