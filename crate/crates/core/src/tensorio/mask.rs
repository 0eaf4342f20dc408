use std::io::{BufRead, Write};

use crate::{Error, Result};

/// Image-resolution object mask. `bits` is row-major, `width` columns by
/// `height` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Invariant(format!(
                "pixel mask has {} bits, expected {width}x{height}",
                bits.len()
            )));
        }
        Ok(PixelMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        PixelMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        PixelMask { width, height, bits }
    }

    /// Membership test; out-of-bounds coordinates are outside the mask.
    pub fn get(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Patch-grid object mask, row-major `h × w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub image_id: String,
    pub object_id: i64,
    pub h: usize,
    pub w: usize,
    pub bits: Vec<bool>,
}

impl PatchMask {
    pub fn new(image_id: impl Into<String>, object_id: i64, h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 || bits.len() != h * w {
            return Err(Error::Invariant(format!(
                "patch mask has {} bits for a {h}x{w} grid",
                bits.len()
            )));
        }
        Ok(PatchMask {
            image_id: image_id.into(),
            object_id,
            h,
            w,
            bits,
        })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Maps a pixel mask onto the patch grid by majority vote.
///
/// The grid covers `ceil(width / patch_size) × ceil(height / patch_size)`
/// patches; the image is padded bottom/right with background. A patch is set
/// when at least half of its `patch_size²` pixels are object pixels.
pub fn rasterize_mask_to_patches(
    pixel_mask: &PixelMask,
    patch_size: usize,
    image_id: impl Into<String>,
    object_id: i64,
) -> Result<PatchMask> {
    if patch_size == 0 {
        return Err(Error::Argument("patch_size must be positive".into()));
    }
    if pixel_mask.width == 0 || pixel_mask.height == 0 {
        return Err(Error::Argument("pixel mask is empty".into()));
    }
    let w = pixel_mask.width.div_ceil(patch_size);
    let h = pixel_mask.height.div_ceil(patch_size);
    let mut counts = vec![0usize; h * w];
    for y in 0..pixel_mask.height {
        let row = y / patch_size;
        for x in 0..pixel_mask.width {
            if pixel_mask.bits[y * pixel_mask.width + x] {
                counts[row * w + x / patch_size] += 1;
            }
        }
    }
    let full = patch_size * patch_size;
    let bits = counts.into_iter().map(|c| 2 * c >= full).collect();
    PatchMask::new(image_id, object_id, h, w, bits)
}

fn pgm_token<R: BufRead>(src: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if src.read(&mut byte).map_err(|e| Error::Stream { offset: 0, source: e })? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && token.is_empty() {
            let mut comment = Vec::new();
            src.read_until(b'\n', &mut comment)
                .map_err(|e| Error::Stream { offset: 0, source: e })?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(c);
    }
    if token.is_empty() {
        return Err(Error::Format("unexpected end of PGM header".into()));
    }
    String::from_utf8(token).map_err(|_| Error::Format("PGM header is not ASCII".into()))
}

/// Reads a binary (P5) 8-bit PGM; any nonzero sample is an object pixel.
pub fn read_pgm<R: BufRead>(mut source: R) -> Result<PixelMask> {
    let magic = pgm_token(&mut source)?;
    if magic != "P5" {
        return Err(Error::Format(format!("expected P5 PGM, found {magic:?}")));
    }
    let mut number = |name: &str| -> Result<usize> {
        let t = pgm_token(&mut source)?;
        t.parse()
            .map_err(|_| Error::Format(format!("bad PGM {name}: {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // pgm_token consumed the single whitespace byte after maxval.
    let mut raster = vec![0u8; width * height];
    source.read_exact(&mut raster).map_err(|_| Error::Length {
        expected: (width * height) as u64,
        actual: 0,
    })?;
    Ok(PixelMask {
        width,
        height,
        bits: raster.into_iter().map(|v| v != 0).collect(),
    })
}

/// Writes an 8-bit P5 PGM from raw grayscale samples.
pub fn write_pgm<W: Write>(mut sink: W, width: usize, height: usize, samples: &[u8]) -> Result<()> {
    if samples.len() != width * height {
        return Err(Error::Argument(format!(
            "{} samples for a {width}x{height} image",
            samples.len()
        )));
    }
    let header = format!("P5\n{width} {height}\n255\n");
    sink.write_all(header.as_bytes())
        .map_err(|e| Error::Stream { offset: 0, source: e })?;
    sink.write_all(samples).map_err(|e| Error::Stream {
        offset: header.len() as u64,
        source: e,
    })
}

impl PixelMask {
    pub fn write_pgm<W: Write>(&self, sink: W) -> Result<()> {
        let samples: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(sink, self.width, self.height, &samples)
    }
}
