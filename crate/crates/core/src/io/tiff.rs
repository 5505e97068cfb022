//! Baseline grayscale TIFF: uncompressed, strip-organised, 8 or 16 bits per
//! sample, unsigned, BlackIsZero. Anything else is rejected by name.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stack::{ImageStack, StackMeta};

use super::{atomic_write, read_file};

const TAG_WIDTH: u16 = 256;
const TAG_LENGTH: u16 = 257;
const TAG_BITS: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTES: u16 = 279;
const TAG_X_RES: u16 = 282;
const TAG_Y_RES: u16 = 283;
const TAG_PLANAR: u16 = 284;
const TAG_RES_UNIT: u16 = 296;
const TAG_COLORMAP: u16 = 320;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_TILE_OFFSETS: u16 = 324;
const TAG_SAMPLE_FORMAT: u16 = 339;

const SHORT: u16 = 3;
const LONG: u16 = 4;
const RATIONAL: u16 = 5;

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedTiff(msg.into())
}

fn unsupported(name: impl Into<String>) -> Error {
    Error::UnsupportedTiff(name.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn slice(&self, offset: u64, len: u64) -> Result<&[u8]> {
        let end = offset.checked_add(len).ok_or_else(|| malformed("offset overflow"))?;
        if end > self.bytes.len() as u64 {
            return Err(malformed(format!(
                "truncated file: need bytes {}..{} of {}",
                offset,
                end,
                self.bytes.len()
            )));
        }
        Ok(&self.bytes[offset as usize..end as usize])
    }

    fn u16(&self, offset: u64) -> Result<u16> {
        let b: [u8; 2] = self.slice(offset, 2)?.try_into().unwrap();
        Ok(if self.little {
            u16::from_le_bytes(b)
        } else {
            u16::from_be_bytes(b)
        })
    }

    fn u32(&self, offset: u64) -> Result<u32> {
        let b: [u8; 4] = self.slice(offset, 4)?.try_into().unwrap();
        Ok(if self.little {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        })
    }
}

struct Entry {
    tag: u16,
    kind: u16,
    count: u32,
    /// Offset of the 4-byte value field within the file.
    field: u64,
}

impl Entry {
    fn values(&self, r: &Reader) -> Result<Vec<u64>> {
        let size: u64 = match self.kind {
            1 => 1,
            SHORT => 2,
            LONG => 4,
            other => {
                return Err(malformed(format!("tag {} has non-integer type {}", self.tag, other)));
            }
        };
        let total = size * self.count as u64;
        let start = if total <= 4 {
            self.field
        } else {
            r.u32(self.field)? as u64
        };
        // Bounds-check before allocating.
        r.slice(start, total)?;
        (0..self.count as u64)
            .map(|i| {
                let at = start + i * size;
                Ok(match size {
                    1 => r.slice(at, 1)?[0] as u64,
                    2 => r.u16(at)? as u64,
                    _ => r.u32(at)? as u64,
                })
            })
            .collect()
    }

    fn scalar(&self, r: &Reader) -> Result<u64> {
        let v = self.values(r)?;
        v.first()
            .copied()
            .ok_or_else(|| malformed(format!("tag {} has no value", self.tag)))
    }
}

struct Page {
    width: usize,
    height: usize,
    bits: u8,
    pixels: Vec<f32>,
}

fn find(entries: &[Entry], tag: u16) -> Option<&Entry> {
    entries.iter().find(|e| e.tag == tag)
}

fn decode_page(r: &Reader, entries: &[Entry]) -> Result<Page> {
    let get = |tag: u16, name: &str| -> Result<u64> {
        find(entries, tag)
            .ok_or_else(|| malformed(format!("missing {} tag", name)))?
            .scalar(r)
    };
    let opt = |tag: u16, default: u64| -> Result<u64> {
        match find(entries, tag) {
            Some(e) => e.scalar(r),
            None => Ok(default),
        }
    };

    if find(entries, TAG_TILE_WIDTH).is_some() || find(entries, TAG_TILE_OFFSETS).is_some() {
        return Err(unsupported("tiled layout"));
    }
    match opt(TAG_COMPRESSION, 1)? {
        1 => {}
        2..=4 => return Err(unsupported("CCITT compression")),
        5 => return Err(unsupported("LZW compression")),
        6 | 7 => return Err(unsupported("JPEG compression")),
        8 | 32946 => return Err(unsupported("Deflate compression")),
        32773 => return Err(unsupported("PackBits compression")),
        c => return Err(unsupported(format!("compression scheme {}", c))),
    }
    match opt(TAG_PHOTOMETRIC, 1)? {
        1 => {}
        0 => return Err(unsupported("WhiteIsZero photometric interpretation")),
        2 => return Err(unsupported("RGB photometric interpretation")),
        3 => return Err(unsupported("palette color")),
        p => return Err(unsupported(format!("photometric interpretation {}", p))),
    }
    if find(entries, TAG_COLORMAP).is_some() {
        return Err(unsupported("palette color"));
    }
    let samples = opt(TAG_SAMPLES, 1)?;
    if samples != 1 {
        return Err(unsupported(format!("{} samples per pixel", samples)));
    }
    if opt(TAG_PLANAR, 1)? != 1 {
        return Err(unsupported("planar configuration"));
    }
    match opt(TAG_SAMPLE_FORMAT, 1)? {
        1 => {}
        2 => return Err(unsupported("signed integer samples")),
        3 => return Err(unsupported("floating-point samples")),
        f => return Err(unsupported(format!("sample format {}", f))),
    }
    let bits = opt(TAG_BITS, 1)?;
    if bits != 8 && bits != 16 {
        return Err(unsupported(format!("{}-bit samples", bits)));
    }
    let width = get(TAG_WIDTH, "ImageWidth")?;
    let height = get(TAG_LENGTH, "ImageLength")?;
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    let bps = bits / 8;
    let row_bytes = width.checked_mul(bps).ok_or_else(|| malformed("width overflow"))?;
    let page_bytes = row_bytes
        .checked_mul(height)
        .ok_or_else(|| malformed("size overflow"))?;
    if page_bytes > r.bytes.len() as u64 {
        return Err(malformed(format!(
            "{}x{} page needs {} bytes but the file has {}",
            width,
            height,
            page_bytes,
            r.bytes.len()
        )));
    }
    let rows_per_strip = opt(TAG_ROWS_PER_STRIP, height)?.clamp(1, height);
    let offsets = find(entries, TAG_STRIP_OFFSETS)
        .ok_or_else(|| malformed("missing StripOffsets tag"))?
        .values(r)?;
    let counts = find(entries, TAG_STRIP_BYTES)
        .ok_or_else(|| malformed("missing StripByteCounts tag"))?
        .values(r)?;
    let strips = height.div_ceil(rows_per_strip);
    if offsets.len() as u64 != strips || counts.len() as u64 != strips {
        return Err(malformed(format!(
            "expected {} strips, found {} offsets and {} byte counts",
            strips,
            offsets.len(),
            counts.len()
        )));
    }

    let mut pixels = Vec::with_capacity((width * height) as usize);
    for (s, (&off, &count)) in offsets.iter().zip(&counts).enumerate() {
        let rows = rows_per_strip.min(height - s as u64 * rows_per_strip);
        let need = rows * row_bytes;
        if count < need {
            return Err(malformed(format!("strip {} holds {} bytes, need {}", s, count, need)));
        }
        let data = r.slice(off, need)?;
        if bps == 1 {
            pixels.extend(data.iter().map(|&b| b as f32));
        } else {
            pixels.extend(data.chunks_exact(2).map(|c| {
                let v = if r.little {
                    u16::from_le_bytes([c[0], c[1]])
                } else {
                    u16::from_be_bytes([c[0], c[1]])
                };
                v as f32
            }));
        }
    }
    Ok(Page {
        width: width as usize,
        height: height as usize,
        bits: bits as u8,
        pixels,
    })
}

/// Decodes every page of an in-memory TIFF file.
pub fn decode_tiff(bytes: &[u8]) -> Result<ImageStack> {
    if bytes.len() < 8 {
        return Err(malformed("file shorter than the 8-byte header"));
    }
    let little = match &bytes[..2] {
        b"II" => true,
        b"MM" => false,
        _ => return Err(malformed("missing II/MM byte-order mark")),
    };
    let r = Reader { bytes, little };
    match r.u16(2)? {
        42 => {}
        43 => return Err(unsupported("BigTIFF")),
        m => return Err(malformed(format!("bad magic number {}", m))),
    }

    let mut next = r.u32(4)? as u64;
    let mut seen = HashSet::new();
    let mut pages: Vec<Page> = Vec::new();
    while next != 0 {
        if !seen.insert(next) {
            return Err(malformed(format!("IFD chain loops back to offset {}", next)));
        }
        let n = r.u16(next)? as u64;
        r.slice(next + 2, n * 12 + 4)?;
        let entries: Vec<Entry> = (0..n)
            .map(|i| {
                let at = next + 2 + i * 12;
                Ok(Entry {
                    tag: r.u16(at)?,
                    kind: r.u16(at + 2)?,
                    count: r.u32(at + 4)?,
                    field: at + 8,
                })
            })
            .collect::<Result<_>>()?;
        let page = decode_page(&r, &entries)?;
        if let Some(first) = pages.first() {
            if (page.width, page.height, page.bits) != (first.width, first.height, first.bits) {
                return Err(malformed(format!(
                    "inconsistent page dims: page {} is {}x{} at {} bits, page 0 is {}x{} at {} bits",
                    pages.len(),
                    page.width,
                    page.height,
                    page.bits,
                    first.width,
                    first.height,
                    first.bits
                )));
            }
        }
        pages.push(page);
        next = r.u32(next + 2 + n * 12)? as u64;
    }
    let first = pages.first().ok_or_else(|| malformed("no image directories"))?;
    let (w, h, bits) = (first.width, first.height, first.bits);
    let data: Vec<f32> = pages.into_iter().flat_map(|p| p.pixels).collect();
    ImageStack::new(
        w,
        h,
        data,
        StackMeta {
            bit_depth: Some(bits),
            ..StackMeta::default()
        },
    )
}

pub fn read_tiff(path: &Path) -> Result<ImageStack> {
    decode_tiff(&read_file(path)?)
}

fn push_entry(buf: &mut Vec<u8>, tag: u16, kind: u16, count: u32, value: u32) {
    buf.extend_from_slice(&tag.to_le_bytes());
    buf.extend_from_slice(&kind.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    if kind == SHORT && count == 1 {
        buf.extend_from_slice(&(value as u16).to_le_bytes());
        buf.extend_from_slice(&[0, 0]);
    } else {
        buf.extend_from_slice(&value.to_le_bytes());
    }
}

/// Encodes a little-endian, one-strip-per-page TIFF. Values are rounded and
/// saturated to `[0, 2^bit_depth - 1]`.
pub fn encode_tiff(stack: &ImageStack, bit_depth: u8) -> Result<Vec<u8>> {
    if bit_depth != 8 && bit_depth != 16 {
        return Err(Error::param(format!("bit depth must be 8 or 16, got {}", bit_depth)));
    }
    let (w, h) = (stack.width(), stack.height());
    let max = if bit_depth == 8 { 255.0 } else { 65535.0 };
    let page_bytes = w * h * (bit_depth as usize / 8);
    const ENTRIES: usize = 14;
    let ifd_len = 2 + ENTRIES * 12 + 4 + 16;
    let total = 8 + stack.len() * (page_bytes + page_bytes % 2 + ifd_len);
    if total > u32::MAX as usize {
        return Err(Error::param("stack too large for a 32-bit TIFF"));
    }

    let mut buf = Vec::with_capacity(total);
    buf.extend_from_slice(b"II");
    buf.extend_from_slice(&42u16.to_le_bytes());
    // First IFD follows the first strip; patched below.
    buf.extend_from_slice(&0u32.to_le_bytes());
    for f in 0..stack.len() {
        let strip_at = buf.len() as u32;
        for &v in stack.frame(f) {
            let q = (v as f64).round().clamp(0.0, max);
            if bit_depth == 8 {
                buf.push(q as u8);
            } else {
                buf.extend_from_slice(&(q as u16).to_le_bytes());
            }
        }
        if buf.len() % 2 == 1 {
            buf.push(0);
        }
        let ifd_at = buf.len();
        if f == 0 {
            buf[4..8].copy_from_slice(&(ifd_at as u32).to_le_bytes());
        }
        let res_at = (ifd_at + 2 + ENTRIES * 12 + 4) as u32;
        buf.extend_from_slice(&(ENTRIES as u16).to_le_bytes());
        push_entry(&mut buf, TAG_WIDTH, LONG, 1, w as u32);
        push_entry(&mut buf, TAG_LENGTH, LONG, 1, h as u32);
        push_entry(&mut buf, TAG_BITS, SHORT, 1, bit_depth as u32);
        push_entry(&mut buf, TAG_COMPRESSION, SHORT, 1, 1);
        push_entry(&mut buf, TAG_PHOTOMETRIC, SHORT, 1, 1);
        push_entry(&mut buf, TAG_STRIP_OFFSETS, LONG, 1, strip_at);
        push_entry(&mut buf, TAG_SAMPLES, SHORT, 1, 1);
        push_entry(&mut buf, TAG_ROWS_PER_STRIP, LONG, 1, h as u32);
        push_entry(&mut buf, TAG_STRIP_BYTES, LONG, 1, page_bytes as u32);
        push_entry(&mut buf, TAG_X_RES, RATIONAL, 1, res_at);
        push_entry(&mut buf, TAG_Y_RES, RATIONAL, 1, res_at + 8);
        push_entry(&mut buf, TAG_PLANAR, SHORT, 1, 1);
        push_entry(&mut buf, TAG_RES_UNIT, SHORT, 1, 1);
        push_entry(&mut buf, TAG_SAMPLE_FORMAT, SHORT, 1, 1);
        // The next strip starts right after this IFD's rationals; its IFD after that.
        let next_strip = res_at as usize + 16;
        let next = if f + 1 == stack.len() {
            0
        } else {
            (next_strip + page_bytes + page_bytes % 2) as u32
        };
        buf.extend_from_slice(&next.to_le_bytes());
        for _ in 0..2 {
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(&1u32.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_tiff(stack: &ImageStack, path: &Path, bit_depth: u8) -> Result<()> {
    atomic_write(path, &encode_tiff(stack, bit_depth)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal big-endian 2x2 16-bit file assembled by hand.
    fn hand_built(compression: u16) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"MM");
        b.extend_from_slice(&42u16.to_be_bytes());
        b.extend_from_slice(&16u32.to_be_bytes()); // IFD at 16
        for v in [0u16, 1, 2, 65535] {
            b.extend_from_slice(&v.to_be_bytes()); // pixels at 8..16
        }
        let entries: [(u16, u16, u32, u32); 8] = [
            (256, 3, 1, 2),
            (257, 3, 1, 2),
            (258, 3, 1, 16),
            (259, 3, 1, compression as u32),
            (262, 3, 1, 1),
            (273, 4, 1, 8),
            (278, 3, 1, 2),
            (279, 4, 1, 8),
        ];
        b.extend_from_slice(&(entries.len() as u16).to_be_bytes());
        for (tag, kind, count, value) in entries {
            b.extend_from_slice(&tag.to_be_bytes());
            b.extend_from_slice(&kind.to_be_bytes());
            b.extend_from_slice(&count.to_be_bytes());
            if kind == 3 {
                b.extend_from_slice(&(value as u16).to_be_bytes());
                b.extend_from_slice(&[0, 0]);
            } else {
                b.extend_from_slice(&value.to_be_bytes());
            }
        }
        b.extend_from_slice(&0u32.to_be_bytes());
        b
    }

    #[test]
    fn decodes_hand_built_file() {
        let s = decode_tiff(&hand_built(1)).unwrap();
        assert_eq!((s.width(), s.height(), s.len()), (2, 2, 1));
        assert_eq!(s.data(), &[0.0, 1.0, 2.0, 65535.0]);
        assert_eq!(s.meta().bit_depth, Some(16));
    }

    #[test]
    fn lzw_is_named() {
        let err = decode_tiff(&hand_built(5)).unwrap_err();
        assert!(err.to_string().contains("LZW"), "{}", err);
    }

    #[test]
    fn zero_frame_writes_zero_strip() {
        let s = ImageStack::zeros(3, 2, 1);
        let bytes = encode_tiff(&s, 16).unwrap();
        assert!(bytes[8..8 + 12].iter().all(|&b| b == 0));
        assert_eq!(
            decode_tiff(&bytes).unwrap(),
            s.with_meta(StackMeta {
                bit_depth: Some(16),
                ..Default::default()
            })
        );
    }

    #[test]
    fn saturates_on_write() {
        let s = ImageStack::new(2, 1, vec![70000.0, 12.4], StackMeta::default()).unwrap();
        let back = decode_tiff(&encode_tiff(&s, 16).unwrap()).unwrap();
        assert_eq!(back.data(), &[65535.0, 12.0]);
        let back8 = decode_tiff(&encode_tiff(&s, 8).unwrap()).unwrap();
        assert_eq!(back8.data(), &[255.0, 12.0]);
    }

    #[test]
    fn loop_and_truncation_are_errors() {
        let mut b = hand_built(1);
        let n = b.len();
        b[n - 4..].copy_from_slice(&16u32.to_be_bytes());
        assert!(matches!(decode_tiff(&b), Err(Error::MalformedTiff(_))));
        let b = hand_built(1);
        assert!(matches!(decode_tiff(&b[..20]), Err(Error::MalformedTiff(_))));
    }
}
