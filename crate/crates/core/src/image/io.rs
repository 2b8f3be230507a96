//! Binary image containers: P6 PPM (RGB), P5 PGM (masks) and the RAW4
//! sensor container (`"RAW4"`, u32 LE height, u32 LE width, then
//! `4*H*W` f32 LE samples, planar R, Gr, Gb, B).

use std::fs;
use std::path::Path;

use super::{ImageKind, MaskImage, Planar, RawImage, RgbImage};
use crate::error::{Error, Result};

const RAW4_MAGIC: &[u8; 4] = b"RAW4";

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses the `P5`/`P6` netpbm header. Returns `(width, height, payload offset)`.
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos, "missing whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(pos, format!("maxval {maxval} unsupported, need 255")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(pos, "zero image dimension"));
    }
    Ok((w, h, pos))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(quantize(img.at(c, y, x)));
            }
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (w, h, off) = parse_header(bytes, b"P6")?;
    let need = 3 * w * h;
    if bytes.len() < off + need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", bytes.len() - off),
        ));
    }
    let payload = &bytes[off..off + need];
    RgbImage::from_planar(Planar::from_fn(3, h, w, |c, y, x| {
        payload[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

pub fn encode_pgm(mask: &MaskImage) -> Vec<u8> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.data().iter().map(|&v| if v == 1.0 { 255u8 } else { 0 }));
    out
}

/// Any nonzero byte reads as 1.
pub fn decode_pgm(bytes: &[u8]) -> Result<MaskImage> {
    let (w, h, off) = parse_header(bytes, b"P5")?;
    if bytes.len() < off + w * h {
        return Err(Error::format(bytes.len(), "truncated payload"));
    }
    let payload = &bytes[off..off + w * h];
    Ok(MaskImage::from_fn(h, w, |y, x| payload[y * w + x] != 0))
}

pub fn encode_raw4(raw: &RawImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * raw.data().len());
    out.extend_from_slice(RAW4_MAGIC);
    out.extend_from_slice(&(raw.height() as u32).to_le_bytes());
    out.extend_from_slice(&(raw.width() as u32).to_le_bytes());
    for v in raw.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw4(bytes: &[u8]) -> Result<RawImage> {
    if bytes.len() < 12 {
        return Err(Error::format(bytes.len(), "truncated RAW4 header"));
    }
    if &bytes[..4] != RAW4_MAGIC {
        return Err(Error::format(0, "bad RAW4 magic"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let need = 4 * 4 * h * w;
    if bytes.len() != 12 + need {
        return Err(Error::format(
            bytes.len().min(12 + need),
            format!("payload of {} bytes, header implies {need}", bytes.len() - 12),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RawImage::from_planar(Planar::new(4, h, w, data)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&read_file(path.as_ref())?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(img))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<MaskImage> {
    decode_pgm(&read_file(path.as_ref())?)
}

pub fn write_pgm(path: impl AsRef<Path>, mask: &MaskImage) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(mask))
}

pub fn read_raw4(path: impl AsRef<Path>) -> Result<RawImage> {
    decode_raw4(&read_file(path.as_ref())?)
}

pub fn write_raw4(path: impl AsRef<Path>, raw: &RawImage) -> Result<()> {
    write_file(path.as_ref(), &encode_raw4(raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_quantization() {
        let img = RgbImage::new(1, 1, vec![1.0, 0.0, 0.5]).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 128]);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back.pixel(0, 0), [1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn ppm_zero_round_trip() {
        let img = RgbImage::zeros(3, 5);
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn ppm_literal_header() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend((0..12).map(|i| i as u8 * 20));
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.height(), img.width()), (2, 2));
        assert_eq!(img.at(2, 1, 1), 220.0 / 255.0);
    }

    #[test]
    fn ppm_errors_carry_offsets() {
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(Error::Format { offset: 0, .. })));
        let e = decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(e, Error::Format { offset: 13, .. }), "{e}");
        let e = decode_ppm(b"P6\n2 2\n255\n\0\0\0").unwrap_err();
        assert!(matches!(e, Error::Format { offset: 14, .. }), "{e}");
    }

    #[test]
    fn pgm_round_trip() {
        let m = MaskImage::from_fn(3, 4, |y, x| (y * x) % 3 == 1);
        let bytes = encode_pgm(&m);
        assert_eq!(decode_pgm(&bytes).unwrap(), m);
    }

    #[test]
    fn raw4_size_and_magic() {
        let raw = RawImage::zeros(1, 1);
        let bytes = encode_raw4(&raw);
        assert_eq!(bytes.len(), 28);
        let mut bad = bytes.clone();
        bad[3] = b'5';
        assert!(matches!(decode_raw4(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(decode_raw4(&bytes[..27]).is_err());
    }

    proptest! {
        #[test]
        fn raw4_bit_exact(h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let data: Vec<f32> = (0..4 * h * w).map(|_| rng.gen::<f32>() * 3.0).collect();
            let raw = RawImage::new(h, w, data).unwrap();
            let back = decode_raw4(&encode_raw4(&raw)).unwrap();
            for (a, b) in raw.data().iter().zip(back.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn ppm_within_quantization(vals in proptest::collection::vec(0.0f32..=1.0, 12)) {
            let img = RgbImage::new(2, 2, vals).unwrap();
            let back = decode_ppm(&encode_ppm(&img)).unwrap();
            prop_assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-6);
            // reading then writing is exact
            prop_assert_eq!(encode_ppm(&back), encode_ppm(&img));
        }
    }
}
